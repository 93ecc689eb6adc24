#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <string>

namespace fopng {

using Index = Eigen::Index;

using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;
using ArrX = Eigen::ArrayXd;

using VecXRef = Eigen::Ref<const VecX>;
using MatXRef = Eigen::Ref<const MatX>;

/// Update rule produced a direction with no usable component (e.g. the
/// gradient lies entirely inside the protected span).
class DegenerateUpdateError : public std::runtime_error {
 public:
  explicit DegenerateUpdateError(const std::string& what)
      : std::runtime_error(what) {}
};

class CapacityError : public std::runtime_error {
 public:
  explicit CapacityError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace fopng

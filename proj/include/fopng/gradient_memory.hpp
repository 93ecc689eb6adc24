#pragma once

#include <filesystem>
#include <vector>

#include "fopng/fisher.hpp"
#include "fopng/model.hpp"
#include "fopng/types.hpp"

namespace fopng {

enum class MemoryVariant : std::uint8_t { Raw = 0, PreFisher = 1 };

/// Which per-sample gradient gets stored at task end. GroundTruthLogit is the
/// OGD convention: the gradient of the pre-softmax logit of the true class.
enum class StoredGradKind { GroundTruthLogit, LossGrad };

/// Buffer of stored previous-task gradient directions, one column per stored
/// direction. Columns are immutable once stored. In the PreFisher variant
/// each column is premultiplied element-wise by its source task's Fisher at
/// storage time.
class GradientMemory {
 public:
  GradientMemory(Index p, Index max_directions,
                 MemoryVariant variant = MemoryVariant::Raw);

  Index dim() const { return columns_.rows(); }
  Index size() const { return m_; }
  Index max_directions() const { return columns_.cols(); }
  MemoryVariant variant() const { return variant_; }
  const std::vector<int>& task_of_column() const { return task_of_column_; }

  /// Draws k samples uniformly without replacement from task_data and stores
  /// their gradients evaluated at theta_star. Zero columns are rejected and
  /// the draw continues to the next candidate sample. Throws CapacityError if
  /// appending k columns would exceed max_directions.
  void store_task_gradients(const Mlp& model, const VecX& theta_star,
                            const Batch& task_data, int k, int task_id,
                            const DiagFisher* task_fisher, Rng& rng,
                            StoredGradKind kind = StoredGradKind::GroundTruthLogit);

  /// p x m view of the stored columns, insertion order.
  Eigen::Ref<const MatX> as_matrix() const { return columns_.leftCols(m_); }

  /// Binary snapshot: magic "FOGM", version u32, p u64, m u64, variant u8,
  /// then column-major doubles, all little-endian.
  void save(const std::filesystem::path& path) const;
  static GradientMemory load(const std::filesystem::path& path,
                             Index max_directions = 0);

 private:
  MatX columns_;  // p x max_directions, first m_ columns live
  Index m_ = 0;
  std::vector<int> task_of_column_;
  MemoryVariant variant_;
};

}  // namespace fopng

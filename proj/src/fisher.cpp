#include "fopng/fisher.hpp"

#include <algorithm>
#include <stdexcept>

namespace fopng {

DiagFisher estimate_diag_fisher(const Mlp& model, const VecX& theta,
                                const Batch& data, FisherMode mode,
                                std::optional<Index> fisher_batch_size,
                                Rng& rng, int source_task) {
  const Index n = data.size();
  if (n < 1) throw std::invalid_argument("estimate_diag_fisher: empty dataset");
  if (fisher_batch_size && *fisher_batch_size < 1) {
    throw std::invalid_argument("estimate_diag_fisher: fisher_batch_size < 1");
  }

  std::vector<std::size_t> indices;
  if (fisher_batch_size && *fisher_batch_size < n) {
    indices = rng.sample_without_replacement(
        static_cast<std::size_t>(n), static_cast<std::size_t>(*fisher_batch_size));
    std::sort(indices.begin(), indices.end());
  } else {
    indices.resize(static_cast<std::size_t>(n));
    std::iota(indices.begin(), indices.end(), std::size_t{0});
  }

  VecX acc = VecX::Zero(model.param_count());
  for (std::size_t idx : indices) {
    const VecX x = data.inputs.row(static_cast<Index>(idx)).transpose();
    VecX s;
    if (mode == FisherMode::Sampled) {
      s = model.score_grad_sampled(theta, x, rng).second;
    } else {
      s = model.score_grad(theta, x, data.labels[idx]);
    }
    acc.array() += s.array().square();
  }

  DiagFisher out;
  out.values = acc / static_cast<double>(indices.size());
  out.mode = mode;
  out.batch_size_used = static_cast<Index>(indices.size());
  out.full_batch = !fisher_batch_size || *fisher_batch_size >= n;
  out.source_task = source_task;
  return out;
}

DiagFisher ema_update(const DiagFisher& F_old, const DiagFisher& F_new,
                      double alpha) {
  if (F_old.values.size() != F_new.values.size()) {
    throw std::invalid_argument("ema_update: length mismatch");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument("ema_update: alpha outside [0, 1]");
  }
  DiagFisher out = F_new;
  out.values = (1.0 - alpha) * F_old.values + alpha * F_new.values;
  return out;
}

VecX regularized_inverse_apply(const DiagFisher& F, double lambda,
                               const VecX& x) {
  if (!(lambda > 0.0)) {
    throw std::invalid_argument("regularized_inverse_apply: lambda <= 0");
  }
  if (F.values.size() != x.size()) {
    throw std::invalid_argument("regularized_inverse_apply: length mismatch");
  }
  return x.array() / (F.values.array() + lambda);
}

}  // namespace fopng

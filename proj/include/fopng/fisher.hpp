#pragma once

#include <optional>

#include "fopng/model.hpp"
#include "fopng/rng.hpp"
#include "fopng/types.hpp"

namespace fopng {

enum class FisherMode { Sampled, Empirical };

/// Diagonal Fisher information estimate: nonnegative vector of length p plus
/// estimation metadata.
struct DiagFisher {
  VecX values;
  FisherMode mode = FisherMode::Sampled;
  Index batch_size_used = 0;  // samples actually used
  bool full_batch = true;
  int source_task = -1;
};

/// Mean of element-wise squared score gradients over a uniform random subset
/// of fisher_batch_size samples (without replacement; nullopt = all samples).
/// Sampled mode draws one label per input from softmax(logits); empirical
/// mode uses the observed labels. Accumulation runs in ascending sample-index
/// order regardless of the subset's draw order.
DiagFisher estimate_diag_fisher(const Mlp& model, const VecX& theta,
                                const Batch& data, FisherMode mode,
                                std::optional<Index> fisher_batch_size,
                                Rng& rng, int source_task = -1);

/// Element-wise convex combination (1 - alpha) * F_old + alpha * F_new.
DiagFisher ema_update(const DiagFisher& F_old, const DiagFisher& F_new,
                      double alpha);

/// Element-wise x_i / (F_i + lambda); lambda must be positive.
VecX regularized_inverse_apply(const DiagFisher& F, double lambda,
                               const VecX& x);

}  // namespace fopng

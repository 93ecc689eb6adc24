#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "fopng/rng.hpp"
#include "fopng/types.hpp"

namespace fopng {

enum class Activation { Relu };

/// Architecture of a dense feed-forward classifier. layer_sizes runs
/// [input dim, hidden dims..., output dim]; ReLU on all but the final layer.
struct ModelSpec {
  std::vector<int> layer_sizes;
  Activation activation = Activation::Relu;
  std::uint64_t seed = 0;

  void validate() const;
  int num_layers() const { return static_cast<int>(layer_sizes.size()) - 1; }
  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }
  Index param_count() const;
};

struct Batch {
  MatX inputs;              // n x d, one sample per row
  std::vector<int> labels;  // class indices in [0, C)

  Index size() const { return inputs.rows(); }
};

enum class LabelMode { Observed, Sampled };

/// Dense MLP over a single flat parameter vector. Parameter layout per layer:
/// weights (n_out x n_in, column-major) followed by biases (n_out).
/// All passes are pure functions of (theta, data).
class Mlp {
 public:
  explicit Mlp(ModelSpec spec);

  const ModelSpec& spec() const { return spec_; }
  Index param_count() const { return param_count_; }
  int output_dim() const { return spec_.output_dim(); }

  Index weight_offset(int layer) const { return weight_offsets_[layer]; }
  Index bias_offset(int layer) const { return bias_offsets_[layer]; }

  /// Zero-mean uniform fan-in weights, uniform(-1/sqrt(n_in), 1/sqrt(n_in));
  /// biases zero. Deterministic in spec.seed.
  VecX init_params() const;

  /// Pre-softmax logits for one input row.
  VecX forward(const VecX& theta, const VecXRef& x) const;

  static VecX softmax(const VecX& logits);

  /// Mean cross-entropy loss and its exact mean gradient over the batch.
  std::pair<double, VecX> loss_and_grad(const VecX& theta,
                                        const Batch& batch) const;

  /// Score gradient d/dtheta log p(y|x) for a single sample.
  VecX score_grad(const VecX& theta, const VecXRef& x, int y) const;

  /// As score_grad but with the label drawn from softmax(logits) using rng.
  std::pair<int, VecX> score_grad_sampled(const VecX& theta, const VecXRef& x,
                                          Rng& rng) const;

  /// Row i = score gradient of sample i; labels observed or sampled.
  MatX per_sample_score_grads(const VecX& theta, const Batch& batch,
                              LabelMode mode, Rng* rng = nullptr) const;

  /// Gradient of the k-th pre-softmax logit with respect to theta.
  VecX ground_truth_logit_grad(const VecX& theta, const VecXRef& x,
                               int k) const;

 private:
  struct Trace {
    std::vector<VecX> acts;  // acts[l] = input to layer l; acts[0] = x
    std::vector<VecX> pre;   // pre[l] = W_l acts[l] + b_l
  };

  void forward_trace(const VecX& theta, const VecXRef& x, Trace& t) const;
  void backprop(const VecX& theta, const Trace& t, const VecX& dlogits,
                VecX& grad_out) const;
  void check_theta(const VecX& theta) const;
  void check_input(const VecXRef& x) const;

  ModelSpec spec_;
  Index param_count_ = 0;
  std::vector<Index> weight_offsets_;
  std::vector<Index> bias_offsets_;
};

}  // namespace fopng

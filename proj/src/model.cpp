#include "fopng/model.hpp"

#include <cmath>
#include <stdexcept>

namespace fopng {

void ModelSpec::validate() const {
  if (layer_sizes.size() < 2) {
    throw std::invalid_argument("ModelSpec: need at least 2 layers");
  }
  for (int s : layer_sizes) {
    if (s < 1) throw std::invalid_argument("ModelSpec: layer sizes must be >= 1");
  }
}

Index ModelSpec::param_count() const {
  Index p = 0;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    p += static_cast<Index>(layer_sizes[l] + 1) * layer_sizes[l + 1];
  }
  return p;
}

Mlp::Mlp(ModelSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  const int L = spec_.num_layers();
  weight_offsets_.resize(L);
  bias_offsets_.resize(L);
  Index off = 0;
  for (int l = 0; l < L; ++l) {
    const Index n_in = spec_.layer_sizes[l];
    const Index n_out = spec_.layer_sizes[l + 1];
    weight_offsets_[l] = off;
    bias_offsets_[l] = off + n_in * n_out;
    off += (n_in + 1) * n_out;
  }
  param_count_ = off;
}

VecX Mlp::init_params() const {
  VecX theta = VecX::Zero(param_count_);
  Rng rng(spec_.seed);
  for (int l = 0; l < spec_.num_layers(); ++l) {
    const Index n_in = spec_.layer_sizes[l];
    const Index n_out = spec_.layer_sizes[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(n_in));
    double* w = theta.data() + weight_offsets_[l];
    for (Index i = 0; i < n_in * n_out; ++i) w[i] = rng.uniform(-bound, bound);
    // biases stay zero
  }
  return theta;
}

void Mlp::check_theta(const VecX& theta) const {
  if (theta.size() != param_count_) {
    throw std::invalid_argument("Mlp: parameter vector has wrong length");
  }
}

void Mlp::check_input(const VecXRef& x) const {
  if (x.size() != spec_.input_dim()) {
    throw std::invalid_argument("Mlp: input dimension mismatch");
  }
}

void Mlp::forward_trace(const VecX& theta, const VecXRef& x, Trace& t) const {
  const int L = spec_.num_layers();
  t.acts.resize(L);
  t.pre.resize(L);
  t.acts[0] = x;
  for (int l = 0; l < L; ++l) {
    const Index n_in = spec_.layer_sizes[l];
    const Index n_out = spec_.layer_sizes[l + 1];
    Eigen::Map<const MatX> W(theta.data() + weight_offsets_[l], n_out, n_in);
    Eigen::Map<const VecX> b(theta.data() + bias_offsets_[l], n_out);
    t.pre[l].noalias() = W * t.acts[l];
    t.pre[l] += b;
    if (l + 1 < L) {
      t.acts[l + 1] = t.pre[l].cwiseMax(0.0);
    }
  }
}

void Mlp::backprop(const VecX& theta, const Trace& t, const VecX& dlogits,
                   VecX& grad_out) const {
  const int L = spec_.num_layers();
  VecX delta = dlogits;
  for (int l = L - 1; l >= 0; --l) {
    const Index n_in = spec_.layer_sizes[l];
    const Index n_out = spec_.layer_sizes[l + 1];
    Eigen::Map<MatX> dW(grad_out.data() + weight_offsets_[l], n_out, n_in);
    Eigen::Map<VecX> db(grad_out.data() + bias_offsets_[l], n_out);
    dW.noalias() += delta * t.acts[l].transpose();
    db += delta;
    if (l > 0) {
      Eigen::Map<const MatX> W(theta.data() + weight_offsets_[l], n_out, n_in);
      VecX next = W.transpose() * delta;
      next.array() *= (t.pre[l - 1].array() > 0.0).cast<double>();
      delta.swap(next);
    }
  }
}

VecX Mlp::forward(const VecX& theta, const VecXRef& x) const {
  check_theta(theta);
  check_input(x);
  Trace t;
  forward_trace(theta, x, t);
  return t.pre.back();
}

VecX Mlp::softmax(const VecX& logits) {
  const double m = logits.maxCoeff();
  VecX p = (logits.array() - m).exp();
  p /= p.sum();
  return p;
}

std::pair<double, VecX> Mlp::loss_and_grad(const VecX& theta,
                                           const Batch& batch) const {
  check_theta(theta);
  const Index n = batch.size();
  if (n < 1) throw std::invalid_argument("loss_and_grad: empty batch");
  const int C = spec_.output_dim();
  double loss_sum = 0.0;
  VecX grad_sum = VecX::Zero(param_count_);
  Trace t;
  for (Index i = 0; i < n; ++i) {
    const int y = batch.labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= C) throw std::invalid_argument("loss_and_grad: label out of range");
    forward_trace(theta, batch.inputs.row(i).transpose(), t);
    const VecX& logits = t.pre.back();
    const double m = logits.maxCoeff();
    const VecX shifted = logits.array() - m;
    const double log_z = std::log(shifted.array().exp().sum());
    loss_sum += log_z - shifted[y];
    VecX dlogits = (shifted.array() - log_z).exp();  // softmax
    dlogits[y] -= 1.0;
    backprop(theta, t, dlogits, grad_sum);
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  return {loss_sum * inv_n, grad_sum * inv_n};
}

VecX Mlp::score_grad(const VecX& theta, const VecXRef& x, int y) const {
  check_theta(theta);
  check_input(x);
  if (y < 0 || y >= spec_.output_dim()) {
    throw std::invalid_argument("score_grad: label out of range");
  }
  Trace t;
  forward_trace(theta, x, t);
  VecX dlogits = -softmax(t.pre.back());
  dlogits[y] += 1.0;
  VecX grad = VecX::Zero(param_count_);
  backprop(theta, t, dlogits, grad);
  return grad;
}

std::pair<int, VecX> Mlp::score_grad_sampled(const VecX& theta,
                                             const VecXRef& x,
                                             Rng& rng) const {
  check_theta(theta);
  check_input(x);
  Trace t;
  forward_trace(theta, x, t);
  const VecX probs = softmax(t.pre.back());
  const int y = rng.categorical(probs.data(), static_cast<int>(probs.size()));
  VecX dlogits = -probs;
  dlogits[y] += 1.0;
  VecX grad = VecX::Zero(param_count_);
  backprop(theta, t, dlogits, grad);
  return {y, grad};
}

MatX Mlp::per_sample_score_grads(const VecX& theta, const Batch& batch,
                                 LabelMode mode, Rng* rng) const {
  check_theta(theta);
  const Index n = batch.size();
  if (n < 1) throw std::invalid_argument("per_sample_score_grads: empty batch");
  if (mode == LabelMode::Sampled && rng == nullptr) {
    throw std::invalid_argument("per_sample_score_grads: sampled mode needs rng");
  }
  MatX rows(n, param_count_);
  for (Index i = 0; i < n; ++i) {
    const VecX x = batch.inputs.row(i).transpose();
    if (mode == LabelMode::Observed) {
      rows.row(i) = score_grad(theta, x, batch.labels[static_cast<std::size_t>(i)]).transpose();
    } else {
      rows.row(i) = score_grad_sampled(theta, x, *rng).second.transpose();
    }
  }
  return rows;
}

VecX Mlp::ground_truth_logit_grad(const VecX& theta, const VecXRef& x,
                                  int k) const {
  check_theta(theta);
  check_input(x);
  const int C = spec_.output_dim();
  if (k < 0 || k >= C) {
    throw std::invalid_argument("ground_truth_logit_grad: class out of range");
  }
  Trace t;
  forward_trace(theta, x, t);
  VecX dlogits = VecX::Zero(C);
  dlogits[k] = 1.0;
  VecX grad = VecX::Zero(param_count_);
  backprop(theta, t, dlogits, grad);
  return grad;
}

}  // namespace fopng

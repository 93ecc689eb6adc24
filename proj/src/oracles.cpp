#include "fopng/oracles.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace fopng::oracles {

namespace {

struct Dual {
  double v = 0.0;
  double d = 0.0;
};

inline Dual dual_relu(Dual a) { return a.v > 0.0 ? a : Dual{0.0, 0.0}; }

struct Offsets {
  std::vector<Index> weight;
  std::vector<Index> bias;
};

Offsets layout(const ModelSpec& spec) {
  Offsets off;
  Index at = 0;
  for (int l = 0; l + 1 < static_cast<int>(spec.layer_sizes.size()); ++l) {
    const Index n_in = spec.layer_sizes[l];
    const Index n_out = spec.layer_sizes[l + 1];
    off.weight.push_back(at);
    off.bias.push_back(at + n_in * n_out);
    at += (n_in + 1) * n_out;
  }
  return off;
}

// Forward pass where every scalar is a dual number; parameter seed_index
// carries derivative 1. seed_index < 0 evaluates values only.
std::vector<Dual> dual_forward(const ModelSpec& spec, const VecX& theta,
                               const VecX& x, Index seed_index) {
  const Offsets off = layout(spec);
  const int L = spec.num_layers();
  std::vector<Dual> act(static_cast<std::size_t>(x.size()));
  for (Index i = 0; i < x.size(); ++i) act[static_cast<std::size_t>(i)] = {x[i], 0.0};

  auto param = [&](Index idx) -> Dual {
    return {theta[idx], idx == seed_index ? 1.0 : 0.0};
  };

  for (int l = 0; l < L; ++l) {
    const Index n_in = spec.layer_sizes[l];
    const Index n_out = spec.layer_sizes[l + 1];
    std::vector<Dual> z(static_cast<std::size_t>(n_out));
    for (Index o = 0; o < n_out; ++o) {
      Dual b = param(off.bias[l] + o);
      double v = b.v, d = b.d;
      for (Index i = 0; i < n_in; ++i) {
        // weights stored column-major: entry (o, i) at o + i * n_out
        const Dual w = param(off.weight[l] + o + i * n_out);
        const Dual a = act[static_cast<std::size_t>(i)];
        v += w.v * a.v;
        d += w.d * a.v + w.v * a.d;
      }
      z[static_cast<std::size_t>(o)] = {v, d};
    }
    if (l + 1 < L) {
      for (auto& e : z) e = dual_relu(e);
    }
    act = std::move(z);
  }
  return act;
}

VecX log_softmax(const VecX& logit_values) {
  const double m = logit_values.maxCoeff();
  double sum = 0.0;
  for (Index c = 0; c < logit_values.size(); ++c) {
    sum += std::exp(logit_values[c] - m);
  }
  const double log_z = m + std::log(sum);
  return logit_values.array() - log_z;
}

}  // namespace

VecX logits(const ModelSpec& spec, const VecX& theta, const VecX& x) {
  if (theta.size() != spec.param_count()) {
    throw std::invalid_argument("oracle logits: theta length mismatch");
  }
  const auto out = dual_forward(spec, theta, x, -1);
  VecX v(static_cast<Index>(out.size()));
  for (std::size_t i = 0; i < out.size(); ++i) v[static_cast<Index>(i)] = out[i].v;
  return v;
}

VecX softmax_probs(const VecX& logit_values) {
  return log_softmax(logit_values).array().exp();
}

double log_prob(const ModelSpec& spec, const VecX& theta, const VecX& x,
                int y) {
  return log_softmax(logits(spec, theta, x))[y];
}

double cross_entropy(const ModelSpec& spec, const VecX& theta,
                     const MatX& inputs, const std::vector<int>& labels) {
  double sum = 0.0;
  for (Index i = 0; i < inputs.rows(); ++i) {
    sum -= log_prob(spec, theta, inputs.row(i).transpose(),
                    labels[static_cast<std::size_t>(i)]);
  }
  return sum / static_cast<double>(inputs.rows());
}

MatX logit_jacobian(const ModelSpec& spec, const VecX& theta, const VecX& x) {
  const Index p = spec.param_count();
  const Index C = spec.output_dim();
  MatX J(C, p);
  for (Index j = 0; j < p; ++j) {
    const auto out = dual_forward(spec, theta, x, j);
    for (Index c = 0; c < C; ++c) J(c, j) = out[static_cast<std::size_t>(c)].d;
  }
  return J;
}

MatX exact_fisher_small(const ModelSpec& spec, const VecX& theta,
                        const MatX& inputs) {
  const Index p = spec.param_count();
  if (p > 60) {
    throw std::invalid_argument("exact_fisher_small: p > 60 (size guard)");
  }
  if (inputs.rows() < 1) {
    throw std::invalid_argument("exact_fisher_small: no inputs");
  }
  const Index C = spec.output_dim();
  MatX F = MatX::Zero(p, p);
  for (Index i = 0; i < inputs.rows(); ++i) {
    const VecX x = inputs.row(i).transpose();
    const MatX J = logit_jacobian(spec, theta, x);
    const VecX probs = softmax_probs(logits(spec, theta, x));
    const VecX mean_row = J.transpose() * probs;  // sum_c p_c dlogit_c
    for (Index y = 0; y < C; ++y) {
      const VecX s = J.row(y).transpose() - mean_row;
      F.noalias() += probs[y] * (s * s.transpose());
    }
  }
  return F / static_cast<double>(inputs.rows());
}

VecX constrained_opt_oracle(const VecX& g, const MatX& F_new,
                            const MatX& F_old, const MatX& G,
                            ConstraintVariant variant) {
  const Index m = G.cols();
  if (m < 1) throw std::invalid_argument("constrained_opt_oracle: empty G");
  const MatX B = variant == ConstraintVariant::Raw ? MatX(F_old * G) : G;
  const MatX Fn_inv_B = F_new.fullPivLu().solve(B);
  const MatX M = B.transpose() * Fn_inv_B;
  const VecX rhs = B.transpose() * g;
  Eigen::FullPivLU<MatX> lu(M);
  if (lu.rank() < m) {
    throw std::runtime_error("constrained_opt_oracle: rank-deficient system");
  }
  const VecX alpha = lu.solve(rhs);
  return B * alpha;
}

double exact_kl_categorical(const ModelSpec& spec, const VecX& theta,
                            const VecX& v, const MatX& inputs) {
  double kl = 0.0;
  for (Index i = 0; i < inputs.rows(); ++i) {
    const VecX x = inputs.row(i).transpose();
    const VecX lp = log_softmax(logits(spec, theta, x));
    const VecX lq = log_softmax(logits(spec, VecX(theta + v), x));
    for (Index c = 0; c < lp.size(); ++c) {
      kl += std::exp(lp[c]) * (lp[c] - lq[c]);
    }
  }
  return kl / static_cast<double>(inputs.rows());
}

std::pair<double, double> reparam_invariance_check(const ModelSpec& spec,
                                                   const VecX& theta,
                                                   const VecX& dtheta,
                                                   const MatX& J,
                                                   const MatX& inputs) {
  Eigen::FullPivLU<MatX> lu(J);
  if (!lu.isInvertible()) {
    throw std::invalid_argument("reparam_invariance_check: singular J");
  }
  const MatX F_theta = exact_fisher_small(spec, theta, inputs);
  const MatX J_inv = lu.inverse();
  const MatX F_phi = J_inv.transpose() * F_theta * J_inv;
  const VecX dphi = J * dtheta;
  const double norm_theta = std::sqrt(dtheta.dot(F_theta * dtheta));
  const double norm_phi = std::sqrt(dphi.dot(F_phi * dphi));
  return {norm_theta, norm_phi};
}

VecX finite_diff_grad(const std::function<double(const VecX&)>& f,
                      const VecX& theta, double step) {
  if (step <= 0.0) throw std::invalid_argument("finite_diff_grad: step <= 0");
  VecX grad(theta.size());
  VecX t = theta;
  for (Index j = 0; j < theta.size(); ++j) {
    const double orig = t[j];
    t[j] = orig + step;
    const double fp = f(t);
    t[j] = orig - step;
    const double fm = f(t);
    t[j] = orig;
    grad[j] = (fp - fm) / (2.0 * step);
  }
  return grad;
}

}  // namespace fopng::oracles

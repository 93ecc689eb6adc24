#include "fopng/verification.hpp"

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <ostream>

#include "fopng/fisher.hpp"
#include "fopng/model.hpp"
#include "fopng/oracles.hpp"
#include "fopng/rng.hpp"
#include "fopng/update_rules.hpp"

namespace fopng::verification {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double rel_err(const VecX& got, const VecX& want) {
  return (got - want).norm() / std::max(want.norm(), 1e-300);
}

VecX random_vec(Rng& rng, Index n, double lo, double hi) {
  VecX v(n);
  for (Index i = 0; i < n; ++i) v[i] = rng.uniform(lo, hi);
  return v;
}

VecX random_gaussian(Rng& rng, Index n) {
  VecX v(n);
  for (Index i = 0; i < n; ++i) v[i] = rng.normal();
  return v;
}

MatX random_gaussian_mat(Rng& rng, Index rows, Index cols) {
  MatX m(rows, cols);
  for (Index c = 0; c < cols; ++c) m.col(c) = random_gaussian(rng, rows);
  return m;
}

MatX random_spd(Rng& rng, Index n, double ev_lo, double ev_hi) {
  const MatX a = random_gaussian_mat(rng, n, n);
  const Eigen::HouseholderQR<MatX> qr(a);
  const MatX q = qr.householderQ();
  const VecX ev = random_vec(rng, n, ev_lo, ev_hi);
  return q * ev.asDiagonal() * q.transpose();
}

DiagFisher as_fisher(const VecX& values) {
  DiagFisher f;
  f.values = values;
  return f;
}

/// Oracle-side v from oracle-side u, via a generic dense solve (independent
/// of the optim module's Cholesky path).
VecX oracle_v(const VecX& g, const MatX& F_new, const VecX& u, double eta) {
  const Eigen::FullPivLU<MatX> lu(F_new);
  const VecX pg = g - u;
  const VecX y = lu.solve(pg);
  return y * (eta / std::sqrt(pg.dot(y)));
}

ModelSpec tiny_spec(Rng& rng, Index max_p) {
  for (;;) {
    ModelSpec spec;
    const int depth = 2 + static_cast<int>(rng.uniform_index(2));  // 2..3 layers
    spec.layer_sizes.clear();
    for (int l = 0; l <= depth; ++l) {
      spec.layer_sizes.push_back(2 + static_cast<int>(rng.uniform_index(3)));
    }
    spec.seed = rng.next_u64();
    if (spec.param_count() <= max_p) return spec;
  }
}

/// Smallest |pre-activation| of any hidden unit over the inputs. The KL
/// Taylor check needs a smooth neighborhood, so instances where a ReLU sits
/// close to its kink get redrawn.
double min_hidden_preact(const ModelSpec& spec, const VecX& theta,
                         const MatX& inputs) {
  double min_abs = std::numeric_limits<double>::infinity();
  const int L = spec.num_layers();
  for (Index s = 0; s < inputs.rows(); ++s) {
    VecX act = inputs.row(s).transpose();
    Index off = 0;
    for (int l = 0; l < L; ++l) {
      const Index n_in = spec.layer_sizes[static_cast<std::size_t>(l)];
      const Index n_out = spec.layer_sizes[static_cast<std::size_t>(l) + 1];
      Eigen::Map<const MatX> W(theta.data() + off, n_out, n_in);
      Eigen::Map<const VecX> b(theta.data() + off + n_in * n_out, n_out);
      VecX z = W * act + b;
      if (l + 1 < L) {
        min_abs = std::min(min_abs, z.cwiseAbs().minCoeff());
        act = z.cwiseMax(0.0);
      }
      off += (n_in + 1) * n_out;
    }
  }
  return min_abs;
}

double gram_condition(const MatX& Fn, const MatX& Fo, const MatX& G, bool pre) {
  const MatX B = pre ? G : MatX(Fo * G);
  const MatX M = B.transpose() * Fn.fullPivLu().solve(B);
  Eigen::SelfAdjointEigenSolver<MatX> eig(M);
  return eig.eigenvalues().maxCoeff() / std::max(eig.eigenvalues().minCoeff(), 1e-300);
}

CheckResult check_closed_form_vs_oracle(Rng& rng) {
  CheckResult res{"closed_form_vs_oracle (200 instances)", false, 0.0,
                  1e-6, 0.0, ""};
  const auto t0 = Clock::now();
  const double eta = 0.7;
  const double lambda = 1e-10;
  double worst = 0.0;
  for (int inst = 0; inst < 200; ++inst) {
    const bool dense = inst % 2 == 1;
    const bool pre = inst % 4 >= 2;
    for (;;) {  // redraw until the Gram matrix is well-conditioned (< 1e6)
      const Index p = 2 + static_cast<Index>(rng.uniform_index(19));  // 2..20
      const Index m =
          1 + static_cast<Index>(rng.uniform_index(static_cast<std::uint64_t>(
                  std::min<Index>(5, p - 1))));
      const VecX g = random_gaussian(rng, p);
      const MatX G = random_gaussian_mat(rng, p, m);
      const MatX Fn_dense = dense ? random_spd(rng, p, 0.3, 3.0)
                                  : MatX(random_vec(rng, p, 0.1, 3.0).asDiagonal());
      const MatX Fo_dense = dense ? random_spd(rng, p, 0.3, 3.0)
                                  : MatX(random_vec(rng, p, 0.1, 3.0).asDiagonal());
      if (gram_condition(Fn_dense, Fo_dense, G, pre) > 1e6) continue;

      FopngSolution sol;
      if (!dense) {
        const VecX fn = Fn_dense.diagonal();
        const VecX fo = Fo_dense.diagonal();
        sol = pre ? fopng_prefisher_solve(g, as_fisher(fn), G, eta, lambda)
                  : fopng_solve(g, as_fisher(fn), as_fisher(fo), G, eta, lambda);
      } else {
        sol = pre ? fopng_prefisher_solve_dense(g, Fn_dense, G, eta, lambda)
                  : fopng_solve_dense(g, Fn_dense, Fo_dense, G, eta, lambda);
      }
      const VecX u_ora = oracles::constrained_opt_oracle(
          g, Fn_dense, Fo_dense, G,
          pre ? oracles::ConstraintVariant::PreFisher
              : oracles::ConstraintVariant::Raw);
      const VecX v_ora = oracle_v(g, Fn_dense, u_ora, eta);
      worst = std::max(worst, rel_err(sol.u, u_ora));
      worst = std::max(worst, rel_err(sol.v, v_ora));
      break;
    }
  }
  res.measured = worst;
  res.elapsed_seconds = seconds_since(t0);
  res.pass = worst <= res.threshold && res.elapsed_seconds < 10.0;
  res.detail = "max rel err u*/v* across fopng+prefisher, diag+dense SPD";
  return res;
}

// The optimality condition of the projection solve,
//   G' F_old F_new^{-1} F_old G alpha = G' F_old g,
// rearranges to G' F_old r = 0 for the Fisher-preconditioned residual
// r = g - F_new^{-1} u*. (The final update v = c F_new^{-1}(g - u*) is a
// different object and is pinned separately by the oracle and trust-region
// checks.) PreFisher analogue: G~' r = 0 with r = g - F_new^{-1} u~*.
CheckResult check_fisher_orthogonality(Rng& rng) {
  CheckResult res{"fisher_orthogonality (100 instances)", false, 0.0, 1e-8,
                  0.0, ""};
  const auto t0 = Clock::now();
  const double eta = 0.3;
  const double lambda = 1e-12;
  double worst = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    const Index p = 20 + static_cast<Index>(rng.uniform_index(981));  // 20..1000
    const Index m = 1 + static_cast<Index>(rng.uniform_index(10));    // 1..10
    const VecX g = random_gaussian(rng, p);
    const MatX G = random_gaussian_mat(rng, p, m);
    const VecX fn = random_vec(rng, p, 0.1, 3.0);
    const VecX fo = random_vec(rng, p, 0.1, 3.0);

    const FopngSolution sol =
        fopng_solve(g, as_fisher(fn), as_fisher(fo), G, eta, lambda);
    const VecX r = g - regularized_inverse_apply(as_fisher(fn), lambda, sol.u);
    const double r_fo_norm = std::sqrt(r.dot(fo.cwiseProduct(r)));
    for (Index i = 0; i < m; ++i) {
      const VecX gi = G.col(i);
      const double gi_fo_norm = std::sqrt(gi.dot(fo.cwiseProduct(gi)));
      const double inner = std::abs(gi.dot(fo.cwiseProduct(r)));
      worst = std::max(worst, inner / (gi_fo_norm * r_fo_norm));
    }

    const FopngSolution pre = fopng_prefisher_solve(g, as_fisher(fn), G, eta, lambda);
    const VecX rp = g - regularized_inverse_apply(as_fisher(fn), lambda, pre.u);
    for (Index i = 0; i < m; ++i) {
      worst = std::max(worst,
                       std::abs(G.col(i).dot(rp)) / (G.col(i).norm() * rp.norm()));
    }
  }
  res.measured = worst;
  res.elapsed_seconds = seconds_since(t0);
  res.pass = worst <= res.threshold;
  res.detail =
      "normalized |g_i' F_old r| and PreFisher |g~_i' r|, r = g - F_new^{-1} u*";
  return res;
}

CheckResult check_trust_region(Rng& rng) {
  CheckResult res{"trust_region", false, 0.0, 1e-8, 0.0, ""};
  const auto t0 = Clock::now();
  const double lambda = 1e-12;
  double worst = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    const Index p = 20 + static_cast<Index>(rng.uniform_index(981));
    const Index m = 1 + static_cast<Index>(rng.uniform_index(10));
    const double eta = rng.uniform(0.05, 2.0);
    const VecX g = random_gaussian(rng, p);
    const MatX G = random_gaussian_mat(rng, p, m);
    const VecX fn = random_vec(rng, p, 0.1, 3.0);
    const VecX fo = random_vec(rng, p, 0.1, 3.0);

    for (const VecX& v :
         {fopng_update(g, as_fisher(fn), as_fisher(fo), G, eta, lambda),
          fng_update(g, as_fisher(fn), eta, lambda)}) {
      const double fisher_norm_sq = v.dot(fn.cwiseProduct(v));
      worst = std::max(worst, std::abs(fisher_norm_sq - eta * eta) / (eta * eta));
    }
  }
  res.measured = worst;
  res.elapsed_seconds = seconds_since(t0);
  res.pass = worst <= res.threshold;
  res.detail = "|v' F_new v - eta^2| / eta^2 for FOPNG and FNG";
  return res;
}

CheckResult check_reparam_invariance(Rng& rng) {
  CheckResult res{"reparam_invariance (50 reparams)", false, 0.0, 1e-10,
                  0.0, ""};
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (int inst = 0; inst < 50; ++inst) {
    const ModelSpec spec = tiny_spec(rng, 30);
    const Mlp model(spec);
    const Index p = model.param_count();
    const VecX theta = model.init_params() + 0.2 * random_gaussian(rng, p);
    const MatX inputs = random_gaussian_mat(rng, 3, spec.input_dim()).cwiseAbs();
    const VecX dtheta = random_gaussian(rng, p);
    MatX J;
    for (;;) {  // keep J comfortably conditioned
      J = MatX::Identity(p, p) + 0.3 * random_gaussian_mat(rng, p, p);
      const Eigen::JacobiSVD<MatX> svd(J);
      if (svd.singularValues()(0) /
              svd.singularValues()(svd.singularValues().size() - 1) <
          100.0) {
        break;
      }
    }
    const auto [n_theta, n_phi] =
        oracles::reparam_invariance_check(spec, theta, dtheta, J, inputs);
    worst = std::max(worst, std::abs(n_theta - n_phi) / std::max(n_theta, 1e-300));
  }
  res.measured = worst;
  res.elapsed_seconds = seconds_since(t0);
  res.pass = worst <= res.threshold;
  res.detail = "relative Fisher-norm discrepancy";
  return res;
}

CheckResult check_kl_quadratic(Rng& rng) {
  CheckResult res{"kl_quadratic (10 models)", false, 0.0, 2.5, 0.0, ""};
  const auto t0 = Clock::now();
  double worst_slope = 1e9;
  for (int inst = 0; inst < 10; ++inst) {
    ModelSpec spec;
    VecX theta;
    MatX inputs;
    do {  // keep every ReLU away from its kink across the tested neighborhood
      spec = tiny_spec(rng, 30);
      const Mlp model(spec);
      theta = model.init_params() + 0.2 * random_gaussian(rng, model.param_count());
      inputs = random_gaussian_mat(rng, 3, spec.input_dim()).cwiseAbs();
    } while (min_hidden_preact(spec, theta, inputs) < 0.3);
    const MatX F = oracles::exact_fisher_small(spec, theta, inputs);
    VecX dir = random_gaussian(rng, static_cast<Index>(spec.param_count()));
    dir *= 0.02 / dir.norm();

    std::vector<double> log_scale, log_err;
    for (int h = 0; h < 4; ++h) {
      const double scale = std::pow(0.5, h);
      const VecX v = scale * dir;
      const double kl = oracles::exact_kl_categorical(spec, theta, v, inputs);
      const double quad = 0.5 * v.dot(F * v);
      log_scale.push_back(std::log(scale));
      log_err.push_back(std::log(std::max(std::abs(kl - quad), 1e-300)));
    }
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < log_scale.size(); ++i) {
      sx += log_scale[i];
      sy += log_err[i];
      sxx += log_scale[i] * log_scale[i];
      sxy += log_scale[i] * log_err[i];
    }
    const double n = static_cast<double>(log_scale.size());
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    worst_slope = std::min(worst_slope, slope);
  }
  res.measured = worst_slope;
  res.elapsed_seconds = seconds_since(t0);
  res.pass = worst_slope >= res.threshold;
  res.detail = "min log-log slope of |KL - v'Fv/2| over 4 halvings (want >=)";
  return res;
}

CheckResult check_gradients_fd(Rng& rng) {
  CheckResult res{"gradient_finite_difference (20 nets)", false, 0.0, 1e-5,
                  0.0, ""};
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    const ModelSpec spec = tiny_spec(rng, 50);
    const Mlp model(spec);
    const VecX theta = model.init_params() + 0.3 * random_gaussian(rng, model.param_count());
    Batch batch;
    const Index n = 4;
    batch.inputs = random_gaussian_mat(rng, n, spec.input_dim()).cwiseAbs();
    batch.labels.resize(static_cast<std::size_t>(n));
    for (auto& y : batch.labels) {
      y = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(spec.output_dim())));
    }
    const VecX grad = model.loss_and_grad(theta, batch).second;
    const VecX fd = oracles::finite_diff_grad(
        [&](const VecX& th) {
          return oracles::cross_entropy(spec, th, batch.inputs, batch.labels);
        },
        theta, 1e-5);
    for (Index i = 0; i < grad.size(); ++i) {
      const double denom = std::max(std::abs(grad[i]) + std::abs(fd[i]), 1e-5);
      worst = std::max(worst, std::abs(grad[i] - fd[i]) / denom);
    }
  }
  res.measured = worst;
  res.elapsed_seconds = seconds_since(t0);
  res.pass = worst <= res.threshold;
  res.detail = "max relative component error, backprop vs central differences";
  return res;
}

CheckResult check_reduction_identities(Rng& rng) {
  CheckResult res{"reduction_identities", false, 0.0, 1e-10, 0.0, ""};
  const auto t0 = Clock::now();

  // FOPNG with empty memory == FNG (same code path, 1e-12)
  double err_empty;
  {
    const Index p = 40;
    const VecX g = random_gaussian(rng, p);
    const VecX fn = random_vec(rng, p, 0.1, 3.0);
    const VecX fo = random_vec(rng, p, 0.1, 3.0);
    const MatX empty(p, 0);
    const VecX a = fopng_update(g, as_fisher(fn), as_fisher(fo), empty, 0.4, 1e-6);
    const VecX b = fng_update(g, as_fisher(fn), 0.4, 1e-6);
    err_empty = (a - b).norm() / b.norm();
  }

  // FOPNG with identity Fishers == normalized Euclidean OGD projection (1e-10)
  double err_identity;
  {
    const Index p = 30, m = 4;
    const VecX g = random_gaussian(rng, p);
    const MatX G = random_gaussian_mat(rng, p, m);
    const VecX ones = VecX::Ones(p);
    const double eta = 0.9;
    const VecX v = fopng_update(g, as_fisher(ones), as_fisher(ones), G, eta, 1e-12);
    const VecX proj = ogd_update(g, G, 1.0);
    const VecX want = eta * proj / proj.norm();
    err_identity = (v - want).norm() / want.norm();
  }

  // EMA endpoints exact
  bool ema_exact;
  {
    DiagFisher f_old, f_new;
    f_old.values = random_vec(rng, 12, 0.0, 2.0);
    f_new.values = random_vec(rng, 12, 0.0, 2.0);
    ema_exact = ema_update(f_old, f_new, 1.0).values == f_new.values &&
                ema_update(f_old, f_new, 0.0).values == f_old.values;
  }

  res.measured = std::max(err_empty, err_identity);
  res.elapsed_seconds = seconds_since(t0);
  res.pass = err_empty <= 1e-12 && err_identity <= 1e-10 && ema_exact;
  res.detail = "fopng(empty)==fng @1e-12; identity-Fisher==normalized OGD @1e-10; EMA endpoints exact";
  return res;
}

}  // namespace

std::vector<CheckResult> run_oracle_suite(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<CheckResult> out;
  Rng r1 = rng.child({1});
  out.push_back(check_closed_form_vs_oracle(r1));
  Rng r2 = rng.child({2});
  out.push_back(check_fisher_orthogonality(r2));
  Rng r3 = rng.child({3});
  out.push_back(check_trust_region(r3));
  Rng r4 = rng.child({4});
  out.push_back(check_reparam_invariance(r4));
  Rng r5 = rng.child({5});
  out.push_back(check_kl_quadratic(r5));
  Rng r6 = rng.child({6});
  out.push_back(check_gradients_fd(r6));
  Rng r7 = rng.child({7});
  out.push_back(check_reduction_identities(r7));
  return out;
}

bool print_report(const std::vector<CheckResult>& results, std::ostream& os) {
  bool all = true;
  for (const auto& r : results) {
    os << (r.pass ? "PASS" : "FAIL") << "  " << r.name << "  measured="
       << r.measured << " threshold=" << r.threshold << "  ("
       << r.elapsed_seconds << " s)\n      " << r.detail << "\n";
    all = all && r.pass;
  }
  return all;
}

}  // namespace fopng::verification

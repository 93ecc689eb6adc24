#include "fopng/update_rules.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <stdexcept>

namespace fopng {

namespace {

constexpr double kDegenerateDenom = 1e-30;  // on sqrt(g^T P^T F^-1 P g)
constexpr Index kGramBlockRows = 8192;

void check_lambda(double lambda) {
  if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be > 0");
}

void check_finite(const VecX& g) {
  if (!g.allFinite()) throw std::invalid_argument("non-finite gradient");
}

/// Trust-region natural step: y = (F+lambda)^{-1} d, scaled so that the
/// realized Fisher norm of the step is eta.
VecX natural_step(const VecX& direction, const VecX& f_new, double eta,
                  double lambda) {
  VecX y = direction.array() / (f_new.array() + lambda);
  const double s = direction.dot(y);
  if (!(std::sqrt(s) > kDegenerateDenom)) {
    throw DegenerateUpdateError(
        "update direction vanished (gradient inside the protected span?)");
  }
  y *= eta / std::sqrt(s);
  return y;
}

/// Symmetric eigendecomposition pseudo-inverse, the fallback when a Cholesky
/// factorization of the (regularized) Gram matrix fails.
MatX symmetric_pinv(const MatX& A) {
  Eigen::SelfAdjointEigenSolver<MatX> eig(A);
  const VecX& ev = eig.eigenvalues();
  const double tol = ev.cwiseAbs().maxCoeff() * static_cast<double>(A.rows()) *
                     std::numeric_limits<double>::epsilon();
  VecX inv = VecX::Zero(ev.size());
  for (Index i = 0; i < ev.size(); ++i) {
    if (ev[i] > tol) inv[i] = 1.0 / ev[i];
  }
  return eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
}

/// SPD solve with the pseudo-inverse fallback.
struct SpdSolver {
  Eigen::LLT<MatX> llt;
  bool use_pinv = false;
  MatX pinv;

  explicit SpdSolver(const MatX& A) : llt(A) {
    if (llt.info() != Eigen::Success) {
      use_pinv = true;
      pinv = symmetric_pinv(A);
    }
  }

  VecX solve(const VecX& rhs) const {
    return use_pinv ? VecX(pinv * rhs) : VecX(llt.solve(rhs));
  }
};

}  // namespace

Rule rule_from_string(const std::string& name) {
  if (name == "fopng") return Rule::Fopng;
  if (name == "fopng_prefisher") return Rule::FopngPreFisher;
  if (name == "fng") return Rule::Fng;
  if (name == "ogd") return Rule::Ogd;
  if (name == "ewc") return Rule::Ewc;
  if (name == "sgd") return Rule::Sgd;
  if (name == "adam") return Rule::Adam;
  throw std::invalid_argument("unknown rule: " + name);
}

std::string to_string(Rule rule) {
  switch (rule) {
    case Rule::Fopng: return "fopng";
    case Rule::FopngPreFisher: return "fopng_prefisher";
    case Rule::Fng: return "fng";
    case Rule::Ogd: return "ogd";
    case Rule::Ewc: return "ewc";
    case Rule::Sgd: return "sgd";
    case Rule::Adam: return "adam";
  }
  return "?";
}

void OptimizerConfig::validate() const {
  if (!(eta > 0.0)) throw std::invalid_argument("OptimizerConfig: eta must be > 0");
  switch (rule) {
    case Rule::Fopng:
      if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw std::invalid_argument("OptimizerConfig: alpha outside [0, 1]");
      }
      [[fallthrough]];
    case Rule::FopngPreFisher:
    case Rule::Fng:
    case Rule::Ewc:
      if (!(lambda > 0.0)) {
        throw std::invalid_argument("OptimizerConfig: lambda must be > 0");
      }
      break;
    case Rule::Adam:
      if (!(adam_eps > 0.0) || !(adam_beta1 >= 0.0 && adam_beta1 < 1.0) ||
          !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
        throw std::invalid_argument("OptimizerConfig: bad adam parameters");
      }
      break;
    case Rule::Ogd:
    case Rule::Sgd:
      break;
  }
}

FisherProjector::FisherProjector(const Eigen::Ref<const MatX>& G,
                                 VecX col_scale, const VecX& f_new,
                                 double lambda)
    : G_(G), col_scale_(std::move(col_scale)) {
  check_lambda(lambda);
  const Index p = G_.rows();
  const Index m = G_.cols();
  if (f_new.size() != p) {
    throw std::invalid_argument("FisherProjector: Fisher length mismatch");
  }
  // w_i = f_old_i^2 / (f_new_i + lambda) for raw, 1 / (f_new_i + lambda) for
  // prefisher; A = G^T diag(w) G + lambda I accumulated in row blocks so the
  // weighted copy of G is never materialized whole.
  VecX w = (f_new.array() + lambda).inverse();
  if (col_scale_.size() > 0) w.array() *= col_scale_.array().square();
  MatX A = MatX::Zero(m, m);
  for (Index r0 = 0; r0 < p; r0 += kGramBlockRows) {
    const Index nb = std::min(kGramBlockRows, p - r0);
    A.noalias() += G_.middleRows(r0, nb).transpose() *
                   (w.segment(r0, nb).asDiagonal() * G_.middleRows(r0, nb));
  }
  A.diagonal().array() += lambda;
  llt_.compute(A);
  if (llt_.info() != Eigen::Success) {
    use_pinv_ = true;
    pinv_ = symmetric_pinv(A);
  }
}

FisherProjector FisherProjector::raw(const Eigen::Ref<const MatX>& G,
                                     const VecX& f_old, const VecX& f_new,
                                     double lambda) {
  if (f_old.size() != G.rows()) {
    throw std::invalid_argument("FisherProjector: F_old length mismatch");
  }
  return FisherProjector(G, f_old, f_new, lambda);
}

FisherProjector FisherProjector::prefisher(const Eigen::Ref<const MatX>& G_tilde,
                                           const VecX& f_new, double lambda) {
  return FisherProjector(G_tilde, VecX(), f_new, lambda);
}

VecX FisherProjector::solve_coeffs(const VecX& g) const {
  VecX rhs;
  if (col_scale_.size() > 0) {
    rhs.noalias() = G_.transpose() * VecX(col_scale_.cwiseProduct(g));
  } else {
    rhs.noalias() = G_.transpose() * g;
  }
  return use_pinv_ ? VecX(pinv_ * rhs) : VecX(llt_.solve(rhs));
}

VecX FisherProjector::removed_component(const VecX& g) const {
  const VecX beta = solve_coeffs(g);
  VecX u = G_ * beta;
  if (col_scale_.size() > 0) u.array() *= col_scale_.array();
  return u;
}

VecX FisherProjector::project(const VecX& g) const {
  return g - removed_component(g);
}

FopngSolution fopng_solve(const VecX& g, const DiagFisher& F_new,
                          const DiagFisher& F_old,
                          const Eigen::Ref<const MatX>& G, double eta,
                          double lambda) {
  check_lambda(lambda);
  check_finite(g);
  if (G.cols() == 0) {
    VecX v = fng_update(g, F_new, eta, lambda);
    return {VecX::Zero(g.size()), std::move(v)};
  }
  const FisherProjector proj =
      FisherProjector::raw(G, F_old.values, F_new.values, lambda);
  VecX u = proj.removed_component(g);
  VecX v = natural_step(g - u, F_new.values, eta, lambda);
  return {std::move(u), std::move(v)};
}

VecX fopng_update(const VecX& g, const DiagFisher& F_new,
                  const DiagFisher& F_old, const Eigen::Ref<const MatX>& G,
                  double eta, double lambda) {
  return fopng_solve(g, F_new, F_old, G, eta, lambda).v;
}

FopngSolution fopng_prefisher_solve(const VecX& g, const DiagFisher& F_new,
                                    const Eigen::Ref<const MatX>& G_tilde,
                                    double eta, double lambda) {
  check_lambda(lambda);
  check_finite(g);
  if (G_tilde.cols() == 0) {
    VecX v = fng_update(g, F_new, eta, lambda);
    return {VecX::Zero(g.size()), std::move(v)};
  }
  const FisherProjector proj =
      FisherProjector::prefisher(G_tilde, F_new.values, lambda);
  VecX u = proj.removed_component(g);
  VecX v = natural_step(g - u, F_new.values, eta, lambda);
  return {std::move(u), std::move(v)};
}

VecX fopng_prefisher_update(const VecX& g, const DiagFisher& F_new,
                            const Eigen::Ref<const MatX>& G_tilde, double eta,
                            double lambda) {
  return fopng_prefisher_solve(g, F_new, G_tilde, eta, lambda).v;
}

VecX fng_update(const VecX& g, const DiagFisher& F_new, double eta,
                double lambda) {
  check_lambda(lambda);
  check_finite(g);
  if (g.squaredNorm() == 0.0) {
    throw DegenerateUpdateError("fng_update: zero gradient");
  }
  return natural_step(g, F_new.values, eta, lambda);
}

VecX trust_region_step(const VecX& direction, const DiagFisher& F_new,
                       double eta, double lambda) {
  check_lambda(lambda);
  return natural_step(direction, F_new.values, eta, lambda);
}

FopngSolution fopng_solve_dense(const VecX& g, const MatX& F_new,
                                const MatX& F_old, const MatX& G, double eta,
                                double lambda) {
  check_lambda(lambda);
  check_finite(g);
  MatX Fn_reg = F_new;
  Fn_reg.diagonal().array() += lambda;
  const Eigen::LLT<MatX> fn_llt(Fn_reg);
  if (fn_llt.info() != Eigen::Success) {
    throw std::invalid_argument("fopng_solve_dense: F_new not SPD");
  }
  const MatX B = F_old * G;
  MatX A = B.transpose() * fn_llt.solve(B);
  A.diagonal().array() += lambda;
  const SpdSolver gram(A);
  const VecX beta = gram.solve(B.transpose() * g);
  const VecX u = B * beta;
  const VecX pg = g - u;
  const VecX y = fn_llt.solve(pg);
  const double s = pg.dot(y);
  if (!(std::sqrt(s) > kDegenerateDenom)) {
    throw DegenerateUpdateError("fopng_solve_dense: degenerate direction");
  }
  return {u, VecX(y * (eta / std::sqrt(s)))};
}

FopngSolution fopng_prefisher_solve_dense(const VecX& g, const MatX& F_new,
                                          const MatX& G_tilde, double eta,
                                          double lambda) {
  return fopng_solve_dense(g, F_new, MatX::Identity(g.size(), g.size()),
                           G_tilde, eta, lambda);
}

OgdBasis::OgdBasis(Index p) : Q_(p, 0) {}

void OgdBasis::absorb(const Eigen::Ref<const MatX>& cols) {
  for (Index c = 0; c < cols.cols(); ++c) {
    VecX w = cols.col(c);
    const double orig_norm = w.norm();
    if (orig_norm == 0.0) {
      ++dropped_;
      continue;
    }
    for (int pass = 0; pass < 2; ++pass) {
      if (rank_ > 0) {
        w.noalias() -= Q_.leftCols(rank_) * (Q_.leftCols(rank_).transpose() * w);
      }
    }
    const double norm = w.norm();
    if (norm <= 1e-12 * orig_norm) {
      ++dropped_;  // linearly dependent on the basis so far
      continue;
    }
    if (rank_ == Q_.cols()) {
      Q_.conservativeResize(Eigen::NoChange, std::max<Index>(8, 2 * Q_.cols()));
    }
    Q_.col(rank_++) = w / norm;
  }
}

VecX OgdBasis::project(const VecX& g) const {
  if (rank_ == 0) return g;
  return g - Q_.leftCols(rank_) * (Q_.leftCols(rank_).transpose() * g);
}

VecX ogd_update(const VecX& g, const Eigen::Ref<const MatX>& G, double eta) {
  OgdBasis basis(g.size());
  basis.absorb(G);
  return eta * basis.project(g);
}

VecX ewc_gradient(const VecX& g_task, const VecX& theta, const EwcState& state,
                  double lambda_ewc) {
  VecX out = g_task;
  for (const EwcAnchor& anchor : state.anchors) {
    if (anchor.theta_star.size() != theta.size() ||
        anchor.fisher.size() != theta.size()) {
      throw std::invalid_argument("ewc_gradient: anchor length mismatch");
    }
    out.array() +=
        lambda_ewc * anchor.fisher.array() * (theta - anchor.theta_star).array();
  }
  return out;
}

VecX sgd_update(const VecX& g, double eta) { return eta * g; }

VecX adam_update(const VecX& g, AdamState& state, double eta, double beta1,
                 double beta2, double eps) {
  if (state.m.size() != g.size()) {
    throw std::invalid_argument("adam_update: state length mismatch");
  }
  state.step += 1;
  state.m = beta1 * state.m + (1.0 - beta1) * g;
  state.v = beta2 * state.v + (1.0 - beta2) * g.cwiseProduct(g);
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  const ArrX m_hat = state.m.array() / bc1;
  const ArrX v_hat = state.v.array() / bc2;
  return eta * (m_hat / (v_hat.sqrt() + eps)).matrix();
}

}  // namespace fopng

#pragma once

#include <Eigen/Cholesky>

#include <vector>

#include "fopng/fisher.hpp"
#include "fopng/types.hpp"

namespace fopng {

enum class Rule { Fopng, FopngPreFisher, Fng, Ogd, Ewc, Sgd, Adam };

Rule rule_from_string(const std::string& name);
std::string to_string(Rule rule);

struct OptimizerConfig {
  Rule rule = Rule::Fopng;
  double eta = 1e-3;    // learning rate / Fisher trust radius
  double lambda = 1e-3; // fopng-family regularizer, or EWC penalty weight
  double alpha = 0.5;   // EMA weight for F_old (fopng only)
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

struct FopngSolution {
  VecX u;  // removed gradient component, u* of the constrained problem
  VecX v;  // final update; caller applies theta <- theta - v
};

/// Shared projection state for the FOPNG family over diagonal Fishers.
/// Both variants reduce to B = diag(weight) * G with
///   A = B^T (F_new + lambda)^{-1} B + lambda I  (m x m),
/// solved once per (G, F_old, F_new, lambda) tuple and reused across batches.
/// The p x p projector P is never materialized.
class FisherProjector {
 public:
  /// FOPNG: B = diag(f_old) G.
  static FisherProjector raw(const Eigen::Ref<const MatX>& G, const VecX& f_old,
                             const VecX& f_new, double lambda);
  /// FOPNG-PreFisher: B = G_tilde (columns premultiplied at storage time).
  static FisherProjector prefisher(const Eigen::Ref<const MatX>& G_tilde,
                                   const VecX& f_new, double lambda);

  /// Pg = g - B (A^{-1} B^T g).
  VecX project(const VecX& g) const;

  /// u = B (A^{-1} B^T g), the removed component.
  VecX removed_component(const VecX& g) const;

  Index num_directions() const { return G_.cols(); }
  bool used_pseudo_inverse() const { return use_pinv_; }

 private:
  FisherProjector(const Eigen::Ref<const MatX>& G, VecX col_scale,
                  const VecX& f_new, double lambda);

  VecX solve_coeffs(const VecX& g) const;

  Eigen::Ref<const MatX> G_;
  VecX col_scale_;  // f_old for raw; empty for prefisher
  Eigen::LLT<MatX> llt_;
  bool use_pinv_ = false;
  MatX pinv_;  // eigendecomposition pseudo-inverse fallback
};

/// FOPNG update over diagonal Fishers: remove the closed-form constrained
/// component from g, precondition by the regularized new Fisher, and scale
/// to Fisher norm eta. Empty G falls back to fng_update.
FopngSolution fopng_solve(const VecX& g, const DiagFisher& F_new,
                          const DiagFisher& F_old,
                          const Eigen::Ref<const MatX>& G, double eta,
                          double lambda);
VecX fopng_update(const VecX& g, const DiagFisher& F_new,
                  const DiagFisher& F_old, const Eigen::Ref<const MatX>& G,
                  double eta, double lambda);

/// PreFisher variant: constraint u in Col(G_tilde), no F_old factor.
FopngSolution fopng_prefisher_solve(const VecX& g, const DiagFisher& F_new,
                                    const Eigen::Ref<const MatX>& G_tilde,
                                    double eta, double lambda);
VecX fopng_prefisher_update(const VecX& g, const DiagFisher& F_new,
                            const Eigen::Ref<const MatX>& G_tilde, double eta,
                            double lambda);

/// Unconstrained natural-gradient step with the same trust region:
/// v = eta (F+lambda)^{-1} g / sqrt(g^T (F+lambda)^{-1} g).
VecX fng_update(const VecX& g, const DiagFisher& F_new, double eta,
                double lambda);

/// Preconditions a direction by the regularized diagonal inverse and scales
/// it to Fisher norm eta; the shared tail of the FOPNG family.
VecX trust_region_step(const VecX& direction, const DiagFisher& F_new,
                       double eta, double lambda);

/// Dense-matrix forms of the same closed forms, for verification against the
/// numeric oracle on small instances with full SPD Fishers.
FopngSolution fopng_solve_dense(const VecX& g, const MatX& F_new,
                                const MatX& F_old, const MatX& G, double eta,
                                double lambda);
FopngSolution fopng_prefisher_solve_dense(const VecX& g, const MatX& F_new,
                                          const MatX& G_tilde, double eta,
                                          double lambda);

/// Incrementally maintained orthonormal basis of Col(G) for OGD. Linearly
/// dependent columns are dropped at insertion.
class OgdBasis {
 public:
  explicit OgdBasis(Index p);

  /// Modified Gram-Schmidt with a re-orthogonalization pass.
  void absorb(const Eigen::Ref<const MatX>& cols);

  Index rank() const { return rank_; }
  Index dropped() const { return dropped_; }

  /// Euclidean projection onto the orthogonal complement of the basis.
  VecX project(const VecX& g) const;

 private:
  MatX Q_;  // p x rank_
  Index rank_ = 0;
  Index dropped_ = 0;
};

/// v = eta * (g - G (G^T G)^{-1} G^T g), realized through an orthonormal
/// basis of Col(G).
VecX ogd_update(const VecX& g, const Eigen::Ref<const MatX>& G, double eta);

struct EwcAnchor {
  VecX theta_star;
  VecX fisher;  // diagonal
};

struct EwcState {
  std::vector<EwcAnchor> anchors;  // one per completed task
};

/// g_task + lambda_ewc * sum over anchors of F (theta - theta*). The caller
/// applies a plain SGD step to the result.
VecX ewc_gradient(const VecX& g_task, const VecX& theta, const EwcState& state,
                  double lambda_ewc);

VecX sgd_update(const VecX& g, double eta);

struct AdamState {
  VecX m;
  VecX v;
  long step = 0;

  explicit AdamState(Index p) : m(VecX::Zero(p)), v(VecX::Zero(p)) {}
};

VecX adam_update(const VecX& g, AdamState& state, double eta,
                 double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

}  // namespace fopng

#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "fopng/model.hpp"
#include "fopng/types.hpp"

// Brute-force reference implementations used to validate the closed forms
// and the training kernels. Everything here is deliberately written with
// plain scalar loops, forward-mode dual numbers, and generic dense solves so
// that it shares no numerical kernel with the code under test.
namespace fopng::oracles {

/// Independent forward pass (scalar loops, same flat parameter layout as Mlp).
VecX logits(const ModelSpec& spec, const VecX& theta, const VecX& x);

VecX softmax_probs(const VecX& logit_values);

/// log p_theta(y|x), stable.
double log_prob(const ModelSpec& spec, const VecX& theta, const VecX& x, int y);

/// Mean cross-entropy over samples, independent route.
double cross_entropy(const ModelSpec& spec, const VecX& theta,
                     const MatX& inputs, const std::vector<int>& labels);

/// C x p Jacobian of the logits with respect to theta, exact to machine
/// precision via forward-mode dual numbers (one pass per parameter).
MatX logit_jacobian(const ModelSpec& spec, const VecX& theta, const VecX& x);

/// Exact Fisher information: class labels enumerated exhaustively and
/// weighted by softmax probabilities, averaged over the given inputs.
/// Guarded to p <= 60.
MatX exact_fisher_small(const ModelSpec& spec, const VecX& theta,
                        const MatX& inputs);

enum class ConstraintVariant { Raw, PreFisher };

/// Numeric minimizer of || g - F_new^{-1} u ||^2_{F_new} subject to
/// F_old^{-1} u in Col(G) (Raw) or u in Col(G) (PreFisher): substitutes the
/// column parameterization and solves the normal equations with a
/// rank-revealing dense solver. Returns u*.
VecX constrained_opt_oracle(const VecX& g, const MatX& F_new,
                            const MatX& F_old, const MatX& G,
                            ConstraintVariant variant);

/// Exact KL(p_theta || p_{theta+v}) for the categorical model, averaged over
/// inputs.
double exact_kl_categorical(const ModelSpec& spec, const VecX& theta,
                            const VecX& v, const MatX& inputs);

/// Fisher norms of the same tangent vector in two parameterizations related
/// by the linear map J: returns { ||dtheta||_{F_theta}, ||J dtheta||_{F_phi} }
/// with F_phi = J^{-T} F_theta J^{-1}.
std::pair<double, double> reparam_invariance_check(const ModelSpec& spec,
                                                   const VecX& theta,
                                                   const VecX& dtheta,
                                                   const MatX& J,
                                                   const MatX& inputs);

/// Central finite differences of a scalar function, per coordinate.
VecX finite_diff_grad(const std::function<double(const VecX&)>& f,
                      const VecX& theta, double step);

}  // namespace fopng::oracles

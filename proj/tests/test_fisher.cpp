#include <doctest.h>

#include "fopng/fisher.hpp"
#include "fopng/oracles.hpp"

using namespace fopng;

namespace {

ModelSpec spec_of(std::vector<int> sizes, std::uint64_t seed = 0) {
  ModelSpec s;
  s.layer_sizes = std::move(sizes);
  s.seed = seed;
  return s;
}

VecX gauss(Rng& rng, Index n) {
  VecX v(n);
  for (Index i = 0; i < n; ++i) v[i] = rng.normal();
  return v;
}

Batch random_batch(Rng& rng, Index n, int d, int C) {
  Batch b;
  b.inputs.resize(n, d);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < d; ++j) b.inputs(i, j) = rng.uniform();
  }
  b.labels.resize(static_cast<std::size_t>(n));
  for (auto& y : b.labels) {
    y = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(C)));
  }
  return b;
}

}  // namespace

TEST_CASE("dead unit has exactly zero Fisher entries") {
  // hidden unit 0: incoming weights+bias and outgoing weights all zero
  const ModelSpec spec = spec_of({2, 2, 2}, 3);
  const Mlp model(spec);
  VecX theta = model.init_params();
  // layer 0 weights (2x2 col-major): rows are hidden units
  theta[model.weight_offset(0) + 0] = 0.0;  // W0(0,0)
  theta[model.weight_offset(0) + 2] = 0.0;  // W0(0,1)
  theta[model.bias_offset(0) + 0] = 0.0;
  // layer 1 weights: column 0 feeds from hidden unit 0
  theta[model.weight_offset(1) + 0] = 0.0;  // W1(0,0)
  theta[model.weight_offset(1) + 1] = 0.0;  // W1(1,0)

  Rng rng(4);
  const Batch batch = random_batch(rng, 16, 2, 2);
  Rng est_rng(5);
  const DiagFisher F = estimate_diag_fisher(model, theta, batch,
                                            FisherMode::Sampled, std::nullopt,
                                            est_rng);
  CHECK(F.values[model.weight_offset(0) + 0] == 0.0);
  CHECK(F.values[model.weight_offset(0) + 2] == 0.0);
  CHECK(F.values[model.bias_offset(0) + 0] == 0.0);
  CHECK(F.values.minCoeff() >= 0.0);
}

TEST_CASE("two-class model at theta=0: entries are exactly 1/4 at unit input") {
  const ModelSpec spec = spec_of({1, 2});
  const Mlp model(spec);
  const VecX theta = VecX::Zero(model.param_count());
  Batch batch;
  batch.inputs = MatX::Ones(64, 1);
  batch.labels.assign(64, 0);
  Rng rng(6);
  const DiagFisher F = estimate_diag_fisher(model, theta, batch,
                                            FisherMode::Sampled, std::nullopt,
                                            rng);
  for (Index i = 0; i < F.values.size(); ++i) {
    CHECK(F.values[i] == doctest::Approx(0.25).epsilon(1e-12));
  }
}

TEST_CASE("exhaustive class expectation matches the exact-Fisher oracle") {
  Rng rng(7);
  const ModelSpec spec = spec_of({3, 4, 3}, 13);
  const Mlp model(spec);
  const VecX theta = model.init_params() + 0.3 * gauss(rng, model.param_count());
  const Batch batch = random_batch(rng, 5, 3, 3);

  // replace the sampled expectation by the explicit softmax-weighted sum over
  // classes, using the training-path score gradients
  VecX diag = VecX::Zero(model.param_count());
  for (Index i = 0; i < batch.size(); ++i) {
    const VecX x = batch.inputs.row(i).transpose();
    const VecX probs = Mlp::softmax(model.forward(theta, x));
    for (int y = 0; y < 3; ++y) {
      const VecX s = model.score_grad(theta, x, y);
      diag.array() += probs[y] * s.array().square();
    }
  }
  diag /= static_cast<double>(batch.size());

  const MatX F = oracles::exact_fisher_small(spec, theta, batch.inputs);
  CHECK((diag - F.diagonal()).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("subsampling draws without replacement and sorts by index") {
  Rng rng(8);
  const ModelSpec spec = spec_of({2, 3}, 2);
  const Mlp model(spec);
  const VecX theta = model.init_params();
  const Batch batch = random_batch(rng, 32, 2, 3);

  Rng a(99);
  const DiagFisher full = estimate_diag_fisher(model, theta, batch,
                                               FisherMode::Empirical,
                                               std::nullopt, a);
  // fisher_batch_size == n goes down the full path: identical output
  Rng b(99);
  const DiagFisher capped = estimate_diag_fisher(model, theta, batch,
                                                 FisherMode::Empirical,
                                                 Index{32}, b);
  CHECK(full.values == capped.values);
  CHECK(full.full_batch);
  CHECK(capped.full_batch);

  Rng c(100);
  const DiagFisher sub = estimate_diag_fisher(model, theta, batch,
                                              FisherMode::Empirical, Index{8}, c);
  CHECK(sub.batch_size_used == 8);
  CHECK_FALSE(sub.full_batch);
  CHECK(sub.values.minCoeff() >= 0.0);
}

TEST_CASE("sampled-mode estimation is reproducible bitwise") {
  Rng rng(9);
  const ModelSpec spec = spec_of({3, 4, 3}, 1);
  const Mlp model(spec);
  const VecX theta = model.init_params() + 0.2 * gauss(rng, model.param_count());
  const Batch batch = random_batch(rng, 20, 3, 3);
  Rng a(7), b(7);
  const DiagFisher fa = estimate_diag_fisher(model, theta, batch,
                                             FisherMode::Sampled, Index{10}, a);
  const DiagFisher fb = estimate_diag_fisher(model, theta, batch,
                                             FisherMode::Sampled, Index{10}, b);
  CHECK(fa.values == fb.values);
}

TEST_CASE("estimate_diag_fisher rejects bad input") {
  const ModelSpec spec = spec_of({2, 2}, 0);
  const Mlp model(spec);
  const VecX theta = VecX::Zero(model.param_count());
  Batch empty;
  empty.inputs.resize(0, 2);
  Rng rng(1);
  CHECK_THROWS_AS(estimate_diag_fisher(model, theta, empty, FisherMode::Sampled,
                                       std::nullopt, rng),
                  std::invalid_argument);
  Batch one;
  one.inputs = MatX::Zero(1, 2);
  one.labels = {0};
  CHECK_THROWS_AS(estimate_diag_fisher(model, theta, one, FisherMode::Sampled,
                                       Index{0}, rng),
                  std::invalid_argument);
}

TEST_CASE("ema_update") {
  DiagFisher a, b;
  a.values = VecX::Constant(3, 0.2);
  b.values = VecX::Constant(3, 0.4);

  CHECK(ema_update(a, b, 0.5).values[0] == doctest::Approx(0.3));
  CHECK(ema_update(a, b, 1.0).values == b.values);
  CHECK(ema_update(a, b, 0.0).values == a.values);
  CHECK_THROWS_AS(ema_update(a, b, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(ema_update(a, b, 1.1), std::invalid_argument);

  DiagFisher wrong;
  wrong.values = VecX::Zero(2);
  CHECK_THROWS_AS(ema_update(a, wrong, 0.5), std::invalid_argument);
}

TEST_CASE("regularized_inverse_apply") {
  DiagFisher F;

  SUBCASE("pure-lambda inverse") {
    F.values = VecX::Zero(2);
    VecX x(2);
    x << 2, 4;
    const VecX y = regularized_inverse_apply(F, 1.0, x);
    CHECK(y[0] == 2.0);
    CHECK(y[1] == 4.0);
  }

  SUBCASE("arithmetic") {
    F.values = VecX(2);
    F.values << 1, 3;
    VecX x(2);
    x << 2, 4;
    const VecX y = regularized_inverse_apply(F, 1.0, x);
    CHECK(y[0] == 1.0);
    CHECK(y[1] == 1.0);
  }

  SUBCASE("round trip and positive definiteness") {
    Rng rng(10);
    F.values = VecX(16);
    for (Index i = 0; i < 16; ++i) F.values[i] = rng.uniform(0.0, 5.0);
    for (int trial = 0; trial < 20; ++trial) {
      const double lambda = rng.uniform(1e-6, 2.0);
      const VecX x = gauss(rng, 16);
      const VecX y = regularized_inverse_apply(F, lambda, x);
      const VecX back = y.array() * (F.values.array() + lambda);
      CHECK((back - x).cwiseAbs().maxCoeff() < 1e-14 * x.cwiseAbs().maxCoeff());
      if (x.squaredNorm() > 0) CHECK(y.dot(x) > 0.0);
    }
  }

  SUBCASE("lambda must be positive") {
    F.values = VecX::Ones(2);
    CHECK_THROWS_AS(regularized_inverse_apply(F, 0.0, VecX::Ones(2)),
                    std::invalid_argument);
    CHECK_THROWS_AS(regularized_inverse_apply(F, -1.0, VecX::Ones(2)),
                    std::invalid_argument);
  }
}

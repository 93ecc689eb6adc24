#include <doctest.h>

#include <cmath>

#include "fopng/model.hpp"
#include "fopng/oracles.hpp"
#include "fopng/rng.hpp"

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

TEST_CASE("param count for the MNIST MLP") {
  CHECK(spec_of({784, 100, 100, 10}).param_count() == 89610);
}

TEST_CASE("init is deterministic and biases start at zero") {
  const Mlp model(spec_of({2, 3}, 7));
  const VecX a = model.init_params();
  const VecX b = model.init_params();
  CHECK(a == b);  // bitwise
  for (Index i = model.bias_offset(0); i < model.param_count(); ++i) {
    CHECK(a[i] == 0.0);
  }
  const double bound = 1.0 / std::sqrt(2.0);
  for (Index i = 0; i < model.bias_offset(0); ++i) {
    CHECK(std::abs(a[i]) <= bound);
  }
  // different seed, different weights
  CHECK(Mlp(spec_of({2, 3}, 8)).init_params() != a);
}

TEST_CASE("spec validation") {
  CHECK_THROWS_AS(Mlp(spec_of({5})), std::invalid_argument);
  CHECK_THROWS_AS(Mlp(spec_of({5, 0, 2})), std::invalid_argument);
}

TEST_CASE("zero network: uniform softmax and ln C loss") {
  const Mlp model(spec_of({4, 5, 10}));
  const VecX theta = VecX::Zero(model.param_count());
  Rng rng(1);
  const Batch batch = random_batch(rng, 6, 4, 10);

  const VecX logits = model.forward(theta, batch.inputs.row(0).transpose());
  CHECK(logits.cwiseAbs().maxCoeff() == 0.0);
  const VecX probs = Mlp::softmax(logits);
  for (Index c = 0; c < 10; ++c) CHECK(probs[c] == doctest::Approx(0.1));

  const auto [loss, grad] = model.loss_and_grad(theta, batch);
  CHECK(loss == doctest::Approx(std::log(10.0)).epsilon(1e-12));
  CHECK(grad.size() == model.param_count());
}

TEST_CASE("one-unit linear network") {
  const Mlp model(spec_of({1, 1}));
  VecX theta(2);
  theta << 1.0, 0.0;  // weight 1, bias 0
  VecX x(1);
  x << 0.5;
  CHECK(model.forward(theta, x)[0] == doctest::Approx(0.5));
}

TEST_CASE("forward matches the independent oracle forward") {
  Rng rng(5);
  const ModelSpec spec = spec_of({5, 4, 3}, 12);
  const Mlp model(spec);
  const VecX theta = model.init_params() + 0.4 * gauss(rng, model.param_count());
  for (int i = 0; i < 10; ++i) {
    const VecX x = gauss(rng, 5);
    const VecX a = model.forward(theta, x);
    const VecX b = oracles::logits(spec, theta, x);
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("forward is pure: repeated calls bitwise identical") {
  Rng rng(6);
  const Mlp model(spec_of({3, 4, 2}, 3));
  const VecX theta = model.init_params();
  const VecX x = gauss(rng, 3);
  const VecX a = model.forward(theta, x);
  const VecX b = model.forward(theta, x);
  CHECK(a == b);
}

TEST_CASE("forward rejects wrong input dimension") {
  const Mlp model(spec_of({3, 2}));
  const VecX theta = VecX::Zero(model.param_count());
  CHECK_THROWS_AS(model.forward(theta, VecX::Zero(4)), std::invalid_argument);
  CHECK_THROWS_AS(model.forward(VecX::Zero(3), VecX::Zero(3)),
                  std::invalid_argument);
}

TEST_CASE("duplicated batch leaves loss and gradient unchanged") {
  Rng rng(7);
  const ModelSpec spec = spec_of({4, 5, 3}, 2);
  const Mlp model(spec);
  const VecX theta = model.init_params() + 0.3 * gauss(rng, model.param_count());
  const Batch batch = random_batch(rng, 5, 4, 3);

  Batch doubled;
  doubled.inputs.resize(10, 4);
  doubled.inputs.topRows(5) = batch.inputs;
  doubled.inputs.bottomRows(5) = batch.inputs;
  doubled.labels = batch.labels;
  doubled.labels.insert(doubled.labels.end(), batch.labels.begin(),
                        batch.labels.end());

  const auto [l1, g1] = model.loss_and_grad(theta, batch);
  const auto [l2, g2] = model.loss_and_grad(theta, doubled);
  CHECK(l1 == doctest::Approx(l2).epsilon(1e-14));
  CHECK((g1 - g2).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("loss gradient matches finite differences on tiny nets") {
  Rng rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    const ModelSpec spec = spec_of({3, 4, 3}, 100 + static_cast<unsigned>(trial));
    const Mlp model(spec);
    REQUIRE(model.param_count() <= 50);
    const VecX theta = model.init_params() + 0.3 * gauss(rng, model.param_count());
    const Batch batch = random_batch(rng, 4, 3, 3);
    const VecX grad = model.loss_and_grad(theta, batch).second;
    const VecX fd = oracles::finite_diff_grad(
        [&](const VecX& t) {
          return oracles::cross_entropy(spec, t, batch.inputs, batch.labels);
        },
        theta, 1e-5);
    for (Index i = 0; i < grad.size(); ++i) {
      const double rel = std::abs(grad[i] - fd[i]) /
                         std::max(std::abs(fd[i]) + std::abs(grad[i]), 1e-5);
      CHECK(rel <= 1e-5);
    }
  }
}

TEST_CASE("per-sample score gradients") {
  Rng rng(9);
  const ModelSpec spec = spec_of({3, 4, 3}, 21);
  const Mlp model(spec);
  const VecX theta = model.init_params() + 0.3 * gauss(rng, model.param_count());
  const Batch batch = random_batch(rng, 6, 3, 3);

  SUBCASE("negated mean of observed rows equals the loss gradient") {
    const MatX rows =
        model.per_sample_score_grads(theta, batch, LabelMode::Observed);
    VecX mean = VecX::Zero(model.param_count());
    for (Index i = 0; i < rows.rows(); ++i) mean += rows.row(i).transpose();
    mean /= static_cast<double>(rows.rows());
    const VecX grad = model.loss_and_grad(theta, batch).second;
    CHECK((grad + mean).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("rows at theta=0 match finite differences of log softmax") {
    const VecX zero = VecX::Zero(model.param_count());
    const MatX rows =
        model.per_sample_score_grads(zero, batch, LabelMode::Observed);
    for (Index i = 0; i < 2; ++i) {
      const VecX x = batch.inputs.row(i).transpose();
      const int y = batch.labels[static_cast<std::size_t>(i)];
      const VecX fd = oracles::finite_diff_grad(
          [&](const VecX& t) { return oracles::log_prob(spec, t, x, y); }, zero,
          1e-5);
      CHECK((rows.row(i).transpose() - fd).cwiseAbs().maxCoeff() < 1e-8);
    }
  }

  SUBCASE("score gradient at a generic theta matches finite differences") {
    const VecX x = batch.inputs.row(0).transpose();
    const int y = batch.labels[0];
    const VecX s = model.score_grad(theta, x, y);
    const VecX fd = oracles::finite_diff_grad(
        [&](const VecX& t) { return oracles::log_prob(spec, t, x, y); }, theta,
        1e-5);
    for (Index i = 0; i < s.size(); ++i) {
      const double rel = std::abs(s[i] - fd[i]) /
                         std::max(std::abs(fd[i]) + std::abs(s[i]), 1e-5);
      CHECK(rel <= 1e-5);
    }
  }

  SUBCASE("single-sample batch is the single score gradient") {
    Batch one;
    one.inputs = batch.inputs.topRows(1);
    one.labels = {batch.labels[0]};
    const MatX rows = model.per_sample_score_grads(theta, one, LabelMode::Observed);
    CHECK(rows.rows() == 1);
    const VecX direct =
        model.score_grad(theta, one.inputs.row(0).transpose(), one.labels[0]);
    CHECK((rows.row(0).transpose() - direct).cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("sampled mode is reproducible and needs an rng") {
    CHECK_THROWS_AS(model.per_sample_score_grads(theta, batch, LabelMode::Sampled),
                    std::invalid_argument);
    Rng r1(42), r2(42);
    const MatX a = model.per_sample_score_grads(theta, batch, LabelMode::Sampled, &r1);
    const MatX b = model.per_sample_score_grads(theta, batch, LabelMode::Sampled, &r2);
    CHECK(a == b);
  }
}

TEST_CASE("ground-truth logit gradient") {
  SUBCASE("linear logit: weight gets x, bias gets 1") {
    const Mlp model(spec_of({2, 2}));
    const VecX theta = VecX::Zero(6);
    VecX x(2);
    x << 1.0, 0.0;
    const VecX grad = model.ground_truth_logit_grad(theta, x, 0);
    // column-major weights: (0,0) (1,0) (0,1) (1,1), then biases
    CHECK(grad[0] == 1.0);  // W(0,0) <- x0
    CHECK(grad[1] == 0.0);
    CHECK(grad[2] == 0.0);  // W(0,1) <- x1 = 0
    CHECK(grad[3] == 0.0);
    CHECK(grad[4] == 1.0);  // bias 0
    CHECK(grad[5] == 0.0);
  }

  SUBCASE("matches finite differences of the scalar logit") {
    Rng rng(10);
    const ModelSpec spec = spec_of({3, 4, 3}, 33);
    const Mlp model(spec);
    const VecX theta = model.init_params() + 0.3 * gauss(rng, model.param_count());
    const VecX x = gauss(rng, 3).cwiseAbs();
    for (int k = 0; k < 3; ++k) {
      const VecX grad = model.ground_truth_logit_grad(theta, x, k);
      const VecX fd = oracles::finite_diff_grad(
          [&](const VecX& t) { return oracles::logits(spec, t, x)[k]; }, theta,
          1e-5);
      for (Index i = 0; i < grad.size(); ++i) {
        const double rel = std::abs(grad[i] - fd[i]) /
                           std::max(std::abs(fd[i]) + std::abs(grad[i]), 1e-5);
        CHECK(rel <= 1e-5);
      }
    }
  }

  SUBCASE("expected score is zero and score decomposes over logit grads") {
    Rng rng(11);
    const ModelSpec spec = spec_of({3, 4, 3}, 44);
    const Mlp model(spec);
    const VecX theta = model.init_params() + 0.3 * gauss(rng, model.param_count());
    const VecX x = gauss(rng, 3).cwiseAbs();
    const VecX probs = Mlp::softmax(model.forward(theta, x));

    VecX weighted_logit_grad = VecX::Zero(model.param_count());
    for (int k = 0; k < 3; ++k) {
      weighted_logit_grad += probs[k] * model.ground_truth_logit_grad(theta, x, k);
    }
    VecX expected_score = VecX::Zero(model.param_count());
    for (int k = 0; k < 3; ++k) {
      expected_score += probs[k] * (model.ground_truth_logit_grad(theta, x, k) -
                                    weighted_logit_grad);
    }
    CHECK(expected_score.cwiseAbs().maxCoeff() < 1e-14);

    for (int k = 0; k < 3; ++k) {
      const VecX s = model.score_grad(theta, x, k);
      const VecX decomposed =
          model.ground_truth_logit_grad(theta, x, k) - weighted_logit_grad;
      CHECK((s - decomposed).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

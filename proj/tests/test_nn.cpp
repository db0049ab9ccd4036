#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "gradient_suite.hpp"
#include "mapper_gin/nn.hpp"

#include <cmath>

using namespace mapper_gin;
using M = nn::Matrix<double>;

TEST_CASE("dense examples") {
  nn::Rng rng(0);
  M x(1, 2);
  x << 1, 2;
  CHECK(nn::dense<double>(x, M::Identity(2, 2), nn::RowVector<double>::Zero(2)) == x);

  M x2 = M::Identity(2, 2);
  M wt(2, 2);
  wt << 2, 0, 0, 3;
  nn::RowVector<double> b(2);
  b << 1, 1;
  M expected(2, 2);
  expected << 3, 1, 1, 4;
  CHECK(nn::dense<double>(x2, wt, b) == expected);

  auto layer = nn::make_dense<double>(2, 2, rng, "d");
  nn::dense_backward(layer, x2, M(M::Ones(2, 2)));
  CHECK(layer.bias.grad == M::Constant(1, 2, 2.0));
  nn::Dense<double> one{nn::Param<double>("w", M::Identity(2, 2)), nn::Param<double>("b", M::Zero(1, 2))};
  nn::dense_backward(one, x, M(M::Ones(1, 2)));
  CHECK(one.bias.grad == M::Ones(1, 2));
  CHECK_THROWS_AS(nn::dense<double>(M::Ones(1, 3), wt, b), std::invalid_argument);
}

TEST_CASE("glorot init stays inside its limit") {
  nn::Rng rng(1);
  const auto layer = nn::make_dense<double>(30, 50, rng, "d");
  CHECK(layer.weight.value.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 80.0));
  CHECK(layer.bias.value.isZero(0.0));
}

TEST_CASE("batchnorm examples") {
  auto bn = nn::make_batchnorm<double>(1, "bn");
  M x(2, 1);
  x << 1, 3;
  const M y = nn::batchnorm_forward(bn, x, nn::Mode::train);
  CHECK(y(0, 0) == doctest::Approx(-1.0).epsilon(1e-5));
  CHECK(y(1, 0) == doctest::Approx(1.0).epsilon(1e-5));
  // Running stats after one step: momentum 0.1, unbiased variance 2.
  CHECK(bn.running_mean(0) == doctest::Approx(0.2));
  CHECK(bn.running_var(0) == doctest::Approx(0.9 + 0.1 * 2.0));

  auto fresh = nn::make_batchnorm<double>(1, "bn");
  const M e = nn::batchnorm_forward(fresh, x, nn::Mode::eval);
  CHECK(e(1, 0) == doctest::Approx(3.0 / std::sqrt(1.0 + 1e-5)));

  auto collapsed = nn::make_batchnorm<double>(1, "bn");
  collapsed.gamma.value.setZero();
  collapsed.beta.value.setConstant(0.7);
  CHECK(nn::batchnorm_forward(collapsed, x, nn::Mode::train) == M::Constant(2, 1, 0.7));
  CHECK_THROWS_AS(nn::batchnorm_forward(fresh, M(M::Ones(1, 1)), nn::Mode::train), std::invalid_argument);
}

TEST_CASE("graphnorm examples") {
  auto gn = nn::make_graphnorm<double>(1, "gn");
  M x(2, 1);
  x << 1, 3;
  const std::vector<std::uint32_t> one{0, 0};
  const M y = nn::graphnorm_forward(gn, x, one, 1);
  CHECK(std::abs(y(0, 0) + 1.0) < 1e-2);
  CHECK(std::abs(y(1, 0) - 1.0) < 1e-2);

  gn.alpha.value.setZero();
  M two(2, 1);
  two << 2, 2;
  const M z = nn::graphnorm_forward(gn, two, one, 1);
  CHECK(z(0, 0) == doctest::Approx(2.0 / std::sqrt(4.0 + 1e-5)));

  // Two graphs at once equal two separate calls.
  nn::Rng rng(2);
  auto g2 = nn::make_graphnorm<double>(3, "g2");
  g2.alpha.value << 0.5, 1.0, 1.5;
  const M a = gradsuite::random_matrix(4, 3, rng);
  const M b = gradsuite::random_matrix(3, 3, rng);
  M ab(7, 3);
  ab << a, b;
  const std::vector<std::uint32_t> ids{0, 0, 0, 0, 1, 1, 1};
  const M joint = nn::graphnorm_forward(g2, ab, ids, 2);
  const std::vector<std::uint32_t> za(4, 0), zb(3, 0);
  CHECK((joint.topRows(4) - nn::graphnorm_forward(g2, a, za, 1)).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((joint.bottomRows(3) - nn::graphnorm_forward(g2, b, zb, 1)).cwiseAbs().maxCoeff() < 1e-14);

  // A single node graph stays finite.
  const std::vector<std::uint32_t> solo{0};
  CHECK(nn::graphnorm_forward(g2, M(a.topRows(1)), solo, 1).allFinite());
}

TEST_CASE("layernorm examples") {
  auto ln = nn::make_layernorm<double>(2, "ln");
  M x(1, 2);
  x << 1, 3;
  const M y = nn::layernorm_forward(ln, x);
  CHECK(std::abs(y(0, 0) + 1.0) < 1e-4);
  CHECK(std::abs(y(0, 1) - 1.0) < 1e-4);
  ln.beta.value << 0.5, -0.5;
  const M c = nn::layernorm_forward(ln, M(M::Constant(1, 2, 4.0)));
  CHECK(c(0, 0) == doctest::Approx(0.5));
  CHECK(c(0, 1) == doctest::Approx(-0.5));
}

TEST_CASE("norms ignore a constant shift") {
  nn::Rng rng(3);
  const M x = gradsuite::random_matrix(6, 5, rng);
  const auto ln = nn::make_layernorm<double>(5, "ln");
  M shifted = x;
  shifted.colwise() += gradsuite::random_matrix(6, 1, rng).col(0);
  CHECK((nn::layernorm_forward(ln, x) - nn::layernorm_forward(ln, shifted)).cwiseAbs().maxCoeff() < 1e-9);

  const auto gn = nn::make_graphnorm<double>(5, "gn");
  const std::vector<std::uint32_t> ids{0, 0, 0, 1, 1, 1};
  M gshift = x;
  gshift.topRows(3).rowwise() += gradsuite::random_matrix(1, 5, rng).row(0);
  gshift.bottomRows(3).rowwise() += gradsuite::random_matrix(1, 5, rng).row(0);
  CHECK((nn::graphnorm_forward(gn, x, ids, 2) - nn::graphnorm_forward(gn, gshift, ids, 2)).cwiseAbs().maxCoeff() <
        1e-9);
}

TEST_CASE("relu and dropout") {
  nn::Rng rng(4);
  const M x = gradsuite::random_matrix(5, 5, rng);
  const M r = nn::relu<double>(x);
  CHECK(nn::relu<double>(r) == r);
  CHECK(r.minCoeff() >= 0.0);
  CHECK(nn::feature_dropout<double>(x, 0.0, nn::Mode::train, rng) == x);
  CHECK(nn::feature_dropout<double>(x, 0.9, nn::Mode::eval, rng) == x);
  CHECK_THROWS_AS(nn::feature_dropout<double>(x, 1.0, nn::Mode::train, rng), std::invalid_argument);

  const M ones = M::Ones(1000, 100);
  const M dropped = nn::feature_dropout<double>(ones, 0.3, nn::Mode::train, rng);
  CHECK(std::abs(dropped.mean() - 1.0) < 0.02);
  const double zero_frac = static_cast<double>((dropped.array() == 0.0).count()) / 1e5;
  CHECK(std::abs(zero_frac - 0.3) < 0.01);
  CHECK(((dropped.array() == 0.0) || (dropped.array() - 1.0 / 0.7).abs() < 1e-12).all());
}

TEST_CASE("cross entropy") {
  const M uniform = M::Zero(3, 40);
  const std::vector<int> labels{0, 5, 39};
  CHECK(nn::cross_entropy_logits<double>(uniform, labels).loss == doctest::Approx(std::log(40.0)));

  M sharp = M::Zero(1, 4);
  sharp(0, 2) = 20.0;
  const std::vector<int> two{2};
  CHECK(nn::cross_entropy_logits<double>(sharp, two).loss < 1e-3);

  nn::Rng rng(5);
  const M logits = gradsuite::random_matrix(5, 40, rng, 4.0);
  const std::vector<int> ys{0, 7, 13, 39, 21};
  const auto res = nn::cross_entropy_logits<double>(logits, ys);
  double expected = 0.0;
  for (int i = 0; i < 5; ++i) {
    double z = 0.0;
    for (int k = 0; k < 40; ++k) z += std::exp(logits(i, k));
    expected += std::log(z) - logits(i, ys[static_cast<std::size_t>(i)]);
    for (int k = 0; k < 40; ++k) {
      const double p = std::exp(logits(i, k)) / z - (k == ys[static_cast<std::size_t>(i)] ? 1.0 : 0.0);
      CHECK(std::abs(res.grad(i, k) - p / 5.0) < 1e-10);
    }
  }
  CHECK(std::abs(res.loss - expected / 5.0) < 1e-10);
  const std::vector<int> bad{40};
  CHECK_THROWS_AS(nn::cross_entropy_logits<double>(M::Zero(1, 40), bad), std::out_of_range);
}

TEST_CASE("adam") {
  nn::Param<double> theta("t", M::Zero(1, 1));
  theta.grad.setConstant(1.0);
  nn::AdamState<double> state;
  nn::Param<double>* params[] = {&theta};
  nn::adam_step<double>(params, state, 1e-3);
  CHECK(theta.value(0, 0) == doctest::Approx(-1e-3 / (1.0 + 1e-8)).epsilon(1e-12));
  CHECK(state.t == 1);

  theta.value.setConstant(0.25);
  theta.grad.setZero();
  nn::AdamState<double> still;
  nn::adam_step<double>(params, still, 1e-3);
  CHECK(theta.value(0, 0) == 0.25);
  CHECK(still.t == 1);

  theta.value.setConstant(1.0);
  nn::AdamState<double> run;
  run.options.lr = 0.01;
  double prev = 1.0;
  bool monotone = true;
  for (int i = 0; i < 100; ++i) {
    theta.grad = 2.0 * theta.value;
    nn::adam_step<double>(params, run, 0.01);
    monotone = monotone && std::abs(theta.value(0, 0)) < prev;
    prev = std::abs(theta.value(0, 0));
  }
  CHECK(monotone);
  CHECK(prev < 0.5);

  // Weight decay enters through the gradient.
  nn::Param<double> w("w", M::Constant(1, 1, 2.0));
  nn::AdamState<double> wd;
  wd.options.weight_decay = 0.5;
  nn::Param<double>* wp[] = {&w};
  nn::adam_step<double>(wp, wd, 1e-3);
  CHECK(w.value(0, 0) == doctest::Approx(2.0 - 1e-3).epsilon(1e-9));
}

TEST_CASE("steplr") {
  CHECK(nn::steplr(0) == doctest::Approx(1e-3));
  CHECK(nn::steplr(10) == doctest::Approx(9e-4));
  CHECK(nn::steplr(25) == doctest::Approx(8.1e-4));
  CHECK(nn::steplr(9) == doctest::Approx(1e-3));
  CHECK_THROWS(nn::steplr(-1));
}

TEST_CASE("layer gradients match central differences") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    CAPTURE(seed);
    for (const auto& rep : {gradsuite::dense(seed), gradsuite::batchnorm(seed, nn::Mode::train),
                            gradsuite::batchnorm(seed, nn::Mode::eval), gradsuite::graphnorm(seed),
                            gradsuite::layernorm(seed), gradsuite::cross_entropy(seed)}) {
      CHECK(rep.max_rel < 1e-4);
      CHECK(rep.skipped == 0);
      CHECK(rep.checked > 0);
    }
  }
}

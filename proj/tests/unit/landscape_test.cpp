#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "stulab/error.hpp"
#include "stulab/landscape.hpp"
#include "stulab/lds_sim.hpp"
#include "stulab/training.hpp"

using namespace stulab;
using namespace stulab::landscape;
using stulab::ad::Tensor;

namespace {

nn::ParamList vector_params(std::vector<double> theta) {
  const std::size_t n = theta.size();
  return {{"theta", Tensor::from({n}, std::move(theta), true)}};
}

DirectionPair axis_directions(std::size_t n, std::size_t i, std::size_t j) {
  DirectionPair d;
  d.normalization = "none";
  d.delta.blocks = {std::vector<double>(n, 0.0)};
  d.eta.blocks = {std::vector<double>(n, 0.0)};
  d.delta.blocks[0][i] = 1.0;
  d.eta.blocks[0][j] = 1.0;
  return d;
}

double half_sq_norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += 0.5 * v * v;
  return s;
}

}  // namespace

TEST_CASE("random_directions: blockwise norms, zero blocks and orthogonality") {
  nn::ParamList params{{"a", Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}, true)},
                       {"z", Tensor::zeros({4}, true)},
                       {"s", Tensor::from({1}, {-3.0}, true)},
                       {"b", Tensor::from({5}, {0.1, -0.2, 0.3, 0.0, 2.0}, true)}};
  const DirectionPair d = random_directions(params, 42);
  REQUIRE(d.delta.blocks.size() == 4);
  for (std::size_t i = 0; i < params.size(); ++i) {
    double pn = 0.0, dn = 0.0, en = 0.0;
    for (double v : params[i].tensor.data()) pn += v * v;
    for (double v : d.delta.blocks[i]) dn += v * v;
    for (double v : d.eta.blocks[i]) en += v * v;
    CHECK(std::sqrt(dn) == doctest::Approx(std::sqrt(pn)).epsilon(1e-12));
    // a one-entry block has no room for an orthogonal component
    if (params[i].name != "s") CHECK(std::sqrt(en) == doctest::Approx(std::sqrt(pn)).epsilon(1e-12));
  }
  for (double v : d.delta.blocks[1]) CHECK(v == 0.0);
  for (double v : d.eta.blocks[1]) CHECK(v == 0.0);
  CHECK(std::abs(dot(d.delta, d.eta)) / (norm(d.delta) * norm(d.eta)) <= 1e-6);

  const DirectionPair again = random_directions(params, 42);
  CHECK(again.delta.blocks == d.delta.blocks);
  CHECK(again.eta.blocks == d.eta.blocks);
  CHECK(random_directions(params, 43).delta.blocks != d.delta.blocks);
}

TEST_CASE("loss_slice_2d: quadratic closed form, center cell and exact restore") {
  nn::ParamList params = vector_params({0.3, -1.2, 0.5, 2.0});
  Tensor theta = params[0].tensor;
  const std::vector<double> theta0 = theta.values();
  // orthonormal directions
  DirectionPair d;
  d.delta.blocks = {{0.5, 0.5, 0.5, 0.5}};
  d.eta.blocks = {{0.5, -0.5, 0.5, -0.5}};
  const auto xs = linspace(-1.0, 1.0, 5), ys = linspace(-2.0, 2.0, 7);
  const LossFn loss = [&] { return half_sq_norm(theta); };
  const double l0 = loss();
  const LandscapeGrid g = loss_slice_2d(params, loss, d, xs, ys);
  CHECK(theta.values() == theta0);
  CHECK(g.at(2, 3) == l0);
  double td = 0.0, te = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    td += theta0[i] * d.delta.blocks[0][i];
    te += theta0[i] * d.eta.blocks[0][i];
  }
  for (std::size_t a = 0; a < xs.size(); ++a) {
    for (std::size_t b = 0; b < ys.size(); ++b) {
      const double x = xs[a], y = ys[b];
      CHECK(std::abs(g.at(a, b) - (l0 + x * x / 2 + y * y / 2 + x * td + y * te)) < 1e-12);
      CHECK_FALSE(g.is_flagged(a, b));
    }
  }
}

TEST_CASE("loss_slice_2d: symmetry for even losses about zero") {
  nn::ParamList params = vector_params({0.0, 0.0, 0.0});
  Tensor theta = params[0].tensor;
  const DirectionPair d = axis_directions(3, 0, 2);
  const auto xs = linspace(-1.5, 1.5, 7);
  const LossFn loss = [&] {
    const auto& v = theta.values();
    return std::cosh(v[0] + 0.3 * v[2]) + v[2] * v[2] * v[2] * v[2];
  };
  const LandscapeGrid g = loss_slice_2d(params, loss, d, xs, xs);
  for (std::size_t a = 0; a < 7; ++a)
    for (std::size_t b = 0; b < 7; ++b) CHECK(g.at(a, b) == doctest::Approx(g.at(6 - a, 6 - b)).epsilon(1e-14));
}

TEST_CASE("loss_slice_2d: non-finite cells are flagged and a throwing loss still restores") {
  nn::ParamList params = vector_params({1.0, 1.0});
  Tensor theta = params[0].tensor;
  const DirectionPair d = axis_directions(2, 0, 1);
  const LossFn loss = [&] { return theta.values()[0] > 1.5 ? std::numeric_limits<double>::infinity() : 1.0; };
  const LandscapeGrid g = loss_slice_2d(params, loss, d, {0.0, 1.0}, {0.0});
  CHECK_FALSE(g.is_flagged(0, 0));
  CHECK(g.is_flagged(1, 0));
  CHECK(std::isnan(g.at(1, 0)));

  const LossFn bad = [&]() -> double {
    if (theta.values()[1] > 1.0) throw NumericFailure("probe");
    return 0.0;
  };
  CHECK_THROWS_AS(loss_slice_2d(params, bad, d, {0.0}, {0.0, 0.5}), NumericFailure);
  CHECK(theta.values() == std::vector<double>{1.0, 1.0});
  DirectionPair wrong = d;
  wrong.eta.blocks[0].push_back(0.0);
  CHECK_THROWS_AS(loss_slice_2d(params, loss, wrong, {0.0}, {0.0}), InvalidArgument);
}

TEST_CASE("restricted_hessian_ratio: quadratic oracles") {
  nn::ParamList params = vector_params({0.7, -0.4});
  Tensor theta = params[0].tensor;
  const DirectionPair d = axis_directions(2, 0, 1);
  const auto xs = linspace(-1.0, 1.0, 9);
  const LossFn aniso = [&] {
    const auto& v = theta.values();
    return 2.0 * v[0] * v[0] + 0.5 * v[1] * v[1];
  };
  for (auto stencil : {Stencil::kThreePoint, Stencil::kFivePoint}) {
    const HessianGrid h = restricted_hessian_ratio(params, aniso, d, xs, xs, 1e-3, stencil);
    for (std::size_t i = 0; i < h.cells.size(); ++i) {
      CHECK(std::abs(h.ratio.values[i] - 0.25) <= 1e-8);
      CHECK(h.cells[i].h11 == doctest::Approx(4.0).epsilon(1e-6));
      CHECK(h.cells[i].h22 == doctest::Approx(1.0).epsilon(1e-6));
      CHECK(std::abs(h.cells[i].h12) < 1e-6);
    }
  }
  CHECK(theta.values() == std::vector<double>{0.7, -0.4});

  const LossFn iso = [&] { return half_sq_norm(theta) * 3.0; };
  const HessianGrid hi = restricted_hessian_ratio(params, iso, d, xs, xs);
  for (double r : hi.ratio.values) CHECK(r == doctest::Approx(1.0).epsilon(1e-8));

  const LossFn flat = [] { return 1.0; };
  const HessianGrid hf = restricted_hessian_ratio(params, flat, d, {0.0}, {0.0});
  CHECK(hf.cells[0].degenerate);
  CHECK(hf.ratio.is_flagged(0, 0));

  CHECK_THROWS_AS(restricted_hessian_ratio(params, iso, d, xs, xs, 0.0), InvalidArgument);
  CHECK_THROWS_AS(restricted_hessian_ratio(params, iso, d, xs, xs, -1.0), InvalidArgument);
}

TEST_CASE("summarize_hessian: ordering by absolute value keeps the ratio in [0, 1]") {
  const Hessian2 h = summarize_hessian(1.0, 0.0, -3.0);
  CHECK(h.eig_lo == -3.0);
  CHECK(h.eig_hi == 1.0);
  CHECK(h.ratio == doctest::Approx(1.0 / 3.0));
  const Hessian2 r = summarize_hessian(2.0, 1.0, 2.0);
  CHECK(r.eig_lo == doctest::Approx(1.0));
  CHECK(r.eig_hi == doctest::Approx(3.0));
  CHECK(r.ratio == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("restricted Hessian of a trained STU under MSE is positive semidefinite") {
  const lds::LdsSystem sys = lds::random_lds(2, 2, 16, 0.9, 3);
  const SequenceDataset data = lds::lds_dataset(sys, 32, 16, 4, false);
  nn::ModelConfig cfg;
  cfg.single_layer = true;
  cfg.input_dim = 2;
  cfg.output_dim = 2;
  cfg.width = 8;
  cfg.n_filters = 6;
  cfg.filter_length = 32;
  nn::Model model(cfg, nn::bank_for(cfg), 5);
  train::TrainConfig tc;
  tc.steps = 10;
  tc.batch = 4;
  tc.optimizer.lr = 0.01;
  train::train(model, data, nullptr, tc);

  nn::ParamList m_only = select_params(model.parameters(), {"blocks.0.stu.m"});
  REQUIRE(m_only.size() == 1);
  const DirectionPair d = random_directions(m_only, 6);
  const LossFn loss = [&] { return train::eval_next_step(model, data).loss; };
  const auto xs = linspace(-1.0, 1.0, 5);
  const HessianGrid h = restricted_hessian_ratio(m_only, loss, d, xs, xs);
  for (const auto& c : h.cells) {
    CHECK_FALSE(c.degenerate);
    CHECK(c.eig_lo >= -1e-6 * std::abs(c.eig_hi));
  }
  CHECK_THROWS_AS(select_params(model.parameters(), {"nope"}), InvalidArgument);
}

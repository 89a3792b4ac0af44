#include <cmath>
#include <random>

#include "doctest.h"
#include "stulab/error.hpp"
#include "stulab/lds_sim.hpp"
#include "stulab/spectral_filters.hpp"

using namespace stulab;
using namespace stulab::lds;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Matrix m(r, c);
  for (double& x : m.values()) x = normal(rng);
  return m;
}

}  // namespace

TEST_CASE("random_lds: argument checks") {
  CHECK_THROWS_AS(random_lds(5, 5, 16, 0.0, 1), InvalidArgument);
  CHECK_THROWS_AS(random_lds(5, 5, 16, 1.0, 1), InvalidArgument);
  CHECK_THROWS_AS(random_lds(5, 5, 16, -0.5, 1), InvalidArgument);
  CHECK_THROWS_AS(random_lds(0, 5, 16, 0.5, 1), InvalidArgument);
  CHECK_THROWS_AS(random_lds(5, 5, 0, 0.5, 1), InvalidArgument);
}

TEST_CASE("random_lds: default system is symmetric with the requested radius") {
  const LdsSystem sys = random_lds(5, 5, 256, 0.99, 7);
  CHECK(sys.d_in() == 5);
  CHECK(sys.d_out() == 5);
  CHECK(sys.d_hidden() == 256);
  double asym = 0.0;
  for (std::size_t i = 0; i < 256; ++i)
    for (std::size_t j = 0; j < 256; ++j) asym = std::max(asym, std::abs(sys.A(i, j) - sys.A(j, i)));
  CHECK(asym == 0.0);
  // power iteration oracle, independent of the eigensolver used for scaling
  const auto power = power_spectral_radius(sys.A, 200000, 1e-15);
  CHECK(std::abs(power.radius - 0.99) < 1e-9);
  // +A and -A: the largest positive and negative eigenvalues bound the radius
  const auto eig = spectral::sym_eigh(sys.A);
  CHECK(std::max(eig.eigenvalues.front(), -eig.eigenvalues.back()) == doctest::Approx(0.99).epsilon(1e-12));
}

TEST_CASE("power iteration agrees with the eigensolver on small systems") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const std::size_t n = 8 + 6 * seed;
    const LdsSystem sys = random_lds(2, 3, n, 0.9, seed);
    const auto power = power_spectral_radius(sys.A, 100000, 1e-15);
    INFO("n=" << n);
    CHECK(std::abs(power.radius - spectral_radius(sys.A)) < 1e-8);
  }
}

TEST_CASE("power iteration handles a radius shared by +rho and -rho") {
  Matrix a(3, 3);
  a(0, 0) = 0.5;
  a(1, 1) = -0.5;
  a(2, 2) = 0.1;
  const auto r = power_spectral_radius(a);
  CHECK(r.converged);
  CHECK(r.radius == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("random_lds: deterministic per seed") {
  const auto a = random_lds(3, 2, 20, 0.9, 42);
  const auto b = random_lds(3, 2, 20, 0.9, 42);
  const auto c = random_lds(3, 2, 20, 0.9, 43);
  CHECK(a.A == b.A);
  CHECK(a.B == b.B);
  CHECK(a.C == b.C);
  CHECK(a.D == b.D);
  CHECK_FALSE(a.A == c.A);
}

TEST_CASE("rollout: zero dynamics collapse to a one-step map") {
  LdsSystem sys = random_lds(3, 2, 6, 0.5, 1);
  sys.A = Matrix(6, 6);
  const Matrix u = random_matrix(10, 3, 2);
  const Trajectory tr = rollout(sys, u);
  const Matrix cb = matmul(sys.C, sys.B);
  for (std::size_t t = 0; t < 10; ++t)
    for (std::size_t o = 0; o < 2; ++o) {
      double expect = 0.0;
      for (std::size_t i = 0; i < 3; ++i) expect += (cb(o, i) + sys.D(o, i)) * u(t, i);
      CHECK(tr.y(t, o) == doctest::Approx(expect).epsilon(1e-13));
    }
}

TEST_CASE("rollout: zero input from rest stays at rest") {
  const LdsSystem sys = random_lds(3, 2, 12, 0.9, 3);
  const Trajectory tr = rollout(sys, Matrix(20, 3));
  for (double v : tr.y.values()) CHECK(v == 0.0);
  for (double v : tr.x_final) CHECK(v == 0.0);
}

TEST_CASE("rollout: scalar system matches the geometric sum") {
  LdsSystem sys;
  const double a = 0.93, b = -1.7, c = 0.6, d = 0.25;
  sys.A = Matrix(1, 1, a);
  sys.B = Matrix(1, 1, b);
  sys.C = Matrix(1, 1, c);
  sys.D = Matrix(1, 1, d);
  const Matrix u = random_matrix(50, 1, 5);
  const Trajectory tr = rollout(sys, u);
  for (std::size_t t = 0; t < 50; ++t) {
    double s = 0.0;
    for (std::size_t k = 0; k <= t; ++k) s += std::pow(a, double(t - k)) * b * u(k, 0);
    CHECK(tr.y(t, 0) == doctest::Approx(d * u(t, 0) + c * s).epsilon(1e-12));
  }
}

TEST_CASE("rollout: linear in the input from rest") {
  const LdsSystem sys = random_lds(4, 3, 32, 0.99, 9);
  const Matrix u = random_matrix(60, 4, 10), w = random_matrix(60, 4, 11);
  Matrix mix(60, 4);
  for (std::size_t i = 0; i < mix.values().size(); ++i) mix.values()[i] = 2.5 * u.values()[i] - 0.75 * w.values()[i];
  const auto yu = rollout(sys, u).y, yw = rollout(sys, w).y, ym = rollout(sys, mix).y;
  for (std::size_t i = 0; i < ym.values().size(); ++i)
    CHECK(std::abs(ym.values()[i] - (2.5 * yu.values()[i] - 0.75 * yw.values()[i])) < 1e-9);
}

TEST_CASE("rollout: rejects bad shapes and values") {
  const LdsSystem sys = random_lds(2, 2, 4, 0.5, 1);
  CHECK_THROWS_AS(rollout(sys, Matrix(5, 3)), InvalidArgument);
  Matrix u(3, 2);
  u(1, 1) = std::nan("");
  CHECK_THROWS_AS(rollout(sys, u), InvalidArgument);
  std::vector<double> x0(3, 0.0);
  CHECK_THROWS_AS(rollout(sys, Matrix(3, 2), x0), InvalidArgument);
}

TEST_CASE("lds_dataset: targets are the rollout outputs and feedback is the previous output") {
  const LdsSystem sys = random_lds(5, 5, 24, 0.99, 4);
  const auto plain = lds_dataset(sys, 100, 3, 11, false);
  const auto fed = lds_dataset(sys, 100, 3, 11, true);
  CHECK(plain.input_dim == 5);
  CHECK(fed.input_dim == 10);
  CHECK_FALSE(plain.feedback_offset.has_value());
  CHECK(fed.feedback_offset == std::optional<std::size_t>(5));
  CHECK(plain.targets == fed.targets);
  for (std::size_t s = 0; s < 3; ++s) {
    Matrix u(100, 5);
    for (std::size_t t = 0; t < 100; ++t)
      for (std::size_t c = 0; c < 5; ++c) u(t, c) = plain.input_row(s, t)[c];
    const Trajectory tr = rollout(sys, u);
    for (std::size_t t = 0; t < 100; ++t)
      for (std::size_t c = 0; c < 5; ++c) {
        CHECK(plain.target_row(s, t)[c] == tr.y(t, c));
        CHECK(fed.input_row(s, t)[c] == u(t, c));
        CHECK(fed.input_row(s, t)[5 + c] == (t == 0 ? 0.0 : tr.y(t - 1, c)));
      }
  }
}

TEST_CASE("lds_dataset: deterministic and seed sensitive") {
  const LdsSystem sys = random_lds(2, 2, 8, 0.9, 4);
  const auto a = lds_dataset(sys, 16, 4, 3, false);
  const auto b = lds_dataset(sys, 16, 4, 3, false);
  const auto c = lds_dataset(sys, 16, 4, 4, false);
  CHECK(a.inputs == b.inputs);
  CHECK(a.targets == b.targets);
  CHECK(a.inputs != c.inputs);
  CHECK_THROWS_AS(lds_dataset(sys, 1, 4, 3, false), InvalidArgument);
}

#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "stulab/error.hpp"
#include "stulab/spectral_filters.hpp"

using namespace stulab;
using namespace stulab::spectral;

namespace {

// Largest eigenvalue by power iteration; independent of the Jacobi solver.
double power_iteration(const Matrix& m, int iters = 20000) {
  std::vector<double> v(m.rows());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 1.0 + 0.01 * static_cast<double>(i % 7);
  double lambda = 0.0;
  for (int it = 0; it < iters; ++it) {
    auto w = matvec(m, v);
    double nrm = 0.0;
    for (double x : w) nrm += x * x;
    nrm = std::sqrt(nrm);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = w[i] / nrm;
    auto mv = matvec(m, v);
    double next = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) next += v[i] * mv[i];
    if (std::abs(next - lambda) < 1e-16 && it > 50) return next;
    lambda = next;
  }
  return lambda;
}

bool cholesky_succeeds(const Matrix& m, double shift) {
  const std::size_t n = m.rows();
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = m(j, j) + shift;
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0)) return false;
    l(j, j) = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = m(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / l(j, j);
    }
  }
  return true;
}

double dot_rows(const Matrix& m, std::size_t a, std::size_t b) {
  double s = 0.0;
  for (std::size_t i = 0; i < m.cols(); ++i) s += m(a, i) * m(b, i);
  return s;
}

}  // namespace

TEST_CASE("hankel matrix entries follow the closed form") {
  CHECK(hankel_matrix(1).entries(0, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  const auto z2 = hankel_matrix(2).entries;
  CHECK(z2(0, 0) == 1.0 / 3.0);
  CHECK(z2(0, 1) == 2.0 / 24.0);
  CHECK(z2(1, 0) == 2.0 / 24.0);
  CHECK(z2(1, 1) == 2.0 / 60.0);

  const auto z = hankel_matrix(37).entries;
  for (std::size_t i = 0; i < 37; ++i) {
    for (std::size_t j = 0; j < 37; ++j) {
      const double s = static_cast<double>(i + j + 2);
      CHECK(z(i, j) == 2.0 / (s * s * s - s));
      CHECK(z(i, j) == z(j, i));
    }
  }
  CHECK_THROWS_AS(hankel_matrix(0), InvalidArgument);
}

TEST_CASE("hankel matrix of length 100 is positive semidefinite") {
  const auto z = hankel_matrix(100).entries;
  const auto eig = sym_eigh(z);
  const double min_eig = eig.eigenvalues.back();
  CHECK(min_eig >= -1e-10);

  // Oracle: power iteration on Z gives the top eigenvalue; on cI - Z it gives
  // c - lambda_min.
  const double top = power_iteration(z);
  CHECK(std::abs(top - eig.eigenvalues.front()) < 1e-12);
  const double c = 1.0;
  Matrix shifted = Matrix::identity(100);
  for (std::size_t i = 0; i < 100; ++i)
    for (std::size_t j = 0; j < 100; ++j) shifted(i, j) = (i == j ? c : 0.0) - z(i, j);
  // The Rayleigh quotient of cI - Z bounds c - lambda_min from below, so this
  // is an upper bound on lambda_min that must sit above the Jacobi value.
  const double min_by_power = c - power_iteration(shifted);
  CHECK(min_by_power >= -1e-10);
  CHECK(min_eig <= min_by_power + 1e-12);
  // Lower bound: Cholesky of Z + 1e-10 I succeeds iff lambda_min > -1e-10.
  CHECK(cholesky_succeeds(z, 1e-10));
}

TEST_CASE("sym_eigh trivial cases") {
  SUBCASE("identity") {
    const auto e = sym_eigh(Matrix::identity(2));
    CHECK(e.eigenvalues[0] == 1.0);
    CHECK(e.eigenvalues[1] == 1.0);
    CHECK(std::abs(dot_rows(e.eigenvectors.transposed(), 0, 1)) < 1e-15);
    // tie rule: descending lexicographic order of sign-fixed vectors
    CHECK(e.eigenvectors(0, 0) == 1.0);
    CHECK(e.eigenvectors(1, 1) == 1.0);
  }
  SUBCASE("diagonal") {
    Matrix m(2, 2);
    m(0, 0) = 1.0;
    m(1, 1) = 3.0;
    const auto e = sym_eigh(m);
    CHECK(e.eigenvalues[0] == 3.0);
    CHECK(e.eigenvalues[1] == 1.0);
    CHECK(std::abs(e.eigenvectors(1, 0)) == 1.0);
    CHECK(std::abs(e.eigenvectors(0, 1)) == 1.0);
  }
  SUBCASE("hankel L=2 against the 2x2 closed form") {
    const double tr = 11.0 / 30.0;
    const double det = 1.0 / 240.0;
    const double disc = std::sqrt(tr * tr - 4.0 * det);
    const auto e = sym_eigh(hankel_matrix(2).entries);
    CHECK(std::abs(e.eigenvalues[0] - (tr + disc) / 2.0) < 1e-15);
    CHECK(std::abs(e.eigenvalues[1] - (tr - disc) / 2.0) < 1e-15);
    CHECK(e.eigenvalues[0] == doctest::Approx(0.354927).epsilon(1e-5));
    CHECK(e.eigenvalues[1] == doctest::Approx(0.011740).epsilon(1e-4));
  }
}

TEST_CASE("sym_eigh residuals, orthonormality and completeness") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> normal;
  for (std::size_t n : {3, 8, 21, 32}) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i; j < n; ++j) m(i, j) = m(j, i) = normal(rng);
    const auto e = sym_eigh(m);
    const double nrm = m.frobenius_norm();
    for (std::size_t k = 0; k + 1 < n; ++k) CHECK(e.eigenvalues[k] >= e.eigenvalues[k + 1]);
    const auto vt = e.eigenvectors.transposed();
    for (std::size_t k = 0; k < n; ++k) {
      auto mv = matvec(m, vt.row(k));
      for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(mv[i] - e.eigenvalues[k] * vt(k, i)) < 1e-9 * nrm);
      for (std::size_t j = 0; j < n; ++j) CHECK(std::abs(dot_rows(vt, k, j) - (k == j ? 1.0 : 0.0)) < 1e-9);
    }
  }
  for (std::size_t L : {5, 16, 32}) {
    const auto z = hankel_matrix(L).entries;
    const auto e = sym_eigh(z);
    for (std::size_t i = 0; i < L; ++i) {
      for (std::size_t j = 0; j < L; ++j) {
        double r = 0.0;
        for (std::size_t k = 0; k < L; ++k) r += e.eigenvalues[k] * e.eigenvectors(i, k) * e.eigenvectors(j, k);
        CHECK(std::abs(r - z(i, j)) < 1e-8);
      }
    }
  }
}

TEST_CASE("sym_eigh rejects bad input") {
  CHECK_THROWS_AS(sym_eigh(Matrix(2, 3)), InvalidArgument);
  Matrix asym(2, 2);
  asym(0, 1) = 1.0;
  CHECK_THROWS_AS(sym_eigh(asym), InvalidArgument);
  Matrix nan_matrix(2, 2);
  nan_matrix(0, 1) = nan_matrix(1, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(sym_eigh(nan_matrix), NumericFailure);
}

TEST_CASE("filter bank scaling and orthogonality") {
  SUBCASE("L=2, K=1") {
    const double tr = 11.0 / 30.0;
    const double disc = std::sqrt(tr * tr - 4.0 / 240.0);
    const auto bank = compute_filters(2, 1);
    const double norm = std::sqrt(dot_rows(bank.filters, 0, 0));
    CHECK(std::abs(norm - std::pow((tr + disc) / 2.0, 0.25)) < 1e-14);
  }
  for (auto [L, K] : {std::pair<std::size_t, std::size_t>{8, 8}, {20, 5}, {64, 16}, {100, 16}, {128, 24}}) {
    const auto bank = compute_filters(L, K);
    REQUIRE(bank.filters.rows() == K);
    REQUIRE(bank.filters.cols() == L);
    for (std::size_t k = 0; k < K; ++k) {
      CHECK(bank.eigenvalues[k] > 0.0);
      if (k + 1 < K) CHECK(bank.eigenvalues[k] > bank.eigenvalues[k + 1]);
      const double n2 = dot_rows(bank.filters, k, k);
      CHECK(std::abs(n2 * n2 - bank.eigenvalues[k]) <= 1e-9 * bank.eigenvalues[k]);
      for (std::size_t j = k + 1; j < K; ++j) {
        const double cosine = dot_rows(bank.filters, k, j) / std::sqrt(n2 * dot_rows(bank.filters, j, j));
        CHECK(std::abs(cosine) < 1e-8);
      }
    }
  }
  CHECK(compute_filters(100, 16).count == 16);
  CHECK_THROWS_AS(compute_filters(4, 5), InvalidArgument);
  CHECK_THROWS_AS(compute_filters(4, 0), InvalidArgument);
}

TEST_CASE("filter banks are deterministic and sign-fixed") {
  const auto a = compute_filters(100, 16, true);
  const auto b = compute_filters(100, 16, true);
  CHECK(a.filters == b.filters);
  CHECK(a.eigenvalues == b.eigenvalues);
  CHECK(a.learnable);
  for (std::size_t k = 0; k < 16; ++k) CHECK(a.filters(k, 0) > 0.0);

  const auto alt = alternating_filters(a);
  for (std::size_t s = 0; s < 100; ++s) CHECK(alt(3, s) == (s % 2 ? -a.filters(3, s) : a.filters(3, s)));
}

TEST_CASE("filter bank refuses eigenvalues below f64 resolution") {
  const auto eig = spectral::sym_eigh(spectral::hankel_matrix(100).entries);
  const bool tail_positive = eig.eigenvalues.back() > 0.0;
  if (tail_positive) {
    CHECK_NOTHROW(spectral::compute_filters(100, 100));
  } else {
    CHECK_THROWS_AS(spectral::compute_filters(100, 100), NumericFailure);
    CHECK_NOTHROW(spectral::compute_filters(100, 16));
  }
}

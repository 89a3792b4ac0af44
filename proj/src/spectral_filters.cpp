#include "stulab/spectral_filters.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "stulab/error.hpp"

namespace stulab::spectral {

HankelMatrix hankel_matrix(std::size_t length) {
  if (length == 0) throw InvalidArgument("hankel_matrix: length must be >= 1");
  HankelMatrix z{length, Matrix(length, length)};
  for (std::size_t i = 1; i <= length; ++i) {
    for (std::size_t j = i; j <= length; ++j) {
      const double s = static_cast<double>(i + j);
      const double v = 2.0 / (s * s * s - s);
      z.entries(i - 1, j - 1) = v;
      z.entries(j - 1, i - 1) = v;
    }
  }
  return z;
}

namespace {

double off_diagonal_norm(const Matrix& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      if (i != j) s += a(i, j) * a(i, j);
  return std::sqrt(s);
}

void fix_sign(std::vector<double>& v) {
  double scale = 0.0;
  for (double x : v) scale = std::max(scale, std::abs(x));
  for (double x : v) {
    if (std::abs(x) > 1e-12 * scale) {
      if (x < 0) {
        for (double& y : v) y = -y;
      }
      return;
    }
  }
}

}  // namespace

EigenDecomposition sym_eigh(const Matrix& m) {
  const std::size_t n = m.rows();
  if (m.cols() != n) throw InvalidArgument("sym_eigh: matrix is not square");
  const double norm = m.frobenius_norm();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (std::abs(m(i, j) - m(j, i)) > 1e-12 * std::max(norm, 1e-300)) {
        std::ostringstream msg;
        msg << "sym_eigh: matrix is not symmetric at (" << i << ", " << j << ")";
        throw InvalidArgument(msg.str());
      }
    }
  }

  Matrix a = m;
  Matrix v = Matrix::identity(n);
  const double tol = 1e-12 * norm;
  constexpr int kMaxSweeps = 100;
  int sweep = 0;
  for (; sweep < kMaxSweeps; ++sweep) {
    if (off_diagonal_norm(a) <= tol) break;  // NaN never converges
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double app = a(p, p);
        const double aqq = a(q, q);
        // Rotation angle that zeroes a(p, q), computed in the stable form.
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  const double residual = off_diagonal_norm(a);
  if (!(residual <= tol)) {
    std::ostringstream msg;
    msg << "sym_eigh: no convergence after " << kMaxSweeps << " sweeps, off-diagonal norm " << residual;
    throw NumericFailure(msg.str());
  }

  std::vector<std::vector<double>> vecs(n, std::vector<double>(n));
  for (std::size_t k = 0; k < n; ++k) {
    double nrm = 0.0;
    for (std::size_t i = 0; i < n; ++i) nrm += v(i, k) * v(i, k);
    nrm = std::sqrt(nrm);
    for (std::size_t i = 0; i < n; ++i) vecs[k][i] = v(i, k) / nrm;
    fix_sign(vecs[k]);
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    if (a(x, x) != a(y, y)) return a(x, x) > a(y, y);
    return std::lexicographical_compare(vecs[y].begin(), vecs[y].end(), vecs[x].begin(), vecs[x].end());
  });

  EigenDecomposition out{std::vector<double>(n), Matrix(n, n)};
  for (std::size_t k = 0; k < n; ++k) {
    out.eigenvalues[k] = a(order[k], order[k]);
    for (std::size_t i = 0; i < n; ++i) out.eigenvectors(i, k) = vecs[order[k]][i];
  }
  return out;
}

FilterBank compute_filters(std::size_t length, std::size_t count, bool learnable) {
  if (count == 0 || count > length) {
    throw InvalidArgument("compute_filters: need 1 <= K <= L, got K=" + std::to_string(count) +
                          ", L=" + std::to_string(length));
  }
  const auto eig = sym_eigh(hankel_matrix(length).entries);
  FilterBank bank{length, count, Matrix(count, length), {}, learnable};
  bank.eigenvalues.assign(eig.eigenvalues.begin(), eig.eigenvalues.begin() + static_cast<std::ptrdiff_t>(count));
  for (std::size_t k = 0; k < count; ++k) {
    // The tail of the Hankel spectrum sinks below f64 resolution around k ~ 25.
    if (!(eig.eigenvalues[k] > 0.0)) {
      throw NumericFailure("compute_filters: eigenvalue " + std::to_string(k) + " is " +
                           std::to_string(eig.eigenvalues[k]) + " (not positive in f64); use fewer filters");
    }
    const double scale = std::pow(eig.eigenvalues[k], 0.25);
    for (std::size_t s = 0; s < length; ++s) bank.filters(k, s) = scale * eig.eigenvectors(s, k);
  }
  return bank;
}

Matrix alternating_filters(const FilterBank& bank) {
  Matrix out = bank.filters;
  for (std::size_t k = 0; k < out.rows(); ++k)
    for (std::size_t s = 1; s < out.cols(); s += 2) out(k, s) = -out(k, s);
  return out;
}

}  // namespace stulab::spectral

#include "stulab/lds_sim.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "stulab/error.hpp"
#include "stulab/rng.hpp"
#include "stulab/spectral_filters.hpp"

namespace stulab::lds {

namespace {

void require_square(const Matrix& a, const char* what) {
  if (a.rows() == 0 || a.rows() != a.cols()) throw InvalidArgument(std::string(what) + ": matrix must be square");
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

double spectral_radius(const Matrix& a) {
  require_square(a, "spectral_radius");
  const auto eig = spectral::sym_eigh(a);
  return std::max(std::abs(eig.eigenvalues.front()), std::abs(eig.eigenvalues.back()));
}

PowerIterationResult power_spectral_radius(const Matrix& a, std::size_t max_iterations, double tol, std::uint64_t seed) {
  require_square(a, "power_spectral_radius");
  const std::size_t n = a.rows();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<double> v(n);
  for (double& x : v) x = normal(rng);
  auto normalize = [](std::vector<double>& x) {
    const double norm = std::sqrt(dot(x, x));
    if (norm == 0.0) return false;
    for (double& e : x) e /= norm;
    return true;
  };
  PowerIterationResult result;
  if (!normalize(v)) return result;
  double previous = 0.0;
  for (std::size_t it = 1; it <= max_iterations; ++it) {
    std::vector<double> w = matvec(a, v);
    // v^T A^2 v = |A v|^2 for symmetric A
    const double quotient = dot(w, w);
    std::vector<double> next = matvec(a, w);
    result.iterations = it;
    result.radius = std::sqrt(quotient);
    if (quotient == 0.0) {
      result.converged = true;
      return result;
    }
    if (it > 1 && std::abs(quotient - previous) <= tol * quotient) {
      result.converged = true;
      return result;
    }
    previous = quotient;
    if (!normalize(next)) {
      result.converged = true;
      return result;
    }
    v = std::move(next);
  }
  return result;
}

LdsSystem random_lds(std::size_t d_in, std::size_t d_out, std::size_t d_hidden, double rho, std::uint64_t seed) {
  if (!(rho > 0.0 && rho < 1.0)) throw InvalidArgument("random_lds: rho must lie in (0, 1), got " + std::to_string(rho));
  if (d_in == 0 || d_out == 0 || d_hidden == 0) throw InvalidArgument("random_lds: dimensions must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  auto fill = [&](Matrix& m) {
    for (double& x : m.values()) x = normal(rng);
  };
  Matrix r(d_hidden, d_hidden);
  fill(r);
  LdsSystem sys;
  sys.B = Matrix(d_hidden, d_in);
  sys.C = Matrix(d_out, d_hidden);
  sys.D = Matrix(d_out, d_in);
  fill(sys.B);
  fill(sys.C);
  fill(sys.D);
  sys.A = Matrix(d_hidden, d_hidden);
  for (std::size_t i = 0; i < d_hidden; ++i)
    for (std::size_t j = 0; j <= i; ++j) sys.A(i, j) = sys.A(j, i) = 0.5 * (r(i, j) + r(j, i));
  const double current = spectral_radius(sys.A);
  if (!(current > 0.0)) throw NumericFailure("random_lds: symmetric draw has zero spectral radius");
  const double scale = rho / current;
  for (double& x : sys.A.values()) x *= scale;
  sys.rho = rho;
  sys.seed = seed;
  return sys;
}

Trajectory rollout(const LdsSystem& sys, const Matrix& u, std::span<const double> x0) {
  const std::size_t n = sys.d_hidden(), din = sys.d_in(), dout = sys.d_out();
  if (u.cols() != din) {
    throw InvalidArgument("rollout: inputs have " + std::to_string(u.cols()) + " channels, system expects " +
                          std::to_string(din));
  }
  if (!x0.empty() && x0.size() != n) throw InvalidArgument("rollout: x0 has the wrong dimension");
  for (double v : u.values())
    if (!std::isfinite(v)) throw InvalidArgument("rollout: non-finite input");
  Trajectory traj;
  traj.u = u;
  traj.y = Matrix(u.rows(), dout);
  std::vector<double> x(n, 0.0), next(n);
  if (!x0.empty()) std::copy(x0.begin(), x0.end(), x.begin());
  for (std::size_t t = 0; t < u.rows(); ++t) {
    const auto ut = u.row(t);
    for (std::size_t i = 0; i < n; ++i) next[i] = dot(sys.A.row(i), x) + dot(sys.B.row(i), ut);
    x.swap(next);
    for (std::size_t o = 0; o < dout; ++o) traj.y(t, o) = dot(sys.C.row(o), x) + dot(sys.D.row(o), ut);
  }
  traj.x_final = std::move(x);
  return traj;
}

SequenceDataset lds_dataset(const LdsSystem& sys, std::size_t T, std::size_t n_sequences, std::uint64_t seed,
                            bool include_outputs) {
  if (T < 2) throw InvalidArgument("lds_dataset: context length must be at least 2");
  const std::size_t din = sys.d_in(), dout = sys.d_out();
  SequenceDataset data;
  data.count = n_sequences;
  data.length = T;
  data.input_dim = include_outputs ? din + dout : din;
  data.target_dim = dout;
  data.inputs.assign(n_sequences * T * data.input_dim, 0.0);
  data.targets.assign(n_sequences * T * dout, 0.0);
  if (include_outputs) data.feedback_offset = din;
  for (std::size_t s = 0; s < n_sequences; ++s) {
    std::mt19937_64 rng(derive_seed(seed, s));
    std::normal_distribution<double> normal;
    Matrix u(T, din);
    for (double& x : u.values()) x = normal(rng);
    const Trajectory traj = rollout(sys, u);
    for (std::size_t t = 0; t < T; ++t) {
      double* in = data.inputs.data() + (s * T + t) * data.input_dim;
      std::copy_n(u.row(t).data(), din, in);
      if (include_outputs && t > 0) std::copy_n(traj.y.row(t - 1).data(), dout, in + din);
      std::copy_n(traj.y.row(t).data(), dout, data.targets.data() + (s * T + t) * dout);
    }
  }
  return data;
}

}  // namespace stulab::lds

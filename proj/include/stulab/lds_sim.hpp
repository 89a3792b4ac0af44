#pragma once

// Random linear dynamical systems
//   x_t = A x_{t-1} + B u_t,   y_t = C x_t + D u_t
// with symmetric A scaled to a target spectral radius, plus trajectory and
// dataset generation.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "stulab/dataset.hpp"
#include "stulab/matrix.hpp"

namespace stulab::lds {

struct LdsSystem {
  Matrix A;  // [d_hidden, d_hidden], symmetric
  Matrix B;  // [d_hidden, d_in]
  Matrix C;  // [d_out, d_hidden]
  Matrix D;  // [d_out, d_in]
  double rho = 0.0;
  std::uint64_t seed = 0;

  std::size_t d_in() const { return B.cols(); }
  std::size_t d_out() const { return C.rows(); }
  std::size_t d_hidden() const { return A.rows(); }
};

/// Spectral radius of a symmetric matrix from its full eigendecomposition.
double spectral_radius(const Matrix& a);

struct PowerIterationResult {
  double radius = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

/// Power iteration on A^2 for a symmetric A: the Rayleigh quotient converges
/// to rho(A)^2 even when +rho and -rho are both eigenvalues. Stops once the
/// quotient changes by less than tol (relative) or after max_iterations.
PowerIterationResult power_spectral_radius(const Matrix& a, std::size_t max_iterations = 1000, double tol = 1e-12,
                                           std::uint64_t seed = 1);

/// R, B, C, D i.i.d. standard normal; A = (R + R^T)/2 rescaled to radius rho.
/// Throws InvalidArgument unless 0 < rho < 1 and every dimension is positive.
LdsSystem random_lds(std::size_t d_in, std::size_t d_out, std::size_t d_hidden, double rho, std::uint64_t seed);

struct Trajectory {
  Matrix u;                   // [T, d_in]
  Matrix y;                   // [T, d_out]
  std::vector<double> x_final;
};

/// Exact recurrence from x0 (zero when empty). Throws InvalidArgument on
/// dimension mismatch or non-finite input.
Trajectory rollout(const LdsSystem& sys, const Matrix& u, std::span<const double> x0 = {});

/// `n_sequences` trajectories of length T from x0 = 0 with i.i.d. standard
/// normal inputs (sequence i draws from derive_seed(seed, i)). The target at
/// step t is y_t, the output of the step that consumes u_t. Inputs are u_t, or
/// [u_t ; y_{t-1}] with y_{-1} = 0 when include_outputs is set (recorded as
/// the dataset's feedback channels).
SequenceDataset lds_dataset(const LdsSystem& sys, std::size_t T, std::size_t n_sequences, std::uint64_t seed,
                            bool include_outputs);

}  // namespace stulab::lds

#pragma once

#include <cstddef>
#include <vector>

#include "stulab/matrix.hpp"

namespace stulab::spectral {

/// L x L matrix with entries 2 / ((i+j)^3 - (i+j)), i and j 1-based. It is the
/// closed form of the integral of mu_a mu_a^T over a in [0, 1], where
/// mu_a = (1, a, a^2, ...). Symmetric and positive semidefinite.
struct HankelMatrix {
  std::size_t length = 0;
  Matrix entries;
};

/// Throws InvalidArgument when length == 0.
HankelMatrix hankel_matrix(std::size_t length);

struct EigenDecomposition {
  std::vector<double> eigenvalues;  // descending
  Matrix eigenvectors;              // column k pairs with eigenvalues[k]
};

/// Symmetric eigensolver based on cyclic Jacobi rotations.
///
/// Eigenvalues come back sorted descending. Each eigenvector is normalized and
/// sign-fixed so that its first nonzero component is positive; exactly tied
/// eigenvalues are ordered by descending lexicographic order of their
/// sign-fixed vectors. Throws InvalidArgument for non-square or asymmetric
/// input (relative tolerance 1e-12) and NumericFailure if 100 sweeps do not
/// bring the off-diagonal norm below 1e-12 * ||M||_F.
EigenDecomposition sym_eigh(const Matrix& m);

/// K spectral filters of length L. Row k is the k-th largest eigenvector of the
/// Hankel matrix scaled by eigenvalue^(1/4).
struct FilterBank {
  std::size_t length = 0;
  std::size_t count = 0;
  Matrix filters;                    // count x length
  std::vector<double> eigenvalues;   // count, descending
  bool learnable = false;
};

/// Throws InvalidArgument unless 1 <= count <= length.
FilterBank compute_filters(std::size_t length, std::size_t count, bool learnable = false);

/// Sign-alternated copies of the bank's filters: row k, tap s is
/// (-1)^s * filters(k, s). Convolving with these captures impulse responses of
/// systems with negative eigenvalues, which the plain bank cannot represent.
Matrix alternating_filters(const FilterBank& bank);

}  // namespace stulab::spectral

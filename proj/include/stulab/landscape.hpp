#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "stulab/layers.hpp"

namespace stulab::landscape {

/// A perturbation with one block per parameter tensor, in ParamList order.
struct Direction {
  std::vector<std::vector<double>> blocks;
};

double dot(const Direction& a, const Direction& b);
double norm(const Direction& a);

struct DirectionPair {
  Direction delta;
  Direction eta;
  std::uint64_t seed = 0;
  std::string normalization = "filter";  // "filter" (blockwise) or "none"
};

/// Gaussian directions rescaled so every block has the norm of its parameter
/// block. eta is orthogonalized against delta block by block before its own
/// rescaling, which keeps both the block norms and global orthogonality.
DirectionPair random_directions(const nn::ParamList& params, std::uint64_t seed);

/// Loss at the current parameter values; must not modify them.
using LossFn = std::function<double()>;

/// values are row-major [x_steps.size(), y_steps.size()].
struct LandscapeGrid {
  std::vector<double> x_steps;
  std::vector<double> y_steps;
  std::vector<double> values;
  std::vector<std::uint8_t> flagged;  // 1 where the value is non-finite or degenerate
  std::uint64_t seed = 0;
  std::string normalization;

  double at(std::size_t a, std::size_t b) const { return values[a * y_steps.size() + b]; }
  bool is_flagged(std::size_t a, std::size_t b) const { return flagged[a * y_steps.size() + b] != 0; }
};

/// n evenly spaced values from lo to hi inclusive (n = 1 gives lo).
std::vector<double> linspace(double lo, double hi, std::size_t n);

/// values[a][b] = L(theta + x_a delta + y_b eta). Non-finite losses are stored
/// as NaN and flagged. Parameters are restored bit-exactly afterwards, also
/// when the loss function throws.
LandscapeGrid loss_slice_2d(nn::ParamList& params, const LossFn& loss, const DirectionPair& dirs,
                            const std::vector<double>& x_steps, const std::vector<double>& y_steps);

struct Hessian2 {
  double h11 = 0.0, h12 = 0.0, h22 = 0.0;
  double eig_lo = 0.0, eig_hi = 0.0;  // algebraic order
  double ratio = 0.0;                 // |smaller| / |larger| by absolute value
  bool degenerate = false;            // |larger| < 1e-14
};

/// Eigen-decomposition summary of [[h11, h12], [h12, h22]].
Hessian2 summarize_hessian(double h11, double h12, double h22);

enum class Stencil { kThreePoint, kFivePoint };

struct HessianGrid {
  LandscapeGrid ratio;  // flagged where degenerate or non-finite
  std::vector<Hessian2> cells;
};

/// Central finite-difference Hessian of L restricted to span(delta, eta) at
/// every grid point. fd_step is in units of the direction vectors (which carry
/// the blockwise parameter scale). Throws InvalidArgument when fd_step <= 0.
HessianGrid restricted_hessian_ratio(nn::ParamList& params, const LossFn& loss, const DirectionPair& dirs,
                                     const std::vector<double>& x_steps, const std::vector<double>& y_steps,
                                     double fd_step = 1e-3, Stencil stencil = Stencil::kThreePoint);

/// The parameters whose names start with any of `prefixes` (all when empty),
/// sharing storage with `params`.
nn::ParamList select_params(const nn::ParamList& params, const std::vector<std::string>& prefixes);

}  // namespace stulab::landscape

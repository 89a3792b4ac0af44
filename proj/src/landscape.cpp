#include "stulab/landscape.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "stulab/error.hpp"
#include "stulab/rng.hpp"

namespace stulab::landscape {

namespace {

double block_dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void rescale_to(std::vector<double>& block, double target) {
  const double n = std::sqrt(block_dot(block, block));
  if (target == 0.0 || n == 0.0) {
    std::fill(block.begin(), block.end(), 0.0);
    return;
  }
  const double s = target / n;
  for (double& v : block) v *= s;
}

void check_pair(const nn::ParamList& params, const DirectionPair& dirs) {
  if (dirs.delta.blocks.size() != params.size() || dirs.eta.blocks.size() != params.size()) {
    throw InvalidArgument("landscape: directions have " + std::to_string(dirs.delta.blocks.size()) +
                          " blocks for " + std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (dirs.delta.blocks[i].size() != params[i].tensor.size() || dirs.eta.blocks[i].size() != params[i].tensor.size())
      throw InvalidArgument("landscape: direction block for '" + params[i].name + "' has the wrong size");
  }
}

// Writes theta0 + x delta + y eta into the parameters; restores theta0 on destruction.
class Perturbation {
 public:
  Perturbation(nn::ParamList& params, const DirectionPair& dirs) : params_(params), dirs_(dirs) {
    saved_.reserve(params.size());
    for (auto& p : params) saved_.push_back(p.tensor.values());
  }
  ~Perturbation() {
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i].tensor.values() = saved_[i];
  }
  Perturbation(const Perturbation&) = delete;
  Perturbation& operator=(const Perturbation&) = delete;

  void set(double x, double y) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& v = params_[i].tensor.values();
      const auto& d = dirs_.delta.blocks[i];
      const auto& e = dirs_.eta.blocks[i];
      for (std::size_t j = 0; j < v.size(); ++j) v[j] = saved_[i][j] + x * d[j] + y * e[j];
    }
  }

 private:
  nn::ParamList& params_;
  const DirectionPair& dirs_;
  std::vector<std::vector<double>> saved_;
};

LandscapeGrid empty_grid(const DirectionPair& dirs, const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.empty() || ys.empty()) throw InvalidArgument("landscape: grid axes must be non-empty");
  LandscapeGrid g;
  g.x_steps = xs;
  g.y_steps = ys;
  g.values.assign(xs.size() * ys.size(), 0.0);
  g.flagged.assign(xs.size() * ys.size(), 0);
  g.seed = dirs.seed;
  g.normalization = dirs.normalization;
  return g;
}

}  // namespace

double dot(const Direction& a, const Direction& b) {
  if (a.blocks.size() != b.blocks.size()) throw InvalidArgument("landscape dot: block count mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.blocks.size(); ++i) {
    if (a.blocks[i].size() != b.blocks[i].size()) throw InvalidArgument("landscape dot: block size mismatch");
    s += block_dot(a.blocks[i], b.blocks[i]);
  }
  return s;
}

double norm(const Direction& a) { return std::sqrt(dot(a, a)); }

DirectionPair random_directions(const nn::ParamList& params, std::uint64_t seed) {
  std::mt19937_64 rng(splitmix64(seed));
  std::normal_distribution<double> normal;
  DirectionPair out;
  out.seed = seed;
  auto draw = [&](Direction& d) {
    d.blocks.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      d.blocks[i].resize(params[i].tensor.size());
      for (double& v : d.blocks[i]) v = normal(rng);
    }
  };
  draw(out.delta);
  draw(out.eta);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& theta = params[i].tensor.values();
    const double target = std::sqrt(block_dot(theta, theta));
    auto& d = out.delta.blocks[i];
    auto& e = out.eta.blocks[i];
    rescale_to(d, target);
    const double dd = block_dot(d, d);
    if (dd > 0.0) {
      const double c = block_dot(e, d) / dd;
      for (std::size_t j = 0; j < e.size(); ++j) e[j] -= c * d[j];
    }
    rescale_to(e, target);
  }
  return out;
}

std::vector<double> linspace(double lo, double hi, std::size_t n) {
  if (n == 0) throw InvalidArgument("linspace: need at least one point");
  std::vector<double> v(n, lo);
  for (std::size_t i = 1; i < n; ++i) v[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return v;
}

LandscapeGrid loss_slice_2d(nn::ParamList& params, const LossFn& loss, const DirectionPair& dirs,
                            const std::vector<double>& x_steps, const std::vector<double>& y_steps) {
  check_pair(params, dirs);
  LandscapeGrid g = empty_grid(dirs, x_steps, y_steps);
  Perturbation p(params, dirs);
  for (std::size_t a = 0; a < x_steps.size(); ++a) {
    for (std::size_t b = 0; b < y_steps.size(); ++b) {
      p.set(x_steps[a], y_steps[b]);
      const double v = loss();
      const std::size_t i = a * y_steps.size() + b;
      if (std::isfinite(v)) {
        g.values[i] = v;
      } else {
        g.values[i] = std::numeric_limits<double>::quiet_NaN();
        g.flagged[i] = 1;
      }
    }
  }
  return g;
}

Hessian2 summarize_hessian(double h11, double h12, double h22) {
  Hessian2 h{h11, h12, h22};
  const double mid = 0.5 * (h11 + h22);
  const double rad = std::hypot(0.5 * (h11 - h22), h12);
  h.eig_lo = mid - rad;
  h.eig_hi = mid + rad;
  const double big = std::max(std::abs(h.eig_lo), std::abs(h.eig_hi));
  const double small = std::min(std::abs(h.eig_lo), std::abs(h.eig_hi));
  h.degenerate = !(big >= 1e-14);
  h.ratio = h.degenerate ? 0.0 : small / big;
  return h;
}

HessianGrid restricted_hessian_ratio(nn::ParamList& params, const LossFn& loss, const DirectionPair& dirs,
                                     const std::vector<double>& x_steps, const std::vector<double>& y_steps,
                                     double fd_step, Stencil stencil) {
  if (!(fd_step > 0.0)) throw InvalidArgument("restricted_hessian_ratio: fd_step must be positive");
  check_pair(params, dirs);
  HessianGrid out;
  out.ratio = empty_grid(dirs, x_steps, y_steps);
  out.cells.resize(x_steps.size() * y_steps.size());
  Perturbation p(params, dirs);
  for (std::size_t a = 0; a < x_steps.size(); ++a) {
    for (std::size_t b = 0; b < y_steps.size(); ++b) {
      const double x = x_steps[a], y = y_steps[b];
      auto f = [&](double dx, double dy) {
        p.set(x + dx, y + dy);
        return loss();
      };
      const double h = fd_step;
      const double f0 = f(0.0, 0.0);
      auto mixed = [&](double s) { return (f(s, s) - f(s, -s) - f(-s, s) + f(-s, -s)) / (4.0 * s * s); };
      double h11, h22, h12;
      if (stencil == Stencil::kThreePoint) {
        h11 = (f(h, 0.0) - 2.0 * f0 + f(-h, 0.0)) / (h * h);
        h22 = (f(0.0, h) - 2.0 * f0 + f(0.0, -h)) / (h * h);
        h12 = mixed(h);
      } else {
        h11 = (-f(2 * h, 0.0) + 16.0 * f(h, 0.0) - 30.0 * f0 + 16.0 * f(-h, 0.0) - f(-2 * h, 0.0)) / (12.0 * h * h);
        h22 = (-f(0.0, 2 * h) + 16.0 * f(0.0, h) - 30.0 * f0 + 16.0 * f(0.0, -h) - f(0.0, -2 * h)) / (12.0 * h * h);
        h12 = (4.0 * mixed(h) - mixed(2 * h)) / 3.0;  // Richardson step cancels the h^2 error term
      }
      const std::size_t i = a * y_steps.size() + b;
      Hessian2 cell = summarize_hessian(h11, h12, h22);
      const bool finite = std::isfinite(h11) && std::isfinite(h12) && std::isfinite(h22);
      out.cells[i] = cell;
      if (!finite) {
        out.ratio.values[i] = std::numeric_limits<double>::quiet_NaN();
        out.ratio.flagged[i] = 1;
      } else {
        out.ratio.values[i] = cell.ratio;
        out.ratio.flagged[i] = cell.degenerate ? 1 : 0;
      }
    }
  }
  return out;
}

nn::ParamList select_params(const nn::ParamList& params, const std::vector<std::string>& prefixes) {
  if (prefixes.empty()) return params;
  nn::ParamList out;
  for (const auto& p : params) {
    for (const auto& pre : prefixes) {
      if (p.name.rfind(pre, 0) == 0) {
        out.push_back(p);
        break;
      }
    }
  }
  if (out.empty()) throw InvalidArgument("select_params: no parameter matches the given prefixes");
  return out;
}

}  // namespace stulab::landscape

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace stulab::nn {

struct LayerCheck {
  std::string layer;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// Finite-difference gradient checks for every layer type (STU with learnable
/// filters and lift, STU-T, ALiBi attention, S4D, SwiGLU, MoE with frozen
/// routing, RMSNorm) on small random instances. A layer passes when its
/// largest relative error is at most `tolerance`.
std::vector<LayerCheck> check_all_layers(std::uint64_t seed, double tolerance = 1e-5);

/// Layer names accepted by check_layer, in check_all_layers order.
std::vector<std::string> checkable_layers();

/// Throws InvalidArgument for an unknown layer name.
LayerCheck check_layer(const std::string& layer, std::uint64_t seed, double tolerance = 1e-5);

}  // namespace stulab::nn

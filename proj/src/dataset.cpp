#include "stulab/dataset.hpp"

#include <algorithm>
#include <string>

#include "stulab/error.hpp"

namespace stulab {

void SequenceDataset::validate() const {
  const std::size_t steps = count * length;
  if (inputs.size() != steps * input_dim || targets.size() != steps * target_dim) {
    throw FormatError("sequence dataset: buffers (" + std::to_string(inputs.size()) + ", " +
                      std::to_string(targets.size()) + ") do not match " + std::to_string(count) + "x" +
                      std::to_string(length) + " steps of " + std::to_string(input_dim) + "/" +
                      std::to_string(target_dim) + " channels");
  }
  if (feedback_offset && *feedback_offset + target_dim > input_dim) {
    throw FormatError("sequence dataset: feedback channels exceed the input width");
  }
}

void TokenDataset::validate() const {
  const std::size_t n = count * length;
  if (tokens.size() != n || targets.size() != n || mask.size() != n) {
    throw FormatError("token dataset: buffers do not match " + std::to_string(count) + "x" + std::to_string(length));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (tokens[i] < 0 || static_cast<std::size_t>(tokens[i]) >= vocab) {
      throw FormatError("token dataset: token " + std::to_string(tokens[i]) + " outside vocabulary " +
                        std::to_string(vocab));
    }
    if (mask[i] && (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= vocab)) {
      throw FormatError("token dataset: masked target outside vocabulary at position " + std::to_string(i));
    }
  }
}

SequenceDataset select(const SequenceDataset& data, std::span<const std::size_t> indices) {
  SequenceDataset out = data;
  out.count = indices.size();
  const std::size_t in_stride = data.length * data.input_dim;
  const std::size_t tg_stride = data.length * data.target_dim;
  out.inputs.resize(indices.size() * in_stride);
  out.targets.resize(indices.size() * tg_stride);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= data.count) throw InvalidArgument("select: sequence index out of range");
    std::copy_n(data.inputs.begin() + static_cast<std::ptrdiff_t>(indices[i] * in_stride), in_stride,
                out.inputs.begin() + static_cast<std::ptrdiff_t>(i * in_stride));
    std::copy_n(data.targets.begin() + static_cast<std::ptrdiff_t>(indices[i] * tg_stride), tg_stride,
                out.targets.begin() + static_cast<std::ptrdiff_t>(i * tg_stride));
  }
  return out;
}

TokenDataset select(const TokenDataset& data, std::span<const std::size_t> indices) {
  TokenDataset out;
  out.count = indices.size();
  out.length = data.length;
  out.vocab = data.vocab;
  for (std::size_t idx : indices) {
    if (idx >= data.count) throw InvalidArgument("select: sequence index out of range");
    const auto first = static_cast<std::ptrdiff_t>(idx * data.length);
    const auto last = first + static_cast<std::ptrdiff_t>(data.length);
    out.tokens.insert(out.tokens.end(), data.tokens.begin() + first, data.tokens.begin() + last);
    out.targets.insert(out.targets.end(), data.targets.begin() + first, data.targets.begin() + last);
    out.mask.insert(out.mask.end(), data.mask.begin() + first, data.mask.begin() + last);
  }
  return out;
}

}  // namespace stulab

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace stulab {

/// Real-valued sequences stored row-major: inputs [count, length, input_dim],
/// targets [count, length, target_dim].
struct SequenceDataset {
  std::size_t count = 0;
  std::size_t length = 0;
  std::size_t input_dim = 0;
  std::size_t target_dim = 0;
  std::vector<double> inputs;
  std::vector<double> targets;
  /// When set, input channels [offset, offset + target_dim) at step t carry
  /// the target of step t - 1. Autoregressive evaluation overwrites them with
  /// the model's own predictions.
  std::optional<std::size_t> feedback_offset;

  std::span<const double> input_row(std::size_t seq, std::size_t t) const {
    return {inputs.data() + (seq * length + t) * input_dim, input_dim};
  }
  std::span<const double> target_row(std::size_t seq, std::size_t t) const {
    return {targets.data() + (seq * length + t) * target_dim, target_dim};
  }
  /// Throws FormatError when buffer sizes disagree with the dimensions.
  void validate() const;
};

/// Token sequences with per-position targets and loss mask, all [count, length].
struct TokenDataset {
  std::size_t count = 0;
  std::size_t length = 0;
  std::size_t vocab = 0;  // total vocabulary including special tokens
  std::vector<std::int64_t> tokens;
  std::vector<std::int64_t> targets;  // -1 where masked out
  std::vector<std::uint8_t> mask;

  void validate() const;
};

/// Rows `indices` of `data` as a new dataset (copying).
SequenceDataset select(const SequenceDataset& data, std::span<const std::size_t> indices);
TokenDataset select(const TokenDataset& data, std::span<const std::size_t> indices);

}  // namespace stulab

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "stulab/dataset.hpp"

namespace stulab::tasks {

enum class TaskKind { kInduction, kRecall, kCopy };

std::string to_string(TaskKind kind);
TaskKind parse_task_kind(const std::string& name);

/// Token ids reserved above the payload alphabet.
struct SpecialTokens {
  std::int64_t blank;
  std::int64_t flag;
  std::int64_t delimiter;
  std::size_t vocab_total;  // embedding table size
};

/// Payload tokens are [0, vocab) for induction heads and selective copy.
/// Associative recall uses keys [0, vocab) and values [vocab, 2 vocab).
SpecialTokens special_tokens(TaskKind kind, std::size_t vocab);

struct TokenTask {
  std::vector<std::int64_t> tokens;
  std::vector<std::int64_t> targets;  // -1 where the mask is off
  std::vector<std::uint8_t> mask;
  std::size_t vocab_total = 0;
};

/// Blanks everywhere, a flag at uniform p in [0, T-3], a uniform payload at
/// p + 1 and a second flag at T - 1 whose target is the payload.
TokenTask gen_induction_heads(std::size_t T, std::size_t vocab, std::uint64_t seed);

/// n_pairs key/value pairs with distinct keys, then a delimiter and a query
/// key copied from one of the pairs; the target at T - 1 is its value. Unused
/// leading slots are blanks. n_pairs = 0 selects min((T - 2) / 2, vocab).
TokenTask gen_associative_recall(std::size_t T, std::size_t vocab, std::uint64_t seed, std::size_t n_pairs = 0);

/// n_tokens payloads at sorted distinct random positions among blanks in the
/// first T - n_tokens slots; the last n_tokens positions hold flags and must
/// reproduce the payloads in order.
TokenTask gen_selective_copy(std::size_t T, std::size_t n_tokens, std::size_t vocab, std::uint64_t seed);

struct TaskParams {
  TaskKind kind = TaskKind::kInduction;
  std::size_t length = 128;
  std::size_t vocab = 10;
  std::size_t n_tokens = 16;  // selective copy only
  std::size_t n_pairs = 0;    // associative recall only
};

TokenTask generate(const TaskParams& params, std::uint64_t seed);

/// n sequences; sequence i uses derive_seed(seed, i).
TokenDataset task_dataset(const TaskParams& params, std::size_t n, std::uint64_t seed);

}  // namespace stulab::tasks

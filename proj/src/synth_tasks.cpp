#include "stulab/synth_tasks.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "stulab/error.hpp"
#include "stulab/rng.hpp"

namespace stulab::tasks {

namespace {

std::int64_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  return static_cast<std::int64_t>(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
}

TokenTask blank_task(std::size_t T, const SpecialTokens& sp) {
  TokenTask task;
  task.tokens.assign(T, sp.blank);
  task.targets.assign(T, -1);
  task.mask.assign(T, 0);
  task.vocab_total = sp.vocab_total;
  return task;
}

}  // namespace

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::kInduction: return "induction";
    case TaskKind::kRecall: return "recall";
    case TaskKind::kCopy: return "copy";
  }
  return "unknown";
}

TaskKind parse_task_kind(const std::string& name) {
  if (name == "induction" || name == "induction_heads") return TaskKind::kInduction;
  if (name == "recall" || name == "associative_recall") return TaskKind::kRecall;
  if (name == "copy" || name == "selective_copy") return TaskKind::kCopy;
  throw InvalidArgument("unknown task '" + name + "' (expected induction, recall or copy)");
}

SpecialTokens special_tokens(TaskKind kind, std::size_t vocab) {
  const auto base = static_cast<std::int64_t>(kind == TaskKind::kRecall ? 2 * vocab : vocab);
  return SpecialTokens{base, base + 1, base + 2, static_cast<std::size_t>(base) + 3};
}

TokenTask gen_induction_heads(std::size_t T, std::size_t vocab, std::uint64_t seed) {
  if (T < 4) throw InvalidArgument("induction heads: context length must be at least 4");
  if (vocab < 2) throw InvalidArgument("induction heads: vocabulary must have at least 2 tokens");
  const SpecialTokens sp = special_tokens(TaskKind::kInduction, vocab);
  std::mt19937_64 rng(splitmix64(seed));
  TokenTask task = blank_task(T, sp);
  const auto p = static_cast<std::size_t>(uniform_index(rng, T - 2));
  const std::int64_t payload = uniform_index(rng, vocab);
  task.tokens[p] = sp.flag;
  task.tokens[p + 1] = payload;
  task.tokens[T - 1] = sp.flag;
  task.targets[T - 1] = payload;
  task.mask[T - 1] = 1;
  return task;
}

TokenTask gen_associative_recall(std::size_t T, std::size_t vocab, std::uint64_t seed, std::size_t n_pairs) {
  if (T < 4) throw InvalidArgument("associative recall: context length must be at least 4");
  if (vocab < 1) throw InvalidArgument("associative recall: vocabulary must be non-empty");
  const std::size_t room = (T - 2) / 2;
  if (n_pairs == 0) n_pairs = std::min(room, vocab);
  if (n_pairs > vocab) {
    throw InvalidArgument("associative recall: " + std::to_string(n_pairs) + " pairs need distinct keys but only " +
                          std::to_string(vocab) + " keys exist");
  }
  if (n_pairs > room) {
    throw InvalidArgument("associative recall: " + std::to_string(n_pairs) + " pairs do not fit in length " +
                          std::to_string(T));
  }
  const SpecialTokens sp = special_tokens(TaskKind::kRecall, vocab);
  std::mt19937_64 rng(splitmix64(seed));
  TokenTask task = blank_task(T, sp);
  std::vector<std::int64_t> keys(vocab);
  std::iota(keys.begin(), keys.end(), 0);
  std::shuffle(keys.begin(), keys.end(), rng);
  const std::size_t start = T - 2 - 2 * n_pairs;
  std::vector<std::int64_t> values(n_pairs);
  for (std::size_t i = 0; i < n_pairs; ++i) {
    values[i] = static_cast<std::int64_t>(vocab) + uniform_index(rng, vocab);
    task.tokens[start + 2 * i] = keys[i];
    task.tokens[start + 2 * i + 1] = values[i];
  }
  const auto q = static_cast<std::size_t>(uniform_index(rng, n_pairs));
  task.tokens[T - 2] = sp.delimiter;
  task.tokens[T - 1] = keys[q];
  task.targets[T - 1] = values[q];
  task.mask[T - 1] = 1;
  return task;
}

TokenTask gen_selective_copy(std::size_t T, std::size_t n_tokens, std::size_t vocab, std::uint64_t seed) {
  if (n_tokens == 0 || 2 * n_tokens > T) {
    throw InvalidArgument("selective copy: need 1 <= n_tokens <= T - n_tokens, got n_tokens=" +
                          std::to_string(n_tokens) + ", T=" + std::to_string(T));
  }
  if (vocab < 1) throw InvalidArgument("selective copy: vocabulary must be non-empty");
  const SpecialTokens sp = special_tokens(TaskKind::kCopy, vocab);
  std::mt19937_64 rng(splitmix64(seed));
  TokenTask task = blank_task(T, sp);
  const std::size_t region = T - n_tokens;
  std::vector<std::size_t> slots(region);
  std::iota(slots.begin(), slots.end(), 0);
  // partial Fisher-Yates: the first n_tokens slots form a uniform subset
  for (std::size_t i = 0; i < n_tokens; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(uniform_index(rng, region - i));
    std::swap(slots[i], slots[j]);
  }
  std::sort(slots.begin(), slots.begin() + static_cast<std::ptrdiff_t>(n_tokens));
  for (std::size_t i = 0; i < n_tokens; ++i) {
    const std::int64_t payload = uniform_index(rng, vocab);
    task.tokens[slots[i]] = payload;
    task.tokens[region + i] = sp.flag;
    task.targets[region + i] = payload;
    task.mask[region + i] = 1;
  }
  return task;
}

TokenTask generate(const TaskParams& params, std::uint64_t seed) {
  switch (params.kind) {
    case TaskKind::kInduction: return gen_induction_heads(params.length, params.vocab, seed);
    case TaskKind::kRecall: return gen_associative_recall(params.length, params.vocab, seed, params.n_pairs);
    case TaskKind::kCopy: return gen_selective_copy(params.length, params.n_tokens, params.vocab, seed);
  }
  throw InvalidArgument("unknown task kind");
}

TokenDataset task_dataset(const TaskParams& params, std::size_t n, std::uint64_t seed) {
  TokenDataset data;
  data.count = n;
  data.length = params.length;
  data.vocab = special_tokens(params.kind, params.vocab).vocab_total;
  data.tokens.reserve(n * params.length);
  data.targets.reserve(n * params.length);
  data.mask.reserve(n * params.length);
  for (std::size_t i = 0; i < n; ++i) {
    TokenTask task = generate(params, derive_seed(seed, i));
    data.tokens.insert(data.tokens.end(), task.tokens.begin(), task.tokens.end());
    data.targets.insert(data.targets.end(), task.targets.begin(), task.targets.end());
    data.mask.insert(data.mask.end(), task.mask.begin(), task.mask.end());
  }
  return data;
}

}  // namespace stulab::tasks

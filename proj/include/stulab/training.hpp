#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stulab/dataset.hpp"
#include "stulab/layers.hpp"

namespace stulab::train {

using ad::Tensor;

// ---- optimizers ---------------------------------------------------------------

enum class OptimizerKind { kAdam, kAdamW, kRmsProp };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(const std::string& name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double alpha = 0.99;        // RMSProp smoothing
  double weight_decay = 0.0;  // AdamW only
  double clip_norm = 0.0;     // > 0 rescales the global gradient norm to at most this
};

/// Moment buffers and step counter. Buffers are created on the first step and
/// keyed by parameter position.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {}

  /// Applies one update to every parameter from its accumulated gradient.
  /// Throws NumericFailure naming the first parameter with a non-finite
  /// gradient (no parameter is modified in that case).
  void step(nn::ParamList& params);

  /// Same update on plain buffers; grads[i] pairs with values[i].
  void step(std::span<std::vector<double>* const> values, std::span<const std::vector<double>> grads,
            std::span<const std::string> names = {});

  std::size_t steps() const { return t_; }
  const OptimizerConfig& config() const { return cfg_; }

 private:
  OptimizerConfig cfg_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// ---- losses ---------------------------------------------------------------------

/// 0.5 * sum over selected rows of |pred - target|^2 / (selected rows). Rows
/// are the last-axis vectors of pred; `row_mask` (empty = all rows) selects.
/// Throws InvalidArgument on an empty selection or size mismatch.
Tensor mse_loss(const Tensor& pred, std::span<const double> target, std::span<const std::uint8_t> row_mask = {});

/// Mean over selected rows of -log softmax(logits)[target].
Tensor cross_entropy(const Tensor& logits, std::span<const std::int64_t> targets,
                     std::span<const std::uint8_t> row_mask = {});

// ---- training loop ------------------------------------------------------------------

struct EvalResult {
  double loss = 0.0;
  /// Token data: accuracy on masked positions. Real data: loss divided by the
  /// zero-predictor baseline 0.5 * mean |y|^2.
  double metric = 0.0;
};

struct EvalPoint {
  std::size_t step = 0;
  EvalResult result;
};

struct TrainConfig {
  std::size_t steps = 1000;
  std::size_t batch = 8;
  std::size_t eval_period = 100;
  std::uint64_t seed = 0;
  OptimizerConfig optimizer;
  /// Stop once an evaluation metric reaches this value (accuracy tasks).
  std::optional<double> stop_at_metric;
  /// Sequences per forward pass during evaluation.
  std::size_t eval_chunk = 64;
  /// Called after every evaluation (e.g. to checkpoint on improvement).
  std::function<void(const EvalPoint&)> on_eval;
};

struct TrainReport {
  std::vector<double> loss;     // one entry per completed step
  std::vector<double> wall_ms;  // per step
  std::vector<EvalPoint> evals;  // step 0, every eval_period steps, and the final step
  bool diverged = false;
  std::size_t diverged_step = 0;
  bool stopped_early = false;
  std::uint64_t seed = 0;

  const EvalPoint* last_eval() const { return evals.empty() ? nullptr : &evals.back(); }
};

/// Minibatches are drawn uniformly with replacement from `train_data` using
/// an engine seeded from cfg.seed. Parameters are updated in place. A
/// non-finite loss or gradient stops training and flags the report.
TrainReport train(nn::Model& model, const SequenceDataset& train_data, const SequenceDataset* eval_data,
                  const TrainConfig& cfg);
TrainReport train(nn::Model& model, const TokenDataset& train_data, const TokenDataset* eval_data,
                  const TrainConfig& cfg);

/// Model inputs for sequences `indices` as a [n, T, input_dim] tensor.
Tensor input_batch(const SequenceDataset& data, std::span<const std::size_t> indices);

/// Teacher-forced evaluation over every sequence.
EvalResult eval_next_step(const nn::Model& model, const SequenceDataset& data, std::size_t chunk = 64);
EvalResult eval_next_step(const nn::Model& model, const TokenDataset& data, std::size_t chunk = 64);

/// 0.5 * mean over steps of |target|^2.
double zero_predictor_loss(const SequenceDataset& data);

/// Feeds the model's own predictions back into the dataset's feedback
/// channels after `warmup` ground-truth steps. Entry h of the result is the
/// mean over sequences of 0.5 * |pred - target|^2 at step warmup + h.
/// warmup = nullopt selects length / 2. Throws InvalidArgument when the data
/// has no feedback channels or warmup + horizon exceeds the length.
std::vector<double> eval_autoregressive(const nn::Model& model, const SequenceDataset& data, std::size_t horizon,
                                        std::optional<std::size_t> warmup = std::nullopt);

// ---- trials -------------------------------------------------------------------------

struct TrialAggregate {
  std::vector<double> mean;
  std::vector<double> stddev;  // sample standard deviation; zero for one trial
};

/// Pointwise mean and sample standard deviation of equal-length curves.
TrialAggregate aggregate(const std::vector<std::vector<double>>& curves);

/// Runs `trial(i, derive_seed(base_seed, i))` for i < n_trials in order and
/// aggregates the returned curves.
TrialAggregate run_trials(std::size_t n_trials, std::uint64_t base_seed,
                          const std::function<std::vector<double>(std::size_t, std::uint64_t)>& trial);

}  // namespace stulab::train

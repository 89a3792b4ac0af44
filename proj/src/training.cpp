#include "stulab/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "stulab/error.hpp"
#include "stulab/rng.hpp"

namespace stulab::train {

using ad::Node;

std::string to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::kAdam: return "adam";
    case OptimizerKind::kAdamW: return "adamw";
    case OptimizerKind::kRmsProp: return "rmsprop";
  }
  return "unknown";
}

OptimizerKind parse_optimizer_kind(const std::string& name) {
  if (name == "adam") return OptimizerKind::kAdam;
  if (name == "adamw") return OptimizerKind::kAdamW;
  if (name == "rmsprop") return OptimizerKind::kRmsProp;
  throw InvalidArgument("unknown optimizer '" + name + "' (expected adam, adamw or rmsprop)");
}

// ---- optimizers -------------------------------------------------------------------

void Optimizer::step(nn::ParamList& params) {
  std::vector<std::vector<double>*> values;
  std::vector<std::vector<double>> grads;
  std::vector<std::string> names;
  values.reserve(params.size());
  grads.reserve(params.size());
  for (auto& p : params) {
    values.push_back(&p.tensor.values());
    const auto g = p.tensor.grad();
    grads.emplace_back(g.begin(), g.end());
    names.push_back(p.name);
  }
  step(values, grads, names);
}

void Optimizer::step(std::span<std::vector<double>* const> values, std::span<const std::vector<double>> grads,
                     std::span<const std::string> names) {
  if (values.size() != grads.size()) throw InvalidArgument("optimizer: values and gradients differ in count");
  double norm_sq = 0.0;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].size() != values[i]->size()) throw InvalidArgument("optimizer: gradient shape mismatch");
    for (double g : grads[i]) {
      if (!std::isfinite(g)) {
        const std::string name = i < names.size() ? names[i] : "#" + std::to_string(i);
        throw NumericFailure("optimizer: non-finite gradient in parameter '" + name + "'");
      }
      norm_sq += g * g;
    }
  }
  if (m_.empty()) {
    m_.resize(values.size());
    v_.resize(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (cfg_.kind != OptimizerKind::kRmsProp) m_[i].assign(values[i]->size(), 0.0);
      v_[i].assign(values[i]->size(), 0.0);
    }
  } else if (m_.size() != values.size()) {
    throw InvalidArgument("optimizer: parameter count changed between steps");
  }
  double clip = 1.0;
  if (cfg_.clip_norm > 0.0) {
    const double norm = std::sqrt(norm_sq);
    if (norm > cfg_.clip_norm) clip = cfg_.clip_norm / norm;
  }
  ++t_;
  const double lr = cfg_.lr;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::vector<double>& x = *values[i];
    const std::vector<double>& g = grads[i];
    std::vector<double>& v = v_[i];
    switch (cfg_.kind) {
      case OptimizerKind::kRmsProp:
        for (std::size_t j = 0; j < x.size(); ++j) {
          const double gj = g[j] * clip;
          v[j] = cfg_.alpha * v[j] + (1.0 - cfg_.alpha) * gj * gj;
          x[j] -= lr * gj / (std::sqrt(v[j]) + cfg_.eps);
        }
        break;
      case OptimizerKind::kAdamW:
      case OptimizerKind::kAdam: {
        std::vector<double>& m = m_[i];
        const double decay = cfg_.kind == OptimizerKind::kAdamW ? 1.0 - lr * cfg_.weight_decay : 1.0;
        for (std::size_t j = 0; j < x.size(); ++j) {
          const double gj = g[j] * clip;
          if (cfg_.kind == OptimizerKind::kAdamW) x[j] *= decay;
          m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
          v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
          x[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
        }
        break;
      }
    }
  }
}

// ---- losses ---------------------------------------------------------------------------

namespace {

std::vector<std::uint8_t> resolve_mask(std::span<const std::uint8_t> mask, std::size_t rows, const char* op) {
  if (mask.empty()) return std::vector<std::uint8_t>(rows, 1);
  if (mask.size() != rows) {
    throw InvalidArgument(std::string(op) + ": mask has " + std::to_string(mask.size()) + " entries for " +
                          std::to_string(rows) + " rows");
  }
  return {mask.begin(), mask.end()};
}

}  // namespace

Tensor mse_loss(const Tensor& pred, std::span<const double> target, std::span<const std::uint8_t> row_mask) {
  if (pred.rank() == 0) throw InvalidArgument("mse_loss: prediction must have a feature axis");
  if (target.size() != pred.size()) {
    throw InvalidArgument("mse_loss: target has " + std::to_string(target.size()) + " values, prediction " +
                          ad::shape_str(pred.shape()));
  }
  const std::size_t d = pred.dim(-1);
  const std::size_t rows = pred.size() / d;
  auto mask = resolve_mask(row_mask, rows, "mse_loss");
  const std::size_t count = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
  if (count == 0) throw InvalidArgument("mse_loss: empty mask");
  std::vector<double> diff(pred.size(), 0.0);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    for (std::size_t c = 0; c < d; ++c) {
      const double e = pred.data()[r * d + c] - target[r * d + c];
      diff[r * d + c] = e;
      total += e * e;
    }
  }
  const double inv = 1.0 / static_cast<double>(count);
  return ad::make_result(
      {}, {0.5 * total * inv}, {pred},
      [diff = std::move(diff), inv](Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        const double s = self.grad[0] * inv;
        for (std::size_t i = 0; i < diff.size(); ++i) g[i] += s * diff[i];
      },
      "mse_loss");
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::int64_t> targets,
                     std::span<const std::uint8_t> row_mask) {
  if (logits.rank() == 0) throw InvalidArgument("cross_entropy: logits need a class axis");
  const std::size_t v = logits.dim(-1);
  const std::size_t rows = logits.size() / v;
  if (targets.size() != rows) {
    throw InvalidArgument("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                          std::to_string(rows) + " rows");
  }
  auto mask = resolve_mask(row_mask, rows, "cross_entropy");
  std::vector<std::size_t> selected;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= v) {
      throw InvalidArgument("cross_entropy: target " + std::to_string(targets[r]) + " outside " + std::to_string(v) +
                            " classes");
    }
    selected.push_back(r);
  }
  if (selected.empty()) throw InvalidArgument("cross_entropy: empty mask");
  std::vector<double> probs(selected.size() * v);
  double total = 0.0;
  for (std::size_t i = 0; i < selected.size(); ++i) {
    const double* x = logits.data().data() + selected[i] * v;
    double* p = probs.data() + i * v;
    const double mx = *std::max_element(x, x + v);
    double z = 0.0;
    for (std::size_t c = 0; c < v; ++c) z += (p[c] = std::exp(x[c] - mx));
    for (std::size_t c = 0; c < v; ++c) p[c] /= z;
    const auto t = static_cast<std::size_t>(targets[selected[i]]);
    total += -(x[t] - mx - std::log(z));
  }
  const double inv = 1.0 / static_cast<double>(selected.size());
  std::vector<std::size_t> cls(selected.size());
  for (std::size_t i = 0; i < selected.size(); ++i) cls[i] = static_cast<std::size_t>(targets[selected[i]]);
  return ad::make_result(
      {}, {total * inv}, {logits},
      [probs = std::move(probs), selected = std::move(selected), cls = std::move(cls), v, inv](Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        const double s = self.grad[0] * inv;
        for (std::size_t i = 0; i < selected.size(); ++i) {
          double* gr = g.data() + selected[i] * v;
          const double* p = probs.data() + i * v;
          for (std::size_t c = 0; c < v; ++c) gr[c] += s * p[c];
          gr[cls[i]] -= s;
        }
      },
      "cross_entropy");
}

// ---- batching ---------------------------------------------------------------------------

Tensor input_batch(const SequenceDataset& data, std::span<const std::size_t> indices) {
  const std::size_t stride = data.length * data.input_dim;
  std::vector<double> values(indices.size() * stride);
  for (std::size_t i = 0; i < indices.size(); ++i)
    std::copy_n(data.inputs.begin() + static_cast<std::ptrdiff_t>(indices[i] * stride), stride,
                values.begin() + static_cast<std::ptrdiff_t>(i * stride));
  return Tensor::from({indices.size(), data.length, data.input_dim}, std::move(values));
}

namespace {

std::vector<double> target_batch(const SequenceDataset& data, std::span<const std::size_t> indices) {
  const std::size_t stride = data.length * data.target_dim;
  std::vector<double> values(indices.size() * stride);
  for (std::size_t i = 0; i < indices.size(); ++i)
    std::copy_n(data.targets.begin() + static_cast<std::ptrdiff_t>(indices[i] * stride), stride,
                values.begin() + static_cast<std::ptrdiff_t>(i * stride));
  return values;
}

struct TokenBatch {
  std::vector<std::int64_t> tokens, targets;
  std::vector<std::uint8_t> mask;
};

TokenBatch token_batch(const TokenDataset& data, std::span<const std::size_t> indices) {
  TokenBatch b;
  const std::size_t T = data.length;
  for (std::size_t idx : indices) {
    const auto first = static_cast<std::ptrdiff_t>(idx * T);
    b.tokens.insert(b.tokens.end(), data.tokens.begin() + first, data.tokens.begin() + first + static_cast<std::ptrdiff_t>(T));
    b.targets.insert(b.targets.end(), data.targets.begin() + first,
                     data.targets.begin() + first + static_cast<std::ptrdiff_t>(T));
    b.mask.insert(b.mask.end(), data.mask.begin() + first, data.mask.begin() + first + static_cast<std::ptrdiff_t>(T));
  }
  return b;
}

Tensor sequence_loss(const nn::Model& model, const SequenceDataset& data, std::span<const std::size_t> indices) {
  Tensor pred = model.forward(input_batch(data, indices));
  return mse_loss(pred, target_batch(data, indices));
}

Tensor token_loss(const nn::Model& model, const TokenDataset& data, std::span<const std::size_t> indices) {
  TokenBatch b = token_batch(data, indices);
  Tensor logits = model.forward_tokens(b.tokens, indices.size(), data.length);
  return cross_entropy(logits, b.targets, b.mask);
}

std::vector<std::size_t> chunk_indices(std::size_t first, std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), first);
  return idx;
}

template <class Data, class LossFn, class EvalFn>
TrainReport train_loop(nn::Model& model, const Data& train_data, const Data* eval_data, const TrainConfig& cfg,
                       LossFn loss_fn, EvalFn eval_fn) {
  train_data.validate();
  if (train_data.count == 0) throw InvalidArgument("train: training data is empty");
  if (cfg.batch == 0) throw InvalidArgument("train: batch size must be positive");
  TrainReport report;
  report.seed = cfg.seed;
  Optimizer opt(cfg.optimizer);
  std::mt19937_64 rng(splitmix64(cfg.seed));
  std::uniform_int_distribution<std::size_t> pick(0, train_data.count - 1);
  auto evaluate = [&](std::size_t step) {
    if (eval_data == nullptr) return false;
    report.evals.push_back({step, eval_fn(model, *eval_data, cfg.eval_chunk)});
    if (cfg.on_eval) cfg.on_eval(report.evals.back());
    return cfg.stop_at_metric && report.evals.back().result.metric >= *cfg.stop_at_metric;
  };
  if (evaluate(0) && cfg.steps > 0) {
    report.stopped_early = true;
    return report;
  }
  std::vector<std::size_t> indices(cfg.batch);
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const auto start = std::chrono::steady_clock::now();
    for (auto& i : indices) i = pick(rng);
    for (auto& p : model.parameters()) p.tensor.zero_grad();
    Tensor loss = loss_fn(model, train_data, indices);
    const double value = loss.item();
    if (!std::isfinite(value)) {
      report.diverged = true;
      report.diverged_step = step;
      return report;
    }
    ad::backward(loss);
    try {
      opt.step(model.parameters());
    } catch (const NumericFailure&) {
      report.diverged = true;
      report.diverged_step = step;
      return report;
    }
    report.loss.push_back(value);
    report.wall_ms.push_back(
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count());
    const bool periodic = cfg.eval_period > 0 && step % cfg.eval_period == 0;
    if ((periodic || step == cfg.steps) && evaluate(step)) {
      report.stopped_early = step < cfg.steps;
      return report;
    }
  }
  return report;
}

}  // namespace

TrainReport train(nn::Model& model, const SequenceDataset& train_data, const SequenceDataset* eval_data,
                  const TrainConfig& cfg) {
  return train_loop(model, train_data, eval_data, cfg, sequence_loss,
                    [](const nn::Model& m, const SequenceDataset& d, std::size_t chunk) { return eval_next_step(m, d, chunk); });
}

TrainReport train(nn::Model& model, const TokenDataset& train_data, const TokenDataset* eval_data,
                  const TrainConfig& cfg) {
  return train_loop(model, train_data, eval_data, cfg, token_loss,
                    [](const nn::Model& m, const TokenDataset& d, std::size_t chunk) { return eval_next_step(m, d, chunk); });
}

// ---- evaluation ------------------------------------------------------------------------

double zero_predictor_loss(const SequenceDataset& data) {
  double total = 0.0;
  for (double y : data.targets) total += y * y;
  const std::size_t steps = data.count * data.length;
  if (steps == 0) throw InvalidArgument("zero_predictor_loss: empty dataset");
  return 0.5 * total / static_cast<double>(steps);
}

EvalResult eval_next_step(const nn::Model& model, const SequenceDataset& data, std::size_t chunk) {
  data.validate();
  if (data.count == 0) throw InvalidArgument("eval_next_step: empty dataset");
  chunk = std::max<std::size_t>(chunk, 1);
  double total = 0.0;
  for (std::size_t first = 0; first < data.count; first += chunk) {
    const auto idx = chunk_indices(first, std::min(chunk, data.count - first));
    // Losses are means over steps; re-weight by the chunk's step count.
    total += sequence_loss(model, data, idx).item() * static_cast<double>(idx.size());
  }
  EvalResult r;
  r.loss = total / static_cast<double>(data.count);
  const double baseline = zero_predictor_loss(data);
  r.metric = baseline > 0.0 ? r.loss / baseline : 0.0;
  return r;
}

EvalResult eval_next_step(const nn::Model& model, const TokenDataset& data, std::size_t chunk) {
  data.validate();
  if (data.count == 0) throw InvalidArgument("eval_next_step: empty dataset");
  chunk = std::max<std::size_t>(chunk, 1);
  double total = 0.0;
  std::size_t masked = 0, correct = 0;
  for (std::size_t first = 0; first < data.count; first += chunk) {
    const auto idx = chunk_indices(first, std::min(chunk, data.count - first));
    TokenBatch b = token_batch(data, idx);
    Tensor logits = model.forward_tokens(b.tokens, idx.size(), data.length);
    const std::size_t v = logits.dim(-1);
    std::size_t here = 0;
    for (std::size_t r = 0; r < b.mask.size(); ++r) {
      if (!b.mask[r]) continue;
      ++here;
      const double* row = logits.data().data() + r * v;
      const auto best = static_cast<std::int64_t>(std::max_element(row, row + v) - row);
      correct += best == b.targets[r];
    }
    if (here == 0) continue;
    total += cross_entropy(logits, b.targets, b.mask).item() * static_cast<double>(here);
    masked += here;
  }
  if (masked == 0) throw InvalidArgument("eval_next_step: no masked positions");
  return EvalResult{total / static_cast<double>(masked), static_cast<double>(correct) / static_cast<double>(masked)};
}

std::vector<double> eval_autoregressive(const nn::Model& model, const SequenceDataset& data, std::size_t horizon,
                                        std::optional<std::size_t> warmup) {
  data.validate();
  if (!data.feedback_offset) throw InvalidArgument("eval_autoregressive: dataset has no feedback channels");
  const std::size_t w = warmup.value_or(data.length / 2);
  if (w == 0) throw InvalidArgument("eval_autoregressive: warmup must be at least one step");
  if (w + horizon > data.length) {
    throw InvalidArgument("eval_autoregressive: warmup " + std::to_string(w) + " + horizon " +
                          std::to_string(horizon) + " exceeds length " + std::to_string(data.length));
  }
  if (data.count == 0) throw InvalidArgument("eval_autoregressive: empty dataset");
  const std::size_t T = data.length, din = data.input_dim, dy = data.target_dim, off = *data.feedback_offset;
  std::vector<double> curve(horizon, 0.0);
  const auto all = chunk_indices(0, data.count);
  Tensor inputs = input_batch(data, all);
  std::vector<double>& x = inputs.values();
  for (std::size_t h = 0; h < horizon; ++h) {
    const std::size_t t = w + h;
    // Causal model: running on the full buffer gives the prefix prediction at t.
    Tensor pred = model.forward(inputs);
    double total = 0.0;
    for (std::size_t s = 0; s < data.count; ++s) {
      const double* p = pred.data().data() + (s * T + t) * dy;
      const auto target = data.target_row(s, t);
      for (std::size_t c = 0; c < dy; ++c) total += 0.5 * (p[c] - target[c]) * (p[c] - target[c]);
      if (t + 1 < T) std::copy_n(p, dy, x.data() + (s * T + t + 1) * din + off);
    }
    curve[h] = total / static_cast<double>(data.count);
  }
  return curve;
}

// ---- trials ----------------------------------------------------------------------------

TrialAggregate aggregate(const std::vector<std::vector<double>>& curves) {
  TrialAggregate agg;
  if (curves.empty()) return agg;
  const std::size_t n = curves.front().size();
  for (const auto& c : curves)
    if (c.size() != n) throw InvalidArgument("aggregate: curves differ in length");
  agg.mean.assign(n, 0.0);
  agg.stddev.assign(n, 0.0);
  const double k = static_cast<double>(curves.size());
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (const auto& c : curves) s += c[i];
    const double mean = s / k;
    agg.mean[i] = mean;
    if (curves.size() > 1) {
      double ss = 0.0;
      for (const auto& c : curves) ss += (c[i] - mean) * (c[i] - mean);
      agg.stddev[i] = std::sqrt(ss / (k - 1.0));
    }
  }
  return agg;
}

TrialAggregate run_trials(std::size_t n_trials, std::uint64_t base_seed,
                          const std::function<std::vector<double>(std::size_t, std::uint64_t)>& trial) {
  std::vector<std::vector<double>> curves;
  curves.reserve(n_trials);
  for (std::size_t i = 0; i < n_trials; ++i) curves.push_back(trial(i, derive_seed(base_seed, i)));
  return aggregate(curves);
}

}  // namespace stulab::train

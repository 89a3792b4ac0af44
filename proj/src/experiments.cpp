#include "stulab/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "stulab/error.hpp"
#include "stulab/lds_sim.hpp"
#include "stulab/rng.hpp"
#include "stulab/synth_tasks.hpp"

namespace stulab::exp {

namespace {

// Component indices for derive_seed(trial_seed, part).
enum SeedPart : std::uint64_t { kSystem = 1, kTrainData = 2, kEvalData = 3, kInit = 4, kOrder = 5, kDirections = 6 };

bool is_token_kind(io::ExperimentKind k) {
  return k == io::ExperimentKind::kInduction || k == io::ExperimentKind::kRecall || k == io::ExperimentKind::kCopy;
}

std::vector<std::size_t> first_n(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

void write_text(const RunOptions& opts, const std::string& name, const std::string& text) {
  if (!opts.out_dir.empty()) io::atomic_write(opts.out_dir / name, text);
}

void check_dims(const nn::ModelConfig& m, const SequenceDataset& d, const std::string& what) {
  if (m.vocab != 0 || m.input_dim != d.input_dim || m.output_dim != d.target_dim) {
    throw FormatError(what + " has " + std::to_string(d.input_dim) + " input and " + std::to_string(d.target_dim) +
                      " target channels; the model expects " + std::to_string(m.input_dim) + " and " +
                      std::to_string(m.output_dim));
  }
}

template <class Data>
BenchResult run_bench(const io::ExperimentConfig& cfg, const RunOptions& opts,
                      const std::function<Data(std::uint64_t)>& make_data, bool higher_is_better) {
  cfg.validate();
  BenchResult out;
  out.config_hash = io::config_hash(cfg);
  if (!opts.out_dir.empty()) {
    io::Json j = io::config_to_json(cfg);
    j["config_hash"] = out.config_hash;
    write_text(opts, "config.json", j.dump(2) + "\n");
  }
  for (std::size_t i = 0; i < cfg.trials; ++i) {
    const std::uint64_t ts = trial_seed(cfg.seed, i);
    const Data data = make_data(ts);
    nn::Model model = trial_model(cfg, ts);
    train::TrainConfig tc = train_config(cfg, ts);
    const std::string stem = "trial_" + std::to_string(i);
    const bool ckpt = opts.write_checkpoints && !opts.out_dir.empty();
    double best = higher_is_better ? -std::numeric_limits<double>::infinity()
                                   : std::numeric_limits<double>::infinity();
    tc.on_eval = [&](const train::EvalPoint& e) {
      const double m = e.result.metric;
      const bool improved = higher_is_better ? m > best : m < best;
      if (!improved || !std::isfinite(m)) return;
      best = m;
      if (ckpt) io::save_checkpoint(opts.out_dir / (stem + ".best.ckpt"), io::model_checkpoint(model, out.config_hash, ts));
    };
    TrialResult r;
    r.index = i;
    r.seed = ts;
    r.report = train::train(model, data.train, &data.eval, tc);
    if (const auto* last = r.report.last_eval()) {
      r.final_metric = last->result.metric;
      r.final_loss = last->result.loss;
    }
    if (r.report.diverged) {
      r.final_metric = std::numeric_limits<double>::quiet_NaN();
      r.final_loss = std::numeric_limits<double>::quiet_NaN();
    }
    write_text(opts, stem + ".csv", io::metrics_csv(r.report, opts.deterministic));
    if (ckpt) io::save_checkpoint(opts.out_dir / (stem + ".ckpt"), io::model_checkpoint(model, out.config_hash, ts));
    if (opts.log) {
      std::string line = "trial " + std::to_string(i) + " seed " + std::to_string(ts) + ": ";
      if (r.report.diverged) {
        line += "diverged at step " + std::to_string(r.report.diverged_step);
      } else {
        line += std::to_string(r.report.loss.size()) + " steps, eval loss " + io::format_double(r.final_loss) +
                ", metric " + io::format_double(r.final_metric);
      }
      opts.log(line);
    }
    out.trials.push_back(std::move(r));
  }

  // Aggregate eval metric curves on the union of eval steps.
  std::size_t longest = 0;
  for (std::size_t i = 0; i < out.trials.size(); ++i)
    if (out.trials[i].report.evals.size() > out.trials[longest].report.evals.size()) longest = i;
  for (const auto& e : out.trials[longest].report.evals) out.eval_steps.push_back(e.step);
  std::vector<std::vector<double>> curves;
  for (const auto& t : out.trials) {
    std::vector<double> c;
    for (const auto& e : t.report.evals) c.push_back(e.result.metric);
    const double pad = t.report.diverged || c.empty() ? std::numeric_limits<double>::quiet_NaN() : c.back();
    c.resize(out.eval_steps.size(), pad);
    curves.push_back(std::move(c));
  }
  out.aggregate = train::aggregate(curves);

  if (!opts.out_dir.empty()) {
    write_text(opts, "aggregate.csv", io::aggregate_csv(out.eval_steps, out.aggregate));
    io::Json summary{{"kind", io::to_string(cfg.kind)}, {"config_hash", out.config_hash}, {"trials", io::Json::array()}};
    for (const auto& t : out.trials) {
      summary["trials"].push_back(io::Json{{"index", t.index},
                                           {"seed", t.seed},
                                           {"steps", t.report.loss.size()},
                                           {"final_loss", io::format_double(t.final_loss)},
                                           {"final_metric", io::format_double(t.final_metric)},
                                           {"diverged", t.report.diverged},
                                           {"stopped_early", t.report.stopped_early}});
    }
    write_text(opts, "summary.json", summary.dump(2) + "\n");
    std::vector<io::Series> series;
    std::vector<double> xs(out.eval_steps.begin(), out.eval_steps.end());
    for (std::size_t i = 0; i < curves.size(); ++i) series.push_back({"trial " + std::to_string(i), xs, curves[i]});
    series.push_back({"mean", xs, out.aggregate.mean});
    const std::string label = higher_is_better ? "eval accuracy" : "eval loss / zero-predictor loss";
    write_text(opts, "curves.svg",
               io::svg_line_plot(series, io::to_string(cfg.kind) + " (" + nn::to_string(cfg.model.block_kind) + ")",
                                 "step", label, !higher_is_better));
  }
  return out;
}

}  // namespace

std::uint64_t trial_seed(std::uint64_t base, std::size_t trial) { return derive_seed(base, trial); }

SequenceData sequence_data(const io::ExperimentConfig& cfg, std::uint64_t ts) {
  SequenceData d;
  if (cfg.kind == io::ExperimentKind::kExternalSequence) {
    d.train = io::load_sequences(cfg.dataset);
    d.eval = cfg.eval_dataset.empty() ? d.train : io::load_sequences(cfg.eval_dataset);
    check_dims(cfg.model, d.train, cfg.dataset);
    check_dims(cfg.model, d.eval, cfg.eval_dataset.empty() ? cfg.dataset : cfg.eval_dataset);
    return d;
  }
  const auto& p = cfg.lds;
  const lds::LdsSystem sys = lds::random_lds(p.d_in, p.d_out, p.d_hidden, p.rho, derive_seed(ts, kSystem));
  d.train = lds::lds_dataset(sys, p.context, p.train_sequences, derive_seed(ts, kTrainData), p.include_outputs);
  d.eval = lds::lds_dataset(sys, p.context, p.eval_sequences, derive_seed(ts, kEvalData), p.include_outputs);
  return d;
}

TokenData token_data(const io::ExperimentConfig& cfg, std::uint64_t ts) {
  TokenData d;
  d.train = tasks::task_dataset(cfg.task.task, cfg.task.train_sequences, derive_seed(ts, kTrainData));
  d.eval = tasks::task_dataset(cfg.task.task, cfg.task.eval_sequences, derive_seed(ts, kEvalData));
  return d;
}

nn::Model trial_model(const io::ExperimentConfig& cfg, std::uint64_t ts) {
  return nn::build_model(cfg.model, nn::bank_for(cfg.model), derive_seed(ts, kInit));
}

train::TrainConfig train_config(const io::ExperimentConfig& cfg, std::uint64_t ts) {
  train::TrainConfig tc;
  tc.steps = cfg.steps;
  tc.batch = cfg.batch;
  tc.eval_period = cfg.eval_period;
  tc.seed = derive_seed(ts, kOrder);
  tc.optimizer = cfg.optimizer;
  tc.stop_at_metric = cfg.stop_at_metric;
  return tc;
}

BenchResult run_sequence_bench(const io::ExperimentConfig& cfg, const RunOptions& opts) {
  if (cfg.kind != io::ExperimentKind::kLds && cfg.kind != io::ExperimentKind::kExternalSequence)
    throw InvalidArgument("sequence bench needs an lds or external-sequence config, got " + io::to_string(cfg.kind));
  return run_bench<SequenceData>(cfg, opts, [&](std::uint64_t ts) { return sequence_data(cfg, ts); }, false);
}

BenchResult run_task_bench(const io::ExperimentConfig& cfg, const RunOptions& opts) {
  if (!is_token_kind(cfg.kind))
    throw InvalidArgument("task bench needs an induction, recall or copy config, got " + io::to_string(cfg.kind));
  return run_bench<TokenData>(cfg, opts, [&](std::uint64_t ts) { return token_data(cfg, ts); }, true);
}

LandscapeResult run_landscape(const io::ExperimentConfig& cfg, const RunOptions& opts) {
  if (cfg.kind != io::ExperimentKind::kLandscape)
    throw InvalidArgument("landscape run needs a landscape config, got " + io::to_string(cfg.kind));
  cfg.validate();
  const auto& lp = cfg.landscape;
  LandscapeResult out;
  out.config_hash = io::config_hash(cfg);
  const std::uint64_t ts = trial_seed(cfg.seed, 0);
  nn::Model model = trial_model(cfg, ts);
  train::TrainConfig tc = train_config(cfg, ts);
  tc.steps = lp.probe_steps;
  tc.eval_period = 0;
  tc.stop_at_metric.reset();

  landscape::LossFn loss;
  SequenceData seq;
  TokenData tok;
  if (lp.data == "lds") {
    seq = sequence_data(cfg, ts);
    seq.eval = select(seq.eval, first_n(std::min(lp.eval_sequences, seq.eval.count)));
    out.probe = train::train(model, seq.train, &seq.eval, tc);
    loss = [&] { return train::eval_next_step(model, seq.eval).loss; };
  } else {
    tok = token_data(cfg, ts);
    tok.eval = select(tok.eval, first_n(std::min(lp.eval_sequences, tok.eval.count)));
    out.probe = train::train(model, tok.train, &tok.eval, tc);
    loss = [&] { return train::eval_next_step(model, tok.eval).loss; };
  }
  if (out.probe.diverged) throw NumericFailure("landscape probe training diverged");

  nn::ParamList params = landscape::select_params(model.parameters(), lp.params);
  const landscape::DirectionPair dirs = landscape::random_directions(params, derive_seed(ts, kDirections));
  const auto axis = landscape::linspace(-lp.span, lp.span, lp.grid);
  out.loss = landscape::loss_slice_2d(params, loss, dirs, axis, axis);
  out.hessian = landscape::restricted_hessian_ratio(
      params, loss, dirs, axis, axis, lp.fd_step,
      lp.five_point ? landscape::Stencil::kFivePoint : landscape::Stencil::kThreePoint);
  out.min_eig_ratio = std::numeric_limits<double>::infinity();
  std::size_t degenerate = 0;
  for (const auto& c : out.hessian.cells) {
    if (c.degenerate) {
      ++degenerate;
      continue;
    }
    out.min_eig_ratio = std::min(out.min_eig_ratio, c.eig_lo / std::abs(c.eig_hi));
  }

  if (!opts.out_dir.empty()) {
    io::Json j = io::config_to_json(cfg);
    j["config_hash"] = out.config_hash;
    write_text(opts, "config.json", j.dump(2) + "\n");
    write_text(opts, "probe.csv", io::metrics_csv(out.probe, opts.deterministic));
    write_text(opts, "loss_grid.csv", io::grid_csv(out.loss));
    write_text(opts, "hessian_ratio.csv", io::grid_csv(out.hessian.ratio));
    write_text(opts, "loss_grid.svg", io::svg_heatmap(out.loss, "loss after " + std::to_string(lp.probe_steps) + " steps"));
    write_text(opts, "hessian_ratio.svg",
               io::svg_heatmap(out.hessian.ratio, "|lambda_min / lambda_max| after " + std::to_string(lp.probe_steps) +
                                                      " steps"));
    std::vector<std::string> names;
    for (const auto& p : params) names.push_back(p.name);
    io::Json meta{{"config_hash", out.config_hash},
                  {"direction_seed", dirs.seed},
                  {"normalization", dirs.normalization},
                  {"parameters", names},
                  {"probe_steps", lp.probe_steps},
                  {"fd_step", lp.fd_step},
                  {"stencil", lp.five_point ? "five-point" : "three-point"},
                  {"degenerate_cells", degenerate},
                  {"min_eig_ratio", io::format_double(out.min_eig_ratio)}};
    write_text(opts, "landscape.json", meta.dump(2) + "\n");
  }
  return out;
}

}  // namespace stulab::exp

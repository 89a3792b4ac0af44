// Command-line driver: filter banks, benchmarks, landscapes, gradient checks,
// checkpoint evaluation and plotting.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "stulab/error.hpp"
#include "stulab/experiments.hpp"
#include "stulab/gradcheck.hpp"
#include "stulab/io.hpp"
#include "stulab/spectral_filters.hpp"
#include "stulab/term.hpp"

namespace {

using namespace stulab;
namespace fs = std::filesystem;

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kNumeric = 2;

struct Globals {
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  bool quiet = false;
  bool color = false;
};

void say(const Globals& g, const std::string& line) {
  if (!g.quiet) std::cout << line << std::endl;
}

// Loads --config or the kind's defaults, then applies --seed.
io::ExperimentConfig resolve_config(const std::string& path, io::ExperimentKind kind, const Globals& g) {
  io::ExperimentConfig cfg = path.empty() ? io::default_config(kind) : io::load_config(path);
  if (g.seed) cfg.seed = *g.seed;
  return cfg;
}

exp::RunOptions run_options(const std::string& out, const Globals& g, bool checkpoints) {
  exp::RunOptions o;
  o.out_dir = out;
  o.deterministic = g.deterministic;
  o.write_checkpoints = checkpoints;
  if (!g.quiet) o.log = [](const std::string& line) { std::cout << line << std::endl; };
  return o;
}

// ---- filters -----------------------------------------------------------------

struct FiltersArgs {
  std::size_t length = 100;
  std::size_t count = 16;
  std::string out;
  std::string csv;
};

int cmd_filters(const FiltersArgs& a, const Globals& g) {
  const spectral::FilterBank bank = spectral::compute_filters(a.length, a.count);
  if (!a.out.empty()) io::save_checkpoint(a.out, io::bank_checkpoint(bank));
  if (!a.csv.empty()) {
    std::string text = "k,eigenvalue";
    for (std::size_t s = 0; s < bank.length; ++s) text += ",tap" + std::to_string(s);
    text += "\n";
    for (std::size_t k = 0; k < bank.count; ++k) {
      text += std::to_string(k) + "," + io::format_double(bank.eigenvalues[k]);
      for (std::size_t s = 0; s < bank.length; ++s) text += "," + io::format_double(bank.filters(k, s));
      text += "\n";
    }
    io::atomic_write(a.csv, text);
  }
  std::cout << "top eigenvalue: " << io::format_double(bank.eigenvalues.front()) << "\n";
  say(g, "filters: " + std::to_string(bank.count) + " x " + std::to_string(bank.length) +
             ", smallest kept eigenvalue " + io::format_double(bank.eigenvalues.back()) +
             (a.out.empty() ? "" : ", written to " + a.out));
  return kOk;
}

// ---- benchmarks ----------------------------------------------------------------

struct BenchArgs {
  std::string config;
  std::string out;
  std::string task = "induction";
  std::string block;
  std::optional<std::size_t> trials, steps;
  std::optional<double> lr;
  std::string export_data;
  bool no_checkpoints = false;
};

void apply_overrides(io::ExperimentConfig& cfg, const BenchArgs& a) {
  if (a.trials) cfg.trials = *a.trials;
  if (a.steps) cfg.steps = *a.steps;
  if (a.lr) cfg.optimizer.lr = *a.lr;
  if (!a.block.empty()) cfg.model.block_kind = nn::parse_block_kind(a.block);
}

int report_bench(const exp::BenchResult& r, const std::string& out, const Globals& g, bool tokens) {
  std::size_t diverged = 0;
  for (const auto& t : r.trials) diverged += t.report.diverged ? 1 : 0;
  if (!r.aggregate.mean.empty()) {
    say(g, std::string(tokens ? "final accuracy" : "final loss ratio") + " mean " +
               io::format_double(r.aggregate.mean.back()) + " std " + io::format_double(r.aggregate.stddev.back()) +
               " over " + std::to_string(r.trials.size()) + " trials");
  }
  if (!out.empty()) say(g, "artifacts in " + out + " (config hash " + r.config_hash + ")");
  if (diverged > 0) {
    std::cerr << "error: " << diverged << " trial(s) diverged\n";
    return kNumeric;
  }
  return kOk;
}

int cmd_lds_bench(const BenchArgs& a, const Globals& g) {
  io::ExperimentConfig cfg = resolve_config(a.config, io::ExperimentKind::kLds, g);
  apply_overrides(cfg, a);
  if (!a.export_data.empty()) {
    const auto data = exp::sequence_data(cfg, exp::trial_seed(cfg.seed, 0));
    io::save_sequences(fs::path(a.export_data) / "train.seq", data.train);
    io::save_sequences(fs::path(a.export_data) / "eval.seq", data.eval);
    say(g, "trial 0 data written to " + a.export_data);
  }
  const auto r = exp::run_sequence_bench(cfg, run_options(a.out, g, !a.no_checkpoints));
  return report_bench(r, a.out, g, false);
}

int cmd_task_bench(const BenchArgs& a, const Globals& g) {
  io::ExperimentConfig cfg = resolve_config(a.config, io::parse_experiment_kind(a.task), g);
  apply_overrides(cfg, a);
  if (!a.export_data.empty()) {
    const auto data = exp::token_data(cfg, exp::trial_seed(cfg.seed, 0));
    io::save_tokens(fs::path(a.export_data) / "train.tok", data.train);
    io::save_tokens(fs::path(a.export_data) / "eval.tok", data.eval);
    say(g, "trial 0 data written to " + a.export_data);
  }
  const auto r = exp::run_task_bench(cfg, run_options(a.out, g, !a.no_checkpoints));
  return report_bench(r, a.out, g, true);
}

// ---- landscape -------------------------------------------------------------------

struct LandscapeArgs {
  std::string config;
  std::string out;
  std::optional<std::size_t> probe_steps, grid;
  std::optional<double> span;
};

int cmd_landscape(const LandscapeArgs& a, const Globals& g) {
  io::ExperimentConfig cfg = resolve_config(a.config, io::ExperimentKind::kLandscape, g);
  if (a.probe_steps) cfg.landscape.probe_steps = *a.probe_steps;
  if (a.grid) cfg.landscape.grid = *a.grid;
  if (a.span) cfg.landscape.span = *a.span;
  const auto r = exp::run_landscape(cfg, run_options(a.out, g, false));
  say(g, "probe: " + std::to_string(r.probe.loss.size()) + " steps, final train loss " +
             (r.probe.loss.empty() ? std::string("n/a") : io::format_double(r.probe.loss.back())));
  say(g, "min eig_lo/|eig_hi| over cells: " + io::format_double(r.min_eig_ratio));
  if (!a.out.empty()) say(g, "grids written to " + a.out);
  return kOk;
}

// ---- grad-check ----------------------------------------------------------------

struct GradArgs {
  bool all = false;
  std::vector<std::string> layers;
  double tolerance = 1e-5;
};

int cmd_grad_check(const GradArgs& a, const Globals& g) {
  const std::uint64_t seed = g.seed.value_or(0);
  std::vector<nn::LayerCheck> checks;
  if (a.all || a.layers.empty()) {
    checks = nn::check_all_layers(seed, a.tolerance);
  } else {
    for (const auto& l : a.layers) checks.push_back(nn::check_layer(l, seed, a.tolerance));
  }
  bool ok = true;
  for (const auto& c : checks) {
    ok = ok && c.passed;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-10s max rel error %.3e", c.layer.c_str(), c.max_rel_error);
    std::cout << term::pass_fail(c.passed, g.color) << "  " << buf << "\n";
  }
  return ok ? kOk : kNumeric;
}

// ---- eval ------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string mode = "next-step";
  std::size_t horizon = 10;
  std::optional<std::size_t> warmup;
  std::string config;
  std::string out;
};

int cmd_eval(const EvalArgs& a, const Globals& g) {
  std::optional<std::string> hash;
  if (!a.config.empty()) hash = io::config_hash(io::load_config(a.config));
  const io::Checkpoint ckpt = io::load_checkpoint(a.checkpoint, hash);
  const nn::Model model = io::model_from_checkpoint(ckpt);
  const std::string manifest = io::read_file(a.data).substr(0, 64);
  if (manifest.find("stulab-tokens") != std::string::npos) {
    if (a.mode != "next-step") throw InvalidArgument("token data supports only --mode next-step");
    const TokenDataset tokens = io::load_tokens(a.data);
    if (model.config().vocab != tokens.vocab)
      throw FormatError(a.data + ": vocabulary " + std::to_string(tokens.vocab) + " does not match the checkpoint's model (" +
                        std::to_string(model.config().vocab) + ")");
    const auto r = train::eval_next_step(model, tokens);
    std::cout << "loss " << io::format_double(r.loss) << " accuracy " << io::format_double(r.metric) << "\n";
    return kOk;
  }
  const SequenceDataset data = io::load_sequences(a.data);
  const auto& m = model.config();
  if (m.input_dim != data.input_dim || m.output_dim != data.target_dim)
    throw FormatError(a.data + ": dimensions do not match the checkpoint's model");
  if (a.mode == "next-step") {
    const auto r = train::eval_next_step(model, data);
    std::cout << "loss " << io::format_double(r.loss) << " ratio_to_zero_predictor " << io::format_double(r.metric)
              << "\n";
  } else if (a.mode == "autoregressive") {
    const auto curve = train::eval_autoregressive(model, data, a.horizon, a.warmup);
    std::string csv = "horizon,loss\n";
    for (std::size_t h = 0; h < curve.size(); ++h) {
      csv += std::to_string(h + 1) + "," + io::format_double(curve[h]) + "\n";
      if (a.out.empty()) std::cout << "h=" << h + 1 << " loss " << io::format_double(curve[h]) << "\n";
    }
    if (!a.out.empty()) {
      io::atomic_write(a.out, csv);
      say(g, "curve written to " + a.out);
    }
  } else {
    throw InvalidArgument("--mode must be next-step or autoregressive");
  }
  return kOk;
}

// ---- plot ------------------------------------------------------------------------

struct PlotArgs {
  std::string csv;
  std::string out;
  std::string x = "step";
  std::vector<std::string> y;
  bool log_y = false;
  bool heatmap = false;
  std::string title;
};

std::size_t column_index(const io::CsvTable& t, const std::string& name) {
  for (std::size_t i = 0; i < t.header.size(); ++i)
    if (t.header[i] == name) return i;
  throw InvalidArgument("column '" + name + "' not in the CSV header");
}

int cmd_plot(const PlotArgs& a, const Globals& g) {
  const io::CsvTable t = io::parse_csv(io::read_file(a.csv));
  const std::string title = a.title.empty() ? fs::path(a.csv).filename().string() : a.title;
  std::string svg;
  if (a.heatmap) {
    // x,y,value[,flagged] rows on a full rectangular grid
    const auto& xs = t.columns[column_index(t, "x")];
    const auto& ys = t.columns[column_index(t, "y")];
    const auto& vs = t.columns[column_index(t, "value")];
    landscape::LandscapeGrid grid;
    for (double x : xs)
      if (std::find(grid.x_steps.begin(), grid.x_steps.end(), x) == grid.x_steps.end()) grid.x_steps.push_back(x);
    for (double y : ys)
      if (std::find(grid.y_steps.begin(), grid.y_steps.end(), y) == grid.y_steps.end()) grid.y_steps.push_back(y);
    std::sort(grid.x_steps.begin(), grid.x_steps.end());
    std::sort(grid.y_steps.begin(), grid.y_steps.end());
    if (grid.x_steps.size() * grid.y_steps.size() != vs.size()) throw FormatError(a.csv + ": not a full grid");
    grid.values.assign(vs.size(), 0.0);
    grid.flagged.assign(vs.size(), 1);
    for (std::size_t i = 0; i < vs.size(); ++i) {
      const auto ia = static_cast<std::size_t>(std::lower_bound(grid.x_steps.begin(), grid.x_steps.end(), xs[i]) -
                                               grid.x_steps.begin());
      const auto ib = static_cast<std::size_t>(std::lower_bound(grid.y_steps.begin(), grid.y_steps.end(), ys[i]) -
                                               grid.y_steps.begin());
      const std::size_t cell = ia * grid.y_steps.size() + ib;
      grid.values[cell] = vs[i];
      const bool flagged = std::find(t.header.begin(), t.header.end(), "flagged") != t.header.end() &&
                           t.columns[column_index(t, "flagged")][i] != 0.0;
      grid.flagged[cell] = (flagged || !std::isfinite(vs[i])) ? 1 : 0;
    }
    svg = io::svg_heatmap(grid, title);
  } else {
    const auto& xs = t.columns[column_index(t, a.x)];
    std::vector<std::string> ys = a.y;
    if (ys.empty()) {
      for (const auto& h : t.header)
        if (h != a.x && h != "wall_ms") ys.push_back(h);
    }
    std::vector<io::Series> series;
    for (const auto& name : ys) series.push_back({name, xs, t.columns[column_index(t, name)]});
    svg = io::svg_line_plot(series, title, a.x, ys.size() == 1 ? ys.front() : "value", a.log_y);
  }
  io::atomic_write(a.out, svg);
  say(g, "plot written to " + a.out);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spectral state space model lab: filters, benchmarks, landscapes, checks"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Base seed (overrides the config)");
  app.add_flag("--deterministic", g.deterministic, "Write wall-clock columns as 0 so reruns are byte-identical");
  app.add_flag("-q,--quiet", g.quiet, "Only print results");

  FiltersArgs fa;
  auto* filters = app.add_subcommand("filters", "Compute a spectral filter bank");
  filters->add_option("--len", fa.length, "Filter length L")->check(CLI::PositiveNumber);
  filters->add_option("--k", fa.count, "Number of filters K")->check(CLI::PositiveNumber);
  filters->add_option("--out", fa.out, "Write the bank as a checkpoint file");
  filters->add_option("--csv", fa.csv, "Write eigenvalues and taps as CSV");

  BenchArgs la;
  auto* lds_bench = app.add_subcommand("lds-bench", "Train on random linear dynamical systems over seeded trials");
  lds_bench->add_option("--config", la.config, "Experiment config JSON (kind lds or external-sequence)");
  lds_bench->add_option("--out", la.out, "Artifact directory");
  lds_bench->add_option("--block", la.block, "Override the block kind (stu, stu_t, attention, s4d)");
  lds_bench->add_option("--trials", la.trials, "Override the trial count");
  lds_bench->add_option("--steps", la.steps, "Override the step count");
  lds_bench->add_option("--lr", la.lr, "Override the learning rate");
  lds_bench->add_option("--export-data", la.export_data, "Also write trial 0's train/eval sequences to this directory");
  lds_bench->add_flag("--no-checkpoints", la.no_checkpoints, "Skip checkpoint files");

  BenchArgs ta;
  auto* task_bench = app.add_subcommand("task-bench", "Train on a synthetic token task over seeded trials");
  task_bench->add_option("--config", ta.config, "Experiment config JSON");
  task_bench->add_option("--task", ta.task, "Task when no config is given")
      ->check(CLI::IsMember({"induction", "recall", "copy"}));
  task_bench->add_option("--out", ta.out, "Artifact directory");
  task_bench->add_option("--block", ta.block, "Override the block kind");
  task_bench->add_option("--trials", ta.trials, "Override the trial count");
  task_bench->add_option("--steps", ta.steps, "Override the step count");
  task_bench->add_option("--lr", ta.lr, "Override the learning rate");
  task_bench->add_option("--export-data", ta.export_data, "Also write trial 0's train/eval tokens to this directory");
  task_bench->add_flag("--no-checkpoints", ta.no_checkpoints, "Skip checkpoint files");

  LandscapeArgs lsa;
  auto* land = app.add_subcommand("landscape", "Probe the loss surface and restricted Hessian after a short training run");
  land->add_option("--config", lsa.config, "Experiment config JSON (kind landscape)");
  land->add_option("--out", lsa.out, "Artifact directory");
  land->add_option("--probe-steps", lsa.probe_steps, "Training steps before probing");
  land->add_option("--grid", lsa.grid, "Grid points per axis")->check(CLI::PositiveNumber);
  land->add_option("--span", lsa.span, "Axes cover [-span, span]");

  GradArgs ga;
  auto* grad = app.add_subcommand("grad-check", "Finite-difference gradient checks for every layer");
  grad->add_flag("--all", ga.all, "Check every layer (default)");
  grad->add_option("--layer", ga.layers, "Check only these layers")->check(CLI::IsMember(nn::checkable_layers()));
  grad->add_option("--tol", ga.tolerance, "Relative error tolerance");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Evaluate a model checkpoint on a dataset file");
  eval->add_option("--checkpoint", ea.checkpoint, "Model checkpoint")->required();
  eval->add_option("--data", ea.data, "Sequence or token dataset file")->required();
  eval->add_option("--mode", ea.mode, "next-step or autoregressive")
      ->check(CLI::IsMember({"next-step", "autoregressive"}));
  eval->add_option("--horizon", ea.horizon, "Autoregressive horizon");
  eval->add_option("--warmup", ea.warmup, "Ground-truth steps before feedback (default: half the length)");
  eval->add_option("--config", ea.config, "Refuse checkpoints trained under a different config");
  eval->add_option("--out", ea.out, "Write the autoregressive curve as CSV");

  PlotArgs pa;
  auto* plot = app.add_subcommand("plot", "Render a CSV as an SVG line plot or heat map");
  plot->add_option("csv", pa.csv, "Input CSV")->required();
  plot->add_option("--out", pa.out, "Output SVG")->required();
  plot->add_option("--x", pa.x, "X column for line plots");
  plot->add_option("--y", pa.y, "Y columns (default: all but x and wall_ms)");
  plot->add_flag("--log", pa.log_y, "Logarithmic y axis");
  plot->add_flag("--heatmap", pa.heatmap, "Treat the CSV as an x,y,value grid");
  plot->add_option("--title", pa.title, "Plot title");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    if (e.get_exit_code() != 0) std::cerr << "\n" << app.help();
    return e.get_exit_code() == 0 ? kOk : kUsage;
  }
  g.color = term::use_color();

  try {
    if (*filters) return cmd_filters(fa, g);
    if (*lds_bench) return cmd_lds_bench(la, g);
    if (*task_bench) return cmd_task_bench(ta, g);
    if (*land) return cmd_landscape(lsa, g);
    if (*grad) return cmd_grad_check(ga, g);
    if (*eval) return cmd_eval(ea, g);
    if (*plot) return cmd_plot(pa, g);
  } catch (const NumericFailure& e) {
    std::cerr << term::paint("error", "31", g.color) << ": " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << term::paint("error", "31", g.color) << ": " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}

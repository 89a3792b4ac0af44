#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "stulab/io.hpp"
#include "stulab/landscape.hpp"
#include "stulab/training.hpp"

namespace stulab::exp {

namespace fs = std::filesystem;

struct RunOptions {
  /// Artifacts go here; empty runs in memory only.
  fs::path out_dir;
  /// Writes wall-clock columns as 0 so reruns produce identical files.
  bool deterministic = false;
  bool write_checkpoints = true;
  /// Progress lines (one per finished trial); may be empty.
  std::function<void(const std::string&)> log;
};

struct TrialResult {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  train::TrainReport report;
  /// Last evaluation: loss ratio to the zero predictor (sequences) or accuracy (tokens).
  double final_metric = 0.0;
  double final_loss = 0.0;
};

struct BenchResult {
  std::string config_hash;
  std::vector<TrialResult> trials;
  /// Evaluation metric over trials at every eval step; trials that stopped
  /// early carry their last value forward.
  std::vector<std::size_t> eval_steps;
  train::TrialAggregate aggregate;
};

/// Seed of trial `trial` under base seed `base`.
std::uint64_t trial_seed(std::uint64_t base, std::size_t trial);

/// Per-trial data the sequence bench trains on: an LDS drawn from the trial
/// seed (kLds) or the configured dataset files (kExternalSequence).
struct SequenceData {
  SequenceDataset train;
  SequenceDataset eval;
};
SequenceData sequence_data(const io::ExperimentConfig& cfg, std::uint64_t trial_seed);

struct TokenData {
  TokenDataset train;
  TokenDataset eval;
};
TokenData token_data(const io::ExperimentConfig& cfg, std::uint64_t trial_seed);

/// Builds the model for a trial (bank from the config's filter shape).
nn::Model trial_model(const io::ExperimentConfig& cfg, std::uint64_t trial_seed);

train::TrainConfig train_config(const io::ExperimentConfig& cfg, std::uint64_t trial_seed);

/// LDS or external-sequence training over cfg.trials seeded trials. Writes
/// config.json, trial_<i>.csv, trial_<i>.ckpt (+ trial_<i>.best.ckpt on eval
/// improvements), aggregate.csv, summary.json and curves.svg.
BenchResult run_sequence_bench(const io::ExperimentConfig& cfg, const RunOptions& opts);

/// Token-task training (induction, recall, copy); same artifacts.
BenchResult run_task_bench(const io::ExperimentConfig& cfg, const RunOptions& opts);

struct LandscapeResult {
  std::string config_hash;
  train::TrainReport probe;
  landscape::LandscapeGrid loss;
  landscape::HessianGrid hessian;
  double min_eig_ratio = 0.0;  // min over cells of eig_lo / |eig_hi|
};

/// Trains landscape.probe_steps steps, then records the loss slice and the
/// restricted-Hessian ratio grid over the selected parameters. Writes
/// probe.csv, loss_grid.csv/.svg, hessian_ratio.csv/.svg and landscape.json.
LandscapeResult run_landscape(const io::ExperimentConfig& cfg, const RunOptions& opts);

}  // namespace stulab::exp

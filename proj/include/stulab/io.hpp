#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "stulab/dataset.hpp"
#include "stulab/landscape.hpp"
#include "stulab/layers.hpp"
#include "stulab/synth_tasks.hpp"
#include "stulab/training.hpp"

namespace stulab::io {

using Json = nlohmann::json;
namespace fs = std::filesystem;

// ---- experiment configuration --------------------------------------------------------

enum class ExperimentKind { kLds, kInduction, kRecall, kCopy, kLandscape, kFilters, kGradCheck, kExternalSequence };

std::string to_string(ExperimentKind kind);
ExperimentKind parse_experiment_kind(const std::string& name);

struct LdsParams {
  std::size_t d_in = 5;
  std::size_t d_out = 5;
  std::size_t d_hidden = 256;
  double rho = 0.99;
  std::size_t context = 100;
  std::size_t train_sequences = 512;
  std::size_t eval_sequences = 64;
  bool include_outputs = false;
};

struct TaskDataParams {
  tasks::TaskParams task;
  std::size_t train_sequences = 16384;
  std::size_t eval_sequences = 512;
};

struct LandscapeParams {
  /// "lds" or a token task name; selects the data the probe trains on.
  std::string data = "lds";
  std::size_t probe_steps = 10;
  std::size_t grid = 11;        // points per axis
  double span = 1.0;            // axes run over [-span, span]
  double fd_step = 1e-3;
  bool five_point = false;
  std::vector<std::string> params;  // name prefixes; empty = all parameters
  std::size_t eval_sequences = 16;  // sequences the probed loss averages over
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::kLds;
  std::uint64_t seed = 0;
  std::size_t trials = 1;
  std::size_t steps = 1000;
  std::size_t batch = 8;
  std::size_t eval_period = 100;
  std::optional<double> stop_at_metric;
  nn::ModelConfig model;
  train::OptimizerConfig optimizer;
  LdsParams lds;
  TaskDataParams task;
  LandscapeParams landscape;
  /// External sequence dataset for kExternalSequence; eval data defaults to it.
  std::string dataset;
  std::string eval_dataset;

  /// Throws InvalidArgument naming the first inconsistent setting.
  void validate() const;
};

/// Parses a config object. Keys absent from the JSON keep their defaults;
/// unknown keys raise FormatError naming the key path.
ExperimentConfig config_from_json(const Json& j);
Json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const fs::path& path);

/// Defaults for an experiment kind (the LDS and induction protocols).
ExperimentConfig default_config(ExperimentKind kind);

/// FNV-1a 64 of the canonical (sorted-key, compact) config JSON, as 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);

// ---- files ----------------------------------------------------------------------------

/// Writes to a temporary sibling and renames it over `path`.
void atomic_write(const fs::path& path, const std::string& bytes);
std::string read_file(const fs::path& path);

// ---- checkpoints ------------------------------------------------------------------------

struct TensorEntry {
  std::string name;
  ad::Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  static constexpr int kVersion = 1;
  std::string kind;  // "model" or "bank"
  std::vector<TensorEntry> entries;
  Json meta = Json::object();  // bank metadata, model config
  std::string config_hash;
  std::uint64_t seed = 0;
};

/// One JSON manifest line followed by the entries' little-endian f64 payloads.
std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);
void save_checkpoint(const fs::path& path, const Checkpoint& ckpt);
/// Throws FormatError on a bad manifest, version, shape or truncated payload,
/// and when `expected_hash` is given and differs from the recorded hash.
Checkpoint load_checkpoint(const fs::path& path, std::optional<std::string> expected_hash = std::nullopt);

Checkpoint bank_checkpoint(const spectral::FilterBank& bank);
spectral::FilterBank bank_from_checkpoint(const Checkpoint& ckpt);

/// Stores every parameter, the filter bank and the model config.
Checkpoint model_checkpoint(const nn::Model& model, const std::string& config_hash, std::uint64_t seed);
/// Copies parameter values into `model`; names and shapes must match exactly.
void load_parameters(nn::Model& model, const Checkpoint& ckpt);
/// Rebuilds the model (config and bank from the checkpoint) and loads its parameters.
nn::Model model_from_checkpoint(const Checkpoint& ckpt);

Json model_config_to_json(const nn::ModelConfig& cfg);
nn::ModelConfig model_config_from_json(const Json& j);

// ---- sequence files --------------------------------------------------------------------

std::string encode_sequences(const SequenceDataset& data);
SequenceDataset decode_sequences(const std::string& bytes);
std::string encode_tokens(const TokenDataset& data);
TokenDataset decode_tokens(const std::string& bytes);

void save_sequences(const fs::path& path, const SequenceDataset& data);
SequenceDataset load_sequences(const fs::path& path);
void save_tokens(const fs::path& path, const TokenDataset& data);
TokenDataset load_tokens(const fs::path& path);

// ---- CSV --------------------------------------------------------------------------------

/// Columns step,loss,eval_loss,eval_metric,wall_ms. One row per training step
/// plus a step-0 row when an initial evaluation exists; missing values are
/// empty. `zero_wall_clock` writes wall_ms as 0 so reruns are byte-identical.
std::string metrics_csv(const train::TrainReport& report, bool zero_wall_clock);

/// Columns step,mean,std for an aggregate over trials.
std::string aggregate_csv(const std::vector<std::size_t>& steps, const train::TrialAggregate& agg);

/// Columns x,y,value,flagged.
std::string grid_csv(const landscape::LandscapeGrid& grid);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> columns;  // empty cells are NaN
};

/// Numeric CSV with a header row. Throws FormatError on ragged rows or
/// non-numeric cells.
CsvTable parse_csv(const std::string& text);

/// Shortest text that parses back to the same double ("nan", "inf" for
/// non-finite values).
std::string format_double(double v);

// ---- SVG --------------------------------------------------------------------------------

struct Series {
  std::string name;
  std::vector<double> x, y;
};

/// Line plot; non-finite points (and non-positive ones under log_y) break the line.
std::string svg_line_plot(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                          const std::string& y_label, bool log_y);

/// Heat map of a grid with x along columns and y along rows (y grows upward).
/// Color ramp, low to high: #440154 #3b528b #21918c #5ec962 #fde725, linear
/// in value between the grid's finite min and max; flagged cells are grey
/// (#808080). A constant grid uses the lowest ramp color everywhere.
std::string svg_heatmap(const landscape::LandscapeGrid& grid, const std::string& title);

/// Ramp color for t in [0, 1] as "#rrggbb".
std::string ramp_color(double t);

}  // namespace stulab::io

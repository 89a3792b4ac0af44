#include "stulab/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <unistd.h>

#include "stulab/error.hpp"

namespace stulab::io {

// ---- enums ---------------------------------------------------------------------------

namespace {

const std::vector<std::pair<ExperimentKind, std::string>> kKindNames = {
    {ExperimentKind::kLds, "lds"},
    {ExperimentKind::kInduction, "induction"},
    {ExperimentKind::kRecall, "recall"},
    {ExperimentKind::kCopy, "copy"},
    {ExperimentKind::kLandscape, "landscape"},
    {ExperimentKind::kFilters, "filters"},
    {ExperimentKind::kGradCheck, "gradcheck"},
    {ExperimentKind::kExternalSequence, "external-sequence"},
};

bool is_token_kind(ExperimentKind k) {
  return k == ExperimentKind::kInduction || k == ExperimentKind::kRecall || k == ExperimentKind::kCopy;
}

tasks::TaskKind task_kind_for(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::kRecall: return tasks::TaskKind::kRecall;
    case ExperimentKind::kCopy: return tasks::TaskKind::kCopy;
    default: return tasks::TaskKind::kInduction;
  }
}

std::string activation_name(nn::Activation a) { return a == nn::Activation::kRelu ? "relu" : "identity"; }

nn::Activation parse_activation(const std::string& s) {
  if (s == "identity" || s == "none") return nn::Activation::kIdentity;
  if (s == "relu") return nn::Activation::kRelu;
  throw FormatError("unknown activation '" + s + "' (expected identity or relu)");
}

// Reads keys of one JSON object and rejects any key it was not asked about.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw FormatError("config: '" + label() + "' must be an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("config: bad value for '" + path_ + key + "': " + e.what());
    }
  }

  template <class T>
  void get_optional(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    if (j_.at(key).is_null()) {
      out.reset();
      return;
    }
    T v{};
    get(key, v);
    out = v;
  }

  const Json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw FormatError("config: unknown key '" + path_ + item.key() + "'");
    }
  }

 private:
  std::string label() const { return path_.empty() ? "<root>" : path_.substr(0, path_.size() - 1); }

  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_model(const Json& j, nn::ModelConfig& m, const std::string& path) {
  ObjectReader r(j, path);
  std::string block = nn::to_string(m.block_kind), act = activation_name(m.activation);
  r.get("block", block);
  try {
    m.block_kind = nn::parse_block_kind(block);
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  r.get("input_dim", m.input_dim);
  r.get("vocab", m.vocab);
  r.get("output_dim", m.output_dim);
  r.get("width", m.width);
  r.get("depth", m.depth);
  r.get("mlp_scale", m.mlp_scale);
  r.get("use_moe", m.use_moe);
  r.get("n_experts", m.n_experts);
  r.get("top_k", m.top_k);
  r.get("n_filters", m.n_filters);
  r.get("filter_length", m.filter_length);
  r.get("n_heads", m.n_heads);
  r.get("learnable_filters", m.learnable_filters);
  r.get("global_skips", m.global_skips);
  r.get("alternating_filters", m.alternating_filters);
  r.get("single_layer", m.single_layer);
  r.get("activation", act);
  m.activation = parse_activation(act);
  r.get("s4d_state", m.s4d_state);
  r.get("positional_length", m.positional_length);
  r.get("norm_eps", m.norm_eps);
  r.finish();
}

void read_optimizer(const Json& j, train::OptimizerConfig& o) {
  ObjectReader r(j, "optimizer.");
  std::string kind = train::to_string(o.kind);
  r.get("kind", kind);
  try {
    o.kind = train::parse_optimizer_kind(kind);
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  r.get("lr", o.lr);
  r.get("beta1", o.beta1);
  r.get("beta2", o.beta2);
  r.get("eps", o.eps);
  r.get("alpha", o.alpha);
  r.get("weight_decay", o.weight_decay);
  r.get("clip_norm", o.clip_norm);
  r.finish();
}

void read_lds(const Json& j, LdsParams& p) {
  ObjectReader r(j, "lds.");
  r.get("d_in", p.d_in);
  r.get("d_out", p.d_out);
  r.get("d_hidden", p.d_hidden);
  r.get("rho", p.rho);
  r.get("context", p.context);
  r.get("train_sequences", p.train_sequences);
  r.get("eval_sequences", p.eval_sequences);
  r.get("include_outputs", p.include_outputs);
  r.finish();
}

void read_task(const Json& j, TaskDataParams& p) {
  ObjectReader r(j, "task.");
  r.get("length", p.task.length);
  r.get("vocab", p.task.vocab);
  r.get("n_tokens", p.task.n_tokens);
  r.get("n_pairs", p.task.n_pairs);
  r.get("train_sequences", p.train_sequences);
  r.get("eval_sequences", p.eval_sequences);
  r.finish();
}

void read_landscape(const Json& j, LandscapeParams& p) {
  ObjectReader r(j, "landscape.");
  r.get("data", p.data);
  r.get("probe_steps", p.probe_steps);
  r.get("grid", p.grid);
  r.get("span", p.span);
  r.get("fd_step", p.fd_step);
  r.get("five_point", p.five_point);
  r.get("params", p.params);
  r.get("eval_sequences", p.eval_sequences);
  r.finish();
}

// Kind-derived model dimensions, applied unless the config sets them explicitly.
void derive_dimensions(ExperimentConfig& cfg, bool has_input, bool has_output, bool has_vocab) {
  if (is_token_kind(cfg.kind) || (cfg.kind == ExperimentKind::kLandscape && cfg.landscape.data != "lds")) {
    const std::size_t total = tasks::special_tokens(cfg.task.task.kind, cfg.task.task.vocab).vocab_total;
    if (!has_vocab) cfg.model.vocab = total;
    if (!has_output) cfg.model.output_dim = total;
  } else if (cfg.kind == ExperimentKind::kLds || cfg.kind == ExperimentKind::kLandscape) {
    if (!has_input) cfg.model.input_dim = cfg.lds.d_in + (cfg.lds.include_outputs ? cfg.lds.d_out : 0);
    if (!has_output) cfg.model.output_dim = cfg.lds.d_out;
  }
}

}  // namespace

// ---- binary payloads ------------------------------------------------------------------

namespace {

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

void put_f64(std::string& out, std::span<const double> values) {
  for (double v : values) put_u64(out, std::bit_cast<std::uint64_t>(v));
}

void put_i64(std::string& out, std::span<const std::int64_t> values) {
  for (auto v : values) put_u64(out, static_cast<std::uint64_t>(v));
}

// Splits "manifest\npayload" and parses the manifest.
std::pair<Json, std::string_view> split_manifest(const std::string& bytes, const char* what) {
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) throw FormatError(std::string(what) + ": missing manifest line");
  Json m;
  try {
    m = Json::parse(bytes.substr(0, nl));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string(what) + ": corrupt manifest: " + e.what());
  }
  if (!m.is_object()) throw FormatError(std::string(what) + ": corrupt manifest: not an object");
  return {std::move(m), std::string_view(bytes).substr(nl + 1)};
}

template <class T>
T manifest_field(const Json& m, const char* key, const char* what) {
  if (!m.contains(key)) throw FormatError(std::string(what) + ": manifest lacks '" + key + "'");
  try {
    return m.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string(what) + ": manifest field '" + key + "': " + e.what());
  }
}

void check_header(const Json& m, const char* format, const char* what) {
  if (manifest_field<std::string>(m, "format", what) != format)
    throw FormatError(std::string(what) + ": not a " + format + " file");
  const int version = manifest_field<int>(m, "version", what);
  if (version != 1) throw FormatError(std::string(what) + ": unsupported version " + std::to_string(version));
}

// Manifest line of a sequence file, without reading its payload.
Json sequence_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  auto [m, payload] = split_manifest(line + "\n", "sequence file");
  check_header(m, "stulab-sequences", "sequence file");
  return m;
}

// Sequential reader over a payload that names the entry on truncation.
class PayloadReader {
 public:
  PayloadReader(std::string_view payload, const char* what) : p_(payload), what_(what) {}

  std::vector<double> f64(std::size_t n, const std::string& entry) {
    need(n, entry);
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = std::bit_cast<double>(get_u64(p_.data() + pos_ + 8 * i));
    pos_ += 8 * n;
    return v;
  }

  std::vector<std::int64_t> i64(std::size_t n, const std::string& entry) {
    need(n, entry);
    std::vector<std::int64_t> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<std::int64_t>(get_u64(p_.data() + pos_ + 8 * i));
    pos_ += 8 * n;
    return v;
  }

  void finish() const {
    if (pos_ != p_.size()) {
      throw FormatError(std::string(what_) + ": " + std::to_string(p_.size() - pos_) + " unexpected trailing bytes");
    }
  }

 private:
  void need(std::size_t n, const std::string& entry) const {
    if (n > (p_.size() - pos_) / 8) {
      throw FormatError(std::string(what_) + ": payload truncated in entry '" + entry + "' (needs " +
                        std::to_string(8 * n) + " bytes, " + std::to_string(p_.size() - pos_) + " left)");
    }
  }

  std::string_view p_;
  const char* what_;
  std::size_t pos_ = 0;
};

std::size_t shape_product(const ad::Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

}  // namespace

std::string to_string(ExperimentKind kind) {
  for (const auto& [k, name] : kKindNames)
    if (k == kind) return name;
  return "unknown";
}

ExperimentKind parse_experiment_kind(const std::string& name) {
  for (const auto& [k, n] : kKindNames)
    if (n == name) return k;
  std::string all;
  for (const auto& [k, n] : kKindNames) all += (all.empty() ? "" : ", ") + n;
  throw InvalidArgument("unknown experiment kind '" + name + "' (expected one of " + all + ")");
}

// ---- configuration ------------------------------------------------------------------

ExperimentConfig default_config(ExperimentKind kind) {
  ExperimentConfig c;
  c.kind = kind;
  if (is_token_kind(kind)) {
    c.task.task.kind = task_kind_for(kind);
    c.task.task.length = 64;
    c.task.task.vocab = 10;
    c.model.block_kind = nn::BlockKind::kStuT;
    c.model.depth = 2;
    c.model.width = 32;
    c.model.filter_length = c.task.task.length;
    c.optimizer.kind = train::OptimizerKind::kAdam;
    c.optimizer.lr = 0.0024;
    c.steps = 3000;
    c.batch = 64;
    c.eval_period = 100;
    c.stop_at_metric = 0.95;
    c.trials = 8;
  } else {
    c.model.block_kind = nn::BlockKind::kStu;
    c.model.single_layer = true;
    c.model.width = 32;
    c.model.alternating_filters = true;
    c.model.filter_length = c.lds.context;
    c.optimizer.kind = train::OptimizerKind::kRmsProp;
    c.optimizer.lr = 0.002;
    c.steps = 5000;
    c.batch = 8;
    c.eval_period = 500;
    c.trials = 16;
    if (kind == ExperimentKind::kLandscape) {
      c.trials = 1;
      c.steps = c.landscape.probe_steps;
      c.lds.train_sequences = 64;
      c.landscape.params = {"blocks.0.stu.m"};
    }
    if (kind == ExperimentKind::kExternalSequence) {
      c.model.alternating_filters = false;
      c.trials = 1;
    }
  }
  derive_dimensions(c, false, false, false);
  return c;
}

void ExperimentConfig::validate() const {
  model.validate();
  if (trials == 0) throw InvalidArgument("config: trials must be at least 1");
  if (batch == 0) throw InvalidArgument("config: batch must be at least 1");
  if (!(optimizer.lr > 0.0)) throw InvalidArgument("config: optimizer.lr must be positive");
  if (kind == ExperimentKind::kLds || (kind == ExperimentKind::kLandscape && landscape.data == "lds")) {
    if (lds.train_sequences == 0 || lds.eval_sequences == 0)
      throw InvalidArgument("config: lds.train_sequences and lds.eval_sequences must be positive");
    const std::size_t want_in = lds.d_in + (lds.include_outputs ? lds.d_out : 0);
    if (model.vocab != 0 || model.input_dim != want_in || model.output_dim != lds.d_out) {
      throw InvalidArgument("config: model dimensions (" + std::to_string(model.input_dim) + " in, " +
                            std::to_string(model.output_dim) + " out) do not match the LDS (" +
                            std::to_string(want_in) + " in, " + std::to_string(lds.d_out) + " out)");
    }
  }
  if (is_token_kind(kind) || (kind == ExperimentKind::kLandscape && landscape.data != "lds")) {
    if (kind == ExperimentKind::kLandscape) tasks::parse_task_kind(landscape.data);
    const std::size_t total = tasks::special_tokens(task.task.kind, task.task.vocab).vocab_total;
    if (model.vocab != total || model.output_dim != total) {
      throw InvalidArgument("config: model vocab/output_dim must equal the task vocabulary " + std::to_string(total));
    }
    if (task.train_sequences == 0 || task.eval_sequences == 0)
      throw InvalidArgument("config: task.train_sequences and task.eval_sequences must be positive");
  }
  if (kind == ExperimentKind::kLandscape) {
    if (landscape.grid == 0) throw InvalidArgument("config: landscape.grid must be at least 1");
    if (!(landscape.fd_step > 0.0)) throw InvalidArgument("config: landscape.fd_step must be positive");
    if (!(landscape.span >= 0.0)) throw InvalidArgument("config: landscape.span must be non-negative");
    if (landscape.eval_sequences == 0) throw InvalidArgument("config: landscape.eval_sequences must be positive");
  }
  if (kind == ExperimentKind::kExternalSequence && dataset.empty())
    throw InvalidArgument("config: external-sequence experiments need a dataset path");
}

ExperimentConfig config_from_json(const Json& j) {
  if (!j.is_object()) throw FormatError("config: top level must be a JSON object");
  ExperimentKind kind = ExperimentKind::kLds;
  if (j.contains("kind")) {
    if (!j.at("kind").is_string()) throw FormatError("config: 'kind' must be a string");
    try {
      kind = parse_experiment_kind(j.at("kind").get<std::string>());
    } catch (const InvalidArgument& e) {
      throw FormatError(std::string("config: ") + e.what());
    }
  }
  ExperimentConfig c = default_config(kind);
  ObjectReader r(j, "");
  std::string kind_name;
  r.get("kind", kind_name);
  r.get("seed", c.seed);
  r.get("trials", c.trials);
  r.get("steps", c.steps);
  r.get("batch", c.batch);
  r.get("eval_period", c.eval_period);
  r.get_optional("stop_at_metric", c.stop_at_metric);
  r.get("dataset", c.dataset);
  r.get("eval_dataset", c.eval_dataset);
  if (const Json* t = r.child("task")) {
    read_task(*t, c.task);
  }
  c.task.task.kind = task_kind_for(kind);
  if (const Json* l = r.child("lds")) read_lds(*l, c.lds);
  if (const Json* l = r.child("landscape")) read_landscape(*l, c.landscape);
  if (kind == ExperimentKind::kLandscape) {
    if (c.landscape.data != "lds") {
      try {
        c.task.task.kind = tasks::parse_task_kind(c.landscape.data);
      } catch (const InvalidArgument& e) {
        throw FormatError(std::string("config: landscape.data: ") + e.what());
      }
    }
    if (!j.contains("steps")) c.steps = c.landscape.probe_steps;
  }
  // Context-derived model defaults follow the data unless overridden below.
  if (is_token_kind(kind)) c.model.filter_length = c.task.task.length;
  if (kind == ExperimentKind::kLds || kind == ExperimentKind::kLandscape) {
    c.model.filter_length = c.landscape.data == "lds" || kind == ExperimentKind::kLds ? c.lds.context : c.task.task.length;
  }
  std::optional<Json> external;
  if (kind == ExperimentKind::kExternalSequence && !c.dataset.empty()) {
    external = sequence_manifest(c.dataset);
    c.model.filter_length = manifest_field<std::size_t>(*external, "length", "sequence file");
  }
  if (kind == ExperimentKind::kLandscape && c.landscape.data != "lds") {
    // Token probes use the token-task architecture.
    const ExperimentConfig tok = default_config(ExperimentKind::kInduction);
    c.model = tok.model;
    c.model.filter_length = c.task.task.length;
    c.optimizer = tok.optimizer;
    c.batch = tok.batch;
    const bool explicit_params = j.contains("landscape") && j.at("landscape").contains("params");
    if (!explicit_params) c.landscape.params.clear();
  }
  bool has_in = false, has_out = false, has_vocab = false;
  if (const Json* m = r.child("model")) {
    read_model(*m, c.model, "model.");
    has_in = m->contains("input_dim");
    has_out = m->contains("output_dim");
    has_vocab = m->contains("vocab");
  }
  derive_dimensions(c, has_in, has_out, has_vocab);
  if (external) {
    if (!has_in) c.model.input_dim = manifest_field<std::size_t>(*external, "input_dim", "sequence file");
    if (!has_out) c.model.output_dim = manifest_field<std::size_t>(*external, "target_dim", "sequence file");
  }
  if (const Json* o = r.child("optimizer")) read_optimizer(*o, c.optimizer);
  std::optional<std::string> recorded_hash;
  r.get_optional("config_hash", recorded_hash);
  r.finish();
  if (recorded_hash && *recorded_hash != config_hash(c))
    throw FormatError("config: recorded config_hash " + *recorded_hash + " does not match the settings (" +
                      config_hash(c) + ")");
  return c;
}

Json model_config_to_json(const nn::ModelConfig& m) {
  return Json{{"block", nn::to_string(m.block_kind)},
              {"input_dim", m.input_dim},
              {"vocab", m.vocab},
              {"output_dim", m.output_dim},
              {"width", m.width},
              {"depth", m.depth},
              {"mlp_scale", m.mlp_scale},
              {"use_moe", m.use_moe},
              {"n_experts", m.n_experts},
              {"top_k", m.top_k},
              {"n_filters", m.n_filters},
              {"filter_length", m.filter_length},
              {"n_heads", m.n_heads},
              {"learnable_filters", m.learnable_filters},
              {"global_skips", m.global_skips},
              {"alternating_filters", m.alternating_filters},
              {"single_layer", m.single_layer},
              {"activation", activation_name(m.activation)},
              {"s4d_state", m.s4d_state},
              {"positional_length", m.positional_length},
              {"norm_eps", m.norm_eps}};
}

nn::ModelConfig model_config_from_json(const Json& j) {
  nn::ModelConfig m;
  read_model(j, m, "model.");
  return m;
}

Json config_to_json(const ExperimentConfig& c) {
  Json j;
  j["kind"] = to_string(c.kind);
  j["seed"] = c.seed;
  j["trials"] = c.trials;
  j["steps"] = c.steps;
  j["batch"] = c.batch;
  j["eval_period"] = c.eval_period;
  j["stop_at_metric"] = c.stop_at_metric ? Json(*c.stop_at_metric) : Json(nullptr);
  j["dataset"] = c.dataset;
  j["eval_dataset"] = c.eval_dataset;
  j["model"] = model_config_to_json(c.model);
  j["optimizer"] = Json{{"kind", train::to_string(c.optimizer.kind)},
                        {"lr", c.optimizer.lr},
                        {"beta1", c.optimizer.beta1},
                        {"beta2", c.optimizer.beta2},
                        {"eps", c.optimizer.eps},
                        {"alpha", c.optimizer.alpha},
                        {"weight_decay", c.optimizer.weight_decay},
                        {"clip_norm", c.optimizer.clip_norm}};
  j["lds"] = Json{{"d_in", c.lds.d_in},
                  {"d_out", c.lds.d_out},
                  {"d_hidden", c.lds.d_hidden},
                  {"rho", c.lds.rho},
                  {"context", c.lds.context},
                  {"train_sequences", c.lds.train_sequences},
                  {"eval_sequences", c.lds.eval_sequences},
                  {"include_outputs", c.lds.include_outputs}};
  j["task"] = Json{{"length", c.task.task.length},
                   {"vocab", c.task.task.vocab},
                   {"n_tokens", c.task.task.n_tokens},
                   {"n_pairs", c.task.task.n_pairs},
                   {"train_sequences", c.task.train_sequences},
                   {"eval_sequences", c.task.eval_sequences}};
  j["landscape"] = Json{{"data", c.landscape.data},
                        {"probe_steps", c.landscape.probe_steps},
                        {"grid", c.landscape.grid},
                        {"span", c.landscape.span},
                        {"fd_step", c.landscape.fd_step},
                        {"five_point", c.landscape.five_point},
                        {"params", c.landscape.params},
                        {"eval_sequences", c.landscape.eval_sequences}};
  return j;
}

ExperimentConfig load_config(const fs::path& path) {
  const std::string text = read_file(path);
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

std::string config_hash(const ExperimentConfig& cfg) {
  const std::string text = config_to_json(cfg).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---- files ----------------------------------------------------------------------------

void atomic_write(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw FormatError("failed writing " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw FormatError("cannot move " + tmp.string() + " to " + path.string());
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}


// ---- checkpoints ----------------------------------------------------------------------

std::string encode_checkpoint(const Checkpoint& ckpt) {
  Json entries = Json::array();
  std::size_t bytes = 0;
  for (const auto& e : ckpt.entries) {
    if (shape_product(e.shape) != e.values.size())
      throw InvalidArgument("checkpoint entry '" + e.name + "' shape does not match its value count");
    entries.push_back(Json{{"name", e.name}, {"shape", e.shape}});
    bytes += 8 * e.values.size();
  }
  const Json manifest{{"format", "stulab-checkpoint"}, {"version", Checkpoint::kVersion}, {"kind", ckpt.kind},
                      {"config_hash", ckpt.config_hash}, {"seed", ckpt.seed},  {"meta", ckpt.meta},
                      {"entries", entries},              {"payload_bytes", bytes}};
  std::string out = manifest.dump();
  out.push_back('\n');
  out.reserve(out.size() + bytes);
  for (const auto& e : ckpt.entries) put_f64(out, e.values);
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  const char* what = "checkpoint";
  auto [m, payload] = split_manifest(bytes, what);
  check_header(m, "stulab-checkpoint", what);
  Checkpoint c;
  c.kind = manifest_field<std::string>(m, "kind", what);
  c.config_hash = manifest_field<std::string>(m, "config_hash", what);
  c.seed = manifest_field<std::uint64_t>(m, "seed", what);
  c.meta = m.contains("meta") ? m.at("meta") : Json::object();
  const Json entries = manifest_field<Json>(m, "entries", what);
  if (!entries.is_array()) throw FormatError("checkpoint: 'entries' must be an array");
  const auto declared = manifest_field<std::size_t>(m, "payload_bytes", what);
  PayloadReader reader(payload, what);
  for (const auto& je : entries) {
    TensorEntry e;
    e.name = manifest_field<std::string>(je, "name", what);
    e.shape = manifest_field<ad::Shape>(je, "shape", what);
    e.values = reader.f64(shape_product(e.shape), e.name);
    c.entries.push_back(std::move(e));
  }
  reader.finish();
  if (declared != payload.size())
    throw FormatError("checkpoint: payload is " + std::to_string(payload.size()) + " bytes, manifest says " +
                      std::to_string(declared));
  return c;
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) { atomic_write(path, encode_checkpoint(ckpt)); }

Checkpoint load_checkpoint(const fs::path& path, std::optional<std::string> expected_hash) {
  Checkpoint c;
  try {
    c = decode_checkpoint(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (expected_hash && *expected_hash != c.config_hash) {
    throw FormatError(path.string() + ": config hash " + c.config_hash + " does not match " + *expected_hash);
  }
  return c;
}

Checkpoint bank_checkpoint(const spectral::FilterBank& bank) {
  Checkpoint c;
  c.kind = "bank";
  c.meta = Json{{"length", bank.length}, {"count", bank.count}, {"learnable", bank.learnable}};
  c.entries.push_back({"filters", {bank.count, bank.length}, bank.filters.values()});
  c.entries.push_back({"eigenvalues", {bank.count}, bank.eigenvalues});
  return c;
}

namespace {

const TensorEntry* find_entry(const Checkpoint& c, const std::string& name) {
  for (const auto& e : c.entries)
    if (e.name == name) return &e;
  return nullptr;
}

spectral::FilterBank bank_from_entries(const Json& meta, const TensorEntry* filters, const TensorEntry* eig) {
  const char* what = "filter bank";
  spectral::FilterBank b;
  b.length = manifest_field<std::size_t>(meta, "length", what);
  b.count = manifest_field<std::size_t>(meta, "count", what);
  b.learnable = manifest_field<bool>(meta, "learnable", what);
  if (!filters || !eig) throw FormatError("filter bank: missing filters or eigenvalues entry");
  if (filters->shape != ad::Shape{b.count, b.length} || eig->shape != ad::Shape{b.count})
    throw FormatError("filter bank: entry shapes do not match " + std::to_string(b.count) + "x" +
                      std::to_string(b.length));
  b.filters = Matrix(b.count, b.length);
  b.filters.values() = filters->values;
  b.eigenvalues = eig->values;
  return b;
}

}  // namespace

spectral::FilterBank bank_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "bank") throw FormatError("checkpoint holds a " + ckpt.kind + ", not a filter bank");
  return bank_from_entries(ckpt.meta, find_entry(ckpt, "filters"), find_entry(ckpt, "eigenvalues"));
}

Checkpoint model_checkpoint(const nn::Model& model, const std::string& hash, std::uint64_t seed) {
  Checkpoint c;
  c.kind = "model";
  c.config_hash = hash;
  c.seed = seed;
  const auto& bank = model.bank();
  c.meta = Json{{"model", model_config_to_json(model.config())}};
  if (bank.count > 0) {
    c.meta["bank"] = Json{{"length", bank.length}, {"count", bank.count}, {"learnable", bank.learnable}};
    c.entries.push_back({"bank.filters", {bank.count, bank.length}, bank.filters.values()});
    c.entries.push_back({"bank.eigenvalues", {bank.count}, bank.eigenvalues});
  }
  for (const auto& p : model.parameters()) c.entries.push_back({p.name, p.tensor.shape(), p.tensor.values()});
  return c;
}

void load_parameters(nn::Model& model, const Checkpoint& ckpt) {
  if (ckpt.kind != "model") throw FormatError("checkpoint holds a " + ckpt.kind + ", not a model");
  std::size_t matched = 0;
  for (auto& p : model.parameters()) {
    const TensorEntry* e = find_entry(ckpt, p.name);
    if (!e) throw FormatError("checkpoint lacks parameter '" + p.name + "'");
    if (e->shape != p.tensor.shape()) {
      throw FormatError("checkpoint parameter '" + p.name + "' has shape " + ad::shape_str(e->shape) +
                        ", model expects " + ad::shape_str(p.tensor.shape()));
    }
    ++matched;
  }
  std::size_t stored = 0;
  for (const auto& e : ckpt.entries) stored += e.name.rfind("bank.", 0) == 0 ? 0 : 1;
  if (stored != matched) throw FormatError("checkpoint has parameters the model does not know");
  // Validated first so a failure leaves the model untouched.
  for (auto& p : model.parameters()) p.tensor.values() = find_entry(ckpt, p.name)->values;
}

nn::Model model_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "model") throw FormatError("checkpoint holds a " + ckpt.kind + ", not a model");
  if (!ckpt.meta.contains("model")) throw FormatError("model checkpoint lacks its model config");
  nn::ModelConfig cfg;
  try {
    cfg = model_config_from_json(ckpt.meta.at("model"));
    cfg.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("model checkpoint config: ") + e.what());
  }
  spectral::FilterBank bank = ckpt.meta.contains("bank")
                                  ? bank_from_entries(ckpt.meta.at("bank"), find_entry(ckpt, "bank.filters"),
                                                      find_entry(ckpt, "bank.eigenvalues"))
                                  : nn::bank_for(cfg);
  nn::Model model(cfg, std::move(bank), ckpt.seed);
  load_parameters(model, ckpt);
  return model;
}

// ---- sequence files -------------------------------------------------------------------

std::string encode_sequences(const SequenceDataset& d) {
  d.validate();
  Json m{{"format", "stulab-sequences"}, {"version", 1},          {"dtype", "f64"},
         {"count", d.count},             {"length", d.length},    {"input_dim", d.input_dim},
         {"target_dim", d.target_dim},   {"payload_bytes", 8 * (d.inputs.size() + d.targets.size())}};
  m["feedback_offset"] = d.feedback_offset ? Json(*d.feedback_offset) : Json(nullptr);
  std::string out = m.dump();
  out.push_back('\n');
  put_f64(out, d.inputs);
  put_f64(out, d.targets);
  return out;
}

SequenceDataset decode_sequences(const std::string& bytes) {
  const char* what = "sequence file";
  auto [m, payload] = split_manifest(bytes, what);
  check_header(m, "stulab-sequences", what);
  if (manifest_field<std::string>(m, "dtype", what) != "f64") throw FormatError("sequence file: dtype must be f64");
  SequenceDataset d;
  d.count = manifest_field<std::size_t>(m, "count", what);
  d.length = manifest_field<std::size_t>(m, "length", what);
  d.input_dim = manifest_field<std::size_t>(m, "input_dim", what);
  d.target_dim = manifest_field<std::size_t>(m, "target_dim", what);
  if (m.contains("feedback_offset") && !m.at("feedback_offset").is_null())
    d.feedback_offset = manifest_field<std::size_t>(m, "feedback_offset", what);
  PayloadReader r(payload, what);
  d.inputs = r.f64(d.count * d.length * d.input_dim, "inputs");
  d.targets = r.f64(d.count * d.length * d.target_dim, "targets");
  r.finish();
  if (d.feedback_offset && *d.feedback_offset + d.target_dim > d.input_dim)
    throw FormatError("sequence file: feedback channels exceed the input dimension");
  return d;
}

std::string encode_tokens(const TokenDataset& d) {
  d.validate();
  const Json m{{"format", "stulab-tokens"}, {"version", 1},       {"dtype", "i64"},
               {"count", d.count},          {"length", d.length}, {"vocab", d.vocab},
               {"payload_bytes", 8 * 3 * d.tokens.size()}};
  std::string out = m.dump();
  out.push_back('\n');
  put_i64(out, d.tokens);
  put_i64(out, d.targets);
  std::vector<std::int64_t> mask(d.mask.begin(), d.mask.end());
  put_i64(out, mask);
  return out;
}

TokenDataset decode_tokens(const std::string& bytes) {
  const char* what = "token file";
  auto [m, payload] = split_manifest(bytes, what);
  check_header(m, "stulab-tokens", what);
  if (manifest_field<std::string>(m, "dtype", what) != "i64") throw FormatError("token file: dtype must be i64");
  TokenDataset d;
  d.count = manifest_field<std::size_t>(m, "count", what);
  d.length = manifest_field<std::size_t>(m, "length", what);
  d.vocab = manifest_field<std::size_t>(m, "vocab", what);
  const std::size_t n = d.count * d.length;
  PayloadReader r(payload, what);
  d.tokens = r.i64(n, "tokens");
  d.targets = r.i64(n, "targets");
  const auto mask = r.i64(n, "mask");
  r.finish();
  d.mask.assign(mask.begin(), mask.end());
  try {
    d.validate();
  } catch (const std::exception& e) {
    throw FormatError(std::string("token file: ") + e.what());
  }
  return d;
}

void save_sequences(const fs::path& path, const SequenceDataset& data) { atomic_write(path, encode_sequences(data)); }

SequenceDataset load_sequences(const fs::path& path) {
  try {
    return decode_sequences(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void save_tokens(const fs::path& path, const TokenDataset& data) { atomic_write(path, encode_tokens(data)); }

TokenDataset load_tokens(const fs::path& path) {
  try {
    return decode_tokens(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// ---- CSV ------------------------------------------------------------------------------

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string metrics_csv(const train::TrainReport& report, bool zero_wall_clock) {
  std::map<std::size_t, train::EvalResult> evals;
  for (const auto& e : report.evals) evals[e.step] = e.result;
  std::string out = "step,loss,eval_loss,eval_metric,wall_ms\n";
  auto eval_cols = [&](std::size_t step) {
    const auto it = evals.find(step);
    if (it == evals.end()) return std::string(",");
    return format_double(it->second.loss) + "," + format_double(it->second.metric);
  };
  if (evals.count(0)) out += "0,," + eval_cols(0) + ",\n";
  for (std::size_t i = 0; i < report.loss.size(); ++i) {
    const std::size_t step = i + 1;
    const double wall = zero_wall_clock || i >= report.wall_ms.size() ? 0.0 : report.wall_ms[i];
    out += std::to_string(step) + "," + format_double(report.loss[i]) + "," + eval_cols(step) + "," +
           format_double(wall) + "\n";
  }
  return out;
}

std::string aggregate_csv(const std::vector<std::size_t>& steps, const train::TrialAggregate& agg) {
  if (steps.size() != agg.mean.size() || agg.mean.size() != agg.stddev.size())
    throw InvalidArgument("aggregate_csv: column lengths differ");
  std::string out = "step,mean,std\n";
  for (std::size_t i = 0; i < steps.size(); ++i)
    out += std::to_string(steps[i]) + "," + format_double(agg.mean[i]) + "," + format_double(agg.stddev[i]) + "\n";
  return out;
}

std::string grid_csv(const landscape::LandscapeGrid& g) {
  std::string out = "x,y,value,flagged\n";
  for (std::size_t a = 0; a < g.x_steps.size(); ++a)
    for (std::size_t b = 0; b < g.y_steps.size(); ++b)
      out += format_double(g.x_steps[a]) + "," + format_double(g.y_steps[b]) + "," + format_double(g.at(a, b)) + "," +
             (g.is_flagged(a, b) ? "1" : "0") + "\n";
  return out;
}

namespace {

std::vector<std::string> split_row(std::string_view line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    cells.emplace_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

double parse_cell(const std::string& cell, std::size_t line) {
  std::string_view s(cell);
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  if (s.empty()) return std::nan("");
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw FormatError("csv line " + std::to_string(line) + ": '" + std::string(s) + "' is not a number");
  return v;
}

}  // namespace

CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_row(line);
    if (t.header.empty()) {
      t.header = std::move(cells);
      t.columns.resize(t.header.size());
      continue;
    }
    if (cells.size() != t.header.size()) {
      throw FormatError("csv line " + std::to_string(lineno) + ": " + std::to_string(cells.size()) + " cells, header has " +
                        std::to_string(t.header.size()));
    }
    for (std::size_t c = 0; c < cells.size(); ++c) t.columns[c].push_back(parse_cell(cells[c], lineno));
  }
  if (t.header.empty()) throw FormatError("csv: missing header row");
  return t;
}

// ---- SVG ------------------------------------------------------------------------------

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

constexpr double kWidth = 640, kHeight = 420, kLeft = 70, kRight = 150, kTop = 40, kBottom = 50;

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

struct Range {
  double lo = 0.0, hi = 1.0;
  void widen() {
    if (hi <= lo) {
      const double pad = lo == 0.0 ? 1.0 : std::abs(lo) * 0.1;
      lo -= pad;
      hi += pad;
    }
  }
};

}  // namespace

std::string ramp_color(double t) {
  static const int stops[5][3] = {{0x44, 0x01, 0x54}, {0x3b, 0x52, 0x8b}, {0x21, 0x91, 0x8c},
                                  {0x5e, 0xc9, 0x62}, {0xfd, 0xe7, 0x25}};
  if (!std::isfinite(t)) t = 0.0;
  t = std::clamp(t, 0.0, 1.0) * 4.0;
  const int i = std::min(3, static_cast<int>(t));
  const double f = t - i;
  char buf[8];
  int rgb[3];
  for (int c = 0; c < 3; ++c)
    rgb[c] = static_cast<int>(std::lround(stops[i][c] + f * (stops[i + 1][c] - stops[i][c])));
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", rgb[0], rgb[1], rgb[2]);
  return buf;
}

std::string svg_line_plot(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                          const std::string& y_label, bool log_y) {
  auto ty = [&](double y) { return log_y ? std::log10(y) : y; };
  auto usable = [&](double x, double y) { return std::isfinite(x) && std::isfinite(y) && (!log_y || y > 0.0); };
  Range xr{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  Range yr = xr;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw InvalidArgument("svg_line_plot: series '" + s.name + "' has ragged data");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!usable(s.x[i], s.y[i])) continue;
      xr.lo = std::min(xr.lo, s.x[i]);
      xr.hi = std::max(xr.hi, s.x[i]);
      yr.lo = std::min(yr.lo, ty(s.y[i]));
      yr.hi = std::max(yr.hi, ty(s.y[i]));
    }
  }
  if (!std::isfinite(xr.lo)) xr = Range{0.0, 1.0};
  if (!std::isfinite(yr.lo)) yr = Range{0.0, 1.0};
  xr.widen();
  yr.widen();
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - xr.lo) / (xr.hi - xr.lo) * pw; };
  auto py = [&](double y) { return kTop + ph - (ty(y) - yr.lo) / (yr.hi - yr.lo) * ph; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
  o << "<text x=\"" << num(kLeft + pw / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">"
    << xml_escape(title) << "</text>\n";
  o << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"#000000\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = xr.lo + (xr.hi - xr.lo) * i / 4.0;
    const double x = kLeft + pw * i / 4.0;
    o << "<line x1=\"" << num(x) << "\" y1=\"" << kTop + ph << "\" x2=\"" << num(x) << "\" y2=\"" << kTop + ph + 5
      << "\" stroke=\"#000000\"/>\n";
    o << "<text x=\"" << num(x) << "\" y=\"" << kTop + ph + 18 << "\" text-anchor=\"middle\">" << tick_label(fx)
      << "</text>\n";
    const double fy = yr.lo + (yr.hi - yr.lo) * i / 4.0;
    const double y = kTop + ph - ph * i / 4.0;
    o << "<line x1=\"" << kLeft - 5 << "\" y1=\"" << num(y) << "\" x2=\"" << kLeft << "\" y2=\"" << num(y)
      << "\" stroke=\"#000000\"/>\n";
    o << "<text x=\"" << kLeft - 8 << "\" y=\"" << num(y + 4) << "\" text-anchor=\"end\">"
      << tick_label(log_y ? std::pow(10.0, fy) : fy) << "</text>\n";
  }
  o << "<text x=\"" << num(kLeft + pw / 2) << "\" y=\"" << kHeight - 10 << "\" text-anchor=\"middle\">"
    << xml_escape(x_label) << "</text>\n";
  o << "<text transform=\"translate(16," << num(kTop + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
    << xml_escape(y_label + (log_y ? " (log)" : "")) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kPalette[k % 10];
    std::string points;
    auto flush = [&] {
      if (!points.empty())
        o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"" << points << "\"/>\n";
      points.clear();
    };
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!usable(s.x[i], s.y[i])) {
        flush();
        continue;
      }
      points += (points.empty() ? "" : " ") + num(px(s.x[i])) + "," + num(py(s.y[i]));
    }
    flush();
    const double ly = kTop + 10 + 18.0 * static_cast<double>(k);
    o << "<line x1=\"" << kLeft + pw + 10 << "\" y1=\"" << num(ly) << "\" x2=\"" << kLeft + pw + 30 << "\" y2=\""
      << num(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << kLeft + pw + 35 << "\" y=\"" << num(ly + 4) << "\">" << xml_escape(s.name) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string svg_heatmap(const landscape::LandscapeGrid& g, const std::string& title) {
  const std::size_t nx = g.x_steps.size(), ny = g.y_steps.size();
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t a = 0; a < nx; ++a)
    for (std::size_t b = 0; b < ny; ++b)
      if (!g.is_flagged(a, b) && std::isfinite(g.at(a, b))) {
        lo = std::min(lo, g.at(a, b));
        hi = std::max(hi, g.at(a, b));
      }
  const bool varying = std::isfinite(lo) && hi > lo;
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  const double cw = pw / static_cast<double>(std::max<std::size_t>(nx, 1));
  const double ch = ph / static_cast<double>(std::max<std::size_t>(ny, 1));
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
  o << "<text x=\"" << num(kLeft + pw / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">"
    << xml_escape(title) << "</text>\n";
  o << "<g class=\"cells\" shape-rendering=\"crispEdges\">\n";
  for (std::size_t a = 0; a < nx; ++a) {
    for (std::size_t b = 0; b < ny; ++b) {
      std::string fill;
      if (g.is_flagged(a, b) || !std::isfinite(g.at(a, b))) {
        fill = "#808080";
      } else {
        fill = ramp_color(varying ? (g.at(a, b) - lo) / (hi - lo) : 0.0);
      }
      const double x = kLeft + cw * static_cast<double>(a);
      const double y = kTop + ph - ch * static_cast<double>(b + 1);
      o << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(cw) << "\" height=\"" << num(ch)
        << "\" fill=\"" << fill << "\"/>\n";
    }
  }
  o << "</g>\n";
  if (nx > 0 && ny > 0) {
    o << "<text x=\"" << kLeft << "\" y=\"" << kTop + ph + 18 << "\">" << tick_label(g.x_steps.front()) << "</text>\n";
    o << "<text x=\"" << kLeft + pw << "\" y=\"" << kTop + ph + 18 << "\" text-anchor=\"end\">"
      << tick_label(g.x_steps.back()) << "</text>\n";
    o << "<text x=\"" << kLeft - 8 << "\" y=\"" << kTop + ph << "\" text-anchor=\"end\">"
      << tick_label(g.y_steps.front()) << "</text>\n";
    o << "<text x=\"" << kLeft - 8 << "\" y=\"" << kTop + 10 << "\" text-anchor=\"end\">"
      << tick_label(g.y_steps.back()) << "</text>\n";
  }
  o << "<text x=\"" << num(kLeft + pw / 2) << "\" y=\"" << kHeight - 10 << "\" text-anchor=\"middle\">x step (delta)</text>\n";
  o << "<text transform=\"translate(16," << num(kTop + ph / 2)
    << ") rotate(-90)\" text-anchor=\"middle\">y step (eta)</text>\n";
  // Colour bar, only when there is a range to show.
  if (varying) {
    const double bx = kLeft + pw + 20, bw = 18;
    o << "<g class=\"colorbar\">\n";
    for (int i = 0; i < 50; ++i) {
      const double t = i / 49.0;
      o << "<rect x=\"" << num(bx) << "\" y=\"" << num(kTop + ph - ph * (i + 1) / 50.0) << "\" width=\"" << bw
        << "\" height=\"" << num(ph / 50.0 + 0.5) << "\" fill=\"" << ramp_color(t) << "\"/>\n";
    }
    o << "</g>\n";
    o << "<text x=\"" << num(bx + bw + 4) << "\" y=\"" << kTop + ph << "\">" << tick_label(lo) << "</text>\n";
    o << "<text x=\"" << num(bx + bw + 4) << "\" y=\"" << kTop + 10 << "\">" << tick_label(hi) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace stulab::io

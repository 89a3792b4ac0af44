#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "stulab/spectral_filters.hpp"
#include "stulab/tensor.hpp"

namespace stulab::nn {

using ad::Tensor;

enum class Activation { kIdentity, kRelu };
enum class BlockKind { kStu, kStuT, kAttention, kS4d };

std::string to_string(BlockKind kind);
BlockKind parse_block_kind(const std::string& name);

struct NamedParam {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedParam>;

Tensor apply(Activation act, const Tensor& x);

// ---- spectral layers --------------------------------------------------------

/// Learned projections of a full STU layer; `m` is [K, d_in, d_out]. The
/// optional lift [d_raw, d_in] maps raw inputs to d_in before filtering.
struct StuParams {
  Tensor m;
  std::optional<Tensor> input_lift;
  Activation activation = Activation::kIdentity;
};

/// y_t = act(sum_k M_k^T <phi_k, u_{t:t-L}>). `filters` is [K, L] and may be a
/// trainable tensor. u is [..., T, d_raw] with a lift, else [..., T, d_in].
Tensor stu_forward(const Tensor& filters, const StuParams& params, const Tensor& u);

/// Tensordot-constrained projections: M_k = m1 * diag(m2[k]). m1 is
/// [d_in, d_out], m2 is [K, d_out].
struct StuTParams {
  Tensor m1;
  Tensor m2;
  Activation activation = Activation::kIdentity;
};

/// Projects with m1 first, then convolves each of the d_out channels with its
/// own combined filter sum_k m2[k, c] * phi_k.
Tensor stu_t_forward(const Tensor& filters, const StuTParams& params, const Tensor& u);

/// Expands tensordot parameters into the equivalent full [K, d_in, d_out] M.
Tensor stu_t_full_tensor(const StuTParams& params);

/// Stacks a bank's filters with their sign-alternated copies ([2K, L]) when
/// `alternating` is set; otherwise returns the bank as a [K, L] tensor.
/// Differentiable in `bank_filters`.
Tensor layer_filters(const Tensor& bank_filters, bool alternating);

// ---- attention ----------------------------------------------------------------

/// Geometric ALiBi slopes 2^(-8h/H), h = 1..H.
std::vector<double> alibi_slopes(std::size_t n_heads);

/// Causal multi-head softmax attention on already-projected q, k, v
/// ([..., T, d]). Head h scores query i against key j <= i with
/// q.k / sqrt(d/H) - slopes[h] * (i - j). Heads are concatenated.
Tensor alibi_attention_core(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t n_heads,
                            const std::vector<double>& slopes);

struct AttentionParams {
  Tensor wq, wk, wv, wo;  // [d, d]
};

/// Full attention sublayer: projections, ALiBi core, output projection.
/// Throws InvalidArgument when d is not divisible by n_heads.
Tensor alibi_attention(const Tensor& x, const AttentionParams& p, std::size_t n_heads,
                       const std::vector<double>& slopes);

// ---- diagonal S4 --------------------------------------------------------------

/// Per channel c and state n: pole Lambda = -exp(log_neg_real) + i * imag,
/// step Delta = exp(log_dt[c]); complex input/output vectors b, c stored as
/// [d, N, 2] (real, imag); feedthrough d_skip [d].
struct S4dParams {
  Tensor log_neg_real;  // [d, N]
  Tensor imag;          // [d, N]
  Tensor b;             // [d, N, 2]
  Tensor c;             // [d, N, 2]
  Tensor log_dt;        // [d]
  Tensor d_skip;        // [d]
};

S4dParams init_s4d(std::size_t channels, std::size_t states, std::mt19937_64& rng);

/// Zero-order-hold kernel K[t, c] = Re(sum_n c_n * bbar_n * zbar_n^t) for
/// t < length, with zbar = exp(Delta * Lambda) and
/// bbar = (zbar - 1) / Lambda * b. Differentiable in every parameter.
Tensor s4d_kernel(const S4dParams& p, std::size_t length);

/// Convolution mode: causal_conv(u, kernel) + d_skip * u.
Tensor s4d_forward(const S4dParams& p, const Tensor& u);

/// Recurrent mode on plain values (no graph): h_t = zbar h_{t-1} + bbar u_t,
/// y_t = Re(c . h_t) + D u_t. u is [..., T, d].
std::vector<double> s4d_recurrence(const S4dParams& p, const Tensor& u);

// ---- feed-forward, mixture of experts, normalization ---------------------------

struct SwiGluParams {
  Tensor w1;  // [d, h]
  Tensor wg;  // [d, h]
  Tensor w2;  // [h, d]
};

/// w2^T ((w1^T x) * silu(wg^T x)); no biases.
Tensor swiglu_mlp(const Tensor& x, const SwiGluParams& p);

struct MoeParams {
  Tensor router;  // [d, E]
  std::vector<SwiGluParams> experts;
};

/// Per-token expert choice, row-major [tokens, E], 1 where selected.
using Routing = std::vector<std::uint8_t>;

/// Indices of the top_k routing probabilities per row of `probs` ([rows, E]);
/// equal probabilities resolve to the lower expert index.
Routing top_k_routing(std::span<const double> probs, std::size_t experts, std::size_t top_k);

/// Routing weights: selected probabilities renormalized to sum to one per
/// token, zero elsewhere. Gradients flow through the selected probabilities
/// only; the selection itself is constant.
Tensor routing_weights(const Tensor& probs, const Routing& routing);

/// softmax(x router) -> top_k -> renormalize -> weighted sum of expert
/// outputs. When `frozen` is given it replaces the top-k selection. The chosen
/// routing is written to `used` when non-null.
Tensor moe_forward(const Tensor& x, const MoeParams& p, std::size_t top_k, const Routing* frozen = nullptr,
                   Routing* used = nullptr);

/// x / sqrt(mean(x^2) + eps) * gamma over the last axis. Rows that are
/// exactly zero map to zero. Throws InvalidArgument when eps < 0.
Tensor rmsnorm(const Tensor& x, const Tensor& gamma, double eps);

// ---- model assembly ---------------------------------------------------------------

struct ModelConfig {
  BlockKind block_kind = BlockKind::kStu;
  std::size_t input_dim = 1;   // real-valued input channels (ignored when vocab > 0)
  std::size_t vocab = 0;       // > 0: inputs are tokens embedded from this vocabulary
  std::size_t output_dim = 1;
  std::size_t width = 32;
  std::size_t depth = 1;
  std::size_t mlp_scale = 1;
  bool use_moe = false;
  std::size_t n_experts = 4;
  std::size_t top_k = 2;
  std::size_t n_filters = 16;
  std::size_t filter_length = 100;
  std::size_t n_heads = 8;
  bool learnable_filters = false;
  bool global_skips = false;
  /// Adds the sign-alternated copy of every filter (captures negative-eigenvalue
  /// dynamics; doubles the projection count).
  bool alternating_filters = false;
  /// One sequence layer between input and linear readout, with no norms,
  /// residual joins or MLPs. STU layers then read the raw input directly.
  bool single_layer = false;
  Activation activation = Activation::kIdentity;
  std::size_t s4d_state = 64;
  std::size_t positional_length = 0;  // > 0 adds a learned positional embedding
  double norm_eps = 1e-6;

  /// Throws InvalidArgument naming the first violated constraint.
  void validate() const;
};

/// Closed-form parameter count of the model build_model() produces.
std::size_t expected_parameter_count(const ModelConfig& cfg);

class Model {
 public:
  Model(ModelConfig cfg, spectral::FilterBank bank, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const spectral::FilterBank& bank() const { return bank_; }

  /// Real-valued inputs [B, T, input_dim] -> [B, T, output_dim].
  Tensor forward(const Tensor& inputs) const;
  /// Token inputs (row-major [batch, length]) -> [batch, length, output_dim].
  Tensor forward_tokens(std::span<const std::int64_t> tokens, std::size_t batch, std::size_t length) const;

  ParamList& parameters() { return params_; }
  const ParamList& parameters() const { return params_; }
  std::size_t parameter_count() const;
  Tensor& param(const std::string& name);

  /// Frozen routing per MoE block (indexed by depth) used by gradient checks.
  void freeze_routing(std::vector<Routing> routing) { frozen_routing_ = std::move(routing); }
  void unfreeze_routing() { frozen_routing_.clear(); }
  const std::vector<Routing>& last_routing() const { return last_routing_; }

 private:
  struct Block {
    std::optional<Tensor> norm1, norm2;
    std::optional<StuParams> stu;
    std::optional<StuTParams> stu_t;
    std::optional<AttentionParams> attention;
    std::optional<S4dParams> s4d;
    std::optional<Tensor> filters;  // learnable per-layer bank
    std::optional<SwiGluParams> mlp;
    std::optional<MoeParams> moe;
  };

  Tensor run(Tensor x) const;
  Tensor core(const Block& block, const Tensor& x) const;
  Tensor filters_for(const Block& block) const;
  Tensor& add_param(const std::string& name, Tensor t);

  ModelConfig cfg_;
  spectral::FilterBank bank_;
  Tensor fixed_filters_;
  std::vector<double> slopes_;
  ParamList params_;
  std::optional<Tensor> in_proj_, embed_, pos_, final_norm_;
  Tensor head_;
  std::vector<Block> blocks_;
  std::vector<Routing> frozen_routing_;
  mutable std::vector<Routing> last_routing_;
};

/// Validates the configuration and checks the bank against it.
Model build_model(const ModelConfig& cfg, const spectral::FilterBank& bank, std::uint64_t seed);

/// Bank matching the configuration's (filter_length, n_filters).
spectral::FilterBank bank_for(const ModelConfig& cfg);

}  // namespace stulab::nn

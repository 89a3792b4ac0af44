#include "stulab/layers.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>

#include "stulab/error.hpp"
#include "stulab/fft_conv.hpp"

namespace stulab::nn {

using ad::Node;
using ad::Shape;
using ad::shape_str;
using Complex = std::complex<double>;

std::string to_string(BlockKind kind) {
  switch (kind) {
    case BlockKind::kStu: return "stu";
    case BlockKind::kStuT: return "stu_t";
    case BlockKind::kAttention: return "attention";
    case BlockKind::kS4d: return "s4d";
  }
  return "unknown";
}

BlockKind parse_block_kind(const std::string& name) {
  if (name == "stu") return BlockKind::kStu;
  if (name == "stu_t" || name == "stut") return BlockKind::kStuT;
  if (name == "attention" || name == "transformer") return BlockKind::kAttention;
  if (name == "s4d" || name == "s4") return BlockKind::kS4d;
  throw InvalidArgument("unknown block kind '" + name + "' (expected stu, stu_t, attention or s4d)");
}

Tensor apply(Activation act, const Tensor& x) { return act == Activation::kRelu ? ad::relu(x) : x; }

namespace {

void require_rank_at_least(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() < rank) throw InvalidArgument(std::string(what) + ": rank too small, got " + shape_str(t.shape()));
}

}  // namespace

// ---- spectral layers ----------------------------------------------------------

Tensor stu_forward(const Tensor& filters, const StuParams& params, const Tensor& raw) {
  require_rank_at_least(raw, 2, "stu");
  const Tensor u = params.input_lift ? ad::matmul(raw, *params.input_lift) : raw;
  const Tensor& m = params.m;
  if (m.rank() != 3 || filters.rank() != 2 || m.dim(0) != filters.dim(0) || m.dim(1) != u.dim(-1)) {
    throw InvalidArgument("stu: expected M [" + std::to_string(filters.dim(0)) + ", " + std::to_string(u.dim(-1)) +
                          ", d_out], got " + shape_str(m.shape()));
  }
  const std::size_t k = m.dim(0), d_in = m.dim(1), d_out = m.dim(2);
  Tensor x = fft::featurize(filters, u);  // [..., T, K, d_in]
  Shape flat(u.shape());
  flat.back() = k * d_in;
  x = ad::reshape(x, flat);
  Tensor y = ad::matmul(x, ad::reshape(m, {k * d_in, d_out}));
  return apply(params.activation, y);
}

Tensor stu_t_forward(const Tensor& filters, const StuTParams& params, const Tensor& u) {
  require_rank_at_least(u, 2, "stu_t");
  const Tensor& m1 = params.m1;
  const Tensor& m2 = params.m2;
  if (m1.rank() != 2 || m1.dim(0) != u.dim(-1)) {
    throw InvalidArgument("stu_t: m1 must be [" + std::to_string(u.dim(-1)) + ", d_out], got " +
                          shape_str(m1.shape()));
  }
  if (m2.rank() != 2 || m2.dim(0) != filters.dim(0) || m2.dim(1) != m1.dim(1)) {
    throw InvalidArgument("stu_t: m2 must be [" + std::to_string(filters.dim(0)) + ", " +
                          std::to_string(m1.dim(1)) + "], got " + shape_str(m2.shape()));
  }
  Tensor z = ad::matmul(u, m1);                           // [..., T, d_out]
  Tensor h = ad::matmul(ad::transpose(filters), m2);     // [L, d_out]
  return apply(params.activation, fft::causal_conv(z, h));
}

Tensor stu_t_full_tensor(const StuTParams& params) {
  const Tensor& m1 = params.m1;
  const Tensor& m2 = params.m2;
  if (m1.rank() != 2 || m2.rank() != 2 || m1.dim(1) != m2.dim(1)) {
    throw InvalidArgument("stu_t_full_tensor: incompatible " + shape_str(m1.shape()) + " and " +
                          shape_str(m2.shape()));
  }
  const std::size_t k = m2.dim(0), d_in = m1.dim(0), d_out = m1.dim(1);
  std::vector<double> out(k * d_in * d_out);
  const auto a = m1.data();
  const auto b = m2.data();
  for (std::size_t kk = 0; kk < k; ++kk)
    for (std::size_t i = 0; i < d_in; ++i)
      for (std::size_t o = 0; o < d_out; ++o) out[(kk * d_in + i) * d_out + o] = a[i * d_out + o] * b[kk * d_out + o];
  return ad::make_result(
      {k, d_in, d_out}, std::move(out), {m1, m2},
      [k, d_in, d_out](Node& self) {
        Node& n1 = *self.inputs[0];
        Node& n2 = *self.inputs[1];
        for (std::size_t kk = 0; kk < k; ++kk)
          for (std::size_t i = 0; i < d_in; ++i)
            for (std::size_t o = 0; o < d_out; ++o) {
              const double g = self.grad[(kk * d_in + i) * d_out + o];
              if (n1.requires_grad) n1.grad_buffer()[i * d_out + o] += g * n2.value[kk * d_out + o];
              if (n2.requires_grad) n2.grad_buffer()[kk * d_out + o] += g * n1.value[i * d_out + o];
            }
      },
      "stu_t_full");
}

Tensor layer_filters(const Tensor& bank_filters, bool alternating) {
  if (bank_filters.rank() != 2) throw InvalidArgument("layer_filters: expected [K, L], got " + shape_str(bank_filters.shape()));
  if (!alternating) return bank_filters;
  const std::size_t len = bank_filters.dim(1);
  std::vector<double> signs(len);
  for (std::size_t s = 0; s < len; ++s) signs[s] = (s % 2 == 0) ? 1.0 : -1.0;
  Tensor flipped = ad::mul(bank_filters, Tensor::from({len}, std::move(signs)));
  return ad::concat({bank_filters, flipped}, 0);
}

// ---- attention -------------------------------------------------------------------

std::vector<double> alibi_slopes(std::size_t n_heads) {
  std::vector<double> slopes(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h)
    slopes[h] = std::pow(2.0, -8.0 * static_cast<double>(h + 1) / static_cast<double>(n_heads));
  return slopes;
}

Tensor alibi_attention_core(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t n_heads,
                            const std::vector<double>& slopes) {
  require_rank_at_least(q, 2, "attention");
  if (k.shape() != q.shape() || v.shape() != q.shape()) {
    throw InvalidArgument("attention: q, k, v shapes differ: " + shape_str(q.shape()) + ", " +
                          shape_str(k.shape()) + ", " + shape_str(v.shape()));
  }
  const std::size_t d = q.dim(-1), t_len = q.dim(-2);
  if (n_heads == 0 || d % n_heads != 0) {
    throw InvalidArgument("attention: width " + std::to_string(d) + " not divisible by " +
                          std::to_string(n_heads) + " heads");
  }
  if (slopes.size() != n_heads) throw InvalidArgument("attention: need one slope per head");
  const std::size_t dh = d / n_heads;
  const std::size_t batch = q.size() / (t_len * d);
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  // probs[b][h][i][j] for j <= i, stored densely.
  std::vector<double> probs(batch * n_heads * t_len * t_len, 0.0);
  std::vector<double> out(q.size(), 0.0);
  const double* qd = q.data().data();
  const double* kd = k.data().data();
  const double* vd = v.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t base = b * t_len * d;
    for (std::size_t h = 0; h < n_heads; ++h) {
      for (std::size_t i = 0; i < t_len; ++i) {
        double* p = probs.data() + ((b * n_heads + h) * t_len + i) * t_len;
        double mx = -INFINITY;
        for (std::size_t j = 0; j <= i; ++j) {
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += qd[base + i * d + h * dh + c] * kd[base + j * d + h * dh + c];
          p[j] = s * inv - slopes[h] * static_cast<double>(i - j);
          mx = std::max(mx, p[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j <= i; ++j) z += (p[j] = std::exp(p[j] - mx));
        for (std::size_t j = 0; j <= i; ++j) {
          p[j] /= z;
          for (std::size_t c = 0; c < dh; ++c) out[base + i * d + h * dh + c] += p[j] * vd[base + j * d + h * dh + c];
        }
      }
    }
  }
  return ad::make_result(
      q.shape(), std::move(out), {q, k, v},
      [probs = std::move(probs), batch, n_heads, t_len, d, dh, inv](Node& self) {
        Node& nq = *self.inputs[0];
        Node& nk = *self.inputs[1];
        Node& nv = *self.inputs[2];
        auto& gq = nq.grad_buffer();
        auto& gk = nk.grad_buffer();
        auto& gv = nv.grad_buffer();
        std::vector<double> dp(t_len);
        for (std::size_t b = 0; b < batch; ++b) {
          const std::size_t base = b * t_len * d;
          for (std::size_t h = 0; h < n_heads; ++h) {
            for (std::size_t i = 0; i < t_len; ++i) {
              const double* p = probs.data() + ((b * n_heads + h) * t_len + i) * t_len;
              const double* go = self.grad.data() + base + i * d + h * dh;
              double dot = 0.0;
              for (std::size_t j = 0; j <= i; ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < dh; ++c) {
                  s += go[c] * nv.value[base + j * d + h * dh + c];
                  gv[base + j * d + h * dh + c] += p[j] * go[c];
                }
                dp[j] = s;
                dot += p[j] * s;
              }
              for (std::size_t j = 0; j <= i; ++j) {
                const double ds = p[j] * (dp[j] - dot) * inv;
                if (ds == 0.0) continue;
                for (std::size_t c = 0; c < dh; ++c) {
                  gq[base + i * d + h * dh + c] += ds * nk.value[base + j * d + h * dh + c];
                  gk[base + j * d + h * dh + c] += ds * nq.value[base + i * d + h * dh + c];
                }
              }
            }
          }
        }
      },
      "alibi_attention");
}

Tensor alibi_attention(const Tensor& x, const AttentionParams& p, std::size_t n_heads,
                       const std::vector<double>& slopes) {
  if (n_heads == 0 || x.dim(-1) % n_heads != 0) {
    throw InvalidArgument("attention: width " + std::to_string(x.dim(-1)) + " not divisible by " +
                          std::to_string(n_heads) + " heads");
  }
  Tensor q = ad::matmul(x, p.wq);
  Tensor k = ad::matmul(x, p.wk);
  Tensor v = ad::matmul(x, p.wv);
  return ad::matmul(alibi_attention_core(q, k, v, n_heads, slopes), p.wo);
}

// ---- diagonal S4 -------------------------------------------------------------------

S4dParams init_s4d(std::size_t channels, std::size_t states, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(std::log(1e-3), std::log(1e-1));
  std::vector<double> log_neg_real(channels * states, std::log(0.5));
  std::vector<double> imag(channels * states);
  std::vector<double> b(channels * states * 2, 0.0);
  std::vector<double> c(channels * states * 2);
  std::vector<double> log_dt(channels);
  std::vector<double> d_skip(channels);
  for (std::size_t ch = 0; ch < channels; ++ch) {
    for (std::size_t n = 0; n < states; ++n) {
      imag[ch * states + n] = std::numbers::pi * static_cast<double>(n);
      b[(ch * states + n) * 2] = 1.0;
    }
  }
  for (double& x : c) x = normal(rng) * std::sqrt(0.5);
  for (double& x : log_dt) x = uniform(rng);
  for (double& x : d_skip) x = normal(rng);
  return S4dParams{
      Tensor::from({channels, states}, std::move(log_neg_real), true),
      Tensor::from({channels, states}, std::move(imag), true),
      Tensor::from({channels, states, 2}, std::move(b), true),
      Tensor::from({channels, states, 2}, std::move(c), true),
      Tensor::from({channels}, std::move(log_dt), true),
      Tensor::from({channels}, std::move(d_skip), true),
  };
}

namespace {

void check_s4d(const S4dParams& p) {
  if (p.log_neg_real.rank() != 2) throw InvalidArgument("s4d: log_neg_real must be [d, N]");
  const std::size_t d = p.log_neg_real.dim(0), n = p.log_neg_real.dim(1);
  const Shape dn{d, n}, dn2{d, n, 2}, dv{d};
  if (p.imag.shape() != dn || p.b.shape() != dn2 || p.c.shape() != dn2 || p.log_dt.shape() != dv ||
      p.d_skip.shape() != dv) {
    throw InvalidArgument("s4d: parameter shapes are inconsistent with " + shape_str(dn));
  }
}

struct S4dMode {
  Complex lambda, z, bbar, c;
  double dt;
};

S4dMode s4d_mode(const S4dParams& p, std::size_t ch, std::size_t n) {
  const std::size_t states = p.log_neg_real.dim(1);
  const std::size_t i = ch * states + n;
  S4dMode m;
  m.lambda = Complex(-std::exp(p.log_neg_real.data()[i]), p.imag.data()[i]);
  m.dt = std::exp(p.log_dt.data()[ch]);
  m.z = std::exp(m.dt * m.lambda);
  const Complex b(p.b.data()[2 * i], p.b.data()[2 * i + 1]);
  m.bbar = (m.z - 1.0) / m.lambda * b;
  m.c = Complex(p.c.data()[2 * i], p.c.data()[2 * i + 1]);
  return m;
}

}  // namespace

Tensor s4d_kernel(const S4dParams& p, std::size_t length) {
  check_s4d(p);
  const std::size_t d = p.log_neg_real.dim(0), states = p.log_neg_real.dim(1);
  std::vector<double> kernel(length * d, 0.0);
  for (std::size_t ch = 0; ch < d; ++ch) {
    for (std::size_t n = 0; n < states; ++n) {
      const S4dMode m = s4d_mode(p, ch, n);
      Complex w = m.c * m.bbar;
      for (std::size_t t = 0; t < length; ++t) {
        kernel[t * d + ch] += w.real();
        w *= m.z;
      }
    }
  }
  S4dParams snapshot = p;
  return ad::make_result(
      {length, d}, std::move(kernel), {p.log_neg_real, p.imag, p.b, p.c, p.log_dt},
      [snapshot, length, d, states](Node& self) {
        Node& n_re = *self.inputs[0];
        Node& n_im = *self.inputs[1];
        Node& n_b = *self.inputs[2];
        Node& n_c = *self.inputs[3];
        Node& n_dt = *self.inputs[4];
        for (std::size_t ch = 0; ch < d; ++ch) {
          double g_dt = 0.0;
          for (std::size_t n = 0; n < states; ++n) {
            const S4dMode m = s4d_mode(snapshot, ch, n);
            // s0 = sum_t g_t z^t, s1 = sum_t g_t t z^(t-1)
            Complex s0(0.0), s1(0.0), zt(1.0), zt1(0.0);
            for (std::size_t t = 0; t < length; ++t) {
              const double g = self.grad[t * d + ch];
              s0 += g * zt;
              s1 += g * static_cast<double>(t) * zt1;
              zt1 = zt;
              zt *= m.z;
            }
            const std::size_t i = ch * states + n;
            const Complex b(n_b.value[2 * i], n_b.value[2 * i + 1]);
            const Complex cb = m.c * b;
            const Complex zm1 = m.z - 1.0;
            // loss = Re(c * bbar * s0); complex parameters get (Re, -Im) of the coefficient.
            if (n_c.requires_grad) {
              const Complex coef = m.bbar * s0;
              n_c.grad_buffer()[2 * i] += coef.real();
              n_c.grad_buffer()[2 * i + 1] -= coef.imag();
            }
            if (n_b.requires_grad) {
              const Complex coef = m.c * zm1 / m.lambda * s0;
              n_b.grad_buffer()[2 * i] += coef.real();
              n_b.grad_buffer()[2 * i + 1] -= coef.imag();
            }
            const Complex inner = s0 + zm1 * s1;
            const Complex g_lambda =
                cb * (m.dt * m.z * inner / m.lambda - zm1 * s0 / (m.lambda * m.lambda));
            if (n_re.requires_grad) n_re.grad_buffer()[i] += g_lambda.real() * m.lambda.real();
            if (n_im.requires_grad) n_im.grad_buffer()[i] -= g_lambda.imag();
            g_dt += (cb * m.z * inner).real();
          }
          if (n_dt.requires_grad) n_dt.grad_buffer()[ch] += g_dt * std::exp(n_dt.value[ch]);
        }
      },
      "s4d_kernel");
}

Tensor s4d_forward(const S4dParams& p, const Tensor& u) {
  check_s4d(p);
  require_rank_at_least(u, 2, "s4d");
  if (u.dim(-1) != p.d_skip.dim(0)) {
    throw InvalidArgument("s4d: input has " + std::to_string(u.dim(-1)) + " channels, layer expects " +
                          std::to_string(p.d_skip.dim(0)));
  }
  Tensor kernel = s4d_kernel(p, u.dim(-2));
  return ad::add(fft::causal_conv(u, kernel), ad::mul(u, p.d_skip));
}

std::vector<double> s4d_recurrence(const S4dParams& p, const Tensor& u) {
  check_s4d(p);
  require_rank_at_least(u, 2, "s4d_recurrence");
  const std::size_t d = p.log_neg_real.dim(0), states = p.log_neg_real.dim(1);
  if (u.dim(-1) != d) throw InvalidArgument("s4d_recurrence: channel mismatch");
  const std::size_t t_len = u.dim(-2);
  const std::size_t batch = u.size() / (t_len * d);
  std::vector<S4dMode> modes;
  modes.reserve(d * states);
  for (std::size_t ch = 0; ch < d; ++ch)
    for (std::size_t n = 0; n < states; ++n) modes.push_back(s4d_mode(p, ch, n));
  std::vector<double> y(u.size());
  std::vector<Complex> h(d * states);
  for (std::size_t b = 0; b < batch; ++b) {
    std::fill(h.begin(), h.end(), Complex(0.0));
    for (std::size_t t = 0; t < t_len; ++t) {
      for (std::size_t ch = 0; ch < d; ++ch) {
        const double x = u.data()[(b * t_len + t) * d + ch];
        double acc = p.d_skip.data()[ch] * x;
        for (std::size_t n = 0; n < states; ++n) {
          const S4dMode& m = modes[ch * states + n];
          Complex& state = h[ch * states + n];
          state = m.z * state + m.bbar * x;
          acc += (m.c * state).real();
        }
        y[(b * t_len + t) * d + ch] = acc;
      }
    }
  }
  return y;
}

// ---- feed-forward, mixture of experts, normalization --------------------------------

Tensor swiglu_mlp(const Tensor& x, const SwiGluParams& p) {
  Tensor a = ad::matmul(x, p.w1);
  Tensor g = ad::silu(ad::matmul(x, p.wg));
  return ad::matmul(ad::mul(a, g), p.w2);
}

Routing top_k_routing(std::span<const double> probs, std::size_t experts, std::size_t top_k) {
  if (experts == 0 || probs.size() % experts != 0) throw InvalidArgument("top_k_routing: bad probability table");
  if (top_k == 0 || top_k > experts) {
    throw InvalidArgument("top_k_routing: top_k must be in [1, " + std::to_string(experts) + "]");
  }
  const std::size_t rows = probs.size() / experts;
  Routing routing(probs.size(), 0);
  std::vector<std::size_t> order(experts);
  for (std::size_t r = 0; r < rows; ++r) {
    std::iota(order.begin(), order.end(), 0);
    const double* p = probs.data() + r * experts;
    std::stable_sort(order.begin(), order.end(), [p](std::size_t a, std::size_t b) { return p[a] > p[b]; });
    for (std::size_t i = 0; i < top_k; ++i) routing[r * experts + order[i]] = 1;
  }
  return routing;
}

Tensor routing_weights(const Tensor& probs, const Routing& routing) {
  if (probs.rank() != 2 || routing.size() != probs.size()) {
    throw InvalidArgument("routing_weights: probabilities " + shape_str(probs.shape()) + " do not match routing");
  }
  const std::size_t rows = probs.dim(0), experts = probs.dim(1);
  std::vector<double> out(probs.size(), 0.0);
  std::vector<double> totals(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t e = 0; e < experts; ++e)
      if (routing[r * experts + e]) s += probs.data()[r * experts + e];
    if (!(s > 0.0)) throw NumericFailure("routing_weights: selected probabilities sum to " + std::to_string(s));
    totals[r] = s;
    for (std::size_t e = 0; e < experts; ++e)
      if (routing[r * experts + e]) out[r * experts + e] = probs.data()[r * experts + e] / s;
  }
  return ad::make_result(
      probs.shape(), std::move(out), {probs},
      [routing, totals = std::move(totals), rows, experts](Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
          double dot = 0.0;
          for (std::size_t e = 0; e < experts; ++e) dot += self.grad[r * experts + e] * self.value[r * experts + e];
          for (std::size_t e = 0; e < experts; ++e)
            if (routing[r * experts + e]) g[r * experts + e] += (self.grad[r * experts + e] - dot) / totals[r];
        }
      },
      "routing_weights");
}

Tensor moe_forward(const Tensor& x, const MoeParams& p, std::size_t top_k, const Routing* frozen, Routing* used) {
  const std::size_t d = x.dim(-1);
  const std::size_t experts = p.experts.size();
  if (p.router.rank() != 2 || p.router.dim(0) != d || p.router.dim(1) != experts) {
    throw InvalidArgument("moe: router must be [" + std::to_string(d) + ", " + std::to_string(experts) + "], got " +
                          shape_str(p.router.shape()));
  }
  const std::size_t tokens = x.size() / d;
  Tensor flat = ad::reshape(x, {tokens, d});
  Tensor probs = ad::softmax(ad::matmul(flat, p.router));
  Routing routing;
  if (frozen != nullptr) {
    if (frozen->size() != tokens * experts) throw InvalidArgument("moe: frozen routing has the wrong size");
    routing = *frozen;
  } else {
    routing = top_k_routing(probs.data(), experts, top_k);
  }
  Tensor weights = routing_weights(probs, routing);
  Tensor out;
  for (std::size_t e = 0; e < experts; ++e) {
    bool any = false;
    for (std::size_t t = 0; t < tokens && !any; ++t) any = routing[t * experts + e] != 0;
    if (!any) continue;
    Tensor w = ad::reshape(ad::slice(weights, 1, e, 1), {tokens});
    Tensor y = ad::scale_rows(swiglu_mlp(flat, p.experts[e]), w);
    out = out.defined() ? ad::add(out, y) : y;
  }
  if (used != nullptr) *used = std::move(routing);
  return ad::reshape(out, x.shape());
}

Tensor rmsnorm(const Tensor& x, const Tensor& gamma, double eps) {
  if (!(eps >= 0.0)) throw InvalidArgument("rmsnorm: eps must be >= 0, got " + std::to_string(eps));
  require_rank_at_least(x, 1, "rmsnorm");
  const std::size_t n = x.dim(-1);
  if (gamma.shape() != Shape{n}) {
    throw InvalidArgument("rmsnorm: gamma must be [" + std::to_string(n) + "], got " + shape_str(gamma.shape()));
  }
  const std::size_t rows = x.size() / n;
  std::vector<double> inv(rows, 0.0);
  std::vector<double> out(x.size(), 0.0);
  const double* xd = x.data().data();
  const double* gd = gamma.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    double ms = 0.0;
    for (std::size_t i = 0; i < n; ++i) ms += xd[r * n + i] * xd[r * n + i];
    const double rms = std::sqrt(ms / static_cast<double>(n) + eps);
    if (rms == 0.0) continue;  // all-zero row with eps = 0
    inv[r] = 1.0 / rms;
    for (std::size_t i = 0; i < n; ++i) out[r * n + i] = xd[r * n + i] * inv[r] * gd[i];
  }
  return ad::make_result(
      x.shape(), std::move(out), {x, gamma},
      [inv = std::move(inv), rows, n](Node& self) {
        Node& nx = *self.inputs[0];
        Node& ng = *self.inputs[1];
        for (std::size_t r = 0; r < rows; ++r) {
          if (inv[r] == 0.0) continue;
          const double* xr = nx.value.data() + r * n;
          const double* gy = self.grad.data() + r * n;
          if (ng.requires_grad) {
            auto& gg = ng.grad_buffer();
            for (std::size_t i = 0; i < n; ++i) gg[i] += gy[i] * xr[i] * inv[r];
          }
          if (nx.requires_grad) {
            auto& gx = nx.grad_buffer();
            double dot = 0.0;
            for (std::size_t i = 0; i < n; ++i) dot += gy[i] * ng.value[i] * xr[i];
            const double c = dot * inv[r] * inv[r] * inv[r] / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) gx[r * n + i] += gy[i] * ng.value[i] * inv[r] - xr[i] * c;
          }
        }
      },
      "rmsnorm");
}

// ---- model assembly ---------------------------------------------------------------------

namespace {

bool is_spectral(BlockKind kind) { return kind == BlockKind::kStu || kind == BlockKind::kStuT; }

// Single-layer spectral models read real inputs without a projection.
bool raw_core_input(const ModelConfig& cfg) { return cfg.single_layer && is_spectral(cfg.block_kind) && cfg.vocab == 0; }

std::size_t filter_rows(const ModelConfig& cfg) { return cfg.n_filters * (cfg.alternating_filters ? 2 : 1); }

void require(bool ok, const std::string& message) {
  if (!ok) throw InvalidArgument("model config: " + message);
}

}  // namespace

void ModelConfig::validate() const {
  require(width > 0, "width must be positive");
  require(depth > 0, "depth must be positive");
  require(output_dim > 0, "output_dim must be positive");
  require(vocab > 0 || input_dim > 0, "input_dim must be positive for real-valued inputs");
  require(!single_layer || depth == 1, "single_layer requires depth 1");
  if (is_spectral(block_kind)) {
    require(n_filters > 0, "n_filters must be positive");
    require(filter_length > 0, "filter_length must be positive");
    require(n_filters <= filter_length, "n_filters must not exceed filter_length");
  }
  if (block_kind == BlockKind::kAttention) {
    require(n_heads > 0 && width % n_heads == 0, "width must be divisible by n_heads");
  }
  if (block_kind == BlockKind::kS4d) require(s4d_state > 0, "s4d_state must be positive");
  if (!single_layer) {
    require(mlp_scale > 0, "mlp_scale must be positive");
    if (use_moe) {
      require(n_experts > 0, "n_experts must be positive");
      require(top_k >= 1 && top_k <= n_experts, "top_k must lie in [1, n_experts]");
    }
  }
  require(norm_eps >= 0.0, "norm_eps must be non-negative");
}

std::size_t expected_parameter_count(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t w = cfg.width;
  std::size_t count = 0;
  if (cfg.vocab > 0) {
    count += cfg.vocab * w;
  } else if (!raw_core_input(cfg)) {
    count += cfg.input_dim * w;
  }
  count += cfg.positional_length * w;
  const std::size_t d_in = raw_core_input(cfg) ? cfg.input_dim : w;
  const std::size_t k = filter_rows(cfg);
  const std::size_t hidden = w * cfg.mlp_scale;
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    switch (cfg.block_kind) {
      case BlockKind::kStu: count += k * d_in * w; break;
      case BlockKind::kStuT: count += d_in * w + k * w; break;
      case BlockKind::kAttention: count += 4 * w * w; break;
      case BlockKind::kS4d: count += w * cfg.s4d_state * 6 + 2 * w; break;
    }
    if (is_spectral(cfg.block_kind) && cfg.learnable_filters) count += cfg.n_filters * cfg.filter_length;
    if (!cfg.single_layer) {
      count += 2 * w;
      count += cfg.use_moe ? w * cfg.n_experts + cfg.n_experts * 3 * w * hidden : 3 * w * hidden;
    }
  }
  if (!cfg.single_layer) count += w;
  count += w * cfg.output_dim;
  return count;
}

Tensor& Model::add_param(const std::string& name, Tensor t) {
  t.set_requires_grad(true);
  params_.push_back({name, std::move(t)});
  return params_.back().tensor;
}

Model::Model(ModelConfig cfg, spectral::FilterBank bank, std::uint64_t seed) : cfg_(std::move(cfg)), bank_(std::move(bank)) {
  cfg_.validate();
  if (is_spectral(cfg_.block_kind) && (bank_.count != cfg_.n_filters || bank_.length != cfg_.filter_length)) {
    throw InvalidArgument("model: filter bank is " + std::to_string(bank_.count) + "x" + std::to_string(bank_.length) +
                          ", config expects " + std::to_string(cfg_.n_filters) + "x" +
                          std::to_string(cfg_.filter_length));
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto gaussian = [&](Shape shape, double stddev) {
    std::vector<double> v(ad::numel(shape));
    for (double& x : v) x = normal(rng) * stddev;
    return Tensor::from(std::move(shape), std::move(v));
  };
  auto linear = [&](std::size_t fan_in, std::size_t fan_out) {
    return gaussian({fan_in, fan_out}, 1.0 / std::sqrt(static_cast<double>(fan_in)));
  };
  const std::size_t w = cfg_.width;
  if (is_spectral(cfg_.block_kind)) {
    fixed_filters_ = Tensor::from({bank_.count, bank_.length}, bank_.filters.values());
  }
  if (cfg_.block_kind == BlockKind::kAttention) slopes_ = alibi_slopes(cfg_.n_heads);

  if (cfg_.vocab > 0) {
    embed_ = add_param("embed", gaussian({cfg_.vocab, w}, 1.0));
  } else if (!raw_core_input(cfg_)) {
    in_proj_ = add_param("in_proj", linear(cfg_.input_dim, w));
  }
  if (cfg_.positional_length > 0) pos_ = add_param("pos", gaussian({cfg_.positional_length, w}, 0.02));

  const std::size_t d_in = raw_core_input(cfg_) ? cfg_.input_dim : w;
  const std::size_t k = filter_rows(cfg_);
  const std::size_t hidden = w * cfg_.mlp_scale;
  auto swiglu = [&](const std::string& prefix) {
    SwiGluParams p;
    p.w1 = add_param(prefix + ".w1", linear(w, hidden));
    p.wg = add_param(prefix + ".wg", linear(w, hidden));
    p.w2 = add_param(prefix + ".w2", linear(hidden, w));
    return p;
  };
  for (std::size_t l = 0; l < cfg_.depth; ++l) {
    const std::string prefix = "blocks." + std::to_string(l);
    Block block;
    if (!cfg_.single_layer) block.norm1 = add_param(prefix + ".norm1", Tensor::full({w}, 1.0));
    switch (cfg_.block_kind) {
      case BlockKind::kStu:
        block.stu = StuParams{add_param(prefix + ".stu.m", Tensor::zeros({k, d_in, w})), std::nullopt, cfg_.activation};
        break;
      case BlockKind::kStuT: {
        StuTParams p;
        p.m1 = add_param(prefix + ".stu_t.m1", linear(d_in, w));
        p.m2 = add_param(prefix + ".stu_t.m2", Tensor::zeros({k, w}));
        p.activation = cfg_.activation;
        block.stu_t = p;
        break;
      }
      case BlockKind::kAttention: {
        AttentionParams p;
        p.wq = add_param(prefix + ".attn.wq", linear(w, w));
        p.wk = add_param(prefix + ".attn.wk", linear(w, w));
        p.wv = add_param(prefix + ".attn.wv", linear(w, w));
        p.wo = add_param(prefix + ".attn.wo", linear(w, w));
        block.attention = p;
        break;
      }
      case BlockKind::kS4d: {
        S4dParams p = init_s4d(w, cfg_.s4d_state, rng);
        p.log_neg_real = add_param(prefix + ".s4d.log_neg_real", p.log_neg_real);
        p.imag = add_param(prefix + ".s4d.imag", p.imag);
        p.b = add_param(prefix + ".s4d.b", p.b);
        p.c = add_param(prefix + ".s4d.c", p.c);
        p.log_dt = add_param(prefix + ".s4d.log_dt", p.log_dt);
        p.d_skip = add_param(prefix + ".s4d.d_skip", p.d_skip);
        block.s4d = p;
        break;
      }
    }
    if (is_spectral(cfg_.block_kind) && cfg_.learnable_filters) {
      block.filters = add_param(prefix + ".filters", fixed_filters_.detach());
    }
    if (!cfg_.single_layer) {
      block.norm2 = add_param(prefix + ".norm2", Tensor::full({w}, 1.0));
      if (cfg_.use_moe) {
        MoeParams moe;
        moe.router = add_param(prefix + ".moe.router", linear(w, cfg_.n_experts));
        for (std::size_t e = 0; e < cfg_.n_experts; ++e) moe.experts.push_back(swiglu(prefix + ".moe.expert" + std::to_string(e)));
        block.moe = std::move(moe);
      } else {
        block.mlp = swiglu(prefix + ".mlp");
      }
    }
    blocks_.push_back(std::move(block));
  }
  if (!cfg_.single_layer) final_norm_ = add_param("final_norm", Tensor::full({w}, 1.0));
  head_ = add_param("head", linear(w, cfg_.output_dim));
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.size();
  return n;
}

Tensor& Model::param(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p.tensor;
  throw InvalidArgument("model has no parameter '" + name + "'");
}

Tensor Model::filters_for(const Block& block) const {
  return layer_filters(block.filters ? *block.filters : fixed_filters_, cfg_.alternating_filters);
}

Tensor Model::core(const Block& block, const Tensor& x) const {
  if (block.stu) return stu_forward(filters_for(block), *block.stu, x);
  if (block.stu_t) return stu_t_forward(filters_for(block), *block.stu_t, x);
  if (block.attention) return alibi_attention(x, *block.attention, cfg_.n_heads, slopes_);
  return s4d_forward(*block.s4d, x);
}

Tensor Model::run(Tensor x) const {
  if (pos_) {
    const std::size_t t_len = x.dim(-2);
    if (t_len > pos_->dim(0)) {
      throw InvalidArgument("model: sequence length " + std::to_string(t_len) + " exceeds positional table of " +
                            std::to_string(pos_->dim(0)));
    }
    x = ad::add(x, ad::slice(*pos_, 0, 0, t_len));
  }
  if (cfg_.single_layer) return ad::matmul(core(blocks_.front(), x), head_);
  const Tensor x0 = x;
  last_routing_.assign(blocks_.size(), {});
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const Block& block = blocks_[l];
    x = ad::add(x, core(block, rmsnorm(x, *block.norm1, cfg_.norm_eps)));
    if (cfg_.global_skips) x = ad::add(x, x0);
    Tensor h = rmsnorm(x, *block.norm2, cfg_.norm_eps);
    if (block.moe) {
      const Routing* frozen = l < frozen_routing_.size() && !frozen_routing_[l].empty() ? &frozen_routing_[l] : nullptr;
      h = moe_forward(h, *block.moe, cfg_.top_k, frozen, &last_routing_[l]);
    } else {
      h = swiglu_mlp(h, *block.mlp);
    }
    x = ad::add(x, h);
    if (cfg_.global_skips) x = ad::add(x, x0);
  }
  return ad::matmul(rmsnorm(x, *final_norm_, cfg_.norm_eps), head_);
}

Tensor Model::forward(const Tensor& inputs) const {
  if (cfg_.vocab > 0) throw InvalidArgument("model: token model needs forward_tokens()");
  if (inputs.rank() != 3 || inputs.dim(-1) != cfg_.input_dim) {
    throw InvalidArgument("model: expected inputs [B, T, " + std::to_string(cfg_.input_dim) + "], got " +
                          shape_str(inputs.shape()));
  }
  return run(in_proj_ ? ad::matmul(inputs, *in_proj_) : inputs);
}

Tensor Model::forward_tokens(std::span<const std::int64_t> tokens, std::size_t batch, std::size_t length) const {
  if (cfg_.vocab == 0) throw InvalidArgument("model: real-valued model needs forward()");
  if (tokens.size() != batch * length) throw InvalidArgument("model: token count does not match batch x length");
  return run(ad::embedding(*embed_, tokens, {batch, length}));
}

Model build_model(const ModelConfig& cfg, const spectral::FilterBank& bank, std::uint64_t seed) {
  return Model(cfg, bank, seed);
}

spectral::FilterBank bank_for(const ModelConfig& cfg) {
  return spectral::compute_filters(cfg.filter_length, cfg.n_filters, cfg.learnable_filters);
}

}  // namespace stulab::nn

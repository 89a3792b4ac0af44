#include <functional>
#include <numbers>
#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "stulab/error.hpp"
#include "stulab/fft_conv.hpp"
#include "stulab/layers.hpp"

using namespace stulab;
using namespace stulab::nn;
using ad::Shape;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, bool grad = false, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = normal(rng) * scale;
  return Tensor::from(std::move(shape), std::move(v), grad);
}

Tensor bank_tensor(std::size_t L, std::size_t K, bool grad = false) {
  auto bank = spectral::compute_filters(L, K);
  return Tensor::from({K, L}, bank.filters.values(), grad);
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

bool all_zero(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](double v) { return v == 0.0; });
}

Tensor sq_loss(const Tensor& y, std::uint64_t seed) {
  Tensor target = random_tensor(y.shape(), seed);
  return ad::mean(ad::square(ad::sub(y, target)));
}

// Perturbs u at time t0 and returns the largest output change at times < t0.
double leakage(const std::function<Tensor(const Tensor&)>& f, const Tensor& u, std::size_t t0) {
  const std::size_t T = u.dim(-2), d = u.dim(-1);
  Tensor base = f(u);
  Tensor v = u.detach();
  const std::size_t batch = u.size() / (T * d);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = t0; t < T; ++t)
      for (std::size_t c = 0; c < d; ++c) v.values()[(b * T + t) * d + c] += 3.0 + 0.1 * static_cast<double>(c);
  Tensor moved = f(v);
  const std::size_t dout = base.dim(-1);
  double leak = 0.0;
  double change_after = 0.0;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = 0; c < dout; ++c) {
        const std::size_t i = (b * T + t) * dout + c;
        const double diff = std::abs(base.data()[i] - moved.data()[i]);
        if (t < t0) leak = std::max(leak, diff);
        else change_after = std::max(change_after, diff);
      }
  CHECK(change_after > 1e-8);  // the probe actually reaches the block
  return leak;
}

}  // namespace

TEST_CASE("stu: zero projections give zero output") {
  Tensor f = bank_tensor(16, 4);
  StuParams p{Tensor::zeros({4, 3, 2}), std::nullopt, Activation::kIdentity};
  Tensor y = stu_forward(f, p, random_tensor({10, 3}, 1));
  for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("stu: single filter with unit projection equals the featurized channel") {
  Tensor f = bank_tensor(12, 1);
  Tensor u = random_tensor({15, 1}, 2);
  StuParams p{Tensor::full({1, 1, 1}, 1.0), std::nullopt, Activation::kIdentity};
  Tensor y = stu_forward(f, p, u);
  Tensor x = fft::featurize(f, u);
  CHECK(max_abs_diff(y.data(), x.data()) < 1e-14);
}

TEST_CASE("stu: matches a per-timestep direct sum") {
  const std::size_t T = 20, L = 8, K = 3, din = 2, dout = 4;
  Tensor f = bank_tensor(L, K);
  Tensor u = random_tensor({T, din}, 3);
  Tensor m = random_tensor({K, din, dout}, 4);
  StuParams p{m, std::nullopt, Activation::kRelu};
  Tensor y = stu_forward(f, p, u);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t o = 0; o < dout; ++o) {
      double s = 0.0;
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t i = 0; i < din; ++i)
          for (std::size_t lag = 0; lag < L && lag <= t; ++lag)
            s += m.at({k, i, o}) * f.at({k, lag}) * u.at({t - lag, i});
      CHECK(std::abs(y.at({t, o}) - std::max(s, 0.0)) < 1e-10);
    }
}

TEST_CASE("stu: input lift equals filtering the lifted input") {
  Tensor f = bank_tensor(10, 2);
  Tensor u = random_tensor({2, 9, 3}, 5);
  Tensor lift = random_tensor({3, 4}, 6);
  Tensor m = random_tensor({2, 4, 2}, 7);
  Tensor lifted = stu_forward(f, StuParams{m, lift, Activation::kIdentity}, u);
  Tensor direct = stu_forward(f, StuParams{m, std::nullopt, Activation::kIdentity}, ad::matmul(u, lift));
  CHECK(max_abs_diff(lifted.data(), direct.data()) < 1e-12);
}

TEST_CASE("stu: mismatched filter count is rejected") {
  Tensor f = bank_tensor(10, 3);
  StuParams p{Tensor::zeros({2, 1, 1}), std::nullopt, Activation::kIdentity};
  CHECK_THROWS_AS(stu_forward(f, p, random_tensor({5, 1}, 1)), InvalidArgument);
}

TEST_CASE("stu_t: zero gains give zero output") {
  Tensor f = bank_tensor(16, 4);
  StuTParams p{random_tensor({3, 2}, 1), Tensor::zeros({4, 2}), Activation::kIdentity};
  Tensor y = stu_t_forward(f, p, random_tensor({10, 3}, 2));
  for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("stu_t: equals stu with the constrained full tensor") {
  std::uint64_t seed = 10;
  for (std::size_t K : {1, 4, 16})
    for (std::size_t din : {1, 3, 8})
      for (std::size_t dout : {1, 5})
        for (std::size_t T : {7, 33}) {
          Tensor f = bank_tensor(std::max<std::size_t>(K, 20), K);
          StuTParams p{random_tensor({din, dout}, ++seed), random_tensor({K, dout}, ++seed), Activation::kIdentity};
          Tensor u = random_tensor({2, T, din}, ++seed);
          Tensor a = stu_t_forward(f, p, u);
          Tensor b = stu_forward(f, StuParams{stu_t_full_tensor(p), std::nullopt, Activation::kIdentity}, u);
          INFO("K=" << K << " din=" << din << " dout=" << dout << " T=" << T);
          CHECK(max_abs_diff(a.data(), b.data()) < 1e-12);
        }
}

TEST_CASE("stu_t: convolution work shrinks by the filter count") {
  const std::size_t T = 100, L = 100, K = 16, d = 32;
  const std::size_t full = fft::causal_conv_macs(T, L, K * d);
  const std::size_t tensordot = fft::causal_conv_macs(T, L, d);
  // direct count for one channel: sum_t min(t + 1, L)
  std::size_t per_channel = 0;
  for (std::size_t t = 0; t < T; ++t) per_channel += std::min(t + 1, L);
  CHECK(tensordot == per_channel * d);
  CHECK(full == per_channel * K * d);
  CHECK(static_cast<double>(tensordot) / static_cast<double>(full) == doctest::Approx(1.0 / K));
}

TEST_CASE("layer_filters: alternating copy flips odd taps") {
  Tensor f = bank_tensor(6, 2);
  Tensor both = layer_filters(f, true);
  REQUIRE(both.shape() == Shape{4, 6});
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t s = 0; s < 6; ++s) {
      CHECK(both.at({k, s}) == f.at({k, s}));
      CHECK(both.at({k + 2, s}) == (s % 2 == 0 ? 1.0 : -1.0) * f.at({k, s}));
    }
  CHECK(layer_filters(f, false).shape() == Shape{2, 6});
}

TEST_CASE("attention: slopes follow the geometric schedule") {
  auto s = alibi_slopes(8);
  REQUIRE(s.size() == 8);
  for (std::size_t h = 0; h < 8; ++h) CHECK(s[h] == doctest::Approx(std::pow(0.5, static_cast<double>(h + 1))));
}

TEST_CASE("attention: a single token returns its value projection") {
  const std::size_t d = 4;
  Tensor x = random_tensor({1, d}, 1);
  AttentionParams p{random_tensor({d, d}, 2), random_tensor({d, d}, 3), random_tensor({d, d}, 4),
                    random_tensor({d, d}, 5)};
  Tensor y = alibi_attention(x, p, 2, alibi_slopes(2));
  Tensor expect = ad::matmul(ad::matmul(x, p.wv), p.wo);
  CHECK(max_abs_diff(y.data(), expect.data()) < 1e-14);
}

TEST_CASE("attention: zero scores leave only the distance bias") {
  // q = 0 makes every score zero; v = one-hot time stamps read out the weights.
  Tensor q = Tensor::zeros({2, 2});
  Tensor k = random_tensor({2, 2}, 1);
  Tensor v = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor y = alibi_attention_core(q, k, v, 1, {0.5});
  CHECK(y.at({1, 0}) == doctest::Approx(0.37754).epsilon(1e-5));
  CHECK(y.at({1, 1}) == doctest::Approx(0.62246).epsilon(1e-5));
  CHECK(y.at({1, 0}) == doctest::Approx(std::exp(-0.5) / (1.0 + std::exp(-0.5))).epsilon(1e-14));
  CHECK(y.at({0, 0}) == 1.0);
}

TEST_CASE("attention: matches a reference loop") {
  const std::size_t T = 16, d = 8, H = 4, dh = d / H;
  Tensor x = random_tensor({T, d}, 11);
  AttentionParams p{random_tensor({d, d}, 12, false, 0.4), random_tensor({d, d}, 13, false, 0.4),
                    random_tensor({d, d}, 14), random_tensor({d, d}, 15)};
  auto slopes = alibi_slopes(H);
  Tensor y = alibi_attention(x, p, H, slopes);
  Tensor q = ad::matmul(x, p.wq), k = ad::matmul(x, p.wk), v = ad::matmul(x, p.wv);
  std::vector<double> heads(T * d, 0.0);
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t i = 0; i < T; ++i) {
      std::vector<double> w(i + 1);
      double z = 0.0;
      for (std::size_t j = 0; j <= i; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += q.at({i, h * dh + c}) * k.at({j, h * dh + c});
        w[j] = std::exp(s / std::sqrt(double(dh)) - slopes[h] * double(i - j));
        z += w[j];
      }
      for (std::size_t j = 0; j <= i; ++j)
        for (std::size_t c = 0; c < dh; ++c) heads[i * d + h * dh + c] += w[j] / z * v.at({j, h * dh + c});
    }
  Tensor expect = ad::matmul(Tensor::from({T, d}, heads), p.wo);
  CHECK(max_abs_diff(y.data(), expect.data()) < 1e-10);
}

TEST_CASE("attention: width must divide into heads") {
  Tensor x = random_tensor({3, 6}, 1);
  AttentionParams p{random_tensor({6, 6}, 2), random_tensor({6, 6}, 3), random_tensor({6, 6}, 4),
                    random_tensor({6, 6}, 5)};
  CHECK_THROWS_AS(alibi_attention(x, p, 4, alibi_slopes(4)), InvalidArgument);
}

TEST_CASE("s4d: zero output vectors leave the feedthrough") {
  std::mt19937_64 rng(3);
  S4dParams p = init_s4d(3, 8, rng);
  p.c = Tensor::zeros({3, 8, 2});
  Tensor u = random_tensor({12, 3}, 4);
  Tensor y = s4d_forward(p, u);
  for (std::size_t t = 0; t < 12; ++t)
    for (std::size_t c = 0; c < 3; ++c) CHECK(y.at({t, c}) == doctest::Approx(p.d_skip.at({c}) * u.at({t, c})).epsilon(1e-15));
}

TEST_CASE("s4d: a single real pole has a geometric kernel") {
  const double a = -0.7, dt = 0.05, b = 1.3, c = -0.4;
  S4dParams p{Tensor::from({1, 1}, {std::log(-a)}), Tensor::zeros({1, 1}), Tensor::from({1, 1, 2}, {b, 0.0}),
              Tensor::from({1, 1, 2}, {c, 0.0}), Tensor::from({1}, {std::log(dt)}), Tensor::zeros({1})};
  Tensor k = s4d_kernel(p, 30);
  const double z = std::exp(dt * a);
  const double bbar = (z - 1.0) / a * b;
  for (std::size_t t = 0; t < 30; ++t) CHECK(k.at({t, 0}) == doctest::Approx(c * std::pow(z, double(t)) * bbar).epsilon(1e-12));
}

TEST_CASE("s4d: recurrence and kernel convolution agree") {
  std::mt19937_64 rng(21);
  S4dParams p = init_s4d(4, 16, rng);
  Tensor u = random_tensor({2, 64, 4}, 22);
  Tensor y = s4d_forward(p, u);
  auto r = s4d_recurrence(p, u);
  CHECK(max_abs_diff(y.data(), r) < 1e-8);
}

TEST_CASE("s4d: initialization keeps poles stable") {
  std::mt19937_64 rng(5);
  S4dParams p = init_s4d(6, 10, rng);
  for (double v : p.log_neg_real.data()) CHECK(-std::exp(v) < 0.0);
  for (double v : p.log_dt.data()) {
    CHECK(std::exp(v) >= 1e-3 - 1e-15);
    CHECK(std::exp(v) <= 1e-1 + 1e-15);
  }
  CHECK(p.imag.at({0, 3}) == doctest::Approx(3.0 * std::numbers::pi));
}

TEST_CASE("swiglu: zero input and zero gate give zero output") {
  SwiGluParams p{random_tensor({4, 6}, 1), random_tensor({4, 6}, 2), random_tensor({6, 4}, 3)};
  CHECK(all_zero(swiglu_mlp(Tensor::zeros({3, 4}), p)));
  p.wg = Tensor::zeros({4, 6});
  CHECK(all_zero(swiglu_mlp(random_tensor({3, 4}, 4), p)));
}

TEST_CASE("swiglu: gradients match finite differences") {
  SwiGluParams p{random_tensor({4, 6}, 1, true), random_tensor({4, 6}, 2, true), random_tensor({6, 4}, 3, true)};
  Tensor x = random_tensor({3, 4}, 4, true);
  auto r = ad::finite_diff_check([&] { return sq_loss(swiglu_mlp(x, p), 9); }, {x, p.w1, p.wg, p.w2});
  CHECK(r.max_rel_error <= 1e-6);
}

TEST_CASE("moe: one expert reproduces that expert") {
  MoeParams p{random_tensor({4, 1}, 1), {SwiGluParams{random_tensor({4, 4}, 2), random_tensor({4, 4}, 3),
                                                     random_tensor({4, 4}, 4)}}};
  Tensor x = random_tensor({5, 4}, 5);
  Tensor y = moe_forward(x, p, 1);
  CHECK(max_abs_diff(y.data(), swiglu_mlp(x, p.experts[0]).data()) < 1e-14);
}

TEST_CASE("moe: equal logits pick the lowest indices with equal weight") {
  std::vector<double> probs(4, 0.25);
  Routing r = top_k_routing(probs, 4, 2);
  CHECK(r == Routing{1, 1, 0, 0});
  Tensor w = routing_weights(Tensor::from({1, 4}, probs), r);
  CHECK(w.at({0, 0}) == 0.5);
  CHECK(w.at({0, 1}) == 0.5);
  CHECK(w.at({0, 2}) == 0.0);
  MoeParams p;
  p.router = Tensor::zeros({3, 4});
  for (int e = 0; e < 4; ++e)
    p.experts.push_back(SwiGluParams{random_tensor({3, 3}, 10 + e), random_tensor({3, 3}, 20 + e), random_tensor({3, 3}, 30 + e)});
  Tensor x = random_tensor({2, 3}, 7);
  Routing used;
  Tensor y = moe_forward(x, p, 2, nullptr, &used);
  CHECK(used == Routing{1, 1, 0, 0, 1, 1, 0, 0});
  Tensor expect = ad::scale(ad::add(swiglu_mlp(x, p.experts[0]), swiglu_mlp(x, p.experts[1])), 0.5);
  CHECK(max_abs_diff(y.data(), expect.data()) < 1e-14);
}

TEST_CASE("moe: selecting every expert equals the dense softmax mixture") {
  const std::size_t d = 3, E = 3;
  MoeParams p{random_tensor({d, E}, 1)};
  for (std::size_t e = 0; e < E; ++e)
    p.experts.push_back(SwiGluParams{random_tensor({d, 5}, 10 + e), random_tensor({d, 5}, 20 + e), random_tensor({5, d}, 30 + e)});
  Tensor x = random_tensor({4, d}, 2);
  Tensor y = moe_forward(x, p, E);
  Tensor probs = ad::softmax(ad::matmul(x, p.router));
  std::vector<double> dense(4 * d, 0.0);
  for (std::size_t e = 0; e < E; ++e) {
    Tensor ye = swiglu_mlp(x, p.experts[e]);
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t c = 0; c < d; ++c) dense[t * d + c] += probs.at({t, e}) * ye.at({t, c});
  }
  CHECK(max_abs_diff(y.data(), dense) < 1e-12);
}

TEST_CASE("moe: gradients with frozen routing match finite differences") {
  const std::size_t d = 3, E = 4;
  MoeParams p{random_tensor({d, E}, 1, true)};
  std::vector<Tensor> params{p.router};
  for (std::size_t e = 0; e < E; ++e) {
    p.experts.push_back(SwiGluParams{random_tensor({d, 4}, 10 + e, true), random_tensor({d, 4}, 20 + e, true),
                                     random_tensor({4, d}, 30 + e, true)});
    params.insert(params.end(), {p.experts.back().w1, p.experts.back().wg, p.experts.back().w2});
  }
  Tensor x = random_tensor({5, d}, 2, true);
  params.push_back(x);
  Routing routing;
  moe_forward(x, p, 2, nullptr, &routing);
  auto r = ad::finite_diff_check([&] { return sq_loss(moe_forward(x, p, 2, &routing), 3); }, params);
  CHECK(r.max_rel_error <= 1e-6);
}

TEST_CASE("rmsnorm: closed-form cases") {
  Tensor one = Tensor::full({4}, 1.0);
  Tensor y = rmsnorm(Tensor::full({1, 4}, 2.0), one, 0.0);
  for (double v : y.data()) CHECK(v == 1.0);
  CHECK(all_zero(rmsnorm(Tensor::zeros({2, 4}), one, 0.0)));
  CHECK(all_zero(rmsnorm(Tensor::zeros({2, 4}), one, 1e-6)));
  Tensor x = random_tensor({3, 4}, 1);
  Tensor gamma = random_tensor({4}, 2);
  Tensor a = rmsnorm(x, gamma, 0.0);
  Tensor b = rmsnorm(ad::scale(x, 7.5), gamma, 0.0);
  CHECK(max_abs_diff(a.data(), b.data()) < 1e-12);
  CHECK_THROWS_AS(rmsnorm(x, gamma, -1.0), InvalidArgument);
  CHECK_THROWS_AS(rmsnorm(x, Tensor::full({3}, 1.0), 0.0), InvalidArgument);
}

TEST_CASE("rmsnorm: gradients match finite differences") {
  Tensor x = random_tensor({3, 5}, 1, true);
  Tensor gamma = random_tensor({5}, 2, true);
  auto r = ad::finite_diff_check([&] { return sq_loss(rmsnorm(x, gamma, 1e-6), 3); }, {x, gamma});
  CHECK(r.max_rel_error <= 1e-6);
}

TEST_CASE("blocks: every sequence block is causal") {
  const std::size_t T = 24, d = 8;
  Tensor u = random_tensor({2, T, d}, 1);
  Tensor f = bank_tensor(T, 4);
  StuParams stu{random_tensor({8, d, d}, 2), std::nullopt, Activation::kIdentity};
  StuTParams stut{random_tensor({d, d}, 3), random_tensor({8, d}, 4), Activation::kRelu};
  AttentionParams attn{random_tensor({d, d}, 5), random_tensor({d, d}, 6), random_tensor({d, d}, 7), random_tensor({d, d}, 8)};
  std::mt19937_64 rng(9);
  S4dParams s4 = init_s4d(d, 8, rng);
  Tensor alt = layer_filters(f, true);
  for (std::size_t t0 : {1, 7, 23}) {
    CHECK(leakage([&](const Tensor& x) { return stu_forward(alt, stu, x); }, u, t0) < 1e-12);
    CHECK(leakage([&](const Tensor& x) { return stu_t_forward(alt, stut, x); }, u, t0) < 1e-12);
    CHECK(leakage([&](const Tensor& x) { return alibi_attention(x, attn, 4, alibi_slopes(4)); }, u, t0) == 0.0);
    CHECK(leakage([&](const Tensor& x) { return s4d_forward(s4, x); }, u, t0) < 1e-13);
  }
}

TEST_CASE("blocks: gradients match finite differences") {
  const std::size_t T = 10, d = 3;
  Tensor u = random_tensor({2, T, d}, 1, true);
  SUBCASE("stu with learnable filters") {
    Tensor f = bank_tensor(8, 3, true);
    StuParams p{random_tensor({6, d, 2}, 2, true), random_tensor({d, d}, 3, true), Activation::kIdentity};
    auto r = ad::finite_diff_check([&] { return sq_loss(stu_forward(layer_filters(f, true), p, u), 4); },
                                   {u, f, p.m, *p.input_lift});
    CHECK(r.max_rel_error <= 1e-5);
  }
  SUBCASE("stu_t") {
    Tensor f = bank_tensor(12, 4, true);
    StuTParams p{random_tensor({d, 4}, 5, true), random_tensor({4, 4}, 6, true), Activation::kIdentity};
    auto r = ad::finite_diff_check([&] { return sq_loss(stu_t_forward(f, p, u), 7); }, {u, f, p.m1, p.m2});
    CHECK(r.max_rel_error <= 1e-5);
  }
  SUBCASE("stu_t full tensor") {
    StuTParams p{random_tensor({d, 4}, 5, true), random_tensor({4, 4}, 6, true), Activation::kIdentity};
    auto r = ad::finite_diff_check([&] { return sq_loss(stu_t_full_tensor(p), 8); }, {p.m1, p.m2});
    CHECK(r.max_rel_error <= 1e-5);
  }
  SUBCASE("attention") {
    Tensor x = random_tensor({2, T, 4}, 9, true);
    AttentionParams p{random_tensor({4, 4}, 10, true), random_tensor({4, 4}, 11, true), random_tensor({4, 4}, 12, true),
                      random_tensor({4, 4}, 13, true)};
    auto r = ad::finite_diff_check([&] { return sq_loss(alibi_attention(x, p, 2, alibi_slopes(2)), 14); },
                                   {x, p.wq, p.wk, p.wv, p.wo});
    CHECK(r.max_rel_error <= 1e-5);
  }
  SUBCASE("s4d") {
    std::mt19937_64 rng(15);
    S4dParams p = init_s4d(d, 4, rng);
    auto r = ad::finite_diff_check([&] { return sq_loss(s4d_forward(p, u), 16); },
                                   {u, p.log_neg_real, p.imag, p.b, p.c, p.log_dt, p.d_skip});
    CHECK(r.max_rel_error <= 1e-5);
  }
}

TEST_CASE("stu: squared loss is convex in the projections") {
  const std::size_t T = 16, din = 2, dout = 2, K = 4;
  Tensor f = bank_tensor(T, K);
  Tensor u = random_tensor({3, T, din}, 1);
  Tensor target = random_tensor({3, T, dout}, 2);
  auto loss = [&](const Tensor& m) {
    Tensor y = stu_forward(f, StuParams{m, std::nullopt, Activation::kIdentity}, u);
    return ad::mean(ad::square(ad::sub(y, target))).item();
  };
  for (std::uint64_t i = 0; i < 100; ++i) {
    Tensor a = random_tensor({K, din, dout}, 100 + 2 * i, false, 3.0);
    Tensor b = random_tensor({K, din, dout}, 101 + 2 * i, false, 3.0);
    Tensor mid = ad::scale(ad::add(a, b), 0.5);
    CHECK(loss(mid) <= 0.5 * (loss(a) + loss(b)) + 1e-9);
  }
}

TEST_CASE("model: invalid configurations are rejected") {
  ModelConfig cfg;
  cfg.depth = 0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = ModelConfig{};
  cfg.use_moe = true;
  cfg.n_experts = 2;
  cfg.top_k = 3;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = ModelConfig{};
  cfg.block_kind = BlockKind::kAttention;
  cfg.width = 30;
  cfg.n_heads = 8;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = ModelConfig{};
  cfg.n_filters = 200;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  CHECK_THROWS_AS(parse_block_kind("mamba"), InvalidArgument);
  cfg = ModelConfig{};
  cfg.filter_length = 20;
  CHECK_THROWS_AS(build_model(cfg, spectral::compute_filters(30, 16), 1), InvalidArgument);
}

TEST_CASE("model: hand-counted parameters") {
  ModelConfig cfg;
  cfg.block_kind = BlockKind::kStu;
  cfg.input_dim = 5;
  cfg.output_dim = 5;
  cfg.width = 32;
  cfg.depth = 4;
  cfg.n_filters = 16;
  cfg.filter_length = 100;
  cfg.mlp_scale = 1;
  // in_proj 5*32 + 4 * (M 16*32*32 + norms 2*32 + SwiGLU 3*32*32) + final norm 32 + head 32*5
  const std::size_t hand = 160 + 4 * (16384 + 64 + 3072) + 32 + 160;
  CHECK(hand == 78432);
  Model model = build_model(cfg, bank_for(cfg), 1);
  CHECK(model.parameter_count() == hand);
  CHECK(expected_parameter_count(cfg) == hand);
}

TEST_CASE("model: closed-form count matches every block kind") {
  for (auto kind : {BlockKind::kStu, BlockKind::kStuT, BlockKind::kAttention, BlockKind::kS4d})
    for (bool single : {false, true})
      for (bool moe : {false, true})
        for (std::size_t vocab : {0, 7}) {
          ModelConfig cfg;
          cfg.block_kind = kind;
          cfg.input_dim = 3;
          cfg.vocab = vocab;
          cfg.output_dim = 2;
          cfg.width = 8;
          cfg.depth = single ? 1 : 2;
          cfg.single_layer = single;
          cfg.use_moe = moe;
          cfg.n_experts = 3;
          cfg.top_k = 2;
          cfg.n_filters = 4;
          cfg.filter_length = 12;
          cfg.n_heads = 2;
          cfg.s4d_state = 5;
          cfg.mlp_scale = 2;
          cfg.alternating_filters = true;
          cfg.learnable_filters = kind == BlockKind::kStuT;
          cfg.positional_length = kind == BlockKind::kAttention ? 16 : 0;
          Model model = build_model(cfg, bank_for(cfg), 3);
          INFO(to_string(kind) << " single=" << single << " moe=" << moe << " vocab=" << vocab);
          CHECK(model.parameter_count() == expected_parameter_count(cfg));
        }
}

TEST_CASE("model: zero sublayers pass the skip path straight through") {
  ModelConfig cfg;
  cfg.input_dim = 4;
  cfg.output_dim = 4;
  cfg.width = 4;
  cfg.depth = 3;
  cfg.n_filters = 4;
  cfg.filter_length = 10;
  cfg.global_skips = true;
  cfg.norm_eps = 0.0;
  Model model = build_model(cfg, bank_for(cfg), 5);
  for (auto& p : model.parameters()) {
    if (p.name == "in_proj" || p.name == "final_norm") continue;
    for (double& v : p.tensor.values()) v = 0.0;
  }
  for (auto& v : model.param("final_norm").values()) v = 1.0;
  auto& head = model.param("head").values();
  for (std::size_t i = 0; i < 4; ++i) head[i * 4 + i] = 1.0;
  Tensor u = random_tensor({2, 10, 4}, 6);
  Tensor y = model.forward(u);
  Tensor skip = rmsnorm(ad::matmul(u, model.param("in_proj")), Tensor::full({4}, 1.0), 0.0);
  CHECK(max_abs_diff(y.data(), skip.data()) < 1e-12);
}

TEST_CASE("model: full stacks are causal and differentiable") {
  for (auto kind : {BlockKind::kStu, BlockKind::kStuT, BlockKind::kAttention, BlockKind::kS4d}) {
    ModelConfig cfg;
    cfg.block_kind = kind;
    cfg.input_dim = 2;
    cfg.output_dim = 2;
    cfg.width = 4;
    cfg.depth = 2;
    cfg.n_filters = 3;
    cfg.filter_length = 8;
    cfg.n_heads = 2;
    cfg.s4d_state = 3;
    cfg.use_moe = kind == BlockKind::kStuT;
    cfg.n_experts = 3;
    cfg.global_skips = kind == BlockKind::kStu;
    cfg.alternating_filters = kind == BlockKind::kStu;
    Model model = build_model(cfg, bank_for(cfg), 11);
    // Zero-initialized projections would hide the spectral path; give them values.
    std::uint64_t seed = 100;
    for (auto& p : model.parameters())
      if (p.name.find("stu") != std::string::npos)
        for (double& v : p.tensor.values()) v = random_tensor({1}, ++seed).item() * 0.5;
    Tensor u = random_tensor({2, 9, 2}, 12);
    INFO(to_string(kind));
    CHECK(leakage([&](const Tensor& x) { return model.forward(x); }, u, 4) < 1e-12);
    std::vector<Tensor> params;
    for (auto& p : model.parameters()) params.push_back(p.tensor);
    model.forward(u);
    if (cfg.use_moe) model.freeze_routing(model.last_routing());
    auto r = ad::finite_diff_check([&] { return sq_loss(model.forward(u), 13); }, params);
    CHECK(r.max_rel_error <= 1e-5);
  }
}

TEST_CASE("model: token inputs and the single-layer readout") {
  ModelConfig cfg;
  cfg.block_kind = BlockKind::kStuT;
  cfg.vocab = 6;
  cfg.output_dim = 6;
  cfg.width = 8;
  cfg.depth = 2;
  cfg.n_filters = 4;
  cfg.filter_length = 10;
  Model model = build_model(cfg, bank_for(cfg), 1);
  std::vector<std::int64_t> tokens{0, 1, 2, 3, 4, 5, 0, 1, 2, 3};
  Tensor y = model.forward_tokens(tokens, 2, 5);
  CHECK(y.shape() == Shape{2, 5, 6});
  CHECK_THROWS_AS(model.forward(random_tensor({1, 5, 1}, 1)), InvalidArgument);

  ModelConfig single;
  single.block_kind = BlockKind::kStu;
  single.input_dim = 5;
  single.output_dim = 5;
  single.width = 32;
  single.single_layer = true;
  single.alternating_filters = true;
  Model lds = build_model(single, bank_for(single), 2);
  CHECK(lds.param("blocks.0.stu.m").shape() == Shape{32, 5, 32});
  CHECK(lds.forward(random_tensor({1, 20, 5}, 3)).shape() == Shape{1, 20, 5});
}

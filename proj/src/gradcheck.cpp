#include "stulab/gradcheck.hpp"

#include <functional>
#include <random>

#include "stulab/error.hpp"
#include "stulab/layers.hpp"
#include "stulab/rng.hpp"
#include "stulab/spectral_filters.hpp"

namespace stulab::nn {

namespace {

class Source {
 public:
  explicit Source(std::uint64_t seed) : rng_(splitmix64(seed)) {}

  Tensor tensor(ad::Shape shape, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    std::vector<double> v(ad::numel(shape));
    for (double& x : v) x = normal(rng_);
    return Tensor::from(std::move(shape), std::move(v), true);
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

double run(const std::function<Tensor()>& f, std::vector<Tensor> params) {
  return ad::finite_diff_check(f, std::move(params)).max_rel_error;
}

}  // namespace

std::vector<std::string> checkable_layers() {
  return {"stu", "stu_t", "attention", "s4d", "swiglu", "moe", "rmsnorm"};
}

LayerCheck check_layer(const std::string& layer, std::uint64_t seed, double tolerance) {
  Source src(seed);
  const std::size_t T = 10, d = 3;
  Tensor u = src.tensor({2, T, d});
  double err = 0.0;
  if (layer == "stu") {
    auto bank = spectral::compute_filters(8, 3);
    Tensor f = Tensor::from({3, 8}, bank.filters.values(), true);
    StuParams p{src.tensor({6, d, 2}), src.tensor({d, d}), Activation::kIdentity};
    Tensor target = src.tensor({2, T, 2}).detach();
    err = run([&] { return ad::mean(ad::square(ad::sub(stu_forward(layer_filters(f, true), p, u), target))); },
              {u, f, p.m, *p.input_lift});
  } else if (layer == "stu_t") {
    auto bank = spectral::compute_filters(12, 4);
    Tensor f = Tensor::from({4, 12}, bank.filters.values(), true);
    StuTParams p{src.tensor({d, 4}), src.tensor({4, 4}), Activation::kIdentity};
    Tensor target = src.tensor({2, T, 4}).detach();
    err = run([&] { return ad::mean(ad::square(ad::sub(stu_t_forward(f, p, u), target))); }, {u, f, p.m1, p.m2});
  } else if (layer == "attention") {
    Tensor x = src.tensor({2, T, 4});
    AttentionParams p{src.tensor({4, 4}), src.tensor({4, 4}), src.tensor({4, 4}), src.tensor({4, 4})};
    const auto slopes = alibi_slopes(2);
    Tensor target = src.tensor({2, T, 4}).detach();
    err = run([&] { return ad::mean(ad::square(ad::sub(alibi_attention(x, p, 2, slopes), target))); },
              {x, p.wq, p.wk, p.wv, p.wo});
  } else if (layer == "s4d") {
    S4dParams p = init_s4d(d, 4, src.rng());
    for (Tensor* t : {&p.log_neg_real, &p.imag, &p.b, &p.c, &p.log_dt, &p.d_skip}) t->set_requires_grad(true);
    Tensor target = src.tensor({2, T, d}).detach();
    err = run([&] { return ad::mean(ad::square(ad::sub(s4d_forward(p, u), target))); },
              {u, p.log_neg_real, p.imag, p.b, p.c, p.log_dt, p.d_skip});
  } else if (layer == "swiglu") {
    SwiGluParams p{src.tensor({d, 6}), src.tensor({d, 6}), src.tensor({6, d})};
    Tensor target = src.tensor({2, T, d}).detach();
    err = run([&] { return ad::mean(ad::square(ad::sub(swiglu_mlp(u, p), target))); }, {u, p.w1, p.wg, p.w2});
  } else if (layer == "moe") {
    const std::size_t experts = 4;
    MoeParams p;
    p.router = src.tensor({d, experts});
    std::vector<Tensor> params{u, p.router};
    for (std::size_t e = 0; e < experts; ++e) {
      p.experts.push_back(SwiGluParams{src.tensor({d, 4}), src.tensor({d, 4}), src.tensor({4, d})});
      params.insert(params.end(), {p.experts.back().w1, p.experts.back().wg, p.experts.back().w2});
    }
    Routing routing;
    moe_forward(u, p, 2, nullptr, &routing);
    Tensor target = src.tensor({2, T, d}).detach();
    err = run([&] { return ad::mean(ad::square(ad::sub(moe_forward(u, p, 2, &routing), target))); }, params);
  } else if (layer == "rmsnorm") {
    Tensor gamma = src.tensor({d});
    Tensor target = src.tensor({2, T, d}).detach();
    err = run([&] { return ad::mean(ad::square(ad::sub(rmsnorm(u, gamma, 1e-6), target))); }, {u, gamma});
  } else {
    throw InvalidArgument("unknown layer '" + layer + "' for gradient check");
  }
  return LayerCheck{layer, err, err <= tolerance};
}

std::vector<LayerCheck> check_all_layers(std::uint64_t seed, double tolerance) {
  std::vector<LayerCheck> out;
  for (const auto& name : checkable_layers()) out.push_back(check_layer(name, seed, tolerance));
  return out;
}

}  // namespace stulab::nn

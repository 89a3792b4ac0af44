#include "stulab/fft_conv.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_map>

#include "stulab/error.hpp"

namespace stulab::fft {

namespace {

struct Plan {
  std::vector<std::size_t> bitrev;
  std::vector<Complex> twiddles;  // exp(-2 pi i j / n), j < n/2
};

const Plan& plan_for(std::size_t n) {
  thread_local std::unordered_map<std::size_t, Plan> cache;
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  Plan p;
  p.bitrev.resize(n);
  std::size_t bits = 0;
  while ((std::size_t{1} << bits) < n) ++bits;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t r = 0;
    for (std::size_t b = 0; b < bits; ++b)
      if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (bits - 1 - b);
    p.bitrev[i] = r;
  }
  p.twiddles.resize(n / 2);
  for (std::size_t j = 0; j < n / 2; ++j) {
    const double angle = -2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(n);
    p.twiddles[j] = {std::cos(angle), std::sin(angle)};
  }
  return cache.emplace(n, std::move(p)).first->second;
}

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// Spectra of the two real signals packed as x1 + i x2.
inline std::pair<Complex, Complex> unpack(const std::vector<Complex>& z, std::size_t f, std::size_t n) {
  const Complex a = z[f];
  const Complex b = std::conj(z[(n - f) & (n - 1)]);
  return {0.5 * (a + b), Complex(0.0, -0.5) * (a - b)};
}

std::vector<Complex> real_spectrum(const double* x, std::size_t len, std::size_t stride, std::size_t n) {
  std::vector<Complex> z(n);
  for (std::size_t i = 0; i < len; ++i) z[i] = x[i * stride];
  transform(z, false);
  return z;
}

// Spectrum of (x1 + i x2) where x1, x2 are strided real signals of length len.
void packed_spectrum(std::vector<Complex>& z, const double* x1, const double* x2, std::size_t len,
                     std::size_t stride, std::size_t n) {
  z.assign(n, Complex{});
  for (std::size_t i = 0; i < len; ++i) z[i] = Complex(x1[i * stride], x2 ? x2[i * stride] : 0.0);
  transform(z, false);
}

}  // namespace

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

void transform(std::span<Complex> x, bool inverse) {
  const std::size_t n = x.size();
  if (!is_pow2(n)) throw InvalidArgument("fft: length " + std::to_string(n) + " is not a power of two");
  if (n == 1) return;
  const Plan& p = plan_for(n);
  for (std::size_t i = 0; i < n; ++i)
    if (i < p.bitrev[i]) std::swap(x[i], x[p.bitrev[i]]);
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t step = n / len;
    for (std::size_t start = 0; start < n; start += len) {
      for (std::size_t j = 0; j < half; ++j) {
        Complex w = p.twiddles[j * step];
        if (inverse) w = std::conj(w);
        const Complex a = x[start + j];
        const Complex b = x[start + j + half] * w;
        x[start + j] = a + b;
        x[start + j + half] = a - b;
      }
    }
  }
  if (inverse) {
    const double inv = 1.0 / static_cast<double>(n);
    for (auto& v : x) v *= inv;
  }
}

std::vector<Complex> fft(std::span<const Complex> x, bool inverse) {
  std::vector<Complex> out(x.begin(), x.end());
  transform(out, inverse);
  return out;
}

std::size_t causal_conv_macs(std::size_t T, std::size_t L, std::size_t channels) {
  std::size_t per_channel = 0;
  for (std::size_t t = 0; t < T; ++t) per_channel += std::min(t + 1, L);
  return per_channel * channels;
}

ad::Tensor featurize(const spectral::FilterBank& bank, const ad::Tensor& u) {
  return featurize(ad::Tensor::from({bank.count, bank.length}, bank.filters.values()), u);
}

ad::Tensor featurize(const ad::Tensor& filters, const ad::Tensor& u) {
  if (filters.rank() != 2) throw InvalidArgument("featurize: filters must be [K, L], got " + ad::shape_str(filters.shape()));
  if (u.rank() < 2) throw InvalidArgument("featurize: input must be [..., T, d], got " + ad::shape_str(u.shape()));
  const std::size_t K = filters.dim(0);
  const std::size_t L = filters.dim(1);
  const std::size_t T = u.dim(-2);
  const std::size_t d = u.dim(-1);
  if (T == 0 || d == 0) throw InvalidArgument("featurize: empty sequence or channel axis");
  if (K == 0 || L == 0) throw InvalidArgument("featurize: empty filter bank");
  const std::size_t batch = u.size() / (T * d);
  const std::size_t n = next_pow2(T + L);

  std::vector<std::vector<Complex>> phi(K);
  for (std::size_t k = 0; k < K; ++k) phi[k] = real_spectrum(filters.data().data() + k * L, L, 1, n);

  const std::size_t pairs = (d + 1) / 2;
  // Packed input spectra, one per (batch, channel pair); reused by backward.
  auto spectra = std::make_shared<std::vector<std::vector<Complex>>>(batch * pairs);
  std::vector<double> out(batch * T * K * d, 0.0);
  std::vector<Complex> w(n);
  const double* x = u.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t p = 0; p < pairs; ++p) {
      const std::size_t c = 2 * p;
      const bool two = c + 1 < d;
      auto& z = (*spectra)[b * pairs + p];
      const double* base = x + b * T * d;
      packed_spectrum(z, base + c, two ? base + c + 1 : nullptr, T, d, n);
      for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t f = 0; f < n; ++f) w[f] = z[f] * phi[k][f];
        transform(w, true);
        double* o = out.data() + b * T * K * d + k * d + c;
        for (std::size_t t = 0; t < T; ++t) {
          o[t * K * d] = w[t].real();
          if (two) o[t * K * d + 1] = w[t].imag();
        }
      }
    }
  }

  ad::Shape shape(u.shape().begin(), u.shape().end() - 1);
  shape.push_back(K);
  shape.push_back(d);
  return ad::make_result(
      std::move(shape), std::move(out), {filters, u},
      [=, phi = std::move(phi)](ad::Node& self) {
        auto& nf = *self.inputs[0];
        auto& nu = *self.inputs[1];
        const double* g = self.grad.data();
        std::vector<Complex> acc(n);
        std::vector<Complex> gz(n);
        std::vector<std::vector<Complex>> facc;
        if (nf.requires_grad) facc.assign(K, std::vector<Complex>(n));
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t p = 0; p < pairs; ++p) {
            const std::size_t c = 2 * p;
            const bool two = c + 1 < d;
            const auto& z = (*spectra)[b * pairs + p];
            std::fill(acc.begin(), acc.end(), Complex{});
            for (std::size_t k = 0; k < K; ++k) {
              const double* gk = g + b * T * K * d + k * d + c;
              packed_spectrum(gz, gk, two ? gk + 1 : nullptr, T, K * d, n);
              if (nu.requires_grad) {
                for (std::size_t f = 0; f < n; ++f) acc[f] += std::conj(phi[k][f]) * gz[f];
              }
              if (nf.requires_grad) {
                for (std::size_t f = 0; f < n; ++f) {
                  const auto [u1, u2] = unpack(z, f, n);
                  const auto [g1, g2] = unpack(gz, f, n);
                  facc[k][f] += std::conj(u1) * g1 + (two ? std::conj(u2) * g2 : Complex{});
                }
              }
            }
            if (nu.requires_grad) {
              transform(acc, true);
              auto& gu = nu.grad_buffer();
              double* o = gu.data() + b * T * d + c;
              for (std::size_t t = 0; t < T; ++t) {
                o[t * d] += acc[t].real();
                if (two) o[t * d + 1] += acc[t].imag();
              }
            }
          }
        }
        if (nf.requires_grad) {
          auto& gf = nf.grad_buffer();
          for (std::size_t k = 0; k < K; ++k) {
            transform(facc[k], true);
            for (std::size_t s = 0; s < L; ++s) gf[k * L + s] += facc[k][s].real();
          }
        }
      },
      "featurize");
}

ad::Tensor causal_conv(const ad::Tensor& u, const ad::Tensor& h) {
  if (h.rank() != 2) throw InvalidArgument("causal_conv: filters must be [L, C], got " + ad::shape_str(h.shape()));
  if (u.rank() < 2) throw InvalidArgument("causal_conv: input must be [..., T, C], got " + ad::shape_str(u.shape()));
  const std::size_t L = h.dim(0);
  const std::size_t C = h.dim(1);
  const std::size_t T = u.dim(-2);
  if (u.dim(-1) != C) {
    throw InvalidArgument("causal_conv: channel mismatch between " + ad::shape_str(u.shape()) + " and " +
                          ad::shape_str(h.shape()));
  }
  if (T == 0 || C == 0 || L == 0) throw InvalidArgument("causal_conv: empty axis");
  const std::size_t batch = u.size() / (T * C);
  const std::size_t n = next_pow2(T + L);

  std::vector<std::vector<Complex>> hs(C);
  for (std::size_t c = 0; c < C; ++c) hs[c] = real_spectrum(h.data().data() + c, L, C, n);

  // Batch items are packed in pairs; each pair shares the channel's filter.
  const std::size_t pairs = (batch + 1) / 2;
  auto spectra = std::make_shared<std::vector<std::vector<Complex>>>(pairs * C);
  std::vector<double> out(u.size(), 0.0);
  std::vector<Complex> w(n);
  const double* x = u.data().data();
  for (std::size_t p = 0; p < pairs; ++p) {
    const std::size_t b = 2 * p;
    const bool two = b + 1 < batch;
    for (std::size_t c = 0; c < C; ++c) {
      auto& z = (*spectra)[p * C + c];
      packed_spectrum(z, x + b * T * C + c, two ? x + (b + 1) * T * C + c : nullptr, T, C, n);
      for (std::size_t f = 0; f < n; ++f) w[f] = z[f] * hs[c][f];
      transform(w, true);
      for (std::size_t t = 0; t < T; ++t) {
        out[b * T * C + t * C + c] = w[t].real();
        if (two) out[(b + 1) * T * C + t * C + c] = w[t].imag();
      }
    }
  }

  return ad::make_result(
      u.shape(), std::move(out), {u, h},
      [=, hs = std::move(hs)](ad::Node& self) {
        auto& nu = *self.inputs[0];
        auto& nh = *self.inputs[1];
        const double* g = self.grad.data();
        std::vector<Complex> gz(n);
        std::vector<Complex> acc(n);
        std::vector<std::vector<Complex>> hacc;
        if (nh.requires_grad) hacc.assign(C, std::vector<Complex>(n));
        for (std::size_t p = 0; p < pairs; ++p) {
          const std::size_t b = 2 * p;
          const bool two = b + 1 < batch;
          for (std::size_t c = 0; c < C; ++c) {
            packed_spectrum(gz, g + b * T * C + c, two ? g + (b + 1) * T * C + c : nullptr, T, C, n);
            if (nh.requires_grad) {
              const auto& z = (*spectra)[p * C + c];
              for (std::size_t f = 0; f < n; ++f) {
                const auto [u1, u2] = unpack(z, f, n);
                const auto [g1, g2] = unpack(gz, f, n);
                hacc[c][f] += std::conj(u1) * g1 + (two ? std::conj(u2) * g2 : Complex{});
              }
            }
            if (nu.requires_grad) {
              for (std::size_t f = 0; f < n; ++f) acc[f] = gz[f] * std::conj(hs[c][f]);
              transform(acc, true);
              auto& gu = nu.grad_buffer();
              for (std::size_t t = 0; t < T; ++t) {
                gu[b * T * C + t * C + c] += acc[t].real();
                if (two) gu[(b + 1) * T * C + t * C + c] += acc[t].imag();
              }
            }
          }
        }
        if (nh.requires_grad) {
          auto& gh = nh.grad_buffer();
          for (std::size_t c = 0; c < C; ++c) {
            transform(hacc[c], true);
            for (std::size_t s = 0; s < L; ++s) gh[s * C + c] += hacc[c][s].real();
          }
        }
      },
      "causal_conv");
}

}  // namespace stulab::fft

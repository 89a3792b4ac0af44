#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "stulab/spectral_filters.hpp"
#include "stulab/tensor.hpp"

namespace stulab::fft {

using Complex = std::complex<double>;

/// Smallest power of two >= n (n = 0 gives 1).
std::size_t next_pow2(std::size_t n);

/// In-place iterative radix-2 transform. Forward is the unnormalized DFT;
/// inverse applies the 1/n scaling. Throws InvalidArgument unless the length is
/// a power of two.
void transform(std::span<Complex> x, bool inverse);

/// Copying variant of transform().
std::vector<Complex> fft(std::span<const Complex> x, bool inverse = false);

/// Causal features of a sequence batch against a filter bank.
///
/// u has shape [..., T, d]; filters has shape [K, L]. The result X has shape
/// [..., T, K, d] with X[t, k, c] = sum_{s=0}^{min(t, L-1)} filters[k, s] * u[t-s, c].
/// Tap s = 0 multiplies the newest input. History before t = 0 is zero.
/// Differentiable in u and in filters. Evaluated with zero-padded FFTs of
/// length next_pow2(T + L).
ad::Tensor featurize(const ad::Tensor& filters, const ad::Tensor& u);

/// Convenience overload for a fixed bank.
ad::Tensor featurize(const spectral::FilterBank& bank, const ad::Tensor& u);

/// Per-channel causal convolution: u [..., T, C], h [L, C] ->
/// y[t, c] = sum_{s=0}^{min(t, L-1)} h[s, c] * u[t-s, c].
ad::Tensor causal_conv(const ad::Tensor& u, const ad::Tensor& h);

/// Multiply-adds of a direct causal convolution of `channels` length-T signals
/// with length-L filters: channels * sum_t min(t + 1, L).
std::size_t causal_conv_macs(std::size_t T, std::size_t L, std::size_t channels);

}  // namespace stulab::fft

#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

// Welch power spectral density: periodic Hann sub-windows with 50% overlap
// by default, per-window constant detrend, modified periodograms averaged,
// density scaling 1/(fs*sum(w^2)). Windows are zero-padded to the next
// power of two for the radix-2 FFT; integrating the one-sided estimate over
// frequency approximates the signal variance (Parseval). A constant signal
// has zero power in every band above 0 Hz.

namespace citnet {

struct WelchParams {
  double window_seconds = 1.0;
  double overlap = 0.5;  // fraction of the window, in [0,1)
};

struct PsdEstimate {
  std::vector<double> psd;  // one-sided density, bins 0..nfft/2
  double bin_hz = 0.0;      // frequency spacing

  double total_power() const {
    double acc = 0.0;
    for (double v : psd) acc += v;
    return acc * bin_hz;
  }
};

namespace detail {

inline void fft_inplace(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0) {
    throw std::invalid_argument("fft: length must be a power of two");
  }
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * M_PI / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t j = 0; j < len / 2; ++j) {
        const std::complex<double> u = a[i + j];
        const std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

inline size_t next_pow2(size_t n) {
  size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace detail

// Periodic Hann window.
inline std::vector<double> hann_window(size_t length) {
  std::vector<double> w(length);
  for (size_t i = 0; i < length; ++i) {
    w[i] = 0.5 * (1.0 - std::cos(2.0 * M_PI * static_cast<double>(i) /
                                 static_cast<double>(length)));
  }
  return w;
}

template <typename Scalar>
PsdEstimate welch_psd(std::span<const Scalar> x, double sample_rate,
                      const WelchParams& params = {}) {
  if (sample_rate <= 0.0) {
    throw std::invalid_argument("welch_psd: sample rate must be positive");
  }
  if (params.overlap < 0.0 || params.overlap >= 1.0) {
    throw std::invalid_argument("welch_psd: overlap must be in [0,1)");
  }
  const auto win_len =
      static_cast<size_t>(std::llround(params.window_seconds * sample_rate));
  if (win_len < 2) {
    throw std::invalid_argument("welch_psd: window shorter than 2 samples");
  }
  if (x.size() < win_len) {
    throw std::invalid_argument("welch_psd: signal shorter than one window (" +
                                std::to_string(x.size()) + " < " +
                                std::to_string(win_len) + ")");
  }
  size_t hop = static_cast<size_t>(
      std::llround(static_cast<double>(win_len) * (1.0 - params.overlap)));
  if (hop == 0) hop = 1;

  const std::vector<double> window = hann_window(win_len);
  double win_power = 0.0;
  for (double w : window) win_power += w * w;

  const size_t nfft = detail::next_pow2(win_len);
  const size_t n_bins = nfft / 2 + 1;
  PsdEstimate out;
  out.psd.assign(n_bins, 0.0);
  out.bin_hz = sample_rate / static_cast<double>(nfft);

  std::vector<std::complex<double>> buf(nfft);
  size_t n_segments = 0;
  for (size_t start = 0; start + win_len <= x.size(); start += hop) {
    double mean = 0.0;
    for (size_t i = 0; i < win_len; ++i) mean += static_cast<double>(x[start + i]);
    mean /= static_cast<double>(win_len);
    for (size_t i = 0; i < win_len; ++i) {
      buf[i] = std::complex<double>(
          (static_cast<double>(x[start + i]) - mean) * window[i], 0.0);
    }
    std::fill(buf.begin() + static_cast<std::ptrdiff_t>(win_len), buf.end(),
              std::complex<double>(0.0, 0.0));
    detail::fft_inplace(buf);
    const double scale = 1.0 / (sample_rate * win_power);
    for (size_t k = 0; k < n_bins; ++k) {
      double p = std::norm(buf[k]) * scale;
      if (k != 0 && k != nfft / 2) p *= 2.0;  // one-sided fold
      out.psd[k] += p;
    }
    ++n_segments;
  }
  for (double& v : out.psd) v /= static_cast<double>(n_segments);
  return out;
}

// Mean PSD over the bins whose frequency falls in [lo_hz, hi_hz). Bands
// narrower than one bin contribute zero.
inline double band_mean_power(const PsdEstimate& est, double lo_hz,
                              double hi_hz) {
  if (!(lo_hz < hi_hz)) {
    throw std::invalid_argument("band_mean_power: need lo < hi");
  }
  double acc = 0.0;
  size_t count = 0;
  for (size_t k = 0; k < est.psd.size(); ++k) {
    const double f = static_cast<double>(k) * est.bin_hz;
    if (f >= lo_hz && f < hi_hz) {
      acc += est.psd[k];
      ++count;
    }
  }
  return count == 0 ? 0.0 : acc / static_cast<double>(count);
}

}  // namespace citnet

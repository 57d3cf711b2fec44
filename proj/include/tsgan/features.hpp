#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string_view>
#include <vector>

#include "tsgan/error.hpp"
#include "tsgan/signal_io.hpp"
#include "tsgan/tensor.hpp"

namespace tsgan {

/// Sixteen time-domain condition indicators of one window. Moments are
/// population moments; any ratio whose denominator is zero is reported as 0.
struct FeatureVector {
  static constexpr std::size_t size = 16;

  double max = 0;
  double min = 0;
  double mean = 0;
  double stddev = 0;
  double peak_to_peak = 0;
  double avg_amplitude = 0;       // mean |x|
  double rms = 0;
  double skewness = 0;            // m3 / stddev^3
  double variance = 0;
  double waveform_indicator = 0;  // rms / avg_amplitude
  double pulse_indicator = 0;     // peak / avg_amplitude
  double twist_index = 0;         // m3 / rms^3
  double peak_indicator = 0;      // peak / rms
  double margin_indicator = 0;    // peak / sqrt_amplitude
  double kurtosis_index = 0;      // m4 / stddev^4
  double sqrt_amplitude = 0;      // (mean sqrt|x|)^2

  static constexpr std::array<std::string_view, size> names{
      "max",          "min",
      "mean",         "std",
      "peak_to_peak", "avg_amplitude",
      "rms",          "skewness",
      "variance",     "waveform_indicator",
      "pulse_indicator", "twist_index",
      "peak_indicator",  "margin_indicator",
      "kurtosis_index",  "sqrt_amplitude"};

  std::array<double, size> to_array() const {
    return {max,       min,          mean,     stddev,       peak_to_peak,       avg_amplitude,  rms,
            skewness,  variance,     waveform_indicator,  pulse_indicator,    twist_index,    peak_indicator,
            margin_indicator,        kurtosis_index,      sqrt_amplitude};
  }
};

namespace detail {
inline double safe_ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }
}  // namespace detail

inline FeatureVector extract_features(std::span<const float> window) {
  if (window.size() < 2) throw UsageError("extract_features: window needs at least 2 samples");
  const double n = static_cast<double>(window.size());

  FeatureVector f;
  f.max = f.min = window[0];
  double sum = 0, sum_abs = 0, sum_sq = 0, sum_sqrt_abs = 0;
  for (float v : window) {
    const double x = v;
    f.max = std::max(f.max, x);
    f.min = std::min(f.min, x);
    sum += x;
    sum_abs += std::fabs(x);
    sum_sq += x * x;
    sum_sqrt_abs += std::sqrt(std::fabs(x));
  }
  const bool constant = f.max == f.min;
  f.mean = constant ? f.max : sum / n;

  double m2 = 0, m3 = 0, m4 = 0;
  if (!constant) {
    for (float v : window) {
      const double d = v - f.mean;
      const double d2 = d * d;
      m2 += d2;
      m3 += d2 * d;
      m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
  }

  const double peak = std::max(std::fabs(f.max), std::fabs(f.min));
  f.variance = m2;
  f.stddev = std::sqrt(m2);
  f.peak_to_peak = f.max - f.min;
  f.avg_amplitude = sum_abs / n;
  f.rms = std::sqrt(sum_sq / n);
  const double root_mean = sum_sqrt_abs / n;
  f.sqrt_amplitude = root_mean * root_mean;
  f.skewness = detail::safe_ratio(m3, f.stddev * f.stddev * f.stddev);
  f.kurtosis_index = detail::safe_ratio(m4, m2 * m2);
  f.waveform_indicator = detail::safe_ratio(f.rms, f.avg_amplitude);
  f.pulse_indicator = detail::safe_ratio(peak, f.avg_amplitude);
  f.twist_index = detail::safe_ratio(m3, f.rms * f.rms * f.rms);
  f.peak_indicator = detail::safe_ratio(peak, f.rms);
  f.margin_indicator = detail::safe_ratio(peak, f.sqrt_amplitude);
  return f;
}

/// Per-channel affine map (v - mean) / std, fitted once on training inputs.
struct Standardizer {
  std::vector<float> mean;
  std::vector<float> stddev;

  std::size_t channels() const { return mean.size(); }
  bool empty() const { return mean.empty(); }

  /// `inputs` hold [channels, len] sequences, row-major. Channels with zero
  /// spread keep a unit divisor.
  static Standardizer fit(std::span<const std::vector<float>> inputs, std::size_t channels) {
    if (channels == 0) throw UsageError("Standardizer: zero channels");
    if (inputs.empty()) throw UsageError("Standardizer: no training inputs");
    std::vector<double> sum(channels, 0.0), sq(channels, 0.0);
    std::size_t per_channel = 0;
    for (const auto& x : inputs) {
      if (x.size() % channels != 0) throw DimensionError("Standardizer: input size not divisible by channel count");
      const std::size_t len = x.size() / channels;
      per_channel += len;
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t t = 0; t < len; ++t) sum[c] += x[c * len + t];
    }
    Standardizer s;
    for (std::size_t c = 0; c < channels; ++c) s.mean.push_back(static_cast<float>(sum[c] / static_cast<double>(per_channel)));
    for (const auto& x : inputs) {
      const std::size_t len = x.size() / channels;
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t t = 0; t < len; ++t) {
          const double d = x[c * len + t] - static_cast<double>(s.mean[c]);
          sq[c] += d * d;
        }
    }
    for (std::size_t c = 0; c < channels; ++c) {
      const double sd = std::sqrt(sq[c] / static_cast<double>(per_channel));
      s.stddev.push_back(sd > 1e-12 ? static_cast<float>(sd) : 1.0f);
    }
    return s;
  }

  void apply(std::span<float> x) const {
    if (empty()) return;
    if (x.size() % channels() != 0) throw DimensionError("Standardizer: input size not divisible by channel count");
    const std::size_t len = x.size() / channels();
    for (std::size_t c = 0; c < channels(); ++c)
      for (std::size_t t = 0; t < len; ++t) x[c * len + t] = (x[c * len + t] - mean[c]) / stddev[c];
  }
};

/// Number of whole windows of `window_len` in `length` samples.
inline std::size_t feature_window_count(std::size_t length, std::size_t window_len) {
  if (window_len == 0) throw UsageError("feature window length must be positive");
  return length / window_len;
}

/// Channel-major [16, n_windows] feature matrix of consecutive windows.
inline std::vector<float> feature_matrix(std::span<const float> values, std::size_t window_len, std::size_t n_windows) {
  if (window_len < 2) throw UsageError("feature_sequence: window length must be at least 2");
  if (n_windows == 0) throw UsageError("feature_sequence: need at least one window");
  if (window_len * n_windows > values.size())
    throw UsageError("feature_sequence: " + std::to_string(n_windows) + " windows of " + std::to_string(window_len) +
                     " need more than the " + std::to_string(values.size()) + " available samples");
  std::vector<float> out(FeatureVector::size * n_windows);
  for (std::size_t w = 0; w < n_windows; ++w) {
    const auto row = extract_features(values.subspan(w * window_len, window_len)).to_array();
    for (std::size_t c = 0; c < FeatureVector::size; ++c) out[c * n_windows + w] = static_cast<float>(row[c]);
  }
  return out;
}

/// [1, 16, n_windows] sequence of feature vectors, standardized per channel
/// when a fitted Standardizer is given.
inline Tensor feature_sequence(const Subsample& sub, std::size_t window_len, std::size_t n_windows,
                               const Standardizer* standardizer = nullptr) {
  auto values = feature_matrix(sub.values, window_len, n_windows);
  if (standardizer) {
    if (standardizer->channels() != FeatureVector::size)
      throw DimensionError("feature_sequence: standardizer has " + std::to_string(standardizer->channels()) +
                           " channels, expected 16");
    standardizer->apply(values);
  }
  return Tensor(Shape{1, FeatureVector::size, n_windows}, std::move(values));
}

}  // namespace tsgan

#pragma once

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tsgan/error.hpp"

namespace tsgan {

enum class Label { normal, fault, unlabeled };

inline const char* label_name(Label label) {
  switch (label) {
    case Label::normal: return "normal";
    case Label::fault: return "fault";
    default: return "unlabeled";
  }
}

inline Label parse_label(const std::string& text) {
  if (text == "normal") return Label::normal;
  if (text == "fault") return Label::fault;
  if (text == "unlabeled") return Label::unlabeled;
  throw ConfigError("unknown label '" + text + "' (expected normal, fault or unlabeled)");
}

struct TimeSeries {
  std::vector<float> values;
  double sample_rate_hz = 12000.0;
  Label label = Label::unlabeled;
  std::string fault_kind;  // free-form tag for fault recordings, e.g. "inner_race"
  std::string source;      // file name or generator description
};

/// Fixed-length window cut from a TimeSeries.
struct Subsample {
  std::vector<float> values;
  std::size_t source_offset = 0;
  Label label = Label::unlabeled;
  std::string source;

  std::string id() const { return source + ":" + std::to_string(source_offset); }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

inline bool parse_float(const std::string& text, float& out) {
  const std::string t = trim(text);
  if (t.empty()) return false;
  const char* begin = t.data();
  if (*begin == '+') ++begin;
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(begin, t.data() + t.size(), value);
  if (ec != std::errc() || ptr != t.data() + t.size()) return false;
  out = static_cast<float>(value);
  return true;
}

// Splits one CSV record; double quotes delimit fields and "" escapes a quote.
inline std::vector<std::string> split_csv_record(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else {
      field += c;
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace detail

/// Reads one numeric column of a CSV file. `column` is either a header name
/// or a zero-based index. A first row with any non-numeric cell is treated as
/// the header.
inline TimeSeries load_csv(const std::filesystem::path& path, const std::string& column = "0") {
  const std::string text = detail::read_file(path);
  std::vector<std::string> lines;
  {
    std::istringstream stream(text);
    std::string line;
    while (std::getline(stream, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      lines.push_back(std::move(line));
    }
  }
  while (!lines.empty() && detail::trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty()) throw ParseError(path.string() + ": empty file");
  if (lines.front().size() >= 3 && lines.front().compare(0, 3, "\xEF\xBB\xBF") == 0) lines.front().erase(0, 3);

  const auto first = detail::split_csv_record(lines.front());
  bool has_header = false;
  for (const auto& cell : first) {
    float ignored;
    if (!detail::parse_float(cell, ignored)) has_header = true;
  }

  std::size_t index = 0;
  bool by_index = !column.empty() && std::all_of(column.begin(), column.end(), [](char c) { return c >= '0' && c <= '9'; });
  if (has_header) {
    auto it = std::find_if(first.begin(), first.end(), [&](const std::string& h) { return detail::trim(h) == column; });
    if (it != first.end()) {
      index = static_cast<std::size_t>(std::distance(first.begin(), it));
      by_index = false;
    } else if (!by_index) {
      throw ConfigError(path.string() + ": no column named '" + column + "'");
    }
  } else if (!by_index) {
    throw ConfigError(path.string() + ": column '" + column + "' requested by name but the file has no header");
  }
  if (by_index) index = std::stoul(column);
  if (index >= first.size())
    throw ConfigError(path.string() + ": column index " + std::to_string(index) + " out of range (" +
                      std::to_string(first.size()) + " columns)");

  TimeSeries series;
  series.source = path.filename().string();
  for (std::size_t row = has_header ? 1 : 0; row < lines.size(); ++row) {
    if (detail::trim(lines[row]).empty()) continue;
    const auto cells = detail::split_csv_record(lines[row]);
    float value = 0.0f;
    if (index >= cells.size() || !detail::parse_float(cells[index], value) || !std::isfinite(value))
      throw ParseError(path.string() + ": row " + std::to_string(row + 1) + ": non-numeric value in column " +
                       std::to_string(index));
    series.values.push_back(value);
  }
  if (series.values.empty()) throw ParseError(path.string() + ": no data rows");
  return series;
}

/// Headerless little-endian IEEE-754 float32 stream.
inline TimeSeries load_f32_binary(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file(path);
  if (bytes.empty()) throw FormatError(path.string() + ": empty");
  if (bytes.size() % 4 != 0)
    throw FormatError(path.string() + ": length " + std::to_string(bytes.size()) + " is not a multiple of 4 bytes");
  TimeSeries series;
  series.source = path.filename().string();
  series.values.resize(bytes.size() / 4);
  for (std::size_t i = 0; i < series.values.size(); ++i) {
    std::uint32_t word = 0;
    for (int b = 3; b >= 0; --b) word = (word << 8) | static_cast<unsigned char>(bytes[i * 4 + static_cast<std::size_t>(b)]);
    series.values[i] = std::bit_cast<float>(word);
    if (!std::isfinite(series.values[i]))
      throw FormatError(path.string() + ": non-finite sample at index " + std::to_string(i));
  }
  return series;
}

inline void write_f32_binary(const std::filesystem::path& path, std::span<const float> values) {
  std::string bytes(values.size() * 4, '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t word = std::bit_cast<std::uint32_t>(values[i]);
    for (std::size_t b = 0; b < 4; ++b) {
      bytes[i * 4 + b] = static_cast<char>(word & 0xFFu);
      word >>= 8;
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

/// Picks the loader from the extension: ".csv" is CSV, anything else float32.
inline TimeSeries load_series(const std::filesystem::path& path, const std::string& csv_column = "0") {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".csv" ? load_csv(path, csv_column) : load_f32_binary(path);
}

/// Windows at offsets 0, stride, 2*stride, ...; a trailing partial window is
/// dropped.
inline std::vector<Subsample> subsample(const TimeSeries& series, std::size_t length, std::size_t stride) {
  if (length == 0) throw UsageError("subsample: length must be positive");
  if (stride == 0) throw UsageError("subsample: stride must be >= 1");
  if (length > series.values.size())
    throw UsageError("subsample: window length " + std::to_string(length) + " exceeds series length " +
                     std::to_string(series.values.size()) + (series.source.empty() ? "" : " (" + series.source + ")"));
  const std::size_t count = (series.values.size() - length) / stride + 1;
  std::vector<Subsample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Subsample s;
    s.source_offset = i * stride;
    const auto begin = series.values.begin() + static_cast<std::ptrdiff_t>(s.source_offset);
    s.values.assign(begin, begin + static_cast<std::ptrdiff_t>(length));
    s.label = series.label;
    s.source = series.source;
    out.push_back(std::move(s));
  }
  return out;
}

/// Uniform index in [0, bound) from the raw 64-bit stream, so shuffles do
/// not depend on the standard library's distribution implementation.
inline std::uint64_t bounded_index(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
  std::uint64_t draw;
  do {
    draw = rng();
  } while (draw >= limit);
  return draw % bound;
}

template <typename T>
void seeded_shuffle(std::vector<T>& items, std::mt19937_64& rng) {
  for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[bounded_index(rng, i)]);
}

struct TrainTestSplit {
  std::vector<Subsample> train;
  std::vector<Subsample> test;
};

/// Seeded shuffle followed by a cut at round(train_fraction * N). Training
/// data must be normal-only.
inline TrainTestSplit split_train_test(std::vector<Subsample> subsamples, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw UsageError("split_train_test: fraction must be in (0, 1)");
  for (const auto& s : subsamples)
    if (s.label != Label::normal)
      throw UsageError("split_train_test: training is normal-only, got a " + std::string(label_name(s.label)) +
                       " subsample from " + s.id());
  std::mt19937_64 rng(seed);
  seeded_shuffle(subsamples, rng);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(subsamples.size())));
  TrainTestSplit split;
  split.train.assign(std::make_move_iterator(subsamples.begin()),
                     std::make_move_iterator(subsamples.begin() + static_cast<std::ptrdiff_t>(n_train)));
  split.test.assign(std::make_move_iterator(subsamples.begin() + static_cast<std::ptrdiff_t>(n_train)),
                    std::make_move_iterator(subsamples.end()));
  return split;
}

/// Bearing-like test signal: sinusoidal carriers plus Gaussian noise, with an
/// optional train of exponentially decaying resonance bursts standing in for
/// a localized defect.
struct SynthSpec {
  std::size_t duration_samples = 120000;
  double sample_rate_hz = 12000.0;
  std::vector<double> carrier_freqs_hz{29.95, 149.75};
  double carrier_amplitude = 1.0;
  double noise_std = 0.1;
  double impulse_rate_hz = 0.0;  // 0 means a healthy (normal) signal
  double impulse_amplitude = 1.0;
  double impulse_decay_s = 0.02;
  double resonance_hz = 3000.0;
  std::uint64_t seed = 0;
};

/// Carrier phases and noise come from one generator seeded by `seed`; impulse
/// timing comes from an independent stream, so adding impulses leaves every
/// sample before the first impulse untouched.
inline TimeSeries synth(const SynthSpec& spec) {
  if (spec.duration_samples == 0) throw UsageError("synth: duration must be positive");
  if (!(spec.sample_rate_hz > 0.0)) throw UsageError("synth: sample rate must be positive");
  if (spec.noise_std < 0.0 || spec.impulse_rate_hz < 0.0 || spec.impulse_decay_s < 0.0)
    throw UsageError("synth: noise, impulse rate and decay must be non-negative");

  TimeSeries series;
  series.sample_rate_hz = spec.sample_rate_hz;
  series.label = spec.impulse_rate_hz > 0.0 ? Label::fault : Label::normal;
  if (series.label == Label::fault) series.fault_kind = "impulse_train";
  series.source = "synth(seed=" + std::to_string(spec.seed) + ")";

  const double dt = 1.0 / spec.sample_rate_hz;
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
  std::vector<double> phases;
  for (std::size_t i = 0; i < spec.carrier_freqs_hz.size(); ++i) phases.push_back(phase_dist(rng));
  std::normal_distribution<double> noise(0.0, 1.0);

  std::vector<double> signal(spec.duration_samples);
  for (std::size_t n = 0; n < signal.size(); ++n) {
    const double t = static_cast<double>(n) * dt;
    double v = 0.0;
    for (std::size_t i = 0; i < phases.size(); ++i)
      v += spec.carrier_amplitude * std::sin(2.0 * std::numbers::pi * spec.carrier_freqs_hz[i] * t + phases[i]);
    signal[n] = v + spec.noise_std * noise(rng);
  }

  if (spec.impulse_rate_hz > 0.0 && spec.impulse_amplitude != 0.0) {
    std::mt19937_64 impulse_rng(spec.seed ^ 0x9E3779B97F4A7C15ull);
    const double period = 1.0 / spec.impulse_rate_hz;
    const double start = std::uniform_real_distribution<double>(0.0, period)(impulse_rng);
    const double tail = spec.impulse_decay_s > 0.0 ? 12.0 * spec.impulse_decay_s : dt;
    const double end_time = static_cast<double>(signal.size()) * dt;
    for (double onset = start; onset < end_time; onset += period) {
      auto n = static_cast<std::size_t>(std::ceil(onset / dt));
      for (; n < signal.size(); ++n) {
        const double local = static_cast<double>(n) * dt - onset;
        if (local > tail) break;
        const double envelope = spec.impulse_decay_s > 0.0 ? std::exp(-local / spec.impulse_decay_s) : 1.0;
        signal[n] += spec.impulse_amplitude * envelope * std::sin(2.0 * std::numbers::pi * spec.resonance_hz * local + 0.5 * std::numbers::pi);
      }
    }
  }

  series.values.assign(signal.begin(), signal.end());
  return series;
}

}  // namespace tsgan

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "tsgan/model.hpp"
#include "tsgan/text_format.hpp"

namespace tsgan {

/// Scores subsamples in eval mode, preserving order. Labels and ids are
/// copied from the inputs.
inline std::vector<ScoredSample> score_dataset(const ModelState& state, std::span<const Subsample> samples,
                                               std::size_t batch_size = 32) {
  std::vector<ScoredSample> out;
  out.reserve(samples.size());
  if (batch_size == 0) batch_size = 1;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const auto chunk = samples.subspan(start, std::min(batch_size, samples.size() - start));
    auto scores = anomaly_scores(state.generator, state.prepare_batch(chunk));
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      scores[i].label = chunk[i].label;
      scores[i].id = chunk[i].id();
      out.push_back(std::move(scores[i]));
    }
  }
  return out;
}

/// Min-max map onto [0, 1]; a constant list maps to all zeros.
inline std::vector<double> normalize_scores(std::span<const double> scores) {
  if (scores.empty()) return {};
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  const double range = *hi - *lo;
  std::vector<double> out(scores.size(), 0.0);
  if (range > 0.0)
    for (std::size_t i = 0; i < scores.size(); ++i) out[i] = (scores[i] - *lo) / range;
  return out;
}

inline std::vector<double> raw_scores(std::span<const ScoredSample> scored) {
  std::vector<double> out;
  out.reserve(scored.size());
  for (const auto& s : scored) out.push_back(s.score);
  return out;
}

namespace detail {
inline void require_both_classes(std::span<const ScoredSample> scored, const char* op) {
  const bool has_normal = std::any_of(scored.begin(), scored.end(), [](const auto& s) { return s.label == Label::normal; });
  const bool has_fault = std::any_of(scored.begin(), scored.end(), [](const auto& s) { return s.label == Label::fault; });
  if (!has_normal || !has_fault) throw UsageError(std::string(op) + ": needs both normal and fault samples");
}
}  // namespace detail

/// Mann-Whitney AUC: probability that a fault outscores a normal sample,
/// ties counting one half. Unlabeled samples are ignored.
inline double roc_auc(std::span<const ScoredSample> scored) {
  detail::require_both_classes(scored, "roc_auc");
  std::vector<const ScoredSample*> ranked;
  for (const auto& s : scored)
    if (s.label != Label::unlabeled) ranked.push_back(&s);
  std::sort(ranked.begin(), ranked.end(), [](const auto* a, const auto* b) { return a->score < b->score; });

  double fault_rank_sum = 0.0;
  double n_fault = 0.0, n_normal = 0.0;
  for (std::size_t i = 0; i < ranked.size();) {
    std::size_t j = i;
    while (j < ranked.size() && ranked[j]->score == ranked[i]->score) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);  // average of ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k) {
      if (ranked[k]->label == Label::fault) {
        fault_rank_sum += mid_rank;
        n_fault += 1;
      } else {
        n_normal += 1;
      }
    }
    i = j;
  }
  const double u = fault_rank_sum - n_fault * (n_fault + 1.0) / 2.0;
  return u / (n_fault * n_normal);
}

struct ThresholdChoice {
  double threshold = 0;
  double accuracy = 0;
};

/// Best accuracy under the rule score > threshold => fault. Candidates are
/// the midpoints between consecutive distinct scores plus the two trivial
/// cuts (everything fault, everything normal); ties keep the lowest threshold.
inline ThresholdChoice pick_threshold(std::span<const ScoredSample> scored) {
  detail::require_both_classes(scored, "pick_threshold");
  std::vector<const ScoredSample*> labeled;
  for (const auto& s : scored)
    if (s.label != Label::unlabeled) labeled.push_back(&s);
  std::vector<double> distinct;
  for (const auto* s : labeled) distinct.push_back(s->score);
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

  std::vector<double> candidates{std::nextafter(distinct.front(), -std::numeric_limits<double>::infinity())};
  for (std::size_t i = 0; i + 1 < distinct.size(); ++i) candidates.push_back(0.5 * (distinct[i] + distinct[i + 1]));
  candidates.push_back(distinct.back());

  ThresholdChoice best{candidates.front(), -1.0};
  for (double t : candidates) {
    std::size_t correct = 0;
    for (const auto* s : labeled) correct += ((s->score > t) == (s->label == Label::fault)) ? 1 : 0;
    const double acc = static_cast<double>(correct) / static_cast<double>(labeled.size());
    if (acc > best.accuracy) best = {t, acc};
  }
  return best;
}

/// Original and reconstructed network inputs of one sample, channel-major.
struct ReconstructionPair {
  std::string id;
  std::size_t channels = 0;
  std::size_t length = 0;
  std::vector<float> original;
  std::vector<float> reconstructed;
};

inline std::vector<ReconstructionPair> reconstruct(const ModelState& state, std::span<const Subsample> samples) {
  NoGradGuard no_grad;
  std::vector<ReconstructionPair> out;
  for (const auto& s : samples) {
    const Tensor x = state.prepare_batch(std::span<const Subsample>(&s, 1));
    const Tensor x_hat = state.generator.forward(x, Mode::eval).x_hat;
    out.push_back({s.id(), x.dim(1), x.dim(2), {x.data().begin(), x.data().end()},
                   {x_hat.data().begin(), x_hat.data().end()}});
  }
  return out;
}

struct EvalReport {
  double auc = 0;
  double accuracy = 0;
  double threshold = 0;
  std::size_t n_normal = 0;
  std::size_t n_fault = 0;
  std::vector<ScoredSample> samples;
  std::vector<double> normalized;
  std::vector<ReconstructionPair> reconstructions;
};

inline EvalReport make_report(std::vector<ScoredSample> scored, std::vector<ReconstructionPair> reconstructions = {}) {
  EvalReport r;
  r.auc = roc_auc(scored);
  const auto choice = pick_threshold(scored);
  r.threshold = choice.threshold;
  r.accuracy = choice.accuracy;
  for (const auto& s : scored) {
    r.n_normal += s.label == Label::normal;
    r.n_fault += s.label == Label::fault;
  }
  r.normalized = normalize_scores(raw_scores(scored));
  r.samples = std::move(scored);
  r.reconstructions = std::move(reconstructions);
  return r;
}

/// Scores the held-out normal and fault subsamples and reconstructs the
/// first `n_reconstructions` of each class.
inline EvalReport evaluate(const ModelState& state, std::span<const Subsample> normal, std::span<const Subsample> fault,
                           std::size_t n_reconstructions = 0) {
  std::vector<ScoredSample> scored = score_dataset(state, normal);
  for (auto& s : score_dataset(state, fault)) scored.push_back(std::move(s));
  std::vector<ReconstructionPair> pairs;
  for (auto* set : {&normal, &fault}) {
    auto picked = reconstruct(state, set->first(std::min(n_reconstructions, set->size())));
    for (auto& p : picked) pairs.push_back(std::move(p));
  }
  return make_report(std::move(scored), std::move(pairs));
}

inline double median(std::vector<double> values) {
  if (values.empty()) throw UsageError("median of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

inline double median_score(std::span<const ScoredSample> scored, Label label) {
  std::vector<double> values;
  for (const auto& s : scored)
    if (s.label == label) values.push_back(s.score);
  return median(std::move(values));
}

inline std::string scores_csv(std::span<const ScoredSample> samples, std::span<const double> normalized) {
  std::string out = "id,label,raw_score,norm_score,l_apparent,l_latent\n";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    out += csv_field(s.id) + ',' + label_name(s.label) + ',' + format_number(s.score) + ',' +
           format_number(normalized[i]) + ',' + format_number(s.l_apparent) + ',' + format_number(s.l_latent) + '\n';
  }
  return out;
}

inline std::string metrics_text(const EvalReport& r) {
  return "auc=" + format_number(r.auc) + "\naccuracy=" + format_number(r.accuracy) +
         "\nthreshold=" + format_number(r.threshold) + "\nn_normal=" + std::to_string(r.n_normal) +
         "\nn_fault=" + std::to_string(r.n_fault) + "\n";
}

/// Long format: one row per (sample, channel, index).
inline std::string reconstruction_csv(std::span<const ReconstructionPair> pairs) {
  std::string out = "id,channel,index,original,reconstructed\n";
  for (const auto& p : pairs)
    for (std::size_t c = 0; c < p.channels; ++c)
      for (std::size_t t = 0; t < p.length; ++t) {
        const std::size_t i = c * p.length + t;
        out += csv_field(p.id) + ',' + std::to_string(c) + ',' + std::to_string(t) + ',' + format_number(p.original[i]) +
               ',' + format_number(p.reconstructed[i]) + '\n';
      }
  return out;
}

/// Writes scores.csv, metrics.txt and reconstruction_pairs.csv into out_dir.
inline void emit_report(const EvalReport& report, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  write_text_file(out_dir / "scores.csv", scores_csv(report.samples, report.normalized));
  write_text_file(out_dir / "metrics.txt", metrics_text(report));
  write_text_file(out_dir / "reconstruction_pairs.csv", reconstruction_csv(report.reconstructions));
}

}  // namespace tsgan

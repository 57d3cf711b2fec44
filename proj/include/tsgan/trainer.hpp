#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tsgan/adam.hpp"
#include "tsgan/checkpoint.hpp"
#include "tsgan/model.hpp"
#include "tsgan/text_format.hpp"

namespace tsgan {

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  float lr = 0.001f;
  float beta1 = 0.5f;
  float beta2 = 0.999f;
  std::size_t latent_dim = 64;
  std::size_t subsample_len = 12000;
  PipelineMode pipeline_mode = PipelineMode::raw;
  std::size_t feature_window = 250;
  std::size_t base_channels = 16;
  std::size_t n_down = 4;
  float leaky_slope = 0.2f;
  LossWeights loss_weights;
  std::uint64_t seed = 0;
  std::filesystem::path checkpoint_path;  // empty: do not write

  void validate() const {
    if (epochs < 1) throw UsageError("epochs must be >= 1");
    if (batch_size < 1) throw UsageError("batch_size must be >= 1");
    if (!(lr > 0.0f)) throw UsageError("lr must be positive");
    loss_weights.validate();
  }

  Architecture architecture() const {
    Architecture a;
    a.latent_dim = latent_dim;
    a.base_channels = base_channels;
    a.n_down = n_down;
    a.leaky_slope = leaky_slope;
    return a;
  }

  Pipeline pipeline() const { return {pipeline_mode, subsample_len, feature_window}; }
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double l_total = 0;
  double l_fraud = 0;
  double l_apparent = 0;
  double l_latent = 0;
  double l_discriminator = 0;
  double seconds = 0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  double wall_seconds = 0;
  std::uint64_t checkpoint_digest = 0;  // FNV-1a of the serialized final state
};

struct TrainResult {
  ModelState state;
  TrainReport report;
};

/// Optional per-batch observer, mainly for tests: (epoch, batch, state).
using BatchHook = std::function<void(std::size_t, std::size_t, const ModelState&)>;

namespace detail {

/// Temporarily excludes tensors from gradient accumulation.
class FreezeGuard {
 public:
  explicit FreezeGuard(std::vector<Tensor> params) : params_(std::move(params)) {
    for (Tensor& p : params_) p.set_requires_grad(false);
  }
  ~FreezeGuard() {
    for (Tensor& p : params_) p.set_requires_grad(true);
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  std::vector<Tensor> params_;
};

inline void check_finite(double value, const char* what, std::size_t epoch, std::size_t batch) {
  if (!std::isfinite(value))
    throw NumericalError(std::string("non-finite ") + what + " loss at epoch " + std::to_string(epoch) + ", batch " +
                         std::to_string(batch));
}

}  // namespace detail

struct StepLosses {
  double total = 0, fraud = 0, apparent = 0, latent = 0, discriminator = 0;
};

/// Generator update on the weighted fraud/apparent/latent loss with the
/// discriminator frozen. Returns the losses and the detached reconstruction.
/// A non-finite total skips the update.
inline std::pair<StepLosses, Tensor> generator_step(ModelState& state, const Tensor& batch, const LossWeights& weights,
                                                    Adam& gen_opt) {
  detail::FreezeGuard frozen(parameters_of(state.discriminator.named_tensors()));
  gen_opt.zero_grad();
  const GeneratorOutput g = state.generator.forward(batch, Mode::train);
  Tensor l_f = fraud_loss(state.discriminator, g.x_hat, Mode::train);
  Tensor l_a = apparent_loss(batch, g.x_hat);
  Tensor l_l = latent_loss(g.z, g.z_hat);
  Tensor total = generator_loss(weights, l_f, l_a, l_l);
  StepLosses out{total.item(), l_f.item(), l_a.item(), l_l.item(), 0.0};
  if (std::isfinite(out.total)) {
    backward(total);
    gen_opt.step();
  }
  return {out, g.x_hat.detach()};
}

/// Discriminator update on feature matching between real and detached fake
/// samples, with the generator frozen.
inline double discriminator_step(ModelState& state, const Tensor& batch, const Tensor& fake, Adam& disc_opt) {
  detail::FreezeGuard frozen(parameters_of(state.generator.named_tensors()));
  disc_opt.zero_grad();
  Tensor l_d = feature_matching_loss(state.discriminator, batch, fake, Mode::train);
  const double value = l_d.item();
  if (std::isfinite(value)) {
    backward(l_d);
    disc_opt.step();
  }
  return value;
}

/// One generator step followed by one discriminator step.
inline StepLosses train_step(ModelState& state, const Tensor& batch, const LossWeights& weights, Adam& gen_opt,
                             Adam& disc_opt) {
  auto [losses, fake] = generator_step(state, batch, weights, gen_opt);
  if (!std::isfinite(losses.total)) return losses;
  losses.discriminator = discriminator_step(state, batch, fake, disc_opt);
  return losses;
}

/// Replaces the generator's batch-norm running statistics with the plain
/// average of per-batch statistics over `inputs` under the current weights.
/// Batching follows training: full batches only, or one batch when the set is
/// smaller than `batch_size`.
inline void recalibrate_batchnorm(Generator& generator, std::span<const std::vector<float>> inputs,
                                  std::size_t batch_size) {
  if (inputs.empty() || batch_size == 0) return;
  const Architecture& arch = generator.architecture();
  const std::size_t per_sample = arch.input_channels * arch.input_len;
  const std::size_t n = std::min(batch_size, inputs.size());
  std::vector<float> saved;
  generator.for_each_norm([&](BatchNorm1dLayer& bn) { saved.push_back(bn.momentum); });

  NoGradGuard no_grad;
  for (std::size_t b = 0; b < inputs.size() / n; ++b) {
    std::vector<float> values;
    values.reserve(n * per_sample);
    for (std::size_t i = 0; i < n; ++i) values.insert(values.end(), inputs[b * n + i].begin(), inputs[b * n + i].end());
    const float momentum = 1.0f / static_cast<float>(b + 1);
    generator.for_each_norm([&](BatchNorm1dLayer& bn) { bn.momentum = momentum; });
    generator.forward(Tensor(Shape{n, arch.input_channels, arch.input_len}, std::move(values)), Mode::train);
  }
  std::size_t i = 0;
  generator.for_each_norm([&](BatchNorm1dLayer& bn) { bn.momentum = saved[i++]; });
}

/// Adversarial training on normal-only subsamples. Batches are reshuffled
/// every epoch from a seeded generator; the trailing partial batch is dropped
/// unless the whole set is smaller than one batch. Generator batch-norm
/// statistics are recalibrated on the training set after the last epoch.
inline TrainResult train(const TrainConfig& config, std::span<const Subsample> train_set,
                         const BatchHook& on_batch = {}) {
  config.validate();
  if (train_set.empty()) throw UsageError("train: empty training set");
  for (const auto& s : train_set)
    if (s.label != Label::normal)
      throw UsageError("train: training is normal-only, got a " + std::string(label_name(s.label)) + " subsample (" +
                       s.id() + ")");

  const auto started = std::chrono::steady_clock::now();
  TrainResult result{ModelState::create(config.architecture(), config.pipeline(), config.seed), {}};
  ModelState& state = result.state;

  std::vector<std::vector<float>> inputs;
  inputs.reserve(train_set.size());
  for (const auto& s : train_set) inputs.push_back(state.pipeline.encode(s));
  state.standardizer = Standardizer::fit(inputs, state.arch.input_channels);
  for (auto& v : inputs) state.standardizer.apply(v);

  const AdamOptions options{config.lr, config.beta1, config.beta2, 1e-8f};
  Adam gen_opt(parameters_of(state.generator.named_tensors()), options);
  Adam disc_opt(parameters_of(state.discriminator.named_tensors()), options);

  const std::size_t batch_size = std::min(config.batch_size, inputs.size());
  const std::size_t n_batches = inputs.size() / batch_size;
  const std::size_t per_sample = state.arch.input_channels * state.arch.input_len;
  std::mt19937_64 shuffle_rng(config.seed ^ 0xD1B54A32D192ED03ull);
  std::vector<std::size_t> order(inputs.size());

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    seeded_shuffle(order, shuffle_rng);

    EpochRecord record;
    record.epoch = epoch;
    for (std::size_t b = 0; b < n_batches; ++b) {
      std::vector<float> values;
      values.reserve(batch_size * per_sample);
      for (std::size_t i = 0; i < batch_size; ++i) {
        const auto& v = inputs[order[b * batch_size + i]];
        values.insert(values.end(), v.begin(), v.end());
      }
      const Tensor batch(Shape{batch_size, state.arch.input_channels, state.arch.input_len}, std::move(values));
      const StepLosses losses = train_step(state, batch, config.loss_weights, gen_opt, disc_opt);
      detail::check_finite(losses.total, "generator", epoch, b + 1);
      detail::check_finite(losses.discriminator, "discriminator", epoch, b + 1);
      record.l_total += losses.total;
      record.l_fraud += losses.fraud;
      record.l_apparent += losses.apparent;
      record.l_latent += losses.latent;
      record.l_discriminator += losses.discriminator;
      if (on_batch) on_batch(epoch, b + 1, state);
    }
    const double n = static_cast<double>(n_batches);
    record.l_total /= n;
    record.l_fraud /= n;
    record.l_apparent /= n;
    record.l_latent /= n;
    record.l_discriminator /= n;
    record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
    result.report.epochs.push_back(record);
  }

  recalibrate_batchnorm(state.generator, inputs, batch_size);
  const std::string bytes = serialize_checkpoint(state);
  result.report.checkpoint_digest = fnv1a64(bytes);
  if (!config.checkpoint_path.empty()) save_checkpoint(state, config.checkpoint_path);
  result.report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

/// CSV with header epoch,l_total,l_f,l_a,l_l,l_d,seconds.
inline std::string train_report_csv(const TrainReport& report) {
  std::string out = "epoch,l_total,l_f,l_a,l_l,l_d,seconds\n";
  for (const auto& r : report.epochs) {
    out += std::to_string(r.epoch) + ',' + format_number(r.l_total) + ',' + format_number(r.l_fraud) + ',' +
           format_number(r.l_apparent) + ',' + format_number(r.l_latent) + ',' + format_number(r.l_discriminator) +
           ',' + format_number(r.seconds) + '\n';
  }
  return out;
}

}  // namespace tsgan

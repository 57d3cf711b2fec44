#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tsgan/features.hpp"
#include "tsgan/ops.hpp"
#include "tsgan/signal_io.hpp"
#include "tsgan/tensor.hpp"

namespace tsgan {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// Layer plan shared by both encoders and the discriminator. Sequences are
/// reflect-padded on the right up to a multiple of 2^n_down.
struct Architecture {
  std::size_t input_channels = 1;
  std::size_t input_len = 12000;
  std::size_t latent_dim = 64;
  std::size_t base_channels = 16;
  std::size_t n_down = 4;
  float leaky_slope = 0.2f;

  std::size_t reduction() const { return std::size_t{1} << n_down; }
  std::size_t padded_len() const { return (input_len + reduction() - 1) / reduction() * reduction(); }
  std::size_t bottleneck_len() const { return padded_len() / reduction(); }
  std::size_t top_channels() const { return base_channels << (n_down - 1); }

  void validate() const {
    if (input_channels == 0 || latent_dim == 0 || base_channels == 0)
      throw UsageError("architecture: channels, latent_dim and base_channels must be positive");
    if (n_down == 0 || n_down > 16) throw UsageError("architecture: n_down must be in [1, 16]");
    if (input_len < 2) throw UsageError("architecture: input length must be at least 2");
    if (padded_len() - input_len >= input_len)
      throw UsageError("architecture: input length " + std::to_string(input_len) + " too short for " +
                       std::to_string(n_down) + " stride-2 stages");
  }

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

/// Number of floats stored for a generator plus discriminator (parameters and
/// batch-norm buffers), computed without building the networks.
inline double stored_float_count(const Architecture& a) {
  auto encoder = [&](double out_dim) {
    double total = 0, in = static_cast<double>(a.input_channels);
    for (std::size_t i = 0; i < a.n_down; ++i) {
      const double out = static_cast<double>(a.base_channels << i);
      total += in * out * 4 + out + (i > 0 ? 4 * out : 0);
      in = out;
    }
    return total + in * out_dim * static_cast<double>(a.bottleneck_len()) + out_dim;
  };
  const double top = static_cast<double>(a.top_channels());
  double decoder = static_cast<double>(a.latent_dim) * top * static_cast<double>(a.bottleneck_len()) + top + 4 * top;
  for (std::size_t i = a.n_down - 1; i >= 1; --i) {
    const double in = static_cast<double>(a.base_channels << i);
    decoder += in * (in / 2) * 4 + in / 2 + 4 * (in / 2);
  }
  decoder += static_cast<double>(a.base_channels * a.input_channels) * 4 + static_cast<double>(a.input_channels);
  return 2 * encoder(static_cast<double>(a.latent_dim)) + decoder + encoder(1);
}

namespace detail {

// DCGAN initialization: kernels ~ N(0, 0.02), gamma ~ N(1, 0.02), zero biases.
inline Tensor init_normal(Shape shape, float mean, float stddev, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<float> dist(mean, stddev);
  for (float& v : t.data()) v = dist(rng);
  t.set_requires_grad(true);
  return t;
}

inline Tensor zeros_param(Shape shape) { return Tensor(std::move(shape), 0.0f).set_requires_grad(true); }

}  // namespace detail

// Layer parameters are Tensor handles; const forward still updates shared
// batch-norm running statistics in train mode.

struct Conv1dLayer {
  Tensor weight;  // [out, in, k]
  Tensor bias;    // [out]
  std::size_t stride = 1;
  std::size_t padding = 0;

  Conv1dLayer() = default;
  Conv1dLayer(std::size_t in, std::size_t out, std::size_t k, std::size_t stride_, std::size_t padding_,
              std::mt19937_64& rng)
      : weight(detail::init_normal({out, in, k}, 0.0f, 0.02f, rng)),
        bias(detail::zeros_param({out})),
        stride(stride_),
        padding(padding_) {}

  Tensor operator()(const Tensor& x) const { return conv1d(x, weight, bias, stride, padding); }
  void collect(const std::string& prefix, NamedTensors& out) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
  }
};

struct ConvTranspose1dLayer {
  Tensor weight;  // [in, out, k]
  Tensor bias;    // [out]
  std::size_t stride = 1;
  std::size_t padding = 0;

  ConvTranspose1dLayer() = default;
  ConvTranspose1dLayer(std::size_t in, std::size_t out, std::size_t k, std::size_t stride_, std::size_t padding_,
                       std::mt19937_64& rng)
      : weight(detail::init_normal({in, out, k}, 0.0f, 0.02f, rng)),
        bias(detail::zeros_param({out})),
        stride(stride_),
        padding(padding_) {}

  Tensor operator()(const Tensor& x) const { return conv_transpose1d(x, weight, bias, stride, padding); }
  void collect(const std::string& prefix, NamedTensors& out) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
  }
};

struct BatchNorm1dLayer {
  Tensor gamma;
  Tensor beta;
  RunningStats stats;
  float momentum = 0.1f;
  float epsilon = 1e-5f;

  BatchNorm1dLayer() = default;
  BatchNorm1dLayer(std::size_t channels, std::mt19937_64& rng)
      : gamma(detail::init_normal({channels}, 1.0f, 0.02f, rng)), beta(detail::zeros_param({channels})), stats(channels) {}

  Tensor operator()(const Tensor& x, Mode mode) const {
    RunningStats shared = stats;
    return batchnorm1d(x, gamma, beta, shared, mode, momentum, epsilon);
  }
  void collect(const std::string& prefix, NamedTensors& out) const {
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
    out.emplace_back(prefix + ".running_mean", stats.mean);
    out.emplace_back(prefix + ".running_var", stats.var);
  }
};

/// Stride-2 conv pyramid followed by a full-length head convolution:
/// [batch, ch, input_len] -> [batch, out_dim, 1].
class Encoder {
 public:
  Encoder() = default;
  Encoder(const Architecture& arch, std::size_t out_dim, std::mt19937_64& rng) : arch_(arch) {
    arch.validate();
    std::size_t in = arch.input_channels;
    for (std::size_t i = 0; i < arch.n_down; ++i) {
      const std::size_t out = arch.base_channels << i;
      convs_.emplace_back(in, out, 4, 2, 1, rng);
      if (i > 0) norms_.emplace_back(out, rng);
      in = out;
    }
    head_ = Conv1dLayer(in, out_dim, arch.bottleneck_len(), 1, 0, rng);
  }

  /// Activation of the last pyramid stage, [batch, top_channels, bottleneck_len].
  Tensor pyramid(const Tensor& x, Mode mode) const {
    if (x.rank() != 3 || x.dim(1) != arch_.input_channels || x.dim(2) != arch_.input_len)
      throw DimensionError("encoder expects [batch, " + std::to_string(arch_.input_channels) + ", " +
                           std::to_string(arch_.input_len) + "], got " + shape_str(x.shape()));
    Tensor h = pad_reflect_right(x, arch_.padded_len() - arch_.input_len);
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      h = convs_[i](h);
      if (i > 0) h = norms_[i - 1](h, mode);
      h = leaky_relu(h, arch_.leaky_slope);
    }
    return h;
  }

  Tensor head(const Tensor& features) const { return head_(features); }

  template <class Fn>
  void for_each_norm(Fn&& fn) {
    for (auto& n : norms_) fn(n);
  }
  Tensor forward(const Tensor& x, Mode mode) const { return head(pyramid(x, mode)); }

  void collect(const std::string& prefix, NamedTensors& out) const {
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      convs_[i].collect(prefix + ".conv" + std::to_string(i), out);
      if (i > 0) norms_[i - 1].collect(prefix + ".bn" + std::to_string(i), out);
    }
    head_.collect(prefix + ".head", out);
  }

  const Architecture& architecture() const { return arch_; }

 private:
  Architecture arch_;
  std::vector<Conv1dLayer> convs_;
  std::vector<BatchNorm1dLayer> norms_;
  Conv1dLayer head_;
};

/// Mirror of the encoder built from transposed convolutions. The final layer
/// is affine: reconstructions are not squashed into [-1, 1].
class Decoder {
 public:
  Decoder() = default;
  Decoder(const Architecture& arch, std::mt19937_64& rng) : arch_(arch) {
    const std::size_t top = arch.top_channels();
    head_ = ConvTranspose1dLayer(arch.latent_dim, top, arch.bottleneck_len(), 1, 0, rng);
    head_norm_ = BatchNorm1dLayer(top, rng);
    for (std::size_t i = arch.n_down - 1; i >= 1; --i) {
      const std::size_t in = arch.base_channels << i;
      ups_.emplace_back(in, in / 2, 4, 2, 1, rng);
      norms_.emplace_back(in / 2, rng);
    }
    out_ = ConvTranspose1dLayer(arch.base_channels, arch.input_channels, 4, 2, 1, rng);
  }

  /// [batch, latent_dim, 1] -> [batch, input_channels, input_len]
  Tensor forward(const Tensor& z, Mode mode) const {
    Tensor h = relu(head_norm_(head_(z), mode));
    for (std::size_t i = 0; i < ups_.size(); ++i) h = relu(norms_[i](ups_[i](h), mode));
    return crop_right(out_(h), arch_.input_len);
  }

  template <class Fn>
  void for_each_norm(Fn&& fn) {
    fn(head_norm_);
    for (auto& n : norms_) fn(n);
  }

  void collect(const std::string& prefix, NamedTensors& out) const {
    head_.collect(prefix + ".head", out);
    head_norm_.collect(prefix + ".head_bn", out);
    for (std::size_t i = 0; i < ups_.size(); ++i) {
      ups_[i].collect(prefix + ".up" + std::to_string(i), out);
      norms_[i].collect(prefix + ".bn" + std::to_string(i), out);
    }
    out_.collect(prefix + ".out", out);
  }

 private:
  Architecture arch_;
  ConvTranspose1dLayer head_;
  BatchNorm1dLayer head_norm_;
  std::vector<ConvTranspose1dLayer> ups_;
  std::vector<BatchNorm1dLayer> norms_;
  ConvTranspose1dLayer out_;
};

struct GeneratorOutput {
  Tensor x_hat;  // [batch, ch, len]
  Tensor z;      // [batch, latent_dim]
  Tensor z_hat;  // [batch, latent_dim]
};

/// Encoder-decoder-encoder generator: z = E1(x), x_hat = D(z), z_hat = E2(x_hat).
class Generator {
 public:
  Generator() = default;
  Generator(const Architecture& arch, std::mt19937_64& rng)
      : arch_(arch), encoder1_(arch, arch.latent_dim, rng), decoder_(arch, rng), encoder2_(arch, arch.latent_dim, rng) {}

  GeneratorOutput forward(const Tensor& x, Mode mode) const {
    const std::size_t batch = x.rank() == 3 ? x.dim(0) : 0;
    Tensor z3 = encoder1_.forward(x, mode);
    Tensor x_hat = decoder_.forward(z3, mode);
    Tensor z_hat = encoder2_.forward(x_hat, mode);
    return {x_hat, reshape(z3, {batch, arch_.latent_dim}), reshape(z_hat, {batch, arch_.latent_dim})};
  }

  const Architecture& architecture() const { return arch_; }
  const Encoder& encoder1() const { return encoder1_; }
  const Encoder& encoder2() const { return encoder2_; }

  template <class Fn>
  void for_each_norm(Fn&& fn) {
    encoder1_.for_each_norm(fn);
    decoder_.for_each_norm(fn);
    encoder2_.for_each_norm(fn);
  }

  NamedTensors named_tensors() const {
    NamedTensors out;
    encoder1_.collect("generator.encoder1", out);
    decoder_.collect("generator.decoder", out);
    encoder2_.collect("generator.encoder2", out);
    return out;
  }

 private:
  Architecture arch_;
  Encoder encoder1_;
  Decoder decoder_;
  Encoder encoder2_;
};

struct DiscriminatorOutput {
  Tensor probability;  // [batch], strictly inside (0, 1)
  Tensor features;     // [batch, feature_dim]
};

/// DCGAN-style critic: the encoder pyramid with a one-logit head and sigmoid.
/// Feature matching reads the flattened output of the last pyramid stage.
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(const Architecture& arch, std::mt19937_64& rng) : body_(arch, 1, rng) {}

  DiscriminatorOutput forward(const Tensor& x, Mode mode) const {
    Tensor h = body_.pyramid(x, mode);
    Tensor logit = body_.head(h);
    return {sigmoid(reshape(logit, {x.dim(0)})), flatten(h)};
  }

  /// Index of the pyramid stage whose activation is used as f(x).
  std::size_t feature_layer_index() const { return body_.architecture().n_down - 1; }

  NamedTensors named_tensors() const {
    NamedTensors out;
    body_.collect("discriminator", out);
    return out;
  }

 private:
  Encoder body_;
};

/// Trainable subset of a named tensor list.
inline std::vector<Tensor> parameters_of(const NamedTensors& named) {
  std::vector<Tensor> out;
  for (const auto& [name, t] : named)
    if (t.requires_grad()) out.push_back(t);
  return out;
}

// ---------------------------------------------------------------------------
// Losses and scoring
// ---------------------------------------------------------------------------

struct LossWeights {
  float fraud = 1.0f;
  float apparent = 50.0f;
  float latent = 1.0f;

  void validate() const {
    if (fraud < 0 || apparent < 0 || latent < 0) throw UsageError("loss weights must be non-negative");
    if (fraud == 0 && apparent == 0 && latent == 0) throw UsageError("at least one loss weight must be positive");
  }
};

/// BCE of the discriminator's verdict on generated samples against target 1.
inline Tensor fraud_loss(const Discriminator& d, const Tensor& x_hat, Mode mode = Mode::train) {
  Tensor p = d.forward(x_hat, mode).probability;
  return bce_loss(p, Tensor(p.shape(), 1.0f));
}

inline Tensor apparent_loss(const Tensor& x, const Tensor& x_hat) { return l1_mean(x, x_hat); }

inline Tensor latent_loss(const Tensor& z, const Tensor& z_hat) { return l2_mean(z, z_hat); }

inline Tensor generator_loss(const LossWeights& w, const Tensor& l_fraud, const Tensor& l_apparent,
                             const Tensor& l_latent) {
  return add(add(scale(l_fraud, w.fraud), scale(l_apparent, w.apparent)), scale(l_latent, w.latent));
}

/// Mean squared distance between discriminator features of real and
/// generated batches.
inline Tensor feature_matching_loss(const Discriminator& d, const Tensor& x_real, const Tensor& x_hat,
                                    Mode mode = Mode::train) {
  detail::require_same_shape(x_real, x_hat, "feature_matching_loss");
  return l2_mean(d.forward(x_real, mode).features, d.forward(x_hat, mode).features);
}

struct ScoredSample {
  double score = 0;  // l_apparent + l_latent
  double l_apparent = 0;
  double l_latent = 0;
  Label label = Label::unlabeled;
  std::string id;
};

namespace detail {
inline Tensor batch_row(const Tensor& t, std::size_t b) {
  const std::size_t stride = t.numel() / t.dim(0);
  Shape shape = t.shape();
  shape[0] = 1;
  return Tensor(std::move(shape), std::vector<float>(t.data().begin() + static_cast<std::ptrdiff_t>(b * stride),
                                                     t.data().begin() + static_cast<std::ptrdiff_t>((b + 1) * stride)));
}
}  // namespace detail

/// Per-sample A(x) = L_a + L_l with eval-mode batch norm. Each row is
/// scored independently of the rest of the batch.
inline std::vector<ScoredSample> anomaly_scores(const Generator& g, const Tensor& x) {
  NoGradGuard no_grad;
  const GeneratorOutput out = g.forward(x, Mode::eval);
  std::vector<ScoredSample> scores(x.dim(0));
  for (std::size_t b = 0; b < scores.size(); ++b) {
    auto& s = scores[b];
    s.l_apparent = apparent_loss(detail::batch_row(x, b), detail::batch_row(out.x_hat, b)).item();
    s.l_latent = latent_loss(detail::batch_row(out.z, b), detail::batch_row(out.z_hat, b)).item();
    s.score = s.l_apparent + s.l_latent;
  }
  return scores;
}

inline ScoredSample anomaly_score(const Generator& g, const Tensor& x) {
  if (x.rank() != 3 || x.dim(0) != 1) throw DimensionError("anomaly_score expects a single [1, ch, len] sample");
  return anomaly_scores(g, x).front();
}

// ---------------------------------------------------------------------------
// Input pipeline and full model state
// ---------------------------------------------------------------------------

enum class PipelineMode { raw, features };

inline const char* pipeline_mode_name(PipelineMode m) { return m == PipelineMode::raw ? "raw" : "features"; }

inline PipelineMode parse_pipeline_mode(const std::string& text) {
  if (text == "raw") return PipelineMode::raw;
  if (text == "features") return PipelineMode::features;
  throw ConfigError("unknown pipeline mode '" + text + "' (expected raw or features)");
}

/// How a subsample becomes a network input: the raw samples as one channel,
/// or the 16-channel sequence of per-window feature vectors.
struct Pipeline {
  PipelineMode mode = PipelineMode::raw;
  std::size_t subsample_len = 12000;
  std::size_t feature_window = 250;

  std::size_t channels() const { return mode == PipelineMode::raw ? 1 : FeatureVector::size; }
  std::size_t sequence_len() const {
    return mode == PipelineMode::raw ? subsample_len : feature_window_count(subsample_len, feature_window);
  }

  void validate() const {
    if (subsample_len < 2) throw UsageError("subsample length must be at least 2");
    if (mode == PipelineMode::features && (feature_window < 2 || sequence_len() < 2))
      throw UsageError("features mode needs at least 2 windows of at least 2 samples");
  }

  /// Unstandardized [channels, sequence_len] values of one subsample.
  std::vector<float> encode(const Subsample& s) const {
    if (s.values.size() != subsample_len)
      throw DimensionError("subsample " + s.id() + " has " + std::to_string(s.values.size()) + " samples, model expects " +
                           std::to_string(subsample_len));
    if (mode == PipelineMode::raw) return s.values;
    return feature_matrix(s.values, feature_window, sequence_len());
  }

  friend bool operator==(const Pipeline&, const Pipeline&) = default;
};

/// Everything needed to score new data: architecture, input pipeline,
/// frozen standardization statistics and both networks.
struct ModelState {
  Architecture arch;
  Pipeline pipeline;
  Standardizer standardizer;
  Generator generator;
  Discriminator discriminator;

  static ModelState create(Architecture arch, const Pipeline& pipeline, std::uint64_t seed) {
    pipeline.validate();
    arch.input_channels = pipeline.channels();
    arch.input_len = pipeline.sequence_len();
    arch.validate();
    std::mt19937_64 rng(seed);
    ModelState state;
    state.arch = arch;
    state.pipeline = pipeline;
    state.generator = Generator(arch, rng);
    state.discriminator = Discriminator(arch, rng);
    return state;
  }

  NamedTensors named_tensors() const {
    NamedTensors out = generator.named_tensors();
    for (auto& entry : discriminator.named_tensors()) out.push_back(std::move(entry));
    return out;
  }

  /// Standardized network input for a batch of subsamples.
  Tensor prepare_batch(std::span<const Subsample> batch) const {
    const std::size_t per = arch.input_channels * arch.input_len;
    std::vector<float> values;
    values.reserve(batch.size() * per);
    for (const auto& s : batch) {
      auto v = pipeline.encode(s);
      standardizer.apply(v);
      values.insert(values.end(), v.begin(), v.end());
    }
    return Tensor(Shape{batch.size(), arch.input_channels, arch.input_len}, std::move(values));
  }
};

}  // namespace tsgan

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "tsgan/tensor.hpp"

namespace tsgan {

struct AdamOptions {
  float learning_rate = 1e-3f;
  float beta1 = 0.5f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
};

/// Moment buffers for a fixed list of parameters. Moments start at zero and
/// step_count advances by one per update.
struct AdamState {
  AdamOptions options;
  std::uint64_t step_count = 0;
  std::vector<std::vector<float>> first_moment;
  std::vector<std::vector<float>> second_moment;
};

inline AdamState make_adam_state(const std::vector<Tensor>& params, AdamOptions options) {
  if (!(options.learning_rate > 0.0f)) throw UsageError("Adam: learning rate must be positive");
  if (!(options.beta1 > 0.0f && options.beta1 < 1.0f) || !(options.beta2 > 0.0f && options.beta2 < 1.0f))
    throw UsageError("Adam: betas must lie in (0, 1)");
  AdamState state;
  state.options = options;
  for (const Tensor& p : params) {
    state.first_moment.emplace_back(p.numel(), 0.0f);
    state.second_moment.emplace_back(p.numel(), 0.0f);
  }
  return state;
}

/// Bias-corrected Adam update, in place. A parameter without a gradient
/// buffer is treated as having zero gradient.
inline void adam_step(std::vector<Tensor>& params, AdamState& state) {
  if (params.size() != state.first_moment.size()) throw DimensionError("Adam: parameter count changed");
  ++state.step_count;
  const auto& opt = state.options;
  const double t = static_cast<double>(state.step_count);
  const float correction1 = static_cast<float>(1.0 - std::pow(static_cast<double>(opt.beta1), t));
  const float correction2 = static_cast<float>(1.0 - std::pow(static_cast<double>(opt.beta2), t));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& param = params[p];
    auto& m = state.first_moment[p];
    auto& v = state.second_moment[p];
    if (m.size() != param.numel()) throw DimensionError("Adam: parameter shape changed");
    auto value = param.data();
    const std::span<const float> grad = param.has_grad() ? param.grad() : std::span<float>{};
    for (std::size_t i = 0; i < value.size(); ++i) {
      const float g = grad.empty() ? 0.0f : grad[i];
      m[i] = opt.beta1 * m[i] + (1.0f - opt.beta1) * g;
      v[i] = opt.beta2 * v[i] + (1.0f - opt.beta2) * g * g;
      const float m_hat = m[i] / correction1;
      const float v_hat = v[i] / correction2;
      value[i] -= opt.learning_rate * m_hat / (std::sqrt(v_hat) + opt.epsilon);
    }
  }
}

/// Parameter list bundled with its optimizer state.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions options)
      : params_(std::move(params)), state_(make_adam_state(params_, options)) {}

  void step() { adam_step(params_, state_); }
  void zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
  }
  const AdamState& state() const { return state_; }

 private:
  std::vector<Tensor> params_;
  AdamState state_;
};

}  // namespace tsgan

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "tsgan/tensor.hpp"

namespace tsgan {

enum class Mode { train, eval };

namespace detail {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

// Eigen picks vectorized code paths from operand addresses, so every matrix
// product runs on buffers with fixed alignment. Results then do not depend
// on where the allocator placed a tensor or on a sample's batch position.
using AlignedFloats = std::vector<float, Eigen::aligned_allocator<float>>;

inline AlignedFloats aligned_copy(const float* src, std::size_t n) { return AlignedFloats(src, src + n); }

inline MatrixMap view(AlignedFloats& buf, std::size_t rows, std::size_t cols) {
  return {buf.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}
inline ConstMatrixMap view(const AlignedFloats& buf, std::size_t rows, std::size_t cols) {
  return {buf.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}

inline void accumulate(std::span<float> dst, const AlignedFloats& src) {
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

inline void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank)
    throw DimensionError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                         ", got " + shape_str(t.shape()));
}

// col[(c * k_len + k) * out_len + t] = x[c][t * stride + k - padding], zero outside.
inline void im2col(const float* x, std::size_t channels, std::size_t len, std::size_t k_len,
                   std::size_t stride, std::size_t padding, std::size_t out_len, float* col) {
  for (std::size_t c = 0; c < channels; ++c) {
    const float* xc = x + c * len;
    for (std::size_t k = 0; k < k_len; ++k) {
      float* row = col + (c * k_len + k) * out_len;
      for (std::size_t t = 0; t < out_len; ++t) {
        const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(t * stride + k) -
                                   static_cast<std::ptrdiff_t>(padding);
        row[t] = (pos >= 0 && pos < static_cast<std::ptrdiff_t>(len)) ? xc[pos] : 0.0f;
      }
    }
  }
}

// Adjoint of im2col: scatter-adds columns back onto the sequence.
inline void col2im(const float* col, std::size_t channels, std::size_t len, std::size_t k_len,
                   std::size_t stride, std::size_t padding, std::size_t out_len, float* x) {
  for (std::size_t c = 0; c < channels; ++c) {
    float* xc = x + c * len;
    for (std::size_t k = 0; k < k_len; ++k) {
      const float* row = col + (c * k_len + k) * out_len;
      for (std::size_t t = 0; t < out_len; ++t) {
        const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(t * stride + k) -
                                   static_cast<std::ptrdiff_t>(padding);
        if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(len)) xc[pos] += row[t];
      }
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and reduction ops
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<float> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  auto an = a.node(), bn = b.node();
  return detail::make_result(a.shape(), std::move(out), {&a, &b}, [an, bn](const detail::Node& self) {
    for (auto& n : {an, bn}) {
      auto g = detail::grad_sink(n);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<float> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  auto an = a.node(), bn = b.node();
  return detail::make_result(a.shape(), std::move(out), {&a, &b}, [an, bn](const detail::Node& self) {
    auto ga = detail::grad_sink(an);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
    auto gb = detail::grad_sink(bn);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= self.grad[i];
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<float> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  auto an = a.node(), bn = b.node();
  return detail::make_result(a.shape(), std::move(out), {&a, &b}, [an, bn](const detail::Node& self) {
    auto ga = detail::grad_sink(an);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * bn->data[i];
    auto gb = detail::grad_sink(bn);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += self.grad[i] * an->data[i];
  });
}

inline Tensor scale(const Tensor& a, float factor) {
  std::vector<float> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  auto an = a.node();
  return detail::make_result(a.shape(), std::move(out), {&a}, [an, factor](const detail::Node& self) {
    auto g = detail::grad_sink(an);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

inline Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (float v : a.data()) acc += v;
  auto an = a.node();
  return detail::make_result(Shape{1}, {static_cast<float>(acc)}, {&a}, [an](const detail::Node& self) {
    auto g = detail::grad_sink(an);
    for (float& v : g) v += self.grad[0];
  });
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0f / static_cast<float>(a.numel())); }

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  std::vector<float> out(a.data().begin(), a.data().end());
  auto an = a.node();
  return detail::make_result(std::move(shape), std::move(out), {&a}, [an](const detail::Node& self) {
    auto g = detail::grad_sink(an);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

/// [batch, ...] -> [batch, rest]
inline Tensor flatten(const Tensor& a) {
  if (a.rank() < 1) throw DimensionError("flatten: rank-0 tensor");
  return reshape(a, Shape{a.dim(0), a.numel() / a.dim(0)});
}

inline Tensor leaky_relu(const Tensor& a, float slope) {
  std::vector<float> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] >= 0.0f ? a[i] : slope * a[i];
  auto an = a.node();
  return detail::make_result(a.shape(), std::move(out), {&a}, [an, slope](const detail::Node& self) {
    auto g = detail::grad_sink(an);
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] += an->data[i] >= 0.0f ? self.grad[i] : slope * self.grad[i];
  });
}

inline Tensor relu(const Tensor& a) { return leaky_relu(a, 0.0f); }

/// Logistic function; outputs are clamped to the open interval (0, 1) so that
/// saturated inputs never produce exact 0 or 1.
inline Tensor sigmoid(const Tensor& a) {
  constexpr float lo = std::numeric_limits<float>::min();
  const float hi = std::nextafter(1.0f, 0.0f);
  std::vector<float> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float x = a[i];
    float s;
    if (x >= 0.0f) {
      s = 1.0f / (1.0f + std::exp(-x));
    } else {
      const float e = std::exp(x);
      s = e / (1.0f + e);
    }
    out[i] = std::clamp(s, lo, hi);
  }
  auto an = a.node();
  return detail::make_result(a.shape(), std::move(out), {&a}, [an](const detail::Node& self) {
    auto g = detail::grad_sink(an);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const float s = self.data[i];
      g[i] += self.grad[i] * s * (1.0f - s);
    }
  });
}

// ---------------------------------------------------------------------------
// Sequence-axis reshaping
// ---------------------------------------------------------------------------

/// Extends the last axis by `extra` samples mirrored about the final sample
/// (x[L-2], x[L-3], ...). Requires extra < L.
inline Tensor pad_reflect_right(const Tensor& a, std::size_t extra) {
  if (a.rank() < 1) throw DimensionError("pad_reflect_right: rank-0 tensor");
  const std::size_t len = a.shape().back();
  if (extra == 0) return reshape(a, a.shape());
  if (extra >= len)
    throw DimensionError("pad_reflect_right: cannot mirror " + std::to_string(extra) +
                         " samples of a length-" + std::to_string(len) + " axis");
  const std::size_t rows = a.numel() / len, out_len = len + extra;
  Shape shape = a.shape();
  shape.back() = out_len;
  std::vector<float> out(rows * out_len);
  auto src = [len, extra](std::size_t j) { return j < len ? j : 2 * len - 2 - j; };
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < out_len; ++j) out[r * out_len + j] = a[r * len + src(j)];
  auto an = a.node();
  return detail::make_result(std::move(shape), std::move(out), {&a},
                             [an, rows, len, out_len, src](const detail::Node& self) {
                               auto g = detail::grad_sink(an);
                               for (std::size_t r = 0; r < rows; ++r)
                                 for (std::size_t j = 0; j < out_len; ++j)
                                   g[r * len + src(j)] += self.grad[r * out_len + j];
                             });
}

/// Keeps the first `keep` samples of the last axis.
inline Tensor crop_right(const Tensor& a, std::size_t keep) {
  if (a.rank() < 1) throw DimensionError("crop_right: rank-0 tensor");
  const std::size_t len = a.shape().back();
  if (keep > len || keep == 0)
    throw DimensionError("crop_right: cannot keep " + std::to_string(keep) + " of " + std::to_string(len));
  if (keep == len) return reshape(a, a.shape());
  const std::size_t rows = a.numel() / len;
  Shape shape = a.shape();
  shape.back() = keep;
  std::vector<float> out(rows * keep);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(a.data().begin() + static_cast<std::ptrdiff_t>(r * len), keep, out.begin() + static_cast<std::ptrdiff_t>(r * keep));
  auto an = a.node();
  return detail::make_result(std::move(shape), std::move(out), {&a}, [an, rows, len, keep](const detail::Node& self) {
    auto g = detail::grad_sink(an);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < keep; ++j) g[r * len + j] += self.grad[r * keep + j];
  });
}

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

/// input [batch, in_ch, len], kernel [out_ch, in_ch, k], bias [out_ch]
/// -> [batch, out_ch, (len + 2 * padding - k) / stride + 1]
inline Tensor conv1d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride,
                     std::size_t padding) {
  detail::require_rank(input, 3, "conv1d", "input");
  detail::require_rank(kernel, 3, "conv1d", "kernel");
  const std::size_t batch = input.dim(0), in_ch = input.dim(1), len = input.dim(2);
  const std::size_t out_ch = kernel.dim(0), k_len = kernel.dim(2);
  if (kernel.dim(1) != in_ch)
    throw DimensionError("conv1d: input has " + std::to_string(in_ch) + " channels but kernel expects " +
                         std::to_string(kernel.dim(1)));
  if (bias.numel() != out_ch) throw DimensionError("conv1d: bias must have " + std::to_string(out_ch) + " entries");
  if (stride == 0) throw UsageError("conv1d: stride must be >= 1");
  if (len + 2 * padding < k_len)
    throw DimensionError("conv1d: padded length " + std::to_string(len + 2 * padding) + " shorter than kernel " +
                         std::to_string(k_len));
  const std::size_t out_len = (len + 2 * padding - k_len) / stride + 1;
  const std::size_t patch = in_ch * k_len;

  std::vector<float> out(batch * out_ch * out_len);
  {
    const auto w = detail::aligned_copy(kernel.data().data(), out_ch * patch);
    detail::AlignedFloats col(patch * out_len), y(out_ch * out_len);
    for (std::size_t b = 0; b < batch; ++b) {
      detail::im2col(input.data().data() + b * in_ch * len, in_ch, len, k_len, stride, padding, out_len, col.data());
      detail::view(y, out_ch, out_len).noalias() = detail::view(w, out_ch, patch) * detail::view(col, patch, out_len);
      float* yb = out.data() + b * out_ch * out_len;
      for (std::size_t o = 0; o < out_ch; ++o)
        for (std::size_t t = 0; t < out_len; ++t) yb[o * out_len + t] = y[o * out_len + t] + bias[o];
    }
  }

  auto xn = input.node(), wn = kernel.node(), bn = bias.node();
  return detail::make_result(
      Shape{batch, out_ch, out_len}, std::move(out), {&input, &kernel, &bias},
      [=](const detail::Node& self) {
        auto gx = detail::grad_sink(xn);
        auto gw = detail::grad_sink(wn);
        auto gb = detail::grad_sink(bn);
        const auto w = detail::aligned_copy(wn->data.data(), out_ch * patch);
        detail::AlignedFloats col(patch * out_len), gw_acc(gw.empty() ? 0 : out_ch * patch, 0.0f);
        for (std::size_t b = 0; b < batch; ++b) {
          const auto dy = detail::aligned_copy(self.grad.data() + b * out_ch * out_len, out_ch * out_len);
          if (!gb.empty()) {
            for (std::size_t o = 0; o < out_ch; ++o)
              for (std::size_t t = 0; t < out_len; ++t) gb[o] += dy[o * out_len + t];
          }
          if (!gw.empty()) {
            detail::im2col(xn->data.data() + b * in_ch * len, in_ch, len, k_len, stride, padding, out_len, col.data());
            detail::view(gw_acc, out_ch, patch).noalias() +=
                detail::view(dy, out_ch, out_len) * detail::view(col, patch, out_len).transpose();
          }
          if (!gx.empty()) {
            detail::view(col, patch, out_len).noalias() =
                detail::view(w, out_ch, patch).transpose() * detail::view(dy, out_ch, out_len);
            detail::col2im(col.data(), in_ch, len, k_len, stride, padding, out_len, gx.data() + b * in_ch * len);
          }
        }
        if (!gw.empty()) detail::accumulate(gw, gw_acc);
      });
}

/// input [batch, in_ch, len], kernel [in_ch, out_ch, k], bias [out_ch]
/// -> [batch, out_ch, (len - 1) * stride - 2 * padding + k]
inline Tensor conv_transpose1d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride,
                               std::size_t padding) {
  detail::require_rank(input, 3, "conv_transpose1d", "input");
  detail::require_rank(kernel, 3, "conv_transpose1d", "kernel");
  const std::size_t batch = input.dim(0), in_ch = input.dim(1), len = input.dim(2);
  const std::size_t out_ch = kernel.dim(1), k_len = kernel.dim(2);
  if (kernel.dim(0) != in_ch)
    throw DimensionError("conv_transpose1d: input has " + std::to_string(in_ch) + " channels but kernel expects " +
                         std::to_string(kernel.dim(0)));
  if (bias.numel() != out_ch)
    throw DimensionError("conv_transpose1d: bias must have " + std::to_string(out_ch) + " entries");
  if (stride == 0) throw UsageError("conv_transpose1d: stride must be >= 1");
  if (len == 0) throw DimensionError("conv_transpose1d: empty input");
  const std::ptrdiff_t signed_len = static_cast<std::ptrdiff_t>((len - 1) * stride + k_len) -
                                    static_cast<std::ptrdiff_t>(2 * padding);
  if (signed_len <= 0)
    throw DimensionError("conv_transpose1d: computed output length " + std::to_string(signed_len) + " is not positive");
  const std::size_t out_len = static_cast<std::size_t>(signed_len);
  const std::size_t patch = out_ch * k_len;

  // The output is the col2im scatter of W^T x; im2col of the output geometry
  // with this stride/padding maps back onto exactly `len` columns.
  std::vector<float> out(batch * out_ch * out_len, 0.0f);
  {
    const auto w = detail::aligned_copy(kernel.data().data(), in_ch * patch);
    detail::AlignedFloats col(patch * len);
    for (std::size_t b = 0; b < batch; ++b) {
      const auto xb = detail::aligned_copy(input.data().data() + b * in_ch * len, in_ch * len);
      detail::view(col, patch, len).noalias() = detail::view(w, in_ch, patch).transpose() * detail::view(xb, in_ch, len);
      float* yb = out.data() + b * out_ch * out_len;
      detail::col2im(col.data(), out_ch, out_len, k_len, stride, padding, len, yb);
      for (std::size_t o = 0; o < out_ch; ++o)
        for (std::size_t t = 0; t < out_len; ++t) yb[o * out_len + t] += bias[o];
    }
  }

  auto xn = input.node(), wn = kernel.node(), bn = bias.node();
  return detail::make_result(
      Shape{batch, out_ch, out_len}, std::move(out), {&input, &kernel, &bias},
      [=](const detail::Node& self) {
        auto gx = detail::grad_sink(xn);
        auto gw = detail::grad_sink(wn);
        auto gb = detail::grad_sink(bn);
        const auto w = detail::aligned_copy(wn->data.data(), in_ch * patch);
        detail::AlignedFloats col(patch * len), dx(gx.empty() ? 0 : in_ch * len),
            gw_acc(gw.empty() ? 0 : in_ch * patch, 0.0f);
        for (std::size_t b = 0; b < batch; ++b) {
          const float* dyb = self.grad.data() + b * out_ch * out_len;
          if (!gb.empty()) {
            for (std::size_t o = 0; o < out_ch; ++o)
              for (std::size_t t = 0; t < out_len; ++t) gb[o] += dyb[o * out_len + t];
          }
          if (gx.empty() && gw.empty()) continue;
          detail::im2col(dyb, out_ch, out_len, k_len, stride, padding, len, col.data());
          if (!gx.empty()) {
            detail::view(dx, in_ch, len).noalias() = detail::view(w, in_ch, patch) * detail::view(col, patch, len);
            float* gxb = gx.data() + b * in_ch * len;
            for (std::size_t i = 0; i < dx.size(); ++i) gxb[i] += dx[i];
          }
          if (!gw.empty()) {
            const auto xb = detail::aligned_copy(xn->data.data() + b * in_ch * len, in_ch * len);
            detail::view(gw_acc, in_ch, patch).noalias() +=
                detail::view(xb, in_ch, len) * detail::view(col, patch, len).transpose();
          }
        }
        if (!gw.empty()) detail::accumulate(gw, gw_acc);
      });
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

/// Per-channel running estimates used in eval mode. Both tensors have shape
/// [channels] and never require grad.
struct RunningStats {
  Tensor mean;
  Tensor var;

  explicit RunningStats(std::size_t channels = 0) : mean(Shape{channels}, 0.0f), var(Shape{channels}, 1.0f) {}
};

/// input [batch, ch, len]. Train mode normalizes with the biased batch
/// variance over (batch, len) and folds the unbiased estimate into `stats`;
/// eval mode uses `stats` as-is.
inline Tensor batchnorm1d(const Tensor& input, const Tensor& gamma, const Tensor& beta, RunningStats& stats, Mode mode,
                          float momentum = 0.1f, float epsilon = 1e-5f) {
  detail::require_rank(input, 3, "batchnorm1d", "input");
  const std::size_t batch = input.dim(0), ch = input.dim(1), len = input.dim(2);
  if (gamma.numel() != ch || beta.numel() != ch || stats.mean.numel() != ch || stats.var.numel() != ch)
    throw DimensionError("batchnorm1d: affine/statistics size does not match " + std::to_string(ch) + " channels");
  if (batch * len == 0) throw DimensionError("batchnorm1d: empty input");
  if (!(epsilon > 0.0f)) throw UsageError("batchnorm1d: epsilon must be positive");

  const std::size_t count = batch * len;
  std::vector<float> normalized(input.numel());
  std::vector<float> inv_std(ch);
  auto at = [ch, len](std::size_t b, std::size_t c, std::size_t t) { return (b * ch + c) * len + t; };
  auto x = input.data();

  for (std::size_t c = 0; c < ch; ++c) {
    float mu, var;
    if (mode == Mode::train) {
      double acc = 0.0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = 0; t < len; ++t) acc += x[at(b, c, t)];
      const double m = acc / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = 0; t < len; ++t) {
          const double d = x[at(b, c, t)] - m;
          sq += d * d;
        }
      const double v = sq / static_cast<double>(count);
      mu = static_cast<float>(m);
      var = static_cast<float>(v);
      const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : v;
      auto rm = stats.mean.data();
      auto rv = stats.var.data();
      rm[c] = (1.0f - momentum) * rm[c] + momentum * mu;
      rv[c] = (1.0f - momentum) * rv[c] + momentum * static_cast<float>(unbiased);
    } else {
      mu = stats.mean[c];
      var = stats.var[c];
    }
    inv_std[c] = 1.0f / std::sqrt(var + epsilon);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t t = 0; t < len; ++t) normalized[at(b, c, t)] = (x[at(b, c, t)] - mu) * inv_std[c];
  }

  std::vector<float> out(input.numel());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t t = 0; t < len; ++t) out[at(b, c, t)] = gamma[c] * normalized[at(b, c, t)] + beta[c];

  auto xn = input.node(), gn = gamma.node(), bn = beta.node();
  return detail::make_result(
      input.shape(), std::move(out), {&input, &gamma, &beta},
      [=, normalized = std::move(normalized), inv_std = std::move(inv_std)](const detail::Node& self) {
        auto gx = detail::grad_sink(xn);
        auto gg = detail::grad_sink(gn);
        auto gbeta = detail::grad_sink(bn);
        const auto& dy = self.grad;
        for (std::size_t c = 0; c < ch; ++c) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t t = 0; t < len; ++t) {
              const std::size_t i = at(b, c, t);
              sum_dy += dy[i];
              sum_dy_xhat += static_cast<double>(dy[i]) * normalized[i];
            }
          if (!gg.empty()) gg[c] += static_cast<float>(sum_dy_xhat);
          if (!gbeta.empty()) gbeta[c] += static_cast<float>(sum_dy);
          if (gx.empty()) continue;
          const float g = gn->data[c];
          if (mode == Mode::eval) {
            for (std::size_t b = 0; b < batch; ++b)
              for (std::size_t t = 0; t < len; ++t) gx[at(b, c, t)] += dy[at(b, c, t)] * g * inv_std[c];
          } else {
            const double n = static_cast<double>(count);
            const double mean_dy = sum_dy / n, mean_dy_xhat = sum_dy_xhat / n;
            for (std::size_t b = 0; b < batch; ++b)
              for (std::size_t t = 0; t < len; ++t) {
                const std::size_t i = at(b, c, t);
                gx[i] += static_cast<float>(g * inv_std[c] * (dy[i] - mean_dy - normalized[i] * mean_dy_xhat));
              }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

inline constexpr double kProbabilityClamp = 1e-7;

/// Mean binary cross entropy. Predictions are clamped to
/// [1e-7, 1 - 1e-7]; the gradient is evaluated at the clamped value.
inline Tensor bce_loss(const Tensor& prediction, const Tensor& target) {
  detail::require_same_shape(prediction, target, "bce_loss");
  const std::size_t n = prediction.numel();
  auto clamp_p = [](float p) { return std::clamp(static_cast<double>(p), kProbabilityClamp, 1.0 - kProbabilityClamp); };
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = clamp_p(prediction[i]), t = target[i];
    acc -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
  }
  auto pn = prediction.node(), tn = target.node();
  return detail::make_result(Shape{1}, {static_cast<float>(acc / static_cast<double>(n))}, {&prediction},
                             [pn, tn, n, clamp_p](const detail::Node& self) {
                               auto g = detail::grad_sink(pn);
                               const double upstream = self.grad[0] / static_cast<double>(n);
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                 const double p = clamp_p(pn->data[i]), t = tn->data[i];
                                 g[i] += static_cast<float>(upstream * ((1.0 - t) / (1.0 - p) - t / p));
                               }
                             });
}

/// mean(|a - b|)
inline Tensor l1_mean(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "l1_mean");
  const std::size_t n = a.numel();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += std::fabs(static_cast<double>(a[i]) - b[i]);
  auto an = a.node(), bn = b.node();
  return detail::make_result(Shape{1}, {static_cast<float>(acc / static_cast<double>(n))}, {&a, &b},
                             [an, bn, n](const detail::Node& self) {
                               const float scale = self.grad[0] / static_cast<float>(n);
                               auto ga = detail::grad_sink(an);
                               auto gb = detail::grad_sink(bn);
                               for (std::size_t i = 0; i < n; ++i) {
                                 const float d = an->data[i] - bn->data[i];
                                 const float s = d > 0.0f ? scale : (d < 0.0f ? -scale : 0.0f);
                                 if (!ga.empty()) ga[i] += s;
                                 if (!gb.empty()) gb[i] -= s;
                               }
                             });
}

/// mean((a - b)^2)
inline Tensor l2_mean(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "l2_mean");
  const std::size_t n = a.numel();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    acc += d * d;
  }
  auto an = a.node(), bn = b.node();
  return detail::make_result(Shape{1}, {static_cast<float>(acc / static_cast<double>(n))}, {&a, &b},
                             [an, bn, n](const detail::Node& self) {
                               const float scale = 2.0f * self.grad[0] / static_cast<float>(n);
                               auto ga = detail::grad_sink(an);
                               auto gb = detail::grad_sink(bn);
                               for (std::size_t i = 0; i < n; ++i) {
                                 const float d = (an->data[i] - bn->data[i]) * scale;
                                 if (!ga.empty()) ga[i] += d;
                                 if (!gb.empty()) gb[i] -= d;
                               }
                             });
}

}  // namespace tsgan

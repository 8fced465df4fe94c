#pragma once

// Small learned regularizer for the star variant: a 3x3 conv to `hidden`
// channels, softplus, a 3x3 conv back to one channel, and a skip connection
// adding the input. Convolutions wrap circularly so the grid shape is preserved.

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <vector>

#include "lensless/grid.hpp"

namespace lensless {

inline double softplus(double h) {
  return h > 0 ? h + std::log1p(std::exp(-h)) : std::log1p(std::exp(h));
}
inline double sigmoid(double h) {
  return h >= 0 ? 1.0 / (1.0 + std::exp(-h)) : std::exp(h) / (1.0 + std::exp(h));
}

struct LearnedTransform {
  static constexpr std::size_t hidden = 8;
  static constexpr std::size_t taps = 9;  // 3x3, row-major, offsets -1..1
  static constexpr std::size_t parameter_count = 2 * hidden * taps + hidden + 1;

  std::array<double, hidden * taps> conv_in{};   // [channel][tap]
  std::array<double, hidden> bias_in{};
  std::array<double, hidden * taps> conv_out{};  // [channel][tap]
  double bias_out = 0.0;
  bool residual = true;

  /// Zero filters with the skip connection on: the map x -> x.
  static LearnedTransform identity() { return {}; }

  static LearnedTransform random(std::uint64_t seed, double scale) {
    LearnedTransform t;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, scale);
    for (auto& v : t.conv_in) v = n(rng);
    for (auto& v : t.bias_in) v = n(rng);
    for (auto& v : t.conv_out) v = n(rng);
    t.bias_out = n(rng);
    return t;
  }

  std::vector<double> flatten() const {
    std::vector<double> p;
    p.reserve(parameter_count);
    p.insert(p.end(), conv_in.begin(), conv_in.end());
    p.insert(p.end(), bias_in.begin(), bias_in.end());
    p.insert(p.end(), conv_out.begin(), conv_out.end());
    p.push_back(bias_out);
    return p;
  }

  void assign(std::span<const double> p) {
    if (p.size() != parameter_count)
      throw DimensionError("transform parameter count " + std::to_string(p.size()) +
                           ", expected " + std::to_string(parameter_count));
    auto it = p.begin();
    for (auto& v : conv_in) v = *it++;
    for (auto& v : bias_in) v = *it++;
    for (auto& v : conv_out) v = *it++;
    bias_out = *it;
  }

  bool operator==(const LearnedTransform&) const = default;
};

namespace detail {

// Copy of g with a one-pixel circular border, so 3x3 neighborhoods need no
// index wrapping.
class WrappedGrid {
 public:
  explicit WrappedGrid(const RealGrid& g) : R_(g.rows()), C_(g.cols()), data_((R_ + 2) * (C_ + 2)) {
    for (std::size_t r = 0; r < R_ + 2; ++r) {
      const std::size_t sr = (r + R_ - 1) % R_;
      double* row = &data_[r * (C_ + 2)];
      row[0] = g(sr, C_ - 1);
      for (std::size_t c = 0; c < C_; ++c) row[c + 1] = g(sr, c);
      row[C_ + 1] = g(sr, 0);
    }
  }
  std::size_t stride() const { return C_ + 2; }
  // Pointer to the wrapped pixel (r - 1, c - 1) for r, c in [0, R + 2).
  const double* row(std::size_t r) const { return &data_[r * (C_ + 2)]; }

 private:
  std::size_t R_, C_;
  std::vector<double> data_;
};

// out(r, c) += sum_t k[t] * in(r + dr_t, c + dc_t), circular.
inline void correlate3x3_add(const WrappedGrid& in, const double* k, RealGrid& out) {
  const std::size_t R = out.rows(), C = out.cols();
  for (std::size_t r = 0; r < R; ++r) {
    const double *a = in.row(r), *b = in.row(r + 1), *c3 = in.row(r + 2);
    double* o = &out(r, 0);
    for (std::size_t c = 0; c < C; ++c)
      o[c] += k[0] * a[c] + k[1] * a[c + 1] + k[2] * a[c + 2] + k[3] * b[c] + k[4] * b[c + 1] + k[5] * b[c + 2] +
              k[6] * c3[c] + k[7] * c3[c + 1] + k[8] * c3[c + 2];
  }
}

// Adjoint of correlate3x3_add with respect to `in`, as a correlation of `g` with
// the point-reflected kernel: grad_in(p, q) += sum_t k[t] * g(p - dr_t, q - dc_t).
inline void correlate3x3_adjoint_add(const WrappedGrid& g, const double* k, RealGrid& grad_in) {
  const double flipped[9] = {k[8], k[7], k[6], k[5], k[4], k[3], k[2], k[1], k[0]};
  correlate3x3_add(g, flipped, grad_in);
}

// grad_k[t] += sum_{r,c} g(r, c) * in(r + dr_t, c + dc_t)
inline void correlate3x3_kernel_grad(const RealGrid& g, const WrappedGrid& in, double* grad_k) {
  const std::size_t R = g.rows(), C = g.cols();
  double acc[9] = {};
  for (std::size_t r = 0; r < R; ++r) {
    const double* rows[3] = {in.row(r), in.row(r + 1), in.row(r + 2)};
    const double* gr = &g(r, 0);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        const double* src = rows[i] + j;
        double s = 0.0;
        for (std::size_t c = 0; c < C; ++c) s += gr[c] * src[c];
        acc[3 * i + j] += s;
      }
  }
  for (int t = 0; t < 9; ++t) grad_k[t] += acc[t];
}

}  // namespace detail

/// Hidden activations and their slopes, kept for the reverse pass.
struct TransformCache {
  std::vector<RealGrid> activation;  // softplus(h), one per hidden channel
  std::vector<RealGrid> slope;       // sigmoid(h) = softplus'(h)
};

inline RealGrid apply_transform(const LearnedTransform& t, const RealGrid& x,
                                TransformCache* cache = nullptr) {
  RealGrid y = t.residual ? x : RealGrid(x.dims(), 0.0);
  if (cache) {
    cache->activation.clear();
    cache->slope.clear();
  }
  const detail::WrappedGrid xw(x);
  for (std::size_t ch = 0; ch < LearnedTransform::hidden; ++ch) {
    RealGrid h(x.dims(), t.bias_in[ch]);
    detail::correlate3x3_add(xw, &t.conv_in[ch * LearnedTransform::taps], h);
    // softplus and its slope sigmoid from one exp(-|h|)
    RealGrid a(x.dims());
    for (std::size_t i = 0; i < h.size(); ++i) {
      const double e = std::exp(-std::abs(h[i]));
      a[i] = std::max(h[i], 0.0) + std::log1p(e);
      h[i] = h[i] >= 0 ? 1.0 / (1.0 + e) : e / (1.0 + e);
    }
    detail::correlate3x3_add(detail::WrappedGrid(a), &t.conv_out[ch * LearnedTransform::taps], y);
    if (cache) {
      cache->activation.push_back(std::move(a));
      cache->slope.push_back(std::move(h));
    }
  }
  for (double& v : y) v += t.bias_out;
  return y;
}

/// Reverse pass: accumulates parameter gradients into `grad` and returns dL/dx.
inline RealGrid transform_backward(const LearnedTransform& t, const RealGrid& x,
                                   const TransformCache& cache, const RealGrid& grad_y,
                                   LearnedTransform& grad) {
  if (cache.activation.size() != LearnedTransform::hidden || cache.slope.size() != LearnedTransform::hidden)
    throw InvalidArgument("transform cache does not match the transform");
  RealGrid grad_x = t.residual ? grad_y : RealGrid(x.dims(), 0.0);
  for (double v : grad_y) grad.bias_out += v;
  const detail::WrappedGrid xw(x), gyw(grad_y);
  for (std::size_t ch = 0; ch < LearnedTransform::hidden; ++ch) {
    const RealGrid& slope = cache.slope[ch];
    const std::size_t off = ch * LearnedTransform::taps;
    detail::correlate3x3_kernel_grad(grad_y, detail::WrappedGrid(cache.activation[ch]), &grad.conv_out[off]);
    RealGrid grad_h(x.dims(), 0.0);
    detail::correlate3x3_adjoint_add(gyw, &t.conv_out[off], grad_h);
    double bias_acc = 0.0;
    for (std::size_t i = 0; i < grad_h.size(); ++i) {
      grad_h[i] *= slope[i];
      bias_acc += grad_h[i];
    }
    grad.bias_in[ch] += bias_acc;
    detail::correlate3x3_kernel_grad(grad_h, xw, &grad.conv_in[off]);
    detail::correlate3x3_adjoint_add(detail::WrappedGrid(grad_h), &t.conv_in[off], grad_x);
  }
  return grad_x;
}

}  // namespace lensless

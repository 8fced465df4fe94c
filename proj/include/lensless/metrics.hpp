#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include "lensless/forward_model.hpp"
#include "lensless/grid.hpp"

namespace lensless {

/// Central 80% of the sensor in each dimension (at least one pixel).
inline Dims default_valid_region(Dims sensor) {
  auto f = [](std::size_t n) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.8 * static_cast<double>(n))));
  };
  return {f(sensor.rows), f(sensor.cols)};
}

/// 1/2 ||b - C H x||^2 summed over color planes.
inline double data_fidelity(const ConvolutionOperator& H, const Measurement& b, const Scene& x_hat) {
  double acc = 0.0;
  for (std::size_t c = 0; c < kChannels; ++c) {
    require_same_dims(b[c].dims(), H.sensor_dims(), "data_fidelity measurement");
    const RealGrid pred = crop_center(H.apply(x_hat[c]), H.sensor_dims());
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double d = b[c][i] - pred[i];
      acc += 0.5 * d * d;
    }
  }
  return acc;
}

inline double data_fidelity(const Psf& psf, const Measurement& b, const Scene& x_hat) {
  return data_fidelity(ConvolutionOperator(psf), b, x_hat);
}

namespace ssim_constants {
inline constexpr std::size_t window = 8;
inline constexpr double k1 = 0.01, k2 = 0.03, range = 1.0;
inline constexpr double c1 = (k1 * range) * (k1 * range);
inline constexpr double c2 = (k2 * range) * (k2 * range);
}  // namespace ssim_constants

namespace detail {

// Inclusive-exclusive 2D prefix sums: S(r, c) = sum over [0, r) x [0, c).
inline RealGrid prefix_sums(const RealGrid& g) {
  RealGrid s({g.rows() + 1, g.cols() + 1}, 0.0);
  for (std::size_t r = 0; r < g.rows(); ++r)
    for (std::size_t c = 0; c < g.cols(); ++c)
      s(r + 1, c + 1) = g(r, c) + s(r, c + 1) + s(r + 1, c) - s(r, c);
  return s;
}

inline double box(const RealGrid& s, std::size_t r0, std::size_t c0, std::size_t r1, std::size_t c1) {
  return s(r1, c1) - s(r0, c1) - s(r1, c0) + s(r0, c0);
}

}  // namespace detail

/// Mean SSIM over all 8x8 windows (stride 1, windows fully inside the grid), with
/// uniform weights and population moments. Fills dSSIM/dx when `grad_x` is given.
inline double ssim(const RealGrid& x, const RealGrid& y, RealGrid* grad_x = nullptr) {
  using namespace ssim_constants;
  require_same_dims(x.dims(), y.dims(), "ssim");
  if (x.rows() < window || x.cols() < window)
    throw DimensionError("ssim needs at least 8x8 pixels, got " + to_string(x.dims()));
  const std::size_t R = x.rows(), C = x.cols();
  const std::size_t WR = R - window + 1, WC = C - window + 1;
  const double n = static_cast<double>(window * window);
  const double nw = static_cast<double>(WR * WC);

  const RealGrid sx = detail::prefix_sums(x), sy = detail::prefix_sums(y);
  const RealGrid sxx = detail::prefix_sums(zip(x, x, [](double a, double b) { return a * b; }));
  const RealGrid syy = detail::prefix_sums(zip(y, y, [](double a, double b) { return a * b; }));
  const RealGrid sxy = detail::prefix_sums(zip(x, y, [](double a, double b) { return a * b; }));

  RealGrid wa, wb, wc;
  if (grad_x) {
    wa = wb = wc = RealGrid({WR, WC}, 0.0);
  }
  double total = 0.0;
  for (std::size_t r = 0; r < WR; ++r) {
    for (std::size_t c = 0; c < WC; ++c) {
      const std::size_t re = r + window, ce = c + window;
      const double mx = detail::box(sx, r, c, re, ce) / n;
      const double my = detail::box(sy, r, c, re, ce) / n;
      const double vx = detail::box(sxx, r, c, re, ce) / n - mx * mx;
      const double vy = detail::box(syy, r, c, re, ce) / n - my * my;
      const double cxy = detail::box(sxy, r, c, re, ce) / n - mx * my;
      const double a1 = 2 * mx * my + c1, a2 = 2 * cxy + c2;
      const double b1 = mx * mx + my * my + c1, b2 = vx + vy + c2;
      const double s = (a1 * a2) / (b1 * b2);
      total += s;
      if (grad_x) {
        const double beta = 2 * s / a2, gamma = 2 * s / b2;
        wa(r, c) = s * (2 * my / a1 - 2 * mx / b1) - beta * my + gamma * mx;
        wb(r, c) = beta;
        wc(r, c) = gamma;
      }
    }
  }
  if (grad_x) {
    // Each pixel collects the windows whose top-left lies in [p - 7, p].
    const RealGrid pa = detail::prefix_sums(wa), pb = detail::prefix_sums(wb),
                   pc = detail::prefix_sums(wc);
    *grad_x = RealGrid(x.dims(), 0.0);
    for (std::size_t r = 0; r < R; ++r) {
      const std::size_t r0 = r + 1 >= window ? r + 1 - window : 0, re = std::min(r + 1, WR);
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t c0 = c + 1 >= window ? c + 1 - window : 0, ce = std::min(c + 1, WC);
        if (r0 >= re || c0 >= ce) continue;
        const double A = detail::box(pa, r0, c0, re, ce), B = detail::box(pb, r0, c0, re, ce),
                     G = detail::box(pc, r0, c0, re, ce);
        (*grad_x)(r, c) = (A + y(r, c) * B - x(r, c) * G) / (n * nw);
      }
    }
  }
  return total / nw;
}

struct QualityMetrics {
  double mse = 0;
  double psnr = 0;
  double ssim = 0;
};

inline constexpr double kPsnrCeiling = 200.0;

/// PSNR for peak 1, capped at 200 dB for identical images.
inline double psnr_from_mse(double mse) {
  if (mse <= 0) return kPsnrCeiling;
  return std::min(kPsnrCeiling, 10.0 * std::log10(1.0 / mse));
}

/// Crops an estimate (possibly on the padded grid) to the ground-truth grid, then
/// both to the central `valid` block.
inline RealGrid crop_to_region(const RealGrid& g, Dims gt_dims, Dims valid) {
  return crop_center(g.dims() == gt_dims ? g : crop_center(g, gt_dims), valid);
}

inline QualityMetrics metrics(const Planes& x_hat, const Planes& x_gt, Dims valid) {
  QualityMetrics m;
  double se = 0.0, ss = 0.0;
  for (std::size_t c = 0; c < kChannels; ++c) {
    const RealGrid a = crop_to_region(x_hat[c], x_gt.dims(), valid);
    const RealGrid b = crop_center(x_gt[c], valid);
    for (std::size_t i = 0; i < a.size(); ++i) se += (a[i] - b[i]) * (a[i] - b[i]);
    ss += ssim(a, b);
  }
  m.mse = se / static_cast<double>(kChannels * valid.size());
  m.psnr = psnr_from_mse(m.mse);
  m.ssim = ss / kChannels;
  return m;
}

/// Per-epoch weights of the two training loss terms. MSE is weighted 1 throughout;
/// the SSIM term ramps linearly from 0 to `ssim_final` over the first
/// `ramp_fraction` of training.
struct LossSchedule {
  double mse_weight = 1.0;
  double ssim_final = 1.0;
  double ramp_fraction = 0.5;
  int total_epochs = 1;

  static LossSchedule mse_only() { return {1.0, 0.0, 0.5, 1}; }

  double w_mse(int /*epoch*/) const { return mse_weight; }
  double w_ssim(int epoch) const {
    const double ramp = ramp_fraction * std::max(total_epochs, 1);
    if (ramp <= 0) return ssim_final;
    return ssim_final * std::min(1.0, static_cast<double>(epoch) / ramp);
  }

  void validate() const {
    if (mse_weight < 0 || ssim_final < 0) throw InvalidArgument("loss weights must be nonnegative");
    if (mse_weight == 0 && ssim_final == 0) throw InvalidArgument("loss weights cannot both be zero");
  }
};

struct LossValue {
  double loss = 0;
  Scene grad;  // dLoss/dx_hat on x_hat's grid, zero outside the valid region
};

/// w_mse * MSE + w_ssim * (1 - SSIM) over the valid region, with its gradient.
inline LossValue loss_eval(const Scene& x_hat, const Planes& x_gt, Dims valid,
                           const LossSchedule& schedule, int epoch) {
  schedule.validate();
  const double wm = schedule.w_mse(epoch), ws = schedule.w_ssim(epoch);
  const double n = static_cast<double>(kChannels * valid.size());
  LossValue out;
  double se = 0.0, ss = 0.0;
  for (std::size_t c = 0; c < kChannels; ++c) {
    const RealGrid a = crop_to_region(x_hat[c], x_gt.dims(), valid);
    const RealGrid b = crop_center(x_gt[c], valid);
    RealGrid g(valid, 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) {
      se += (a[i] - b[i]) * (a[i] - b[i]);
      g[i] = wm * 2.0 * (a[i] - b[i]) / n;
    }
    if (ws > 0) {
      RealGrid gs;
      ss += ssim(a, b, &gs);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= ws * gs[i] / kChannels;
    }
    RealGrid full = pad_center(g, x_gt.dims());
    out.grad[c] = x_hat[c].dims() == x_gt.dims() ? std::move(full) : pad_center(full, x_hat[c].dims());
  }
  out.loss = wm * se / n;
  if (ws > 0) out.loss += ws * (1.0 - ss / kChannels);
  return out;
}

}  // namespace lensless

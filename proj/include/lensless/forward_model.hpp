#pragma once

#include <array>
#include <cstdint>
#include <random>

#include "lensless/fft.hpp"
#include "lensless/grid.hpp"

namespace lensless {

inline constexpr std::size_t kChannels = 3;

/// Calibration PSF at sensor dims, scaled to unit l2 norm. One plane shared by
/// every color channel.
struct Psf {
  RealGrid grid;
  double norm = 1.0;  // divisor applied to the raw capture

  Dims sensor_dims() const { return grid.dims(); }
  Dims padded_dims() const { return doubled(grid.dims()); }
};

/// Three color planes. Scenes live on the padded (2x sensor) grid, measurements
/// on the sensor grid.
struct Planes {
  std::array<RealGrid, kChannels> planes;

  Dims dims() const { return planes[0].dims(); }
  RealGrid& operator[](std::size_t c) { return planes[c]; }
  const RealGrid& operator[](std::size_t c) const { return planes[c]; }
  bool operator==(const Planes&) const = default;

  static Planes filled(Dims d, double value = 0.0) {
    return {{RealGrid(d, value), RealGrid(d, value), RealGrid(d, value)}};
  }
};

struct Scene : Planes {};
struct Measurement : Planes {};

struct NoiseModel {
  enum class Kind { none, gaussian };
  Kind kind = Kind::none;
  double sigma = 0.0;  // standard deviation as a fraction of peak signal
  std::uint64_t seed = 0;
};

inline Psf normalize_psf(const RealGrid& raw) {
  require_nonempty(raw.dims());
  require_finite(raw, "normalize_psf input");
  for (double v : raw)
    if (v < 0.0) throw InvalidArgument("normalize_psf: PSF has negative entries");
  const double n = norm(raw);
  if (n == 0.0) throw InvalidArgument("normalize_psf: PSF is all zeros");
  return {map(raw, [n](double v) { return v / n; }), n};
}

/// Convolution with a PSF on the padded grid, diagonal in the Fourier domain.
/// The PSF is placed by pad_center and cyclically shifted so that its center
/// pixel (floor(rows/2), floor(cols/2)) sits at index (0, 0); a centered delta
/// therefore acts as the identity.
class ConvolutionOperator {
 public:
  explicit ConvolutionOperator(const Psf& psf) : sensor_(psf.sensor_dims()), padded_(doubled(sensor_)) {
    const RealGrid padded = pad_center(psf.grid, padded_);
    const auto [r0, c0] = center_offset(padded_, sensor_);
    spectrum_ = rfft2(circshift_read(padded, r0 + sensor_.rows / 2, c0 + sensor_.cols / 2));
  }

  Dims sensor_dims() const { return sensor_; }
  Dims padded_dims() const { return padded_; }
  const HalfSpectrum& spectrum() const { return spectrum_; }

  RealGrid apply(const RealGrid& x) const { return irfft2(multiply(rfft2(check(x)), false)); }
  RealGrid apply_adjoint(const RealGrid& y) const { return irfft2(multiply(rfft2(check(y)), true)); }

  /// In-place spectral product with H (or its conjugate for the adjoint).
  HalfSpectrum multiply(HalfSpectrum s, bool adjoint) const {
    const auto& h = spectrum_.coeffs;
    for (std::size_t i = 0; i < h.size(); ++i)
      s.coeffs[i] *= adjoint ? std::conj(h[i]) : h[i];
    return s;
  }

  /// |H(k)|^2 over the half spectrum.
  RealGrid power_spectrum() const {
    RealGrid p(spectrum_.coeffs.dims());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::norm(spectrum_.coeffs[i]);
    return p;
  }

 private:
  const RealGrid& check(const RealGrid& g) const {
    require_same_dims(g.dims(), padded_, "convolution operand");
    return g;
  }

  Dims sensor_;
  Dims padded_;
  HalfSpectrum spectrum_;
};

inline RealGrid apply_H(const Psf& psf, const RealGrid& x_plane) {
  return ConvolutionOperator(psf).apply(x_plane);
}

inline RealGrid apply_H_adjoint(const Psf& psf, const RealGrid& y_plane) {
  return ConvolutionOperator(psf).apply_adjoint(y_plane);
}

/// b = C H x per color plane, plus optional clamped Gaussian noise.
inline Measurement forward_measure(const ConvolutionOperator& H, const Scene& scene,
                                   const NoiseModel& noise) {
  Measurement b;
  for (std::size_t c = 0; c < kChannels; ++c)
    b[c] = crop_center(H.apply(scene[c]), H.sensor_dims());
  if (noise.kind == NoiseModel::Kind::none) return b;
  if (noise.sigma < 0.0) throw InvalidArgument("noise sigma must be nonnegative");
  double peak = 0.0;
  for (const auto& plane : b.planes)
    for (double v : plane) peak = std::max(peak, v);
  std::mt19937_64 rng(noise.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double stddev = noise.sigma * peak;
  for (auto& plane : b.planes)
    for (double& v : plane) v = std::max(v + stddev * normal(rng), 0.0);
  return b;
}

inline Measurement forward_measure(const Psf& psf, const Scene& scene, const NoiseModel& noise) {
  return forward_measure(ConvolutionOperator(psf), scene, noise);
}

/// Caustic-like synthetic PSF: a few dozen sharp Gaussian spots along random
/// smooth arcs, normalized to unit l2 norm.
inline Psf make_synthetic_psf(Dims sensor, std::uint64_t seed, int arcs = 6) {
  require_nonempty(sensor);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  RealGrid raw(sensor, 0.0);
  const double R = static_cast<double>(sensor.rows), C = static_cast<double>(sensor.cols);
  const double width = std::max(0.6, 0.01 * std::min(R, C));
  auto splat = [&](double pr, double pc, double amp) {
    const int rad = static_cast<int>(std::ceil(3 * width));
    const int ir = static_cast<int>(std::lround(pr)), ic = static_cast<int>(std::lround(pc));
    for (int dr = -rad; dr <= rad; ++dr)
      for (int dc = -rad; dc <= rad; ++dc) {
        const int r = ir + dr, c = ic + dc;
        if (r < 0 || c < 0 || r >= static_cast<int>(R) || c >= static_cast<int>(C)) continue;
        const double d2 = (r - pr) * (r - pr) + (c - pc) * (c - pc);
        raw(r, c) += amp * std::exp(-d2 / (2 * width * width));
      }
  };
  for (int a = 0; a < arcs; ++a) {
    const double cr = R * (0.2 + 0.6 * unit(rng)), cc = C * (0.2 + 0.6 * unit(rng));
    const double radius = 0.15 * std::min(R, C) + 0.3 * std::min(R, C) * unit(rng);
    const double start = 6.283185307179586 * unit(rng), span = 0.5 + 1.5 * unit(rng);
    const int steps = 4 + static_cast<int>(8 * unit(rng));
    for (int s = 0; s < steps; ++s) {
      const double t = start + span * s / steps;
      splat(cr + radius * std::sin(t), cc + radius * std::cos(t), 0.5 + unit(rng));
    }
  }
  return normalize_psf(raw);
}

/// Single-pixel PSF at the sensor center.
inline Psf make_delta_psf(Dims sensor, long dr = 0, long dc = 0) {
  RealGrid raw(sensor, 0.0);
  raw(static_cast<std::size_t>(static_cast<long>(sensor.rows / 2) + dr),
      static_cast<std::size_t>(static_cast<long>(sensor.cols / 2) + dc)) = 1.0;
  return normalize_psf(raw);
}

}  // namespace lensless

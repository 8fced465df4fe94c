#pragma once

// 2D DFTs backed by FFTW. Plans are created once per shape with FFTW_ESTIMATE
// (deterministic plan choice) and executed directly on grid storage, which is
// always 64-byte aligned, so every call takes the same code path and results are
// bit-reproducible.

#include <fftw3.h>

#include <complex>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <tuple>

#include "lensless/grid.hpp"

namespace lensless {

namespace detail {

struct FftwFree {
  void operator()(void* p) const noexcept { fftw_free(p); }
};

template <typename T>
using FftwBuffer = std::unique_ptr<T[], FftwFree>;

template <typename T>
FftwBuffer<T> fftw_buffer(std::size_t n) {
  auto* p = static_cast<T*>(fftw_malloc(sizeof(T) * n));
  if (p == nullptr) throw std::bad_alloc();
  return FftwBuffer<T>(p);
}

enum class PlanKind { r2c, c2r, c2c_forward, c2c_backward };

struct PlanCache {
  std::mutex mutex;
  std::map<std::tuple<PlanKind, std::size_t, std::size_t>, fftw_plan> plans;

  ~PlanCache() {
    for (auto& [key, plan] : plans) fftw_destroy_plan(plan);
  }

  fftw_plan get(PlanKind kind, Dims d) {
    std::lock_guard lock(mutex);
    const auto key = std::make_tuple(kind, d.rows, d.cols);
    if (auto it = plans.find(key); it != plans.end()) return it->second;
    const int R = static_cast<int>(d.rows), C = static_cast<int>(d.cols);
    const std::size_t half = d.rows * (d.cols / 2 + 1);
    fftw_plan plan = nullptr;
    switch (kind) {
      case PlanKind::r2c: {
        auto in = fftw_buffer<double>(d.size());
        auto out = fftw_buffer<fftw_complex>(half);
        plan = fftw_plan_dft_r2c_2d(R, C, in.get(), out.get(), FFTW_ESTIMATE | FFTW_PRESERVE_INPUT);
        break;
      }
      case PlanKind::c2r: {
        auto in = fftw_buffer<fftw_complex>(half);
        auto out = fftw_buffer<double>(d.size());
        plan = fftw_plan_dft_c2r_2d(R, C, in.get(), out.get(), FFTW_ESTIMATE);
        break;
      }
      case PlanKind::c2c_forward:
      case PlanKind::c2c_backward: {
        auto in = fftw_buffer<fftw_complex>(d.size());
        auto out = fftw_buffer<fftw_complex>(d.size());
        plan = fftw_plan_dft_2d(R, C, in.get(), out.get(),
                                kind == PlanKind::c2c_forward ? FFTW_FORWARD : FFTW_BACKWARD,
                                FFTW_ESTIMATE);
        break;
      }
    }
    if (plan == nullptr) throw Error("FFTW failed to create a plan for " + to_string(d));
    plans.emplace(key, plan);
    return plan;
  }
};

inline PlanCache& plan_cache() {
  static PlanCache cache;
  return cache;
}

}  // namespace detail

/// Non-redundant half of the spectrum of a real grid: rows x (cols/2 + 1).
struct HalfSpectrum {
  Dims real_dims;
  ComplexGrid coeffs;
};

inline Dims half_dims(Dims real) { return {real.rows, real.cols / 2 + 1}; }

/// Unnormalized forward transform of a real grid, non-redundant half only.
inline HalfSpectrum rfft2(const RealGrid& g) {
  const Dims d = g.dims();
  HalfSpectrum s{d, ComplexGrid(half_dims(d))};
  fftw_execute_dft_r2c(detail::plan_cache().get(detail::PlanKind::r2c, d), const_cast<double*>(g.data()),
                       reinterpret_cast<fftw_complex*>(s.coeffs.data()));
  return s;
}

/// Inverse of rfft2 including the 1/(rows*cols) factor. Consumes the spectrum.
inline RealGrid irfft2(HalfSpectrum&& s) {
  const Dims d = s.real_dims;
  require_same_dims(s.coeffs.dims(), half_dims(d), "irfft2");
  RealGrid g(d);
  fftw_execute_dft_c2r(detail::plan_cache().get(detail::PlanKind::c2r, d),
                       reinterpret_cast<fftw_complex*>(s.coeffs.data()), g.data());
  const double scale = 1.0 / static_cast<double>(d.size());
  for (double& v : g) v *= scale;
  return g;
}

inline RealGrid irfft2(const HalfSpectrum& s) { return irfft2(HalfSpectrum(s)); }

/// Full unnormalized forward DFT: G(k,l) = sum g(r,c) exp(-2 pi i (kr/R + lc/C)).
inline ComplexGrid dft2(const RealGrid& g) {
  require_nonempty(g.dims());
  require_finite(g, "dft2 input");
  const HalfSpectrum half = rfft2(g);
  const std::size_t R = g.rows(), C = g.cols(), H = C / 2 + 1;
  ComplexGrid out(g.dims());
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t c = 0; c < H; ++c) out(r, c) = half.coeffs(r, c);
    for (std::size_t c = H; c < C; ++c) out(r, c) = std::conj(half.coeffs((R - r) % R, C - c));
  }
  return out;
}

/// Inverse DFT with the 1/(rows*cols) factor. The input must be the spectrum of a
/// real grid; an imaginary residue above 1e-8 of the output's peak magnitude is
/// rejected. `discarded_imag` receives that relative residue when non-null.
inline RealGrid idft2(const ComplexGrid& spectrum, double* discarded_imag = nullptr) {
  const Dims d = spectrum.dims();
  require_nonempty(d);
  require_finite(spectrum, "idft2 input");
  auto in = detail::fftw_buffer<fftw_complex>(d.size());
  auto out = detail::fftw_buffer<fftw_complex>(d.size());
  std::memcpy(in.get(), spectrum.data(), sizeof(fftw_complex) * d.size());
  fftw_execute_dft(detail::plan_cache().get(detail::PlanKind::c2c_backward, d), in.get(),
                   out.get());
  const double scale = 1.0 / static_cast<double>(d.size());
  RealGrid g(d);
  double max_re = 0.0, max_im = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    g[i] = out[i][0] * scale;
    max_re = std::max(max_re, std::abs(g[i]));
    max_im = std::max(max_im, std::abs(out[i][1] * scale));
  }
  const double rel = max_re > 0.0 ? max_im / max_re : max_im;
  if (discarded_imag != nullptr) *discarded_imag = rel;
  if (rel > 1e-8)
    throw InvalidArgument("idft2: spectrum is not conjugate-symmetric (imaginary residue " +
                          std::to_string(rel) + " relative)");
  return g;
}

}  // namespace lensless

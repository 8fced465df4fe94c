#pragma once

// Model-based ADMM for  min_{x >= 0} 1/2 ||b - C H x||^2 + tau ||Psi x||_1
// with the splitting v = Hx, u = Psi x, w = x.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "lensless/fft.hpp"
#include "lensless/forward_model.hpp"
#include "lensless/grid.hpp"

namespace lensless {

/// Two gradient channels of the TV transform.
struct GradField {
  RealGrid gx;  // along columns
  RealGrid gy;  // along rows

  static GradField zeros(Dims d) { return {RealGrid(d, 0.0), RealGrid(d, 0.0)}; }
  bool operator==(const GradField&) const = default;
};

inline double inner_product(const GradField& a, const GradField& b) {
  return inner_product(a.gx, b.gx) + inner_product(a.gy, b.gy);
}

/// Circular forward differences: gx = x[i, j+1] - x[i, j], gy = x[i+1, j] - x[i, j].
inline GradField psi_forward(const RealGrid& x) {
  const std::size_t R = x.rows(), C = x.cols();
  GradField g{RealGrid(x.dims()), RealGrid(x.dims())};
  for (std::size_t r = 0; r < R; ++r) {
    const double* row = &x(r, 0);
    const double* next = &x(r + 1 < R ? r + 1 : 0, 0);
    double* gx = &g.gx(r, 0);
    double* gy = &g.gy(r, 0);
    for (std::size_t c = 0; c + 1 < C; ++c) gx[c] = row[c + 1] - row[c];
    gx[C - 1] = row[0] - row[C - 1];
    for (std::size_t c = 0; c < C; ++c) gy[c] = next[c] - row[c];
  }
  return g;
}

/// Exact adjoint of psi_forward (negative circular divergence).
inline RealGrid psi_adjoint(const GradField& g) {
  require_same_dims(g.gx.dims(), g.gy.dims(), "psi_adjoint");
  const std::size_t R = g.gx.rows(), C = g.gx.cols();
  RealGrid out(g.gx.dims());
  for (std::size_t r = 0; r < R; ++r) {
    const double* gx = &g.gx(r, 0);
    const double* gy = &g.gy(r, 0);
    const double* gy_prev = &g.gy(r > 0 ? r - 1 : R - 1, 0);
    double* o = &out(r, 0);
    o[0] = gx[C - 1] - gx[0];
    for (std::size_t c = 1; c < C; ++c) o[c] = gx[c - 1] - gx[c];
    for (std::size_t c = 0; c < C; ++c) o[c] += gy_prev[c] - gy[c];
  }
  return out;
}

/// |D_x(k)|^2 + |D_y(k)|^2 over the half spectrum of a `real`-sized grid.
inline RealGrid tv_power_spectrum(Dims real) {
  const Dims h = half_dims(real);
  RealGrid out(h);
  constexpr double two_pi = 6.283185307179586;
  for (std::size_t r = 0; r < h.rows; ++r)
    for (std::size_t c = 0; c < h.cols; ++c)
      out(r, c) = (2.0 - 2.0 * std::cos(two_pi * c / real.cols)) +
                  (2.0 - 2.0 * std::cos(two_pi * r / real.rows));
  return out;
}

enum class ShrinkMode { isotropic, anisotropic };

/// Proximal map of kappa * ||.||_1 on gradient fields. Isotropic mode shrinks the
/// per-pixel vector (gx, gy) by its magnitude; anisotropic shrinks each channel.
inline GradField soft_threshold_vec(const GradField& z, double kappa,
                                    ShrinkMode mode = ShrinkMode::isotropic) {
  if (!(kappa >= 0.0)) throw InvalidArgument("soft_threshold_vec: kappa must be nonnegative");
  GradField out = GradField::zeros(z.gx.dims());
  for (std::size_t i = 0; i < z.gx.size(); ++i) {
    const double a = z.gx[i], b = z.gy[i];
    if (mode == ShrinkMode::isotropic) {
      const double m = std::sqrt(a * a + b * b);
      if (m > kappa) {
        const double f = (m - kappa) / m;
        out.gx[i] = a * f;
        out.gy[i] = b * f;
      }
    } else {
      out.gx[i] = std::copysign(std::max(std::abs(a) - kappa, 0.0), a);
      out.gy[i] = std::copysign(std::max(std::abs(b) - kappa, 0.0), b);
    }
  }
  return out;
}

struct AdmmParams {
  double mu1 = 1e-4;
  double mu2 = 1e-4;
  double mu3 = 1e-4;
  double tau = 2e-3;
  int iters = 100;
  double tol = 1e-5;  // 0 disables early stopping
  bool autotune = false;
  ShrinkMode shrink = ShrinkMode::isotropic;

  void validate() const {
    if (!(mu1 > 0 && mu2 > 0 && mu3 > 0)) throw InvalidArgument("ADMM penalties must be positive");
    if (!(tau > 0)) throw InvalidArgument("tau must be positive");
    if (iters < 0) throw InvalidArgument("iters must be nonnegative");
    if (!(tol >= 0)) throw InvalidArgument("tol must be nonnegative");
  }
};

/// Fourier-diagonal pieces shared by every iteration. Spectral diagonals are held
/// over the non-redundant half spectrum of the padded grid.
struct PrecomputedOperators {
  ConvolutionOperator H;
  RealGrid HtH_diag;      // |H(k)|^2
  RealGrid PsiTPsi_diag;  // |Dx(k)|^2 + |Dy(k)|^2
  RealGrid CtC_diag;      // 1 on the sensor block, 0 elsewhere (padded spatial grid)

  explicit PrecomputedOperators(const Psf& psf)
      : H(psf),
        HtH_diag(H.power_spectrum()),
        PsiTPsi_diag(tv_power_spectrum(H.padded_dims())),
        CtC_diag(pad_center(RealGrid(psf.sensor_dims(), 1.0), H.padded_dims())) {}

  Dims sensor_dims() const { return H.sensor_dims(); }
  Dims padded_dims() const { return H.padded_dims(); }

  /// Spectral denominator of the x-update, mu1 |H|^2 + mu2 * reg + mu3, where
  /// `reg` is the TV spectrum or 1 for an identity regularizer.
  RealGrid x_denominator(double mu1, double mu2, double mu3, bool tv = true) const {
    RealGrid d(HtH_diag.dims());
    for (std::size_t i = 0; i < d.size(); ++i)
      d[i] = mu1 * HtH_diag[i] + mu2 * (tv ? PsiTPsi_diag[i] : 1.0) + mu3;
    return d;
  }
};

/// Primal and dual variables for one color plane. `hx` caches H x for the current x.
struct AdmmState {
  RealGrid x, hx;
  GradField u;
  RealGrid v, w;
  RealGrid alpha1;
  GradField alpha2;
  RealGrid alpha3;

  static AdmmState zeros(Dims padded) {
    const RealGrid z(padded, 0.0);
    return {z, z, GradField::zeros(padded), z, z, z, GradField::zeros(padded), z};
  }

  static AdmmState from_estimate(const PrecomputedOperators& ops, const RealGrid& x0) {
    require_same_dims(x0.dims(), ops.padded_dims(), "initial estimate");
    AdmmState s = zeros(ops.padded_dims());
    s.x = x0;
    s.hx = ops.H.apply(x0);
    return s;
  }

  bool operator==(const AdmmState&) const = default;
};

struct ResidualRecord {
  // primal: ||Hx - v||, ||Psi x - u||, ||x - w||
  double primal_v = 0, primal_u = 0, primal_w = 0;
  // dual: mu1 ||H dx||, mu2 ||Psi dx||, mu3 ||dx||
  double dual_v = 0, dual_u = 0, dual_w = 0;
  // primal residuals relative to max of the two sides' norms
  double rel_v = 0, rel_u = 0, rel_w = 0;
  double data_fidelity = 0;  // 1/2 ||b - C v||^2
  double regularizer = 0;    // tau ||u||_1
  // The same two terms evaluated at x: 1/2 ||b - C H x||^2 and tau ||Psi x||_1.
  double data_fidelity_x = 0, regularizer_x = 0;
  double mu1 = 0, mu2 = 0, mu3 = 0;

  // Split form. Starts near zero because v begins close to b, and grows while the
  // constraints tighten, so it is not a convergence measure.
  double objective() const { return data_fidelity + regularizer; }
  double objective_at_x() const { return data_fidelity_x + regularizer_x; }
};

using ResidualTrace = std::vector<ResidualRecord>;

/// Cᵀb for one plane.
inline RealGrid embed_measurement(const PrecomputedOperators& ops, const RealGrid& b_plane) {
  require_same_dims(b_plane.dims(), ops.sensor_dims(), "measurement plane");
  return pad_center(b_plane, ops.padded_dims());
}

namespace detail {

/// Everything a single update produces besides the new state; the unrolled
/// network's tape keeps a copy of this per layer.
struct StepIntermediates {
  GradField shrink_input;  // Psi x + alpha2 / mu2
  RealGrid x_denominator;  // half spectrum
};

inline void check_step(const RealGrid& g, const char* step) { require_finite(g, step); }

/// One ADMM iteration on a single plane. `b_padded` is Cᵀb. Returns the updated
/// state; fills `record` when given.
inline AdmmState admm_update(const AdmmState& s, double mu1, double mu2, double mu3, double tau,
                             ShrinkMode shrink, const PrecomputedOperators& ops,
                             const RealGrid& b_padded, StepIntermediates* record = nullptr) {
  const Dims P = ops.padded_dims();
  AdmmState n;

  // u: sparsifying soft-threshold
  GradField p = psi_forward(s.x);
  for (std::size_t i = 0; i < P.size(); ++i) {
    p.gx[i] += s.alpha2.gx[i] / mu2;
    p.gy[i] += s.alpha2.gy[i] / mu2;
  }
  n.u = soft_threshold_vec(p, tau / mu2, shrink);
  check_step(n.u.gx, "u-update");
  check_step(n.u.gy, "u-update");

  // v: least-squares update, (CᵀC + mu1 I) is diagonal
  n.v = RealGrid(P);
  for (std::size_t i = 0; i < P.size(); ++i)
    n.v[i] = (s.alpha1[i] + mu1 * s.hx[i] + b_padded[i]) / (ops.CtC_diag[i] + mu1);
  check_step(n.v, "v-update");

  // w: enforce non-negativity
  n.w = RealGrid(P);
  for (std::size_t i = 0; i < P.size(); ++i) n.w[i] = std::max(s.alpha3[i] / mu3 + s.x[i], 0.0);
  check_step(n.w, "w-update");

  // x: least-squares update, diagonal in the Fourier domain
  GradField tv_rhs = GradField::zeros(P);
  for (std::size_t i = 0; i < P.size(); ++i) {
    tv_rhs.gx[i] = mu2 * n.u.gx[i] - s.alpha2.gx[i];
    tv_rhs.gy[i] = mu2 * n.u.gy[i] - s.alpha2.gy[i];
  }
  RealGrid spatial = psi_adjoint(tv_rhs);
  RealGrid data(P);
  for (std::size_t i = 0; i < P.size(); ++i) {
    spatial[i] += mu3 * n.w[i] - s.alpha3[i];
    data[i] = mu1 * n.v[i] - s.alpha1[i];
  }
  HalfSpectrum rhs = rfft2(spatial);
  const HalfSpectrum data_hat = ops.H.multiply(rfft2(data), true);
  RealGrid denom = ops.x_denominator(mu1, mu2, mu3);
  for (std::size_t i = 0; i < rhs.coeffs.size(); ++i)
    rhs.coeffs[i] = (rhs.coeffs[i] + data_hat.coeffs[i]) / denom[i];
  n.x = irfft2(rhs);
  n.hx = irfft2(ops.H.multiply(std::move(rhs), false));
  check_step(n.x, "x-update");

  // dual ascent
  const GradField psi_x = psi_forward(n.x);
  n.alpha1 = RealGrid(P);
  n.alpha2 = GradField::zeros(P);
  n.alpha3 = RealGrid(P);
  for (std::size_t i = 0; i < P.size(); ++i) {
    n.alpha1[i] = s.alpha1[i] + mu1 * (n.hx[i] - n.v[i]);
    n.alpha2.gx[i] = s.alpha2.gx[i] + mu2 * (psi_x.gx[i] - n.u.gx[i]);
    n.alpha2.gy[i] = s.alpha2.gy[i] + mu2 * (psi_x.gy[i] - n.u.gy[i]);
    n.alpha3[i] = s.alpha3[i] + mu3 * (n.x[i] - n.w[i]);
  }
  check_step(n.alpha1, "dual update for v");
  check_step(n.alpha2.gx, "dual update for u");
  check_step(n.alpha2.gy, "dual update for u");
  check_step(n.alpha3, "dual update for w");

  if (record != nullptr) {
    record->shrink_input = std::move(p);
    record->x_denominator = std::move(denom);
  }
  return n;
}

}  // namespace detail

/// One full ADMM iteration for a single color plane.
inline AdmmState admm_step(const AdmmState& state, const AdmmParams& params,
                           const PrecomputedOperators& ops, const RealGrid& b_plane) {
  params.validate();
  return detail::admm_update(state, params.mu1, params.mu2, params.mu3, params.tau, params.shrink,
                             ops, embed_measurement(ops, b_plane));
}

/// Residual balancing: a primal residual more than 10x its dual residual doubles
/// the matching penalty, the reverse halves it. Multipliers are kept unscaled, so
/// doubling mu halves the scaled dual alpha/mu.
inline AdmmParams autotune_penalties(const ResidualRecord& r, const AdmmParams& params) {
  constexpr double ratio = 10.0, factor = 2.0;
  auto balance = [&](double mu, double primal, double dual) {
    if (primal > ratio * dual) return mu * factor;
    if (dual > ratio * primal) return mu / factor;
    return mu;
  };
  AdmmParams out = params;
  out.mu1 = balance(params.mu1, r.primal_v, r.dual_v);
  out.mu2 = balance(params.mu2, r.primal_u, r.dual_u);
  out.mu3 = balance(params.mu3, r.primal_w, r.dual_w);
  return out;
}

namespace detail {

struct ResidualSums {
  double pv = 0, pu = 0, pw = 0, dv = 0, du = 0, dw = 0;
  double hx = 0, v = 0, psix = 0, u = 0, x = 0, w = 0;
  double fidelity = 0, l1 = 0, fidelity_x = 0, l1_x = 0;
};

inline void accumulate_residuals(ResidualSums& acc, const AdmmState& prev, const AdmmState& s,
                                 const RealGrid& b_padded, const PrecomputedOperators& ops,
                                 const AdmmParams& p) {
  const GradField psi_x = psi_forward(s.x);
  const GradField psi_prev = psi_forward(prev.x);
  for (std::size_t i = 0; i < s.x.size(); ++i) {
    auto sq = [](double a) { return a * a; };
    acc.pv += sq(s.hx[i] - s.v[i]);
    acc.pu += sq(psi_x.gx[i] - s.u.gx[i]) + sq(psi_x.gy[i] - s.u.gy[i]);
    acc.pw += sq(s.x[i] - s.w[i]);
    acc.dv += sq(s.hx[i] - prev.hx[i]);
    acc.du += sq(psi_x.gx[i] - psi_prev.gx[i]) + sq(psi_x.gy[i] - psi_prev.gy[i]);
    acc.dw += sq(s.x[i] - prev.x[i]);
    acc.hx += sq(s.hx[i]);
    acc.v += sq(s.v[i]);
    acc.psix += sq(psi_x.gx[i]) + sq(psi_x.gy[i]);
    acc.u += sq(s.u.gx[i]) + sq(s.u.gy[i]);
    acc.x += sq(s.x[i]);
    acc.w += sq(s.w[i]);
    if (ops.CtC_diag[i] > 0) {
      acc.fidelity += 0.5 * sq(b_padded[i] - s.v[i]);
      acc.fidelity_x += 0.5 * sq(b_padded[i] - s.hx[i]);
    }
    if (p.shrink == ShrinkMode::isotropic) {
      acc.l1 += std::sqrt(sq(s.u.gx[i]) + sq(s.u.gy[i]));
      acc.l1_x += std::sqrt(sq(psi_x.gx[i]) + sq(psi_x.gy[i]));
    } else {
      acc.l1 += std::abs(s.u.gx[i]) + std::abs(s.u.gy[i]);
      acc.l1_x += std::abs(psi_x.gx[i]) + std::abs(psi_x.gy[i]);
    }
  }
}

inline ResidualRecord finish_residuals(const ResidualSums& a, const AdmmParams& p) {
  auto rel = [](double num, double x, double y) {
    const double den = std::max(std::sqrt(x), std::sqrt(y));
    return den > 0 ? std::sqrt(num) / den : std::sqrt(num);
  };
  ResidualRecord r;
  r.primal_v = std::sqrt(a.pv);
  r.primal_u = std::sqrt(a.pu);
  r.primal_w = std::sqrt(a.pw);
  r.dual_v = p.mu1 * std::sqrt(a.dv);
  r.dual_u = p.mu2 * std::sqrt(a.du);
  r.dual_w = p.mu3 * std::sqrt(a.dw);
  r.rel_v = rel(a.pv, a.hx, a.v);
  r.rel_u = rel(a.pu, a.psix, a.u);
  r.rel_w = rel(a.pw, a.x, a.w);
  r.data_fidelity = a.fidelity;
  r.regularizer = p.tau * a.l1;
  r.data_fidelity_x = a.fidelity_x;
  r.regularizer_x = p.tau * a.l1_x;
  r.mu1 = p.mu1;
  r.mu2 = p.mu2;
  r.mu3 = p.mu3;
  return r;
}

}  // namespace detail

struct AdmmResult {
  Scene scene;  // final w, or the initialization when no iteration ran
  ResidualTrace trace;
  std::array<AdmmState, kChannels> states;
};

/// Runs ADMM on all three planes in lockstep with shared penalties. Residuals in
/// the trace aggregate the planes. Stops after `iters` iterations, or earlier once
/// every relative primal residual is below `tol` (tol > 0).
inline AdmmResult admm_solve(const PrecomputedOperators& ops, const Measurement& b,
                             AdmmParams params, const std::optional<Scene>& x0 = std::nullopt) {
  params.validate();
  const Dims P = ops.padded_dims();
  AdmmResult result;
  std::array<RealGrid, kChannels> b_padded;
  for (std::size_t c = 0; c < kChannels; ++c) {
    b_padded[c] = embed_measurement(ops, b[c]);
    if (x0) {
      result.states[c] = AdmmState::from_estimate(ops, (*x0)[c]);
      result.scene[c] = (*x0)[c];
    } else {
      result.states[c] = AdmmState::zeros(P);
      result.scene[c] = RealGrid(P, 0.0);
    }
  }
  for (int k = 0; k < params.iters; ++k) {
    detail::ResidualSums sums;
    for (std::size_t c = 0; c < kChannels; ++c) {
      AdmmState next = detail::admm_update(result.states[c], params.mu1, params.mu2, params.mu3,
                                           params.tau, params.shrink, ops, b_padded[c]);
      detail::accumulate_residuals(sums, result.states[c], next, b_padded[c], ops, params);
      result.states[c] = std::move(next);
    }
    const ResidualRecord rec = detail::finish_residuals(sums, params);
    result.trace.push_back(rec);
    for (std::size_t c = 0; c < kChannels; ++c) result.scene[c] = result.states[c].w;
    if (params.tol > 0 && rec.rel_v < params.tol && rec.rel_u < params.tol && rec.rel_w < params.tol)
      break;
    if (params.autotune) params = autotune_penalties(rec, params);
  }
  return result;
}

inline AdmmResult admm_solve(const Psf& psf, const Measurement& b, const AdmmParams& params,
                             const std::optional<Scene>& x0 = std::nullopt) {
  return admm_solve(PrecomputedOperators(psf), b, params, x0);
}

}  // namespace lensless

#pragma once

// Unrolled ADMM networks with per-layer learnable penalties and threshold.
//
//   leadmm:       every layer is one classic ADMM iteration with its own
//                 (mu1, mu2, mu3, tau); the u-update threshold is tau/mu2.
//   leadmm_star:  the TV proximal step is replaced by u = N(x) for a learned
//                 transform N, alpha2 is dropped, and the x-update uses mu2 I in
//                 place of mu2 PsiᵀPsi.
//
// Parameters enter as exp(log_value). leadmm_backward propagates exact adjoints
// through every recorded layer; kinks use subgradient 0 (dead zone of the
// shrinkage, w = 0 branch of the non-negativity projection).

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "lensless/admm.hpp"
#include "lensless/transform.hpp"

namespace lensless {

enum class Variant { leadmm, leadmm_star };

inline std::string to_string(Variant v) { return v == Variant::leadmm ? "leadmm" : "leadmm_star"; }

inline Variant parse_variant(const std::string& s) {
  if (s == "leadmm") return Variant::leadmm;
  if (s == "leadmm_star" || s == "leadmm-star") return Variant::leadmm_star;
  throw InvalidArgument("unknown variant '" + s + "'");
}

struct LayerParams {
  double log_mu1 = 0, log_mu2 = 0, log_mu3 = 0, log_tau = 0;

  double mu1() const { return std::exp(log_mu1); }
  double mu2() const { return std::exp(log_mu2); }
  double mu3() const { return std::exp(log_mu3); }
  double tau() const { return std::exp(log_tau); }
  bool operator==(const LayerParams&) const = default;
};

struct LeAdmmTheta {
  std::vector<LayerParams> layers;

  std::size_t depth() const { return layers.size(); }

  /// Every layer at the classic solver's penalties.
  static LeAdmmTheta from_classic(const AdmmParams& p, std::size_t depth = 5) {
    if (depth == 0) throw InvalidArgument("unrolled depth must be at least 1");
    const LayerParams l{std::log(p.mu1), std::log(p.mu2), std::log(p.mu3), std::log(p.tau)};
    return {std::vector<LayerParams>(depth, l)};
  }

  void validate() const {
    if (layers.empty()) throw InvalidArgument("unrolled depth must be at least 1");
    for (const auto& l : layers)
      if (!std::isfinite(l.log_mu1) || !std::isfinite(l.log_mu2) || !std::isfinite(l.log_mu3) ||
          !std::isfinite(l.log_tau))
        throw InvalidArgument("non-finite unrolled parameter");
  }

  bool operator==(const LeAdmmTheta&) const = default;
};

/// Flat parameter vector: log_mu1[K], log_mu2[K], log_mu3[K], log_tau[K], then
/// the transform parameters for the star variant.
struct NetworkParams {
  Variant variant = Variant::leadmm;
  LeAdmmTheta theta;
  LearnedTransform transform = LearnedTransform::identity();

  std::vector<double> flatten() const {
    const std::size_t K = theta.depth();
    std::vector<double> p(4 * K);
    for (std::size_t k = 0; k < K; ++k) {
      p[k] = theta.layers[k].log_mu1;
      p[K + k] = theta.layers[k].log_mu2;
      p[2 * K + k] = theta.layers[k].log_mu3;
      p[3 * K + k] = theta.layers[k].log_tau;
    }
    if (variant == Variant::leadmm_star) {
      const auto t = transform.flatten();
      p.insert(p.end(), t.begin(), t.end());
    }
    return p;
  }

  void assign(std::span<const double> p) {
    const std::size_t K = theta.depth();
    const std::size_t expected =
        4 * K + (variant == Variant::leadmm_star ? LearnedTransform::parameter_count : 0);
    if (p.size() != expected)
      throw DimensionError("parameter vector has " + std::to_string(p.size()) + " entries, expected " +
                           std::to_string(expected));
    for (std::size_t k = 0; k < K; ++k)
      theta.layers[k] = {p[k], p[K + k], p[2 * K + k], p[3 * K + k]};
    if (variant == Variant::leadmm_star) transform.assign(p.subspan(4 * K));
  }

  std::vector<std::string> names() const {
    const std::size_t K = theta.depth();
    std::vector<std::string> n;
    for (const char* base : {"log_mu1", "log_mu2", "log_mu3", "log_tau"})
      for (std::size_t k = 0; k < K; ++k) n.push_back(std::string(base) + "[" + std::to_string(k) + "]");
    if (variant == Variant::leadmm_star) {
      for (std::size_t i = 0; i < LearnedTransform::hidden * LearnedTransform::taps; ++i)
        n.push_back("conv_in[" + std::to_string(i) + "]");
      for (std::size_t i = 0; i < LearnedTransform::hidden; ++i)
        n.push_back("bias_in[" + std::to_string(i) + "]");
      for (std::size_t i = 0; i < LearnedTransform::hidden * LearnedTransform::taps; ++i)
        n.push_back("conv_out[" + std::to_string(i) + "]");
      n.push_back("bias_out");
    }
    return n;
  }

  bool operator==(const NetworkParams&) const = default;
};

/// dLoss/d(parameter), shaped like the parameters.
struct ThetaGradients {
  std::vector<LayerParams> layers;  // gradients with respect to the log-parameters
  std::optional<LearnedTransform> transform;

  std::vector<double> flatten() const {
    NetworkParams shape{transform ? Variant::leadmm_star : Variant::leadmm, {layers},
                        transform.value_or(LearnedTransform::identity())};
    return shape.flatten();
  }
};

// The layer's own u, v, w live in the next layer's input state (or the plane's
// output state for the last layer).
struct LayerTape {
  AdmmState input;
  GradField shrink_input;  // leadmm: Psi x + alpha2/mu2
  RealGrid learned_u;      // leadmm_star: N(x)
  TransformCache transform_cache;
  RealGrid x_denominator;  // half spectrum
};

struct PlaneTape {
  RealGrid b_padded;
  std::vector<LayerTape> layers;
  AdmmState output;
};

/// Forward intermediates of one pass, sufficient for exact reverse-mode adjoints.
struct Tape {
  NetworkParams params;
  std::array<PlaneTape, kChannels> planes;
  bool recorded = false;
};

struct UnrolledOutput {
  Scene scene;                   // w after the last layer
  std::vector<Scene> snapshots;  // x after each layer
  Tape tape;
};

namespace detail {

/// One Le-ADMM* layer on a single plane.
inline AdmmState star_update(const AdmmState& s, const LayerParams& lp, const LearnedTransform& t,
                             const PrecomputedOperators& ops, const RealGrid& b_padded,
                             LayerTape* rec) {
  const double mu1 = lp.mu1(), mu2 = lp.mu2(), mu3 = lp.mu3();
  const Dims P = ops.padded_dims();
  AdmmState n;
  n.u = GradField::zeros(P);
  n.alpha2 = GradField::zeros(P);

  TransformCache cache;
  RealGrid u = apply_transform(t, s.x, rec ? &cache : nullptr);
  require_finite(u, "network regularizer");

  n.v = RealGrid(P);
  for (std::size_t i = 0; i < P.size(); ++i)
    n.v[i] = (s.alpha1[i] + mu1 * s.hx[i] + b_padded[i]) / (ops.CtC_diag[i] + mu1);
  require_finite(n.v, "v-update");

  n.w = RealGrid(P);
  for (std::size_t i = 0; i < P.size(); ++i) n.w[i] = std::max(s.alpha3[i] / mu3 + s.x[i], 0.0);
  require_finite(n.w, "w-update");

  RealGrid spatial(P), data(P);
  for (std::size_t i = 0; i < P.size(); ++i) {
    spatial[i] = mu3 * n.w[i] - s.alpha3[i] + mu2 * u[i];
    data[i] = mu1 * n.v[i] - s.alpha1[i];
  }
  HalfSpectrum rhs = rfft2(spatial);
  const HalfSpectrum data_hat = ops.H.multiply(rfft2(data), true);
  RealGrid denom = ops.x_denominator(mu1, mu2, mu3, /*tv=*/false);
  for (std::size_t i = 0; i < rhs.coeffs.size(); ++i)
    rhs.coeffs[i] = (rhs.coeffs[i] + data_hat.coeffs[i]) / denom[i];
  n.x = irfft2(rhs);
  n.hx = irfft2(ops.H.multiply(std::move(rhs), false));
  require_finite(n.x, "x-update");

  n.alpha1 = RealGrid(P);
  n.alpha3 = RealGrid(P);
  for (std::size_t i = 0; i < P.size(); ++i) {
    n.alpha1[i] = s.alpha1[i] + mu1 * (n.hx[i] - n.v[i]);
    n.alpha3[i] = s.alpha3[i] + mu3 * (n.x[i] - n.w[i]);
  }
  require_finite(n.alpha1, "dual update for v");
  require_finite(n.alpha3, "dual update for w");

  if (rec) {
    rec->learned_u = std::move(u);
    rec->transform_cache = std::move(cache);
    rec->x_denominator = std::move(denom);
  }
  return n;
}

inline AdmmState unrolled_layer(const NetworkParams& net, std::size_t k, const AdmmState& s,
                                const PrecomputedOperators& ops, const RealGrid& b_padded,
                                LayerTape* rec) {
  const LayerParams& lp = net.theta.layers[k];
  try {
    if (net.variant == Variant::leadmm_star)
      return star_update(s, lp, net.transform, ops, b_padded, rec);
    StepIntermediates inter;
    AdmmState n = admm_update(s, lp.mu1(), lp.mu2(), lp.mu3(), lp.tau(), ShrinkMode::isotropic,
                              ops, b_padded, rec ? &inter : nullptr);
    if (rec) {
      rec->shrink_input = std::move(inter.shrink_input);
      rec->x_denominator = std::move(inter.x_denominator);
    }
    return n;
  } catch (const NonFiniteError& e) {
    throw NonFiniteError("layer " + std::to_string(k + 1) + ": " + e.what());
  }
}

inline UnrolledOutput run_layers(const NetworkParams& net, const PrecomputedOperators& ops,
                                 const Measurement& b, bool record) {
  net.theta.validate();
  const std::size_t K = net.theta.depth();
  UnrolledOutput out;
  out.snapshots.resize(K);
  out.tape.params = net;
  out.tape.recorded = record;
  for (std::size_t c = 0; c < kChannels; ++c) {
    const RealGrid b_padded = embed_measurement(ops, b[c]);
    AdmmState s = AdmmState::zeros(ops.padded_dims());
    PlaneTape& pt = out.tape.planes[c];
    if (record) pt.layers.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
      if (record) {
        LayerTape& rec = pt.layers[k];
        rec.input = std::move(s);
        s = unrolled_layer(net, k, rec.input, ops, b_padded, &rec);
      } else {
        s = unrolled_layer(net, k, s, ops, b_padded, nullptr);
      }
      out.snapshots[k][c] = s.x;
    }
    out.scene[c] = s.w;
    if (record) {
      pt.b_padded = b_padded;
      pt.output = std::move(s);
    }
  }
  return out;
}

}  // namespace detail

/// Le-ADMM forward pass. With `record`, the returned tape supports leadmm_backward.
inline UnrolledOutput leadmm_forward(const LeAdmmTheta& theta, const PrecomputedOperators& ops,
                                     const Measurement& b, bool record = true) {
  return detail::run_layers({Variant::leadmm, theta, LearnedTransform::identity()}, ops, b,
                                  record);
}

/// Le-ADMM* forward pass; theta's log_tau entries are unused.
inline UnrolledOutput leadmm_star_forward(const LeAdmmTheta& theta, const LearnedTransform& transform,
                                          const PrecomputedOperators& ops, const Measurement& b,
                                          bool record = true) {
  return detail::run_layers({Variant::leadmm_star, theta, transform}, ops, b, record);
}

inline UnrolledOutput unrolled_forward(const NetworkParams& net, const PrecomputedOperators& ops,
                                       const Measurement& b, bool record = true) {
  return detail::run_layers(net, ops, b, record);
}

namespace detail {

struct StateAdjoint {
  RealGrid x, hx, alpha1, alpha3;
  GradField alpha2;

  static StateAdjoint zeros(Dims d) {
    const RealGrid z(d, 0.0);
    return {z, z, z, z, GradField::zeros(d)};
  }
};

struct LayerGrad {
  double mu1 = 0, mu2 = 0, mu3 = 0, tau = 0;  // with respect to the positive values
};

/// Reverse pass through one layer. `adj` holds adjoints of the layer outputs on
/// entry and adjoints of the layer inputs on exit. `grad_w` is an external adjoint
/// on this layer's w (nonzero only for the output layer).
inline void layer_backward(const NetworkParams& net, std::size_t k, const LayerTape& t,
                           const AdmmState& out, const PrecomputedOperators& ops,
                           StateAdjoint& adj, const RealGrid* grad_w, LayerGrad& g,
                           LearnedTransform* transform_grad) {
  const bool star = net.variant == Variant::leadmm_star;
  const LayerParams& lp = net.theta.layers[k];
  const double mu1 = lp.mu1(), mu2 = lp.mu2(), mu3 = lp.mu3(), tau = lp.tau();
  const AdmmState& in = t.input;
  const Dims P = ops.padded_dims();
  const std::size_t N = P.size();

  RealGrid bar_x_new = std::move(adj.x);
  RealGrid bar_hx_new = std::move(adj.hx);
  RealGrid bar_w = grad_w ? *grad_w : RealGrid(P, 0.0);
  RealGrid bar_v(P, 0.0);
  GradField bar_u = GradField::zeros(P);
  // adjoints of the incoming duals start from the identity term a' = a + ...
  RealGrid bar_a1 = std::move(adj.alpha1);
  RealGrid bar_a3 = std::move(adj.alpha3);
  GradField bar_a2 = std::move(adj.alpha2);
  RealGrid bar_u_star(P, 0.0);

  // dual ascent
  for (std::size_t i = 0; i < N; ++i) {
    const double A3 = bar_a3[i], A1 = bar_a1[i];
    bar_x_new[i] += mu3 * A3;
    bar_w[i] -= mu3 * A3;
    g.mu3 += A3 * (out.x[i] - out.w[i]);
    bar_hx_new[i] += mu1 * A1;
    bar_v[i] -= mu1 * A1;
    g.mu1 += A1 * (out.hx[i] - out.v[i]);
  }
  if (!star) {
    const GradField psi_x = psi_forward(out.x);
    bar_x_new = bar_x_new + mu2 * psi_adjoint(bar_a2);
    for (std::size_t i = 0; i < N; ++i) {
      bar_u.gx[i] -= mu2 * bar_a2.gx[i];
      bar_u.gy[i] -= mu2 * bar_a2.gy[i];
      g.mu2 += bar_a2.gx[i] * (psi_x.gx[i] - out.u.gx[i]) + bar_a2.gy[i] * (psi_x.gy[i] - out.u.gy[i]);
    }
  }

  // x-update: x' = A r with A = F^-1 diag(1/D) F symmetric; hx' = H x'
  HalfSpectrum z = rfft2(bar_x_new);
  const HalfSpectrum zh = ops.H.multiply(rfft2(bar_hx_new), true);
  for (std::size_t i = 0; i < z.coeffs.size(); ++i)
    z.coeffs[i] = (z.coeffs[i] + zh.coeffs[i]) / t.x_denominator[i];
  const RealGrid bar_r = irfft2(z);
  const RealGrid h_bar_r = irfft2(ops.H.multiply(std::move(z), false));
  // dD/dmu terms
  g.mu1 -= inner_product(h_bar_r, out.hx);
  g.mu3 -= inner_product(bar_r, out.x);
  if (star) {
    g.mu2 -= inner_product(bar_r, out.x);
  } else {
    g.mu2 -= inner_product(psi_forward(bar_r), psi_forward(out.x));
  }

  // r = (mu3 w - a3) + [Psiᵀ(mu2 u - a2) | mu2 u] + Hᵀ(mu1 v - a1)
  for (std::size_t i = 0; i < N; ++i) {
    bar_v[i] += mu1 * h_bar_r[i];
    bar_a1[i] -= h_bar_r[i];
    g.mu1 += h_bar_r[i] * out.v[i];
    bar_w[i] += mu3 * bar_r[i];
    bar_a3[i] -= bar_r[i];
    g.mu3 += bar_r[i] * out.w[i];
  }
  if (star) {
    for (std::size_t i = 0; i < N; ++i) {
      bar_u_star[i] += mu2 * bar_r[i];
      g.mu2 += bar_r[i] * t.learned_u[i];
    }
  } else {
    const GradField G = psi_forward(bar_r);
    for (std::size_t i = 0; i < N; ++i) {
      bar_u.gx[i] += mu2 * G.gx[i];
      bar_u.gy[i] += mu2 * G.gy[i];
      bar_a2.gx[i] -= G.gx[i];
      bar_a2.gy[i] -= G.gy[i];
      g.mu2 += G.gx[i] * out.u.gx[i] + G.gy[i] * out.u.gy[i];
    }
  }

  // Adjoints of the layer inputs.
  RealGrid bar_x(P, 0.0), bar_hx(P, 0.0);

  // w = max(a3/mu3 + x, 0)
  for (std::size_t i = 0; i < N; ++i) {
    if (out.w[i] <= 0.0) continue;
    const double zb = bar_w[i];
    bar_a3[i] += zb / mu3;
    bar_x[i] += zb;
    g.mu3 -= zb * in.alpha3[i] / (mu3 * mu3);
  }

  // v = (a1 + mu1 hx + Cᵀb) / (CᵀC + mu1)
  for (std::size_t i = 0; i < N; ++i) {
    const double nb = bar_v[i] / (ops.CtC_diag[i] + mu1);
    bar_a1[i] += nb;
    bar_hx[i] += mu1 * nb;
    g.mu1 += nb * (in.hx[i] - out.v[i]);
  }

  // u
  if (star) {
    const RealGrid gx = transform_backward(net.transform, in.x, t.transform_cache, bar_u_star,
                                           *transform_grad);
    for (std::size_t i = 0; i < N; ++i) bar_x[i] += gx[i];
  } else {
    const double kappa = tau / mu2;
    GradField bar_p = GradField::zeros(P);
    double bar_kappa = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      const double px = t.shrink_input.gx[i], py = t.shrink_input.gy[i];
      const double m = std::sqrt(px * px + py * py);
      if (m <= kappa) continue;
      const double ux = bar_u.gx[i], uy = bar_u.gy[i];
      const double dot = px * ux + py * uy;
      const double f = 1.0 - kappa / m, c3 = kappa / (m * m * m);
      bar_p.gx[i] = f * ux + c3 * dot * px;
      bar_p.gy[i] = f * uy + c3 * dot * py;
      bar_kappa -= dot / m;
    }
    g.tau += bar_kappa / mu2;
    g.mu2 -= bar_kappa * tau / (mu2 * mu2);
    // p = Psi x + a2/mu2
    bar_x = bar_x + psi_adjoint(bar_p);
    for (std::size_t i = 0; i < N; ++i) {
      bar_a2.gx[i] += bar_p.gx[i] / mu2;
      bar_a2.gy[i] += bar_p.gy[i] / mu2;
      g.mu2 -= (bar_p.gx[i] * in.alpha2.gx[i] + bar_p.gy[i] * in.alpha2.gy[i]) / (mu2 * mu2);
    }
  }

  adj.x = std::move(bar_x);
  adj.hx = std::move(bar_hx);
  adj.alpha1 = std::move(bar_a1);
  adj.alpha2 = std::move(bar_a2);
  adj.alpha3 = std::move(bar_a3);
}

}  // namespace detail

/// Exact reverse-mode gradients of a scalar loss with respect to every network
/// parameter, given dLoss/dScene for the forward output recorded in `tape`.
inline ThetaGradients leadmm_backward(const Tape& tape, const PrecomputedOperators& ops,
                                      const Scene& grad_scene) {
  if (!tape.recorded) throw InvalidArgument("leadmm_backward: tape was not recorded");
  const NetworkParams& net = tape.params;
  const std::size_t K = net.theta.depth();
  const bool star = net.variant == Variant::leadmm_star;
  std::vector<detail::LayerGrad> lg(K);
  LearnedTransform tgrad = LearnedTransform::identity();
  tgrad.residual = false;

  for (std::size_t c = 0; c < kChannels; ++c) {
    const PlaneTape& pt = tape.planes[c];
    if (pt.layers.size() != K) throw InvalidArgument("leadmm_backward: tape/forward mismatch");
    require_same_dims(grad_scene[c].dims(), ops.padded_dims(), "upstream gradient");
    auto adj = detail::StateAdjoint::zeros(ops.padded_dims());
    for (std::size_t kk = K; kk-- > 0;) {
      const AdmmState& out = kk + 1 < K ? pt.layers[kk + 1].input : pt.output;
      detail::layer_backward(net, kk, pt.layers[kk], out, ops, adj,
                             kk + 1 == K ? &grad_scene[c] : nullptr, lg[kk], &tgrad);
    }
  }

  ThetaGradients g;
  g.layers.resize(K);
  for (std::size_t k = 0; k < K; ++k) {
    const LayerParams& lp = net.theta.layers[k];
    g.layers[k] = {lg[k].mu1 * lp.mu1(), lg[k].mu2 * lp.mu2(), lg[k].mu3 * lp.mu3(),
                   star ? 0.0 : lg[k].tau * lp.tau()};
    const auto& l = g.layers[k];
    if (!std::isfinite(l.log_mu1) || !std::isfinite(l.log_mu2) || !std::isfinite(l.log_mu3) ||
        !std::isfinite(l.log_tau))
      throw NonFiniteError("non-finite gradient at layer " + std::to_string(k + 1));
  }
  if (star) {
    tgrad.residual = true;
    for (double v : tgrad.flatten())
      if (!std::isfinite(v)) throw NonFiniteError("non-finite transform gradient");
    g.transform = tgrad;
  }
  return g;
}

}  // namespace lensless

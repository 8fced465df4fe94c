#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lensless/metrics.hpp"
#include "lensless/unrolled.hpp"

namespace lensless {

struct GradientCheckEntry {
  std::string name;
  double analytic = 0;
  double numeric = 0;
  double rel_error = 0;
  double step = 0;       // step actually used (may be nudged below the requested one)
  bool skipped = false;  // |analytic| below the significance floor
  bool passed = false;
};

struct GradientCheckReport {
  double loss = 0;
  double tolerance = 1e-4;
  std::vector<GradientCheckEntry> entries;

  std::size_t checked() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.skipped ? 0 : 1;
    return n;
  }
  bool passed() const {
    for (const auto& e : entries)
      if (!e.skipped && !e.passed) return false;
    return true;
  }
};

struct GradientCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  double skip_below = 1e-12;
  int max_nudges = 3;  // each nudge divides the step by 10
};

namespace detail {

// Hash of every kink branch taken in a forward pass (shrinkage active set and
// w > 0 set). Equal hashes on both sides of a probe mean no kink was crossed.
inline std::uint64_t branch_signature(const Tape& tape) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](bool bit) { h = (h ^ static_cast<std::uint64_t>(bit)) * 1099511628211ull; };
  for (const auto& plane : tape.planes)
    for (std::size_t k = 0; k < plane.layers.size(); ++k) {
      const auto& l = plane.layers[k];
      const AdmmState& after = k + 1 < plane.layers.size() ? plane.layers[k + 1].input : plane.output;
      for (double v : after.w) mix(v > 0.0);
      if (tape.params.variant == Variant::leadmm) {
        const double kappa = tape.params.theta.layers[k].tau() / tape.params.theta.layers[k].mu2();
        for (std::size_t i = 0; i < l.shrink_input.gx.size(); ++i) {
          const double px = l.shrink_input.gx[i], py = l.shrink_input.gy[i];
          mix(std::sqrt(px * px + py * py) > kappa);
        }
      }
    }
  return h;
}

struct ProbeResult {
  double loss;
  std::uint64_t signature;
};

inline ProbeResult probe(const NetworkParams& net, const PrecomputedOperators& ops,
                         const Measurement& b, const Planes& x_gt, Dims valid) {
  const UnrolledOutput out = unrolled_forward(net, ops, b, true);
  const double loss = loss_eval(out.scene, x_gt, valid, LossSchedule::mse_only(), 0).loss;
  return {loss, branch_signature(out.tape)};
}

}  // namespace detail

/// Compares leadmm_backward against central differences of the MSE loss for every
/// parameter. Probes that would straddle a kink get a smaller step.
inline GradientCheckReport gradient_check(const NetworkParams& net, const PrecomputedOperators& ops,
                                          const Measurement& b, const Planes& x_gt, Dims valid,
                                          const GradientCheckOptions& opt = {}) {
  if (!(opt.step > 0) || !std::isfinite(opt.step))
    throw InvalidArgument("gradient_check: step must be positive");
  const Dims S = ops.sensor_dims();
  if (S.rows > 32 || S.cols > 32)
    throw InvalidArgument("gradient_check: instance larger than 32x32 sensor");

  GradientCheckReport report;
  report.tolerance = opt.tolerance;
  const UnrolledOutput base = unrolled_forward(net, ops, b, true);
  const LossValue lv = loss_eval(base.scene, x_gt, valid, LossSchedule::mse_only(), 0);
  report.loss = lv.loss;
  const std::vector<double> analytic = leadmm_backward(base.tape, ops, lv.grad).flatten();
  const std::uint64_t base_sig = detail::branch_signature(base.tape);
  const std::vector<double> p0 = net.flatten();
  const std::vector<std::string> names = net.names();

  for (std::size_t i = 0; i < p0.size(); ++i) {
    GradientCheckEntry e;
    e.name = names[i];
    e.analytic = analytic[i];
    if (std::abs(e.analytic) < opt.skip_below) {
      e.skipped = true;
      e.passed = true;
      report.entries.push_back(e);
      continue;
    }
    double h = opt.step;
    for (int attempt = 0;; ++attempt) {
      NetworkParams plus = net, minus = net;
      std::vector<double> p = p0;
      p[i] = p0[i] + h;
      plus.assign(p);
      p[i] = p0[i] - h;
      minus.assign(p);
      const auto fp = detail::probe(plus, ops, b, x_gt, valid);
      const auto fm = detail::probe(minus, ops, b, x_gt, valid);
      e.numeric = (fp.loss - fm.loss) / (2 * h);
      e.step = h;
      const bool clean = fp.signature == base_sig && fm.signature == base_sig;
      if (clean || attempt >= opt.max_nudges) break;
      h /= 10;
    }
    e.rel_error = std::abs(e.analytic - e.numeric) / std::max(std::abs(e.analytic), std::abs(e.numeric));
    e.passed = e.rel_error < opt.tolerance;
    report.entries.push_back(e);
  }
  return report;
}

}  // namespace lensless

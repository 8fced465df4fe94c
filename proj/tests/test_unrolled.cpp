#include <gtest/gtest.h>

#include <random>

#include "lensless/dataset.hpp"
#include "lensless/gradcheck.hpp"
#include "lensless/training.hpp"
#include "lensless/unrolled.hpp"
#include "oracles.hpp"

using namespace lensless;

namespace {

Psf random_psf(Dims d, std::mt19937_64& rng) { return normalize_psf(oracle::random_grid(d, rng, 0.0, 1.0)); }

Scene random_scene(Dims padded, std::mt19937_64& rng) {
  Scene s;
  for (auto& p : s.planes) p = oracle::random_grid(padded, rng, 0.0, 1.0);
  return s;
}

Measurement random_measurement(Dims sensor, std::mt19937_64& rng) {
  Measurement b;
  for (auto& p : b.planes) p = oracle::random_grid(sensor, rng, 0.0, 1.0);
  return b;
}

// Distinct penalties per layer so a mix-up between layers shows.
LeAdmmTheta varied_theta(std::size_t K, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.7, 0.7);
  LeAdmmTheta t;
  for (std::size_t k = 0; k < K; ++k)
    t.layers.push_back({std::log(0.05) + u(rng), std::log(0.02) + u(rng), std::log(0.1) + u(rng),
                        std::log(0.01) + u(rng)});
  return t;
}

oracle::Transform to_oracle(const LearnedTransform& t) {
  return {{t.conv_in.begin(), t.conv_in.end()},
          {t.bias_in.begin(), t.bias_in.end()},
          {t.conv_out.begin(), t.conv_out.end()},
          t.bias_out};
}

struct Fixture {
  Dims sensor;
  Psf psf;
  PrecomputedOperators ops;
  Planes gt;
  Measurement b;
};

Fixture small_fixture(Dims sensor, std::uint64_t seed, bool delta = false) {
  const Psf psf = delta ? make_delta_psf(sensor) : make_synthetic_psf(sensor, seed);
  const Planes gt = procedural_image(sensor, seed + 1);
  const Measurement b = forward_measure(psf, embed_scene(gt, doubled(sensor)), {});
  return {sensor, psf, PrecomputedOperators(psf), gt, b};
}

}  // namespace

TEST(Variant, ParsesBothSpellings) {
  EXPECT_EQ(parse_variant("leadmm"), Variant::leadmm);
  EXPECT_EQ(parse_variant("leadmm-star"), Variant::leadmm_star);
  EXPECT_EQ(parse_variant("leadmm_star"), Variant::leadmm_star);
  EXPECT_THROW(parse_variant("fista"), InvalidArgument);
}

TEST(Theta, RejectsEmptyAndNonFinite) {
  EXPECT_THROW(LeAdmmTheta::from_classic({}, 0), InvalidArgument);
  LeAdmmTheta t = LeAdmmTheta::from_classic({}, 2);
  t.layers[1].log_tau = std::numeric_limits<double>::infinity();
  EXPECT_THROW(t.validate(), InvalidArgument);
}

TEST(Theta, FlattenAssignRoundTrip) {
  std::mt19937_64 rng(50);
  NetworkParams net{Variant::leadmm_star, varied_theta(4, rng), LearnedTransform::random(3, 0.2)};
  const auto flat = net.flatten();
  ASSERT_EQ(flat.size(), 16 + LearnedTransform::parameter_count);
  EXPECT_EQ(net.names().size(), flat.size());
  NetworkParams other{Variant::leadmm_star, LeAdmmTheta::from_classic({}, 4), LearnedTransform::identity()};
  other.assign(flat);
  EXPECT_EQ(other, net);
  EXPECT_THROW(other.assign(std::vector<double>(3)), DimensionError);
}

TEST(Transform, HasExpectedParameterCount) { EXPECT_EQ(LearnedTransform::parameter_count, 153u); }

TEST(Transform, IdentityMapsInputToItself) {
  std::mt19937_64 rng(51);
  const RealGrid x = oracle::random_grid({7, 9}, rng);
  EXPECT_EQ(apply_transform(LearnedTransform::identity(), x), x);
}

TEST(Transform, MatchesLoopOracle) {
  std::mt19937_64 rng(52);
  const LearnedTransform t = LearnedTransform::random(9, 0.5);
  const RealGrid x = oracle::random_grid({6, 5}, rng);
  EXPECT_LT(max_abs_diff(apply_transform(t, x), oracle::transform(to_oracle(t), x)), 1e-12);
}

TEST(Transform, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(53);
  const LearnedTransform t = LearnedTransform::random(10, 0.4);
  const RealGrid x = oracle::random_grid({5, 6}, rng), gy = oracle::random_grid({5, 6}, rng);
  TransformCache cache;
  apply_transform(t, x, &cache);
  LearnedTransform grad = LearnedTransform::identity();
  grad.residual = false;
  const RealGrid gx = transform_backward(t, x, cache, gy, grad);
  auto loss = [&](const LearnedTransform& tt, const RealGrid& xx) { return inner_product(apply_transform(tt, xx), gy); };
  const double h = 1e-6;
  const auto p = t.flatten(), g = grad.flatten();
  for (std::size_t i = 0; i < p.size(); i += 7) {
    LearnedTransform lo = t, hi = t;
    auto pl = p, ph = p;
    pl[i] -= h;
    ph[i] += h;
    lo.assign(pl);
    hi.assign(ph);
    const double fd = (loss(hi, x) - loss(lo, x)) / (2 * h);
    EXPECT_NEAR(g[i], fd, 1e-6 * std::max(1.0, std::abs(fd))) << i;
  }
  for (std::size_t i = 0; i < x.size(); i += 4) {
    RealGrid lo = x, hi = x;
    lo[i] -= h;
    hi[i] += h;
    const double fd = (loss(t, hi) - loss(t, lo)) / (2 * h);
    EXPECT_NEAR(gx[i], fd, 1e-6 * std::max(1.0, std::abs(fd))) << i;
  }
}

TEST(LeAdmm, ConstantParamsEqualBoundedAdmm) {
  std::mt19937_64 rng(54);
  const Dims s{12, 10};
  const Psf psf = make_synthetic_psf(s, 6);
  const PrecomputedOperators ops(psf);
  const Measurement b = forward_measure(psf, random_scene(doubled(s), rng), NoiseModel{NoiseModel::Kind::gaussian, 0.02, 1});
  AdmmParams p;
  p.iters = 5;
  p.tol = 0;
  const AdmmResult classic = admm_solve(ops, b, p);
  const UnrolledOutput net = leadmm_forward(LeAdmmTheta::from_classic(p, 5), ops, b);
  for (std::size_t c = 0; c < kChannels; ++c) EXPECT_LE(max_abs_diff(net.scene[c], classic.scene[c]), 1e-12);
}

TEST(LeAdmm, ZeroMeasurementGivesZero) {
  const PrecomputedOperators ops(make_synthetic_psf({8, 8}, 2));
  const UnrolledOutput out = leadmm_forward(LeAdmmTheta::from_classic({}, 3), ops, Measurement{Planes::filled({8, 8})});
  for (const auto& p : out.scene.planes)
    for (double v : p) EXPECT_EQ(v, 0.0);
}

TEST(LeAdmm, MatchesTranscriptionOracleLayerByLayer) {
  std::mt19937_64 rng(55);
  const Dims s{4, 4};
  const Psf psf = random_psf(s, rng);
  const PrecomputedOperators ops(psf);
  const RealGrid k = oracle::kernel(psf.grid, ops.padded_dims());
  const Measurement b = random_measurement(s, rng);
  const LeAdmmTheta theta = varied_theta(4, rng);
  const UnrolledOutput out = leadmm_forward(theta, ops, b);
  ASSERT_EQ(out.snapshots.size(), 4u);
  for (std::size_t c = 0; c < kChannels; ++c) {
    oracle::State ref = oracle::State::zeros(ops.padded_dims());
    for (std::size_t l = 0; l < 4; ++l) {
      const LayerParams& lp = theta.layers[l];
      ref = oracle::admm_iteration(ref, {lp.mu1(), lp.mu2(), lp.mu3(), lp.tau()}, k, b[c]);
      EXPECT_LT(max_abs_diff(out.snapshots[l][c], ref.x), 1e-10) << "layer " << l;
    }
    EXPECT_LT(max_abs_diff(out.scene[c], ref.w), 1e-10);
  }
}

TEST(LeAdmmStar, MatchesTranscriptionOracleLayerByLayer) {
  std::mt19937_64 rng(56);
  const Dims s{4, 4};
  const Psf psf = random_psf(s, rng);
  const PrecomputedOperators ops(psf);
  const RealGrid k = oracle::kernel(psf.grid, ops.padded_dims());
  const Measurement b = random_measurement(s, rng);
  const LeAdmmTheta theta = varied_theta(3, rng);
  const LearnedTransform t = LearnedTransform::random(4, 0.3);
  const UnrolledOutput out = leadmm_star_forward(theta, t, ops, b);
  for (std::size_t c = 0; c < kChannels; ++c) {
    oracle::State ref = oracle::State::zeros(ops.padded_dims());
    for (std::size_t l = 0; l < 3; ++l) {
      const LayerParams& lp = theta.layers[l];
      ref = oracle::star_iteration(ref, {lp.mu1(), lp.mu2(), lp.mu3(), lp.tau()}, to_oracle(t), k, b[c]);
      EXPECT_LT(max_abs_diff(out.snapshots[l][c], ref.x), 1e-10) << "layer " << l;
    }
    EXPECT_LT(max_abs_diff(out.scene[c], ref.w), 1e-10);
  }
}

TEST(LeAdmmStar, IdentityTransformUsesIdentityRegularizer) {
  std::mt19937_64 rng(57);
  const Dims s{6, 6};
  const Psf psf = random_psf(s, rng);
  const PrecomputedOperators ops(psf);
  const Measurement b = random_measurement(s, rng);
  const LeAdmmTheta theta = varied_theta(2, rng);
  const UnrolledOutput out = leadmm_star_forward(theta, LearnedTransform::identity(), ops, b);
  for (std::size_t c = 0; c < kChannels; ++c) {
    const PlaneTape& pt = out.tape.planes[c];
    for (std::size_t l = 0; l < 2; ++l) {
      const LayerParams& lp = theta.layers[l];
      EXPECT_EQ(pt.layers[l].learned_u, pt.layers[l].input.x);
      const RealGrid expected = ops.x_denominator(lp.mu1(), lp.mu2(), lp.mu3(), false);
      EXPECT_LT(max_abs_diff(pt.layers[l].x_denominator, expected), 1e-15);
    }
    for (double v : out.scene[c]) EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(LeAdmmStar, ZeroMeasurementGivesZero) {
  const PrecomputedOperators ops(make_synthetic_psf({8, 8}, 2));
  const UnrolledOutput out = leadmm_star_forward(LeAdmmTheta::from_classic({}, 3), LearnedTransform::identity(),
                                                 ops, Measurement{Planes::filled({8, 8})});
  for (const auto& p : out.scene.planes)
    for (double v : p) EXPECT_EQ(v, 0.0);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  std::mt19937_64 rng(58);
  const Dims s{6, 6};
  const PrecomputedOperators ops(random_psf(s, rng));
  const Measurement b = random_measurement(s, rng);
  for (Variant v : {Variant::leadmm, Variant::leadmm_star}) {
    const NetworkParams net{v, varied_theta(3, rng), LearnedTransform::random(2, 0.2)};
    const UnrolledOutput out = unrolled_forward(net, ops, b);
    const ThetaGradients g = leadmm_backward(out.tape, ops, Scene{Planes::filled(doubled(s))});
    for (double x : g.flatten()) EXPECT_EQ(x, 0.0);
  }
}

TEST(Backward, DeadZoneTauHasZeroGradient) {
  std::mt19937_64 rng(59);
  const Dims s{6, 6};
  const PrecomputedOperators ops(random_psf(s, rng));
  const Measurement b = random_measurement(s, rng);
  LeAdmmTheta theta = varied_theta(3, rng);
  theta.layers[1].log_tau = std::log(1e6);  // every |Psi x + alpha2/mu2| below tau/mu2
  const UnrolledOutput out = leadmm_forward(theta, ops, b);
  for (const auto& pt : out.tape.planes) {
    const GradField& z = pt.layers[1].shrink_input;
    const double kappa = theta.layers[1].tau() / theta.layers[1].mu2();
    for (std::size_t i = 0; i < z.gx.size(); ++i) ASSERT_LT(std::hypot(z.gx[i], z.gy[i]), kappa);
  }
  Scene up;
  for (auto& p : up.planes) p = oracle::random_grid(doubled(s), rng);
  const ThetaGradients g = leadmm_backward(out.tape, ops, up);
  EXPECT_EQ(g.layers[1].log_tau, 0.0);
  EXPECT_NE(g.layers[0].log_mu1, 0.0);
}

TEST(Backward, RequiresRecordedTape) {
  const PrecomputedOperators ops(make_delta_psf({4, 4}));
  const UnrolledOutput out = leadmm_forward(LeAdmmTheta::from_classic({}, 2), ops, Measurement{Planes::filled({4, 4}, 0.5)}, false);
  EXPECT_THROW(leadmm_backward(out.tape, ops, Scene{Planes::filled({8, 8})}), InvalidArgument);
}

TEST(GradientCheck, IdentityPsfPassesBothVariants) {
  const Fixture f = small_fixture({12, 12}, 70, true);
  const Dims valid = default_valid_region(f.sensor);
  const GradientCheckReport a =
      gradient_check(initial_network(Variant::leadmm, 3), f.ops, f.b, f.gt, valid);
  EXPECT_TRUE(a.passed());
  EXPECT_GT(a.checked(), 0u);
  NetworkParams star = initial_network(Variant::leadmm_star, 3);
  star.transform = LearnedTransform::random(5, 0.1);
  const GradientCheckReport b = gradient_check(star, f.ops, f.b, f.gt, valid);
  EXPECT_TRUE(b.passed());
  EXPECT_GT(b.checked(), 100u);
}

TEST(GradientCheck, SyntheticPsfSingleLayer) {
  const Fixture f = small_fixture({10, 10}, 71);
  std::mt19937_64 rng(72);
  const NetworkParams net{Variant::leadmm, varied_theta(1, rng), LearnedTransform::identity()};
  const GradientCheckReport r = gradient_check(net, f.ops, f.b, f.gt, default_valid_region(f.sensor));
  for (const auto& e : r.entries)
    EXPECT_TRUE(e.skipped || e.passed) << e.name << " analytic " << e.analytic << " numeric " << e.numeric;
}

TEST(GradientCheck, RejectsBadInput) {
  const Fixture f = small_fixture({8, 8}, 73, true);
  GradientCheckOptions opt;
  opt.step = 0;
  EXPECT_THROW(gradient_check(initial_network(Variant::leadmm, 1), f.ops, f.b, f.gt, {6, 6}, opt), InvalidArgument);
  const Fixture big = small_fixture({40, 40}, 74, true);
  EXPECT_THROW(gradient_check(initial_network(Variant::leadmm, 1), big.ops, big.b, big.gt, {32, 32}), InvalidArgument);
}

TEST(PerLayer, OneRowPerLayerAndZeroForTruth) {
  const Fixture f = small_fixture({12, 12}, 75);
  const UnrolledOutput one = leadmm_forward(LeAdmmTheta::from_classic({}, 1), f.ops, f.b, false);
  EXPECT_EQ(per_layer_metrics(one.snapshots, f.gt, f.ops.H, f.b, default_valid_region(f.sensor)).size(), 1u);
  const std::vector<Scene> truth{embed_scene(f.gt, doubled(f.sensor))};
  const auto rows = per_layer_metrics(truth, f.gt, f.ops.H, f.b, default_valid_region(f.sensor));
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].mse, 0.0);
  EXPECT_LT(rows[0].data_fidelity, 1e-12);
}

TEST(UnrolledProperties, ForwardIsDeterministic) {
  const Fixture f = small_fixture({16, 16}, 76);
  NetworkParams net = initial_network(Variant::leadmm_star, 4);
  net.transform = LearnedTransform::random(1, 0.1);
  const UnrolledOutput a = unrolled_forward(net, f.ops, f.b), b = unrolled_forward(net, f.ops, f.b);
  EXPECT_EQ(a.scene, b.scene);
  EXPECT_EQ(a.snapshots, b.snapshots);
}

TEST(UnrolledProperties, TapeReplayReproducesIntermediates) {
  const Fixture f = small_fixture({10, 10}, 77);
  for (Variant v : {Variant::leadmm, Variant::leadmm_star}) {
    NetworkParams net = initial_network(v, 3);
    net.transform = LearnedTransform::random(2, 0.1);
    const UnrolledOutput out = unrolled_forward(net, f.ops, f.b);
    for (const PlaneTape& pt : out.tape.planes) {
      for (std::size_t k = 0; k < pt.layers.size(); ++k) {
        LayerTape replay;
        const AdmmState next = detail::unrolled_layer(net, k, pt.layers[k].input, f.ops, pt.b_padded, &replay);
        const AdmmState& recorded = k + 1 < pt.layers.size() ? pt.layers[k + 1].input : pt.output;
        EXPECT_EQ(next, recorded);
        EXPECT_EQ(replay.x_denominator, pt.layers[k].x_denominator);
        EXPECT_EQ(replay.shrink_input, pt.layers[k].shrink_input);
        EXPECT_EQ(replay.learned_u, pt.layers[k].learned_u);
      }
    }
  }
}

TEST(UnrolledProperties, ExtremeLogParametersStayPositive) {
  for (double lv : {-700.0, -30.0, 0.0, 30.0, 700.0}) {
    const LayerParams lp{lv, lv, lv, lv};
    EXPECT_GT(lp.mu1(), 0.0);
    EXPECT_GT(lp.tau(), 0.0);
  }
}

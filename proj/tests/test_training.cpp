#include <gtest/gtest.h>

#include <random>

#include "lensless/adam.hpp"
#include "lensless/dataset.hpp"
#include "lensless/metrics.hpp"
#include "lensless/training.hpp"
#include "oracles.hpp"

using namespace lensless;

namespace {

Planes random_planes(Dims d, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  Planes p;
  for (auto& g : p.planes) g = oracle::random_grid(d, rng, lo, hi);
  return p;
}

struct SmallProblem {
  Psf psf;
  PrecomputedOperators ops;
  Dataset data;
};

SmallProblem small_problem(std::size_t count = 6, Dims sensor = {16, 16}, std::uint64_t seed = 3) {
  const Psf psf = make_synthetic_psf(sensor, 11);
  DatasetOptions opt;
  opt.sensor = sensor;
  opt.count = count;
  opt.split_fraction = 0.5;
  opt.seed = seed;
  opt.noise = {NoiseModel::Kind::gaussian, 0.02, 1};
  const auto sources = procedural_images(count, {2 * sensor.rows, 2 * sensor.cols}, 7);
  return {psf, PrecomputedOperators(psf), generate_synthetic_dataset(sources, psf, opt)};
}

TrainOptions quick_options(int epochs, double lr) {
  TrainOptions o;
  o.epochs = epochs;
  o.lr = lr;
  o.seed = 5;
  return o;
}

}  // namespace

TEST(Dataset, CountTwoSplitHalf) {
  const SmallProblem p = small_problem(2);
  EXPECT_EQ(p.data.train.size(), 1u);
  EXPECT_EQ(p.data.test.size(), 1u);
}

TEST(Dataset, SameSeedIsBitIdentical) {
  const SmallProblem a = small_problem(4), b = small_problem(4);
  ASSERT_EQ(a.data.train.size(), b.data.train.size());
  for (std::size_t i = 0; i < a.data.train.size(); ++i) {
    EXPECT_EQ(a.data.train[i].measurement, b.data.train[i].measurement);
    EXPECT_EQ(a.data.train[i].ground_truth, b.data.train[i].ground_truth);
  }
  const SmallProblem c = small_problem(4, {16, 16}, 4);
  bool differs = false;
  for (std::size_t i = 0; i < c.data.train.size(); ++i)
    differs = differs || c.data.train[i].measurement != a.data.train[i].measurement;
  EXPECT_TRUE(differs);
}

TEST(Dataset, GroundTruthInUnitRange) {
  const SmallProblem p = small_problem(4);
  for (const auto* set : {&p.data.train, &p.data.test})
    for (const auto& pair : *set) {
      EXPECT_EQ(pair.ground_truth.dims(), (Dims{16, 16}));
      for (const auto& g : pair.ground_truth.planes)
        for (double v : g) {
          EXPECT_GE(v, 0.0);
          EXPECT_LE(v, 1.0);
        }
    }
}

TEST(Dataset, RejectsBadOptions) {
  const Psf psf = make_synthetic_psf({8, 8}, 1);
  const auto sources = procedural_images(3, {8, 8}, 1);
  DatasetOptions opt;
  opt.sensor = {8, 8};
  opt.count = 5;
  EXPECT_THROW(generate_synthetic_dataset(sources, psf, opt), InvalidArgument);
  opt.allow_repeat = true;
  EXPECT_NO_THROW(generate_synthetic_dataset(sources, psf, opt));
  opt.split_fraction = 1.5;
  EXPECT_THROW(generate_synthetic_dataset(sources, psf, opt), InvalidArgument);
  opt.split_fraction = 0.5;
  opt.sensor = {9, 8};
  EXPECT_THROW(generate_synthetic_dataset(sources, psf, opt), DimensionError);
}

TEST(DataFidelity, ZeroEstimateAndNoiselessTruth) {
  std::mt19937_64 rng(60);
  const Dims s{10, 10};
  const Psf psf = make_synthetic_psf(s, 2);
  const Scene x = embed_scene(random_planes(s, rng), doubled(s));
  const Measurement b = forward_measure(psf, x, {});
  double half_sq = 0;
  for (const auto& p : b.planes)
    for (double v : p) half_sq += 0.5 * v * v;
  EXPECT_NEAR(data_fidelity(psf, b, Scene{Planes::filled(doubled(s))}), half_sq, 1e-12 * half_sq);
  EXPECT_LT(data_fidelity(psf, b, x), 1e-12);
}

TEST(Metrics, IdenticalImages) {
  std::mt19937_64 rng(61);
  const Planes x = random_planes({20, 20}, rng);
  const QualityMetrics m = metrics(x, x, {16, 16});
  EXPECT_EQ(m.mse, 0.0);
  EXPECT_NEAR(m.ssim, 1.0, 1e-12);
  EXPECT_EQ(m.psnr, kPsnrCeiling);
}

TEST(Metrics, ConstantHalfVersusOne) {
  const QualityMetrics m = metrics(Planes::filled({12, 12}, 0.5), Planes::filled({12, 12}, 1.0), {10, 10});
  EXPECT_DOUBLE_EQ(m.mse, 0.25);
  EXPECT_NEAR(m.psnr, 6.0206, 1e-4);
}

TEST(Metrics, CropsPaddedEstimateToValidRegion) {
  std::mt19937_64 rng(62);
  const Planes gt = random_planes({10, 10}, rng);
  Scene est = embed_scene(gt, {20, 20});
  est[0](0, 0) = 100.0;  // outside the sensor block, ignored
  EXPECT_EQ(metrics(est, gt, {8, 8}).mse, 0.0);
}

TEST(Ssim, MatchesDirectWindowOracle) {
  std::mt19937_64 rng(63);
  for (Dims d : {Dims{8, 8}, Dims{12, 17}, Dims{20, 9}}) {
    const RealGrid x = oracle::random_grid(d, rng, 0.0, 1.0), y = oracle::random_grid(d, rng, 0.0, 1.0);
    EXPECT_NEAR(ssim(x, y), oracle::ssim(x, y), 1e-10) << to_string(d);
  }
  EXPECT_THROW(ssim(RealGrid({7, 9}, 0.0), RealGrid({7, 9}, 0.0)), DimensionError);
}

TEST(Ssim, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(64);
  const RealGrid x = oracle::random_grid({10, 11}, rng, 0.0, 1.0), y = oracle::random_grid({10, 11}, rng, 0.0, 1.0);
  RealGrid g;
  ssim(x, y, &g);
  const double h = 1e-6;
  for (std::size_t i = 0; i < x.size(); i += 3) {
    RealGrid lo = x, hi = x;
    lo[i] -= h;
    hi[i] += h;
    const double fd = (ssim(hi, y) - ssim(lo, y)) / (2 * h);
    EXPECT_NEAR(g[i], fd, 1e-7) << i;
  }
}

TEST(Loss, ZeroAtTruthForAnyEpoch) {
  std::mt19937_64 rng(65);
  const Planes gt = random_planes({12, 12}, rng);
  LossSchedule sched;
  sched.total_epochs = 10;
  for (int e : {0, 3, 9}) EXPECT_NEAR(loss_eval(embed_scene(gt, {24, 24}), gt, {10, 10}, sched, e).loss, 0.0, 1e-14);
}

TEST(Loss, PureMseGradient) {
  std::mt19937_64 rng(66);
  const Dims s{12, 12}, valid{10, 10};
  const Planes gt = random_planes(s, rng);
  const Scene x = embed_scene(random_planes(s, rng), doubled(s));
  const LossValue lv = loss_eval(x, gt, valid, LossSchedule::mse_only(), 0);
  const double n = 3.0 * valid.size();
  for (std::size_t c = 0; c < kChannels; ++c) {
    const RealGrid a = crop_center(crop_center(x[c], s), valid), b = crop_center(gt[c], valid);
    RealGrid expected = 2.0 * (a - b);
    for (double& v : expected) v /= n;
    EXPECT_LT(max_abs_diff(crop_center(crop_center(lv.grad[c], s), valid), expected), 1e-15);
    // zero outside the valid crop
    EXPECT_NEAR(squared_norm(lv.grad[c]), squared_norm(expected), 1e-24);
  }
}

TEST(Loss, GradientMatchesFiniteDifferencesWithSsim) {
  std::mt19937_64 rng(67);
  const Dims s{10, 10}, valid{9, 9};
  const Planes gt = random_planes(s, rng);
  const Scene x = embed_scene(random_planes(s, rng), doubled(s));
  LossSchedule sched;
  sched.total_epochs = 4;
  const int epoch = 1;  // w_ssim = 0.5
  const LossValue lv = loss_eval(x, gt, valid, sched, epoch);
  const double h = 1e-6;
  for (std::size_t c = 0; c < kChannels; ++c)
    for (std::size_t i = 0; i < x[c].size(); i += 11) {
      Scene lo = x, hi = x;
      lo[c][i] -= h;
      hi[c][i] += h;
      const double fd =
          (loss_eval(hi, gt, valid, sched, epoch).loss - loss_eval(lo, gt, valid, sched, epoch).loss) / (2 * h);
      EXPECT_NEAR(lv.grad[c][i], fd, 1e-5 * std::max(1.0, std::abs(fd)));
    }
}

TEST(Loss, ScheduleRampsSsimWeight) {
  LossSchedule s;
  s.total_epochs = 10;
  EXPECT_EQ(s.w_ssim(0), 0.0);
  EXPECT_DOUBLE_EQ(s.w_ssim(2), 0.4);
  EXPECT_EQ(s.w_ssim(5), 1.0);
  EXPECT_EQ(s.w_ssim(9), 1.0);
  EXPECT_EQ(s.w_mse(9), 1.0);
  s.mse_weight = 0;
  s.ssim_final = 0;
  EXPECT_THROW(s.validate(), InvalidArgument);
}

TEST(Loss, NonnegativeOnRandomInputs) {
  std::mt19937_64 rng(68);
  LossSchedule sched;
  sched.total_epochs = 2;
  for (int t = 0; t < 10; ++t) {
    const Planes gt = random_planes({12, 12}, rng);
    const Scene x = embed_scene(random_planes({12, 12}, rng, -0.5, 1.5), {24, 24});
    EXPECT_GT(loss_eval(x, gt, {10, 10}, sched, t % 3).loss, 0.0);
  }
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  std::vector<double> p{1.0, -2.0, 3.5};
  const std::vector<double> g(3, 0.0);
  AdamState s = AdamState::for_size(3, 0.1);
  adam_step(p, g, s);
  EXPECT_EQ(p, (std::vector<double>{1.0, -2.0, 3.5}));
  EXPECT_EQ(s.t, 1u);
}

TEST(Adam, FirstStepClosedForm) {
  std::vector<double> p{0.0};
  AdamState s = AdamState::for_size(1, 0.1);
  adam_step(p, std::vector<double>{1.0}, s);
  EXPECT_DOUBLE_EQ(p[0], -0.1 / (1.0 + 1e-8));
}

TEST(Adam, ScriptedSequenceOnQuadratic) {
  // Minimizing p^2 from p = 1 with lr 0.05; reference moments written out by hand.
  std::vector<double> p{1.0};
  AdamState s = AdamState::for_size(1, 0.05);
  double ref = 1.0, m = 0, v = 0;
  for (int t = 1; t <= 3; ++t) {
    const double g = 2 * ref;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    ref -= 0.05 * mh / (std::sqrt(vh) + 1e-8);
    adam_step(p, std::vector<double>{2 * p[0]}, s);
    EXPECT_NEAR(p[0], ref, 1e-12) << "step " << t;
    EXPECT_GE(s.v[0], 0.0);
  }
  EXPECT_LT(p[0], 1.0);
}

TEST(Adam, RejectsSizeMismatchAndNegativeRate) {
  std::vector<double> p(2, 0.0);
  AdamState s = AdamState::for_size(2, 0.1);
  EXPECT_THROW(adam_step(p, std::vector<double>(3, 0.0), s), DimensionError);
  EXPECT_THROW(AdamState::for_size(2, -1.0), InvalidArgument);
}

TEST(Train, ZeroLearningRateKeepsParameters) {
  const SmallProblem p = small_problem(4);
  const NetworkParams init = initial_network(Variant::leadmm, 3);
  const TrainResult r = train(init, p.data, p.ops, quick_options(2, 0.0));
  EXPECT_EQ(r.final_params, init);
  EXPECT_EQ(r.history.size(), 2u);
}

TEST(Train, DeterministicAcrossRuns) {
  const SmallProblem p = small_problem(2);
  for (Variant v : {Variant::leadmm, Variant::leadmm_star}) {
    const NetworkParams init = initial_network(v, 3);
    const TrainResult a = train(init, p.data, p.ops, quick_options(1, 1e-2));
    const TrainResult b = train(init, p.data, p.ops, quick_options(1, 1e-2));
    EXPECT_EQ(a.final_params, b.final_params);
    EXPECT_NE(a.final_params, init);
  }
}

TEST(Train, ReducesTrainingLossOnTinyProblem) {
  const SmallProblem p = small_problem(6);
  TrainOptions o = quick_options(8, 5e-2);
  o.schedule = LossSchedule::mse_only();
  const TrainResult r = train(initial_network(Variant::leadmm, 3), p.data, p.ops, o);
  EXPECT_LT(r.history.back().train_loss, r.history.front().train_loss);
  EXPECT_LE(r.best_test_mse, r.initial_test_mse);
}

TEST(Train, RejectsEmptyTrainingSet) {
  const SmallProblem p = small_problem(2);
  Dataset empty;
  empty.test = p.data.test;
  EXPECT_THROW(train(initial_network(Variant::leadmm, 2), empty, p.ops, quick_options(1, 1e-2)), InvalidArgument);
}

TEST(Train, ZeroSsimWeightEqualsMseOnlyTraining) {
  const SmallProblem p = small_problem(4);
  TrainOptions a = quick_options(2, 1e-2), b = quick_options(2, 1e-2);
  a.schedule = LossSchedule::mse_only();
  b.schedule.ssim_final = 0.0;
  b.schedule.ramp_fraction = 0.3;
  const NetworkParams init = initial_network(Variant::leadmm, 3);
  const TrainResult ra = train(init, p.data, p.ops, a), rb = train(init, p.data, p.ops, b);
  EXPECT_EQ(ra.final_params, rb.final_params);
  ASSERT_EQ(ra.history.size(), rb.history.size());
  for (std::size_t i = 0; i < ra.history.size(); ++i) EXPECT_EQ(ra.history[i].train_loss, rb.history[i].train_loss);
}

TEST(Evaluate, GroundTruthMethodIsPerfect) {
  const SmallProblem p = small_problem(4);
  const MethodSpec truth{"truth", [](const DatasetPair& d) { return d.ground_truth; }, 0};
  const MetricsReport r = evaluate_testset({truth}, p.data.test, p.ops, 1);
  ASSERT_EQ(r.rows.size(), 1u);
  EXPECT_EQ(r.rows[0].mse, 0.0);
  EXPECT_NEAR(r.rows[0].ssim, 1.0, 1e-12);
}

TEST(Evaluate, ConvergedAdmmBeatsBoundedAndLeavesInputsAlone) {
  const SmallProblem p = small_problem(6, {24, 24});
  const Dataset before = p.data;
  auto admm = [&](int iters) {
    AdmmParams prm;
    prm.iters = iters;
    prm.tol = 0;
    return MethodSpec{"admm" + std::to_string(iters),
                      [&p, prm](const DatasetPair& d) -> Planes { return admm_solve(p.ops, d.measurement, prm).scene; }, 0};
  };
  const MetricsReport r = evaluate_testset({admm(5), admm(100)}, p.data.test, p.ops, 1, 2);
  ASSERT_EQ(r.rows.size(), 2u);
  EXPECT_LT(r.rows[1].mse, r.rows[0].mse);
  for (const auto& row : r.rows) {
    EXPECT_TRUE(std::isfinite(row.mse) && std::isfinite(row.psnr) && std::isfinite(row.data_fidelity));
    EXPECT_GE(row.wall_time_ms, 0.0);
  }
  for (std::size_t i = 0; i < before.test.size(); ++i) {
    EXPECT_EQ(before.test[i].measurement, p.data.test[i].measurement);
    EXPECT_EQ(before.test[i].ground_truth, p.data.test[i].ground_truth);
  }
}

TEST(Evaluate, ThreadCountDoesNotChangeResults) {
  const SmallProblem p = small_problem(8);
  const MethodSpec net{"leadmm", network_reconstructor(initial_network(Variant::leadmm, 5), p.ops), 0};
  const MetricsReport a = evaluate_testset({net}, p.data.test, p.ops, 1, 1);
  const MetricsReport b = evaluate_testset({net}, p.data.test, p.ops, 1, 3);
  EXPECT_EQ(a.rows[0].mse, b.rows[0].mse);
  EXPECT_EQ(a.rows[0].ssim, b.rows[0].ssim);
  EXPECT_EQ(a.rows[0].data_fidelity, b.rows[0].data_fidelity);
}

TEST(Sweep, FullSizeMatchesPlainTraining) {
  const SmallProblem p = small_problem(4);
  const NetworkParams init = initial_network(Variant::leadmm, 3);
  const TrainOptions o = quick_options(2, 1e-2);
  const auto rows = sweep_train_size({p.data.train.size()}, init, p.data, p.ops, o);
  const TrainResult plain = train(init, p.data, p.ops, o);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].result.final_params, plain.final_params);
  EXPECT_EQ(rows[0].test_mse,
            mean_quality(p.data.test, network_reconstructor(plain.final_params, p.ops)).mse);
}

TEST(Sweep, RejectsEmptyOrOversizedSizes) {
  const SmallProblem p = small_problem(4);
  const NetworkParams init = initial_network(Variant::leadmm, 2);
  EXPECT_THROW(sweep_train_size({}, init, p.data, p.ops, quick_options(1, 1e-2)), InvalidArgument);
  EXPECT_THROW(sweep_train_size({99}, init, p.data, p.ops, quick_options(1, 1e-2)), InvalidArgument);
}

TEST(Median, OddAndEven) {
  EXPECT_EQ(median({3, 1, 2}), 2.0);
  EXPECT_EQ(median({4, 1, 2, 3}), 2.5);
}

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "lensless/adam.hpp"
#include "lensless/dataset.hpp"
#include "lensless/metrics.hpp"
#include "lensless/unrolled.hpp"

namespace lensless {

struct TrainingDiverged : Error {
  using Error::Error;
};

/// Default learning rate per variant.
inline double default_learning_rate(Variant v) { return v == Variant::leadmm ? 1e-2 : 1e-3; }

/// Untrained network: every layer at the classic defaults, identity transform.
inline NetworkParams initial_network(Variant variant, std::size_t depth = 5,
                                     const AdmmParams& classic = {}) {
  return {variant, LeAdmmTheta::from_classic(classic, depth), LearnedTransform::identity()};
}

struct TrainOptions {
  int epochs = 50;
  double lr = 1e-2;
  LossSchedule schedule;  // total_epochs is overwritten with `epochs`
  std::uint64_t seed = 0;
  bool evaluate_each_epoch = true;
  std::size_t threads = 1;  // test-set evaluation only
  std::function<void(int epoch, double train_loss, double test_mse)> on_epoch;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0;
  double test_mse = 0;
  double test_ssim = 0;
};

struct TrainResult {
  NetworkParams initial;
  NetworkParams final_params;
  NetworkParams best;  // lowest test MSE over the trained epochs
  int best_epoch = 0;
  double initial_test_mse = 0;
  double best_test_mse = 0;
  std::vector<EpochRecord> history;
};

using Reconstructor = std::function<Planes(const DatasetPair&)>;

/// Runs `fn(i)` for i in [0, n) on up to `threads` workers. Results must be written
/// to per-index slots so reductions stay in a fixed order.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += threads) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Mean MSE and SSIM of a reconstructor over a set of pairs.
inline QualityMetrics mean_quality(const std::vector<DatasetPair>& pairs, const Reconstructor& rec,
                                   std::size_t threads = 1) {
  std::vector<QualityMetrics> per(pairs.size());
  parallel_for(pairs.size(), threads,
               [&](std::size_t i) { per[i] = metrics(rec(pairs[i]), pairs[i].ground_truth, pairs[i].valid_region); });
  QualityMetrics m;
  for (const auto& q : per) {
    m.mse += q.mse;
    m.ssim += q.ssim;
  }
  m.mse /= static_cast<double>(std::max<std::size_t>(pairs.size(), 1));
  m.ssim /= static_cast<double>(std::max<std::size_t>(pairs.size(), 1));
  m.psnr = psnr_from_mse(m.mse);
  return m;
}

inline Reconstructor network_reconstructor(const NetworkParams& net, const PrecomputedOperators& ops) {
  return [net, &ops](const DatasetPair& p) -> Planes {
    return unrolled_forward(net, ops, p.measurement, false).scene;
  };
}

/// Single-example Adam training: forward, loss, reverse pass and update for every
/// training pair in a seeded shuffled order, once per epoch.
inline TrainResult train(const NetworkParams& init, const Dataset& data, const PrecomputedOperators& ops,
                         TrainOptions opt) {
  if (data.train.empty()) throw InvalidArgument("training set is empty");
  if (opt.epochs < 0) throw InvalidArgument("epochs must be nonnegative");
  opt.schedule.total_epochs = opt.epochs;
  opt.schedule.validate();

  TrainResult result;
  result.initial = init;
  NetworkParams net = init;
  std::vector<double> params = net.flatten();
  AdamState adam = AdamState::for_size(params.size(), opt.lr);
  std::mt19937_64 rng(opt.seed);
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);

  const bool have_test = !data.test.empty() && opt.evaluate_each_epoch;
  if (have_test) result.initial_test_mse = mean_quality(data.test, network_reconstructor(net, ops), opt.threads).mse;
  result.best = net;
  result.best_test_mse = std::numeric_limits<double>::infinity();

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t idx : order) {
      const DatasetPair& pair = data.train[idx];
      const UnrolledOutput out = unrolled_forward(net, ops, pair.measurement, true);
      const LossValue lv = loss_eval(out.scene, pair.ground_truth, pair.valid_region, opt.schedule, epoch);
      if (!std::isfinite(lv.loss))
        throw TrainingDiverged("training loss became non-finite at epoch " + std::to_string(epoch + 1) +
                               ", example " + std::to_string(idx));
      loss_sum += lv.loss;
      const std::vector<double> grads = leadmm_backward(out.tape, ops, lv.grad).flatten();
      adam_step(params, grads, adam);
      net.assign(params);
    }
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    if (have_test) {
      const QualityMetrics q = mean_quality(data.test, network_reconstructor(net, ops), opt.threads);
      rec.test_mse = q.mse;
      rec.test_ssim = q.ssim;
      if (q.mse < result.best_test_mse) {
        result.best_test_mse = q.mse;
        result.best = net;
        result.best_epoch = rec.epoch;
      }
    }
    result.history.push_back(rec);
    if (opt.on_epoch) opt.on_epoch(rec.epoch, rec.train_loss, rec.test_mse);
  }
  result.final_params = net;
  if (!have_test || opt.epochs == 0) {
    result.best = net;
    result.best_epoch = opt.epochs;
    result.best_test_mse = result.initial_test_mse;
  }
  return result;
}

struct LayerMetrics {
  double mse = 0;
  double data_fidelity = 0;
};

/// MSE against ground truth and 1/2 ||b - C H x^k||^2 after every layer.
inline std::vector<LayerMetrics> per_layer_metrics(const std::vector<Scene>& snapshots, const Planes& x_gt,
                                                   const ConvolutionOperator& H, const Measurement& b,
                                                   Dims valid) {
  std::vector<LayerMetrics> rows;
  rows.reserve(snapshots.size());
  for (const Scene& s : snapshots)
    rows.push_back({metrics(s, x_gt, valid).mse, data_fidelity(H, b, s)});
  return rows;
}

struct MethodSpec {
  std::string name;
  Reconstructor reconstruct;
  std::size_t n_train_images = 0;
};

struct MethodReport {
  std::string name;
  double data_fidelity = 0;
  double mse = 0;
  double ssim = 0;
  double psnr = 0;
  double wall_time_ms = 0;  // median over timed runs on the first test pair
  std::size_t n_train_images = 0;
  std::vector<QualityMetrics> per_pair;
  std::vector<double> per_pair_fidelity;
};

struct MetricsReport {
  std::vector<MethodReport> rows;
};

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Median wall time in milliseconds of `runs` calls to `fn`.
inline double time_median_ms(const std::function<void()>& fn, int runs) {
  std::vector<double> t;
  for (int i = 0; i < runs; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    t.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  return median(std::move(t));
}

/// Per-method evaluation: mean fidelity/MSE/SSIM/PSNR over the test
/// pairs, plus the median of `timing_runs` timed reconstructions of the first pair.
inline MetricsReport evaluate_testset(const std::vector<MethodSpec>& methods,
                                      const std::vector<DatasetPair>& test, const PrecomputedOperators& ops,
                                      int timing_runs = 5, std::size_t threads = 1) {
  if (methods.empty()) throw InvalidArgument("evaluate_testset: no methods");
  if (test.empty()) throw InvalidArgument("evaluate_testset: empty test set");
  if (timing_runs < 1) throw InvalidArgument("evaluate_testset: timing_runs must be at least 1");
  MetricsReport report;
  for (const auto& m : methods) {
    MethodReport row;
    row.name = m.name;
    row.n_train_images = m.n_train_images;
    row.per_pair.resize(test.size());
    row.per_pair_fidelity.resize(test.size());
    parallel_for(test.size(), threads, [&](std::size_t i) {
      const Planes est = m.reconstruct(test[i]);
      row.per_pair[i] = metrics(est, test[i].ground_truth, test[i].valid_region);
      const Scene padded = est.dims() == ops.padded_dims() ? Scene{est} : embed_scene(est, ops.padded_dims());
      row.per_pair_fidelity[i] = data_fidelity(ops.H, test[i].measurement, padded);
    });
    for (std::size_t i = 0; i < test.size(); ++i) {
      row.mse += row.per_pair[i].mse;
      row.ssim += row.per_pair[i].ssim;
      row.psnr += row.per_pair[i].psnr;
      row.data_fidelity += row.per_pair_fidelity[i];
    }
    const double n = static_cast<double>(test.size());
    row.mse /= n;
    row.ssim /= n;
    row.psnr /= n;
    row.data_fidelity /= n;
    row.wall_time_ms = time_median_ms([&] { (void)m.reconstruct(test.front()); }, timing_runs);
    report.rows.push_back(std::move(row));
  }
  return report;
}

struct SweepRow {
  std::size_t train_size = 0;
  double test_mse = 0;
  double test_ssim = 0;
  TrainResult result;
};

/// Trains from the same initialization on the first `size` training pairs for each
/// requested size and reports the final parameters' test metrics.
inline std::vector<SweepRow> sweep_train_size(const std::vector<std::size_t>& sizes, const NetworkParams& init,
                                              const Dataset& data, const PrecomputedOperators& ops,
                                              const TrainOptions& opt) {
  if (sizes.empty()) throw InvalidArgument("sweep: no training-set sizes given");
  for (std::size_t s : sizes)
    if (s == 0 || s > data.train.size())
      throw InvalidArgument("sweep: size " + std::to_string(s) + " outside [1, " +
                            std::to_string(data.train.size()) + "]");
  std::vector<SweepRow> rows;
  for (std::size_t s : sizes) {
    Dataset subset;
    subset.train.assign(data.train.begin(), data.train.begin() + static_cast<std::ptrdiff_t>(s));
    subset.test = data.test;
    SweepRow row;
    row.train_size = s;
    row.result = train(init, subset, ops, opt);
    const QualityMetrics q = mean_quality(data.test, network_reconstructor(row.result.final_params, ops), opt.threads);
    row.test_mse = q.mse;
    row.test_ssim = q.ssim;
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace lensless

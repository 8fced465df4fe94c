// Command-line front end: simulate, reconstruct, train, eval, gradcheck,
// benchmark, sweep.
//
// Exit codes: 0 success, 2 bad configuration, 3 runtime failure,
// 4 verification failure.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lensless/config.hpp"
#include "lensless/gradcheck.hpp"
#include "lensless/io.hpp"
#include "lensless/training.hpp"

namespace fs = std::filesystem;
using namespace lensless;

namespace {

constexpr int kOk = 0, kBadConfig = 2, kRuntime = 3, kVerification = 4;

struct VerificationFailure : Error {
  using Error::Error;
};

// Flags that override the config file. Unset optionals leave the config alone.
struct Overrides {
  std::string config;
  std::optional<std::string> out, psf, dataset, images, checkpoint, input, method, variant, sensor, noise;
  std::optional<std::uint64_t> seed, psf_seed, image_seed, noise_seed;
  std::optional<std::size_t> threads, count, depth;
  std::optional<double> split, sigma, lr, tau;
  std::optional<int> epochs, iters, timing_runs;
  std::optional<bool> autotune;
  std::vector<std::size_t> sizes;
  std::vector<std::string> checkpoints;  // eval: any number of trained networks
};

Dims parse_dims_flag(const std::string& s) {
  const auto x = s.find_first_of("xX,");
  try {
    if (x == std::string::npos) throw std::invalid_argument(s);
    const Dims d{std::stoul(s.substr(0, x)), std::stoul(s.substr(x + 1))};
    if (d.rows == 0 || d.cols == 0) throw std::invalid_argument(s);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("--sensor expects ROWSxCOLS, got '" + s + "'");
  }
}

RunConfig effective_config(const Overrides& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_config(o.config);
  if (o.out) c.output_dir = *o.out;
  if (o.psf) c.psf_path = *o.psf;
  if (o.psf_seed) c.psf_seed = *o.psf_seed;
  if (o.dataset) c.dataset_dir = *o.dataset;
  if (o.images) c.images_dir = *o.images;
  if (o.checkpoint) c.checkpoint = *o.checkpoint;
  if (o.input) c.input = *o.input;
  if (o.method) c.method = *o.method;
  if (o.variant) {
    try {
      c.variant = parse_variant(*o.variant);
    } catch (const InvalidArgument&) {
      throw ConfigError("--variant must be leadmm or leadmm_star, got '" + *o.variant + "'");
    }
  }
  if (o.sensor) c.sensor = parse_dims_flag(*o.sensor);
  if (o.noise) c.noise.kind = detail::parse_noise_kind(*o.noise);
  if (o.seed) c.seed = *o.seed;
  if (o.image_seed) c.image_seed = *o.image_seed;
  if (o.noise_seed) c.noise.seed = *o.noise_seed;
  if (o.threads) c.threads = *o.threads;
  if (o.count) c.count = *o.count;
  if (o.depth) c.depth = *o.depth;
  if (o.split) c.split = *o.split;
  if (o.sigma) c.noise.sigma = *o.sigma;
  if (o.lr) c.lr = *o.lr;
  if (o.tau) c.solver.tau = *o.tau;
  if (o.epochs) c.epochs = *o.epochs;
  if (o.iters) c.solver.iters = *o.iters;
  if (o.timing_runs) c.timing_runs = *o.timing_runs;
  if (o.autotune) c.solver.autotune = *o.autotune;
  if (!o.sizes.empty()) c.sweep_sizes = o.sizes;
  validate(c);
  resolve_paths(c);
  return c;
}

void echo_config(const RunConfig& c) {
  write_text(fs::path(c.output_dir) / "config.json", config_to_json(c).dump(2) + "\n");
}

Psf load_psf(const RunConfig& c) {
  if (c.psf_path.empty()) return make_synthetic_psf(c.sensor, c.psf_seed);
  const fs::path p(c.psf_path);
  RealGrid raw;
  if (p.extension() == ".png") {
    const Planes img = read_png(p).planes;
    raw = RealGrid(img.dims(), 0.0);
    for (std::size_t ch = 0; ch < kChannels; ++ch)
      for (std::size_t i = 0; i < raw.size(); ++i) raw[i] += img[ch][i] / kChannels;
  } else {
    raw = read_grid(p);
  }
  return normalize_psf(raw);
}

std::vector<Planes> source_images(const RunConfig& c) {
  if (c.images_dir.empty()) return procedural_images(c.count, c.sensor, c.image_seed);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(c.images_dir))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ConfigError("dataset.images: no PNG files in '" + c.images_dir + "'");
  std::vector<Planes> out;
  for (const auto& f : files) out.push_back(read_png(f).planes);
  return out;
}

LoadedDataset require_dataset(const RunConfig& c) {
  if (c.dataset_dir.empty()) throw ConfigError("dataset.dir is required (use --dataset)");
  return load_dataset(c.dataset_dir);
}

NetworkParams network_for(const RunConfig& c, Variant variant, Dims sensor, std::size_t* n_train = nullptr) {
  if (c.checkpoint.empty()) return initial_network(variant, c.depth, c.solver);
  Checkpoint ck = read_checkpoint(c.checkpoint);
  if (ck.net.variant != variant)
    throw ConfigError("checkpoint '" + c.checkpoint + "' holds a " + to_string(ck.net.variant) + " network, not " +
                      to_string(variant));
  if (ck.sensor != sensor)
    std::cerr << "note: checkpoint trained at " << to_string(ck.sensor) << ", applied at " << to_string(sensor)
              << "\n";
  if (n_train) *n_train = ck.n_train_images;
  return ck.net;
}

// Central sensor block of a padded scene, for display.
Planes sensor_view(const Planes& scene, Dims sensor) {
  Planes out;
  for (std::size_t ch = 0; ch < kChannels; ++ch) out[ch] = crop_center(scene[ch], sensor);
  return out;
}

int cmd_simulate(const RunConfig& c) {
  const Psf psf = load_psf(c);
  DatasetOptions opt;
  opt.sensor = psf.sensor_dims();
  opt.count = c.count;
  opt.split_fraction = c.split;
  opt.seed = c.seed;
  opt.allow_repeat = c.allow_repeat;
  opt.noise = c.noise;
  opt.valid_region = c.valid_region;
  // Ground truth is stored as 16-bit PNG, so quantize it before measuring to keep
  // the stored pairs exactly consistent.
  std::vector<Planes> sources = source_images(c);
  for (auto& s : sources) {
    s = prepare_ground_truth(s, opt.sensor);
    for (auto& plane : s.planes)
      for (double& v : plane) v = quantize(v, 65535) / 65535.0;
  }
  const Dataset data = generate_synthetic_dataset(sources, psf, opt);
  save_dataset(c.output_dir, data, psf, c.noise, c.seed);
  echo_config(c);
  std::cout << "wrote " << data.train.size() << " train + " << data.test.size() << " test pairs to "
            << c.output_dir << "\n";
  return kOk;
}

int cmd_reconstruct(const RunConfig& c) {
  if (c.input.empty()) throw ConfigError("reconstruct.input is required (use --input)");
  const Psf psf = load_psf(c);
  const PrecomputedOperators ops(psf);
  const fs::path in(c.input);
  Measurement b;
  b.planes = (in.extension() == ".png" ? read_png(in).planes : read_planes(in)).planes;
  if (b.dims() != psf.sensor_dims())
    throw ConfigError("measurement '" + c.input + "' is " + to_string(b.dims()) + " but the PSF is " +
                      to_string(psf.sensor_dims()));
  Scene scene;
  if (c.method == "admm" || c.method == "admm5") {
    AdmmParams p = c.solver;
    if (c.method == "admm5") {
      p.iters = 5;
      p.tol = 0;
    }
    scene = admm_solve(ops, b, p).scene;
  } else {
    const Variant v = c.method == "leadmm" ? Variant::leadmm : Variant::leadmm_star;
    scene = unrolled_forward(network_for(c, v, psf.sensor_dims()), ops, b, false).scene;
  }
  const fs::path out(c.output_dir);
  write_planes(out / "scene.ltg", scene);
  write_png(out / "scene.png", sensor_view(scene, psf.sensor_dims()));
  echo_config(c);
  std::cout << "wrote " << (out / "scene.png").string() << " and scene.ltg (" << c.method << ")\n";
  return kOk;
}

int cmd_train(const RunConfig& c) {
  const LoadedDataset ds = require_dataset(c);
  const PrecomputedOperators ops(ds.psf);
  const NetworkParams init = network_for(c, c.variant, ds.psf.sensor_dims());
  TrainOptions opt;
  opt.epochs = c.epochs;
  opt.lr = c.learning_rate();
  opt.schedule = c.schedule;
  opt.seed = c.seed;
  opt.threads = c.threads;
  opt.on_epoch = [](int epoch, double loss, double test_mse) {
    std::printf("epoch %3d  train loss %.6f  test MSE %.6f\n", epoch, loss, test_mse);
    std::fflush(stdout);
  };
  const TrainResult r = train(init, ds.data, ops, opt);
  const fs::path out(c.output_dir);
  write_checkpoint(out / "checkpoint.ltg", r.best, ds.psf.sensor_dims(), ds.data.train.size());
  write_checkpoint(out / "final.ltg", r.final_params, ds.psf.sensor_dims(), ds.data.train.size());
  write_text(out / "history.csv", history_csv(r.history));
  echo_config(c);
  std::printf("initial test MSE %.6f, best %.6f at epoch %d\n", r.initial_test_mse, r.best_test_mse, r.best_epoch);
  return kOk;
}

int cmd_eval(const RunConfig& c, const std::vector<std::string>& extra_checkpoints) {
  const LoadedDataset ds = require_dataset(c);
  const PrecomputedOperators ops(ds.psf);
  const std::size_t n_train = ds.data.train.size();
  AdmmParams bounded = c.solver, converged = c.solver;
  bounded.iters = 5;
  bounded.tol = 0;
  std::vector<MethodSpec> methods{
      {"admm5", [&](const DatasetPair& p) -> Planes { return admm_solve(ops, p.measurement, bounded).scene; }, 0},
      {"admm" + std::to_string(converged.iters),
       [&](const DatasetPair& p) -> Planes { return admm_solve(ops, p.measurement, converged).scene; }, 0}};
  std::vector<std::string> paths = extra_checkpoints;
  if (paths.empty() && !c.checkpoint.empty()) paths.push_back(c.checkpoint);
  std::vector<std::pair<std::string, NetworkParams>> nets;
  for (const auto& path : paths) {
    const Checkpoint ck = read_checkpoint(fs::absolute(path));
    std::string name = ck.net.variant == Variant::leadmm ? "leadmm" : "leadmm-star";
    for (const auto& [existing, net] : nets)
      if (existing == name) name += "#" + std::to_string(nets.size() + 1);
    nets.emplace_back(name, ck.net);
    methods.push_back({name, network_reconstructor(ck.net, ops), ck.n_train_images ? ck.n_train_images : n_train});
  }
  const MetricsReport report = evaluate_testset(methods, ds.data.test, ops, c.timing_runs, c.threads);
  const fs::path out(c.output_dir);
  write_text(out / "metrics.csv", metrics_csv(report));
  for (const auto& [name, net] : nets) {
    std::vector<LayerMetrics> mean(net.theta.depth());
    for (const auto& p : ds.data.test) {
      const auto rows = per_layer_metrics(unrolled_forward(net, ops, p.measurement, false).snapshots,
                                          p.ground_truth, ops.H, p.measurement, p.valid_region);
      for (std::size_t k = 0; k < rows.size(); ++k) {
        mean[k].mse += rows[k].mse / ds.data.test.size();
        mean[k].data_fidelity += rows[k].data_fidelity / ds.data.test.size();
      }
    }
    write_text(out / ("layers_" + name + ".csv"), layer_csv(mean));
  }
  echo_config(c);
  std::cout << metrics_table(report);
  return kOk;
}

// Built-in 16x16 instance: synthetic caustic PSF, procedural scene, noiseless
// measurement.
struct GradcheckFixture {
  Psf psf;
  Measurement b;
  Planes gt;
};

GradcheckFixture gradcheck_fixture() {
  const Dims sensor{16, 16};
  GradcheckFixture f;
  f.psf = make_synthetic_psf(sensor, 5);
  f.gt = prepare_ground_truth(procedural_image(sensor, 21), sensor);
  f.b = forward_measure(f.psf, embed_scene(f.gt, f.psf.padded_dims()), NoiseModel{});
  return f;
}

int cmd_gradcheck(const RunConfig& c) {
  const GradcheckFixture f = gradcheck_fixture();
  const PrecomputedOperators ops(f.psf);
  const Dims valid = default_valid_region(f.psf.sensor_dims());
  std::string csv;
  bool all_passed = true;
  for (Variant v : {Variant::leadmm, Variant::leadmm_star}) {
    NetworkParams net = initial_network(v, c.depth, c.solver);
    // A nonzero transform so every filter tap carries gradient.
    if (v == Variant::leadmm_star) net.transform = LearnedTransform::random(c.seed, 0.1);
    const GradientCheckReport r = gradient_check(net, ops, f.b, f.gt, valid);
    std::size_t failed = 0;
    for (const auto& e : r.entries) failed += !e.skipped && !e.passed;
    std::printf("%-12s checked %3zu  skipped %3zu  failed %zu  -> %s\n", to_string(v).c_str(), r.checked(),
                r.entries.size() - r.checked(), failed, r.passed() ? "PASS" : "FAIL");
    const std::string part = gradcheck_csv(r);
    csv += csv.empty() ? part : part.substr(part.find('\n') + 1);
    all_passed = all_passed && r.passed();
  }
  write_text(fs::path(c.output_dir) / "gradcheck.csv", csv);
  echo_config(c);
  if (!all_passed) throw VerificationFailure("gradient check failed; see gradcheck.csv");
  return kOk;
}

int cmd_benchmark(const RunConfig& c) {
  const Psf psf = load_psf(c);
  const PrecomputedOperators ops(psf);
  const Planes gt = prepare_ground_truth(procedural_image(psf.sensor_dims(), c.image_seed), psf.sensor_dims());
  NoiseModel noise = c.noise;
  noise.seed = derive_seed(c.seed, 0);
  const Measurement b = forward_measure(ops.H, embed_scene(gt, ops.padded_dims()), noise);
  AdmmParams classic = c.solver;
  classic.tol = 0.0;  // always run the full iteration count
  const NetworkParams leadmm = initial_network(Variant::leadmm, c.depth, c.solver);
  const NetworkParams star = initial_network(Variant::leadmm_star, c.depth, c.solver);
  const double t_admm = time_median_ms([&] { (void)admm_solve(ops, b, classic); }, c.timing_runs);
  const double t_le = time_median_ms([&] { (void)unrolled_forward(leadmm, ops, b, false); }, c.timing_runs);
  const double t_star = time_median_ms([&] { (void)unrolled_forward(star, ops, b, false); }, c.timing_runs);
  std::ostringstream csv;
  csv << "method,median_ms\n"
      << "admm" << classic.iters << "," << t_admm << "\n"
      << "leadmm," << t_le << "\n"
      << "leadmm-star," << t_star << "\n";
  write_text(fs::path(c.output_dir) / "benchmark.csv", csv.str());
  echo_config(c);
  std::printf("sensor %s, %d timed runs each\n", to_string(psf.sensor_dims()).c_str(), c.timing_runs);
  std::printf("  admm (%d iters)   %9.2f ms\n", classic.iters, t_admm);
  std::printf("  leadmm (K=%zu)     %9.2f ms   speedup %.1fx\n", c.depth, t_le, t_admm / t_le);
  std::printf("  leadmm-star (K=%zu)%9.2f ms   speedup %.1fx\n", c.depth, t_star, t_admm / t_star);
  return kOk;
}

int cmd_sweep(const RunConfig& c) {
  const LoadedDataset ds = require_dataset(c);
  const PrecomputedOperators ops(ds.psf);
  for (std::size_t s : c.sweep_sizes)
    if (s > ds.data.train.size())
      throw ConfigError("training.sweep_sizes: " + std::to_string(s) + " exceeds the " +
                        std::to_string(ds.data.train.size()) + " training pairs");
  TrainOptions opt;
  opt.epochs = c.epochs;
  opt.lr = c.learning_rate();
  opt.schedule = c.schedule;
  opt.seed = c.seed;
  opt.threads = c.threads;
  opt.evaluate_each_epoch = false;
  const auto rows =
      sweep_train_size(c.sweep_sizes, network_for(c, c.variant, ds.psf.sensor_dims()), ds.data, ops, opt);
  write_text(fs::path(c.output_dir) / "sweep.csv", sweep_csv(rows));
  echo_config(c);
  for (const auto& r : rows) std::printf("train size %4zu  test MSE %.6f  SSIM %.4f\n", r.train_size, r.test_mse, r.test_ssim);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lensless camera reconstruction: ADMM and unrolled Le-ADMM / Le-ADMM*"};
  app.require_subcommand(1);
  Overrides o;

  auto common = [&o](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--threads", o.threads, "worker threads for test-set evaluation");
    sub->add_option("--seed", o.seed, "run seed");
    sub->add_option("--psf", o.psf, "PSF file (PNG or LTG1 grid); synthetic when omitted");
    sub->add_option("--psf-seed", o.psf_seed, "seed of the synthetic PSF");
    sub->add_option("--sensor", o.sensor, "sensor size ROWSxCOLS (synthetic PSF)");
    sub->add_option("--iters", o.iters, "classic ADMM iterations");
    sub->add_option("--tau", o.tau, "TV weight");
    sub->add_option("--autotune", o.autotune, "residual-balanced penalties (true/false)");
    sub->add_option("--depth", o.depth, "unrolled layers");
  };

  auto* sim = app.add_subcommand("simulate", "synthesize a dataset directory");
  common(sim);
  sim->add_option("--images", o.images, "folder of source PNGs (procedural images when omitted)");
  sim->add_option("--image-seed", o.image_seed, "seed of the procedural images");
  sim->add_option("--count", o.count, "number of pairs");
  sim->add_option("--split", o.split, "fraction of pairs used for training");
  sim->add_option("--noise", o.noise, "none or gaussian");
  sim->add_option("--sigma", o.sigma, "noise std as a fraction of the peak signal");
  sim->add_option("--noise-seed", o.noise_seed, "noise seed");

  auto* rec = app.add_subcommand("reconstruct", "reconstruct one measurement");
  common(rec);
  rec->add_option("--input", o.input, "measurement (LTG1 planes container or PNG)");
  rec->add_option("--method", o.method, "admm | admm5 | leadmm | leadmm-star");
  rec->add_option("--checkpoint", o.checkpoint, "trained network for leadmm / leadmm-star");

  auto* tr = app.add_subcommand("train", "train Le-ADMM or Le-ADMM*");
  common(tr);
  tr->add_option("--dataset", o.dataset, "dataset directory from simulate");
  tr->add_option("--variant", o.variant, "leadmm or leadmm_star");
  tr->add_option("--epochs", o.epochs, "training epochs");
  tr->add_option("--lr", o.lr, "Adam learning rate");
  tr->add_option("--checkpoint", o.checkpoint, "initialize from this checkpoint");

  auto* ev = app.add_subcommand("eval", "per-method metrics and timing over the test split");
  common(ev);
  ev->add_option("--dataset", o.dataset, "dataset directory from simulate");
  ev->add_option("--checkpoint", o.checkpoints, "trained networks to include (repeatable)");
  ev->add_option("--timing-runs", o.timing_runs, "timed reconstructions per method (>= 5)");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check on the built-in 16x16 instance");
  common(gc);

  auto* bm = app.add_subcommand("benchmark", "median wall time of unrolled vs classic ADMM");
  common(bm);
  bm->add_option("--timing-runs", o.timing_runs, "timed runs per method (>= 5)");
  bm->add_option("--sigma", o.sigma, "noise std of the benchmark measurement");

  auto* sw = app.add_subcommand("sweep", "test metrics versus training-set size");
  common(sw);
  sw->add_option("--dataset", o.dataset, "dataset directory from simulate");
  sw->add_option("--variant", o.variant, "leadmm or leadmm_star");
  sw->add_option("--epochs", o.epochs, "training epochs per size");
  sw->add_option("--lr", o.lr, "Adam learning rate");
  sw->add_option("--sizes", o.sizes, "training-set sizes")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kBadConfig;
  }

  try {
    const RunConfig c = effective_config(o);
    if (sim->parsed()) return cmd_simulate(c);
    if (rec->parsed()) return cmd_reconstruct(c);
    if (tr->parsed()) return cmd_train(c);
    if (ev->parsed()) return cmd_eval(c, o.checkpoints);
    if (gc->parsed()) return cmd_gradcheck(c);
    if (bm->parsed()) return cmd_benchmark(c);
    if (sw->parsed()) return cmd_sweep(c);
  } catch (const VerificationFailure& e) {
    std::cerr << "verification failed: " << e.what() << "\n";
    return kVerification;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kBadConfig;
  } catch (const InvalidArgument& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kBadConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kRuntime;
}

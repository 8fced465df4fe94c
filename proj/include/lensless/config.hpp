#pragma once

// Run configuration: a JSON document with every setting a CLI run needs. Unknown
// keys are errors. Relative paths inside a config file resolve against the
// file's directory; resolve_paths() makes every path absolute before a run starts.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lensless/io.hpp"
#include "lensless/training.hpp"

namespace lensless {

struct ConfigError : Error {
  using Error::Error;
};

struct RunConfig {
  // PSF: a PNG or LTG1 grid file, or a synthetic caustic when no path is given.
  std::string psf_path;
  std::uint64_t psf_seed = 11;
  Dims sensor{96, 96};

  AdmmParams solver;

  Variant variant = Variant::leadmm;
  std::size_t depth = 5;
  std::string checkpoint;

  // Dataset: `dataset_dir` is written by simulate and read by train/eval/sweep.
  // Source images come from `images_dir` (PNG files) or are generated procedurally.
  std::string dataset_dir;
  std::string images_dir;
  std::size_t count = 150;
  double split = 2.0 / 3.0;
  bool allow_repeat = false;
  std::optional<Dims> valid_region;
  std::uint64_t image_seed = 7;
  NoiseModel noise{NoiseModel::Kind::gaussian, 0.02, 1};

  int epochs = 50;
  std::optional<double> lr;  // default depends on the variant
  LossSchedule schedule;
  std::vector<std::size_t> sweep_sizes{25, 100};

  std::string input;  // measurement for reconstruct
  std::string method = "admm";

  std::uint64_t seed = 42;
  std::string output_dir = "lensless_out";
  std::size_t threads = 1;
  int timing_runs = 5;

  double learning_rate() const { return lr.value_or(default_learning_rate(variant)); }
};

namespace detail {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

inline void reject_unknown(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError("'" + where + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown config key '" + (where.empty() ? key : where + "." + key) + "'");
  }
}

template <typename T>
void read_key(const json& obj, const char* key, const std::string& where, T& out) {
  if (!obj.contains(key)) return;
  const std::string full = where.empty() ? key : where + "." + key;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + full + "' has the wrong type");
  }
}

inline Dims read_dims(const json& j, const std::string& key) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number_unsigned() || !j[1].is_number_unsigned())
    throw ConfigError("config key '" + key + "' must be [rows, cols] with positive integers");
  const Dims d{j[0].get<std::size_t>(), j[1].get<std::size_t>()};
  if (d.rows == 0 || d.cols == 0) throw ConfigError("config key '" + key + "' must be positive");
  return d;
}

inline ShrinkMode parse_shrink(const std::string& s) {
  if (s == "isotropic") return ShrinkMode::isotropic;
  if (s == "anisotropic") return ShrinkMode::anisotropic;
  throw ConfigError("config key 'solver.shrink' must be 'isotropic' or 'anisotropic', got '" + s + "'");
}

inline NoiseModel::Kind parse_noise_kind(const std::string& s) {
  if (s == "none") return NoiseModel::Kind::none;
  if (s == "gaussian") return NoiseModel::Kind::gaussian;
  throw ConfigError("config key 'noise.kind' must be 'none' or 'gaussian', got '" + s + "'");
}

}  // namespace detail

/// Checks ranges that the JSON types cannot express.
inline void validate(const RunConfig& c) {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  need(c.sensor.rows > 0 && c.sensor.cols > 0, "config key 'sensor' must be positive");
  try {
    c.solver.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("config section 'solver': ") + e.what());
  }
  need(c.depth >= 1, "config key 'network.depth' must be at least 1");
  need(c.count >= 2, "config key 'dataset.count' must be at least 2");
  need(c.split >= 0.0 && c.split <= 1.0, "config key 'dataset.split' must lie in [0, 1]");
  need(c.noise.sigma >= 0.0, "config key 'noise.sigma' must be nonnegative");
  need(c.epochs >= 0, "config key 'training.epochs' must be nonnegative");
  need(!c.lr || *c.lr >= 0.0, "config key 'training.lr' must be nonnegative");
  need(c.schedule.mse_weight >= 0 && c.schedule.ssim_final >= 0 &&
           (c.schedule.mse_weight > 0 || c.schedule.ssim_final > 0),
       "config keys 'training.mse_weight'/'training.ssim_final' must be nonnegative and not both 0");
  need(c.schedule.ramp_fraction > 0.0 && c.schedule.ramp_fraction <= 1.0,
       "config key 'training.ramp_fraction' must lie in (0, 1]");
  need(c.threads >= 1, "config key 'threads' must be at least 1");
  need(c.timing_runs >= 5, "config key 'timing_runs' must be at least 5");
  need(c.method == "admm" || c.method == "admm5" || c.method == "leadmm" || c.method == "leadmm-star",
       "config key 'reconstruct.method' must be one of admm, admm5, leadmm, leadmm-star");
  if (c.valid_region)
    need(c.valid_region->rows >= 1 && c.valid_region->cols >= 1 && c.valid_region->rows <= c.sensor.rows &&
             c.valid_region->cols <= c.sensor.cols,
         "config key 'dataset.valid_region' must fit inside the sensor");
  for (std::size_t s : c.sweep_sizes) need(s >= 1, "config key 'training.sweep_sizes' entries must be positive");
}

/// Parses a config document. `base_dir` anchors relative paths.
inline RunConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  using detail::read_key;
  RunConfig c;
  detail::reject_unknown(j, "", {"psf", "sensor", "solver", "network", "dataset", "noise", "training",
                                 "reconstruct", "seed", "output_dir", "threads", "timing_runs"});
  auto anchor = [&](std::string& p) {
    if (!p.empty() && std::filesystem::path(p).is_relative() && !base_dir.empty()) p = (base_dir / p).string();
  };
  if (j.contains("psf")) {
    const auto& s = j["psf"];
    detail::reject_unknown(s, "psf", {"path", "seed"});
    read_key(s, "path", "psf", c.psf_path);
    read_key(s, "seed", "psf", c.psf_seed);
    anchor(c.psf_path);
  }
  if (j.contains("sensor")) c.sensor = detail::read_dims(j["sensor"], "sensor");
  if (j.contains("solver")) {
    const auto& s = j["solver"];
    detail::reject_unknown(s, "solver", {"mu1", "mu2", "mu3", "tau", "iters", "tol", "autotune", "shrink"});
    read_key(s, "mu1", "solver", c.solver.mu1);
    read_key(s, "mu2", "solver", c.solver.mu2);
    read_key(s, "mu3", "solver", c.solver.mu3);
    read_key(s, "tau", "solver", c.solver.tau);
    read_key(s, "iters", "solver", c.solver.iters);
    read_key(s, "tol", "solver", c.solver.tol);
    read_key(s, "autotune", "solver", c.solver.autotune);
    std::string shrink;
    read_key(s, "shrink", "solver", shrink);
    if (!shrink.empty()) c.solver.shrink = detail::parse_shrink(shrink);
  }
  if (j.contains("network")) {
    const auto& s = j["network"];
    detail::reject_unknown(s, "network", {"variant", "depth", "checkpoint"});
    std::string v;
    read_key(s, "variant", "network", v);
    if (!v.empty()) {
      try {
        c.variant = parse_variant(v);
      } catch (const InvalidArgument&) {
        throw ConfigError("config key 'network.variant' must be 'leadmm' or 'leadmm_star', got '" + v + "'");
      }
    }
    read_key(s, "depth", "network", c.depth);
    read_key(s, "checkpoint", "network", c.checkpoint);
    anchor(c.checkpoint);
  }
  if (j.contains("dataset")) {
    const auto& s = j["dataset"];
    detail::reject_unknown(s, "dataset",
                           {"dir", "images", "count", "split", "allow_repeat", "valid_region", "image_seed"});
    read_key(s, "dir", "dataset", c.dataset_dir);
    read_key(s, "images", "dataset", c.images_dir);
    read_key(s, "count", "dataset", c.count);
    read_key(s, "split", "dataset", c.split);
    read_key(s, "allow_repeat", "dataset", c.allow_repeat);
    read_key(s, "image_seed", "dataset", c.image_seed);
    if (s.contains("valid_region") && !s["valid_region"].is_null())
      c.valid_region = detail::read_dims(s["valid_region"], "dataset.valid_region");
    anchor(c.dataset_dir);
    anchor(c.images_dir);
  }
  if (j.contains("noise")) {
    const auto& s = j["noise"];
    detail::reject_unknown(s, "noise", {"kind", "sigma", "seed"});
    std::string kind;
    read_key(s, "kind", "noise", kind);
    if (!kind.empty()) c.noise.kind = detail::parse_noise_kind(kind);
    read_key(s, "sigma", "noise", c.noise.sigma);
    read_key(s, "seed", "noise", c.noise.seed);
  }
  if (j.contains("training")) {
    const auto& s = j["training"];
    detail::reject_unknown(s, "training",
                           {"epochs", "lr", "mse_weight", "ssim_final", "ramp_fraction", "sweep_sizes"});
    read_key(s, "epochs", "training", c.epochs);
    if (s.contains("lr") && !s["lr"].is_null()) {
      double lr = 0;
      read_key(s, "lr", "training", lr);
      c.lr = lr;
    }
    read_key(s, "mse_weight", "training", c.schedule.mse_weight);
    read_key(s, "ssim_final", "training", c.schedule.ssim_final);
    read_key(s, "ramp_fraction", "training", c.schedule.ramp_fraction);
    read_key(s, "sweep_sizes", "training", c.sweep_sizes);
  }
  if (j.contains("reconstruct")) {
    const auto& s = j["reconstruct"];
    detail::reject_unknown(s, "reconstruct", {"input", "method"});
    read_key(s, "input", "reconstruct", c.input);
    read_key(s, "method", "reconstruct", c.method);
    anchor(c.input);
  }
  read_key(j, "seed", "", c.seed);
  read_key(j, "output_dir", "", c.output_dir);
  anchor(c.output_dir);
  read_key(j, "threads", "", c.threads);
  read_key(j, "timing_runs", "", c.timing_runs);
  validate(c);
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return parse_config(j, std::filesystem::absolute(path).parent_path());
}

/// Makes every path absolute and lexically normal.
inline void resolve_paths(RunConfig& c) {
  for (std::string* p : {&c.psf_path, &c.checkpoint, &c.dataset_dir, &c.images_dir, &c.input, &c.output_dir})
    if (!p->empty()) *p = std::filesystem::absolute(*p).lexically_normal().string();
}

/// The fully resolved configuration. The output directory is left out so the
/// echo written into an output directory does not depend on where that is.
inline nlohmann::ordered_json config_to_json(const RunConfig& c) {
  detail::ojson j;
  j["psf"] = {{"path", c.psf_path}, {"seed", c.psf_seed}};
  j["sensor"] = {c.sensor.rows, c.sensor.cols};
  j["solver"] = {{"mu1", c.solver.mu1},
                 {"mu2", c.solver.mu2},
                 {"mu3", c.solver.mu3},
                 {"tau", c.solver.tau},
                 {"iters", c.solver.iters},
                 {"tol", c.solver.tol},
                 {"autotune", c.solver.autotune},
                 {"shrink", c.solver.shrink == ShrinkMode::isotropic ? "isotropic" : "anisotropic"}};
  j["network"] = {{"variant", to_string(c.variant)}, {"depth", c.depth}, {"checkpoint", c.checkpoint}};
  detail::ojson ds = {{"dir", c.dataset_dir}, {"images", c.images_dir},        {"count", c.count},
                      {"split", c.split},     {"allow_repeat", c.allow_repeat}, {"valid_region", nullptr},
                      {"image_seed", c.image_seed}};
  if (c.valid_region) ds["valid_region"] = {c.valid_region->rows, c.valid_region->cols};
  j["dataset"] = ds;
  j["noise"] = {{"kind", c.noise.kind == NoiseModel::Kind::none ? "none" : "gaussian"},
                {"sigma", c.noise.sigma},
                {"seed", c.noise.seed}};
  detail::ojson tr = {{"epochs", c.epochs},
                      {"lr", nullptr},
                      {"mse_weight", c.schedule.mse_weight},
                      {"ssim_final", c.schedule.ssim_final},
                      {"ramp_fraction", c.schedule.ramp_fraction},
                      {"sweep_sizes", c.sweep_sizes}};
  if (c.lr) tr["lr"] = *c.lr;
  j["training"] = tr;
  j["reconstruct"] = {{"input", c.input}, {"method", c.method}};
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["timing_runs"] = c.timing_runs;
  return j;
}

}  // namespace lensless

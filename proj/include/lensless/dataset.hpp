#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

#include "lensless/forward_model.hpp"
#include "lensless/metrics.hpp"

namespace lensless {

/// A (measurement, ground truth) pair. Ground truth is at sensor dims, in [0, 1].
struct DatasetPair {
  Measurement measurement;
  Planes ground_truth;
  Dims valid_region;
};

struct Dataset {
  std::vector<DatasetPair> train;
  std::vector<DatasetPair> test;
};

/// splitmix64, used to derive independent per-pair seeds from one run seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Bilinear resampling with pixel-center alignment.
inline RealGrid resize_bilinear(const RealGrid& src, Dims target) {
  require_nonempty(target);
  RealGrid out(target);
  const double sr = static_cast<double>(src.rows()) / target.rows;
  const double sc = static_cast<double>(src.cols()) / target.cols;
  for (std::size_t r = 0; r < target.rows; ++r) {
    const double y = std::clamp((r + 0.5) * sr - 0.5, 0.0, static_cast<double>(src.rows() - 1));
    const std::size_t y0 = static_cast<std::size_t>(y), y1 = std::min(y0 + 1, src.rows() - 1);
    const double fy = y - y0;
    for (std::size_t c = 0; c < target.cols; ++c) {
      const double x = std::clamp((c + 0.5) * sc - 0.5, 0.0, static_cast<double>(src.cols() - 1));
      const std::size_t x0 = static_cast<std::size_t>(x), x1 = std::min(x0 + 1, src.cols() - 1);
      const double fx = x - x0;
      out(r, c) = (1 - fy) * ((1 - fx) * src(y0, x0) + fx * src(y0, x1)) +
                  fy * ((1 - fx) * src(y1, x0) + fx * src(y1, x1));
    }
  }
  return out;
}

/// Random natural-ish test image: a smooth colored background with a handful of
/// flat-colored rectangles and ellipses. Values in [0, 1].
inline Planes procedural_image(Dims d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Planes img = Planes::filled(d, 0.0);
  const double R = static_cast<double>(d.rows), C = static_cast<double>(d.cols);
  for (std::size_t ch = 0; ch < kChannels; ++ch) {
    const double base = 0.1 + 0.3 * unit(rng), gr = 0.3 * (unit(rng) - 0.5), gc = 0.3 * (unit(rng) - 0.5);
    for (std::size_t r = 0; r < d.rows; ++r)
      for (std::size_t c = 0; c < d.cols; ++c) img[ch](r, c) = base + gr * r / R + gc * c / C;
  }
  const int shapes = 4 + static_cast<int>(6 * unit(rng));
  for (int s = 0; s < shapes; ++s) {
    const bool ellipse = unit(rng) < 0.5;
    const double cr = R * unit(rng), cc = C * unit(rng);
    const double hr = R * (0.05 + 0.2 * unit(rng)), hc = C * (0.05 + 0.2 * unit(rng));
    double color[kChannels];
    for (auto& v : color) v = unit(rng);
    for (std::size_t r = 0; r < d.rows; ++r)
      for (std::size_t c = 0; c < d.cols; ++c) {
        const double dr = (r - cr) / hr, dc = (c - cc) / hc;
        const bool inside = ellipse ? dr * dr + dc * dc <= 1.0 : std::abs(dr) <= 1.0 && std::abs(dc) <= 1.0;
        if (!inside) continue;
        for (std::size_t ch = 0; ch < kChannels; ++ch) img[ch](r, c) = color[ch];
      }
  }
  for (auto& p : img.planes)
    for (double& v : p) v = std::clamp(v, 0.0, 1.0);
  return img;
}

inline std::vector<Planes> procedural_images(std::size_t count, Dims d, std::uint64_t seed) {
  std::vector<Planes> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(procedural_image(d, derive_seed(seed, i)));
  return out;
}

/// Resizes to the sensor and rescales so the brightest value is 1.
inline Planes prepare_ground_truth(const Planes& source, Dims sensor) {
  Planes gt;
  double peak = 0.0;
  for (std::size_t c = 0; c < kChannels; ++c) {
    gt[c] = source.dims() == sensor ? source[c] : resize_bilinear(source[c], sensor);
    for (double& v : gt[c]) {
      v = std::max(v, 0.0);
      peak = std::max(peak, v);
    }
  }
  if (peak > 0)
    for (auto& p : gt.planes)
      for (double& v : p) v /= peak;
  return gt;
}

inline Scene embed_scene(const Planes& gt, Dims padded) {
  Scene s;
  for (std::size_t c = 0; c < kChannels; ++c) s[c] = pad_center(gt[c], padded);
  return s;
}

struct DatasetOptions {
  Dims sensor{96, 96};
  std::size_t count = 2;
  double split_fraction = 0.5;  // share of pairs assigned to training
  std::uint64_t seed = 0;
  bool allow_repeat = false;
  NoiseModel noise;
  std::optional<Dims> valid_region;  // default: central 80% of the sensor
};

/// Builds `count` measurement/ground-truth pairs from the sources (cycled only when
/// allow_repeat is set), each measured with its own noise seed, then splits them
/// by a seeded shuffle.
inline Dataset generate_synthetic_dataset(const std::vector<Planes>& sources, const Psf& psf,
                                          const DatasetOptions& opt) {
  if (opt.count < 2) throw InvalidArgument("dataset count must be at least 2");
  if (sources.empty()) throw InvalidArgument("no source images");
  if (opt.count > sources.size() && !opt.allow_repeat)
    throw InvalidArgument("count " + std::to_string(opt.count) + " exceeds the " +
                          std::to_string(sources.size()) + " source images (repeat not allowed)");
  if (!(opt.split_fraction >= 0.0 && opt.split_fraction <= 1.0))
    throw InvalidArgument("split fraction must lie in [0, 1]");
  require_same_dims(psf.sensor_dims(), opt.sensor, "PSF vs sensor dims");
  const ConvolutionOperator H(psf);
  const Dims valid = opt.valid_region.value_or(default_valid_region(opt.sensor));

  std::vector<DatasetPair> pairs;
  pairs.reserve(opt.count);
  for (std::size_t i = 0; i < opt.count; ++i) {
    DatasetPair p;
    p.ground_truth = prepare_ground_truth(sources[i % sources.size()], opt.sensor);
    NoiseModel noise = opt.noise;
    noise.seed = derive_seed(opt.seed ^ opt.noise.seed, i);
    p.measurement = forward_measure(H, embed_scene(p.ground_truth, H.padded_dims()), noise);
    p.valid_region = valid;
    pairs.push_back(std::move(p));
  }

  std::vector<std::size_t> order(opt.count);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(opt.seed);
  std::shuffle(order.begin(), order.end(), rng);
  auto n_train = static_cast<std::size_t>(std::lround(opt.split_fraction * opt.count));
  if (opt.split_fraction > 0 && opt.split_fraction < 1)
    n_train = std::clamp<std::size_t>(n_train, 1, opt.count - 1);

  Dataset ds;
  for (std::size_t i = 0; i < opt.count; ++i)
    (i < n_train ? ds.train : ds.test).push_back(std::move(pairs[order[i]]));
  return ds;
}

}  // namespace lensless

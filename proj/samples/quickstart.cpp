// Library walkthrough: simulate a lensless measurement, reconstruct it with
// classic ADMM, then train a 5-layer unrolled network on a small dataset and
// compare.
//
//   quickstart [output_dir]

#include <cstdio>
#include <filesystem>

#include "lensless/dataset.hpp"
#include "lensless/io.hpp"
#include "lensless/training.hpp"

using namespace lensless;

// Reconstructions live on the padded grid; keep the sensor-sized center.
Planes sensor_view(const Planes& scene, Dims sensor) {
  Planes out;
  for (std::size_t c = 0; c < kChannels; ++c) out[c] = crop_center(scene[c], sensor);
  return out;
}

int main(int argc, char** argv) {
  const std::filesystem::path out = argc > 1 ? argv[1] : "quickstart_out";
  std::filesystem::create_directories(out);

  const Dims sensor{48, 48};
  const Psf psf = make_synthetic_psf(sensor, 11);
  const PrecomputedOperators ops(psf);

  // One scene through the forward model b = C H x + noise.
  const Planes truth = prepare_ground_truth(procedural_image(sensor, 3), sensor);
  const Measurement b = forward_measure(ops.H, embed_scene(truth, ops.padded_dims()), {NoiseModel::Kind::gaussian, 0.02, 1});
  write_png(out / "measurement.png", b);
  write_png(out / "truth.png", truth);

  AdmmParams classic;  // mu = 1e-4, tau = 2e-3
  classic.iters = 100;
  const AdmmResult r = admm_solve(ops, b, classic);
  std::printf("ADMM: %zu iterations, MSE %.4f\n", r.trace.size(), metrics(r.scene, truth, sensor).mse);
  write_png(out / "admm.png", sensor_view(r.scene, sensor));

  // A small training set measured through the same PSF.
  DatasetOptions o;
  o.sensor = sensor;
  o.count = 24;
  o.split_fraction = 0.75;
  o.seed = 42;
  o.noise = {NoiseModel::Kind::gaussian, 0.02, 1};
  const Dataset data = generate_synthetic_dataset(procedural_images(o.count, sensor, 7), psf, o);

  TrainOptions to;
  to.epochs = 10;
  to.lr = default_learning_rate(Variant::leadmm);
  to.on_epoch = [](int e, double loss, double mse) { std::printf("epoch %2d loss %.4f test MSE %.4f\n", e, loss, mse); };
  const TrainResult trained = train(initial_network(Variant::leadmm), data, ops, to);

  const UnrolledOutput le = unrolled_forward(trained.final_params, ops, b, false);
  std::printf("Le-ADMM (5 layers): MSE %.4f\n", metrics(le.scene, truth, sensor).mse);
  write_png(out / "leadmm.png", sensor_view(le.scene, sensor));
  write_checkpoint(out / "leadmm.ltg", trained.final_params, sensor, data.train.size());
  std::printf("images written to %s\n", out.string().c_str());
  return 0;
}

#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "bevscan/cli/run_config.hpp"
#include "bevscan/core/checkpoint.hpp"
#include "bevscan/eval/metrics.hpp"
#include "bevscan/geometry/raster.hpp"
#include "bevscan/train/trainer.hpp"

namespace bevscan {

// Every command creates `out`, writes config.txt there first, and returns a
// process exit code. Training runs in 32-bit floats.

namespace detail {

inline std::filesystem::path prepare_output(const RunConfig& cfg, const std::string& out) {
  std::filesystem::path dir = out.empty() ? cfg.output_dir : out;
  std::filesystem::create_directories(dir);
  cfg.write((dir / "config.txt").string());
  return dir;
}

/// Model weights are drawn from the run seed so a config fully determines
/// the untrained network.
inline Model<float> build_model(const RunConfig& cfg) {
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  return Model<float>(cfg.model(), cfg.dataset(Split::Train).render.rig.build(), rng);
}

inline void load_model(Model<float>& model, const std::string& checkpoint) {
  if (checkpoint.empty()) throw std::invalid_argument("a --checkpoint is required");
  auto params = model.parameters();
  load_params(checkpoint, params);
}

}  // namespace detail

/// Manifest of the train and val splits: one line per scene with its seed,
/// vehicle count, and visible-vehicle count.
inline int cmd_gen(const RunConfig& cfg, const std::string& out) {
  const auto dir = detail::prepare_output(cfg, out);
  std::ofstream manifest(dir / "manifest.csv");
  if (!manifest) throw std::runtime_error("cannot write manifest in " + dir.string());
  manifest << "split,index,seed,vehicles,visible\n";
  for (Split split : {Split::Train, Split::Val}) {
    const Dataset data(cfg.dataset(split));
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto scene = data.scene(i);
      const auto sample = render(scene, data.spec().grid, data.spec().render);
      std::size_t visible = 0;
      for (auto v : sample.targets.visibility) visible += v ? 1 : 0;
      manifest << to_string(split) << ',' << i << ',' << data.seed_of(i) << ',' << scene.vehicles.size() << ','
               << visible << '\n';
    }
  }
  return 0;
}

inline int cmd_train(const RunConfig& cfg, const std::string& out, std::ostream& log = std::cout) {
  const auto dir = detail::prepare_output(cfg, out);
  auto model = detail::build_model(cfg);
  auto tc = cfg.train();
  tc.log_path = (dir / "train_log.csv").string();
  tc.checkpoint_dir = (dir / "checkpoints").string();
  Trainer<float> trainer(model, tc);
  const Dataset data(cfg.dataset(Split::Train));
  trainer.fit(data, [&](std::size_t s, double lr, const LossValues& v) {
    if (s % 100 == 0 || s + 1 == tc.steps)
      log << "step " << s << " lr " << lr << " loss " << v.total << " seg " << v.seg << '\n';
  });
  trainer.save((dir / "checkpoints" / "final.ckpt").string());
  return 0;
}

inline MetricsReport evaluate_checkpoint(const RunConfig& cfg, const std::string& checkpoint) {
  auto model = detail::build_model(cfg);
  detail::load_model(model, checkpoint);
  return evaluate(model, Dataset(cfg.dataset(Split::Val)));
}

inline int cmd_eval(const RunConfig& cfg, const std::string& checkpoint, const std::string& out) {
  const auto dir = detail::prepare_output(cfg, out);
  const auto report = evaluate_checkpoint(cfg, checkpoint);
  report.write_csv((dir / "metrics.csv").string());
  return 0;
}

/// Predicted mask and ground truth of val sample `export.sample` as PGMs,
/// plus the camera images (PPM) and, for point modalities, the cloud (XYZ).
inline int cmd_export(const RunConfig& cfg, const std::string& checkpoint, const std::string& out) {
  const auto dir = detail::prepare_output(cfg, out);
  auto model = detail::build_model(cfg);
  detail::load_model(model, checkpoint);
  const Dataset data(cfg.dataset(Split::Val));
  const auto ex = data.get<float>(cfg.export_sample);
  const auto prob = predict_probability(model, ex);
  const auto& tg = ex.sample.targets;
  std::vector<float> mask(prob.size());
  for (std::size_t i = 0; i < prob.size(); ++i) mask[i] = prob[i] > 0.5f ? 1.f : 0.f;
  const auto stem = "sample_" + std::to_string(cfg.export_sample);
  write_pgm((dir / (stem + "_pred.pgm")).string(), mask, tg.nz, tg.nx);
  write_pgm((dir / (stem + "_prob.pgm")).string(), prob, tg.nz, tg.nx);
  write_pgm((dir / (stem + "_gt.pgm")).string(), tg.seg, tg.nz, tg.nx);
  write_pgm((dir / (stem + "_gt_visible.pgm")).string(), visible_only(tg).seg, tg.nz, tg.nx);
  for (std::size_t v = 0; v < ex.sample.views; ++v)
    write_ppm((dir / (stem + "_view" + std::to_string(v) + ".ppm")).string(), ex.sample, v);
  if (cfg.modality != Modality::Camera) write_xyz((dir / (stem + "_points.xyz")).string(), ex.sample.points);
  return 0;
}

}  // namespace bevscan

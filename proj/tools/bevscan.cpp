#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "bevscan/cli/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Multi-view BEV vehicle segmentation: data generation, training, evaluation, export"};
  app.require_subcommand(1);

  std::string config_path, checkpoint, out;
  auto add_common = [&](CLI::App* cmd, bool needs_checkpoint) {
    cmd->add_option("--config", config_path, "key = value run configuration")->required()->check(CLI::ExistingFile);
    auto* ck = cmd->add_option("--checkpoint", checkpoint, "checkpoint file written by train");
    if (needs_checkpoint) ck->required();
    cmd->add_option("--out", out, "output directory (default: output_dir from the config)");
  };
  auto* gen = app.add_subcommand("gen", "render the train and val splits and write a manifest");
  auto* train = app.add_subcommand("train", "train a model; writes checkpoints and a CSV loss log");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the val split; writes metrics.csv");
  auto* exp = app.add_subcommand("export", "write predicted and ground-truth masks for one val sample");
  add_common(gen, false);
  add_common(train, false);
  add_common(eval, true);
  add_common(exp, true);

  CLI11_PARSE(app, argc, argv);

  try {
    auto cfg = bevscan::RunConfig::load(config_path);
    cfg.apply_environment();
    if (*gen) return bevscan::cmd_gen(cfg, out);
    if (*train) return bevscan::cmd_train(cfg, out);
    if (*eval) return bevscan::cmd_eval(cfg, checkpoint, out);
    if (*exp) return bevscan::cmd_export(cfg, checkpoint, out);
  } catch (const std::exception& e) {
    std::cerr << "bevscan: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

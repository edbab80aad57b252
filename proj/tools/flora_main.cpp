#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "flora/cli_commands.hpp"

using namespace flora;

int main(int argc, char** argv) {
  CLI::App app{"SAR-to-optical reconstruction and flood-water segmentation"};
  app.require_subcommand(1);

  uint64_t seed = 0;
  std::string precision;
  bool deterministic = true;
  app.add_option("--seed", seed, "Override the run seed");
  app.add_option("--precision", precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
  app.add_flag("--deterministic,!--no-deterministic", deterministic,
               "Deterministic execution (always on for the CPU backend)");

  // synth
  SynthOptions synth;
  int64_t size = 64;
  auto* s = app.add_subcommand("synth", "Generate synthetic flood scenes");
  s->add_option("-n,--n", synth.count, "Number of tiles")->required();
  s->add_option("-o,--out", synth.out, "Output directory")->required();
  s->add_option("--size", size, "Tile side length (divisible by 16)");
  s->add_option("--water-fraction", synth.scene.water_fraction, "Target water fraction in [0,1]");
  s->add_option("--speckle", synth.scene.speckle_strength, "Speckle strength >= 0");
  s->add_option("--cloud-fraction", synth.scene.cloud_fraction, "Prior cloud fraction in [0,1]");
  s->add_option("--octaves", synth.scene.terrain_octaves, "Terrain noise octaves");

  // train
  TrainOptions train;
  std::string resume_path;
  auto* t = app.add_subcommand("train", "Fit a model on a bundle directory");
  t->add_option("-c,--config", train.config, "JSON config (flat keys)");
  t->add_option("-d,--data", train.data, "Bundle directory")->required();
  t->add_option("-o,--out", train.out, "Run directory")->required();
  t->add_option("--resume", resume_path, "Checkpoint to continue from");

  // eval
  EvalOptions eval;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint; writes metrics.json, CSVs and plots");
  e->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required();
  e->add_option("-d,--data", eval.data, "Bundle directory")->required();
  e->add_option("-o,--out", eval.out, "Output directory")->required();
  e->add_flag("--sar-only", eval.sar_only, "Force the SAR-driven prior path");
  e->add_flag("--plots,!--no-plots", eval.plots, "Emit PNG plots from the CSVs");
  e->add_option("--lpips-cmd", eval.lpips_cmd, "External perceptual scorer: <cmd> a.png b.png -> float");

  // infer
  InferOptions infer;
  auto* i = app.add_subcommand("infer", "Run one bundle through the model");
  i->add_option("--checkpoint", infer.checkpoint, "Checkpoint file")->required();
  i->add_option("--input", infer.input, "Bundle directory (prior optional)")->required();
  i->add_option("-o,--out", infer.out, "Output directory")->required();
  i->add_option("--threshold", infer.threshold, "Binary mask threshold");

  // ablate
  AblateOptions ablate;
  auto* a = app.add_subcommand("ablate", "Train full/no_film/no_teacher/no_decouple and compare");
  a->add_option("-c,--config", ablate.config, "JSON config (flat keys)");
  a->add_option("-d,--data", ablate.data, "Bundle directory")->required();
  a->add_option("-o,--out", ablate.out, "Output directory")->required();
  a->add_option("--seeds", ablate.seeds, "Seeds to average over");

  CLI11_PARSE(app, argc, argv);
  (void)deterministic;

  try {
    if (*s) {
      if (size % 16) throw std::invalid_argument("--size must be divisible by 16");
      synth.scene.height = size;
      synth.scene.width = size;
      if (seed) synth.scene.seed = seed;
      return cmd_synth(synth);
    }
    if (*t) {
      if (seed) train.seed_override = seed;
      if (!precision.empty()) train.precision_override = precision;
      if (!resume_path.empty()) train.resume = resume_path;
      return cmd_train(train);
    }
    if (*e) return cmd_eval(eval);
    if (*i) return cmd_infer(infer);
    if (*a) return cmd_ablate(ablate);
  } catch (const std::exception& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return 1;
  }
  return 0;
}

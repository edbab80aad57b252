#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "flora/tilestore.hpp"
#include "flora/trainer.hpp"

namespace flora {

struct SynthOptions {
  int64_t count = 4;
  std::filesystem::path out;
  SceneSpec scene;  // per-tile seed = scene.seed + index
};

struct TrainOptions {
  std::filesystem::path config;  // JSON file; empty = defaults
  std::filesystem::path data;
  std::filesystem::path out;
  std::optional<std::filesystem::path> resume;
  std::optional<uint64_t> seed_override;
  std::optional<std::string> precision_override;
};

struct EvalOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path data;
  std::filesystem::path out;
  bool sar_only = false;
  bool plots = true;
  std::string lpips_cmd;  // external scorer: <cmd> a.png b.png -> float on stdout
};

struct InferOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path input;  // bundle directory (possibly SAR-only)
  std::filesystem::path out;
  double threshold = 0.5;
};

struct AblateOptions {
  std::filesystem::path config;
  std::filesystem::path data;
  std::filesystem::path out;
  std::vector<uint64_t> seeds = {1, 2, 3};
};

int cmd_synth(const SynthOptions& opt);
int cmd_train(const TrainOptions& opt);
int cmd_eval(const EvalOptions& opt);
int cmd_infer(const InferOptions& opt);
int cmd_ablate(const AblateOptions& opt);

/// Loads every bundle below a directory, sorted by path.
std::vector<TileBundle> load_dataset(const std::filesystem::path& dir);

}  // namespace flora

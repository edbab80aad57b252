#pragma once

#include <filesystem>
#include <functional>

#include "flora/checkpoint.hpp"
#include "flora/losses.hpp"
#include "flora/metrics.hpp"
#include "flora/tilestore.hpp"

namespace flora {

struct TrainConfig {
  double lr0 = 1e-4;
  int64_t cosine_steps = 0;  // 0 = derive from 200 epochs worth of steps
  double lr_floor = 0.0;
  int64_t epochs = 1;
  int64_t steps = 0;  // optional hard step budget; 0 = epochs only
  int64_t batch = 4;
  uint64_t seed = 1;
  int64_t checkpoint_every = 0;  // steps; 0 = final only
  double holdout_fraction = 0.0;
  std::string precision = "f32";
  LossWeights<double> weights;
  ModelConfig model;
  AblationSet ablation;

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
  uint64_t hash() const;
};

/// lr0 * 0.5 * (1 + cos(pi * min(step,T)/T)), floored; zero-horizon keeps lr0.
double cosine_lr(int64_t step, double lr0, int64_t cosine_steps, double floor);

template <class T>
class Trainer {
 public:
  Trainer(const TrainConfig& cfg, uint64_t seed_override = 0);

  /// One optimizer step over a batch of tiles; returns the averaged breakdown.
  LossBreakdown train_step(const std::vector<const TileBundle*>& batch);

  /// Full protocol: epoch loop, JSONL logging, periodic checkpoints, final
  /// metric snapshot. Returns the final checkpoint path.
  std::filesystem::path fit(const std::vector<TileBundle>& dataset, const std::filesystem::path& out_dir);

  /// Inference on one tile (no gradients); fills y_hat / m_hat (f64).
  void infer(const TileBundle& tile, Tensor<double>& y_hat, Tensor<double>& m_hat, bool force_sar_only = false) const;

  TileMetrics evaluate_tile(const TileBundle& tile, bool force_sar_only = false) const;

  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  AdamState<T>& opt_state() { return opt_; }
  const TrainConfig& config() const { return cfg_; }
  int64_t step() const { return opt_.step; }

  void save(const std::filesystem::path& path, const std::string& metrics_json = "") const;
  void load(const std::filesystem::path& path);

  /// used by tests to scale the segmentation loss without touching weights
  std::function<void(LossWeights<double>&)> weights_hook;

 private:
  TrainConfig cfg_;
  ParamStore<T> params_;
  AdamState<T> opt_;
  int64_t epoch_ = 0;

  void adamw_update(const std::unordered_map<std::string, Var<T>>& touched, Graph<T>& g, double lr);
};

extern template class Trainer<float>;
extern template class Trainer<double>;

/// Shared by the trainer and the eval command.
template <class T>
TileMetrics evaluate_bundle(const TileBundle& tile, ParamStore<T>& params, const TrainConfig& cfg,
                            bool force_sar_only);
extern template TileMetrics evaluate_bundle<float>(const TileBundle&, ParamStore<float>&, const TrainConfig&, bool);
extern template TileMetrics evaluate_bundle<double>(const TileBundle&, ParamStore<double>&, const TrainConfig&, bool);

}  // namespace flora

#include "flora/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "flora/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace flora {

void TrainConfig::validate() const {
  if (lr0 <= 0) throw std::invalid_argument("lr0 must be > 0");
  if (batch < 1) throw std::invalid_argument("batch must be >= 1");
  if (epochs < 0 || steps < 0) throw std::invalid_argument("epochs/steps must be >= 0");
  if (holdout_fraction < 0 || holdout_fraction >= 1) throw std::invalid_argument("holdout_fraction in [0,1)");
  if (precision != "f32" && precision != "f64") throw std::invalid_argument("precision must be f32 or f64");
  LossWeights<double> w = weights;
  w.validate();
  model.validate();
}

namespace {

const char* ablation_name(Ablation a) {
  switch (a) {
    case Ablation::kNoFilm: return "no_film";
    case Ablation::kNoTeacher: return "no_teacher";
    case Ablation::kNoDecouple: return "no_decouple";
  }
  return "?";
}

Ablation ablation_from_name(const std::string& s) {
  if (s == "no_film") return Ablation::kNoFilm;
  if (s == "no_teacher") return Ablation::kNoTeacher;
  if (s == "no_decouple") return Ablation::kNoDecouple;
  throw std::invalid_argument("unknown ablation '" + s + "'");
}

}  // namespace

std::string TrainConfig::to_json() const {
  json j;
  j["lr0"] = lr0;
  j["cosine_steps"] = cosine_steps;
  j["lr_floor"] = lr_floor;
  j["epochs"] = epochs;
  j["steps"] = steps;
  j["batch"] = batch;
  j["seed"] = seed;
  j["checkpoint_every"] = checkpoint_every;
  j["holdout_fraction"] = holdout_fraction;
  j["precision"] = precision;
  j["base_channels"] = model.base_channels;
  j["window"] = model.window;
  j["heads"] = model.heads;
  j["seg_from_rgb"] = model.seg_from_rgb;
  j["rgb_from_seg"] = model.rgb_from_seg;
  j["prior_channels"] = model.prior_channels;
  j["lambda_c"] = weights.lambda_c;
  j["lambda_s"] = weights.lambda_s;
  j["lambda_f"] = weights.lambda_f;
  j["lambda_e"] = weights.lambda_e;
  j["mu_d"] = weights.mu_d;
  j["mu_b"] = weights.mu_b;
  j["mu_h"] = weights.mu_h;
  j["eta"] = weights.eta;
  j["eps_charb"] = weights.eps_charb;
  j["eps_dice"] = weights.eps_dice;
  j["eps_log"] = weights.eps_log;
  j["rgb_to_seg_ratio"] = weights.rgb_to_seg_ratio;
  std::vector<std::string> abl;
  for (Ablation a : ablation) abl.push_back(ablation_name(a));
  j["ablation"] = abl;
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  TrainConfig c;
  static const std::set<std::string> known = {
      "lr0",   "cosine_steps", "lr_floor", "epochs", "steps", "batch", "seed", "checkpoint_every",
      "holdout_fraction", "precision", "base_channels", "window", "heads", "seg_from_rgb", "rgb_from_seg",
      "prior_channels", "lambda_c", "lambda_s", "lambda_f", "lambda_e", "mu_d", "mu_b", "mu_h", "eta",
      "eps_charb", "eps_dice", "eps_log", "rgb_to_seg_ratio", "ablation"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw std::invalid_argument("unknown config key '" + key + "'");
  c.lr0 = j.value("lr0", c.lr0);
  c.cosine_steps = j.value("cosine_steps", c.cosine_steps);
  c.lr_floor = j.value("lr_floor", c.lr_floor);
  c.epochs = j.value("epochs", c.epochs);
  c.steps = j.value("steps", c.steps);
  c.batch = j.value("batch", c.batch);
  c.seed = j.value("seed", c.seed);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.holdout_fraction = j.value("holdout_fraction", c.holdout_fraction);
  c.precision = j.value("precision", c.precision);
  c.model.base_channels = j.value("base_channels", c.model.base_channels);
  c.model.window = j.value("window", c.model.window);
  c.model.heads = j.value("heads", c.model.heads);
  c.model.seg_from_rgb = j.value("seg_from_rgb", c.model.seg_from_rgb);
  c.model.rgb_from_seg = j.value("rgb_from_seg", c.model.rgb_from_seg);
  c.model.prior_channels = j.value("prior_channels", c.model.prior_channels);
  c.weights.lambda_c = j.value("lambda_c", c.weights.lambda_c);
  c.weights.lambda_s = j.value("lambda_s", c.weights.lambda_s);
  c.weights.lambda_f = j.value("lambda_f", c.weights.lambda_f);
  c.weights.lambda_e = j.value("lambda_e", c.weights.lambda_e);
  c.weights.mu_d = j.value("mu_d", c.weights.mu_d);
  c.weights.mu_b = j.value("mu_b", c.weights.mu_b);
  c.weights.mu_h = j.value("mu_h", c.weights.mu_h);
  c.weights.eta = j.value("eta", c.weights.eta);
  c.weights.eps_charb = j.value("eps_charb", c.weights.eps_charb);
  c.weights.eps_dice = j.value("eps_dice", c.weights.eps_dice);
  c.weights.eps_log = j.value("eps_log", c.weights.eps_log);
  c.weights.rgb_to_seg_ratio = j.value("rgb_to_seg_ratio", c.weights.rgb_to_seg_ratio);
  if (j.contains("ablation"))
    for (const auto& s : j["ablation"]) c.ablation.insert(ablation_from_name(s.get<std::string>()));
  c.validate();
  return c;
}

uint64_t TrainConfig::hash() const { return fnv1a(to_json()); }

double cosine_lr(int64_t step, double lr0, int64_t cosine_steps, double floor) {
  if (cosine_steps <= 0) return std::max(lr0, floor);
  const double t = static_cast<double>(std::min(step, cosine_steps)) / static_cast<double>(cosine_steps);
  return std::max(lr0 * 0.5 * (1.0 + std::cos(M_PI * t)), floor);
}

template <class T>
Trainer<T>::Trainer(const TrainConfig& cfg, uint64_t seed_override)
    : cfg_(cfg), params_(seed_override ? seed_override : cfg.seed) {
  cfg_.validate();
  if (seed_override) cfg_.seed = seed_override;
}

template <class T>
void Trainer<T>::adamw_update(const std::unordered_map<std::string, Var<T>>& touched, Graph<T>& g, double lr) {
  const T beta1 = T(0.9), beta2 = T(0.999), eps = T(1e-8), wd = T(0.01);
  ++opt_.step;
  const double bc1 = 1.0 - std::pow(0.9, static_cast<double>(opt_.step));
  const double bc2 = 1.0 - std::pow(0.999, static_cast<double>(opt_.step));

  // deterministic name order
  std::vector<std::string> names;
  names.reserve(touched.size());
  for (const auto& [name, _] : touched) names.push_back(name);
  std::sort(names.begin(), names.end());

  for (const std::string& name : names) {
    const Var<T>& v = touched.at(name);
    Tensor<T>& theta = params_.at(name);
    auto mit = opt_.m.find(name);
    if (mit == opt_.m.end()) {
      opt_.m.emplace(name, Tensor<T>(theta.shape));
      opt_.v.emplace(name, Tensor<T>(theta.shape));
    }
    Tensor<T>& m = opt_.m.at(name);
    Tensor<T>& vv = opt_.v.at(name);
    const Tensor<T>* grad = g.grad(v.id);
    const T lrT = static_cast<T>(lr);
    for (int64_t i = 0; i < theta.numel(); ++i) {
      const T gi = grad ? grad->data[static_cast<size_t>(i)] : T(0);
      T& mi = m.data[static_cast<size_t>(i)];
      T& vi = vv.data[static_cast<size_t>(i)];
      mi = beta1 * mi + (T(1) - beta1) * gi;
      vi = beta2 * vi + (T(1) - beta2) * gi * gi;
      const T mhat = mi / static_cast<T>(bc1);
      const T vhat = vi / static_cast<T>(bc2);
      T& th = theta.data[static_cast<size_t>(i)];
      th -= lrT * (mhat / (std::sqrt(vhat) + eps) + wd * th);
    }
  }
}

template <class T>
LossBreakdown Trainer<T>::train_step(const std::vector<const TileBundle*>& batch) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  Graph<T> g;
  ParamCtx<T> P(g, params_);

  LossWeights<double> wd = cfg_.weights;
  if (cfg_.ablation.count(Ablation::kNoTeacher)) wd.eta = 0.0;
  if (weights_hook) weights_hook(wd);
  LossWeights<T> w;
  w.lambda_c = static_cast<T>(wd.lambda_c);
  w.lambda_s = static_cast<T>(wd.lambda_s);
  w.lambda_f = static_cast<T>(wd.lambda_f);
  w.lambda_e = static_cast<T>(wd.lambda_e);
  w.mu_d = static_cast<T>(wd.mu_d);
  w.mu_b = static_cast<T>(wd.mu_b);
  w.mu_h = static_cast<T>(wd.mu_h);
  w.eta = static_cast<T>(wd.eta);
  w.eps_charb = static_cast<T>(wd.eps_charb);
  w.eps_dice = static_cast<T>(wd.eps_dice);
  w.eps_log = static_cast<T>(wd.eps_log);
  w.rgb_to_seg_ratio = static_cast<T>(wd.rgb_to_seg_ratio);

  ForwardOptions opts;
  opts.ablation = cfg_.ablation;
  opts.hydro_decode = wd.mu_h > 0;

  Var<T> total;
  LossBreakdown agg;
  for (size_t i = 0; i < batch.size(); ++i) {
    const TileBundle& tile = *batch[i];
    const Tensor<T> sar = tensor_cast<T>(tile.sar);
    Tensor<T> prior;
    const Tensor<T>* prior_ptr = nullptr;
    if (tile.prior) {
      prior = tensor_cast<T>(*tile.prior);
      prior_ptr = &prior;
    }
    ForwardOutput<T> out = forward(P, cfg_.model, sar, prior_ptr, opts);
    Var<T> y = g.constant(tensor_cast<T>(tile.optical));
    Var<T> m = g.constant(tensor_cast<T>(tile.mask));
    Var<T> sar_v = g.constant(sar);
    auto [tile_total, bd] = total_loss(P, out, y, m, sar_v, w);
    const std::string bad = bd.first_non_finite();
    if (!bad.empty())
      throw std::runtime_error("non-finite loss term '" + bad + "' on tile " + tile.id + " at step " +
                               std::to_string(opt_.step));
    total = i == 0 ? tile_total : add(total, tile_total);
    agg.charb += bd.charb;
    agg.ssim += bd.ssim;
    agg.fft += bd.fft;
    agg.edge += bd.edge;
    agg.dice += bd.dice;
    agg.bce += bd.bce;
    agg.hydro += bd.hydro;
    agg.distill += bd.distill;
    agg.l_rgb += bd.l_rgb;
    agg.l_seg += bd.l_seg;
    agg.total += bd.total;
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  agg.charb *= inv;
  agg.ssim *= inv;
  agg.fft *= inv;
  agg.edge *= inv;
  agg.dice *= inv;
  agg.bce *= inv;
  agg.hydro *= inv;
  agg.distill *= inv;
  agg.l_rgb *= inv;
  agg.l_seg *= inv;
  agg.total *= inv;

  Var<T> mean_total = affine(total, static_cast<T>(inv), T(0));
  g.backward(mean_total);

  const double lr = cosine_lr(opt_.step, cfg_.lr0, cfg_.cosine_steps, cfg_.lr_floor);
  adamw_update(P.touched(), g, lr);
  return agg;
}

template <class T>
fs::path Trainer<T>::fit(const std::vector<TileBundle>& dataset, const fs::path& out_dir) {
  if (dataset.empty()) throw std::invalid_argument("fit: empty dataset");
  fs::create_directories(out_dir);

  // deterministic holdout split
  std::vector<int64_t> order(dataset.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);
  Rng split_rng(mix_seed(cfg_.seed, 0x5917));
  split_rng.shuffle(order.begin(), order.end());
  const int64_t n_hold = static_cast<int64_t>(std::floor(cfg_.holdout_fraction * static_cast<double>(dataset.size())));
  std::vector<int64_t> hold(order.begin(), order.begin() + n_hold);
  std::vector<int64_t> train(order.begin() + n_hold, order.end());
  if (train.empty()) throw std::invalid_argument("fit: holdout leaves no training tiles");
  std::sort(hold.begin(), hold.end());
  std::sort(train.begin(), train.end());

  if (cfg_.cosine_steps == 0) {
    const int64_t steps_per_epoch = (static_cast<int64_t>(train.size()) + cfg_.batch - 1) / cfg_.batch;
    cfg_.cosine_steps = 200 * steps_per_epoch;  // decay horizon when unspecified
  }

  std::ofstream log(out_dir / "train_log.jsonl", std::ios::app);
  const int64_t step_budget = cfg_.steps;
  bool done = cfg_.epochs == 0 && step_budget == 0;

  for (epoch_ = 0; !done; ++epoch_) {
    if (step_budget == 0 && epoch_ >= cfg_.epochs) break;
    std::vector<int64_t> perm = train;
    Rng epoch_rng(mix_seed(cfg_.seed, 0xE0C + static_cast<uint64_t>(epoch_)));
    epoch_rng.shuffle(perm.begin(), perm.end());
    for (size_t at = 0; at < perm.size(); at += static_cast<size_t>(cfg_.batch)) {
      std::vector<const TileBundle*> batch;
      for (size_t k = at; k < std::min(perm.size(), at + static_cast<size_t>(cfg_.batch)); ++k)
        batch.push_back(&dataset[static_cast<size_t>(perm[k])]);
      const double lr = cosine_lr(opt_.step + 1, cfg_.lr0, cfg_.cosine_steps, cfg_.lr_floor);
      LossBreakdown bd = train_step(batch);
      json line;
      line["step"] = opt_.step;
      line["lr"] = lr;
      line["charb"] = bd.charb;
      line["ssim"] = bd.ssim;
      line["fft"] = bd.fft;
      line["edge"] = bd.edge;
      line["dice"] = bd.dice;
      line["bce"] = bd.bce;
      line["hydro"] = bd.hydro;
      line["distill"] = bd.distill;
      line["l_rgb"] = bd.l_rgb;
      line["l_seg"] = bd.l_seg;
      line["total"] = bd.total;
      log << line.dump() << "\n";
      if (cfg_.checkpoint_every > 0 && opt_.step % cfg_.checkpoint_every == 0)
        save(out_dir / ("ckpt_step" + std::to_string(opt_.step) + ".flora"));
      if (step_budget > 0 && opt_.step >= step_budget) {
        done = true;
        break;
      }
    }
    if (step_budget == 0 && epoch_ + 1 >= cfg_.epochs) done = true;
  }
  log.flush();

  // ensure parameters exist even for epochs=0 (initialization checkpoint)
  if (params_.tensors().empty()) {
    Graph<T> g;
    ParamCtx<T> P(g, params_);
    ForwardOptions opts;
    opts.ablation = cfg_.ablation;
    const TileBundle& t0 = dataset[0];
    const Tensor<T> sar = tensor_cast<T>(t0.sar);
    Tensor<T> prior;
    const Tensor<T>* pp = nullptr;
    if (t0.prior) {
      prior = tensor_cast<T>(*t0.prior);
      pp = &prior;
    }
    forward(P, cfg_.model, sar, pp, opts);
  }

  // final metric snapshot on the holdout (train split when no holdout)
  const std::vector<int64_t>& eval_idx = hold.empty() ? train : hold;
  std::vector<TileMetrics> per_tile;
  for (int64_t i : eval_idx) per_tile.push_back(evaluate_tile(dataset[static_cast<size_t>(i)]));
  const MetricSummary summary = aggregate(per_tile);
  json msnap;
  msnap["split"] = hold.empty() ? "train" : "holdout";
  msnap["tiles"] = summary.tiles;
  msnap["psnr"] = std::isfinite(summary.psnr) ? json(summary.psnr) : json("inf");
  msnap["ssim"] = summary.ssim;
  msnap["iou"] = summary.iou;
  msnap["dice"] = summary.dice;
  msnap["f1"] = summary.f1;

  const fs::path final_path = out_dir / "checkpoint.flora";
  save(final_path, msnap.dump());
  return final_path;
}

template <class T>
void Trainer<T>::infer(const TileBundle& tile, Tensor<double>& y_hat, Tensor<double>& m_hat,
                       bool force_sar_only) const {
  Graph<T> g;
  ParamStore<T>& store = const_cast<ParamStore<T>&>(params_);
  ParamCtx<T> P(g, store);
  ForwardOptions opts;
  opts.ablation = cfg_.ablation;
  const Tensor<T> sar = tensor_cast<T>(tile.sar);
  Tensor<T> prior;
  const Tensor<T>* pp = nullptr;
  if (tile.prior && !force_sar_only) {
    prior = tensor_cast<T>(*tile.prior);
    pp = &prior;
  }
  ForwardOutput<T> out = forward(P, cfg_.model, sar, pp, opts);
  y_hat = tensor_cast<double>(out.y_hat.val());
  m_hat = tensor_cast<double>(out.m_hat.val());
}

template <class T>
TileMetrics Trainer<T>::evaluate_tile(const TileBundle& tile, bool force_sar_only) const {
  return evaluate_bundle(tile, const_cast<ParamStore<T>&>(params_), cfg_, force_sar_only);
}

template <class T>
void Trainer<T>::save(const fs::path& path, const std::string& metrics_json) const {
  CheckpointMeta meta;
  meta.step = opt_.step;
  meta.epoch = epoch_;
  meta.config_json = cfg_.to_json();
  meta.config_hash = cfg_.hash();
  meta.metrics_json = metrics_json;
  meta.precision = sizeof(T) == 4 ? "f32" : "f64";
  save_checkpoint(path, params_, &opt_, meta);
}

template <class T>
void Trainer<T>::load(const fs::path& path) {
  params_.tensors().clear();
  opt_ = AdamState<T>{};
  CheckpointMeta meta = load_checkpoint(path, params_, &opt_);
  cfg_ = TrainConfig::from_json(meta.config_json);
  epoch_ = meta.epoch;
}

template <class T>
TileMetrics evaluate_bundle(const TileBundle& tile, ParamStore<T>& params, const TrainConfig& cfg,
                            bool force_sar_only) {
  Graph<T> g;
  ParamCtx<T> P(g, params);
  ForwardOptions opts;
  opts.ablation = cfg.ablation;
  const Tensor<T> sar = tensor_cast<T>(tile.sar);
  Tensor<T> prior;
  const Tensor<T>* pp = nullptr;
  if (tile.prior && !force_sar_only) {
    prior = tensor_cast<T>(*tile.prior);
    pp = &prior;
  }
  ForwardOutput<T> out = forward(P, cfg.model, sar, pp, opts);

  TileMetrics tm;
  tm.tile_id = tile.id;
  const Tensor<double> y_hat = tensor_cast<double>(out.y_hat.val());
  const Tensor<double> y = tensor_cast<double>(tile.optical);
  const Tensor<double> m_hat = tensor_cast<double>(out.m_hat.val());
  const Tensor<double> m = tensor_cast<double>(tile.mask);
  tm.psnr = psnr(y_hat, y);
  tm.ssim = ssim_metric(y_hat, y);
  tm.seg = seg_scores(m_hat, m, 0.5);
  return tm;
}

template class Trainer<float>;
template class Trainer<double>;
template TileMetrics evaluate_bundle<float>(const TileBundle&, ParamStore<float>&, const TrainConfig&, bool);
template TileMetrics evaluate_bundle<double>(const TileBundle&, ParamStore<double>&, const TrainConfig&, bool);

}  // namespace flora

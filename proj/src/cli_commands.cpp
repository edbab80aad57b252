#include "flora/cli_commands.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "flora/image_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace flora {

namespace {

TrainConfig read_config(const fs::path& path) {
  if (path.empty()) return TrainConfig{};
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return TrainConfig::from_json(ss.str());
}

std::string fmt_metric(double v) {
  if (!std::isfinite(v)) return "inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

json summary_to_json(const MetricSummary& s) {
  json mean;
  mean["psnr"] = std::isfinite(s.psnr) ? json(s.psnr) : json("inf");
  mean["ssim"] = s.ssim;
  mean["iou"] = s.iou;
  mean["dice"] = s.dice;
  mean["precision"] = s.precision;
  mean["recall"] = s.recall;
  mean["f1"] = s.f1;
  if (s.lpips >= 0) mean["lpips"] = s.lpips;
  json pooled;
  pooled["tp"] = s.pooled.tp;
  pooled["fp"] = s.pooled.fp;
  pooled["fn"] = s.pooled.fn;
  pooled["tn"] = s.pooled.tn;
  json pooled_scores;
  pooled_scores["iou"] = s.pooled_scores.iou;
  pooled_scores["dice"] = s.pooled_scores.dice;
  pooled_scores["precision"] = s.pooled_scores.precision;
  pooled_scores["recall"] = s.pooled_scores.recall;
  pooled_scores["f1"] = s.pooled_scores.f1;
  json out;
  out["tiles"] = s.tiles;
  out["mean"] = mean;
  out["pooled_confusion"] = pooled;
  out["pooled"] = pooled_scores;
  return out;
}

void write_per_tile_csv(const fs::path& path, const std::vector<TileMetrics>& rows, bool with_lpips) {
  std::ofstream f(path);
  f << "tile,psnr,ssim,iou,dice,precision,recall,f1,tp,fp,fn,tn";
  if (with_lpips) f << ",lpips";
  f << "\n";
  for (const auto& r : rows) {
    f << r.tile_id << "," << fmt_metric(r.psnr) << "," << fmt_metric(r.ssim) << "," << fmt_metric(r.seg.iou) << ","
      << fmt_metric(r.seg.dice) << "," << fmt_metric(r.seg.precision) << "," << fmt_metric(r.seg.recall) << ","
      << fmt_metric(r.seg.f1) << "," << r.seg.counts.tp << "," << r.seg.counts.fp << "," << r.seg.counts.fn << ","
      << r.seg.counts.tn;
    if (with_lpips) f << "," << (r.lpips >= 0 ? fmt_metric(r.lpips) : "");
    f << "\n";
  }
}

void write_confusion_csv(const fs::path& path, const ConfusionCounts& c) {
  std::ofstream f(path);
  f << ",pred_flood,pred_dry\n";
  f << "true_flood," << c.tp << "," << c.fn << "\n";
  f << "true_dry," << c.fp << "," << c.tn << "\n";
}

/// renders score plots strictly from the CSV so reruns are reproducible
void plots_from_csv(const fs::path& csv_path, const fs::path& out_dir) {
  std::ifstream f(csv_path);
  if (!f) return;
  std::string header;
  std::getline(f, header);
  std::vector<double> psnr_v, iou_v, x;
  std::string line;
  while (std::getline(f, line)) {
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 8) continue;
    x.push_back(static_cast<double>(x.size()));
    psnr_v.push_back(cells[1] == "inf" ? 60.0 : std::stod(cells[1]));
    iou_v.push_back(std::stod(cells[3]));
  }
  if (x.empty()) return;
  PlotSeries ps;
  ps.label = "psnr";
  ps.x = x;
  ps.y = psnr_v;
  ps.rgb[0] = 30;
  ps.rgb[1] = 90;
  ps.rgb[2] = 200;
  write_line_plot(out_dir / "scores_psnr.png", {ps}, "per-tile psnr");
  PlotSeries is;
  is.label = "iou";
  is.x = x;
  is.y = iou_v;
  is.rgb[0] = 200;
  is.rgb[1] = 90;
  is.rgb[2] = 30;
  write_line_plot(out_dir / "scores_iou.png", {is}, "per-tile iou");
}

void loss_curve_from_log(const fs::path& log_path, const fs::path& out_png) {
  std::ifstream f(log_path);
  if (!f) return;
  PlotSeries total, rgb, seg;
  total.label = "total";
  rgb.label = "rgb";
  seg.label = "seg";
  rgb.rgb[0] = 30;
  rgb.rgb[1] = 140;
  rgb.rgb[2] = 60;
  seg.rgb[0] = 200;
  seg.rgb[1] = 60;
  seg.rgb[2] = 60;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) continue;
    const double step = j.value("step", 0.0);
    total.x.push_back(step);
    total.y.push_back(j.value("total", 0.0));
    rgb.x.push_back(step);
    rgb.y.push_back(j.value("l_rgb", 0.0));
    seg.x.push_back(step);
    seg.y.push_back(j.value("l_seg", 0.0));
  }
  if (total.x.empty()) return;
  write_line_plot(out_png, {total, rgb, seg}, "training loss");
}

double run_lpips(const std::string& cmd, const fs::path& a, const fs::path& b) {
  const std::string full = cmd + " " + a.string() + " " + b.string();
  FILE* pipe = popen(full.c_str(), "r");
  if (!pipe) throw std::runtime_error("lpips scorer failed to start: " + full);
  char buf[128] = {0};
  std::string out;
  while (fgets(buf, sizeof buf, pipe)) out += buf;
  const int rc = pclose(pipe);
  if (rc != 0) throw std::runtime_error("lpips scorer exited with " + std::to_string(rc));
  return std::stod(out);
}

template <class T>
int eval_with(const EvalOptions& opt, const TrainConfig& cfg) {
  ParamStore<T> params;
  CheckpointMeta meta = load_checkpoint<T>(opt.checkpoint, params, nullptr);
  (void)meta;
  std::vector<TileBundle> tiles = load_dataset(opt.data);
  if (tiles.empty()) throw std::runtime_error("no tiles found under " + opt.data.string());
  fs::create_directories(opt.out);

  std::vector<TileMetrics> rows;
  const bool lpips = !opt.lpips_cmd.empty();
  for (const auto& tile : tiles) {
    TileMetrics tm = evaluate_bundle(tile, params, cfg, opt.sar_only);
    if (lpips) {
      Graph<T> g;
      ParamCtx<T> P(g, params);
      ForwardOptions fo;
      fo.ablation = cfg.ablation;
      const Tensor<T> sar = tensor_cast<T>(tile.sar);
      Tensor<T> prior;
      const Tensor<T>* pp = nullptr;
      if (tile.prior && !opt.sar_only) {
        prior = tensor_cast<T>(*tile.prior);
        pp = &prior;
      }
      ForwardOutput<T> outv = forward(P, cfg.model, sar, pp, fo);
      const fs::path pa = opt.out / (tile.id + "_pred.png");
      const fs::path pb = opt.out / (tile.id + "_target.png");
      save_image_rgb(pa, tensor_cast<float>(outv.y_hat.val()));
      save_image_rgb(pb, tile.optical);
      tm.lpips = run_lpips(opt.lpips_cmd, pa, pb);
    }
    rows.push_back(tm);
  }
  const MetricSummary summary = aggregate(rows);

  std::ofstream mf(opt.out / "metrics.json");
  mf << summary_to_json(summary).dump(2) << "\n";
  write_per_tile_csv(opt.out / "per_tile.csv", rows, lpips);
  write_confusion_csv(opt.out / "confusion.csv", summary.pooled);
  if (opt.plots) {
    plots_from_csv(opt.out / "per_tile.csv", opt.out);
    loss_curve_from_log(opt.checkpoint.parent_path() / "train_log.jsonl", opt.out / "loss_curve.png");
  }
  std::printf("eval: %" PRId64 " tiles  psnr %s  ssim %s  iou %s  dice %s\n", summary.tiles,
              fmt_metric(summary.psnr).c_str(), fmt_metric(summary.ssim).c_str(), fmt_metric(summary.iou).c_str(),
              fmt_metric(summary.dice).c_str());
  return 0;
}

template <class T>
int infer_with(const InferOptions& opt, const TrainConfig& cfg) {
  ParamStore<T> params;
  load_checkpoint<T>(opt.checkpoint, params, nullptr);
  TileBundle tile = read_bundle(opt.input);
  fs::create_directories(opt.out);

  Graph<T> g;
  ParamCtx<T> P(g, params);
  ForwardOptions fo;
  fo.ablation = cfg.ablation;
  const Tensor<T> sar = tensor_cast<T>(tile.sar);
  Tensor<T> prior;
  const Tensor<T>* pp = nullptr;
  if (tile.prior) {
    prior = tensor_cast<T>(*tile.prior);
    pp = &prior;
  }
  ForwardOutput<T> out = forward(P, cfg.model, sar, pp, fo);

  const Tensor<float> y_hat = tensor_cast<float>(out.y_hat.val());
  const Tensor<float> m_hat = tensor_cast<float>(out.m_hat.val());
  const int64_t h = y_hat.shape[1], w = y_hat.shape[2];

  auto write_plane_file = [&](const std::string& name, const float* data, int64_t count) {
    std::ofstream f(opt.out / name, std::ios::binary);
    f.write(reinterpret_cast<const char*>(data), count * 4);
  };
  for (int64_t c = 0; c < 3; ++c)
    write_plane_file("y_hat_" + std::to_string(c) + ".f32", y_hat.ptr() + c * h * w, h * w);
  write_plane_file("m_hat_0.f32", m_hat.ptr(), h * w);

  save_image_rgb(opt.out / "y_hat.png", y_hat);
  save_image_gray(opt.out / "m_hat.png", m_hat);
  Tensor<float> mask_bin(m_hat.shape);
  for (int64_t i = 0; i < m_hat.numel(); ++i)
    mask_bin.data[static_cast<size_t>(i)] = m_hat.data[static_cast<size_t>(i)] >= opt.threshold ? 1.0f : 0.0f;
  save_image_gray(opt.out / "mask_bin.png", mask_bin);

  json info;
  info["input"] = opt.input.string();
  info["path"] = out.used_teacher_path ? "teacher" : "prior";
  info["H"] = h;
  info["W"] = w;
  info["threshold"] = opt.threshold;
  std::ofstream jf(opt.out / "infer.json");
  jf << info.dump(2) << "\n";
  std::printf("infer: %s path, %" PRId64 "x%" PRId64 " -> %s\n", out.used_teacher_path ? "teacher" : "prior", h, w,
              opt.out.string().c_str());
  return 0;
}

}  // namespace

std::vector<TileBundle> load_dataset(const fs::path& dir) {
  std::vector<TileBundle> tiles;
  for (const fs::path& p : list_bundle_dirs(dir)) tiles.push_back(read_bundle(p));
  return tiles;
}

int cmd_synth(const SynthOptions& opt) {
  if (opt.count < 0) throw std::invalid_argument("synth: count must be >= 0");
  opt.scene.validate();
  fs::create_directories(opt.out);
  json manifest;
  manifest["count"] = opt.count;
  manifest["scene"] = {{"seed", opt.scene.seed},
                       {"H", opt.scene.height},
                       {"W", opt.scene.width},
                       {"water_fraction", opt.scene.water_fraction},
                       {"speckle_strength", opt.scene.speckle_strength},
                       {"cloud_fraction", opt.scene.cloud_fraction},
                       {"terrain_octaves", opt.scene.terrain_octaves}};
  json tiles = json::array();
  for (int64_t i = 0; i < opt.count; ++i) {
    SceneSpec spec = opt.scene;
    spec.seed = opt.scene.seed + static_cast<uint64_t>(i);
    TileBundle b = synth_scene(spec);
    char name[32];
    std::snprintf(name, sizeof name, "tile_%04" PRId64, i);
    b.id = name;
    const FileManifest fm = write_bundle(b, opt.out / name);
    uint64_t bytes = 0;
    for (const auto& e : fm) bytes += e.bytes;
    tiles.push_back({{"id", b.id}, {"seed", spec.seed}, {"bytes", bytes}});
  }
  manifest["tiles"] = tiles;
  std::ofstream mf(opt.out / "manifest.json");
  mf << manifest.dump(2) << "\n";
  std::printf("synth: wrote %" PRId64 " bundles to %s\n", opt.count, opt.out.string().c_str());
  return 0;
}

int cmd_train(const TrainOptions& opt) {
  TrainConfig cfg = read_config(opt.config);
  if (opt.seed_override) cfg.seed = *opt.seed_override;
  if (opt.precision_override) cfg.precision = *opt.precision_override;
  cfg.validate();
  std::vector<TileBundle> tiles = load_dataset(opt.data);
  if (tiles.empty()) throw std::runtime_error("no tiles found under " + opt.data.string());

  auto run = [&](auto trainer) {
    if (opt.resume) trainer.load(*opt.resume);
    const fs::path final_path = trainer.fit(tiles, opt.out);
    std::printf("train: %" PRId64 " steps -> %s\n", trainer.step(), final_path.string().c_str());
    return 0;
  };
  if (cfg.precision == "f64") return run(Trainer<double>(cfg));
  return run(Trainer<float>(cfg));
}

int cmd_eval(const EvalOptions& opt) {
  CheckpointMeta meta = peek_checkpoint(opt.checkpoint);
  TrainConfig cfg = TrainConfig::from_json(meta.config_json);
  if (meta.precision == "f64") return eval_with<double>(opt, cfg);
  return eval_with<float>(opt, cfg);
}

int cmd_infer(const InferOptions& opt) {
  CheckpointMeta meta = peek_checkpoint(opt.checkpoint);
  TrainConfig cfg = TrainConfig::from_json(meta.config_json);
  if (meta.precision == "f64") return infer_with<double>(opt, cfg);
  return infer_with<float>(opt, cfg);
}

int cmd_ablate(const AblateOptions& opt) {
  const TrainConfig base = read_config(opt.config);
  std::vector<TileBundle> tiles = load_dataset(opt.data);
  if (tiles.empty()) throw std::runtime_error("no tiles found under " + opt.data.string());
  fs::create_directories(opt.out);

  struct VariantResult {
    std::string name;
    std::vector<MetricSummary> per_seed;
  };
  const std::vector<std::pair<std::string, AblationSet>> variants = {
      {"full", {}},
      {"no_film", {Ablation::kNoFilm}},
      {"no_teacher", {Ablation::kNoTeacher}},
      {"no_decouple", {Ablation::kNoDecouple}},
  };

  std::vector<VariantResult> results;
  for (const auto& [name, abl] : variants) {
    VariantResult vr;
    vr.name = name;
    for (uint64_t seed : opt.seeds) {
      TrainConfig cfg = base;
      cfg.ablation = abl;
      cfg.seed = seed;
      const fs::path run_dir = opt.out / name / ("seed" + std::to_string(seed));
      auto run_one = [&](auto trainer) {
        trainer.fit(tiles, run_dir);
        std::vector<TileMetrics> rows;
        for (const auto& t : tiles) rows.push_back(trainer.evaluate_tile(t));
        return aggregate(rows);
      };
      MetricSummary s = cfg.precision == "f64" ? run_one(Trainer<double>(cfg)) : run_one(Trainer<float>(cfg));
      std::printf("ablate: %s seed %" PRIu64 "  psnr %.3f  ssim %.4f  iou %.4f\n", name.c_str(), seed,
                  s.psnr, s.ssim, s.iou);
      vr.per_seed.push_back(s);
    }
    results.push_back(std::move(vr));
  }

  std::ofstream csv(opt.out / "ablation.csv");
  csv << "variant,psnr,ssim,iou\n";
  for (const auto& vr : results) {
    double psnr_m = 0, ssim_m = 0, iou_m = 0;
    for (const auto& s : vr.per_seed) {
      psnr_m += std::isfinite(s.psnr) ? s.psnr : 99.0;
      ssim_m += s.ssim;
      iou_m += s.iou;
    }
    const double n = static_cast<double>(vr.per_seed.size());
    csv << vr.name << "," << fmt_metric(psnr_m / n) << "," << fmt_metric(ssim_m / n) << "," << fmt_metric(iou_m / n)
        << "\n";
  }
  std::printf("ablate: wrote %s\n", (opt.out / "ablation.csv").string().c_str());
  return 0;
}

}  // namespace flora

#include "flora/tilestore.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "flora/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace flora {

namespace {

void check_plane_values(const Tensor<float>& t, const char* what) {
  for (float v : t.data) {
    if (!std::isfinite(v)) throw std::invalid_argument(std::string(what) + " contains non-finite values");
    if (v < 0.0f || v > 1.0f) throw std::invalid_argument(std::string(what) + " outside [0,1]");
  }
}

void write_plane(const fs::path& p, const float* data, int64_t count) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + p.string() + " for writing");
  static_assert(sizeof(float) == 4);
  f.write(reinterpret_cast<const char*>(data), count * 4);
  if (!f) throw std::runtime_error("write failed: " + p.string());
}

void read_plane(const fs::path& p, float* data, int64_t count) {
  std::ifstream f(p, std::ios::binary | std::ios::ate);
  if (!f) throw std::runtime_error("missing plane file " + p.string());
  const int64_t bytes = static_cast<int64_t>(f.tellg());
  if (bytes != count * 4)
    throw std::runtime_error("plane " + p.string() + " has " + std::to_string(bytes) + " bytes, expected " +
                             std::to_string(count * 4));
  f.seekg(0);
  f.read(reinterpret_cast<char*>(data), count * 4);
  if (!f) throw std::runtime_error("read failed: " + p.string());
  for (int64_t i = 0; i < count; ++i)
    if (!std::isfinite(data[i])) throw std::runtime_error("plane " + p.string() + " contains non-finite values");
}

}  // namespace

void TileBundle::validate() const {
  if (sar.rank() != 3 || sar.shape[0] != 2) throw std::invalid_argument("sar must be [2,H,W]");
  const int64_t h = sar.shape[1], w = sar.shape[2];
  if (h < 1 || w < 1) throw std::invalid_argument("empty raster");
  if (optical.shape != Shape{3, h, w}) throw std::invalid_argument("optical must be [3,H,W] matching sar");
  if (mask.shape != Shape{1, h, w}) throw std::invalid_argument("mask must be [1,H,W] matching sar");
  if (prior) {
    const int64_t cp = prior->shape.empty() ? 0 : prior->shape[0];
    if (cp != 3 && cp != 4) throw std::invalid_argument("prior channels must be 3 or 4");
    if (prior->shape != Shape{cp, h, w}) throw std::invalid_argument("prior spatial shape mismatch");
    check_plane_values(*prior, "prior");
  }
  check_plane_values(sar, "sar");
  check_plane_values(optical, "optical");
  for (float v : mask.data)
    if (v != 0.0f && v != 1.0f) throw std::invalid_argument("mask not binary");
}

void SceneSpec::validate() const {
  if (height < 4 || width < 4) throw std::invalid_argument("scene too small");
  if (water_fraction < 0.0 || water_fraction > 1.0) throw std::invalid_argument("water_fraction outside [0,1]");
  if (cloud_fraction < 0.0 || cloud_fraction > 1.0) throw std::invalid_argument("cloud_fraction outside [0,1]");
  if (speckle_strength < 0.0) throw std::invalid_argument("speckle_strength must be >= 0");
  if (terrain_octaves < 1) throw std::invalid_argument("terrain_octaves must be >= 1");
}

FileManifest write_bundle(const TileBundle& bundle, const fs::path& dir) {
  bundle.validate();
  fs::create_directories(dir);

  const int64_t h = bundle.height(), w = bundle.width();
  json meta;
  meta["id"] = bundle.id;
  meta["H"] = h;
  meta["W"] = w;
  meta["C_p"] = bundle.prior_channels();
  meta["has_prior"] = bundle.prior.has_value();
  meta["source"] = bundle.source;
  meta["nodata"] = bundle.nodata;
  meta["version"] = 1;

  FileManifest manifest;
  auto emit = [&](const std::string& stem, const Tensor<float>& t) {
    const int64_t plane = h * w;
    for (int64_t c = 0; c < t.shape[0]; ++c) {
      const std::string name = stem + "_" + std::to_string(c) + ".f32";
      write_plane(dir / name, t.ptr() + c * plane, plane);
      manifest.push_back({name, static_cast<uint64_t>(plane * 4)});
    }
  };
  {
    std::ofstream f(dir / "meta.json");
    if (!f) throw std::runtime_error("cannot write meta.json in " + dir.string());
    f << meta.dump(2) << "\n";
  }
  manifest.push_back({"meta.json", static_cast<uint64_t>(fs::file_size(dir / "meta.json"))});
  emit("sar", bundle.sar);
  if (bundle.prior) emit("prior", *bundle.prior);
  emit("optical", bundle.optical);
  emit("mask", bundle.mask);
  return manifest;
}

TileBundle read_bundle(const fs::path& dir) {
  const fs::path mp = dir / "meta.json";
  std::ifstream f(mp);
  if (!f) throw std::runtime_error("missing meta.json in " + dir.string());
  json meta = json::parse(f);

  TileBundle b;
  b.id = meta.at("id").get<std::string>();
  const int64_t h = meta.at("H").get<int64_t>();
  const int64_t w = meta.at("W").get<int64_t>();
  const int64_t cp = meta.at("C_p").get<int64_t>();
  const bool has_prior = meta.at("has_prior").get<bool>();
  b.source = meta.value("source", std::string("unknown"));
  b.nodata = meta.value("nodata", false);

  const int64_t plane = h * w;
  auto load = [&](const std::string& stem, int64_t channels) {
    Tensor<float> t(Shape{channels, h, w});
    for (int64_t c = 0; c < channels; ++c)
      read_plane(dir / (stem + "_" + std::to_string(c) + ".f32"), t.ptr() + c * plane, plane);
    return t;
  };
  b.sar = load("sar", 2);
  if (has_prior) b.prior = load("prior", cp);
  b.optical = load("optical", 3);
  b.mask = load("mask", 1);
  b.validate();
  return b;
}

Tensor<float> normalize_sar(const Tensor<float>& raw_db) {
  constexpr float kLo = -25.0f, kHi = 0.0f;
  Tensor<float> out(raw_db.shape);
  for (int64_t i = 0; i < raw_db.numel(); ++i) {
    const float v = raw_db.data[static_cast<size_t>(i)];
    if (std::isnan(v)) throw std::invalid_argument("normalize_sar: NaN input");
    const float t = (v - kLo) / (kHi - kLo);
    out.data[static_cast<size_t>(i)] = std::min(1.0f, std::max(0.0f, t));
  }
  return out;
}

std::vector<int64_t> patch_offsets(int64_t extent, int64_t patch, int64_t stride) {
  if (patch > extent) throw std::invalid_argument("patch larger than raster");
  if (stride < 1) throw std::invalid_argument("stride must be >= 1");
  std::vector<int64_t> offs;
  for (int64_t o = 0;; o += stride) {
    if (o + patch >= extent) {
      const int64_t last = extent - patch;
      if (offs.empty() || offs.back() != last) offs.push_back(last);
      break;
    }
    offs.push_back(o);
  }
  return offs;
}

std::vector<TileBundle> patchify(const TileBundle& bundle, int64_t patch, int64_t stride) {
  const int64_t h = bundle.height(), w = bundle.width();
  const auto ys = patch_offsets(h, patch, stride);
  const auto xs = patch_offsets(w, patch, stride);

  auto window = [&](const Tensor<float>& t, int64_t oy, int64_t ox) {
    Tensor<float> out(Shape{t.shape[0], patch, patch});
    for (int64_t c = 0; c < t.shape[0]; ++c)
      for (int64_t y = 0; y < patch; ++y)
        std::memcpy(out.ptr() + (c * patch + y) * patch, t.ptr() + (c * h + oy + y) * w + ox,
                    static_cast<size_t>(patch) * 4);
    return out;
  };

  std::vector<TileBundle> patches;
  for (int64_t oy : ys)
    for (int64_t ox : xs) {
      TileBundle p;
      p.sar = window(bundle.sar, oy, ox);
      if (bundle.prior) p.prior = window(*bundle.prior, oy, ox);
      p.optical = window(bundle.optical, oy, ox);
      p.mask = window(bundle.mask, oy, ox);
      p.id = bundle.id + "_p" + std::to_string(oy) + "x" + std::to_string(ox);
      p.source = bundle.source;
      p.nodata = bundle.nodata;
      patches.push_back(std::move(p));
    }
  return patches;
}

namespace {

// seeded lattice value noise, smoothstep-interpolated
double lattice_value(uint64_t seed, int64_t gx, int64_t gy, int octave) {
  uint64_t s = seed ^ (0x9e3779b97f4a7c15ull * static_cast<uint64_t>(octave + 1));
  s ^= static_cast<uint64_t>(gx) * 0xff51afd7ed558ccdull;
  s ^= static_cast<uint64_t>(gy) * 0xc4ceb9fe1a85ec53ull;
  return static_cast<double>(splitmix64(s) >> 11) * 0x1.0p-53;
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

Tensor<double> value_noise(uint64_t seed, int64_t h, int64_t w, int octaves, double base_cells) {
  Tensor<double> out(Shape{h, w});
  double amp = 1.0, total = 0.0;
  for (int o = 0; o < octaves; ++o) {
    const double cells = base_cells * static_cast<double>(1 << o);
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        const double fx = static_cast<double>(x) / static_cast<double>(w) * cells;
        const double fy = static_cast<double>(y) / static_cast<double>(h) * cells;
        const int64_t gx = static_cast<int64_t>(std::floor(fx));
        const int64_t gy = static_cast<int64_t>(std::floor(fy));
        const double tx = smoothstep(fx - static_cast<double>(gx));
        const double ty = smoothstep(fy - static_cast<double>(gy));
        const double v00 = lattice_value(seed, gx, gy, o);
        const double v10 = lattice_value(seed, gx + 1, gy, o);
        const double v01 = lattice_value(seed, gx, gy + 1, o);
        const double v11 = lattice_value(seed, gx + 1, gy + 1, o);
        const double v = (v00 * (1 - tx) + v10 * tx) * (1 - ty) + (v01 * (1 - tx) + v11 * tx) * ty;
        out.data[static_cast<size_t>(y * w + x)] += amp * v;
      }
    total += amp;
    amp *= 0.5;
  }
  double lo = out.data[0], hi = out.data[0];
  for (double v : out.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = hi - lo > 1e-12 ? hi - lo : 1.0;
  for (auto& v : out.data) v = (v - lo) / span;
  (void)total;
  return out;
}

// threshold such that values strictly below it approximate the requested fraction
double fraction_threshold(const Tensor<double>& field, double fraction) {
  const int64_t n = field.numel();
  const int64_t k = static_cast<int64_t>(std::llround(fraction * static_cast<double>(n)));
  if (k <= 0) return -1.0;  // nothing below
  std::vector<double> sorted(field.data);
  std::sort(sorted.begin(), sorted.end());
  if (k >= n) return 2.0;  // everything below
  return sorted[static_cast<size_t>(k)];
}

float clamp01(double v) { return static_cast<float>(std::min(1.0, std::max(0.0, v))); }

}  // namespace

TileBundle synth_scene(const SceneSpec& spec) {
  spec.validate();
  const int64_t h = spec.height, w = spec.width;

  const Tensor<double> terrain = value_noise(mix_seed(spec.seed, 0xA11CE), h, w, spec.terrain_octaves, 3.0);
  const Tensor<double> clouds = value_noise(mix_seed(spec.seed, 0xC10D), h, w, 3, 2.0);
  const Tensor<double> veg = value_noise(mix_seed(spec.seed, 0x7E6), h, w, 3, 4.0);

  const double water_thr = fraction_threshold(terrain, spec.water_fraction);
  const double cloud_thr = fraction_threshold(clouds, spec.cloud_fraction);

  TileBundle b;
  b.sar = Tensor<float>(Shape{2, h, w});
  b.optical = Tensor<float>(Shape{3, h, w});
  b.mask = Tensor<float>(Shape{1, h, w});
  Tensor<float> prior(Shape{4, h, w});

  Rng speckle_rng(mix_seed(spec.seed, 0x5BEC));
  const double s = std::min(1.0, spec.speckle_strength);
  // moderate-look gamma speckle, mean 1
  const double looks = 4.0;

  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const double t = terrain.data[static_cast<size_t>(y * w + x)];
      const bool water = t < water_thr;
      const bool cloud = clouds.data[static_cast<size_t>(y * w + x)] < cloud_thr;
      const double vg = veg.data[static_cast<size_t>(y * w + x)];

      b.mask.at3(0, y, x) = water ? 1.0f : 0.0f;

      // clean optical: smooth land colormap, dark blue-green water
      double r, gch, bl;
      if (water) {
        r = 0.05 + 0.04 * t;
        gch = 0.14 + 0.06 * t;
        bl = 0.22 + 0.08 * t;
      } else {
        r = 0.28 + 0.40 * t - 0.10 * vg;
        gch = 0.30 + 0.34 * t + 0.12 * vg;
        bl = 0.20 + 0.22 * t - 0.06 * vg;
      }
      b.optical.at3(0, y, x) = clamp01(r);
      b.optical.at3(1, y, x) = clamp01(gch);
      b.optical.at3(2, y, x) = clamp01(bl);

      // prior: optical plus cloud occlusion (target stays clean), NDVI channel
      const double ndvi = water ? -0.35 : (0.15 + 0.6 * vg * (1.0 - t * 0.3));
      if (cloud) {
        prior.at3(0, y, x) = 1.0f;
        prior.at3(1, y, x) = 1.0f;
        prior.at3(2, y, x) = 1.0f;
        prior.at3(3, y, x) = 0.5f;  // NDVI ~ 0 under cloud
      } else {
        prior.at3(0, y, x) = b.optical.at3(0, y, x);
        prior.at3(1, y, x) = b.optical.at3(1, y, x);
        prior.at3(2, y, x) = b.optical.at3(2, y, x);
        prior.at3(3, y, x) = clamp01((ndvi + 1.0) / 2.0);
      }

      // SAR: water is low backscatter, land terrain-modulated, gamma speckle
      const double base_vv = water ? 0.05 + 0.10 * t : 0.30 + 0.45 * t;
      const double base_vh = water ? 0.04 + 0.08 * t : 0.22 + 0.40 * t;
      const double sp_vv = (1.0 - s) + s * speckle_rng.gamma(looks, 1.0 / looks);
      const double sp_vh = (1.0 - s) + s * speckle_rng.gamma(looks, 1.0 / looks);
      b.sar.at3(0, y, x) = clamp01(base_vv * sp_vv);
      b.sar.at3(1, y, x) = clamp01(base_vh * sp_vh);
    }

  b.prior = std::move(prior);
  b.id = "scene_" + std::to_string(spec.seed);
  b.source = "synthetic";
  return b;
}

std::vector<fs::path> list_bundle_dirs(const fs::path& root) {
  std::vector<fs::path> dirs;
  if (!fs::exists(root)) throw std::runtime_error("data directory not found: " + root.string());
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().filename() == "meta.json") dirs.push_back(e.path().parent_path());
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

}  // namespace flora

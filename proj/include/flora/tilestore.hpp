#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "flora/tensor.hpp"

namespace flora {

/// One co-registered sample: SAR backscatter planes, optional optical prior,
/// target optical image and ground-truth water mask. All values in [0,1].
struct TileBundle {
  Tensor<float> sar;                    // [2,H,W]
  std::optional<Tensor<float>> prior;   // [3 or 4,H,W]
  Tensor<float> optical;                // [3,H,W]
  Tensor<float> mask;                   // [1,H,W], values exactly 0 or 1
  std::string id;
  std::string source = "synthetic";
  bool nodata = false;

  int64_t height() const { return sar.shape[1]; }
  int64_t width() const { return sar.shape[2]; }
  int64_t prior_channels() const { return prior ? prior->shape[0] : 0; }

  /// Throws std::invalid_argument on any violated invariant.
  void validate() const;
};

struct SceneSpec {
  uint64_t seed = 1;
  int64_t height = 64;
  int64_t width = 64;
  double water_fraction = 0.3;
  double speckle_strength = 0.5;
  double cloud_fraction = 0.1;
  int terrain_octaves = 4;

  void validate() const;
};

struct FileEntry {
  std::string name;
  uint64_t bytes;
};

using FileManifest = std::vector<FileEntry>;

/// Writes meta.json plus one little-endian f32 row-major plane file per
/// channel (sar_0.f32, sar_1.f32, prior_*.f32, optical_*.f32, mask_0.f32).
/// The bundle is validated before anything is written.
FileManifest write_bundle(const TileBundle& bundle, const std::filesystem::path& dir);

TileBundle read_bundle(const std::filesystem::path& dir);

/// Per-channel affine map from dB in [-25, 0] to [0,1], clipping outside.
Tensor<float> normalize_sar(const Tensor<float>& raw_db);

/// Row-major scan with the last window shifted back to end at the border.
std::vector<TileBundle> patchify(const TileBundle& bundle, int64_t patch, int64_t stride);

/// Offsets produced by the patchify shift rule along one axis.
std::vector<int64_t> patch_offsets(int64_t extent, int64_t patch, int64_t stride);

/// Deterministic procedural flood scene; identical spec => identical bundle.
TileBundle synth_scene(const SceneSpec& spec);

/// Drops every bundle in a directory tree (subdirectories holding meta.json),
/// sorted by path for reproducible ordering.
std::vector<std::filesystem::path> list_bundle_dirs(const std::filesystem::path& root);

}  // namespace flora

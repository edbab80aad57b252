#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "flora/nn.hpp"

namespace flora {

/// AdamW first/second moment estimates, keyed like the parameters.
template <class T>
struct AdamState {
  std::map<std::string, Tensor<T>> m;
  std::map<std::string, Tensor<T>> v;
  int64_t step = 0;
};

struct CheckpointMeta {
  int64_t step = 0;
  int64_t epoch = 0;
  std::string config_json;   // full training config for reproducible reload
  uint64_t config_hash = 0;
  std::string metrics_json;  // final metric snapshot, may be empty
  std::string precision;     // "f32" or "f64"
};

/// Single-file archive: magic, version, JSON index (name -> shape, offset,
/// dtype) and a raw little-endian payload. Round-trips bitwise in both
/// precisions.
template <class T>
void save_checkpoint(const std::filesystem::path& path, const ParamStore<T>& params, const AdamState<T>* opt,
                     const CheckpointMeta& meta);

template <class T>
CheckpointMeta load_checkpoint(const std::filesystem::path& path, ParamStore<T>& params, AdamState<T>* opt);

/// Reads only the metadata block (for dispatching on stored precision).
CheckpointMeta peek_checkpoint(const std::filesystem::path& path);

#define FLORA_EXTERN_CKPT(T)                                                                          \
  extern template void save_checkpoint(const std::filesystem::path&, const ParamStore<T>&,            \
                                       const AdamState<T>*, const CheckpointMeta&);                   \
  extern template CheckpointMeta load_checkpoint(const std::filesystem::path&, ParamStore<T>&, AdamState<T>*);
FLORA_EXTERN_CKPT(float)
FLORA_EXTERN_CKPT(double)
#undef FLORA_EXTERN_CKPT

}  // namespace flora

#include "flora/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace flora {

namespace {

constexpr char kMagic[4] = {'F', 'L', 'C', 'K'};
constexpr uint32_t kVersion = 1;

template <class T>
const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

struct Writer {
  std::ofstream f;
  explicit Writer(const fs::path& p) : f(p, std::ios::binary) {
    if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + p.string());
  }
  void bytes(const void* p, size_t n) { f.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n)); }
};

json meta_to_json(const CheckpointMeta& m) {
  json j;
  j["step"] = m.step;
  j["epoch"] = m.epoch;
  j["config"] = m.config_json.empty() ? json::object() : json::parse(m.config_json);
  j["config_hash"] = m.config_hash;
  j["metrics"] = m.metrics_json.empty() ? json::object() : json::parse(m.metrics_json);
  j["precision"] = m.precision;
  return j;
}

CheckpointMeta meta_from_json(const json& j) {
  CheckpointMeta m;
  m.step = j.value("step", int64_t(0));
  m.epoch = j.value("epoch", int64_t(0));
  m.config_json = j.contains("config") ? j["config"].dump() : "";
  m.config_hash = j.value("config_hash", uint64_t(0));
  m.metrics_json = j.contains("metrics") ? j["metrics"].dump() : "";
  m.precision = j.value("precision", std::string("f32"));
  return m;
}

json read_index(std::ifstream& f, const fs::path& path) {
  char magic[4];
  uint32_t version = 0;
  uint64_t jlen = 0;
  f.read(magic, 4);
  f.read(reinterpret_cast<char*>(&version), 4);
  f.read(reinterpret_cast<char*>(&jlen), 8);
  if (!f || std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("not a checkpoint file: " + path.string());
  if (version != kVersion) throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  std::string jtext(jlen, '\0');
  f.read(jtext.data(), static_cast<std::streamsize>(jlen));
  if (!f) throw std::runtime_error("truncated checkpoint index: " + path.string());
  return json::parse(jtext);
}

}  // namespace

template <class T>
void save_checkpoint(const fs::path& path, const ParamStore<T>& params, const AdamState<T>* opt,
                     const CheckpointMeta& meta) {
  json index;
  index["meta"] = meta_to_json(meta);
  if (opt) index["meta"]["opt_step"] = opt->step;
  json tensors = json::object();

  uint64_t offset = 0;
  std::vector<std::pair<std::string, const Tensor<T>*>> order;
  auto reg = [&](const std::string& name, const Tensor<T>& t) {
    json e;
    e["shape"] = t.shape;
    e["offset"] = offset;
    e["dtype"] = dtype_name<T>();
    tensors[name] = e;
    order.emplace_back(name, &t);
    offset += static_cast<uint64_t>(t.numel()) * sizeof(T);
  };
  for (const auto& [name, t] : params.tensors()) reg(name, t);
  if (opt) {
    for (const auto& [name, t] : opt->m) reg("opt.m." + name, t);
    for (const auto& [name, t] : opt->v) reg("opt.v." + name, t);
  }
  index["tensors"] = tensors;
  index["seed"] = params.seed();

  const std::string jtext = index.dump();
  Writer w(path);
  w.bytes(kMagic, 4);
  w.bytes(&kVersion, 4);
  const uint64_t jlen = jtext.size();
  w.bytes(&jlen, 8);
  w.bytes(jtext.data(), jtext.size());
  for (const auto& [name, t] : order) w.bytes(t->ptr(), static_cast<size_t>(t->numel()) * sizeof(T));
  if (!w.f) throw std::runtime_error("checkpoint write failed: " + path.string());
}

template <class T>
CheckpointMeta load_checkpoint(const fs::path& path, ParamStore<T>& params, AdamState<T>* opt) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path.string());
  json index = read_index(f, path);
  CheckpointMeta meta = meta_from_json(index["meta"]);
  if (meta.precision != dtype_name<T>())
    throw std::runtime_error("checkpoint precision is " + meta.precision + ", loader instantiated for " +
                             dtype_name<T>());
  params.set_seed(index.value("seed", uint64_t(1)));
  const std::streampos payload = f.tellg();
  for (const auto& [name, e] : index["tensors"].items()) {
    Shape shape;
    e["shape"].get_to(shape);
    Tensor<T> t(shape);
    uint64_t offset = 0;
    e["offset"].get_to(offset);
    f.seekg(payload + static_cast<std::streamoff>(offset));
    f.read(reinterpret_cast<char*>(t.ptr()), t.numel() * static_cast<int64_t>(sizeof(T)));
    if (!f) throw std::runtime_error("truncated checkpoint payload at tensor " + name);
    if (name.rfind("opt.m.", 0) == 0) {
      if (opt) opt->m[name.substr(6)] = std::move(t);
    } else if (name.rfind("opt.v.", 0) == 0) {
      if (opt) opt->v[name.substr(6)] = std::move(t);
    } else {
      params.put(name, std::move(t));
    }
  }
  if (opt) opt->step = index["meta"].value("opt_step", meta.step);
  return meta;
}

CheckpointMeta peek_checkpoint(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path.string());
  json index = read_index(f, path);
  return meta_from_json(index["meta"]);
}

#define FLORA_INST_CKPT(T)                                                                    \
  template void save_checkpoint(const fs::path&, const ParamStore<T>&, const AdamState<T>*,   \
                                const CheckpointMeta&);                                       \
  template CheckpointMeta load_checkpoint(const fs::path&, ParamStore<T>&, AdamState<T>*);
FLORA_INST_CKPT(float)
FLORA_INST_CKPT(double)

}  // namespace flora

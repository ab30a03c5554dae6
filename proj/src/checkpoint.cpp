#include "bvsviz/checkpoint.hpp"

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <sstream>

#include "bvsviz/image_io.hpp"
#include "bvsviz/labels.hpp"

namespace bvsviz {
namespace {

constexpr const char* kMagic = "bvsviz-checkpoint";
constexpr const char* kEndManifest = "end_manifest";

std::string shape_text(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(s[i]);
  }
  return out;
}

std::string param_key(std::size_t i, const char* field) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "param.%03zu.%s", i, field);
  return buf;
}

template <typename U>
void append_le(std::vector<char>& out, U v) {
  using Bits = std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint64_t>;
  Bits b;
  std::memcpy(&b, &v, sizeof b);
  for (std::size_t i = 0; i < sizeof b; ++i) {
    out.push_back(static_cast<char>((b >> (8 * i)) & 0xff));
  }
}

template <typename U>
U read_le(const char* p) {
  using Bits = std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint64_t>;
  Bits b = 0;
  for (std::size_t i = 0; i < sizeof b; ++i) {
    b |= static_cast<Bits>(static_cast<unsigned char>(p[i])) << (8 * i);
  }
  U v;
  std::memcpy(&v, &b, sizeof v);
  return v;
}

std::string require_key(const KeyValues& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw IoError("checkpoint manifest lacks '" + key + "'");
  return it->second;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ResidualNet<T>& model,
                     const TrainConfig& config, const KeyValues& meta) {
  constexpr bool wide = sizeof(T) == 8;
  KeyValues kv;
  kv["format_version"] = std::to_string(kCheckpointVersion);
  const Architecture& arch = model.architecture();
  kv["architecture"] = arch.describe();
  kv["architecture.input_size"] = std::to_string(arch.input_size);
  kv["architecture.channels_base"] = std::to_string(arch.channels_base);
  kv["architecture.num_classes"] = std::to_string(arch.num_classes);
  for (ClassLabel c : kAllClasses) {
    kv["class." + std::to_string(to_index(c))] = std::string(to_string(c));
  }
  for (const auto& [k, v] : to_key_values(config)) kv["config." + k] = v;
  for (const auto& [k, v] : meta) kv["meta." + k] = v;

  std::vector<char> blob;
  const auto& params = model.parameters();
  kv["param.count"] = std::to_string(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    kv[param_key(i, "name")] = params[i].name;
    kv[param_key(i, "shape")] = shape_text(params[i].value.shape());
    kv[param_key(i, "offset")] = std::to_string(blob.size());
    for (T v : params[i].value.values()) {
      if constexpr (wide) {
        append_le<double>(blob, v);
      } else {
        append_le<float>(blob, v);
      }
    }
  }
  kv["blob.dtype"] = wide ? "f64" : "f32";
  kv["blob.bytes"] = std::to_string(blob.size());

  std::string text = std::string(kMagic) + "\n" + format_key_values(kv) + kEndManifest + "\n";
  std::vector<char> bytes(text.begin(), text.end());
  bytes.insert(bytes.end(), blob.begin(), blob.end());
  write_file(path, bytes);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  const std::vector<char> bytes = read_file(path);
  const std::string_view all(bytes.data(), bytes.size());
  const std::string magic_line = std::string(kMagic) + "\n";
  if (all.substr(0, magic_line.size()) != magic_line) {
    throw IoError(path.string() + " is not a checkpoint");
  }
  const std::string end_line = std::string("\n") + kEndManifest + "\n";
  const std::size_t end = all.find(end_line);
  if (end == std::string_view::npos) throw IoError(path.string() + ": manifest not terminated");
  const std::size_t blob_start = end + end_line.size();

  Checkpoint ck;
  ck.manifest = parse_key_values(all.substr(magic_line.size(), end + 1 - magic_line.size()));
  const KeyValues& kv = ck.manifest;
  if (get_int(kv, "format_version", -1) != kCheckpointVersion) {
    throw IoError(path.string() + ": unsupported format_version " +
                  require_key(kv, "format_version"));
  }
  for (ClassLabel c : kAllClasses) {
    const std::string key = "class." + std::to_string(to_index(c));
    if (require_key(kv, key) != to_string(c)) {
      throw IoError(path.string() + ": class encoding differs at " + key);
    }
  }
  ck.architecture.input_size = get_int(kv, "architecture.input_size", 0);
  ck.architecture.channels_base = get_int(kv, "architecture.channels_base", 0);
  ck.architecture.num_classes = get_int(kv, "architecture.num_classes", 0);
  if (require_key(kv, "architecture") != ck.architecture.describe()) {
    throw IoError(path.string() + ": architecture descriptor does not match its fields");
  }
  KeyValues cfg, meta;
  for (const auto& [k, v] : kv) {
    if (k.rfind("config.", 0) == 0) cfg[k.substr(7)] = v;
    if (k.rfind("meta.", 0) == 0) meta[k.substr(5)] = v;
  }
  apply_key_values(ck.config, cfg);
  ck.meta = std::move(meta);
  ck.dtype = require_key(kv, "blob.dtype");
  if (ck.dtype != "f32" && ck.dtype != "f64") {
    throw IoError(path.string() + ": unknown blob dtype " + ck.dtype);
  }
  const auto blob_bytes = static_cast<std::size_t>(std::stoull(require_key(kv, "blob.bytes")));
  if (bytes.size() - blob_start != blob_bytes) {
    throw IoError(path.string() + ": blob is " + std::to_string(bytes.size() - blob_start) +
                  " bytes, manifest says " + std::to_string(blob_bytes));
  }
  ck.blob.assign(bytes.begin() + static_cast<std::ptrdiff_t>(blob_start), bytes.end());
  return ck;
}

template <typename T>
ResidualNet<T> load_model(const Checkpoint& ck) {
  ResidualNet<T> model(ck.architecture, 0);
  auto& params = model.parameters();
  const KeyValues& kv = ck.manifest;
  if (get_int(kv, "param.count", -1) != static_cast<int>(params.size())) {
    throw IoError("checkpoint has " + require_key(kv, "param.count") +
                  " parameters, architecture needs " + std::to_string(params.size()));
  }
  const std::size_t width = ck.dtype == "f64" ? 8 : 4;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (require_key(kv, param_key(i, "name")) != p.name) {
      throw IoError("checkpoint parameter " + std::to_string(i) + " is '" +
                    kv.at(param_key(i, "name")) + "', expected '" + p.name + "'");
    }
    if (require_key(kv, param_key(i, "shape")) != shape_text(p.value.shape())) {
      throw IoError("checkpoint shape mismatch for " + p.name);
    }
    const auto offset = static_cast<std::size_t>(std::stoull(kv.at(param_key(i, "offset"))));
    if (offset + p.value.size() * width > ck.blob.size()) {
      throw IoError("checkpoint blob too short for " + p.name);
    }
    const char* src = ck.blob.data() + offset;
    auto dst = p.value.data();
    for (std::size_t j = 0; j < dst.size(); ++j) {
      dst[j] = width == 8 ? static_cast<T>(read_le<double>(src + 8 * j))
                          : static_cast<T>(read_le<float>(src + 4 * j));
    }
  }
  return model;
}

template void save_checkpoint(const std::filesystem::path&, const ResidualNet<float>&,
                              const TrainConfig&, const KeyValues&);
template void save_checkpoint(const std::filesystem::path&, const ResidualNet<double>&,
                              const TrainConfig&, const KeyValues&);
template ResidualNet<float> load_model(const Checkpoint&);
template ResidualNet<double> load_model(const Checkpoint&);

}  // namespace bvsviz

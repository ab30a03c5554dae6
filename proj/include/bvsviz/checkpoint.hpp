#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "bvsviz/classifier.hpp"
#include "bvsviz/config.hpp"
#include "bvsviz/resnet.hpp"

namespace bvsviz {

inline constexpr int kCheckpointVersion = 1;

/// On-disk layout: a magic line, a `key = value` manifest, an
/// `end_manifest` line, then the little-endian parameter blob. 32-bit
/// models store float32; 64-bit models store float64 so that reloading is
/// exact at either precision.
struct Checkpoint {
  Architecture architecture;
  TrainConfig config;
  KeyValues meta;  // free-form run facts (best epoch, data hash, ...)
  KeyValues manifest;
  std::string dtype;  // "f32" or "f64"
  std::vector<char> blob;
};

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ResidualNet<T>& model,
                     const TrainConfig& config, const KeyValues& meta = {});

/// Parses and validates the manifest (version, class encoding, blob bounds).
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Rebuilds the network and copies the stored parameters in. Throws
/// IoError if names or shapes disagree with the architecture.
template <typename T>
ResidualNet<T> load_model(const Checkpoint& ckpt);

extern template void save_checkpoint(const std::filesystem::path&, const ResidualNet<float>&,
                                     const TrainConfig&, const KeyValues&);
extern template void save_checkpoint(const std::filesystem::path&, const ResidualNet<double>&,
                                     const TrainConfig&, const KeyValues&);
extern template ResidualNet<float> load_model(const Checkpoint&);
extern template ResidualNet<double> load_model(const Checkpoint&);

}  // namespace bvsviz

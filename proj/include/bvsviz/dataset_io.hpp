#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "bvsviz/phantom.hpp"

namespace bvsviz {

/// A phantom dataset as stored on disk.
///
///   <root>/manifest.txt      labels, ids, slice counts, spec hash, seed
///   <root>/spec.txt          generator parameters
///   <root>/<id>/slice_NNN.png  16-bit gray pixels
///   <root>/<id>/mask_NNN.png   8-bit strut mask (device pullbacks only)
///   <root>/<id>/lumen.txt      one line of boundary depths per slice
struct StoredDataset {
  PhantomSpec spec;
  std::uint64_t seed = 0;
  std::vector<PullbackDataset> pullbacks;
};

void write_dataset(const std::filesystem::path& root, const StoredDataset& data);

/// Reads everything back. Pixels come back quantized to 16 bits.
StoredDataset read_dataset(const std::filesystem::path& root);

/// Loads a single slice PNG (8- or 16-bit) with no label information.
PolarImage read_slice_png(const std::filesystem::path& path);

}  // namespace bvsviz

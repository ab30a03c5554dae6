#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "bvsviz/labels.hpp"
#include "bvsviz/saliency.hpp"

namespace bvsviz {

/// Exported map: text header lines, `end_header`, then rows*cols
/// little-endian float32 values (row-major, sign-selected, unnormalized).
struct SaliencyExport {
  int rows = 0;
  int cols = 0;
  ClassLabel source_class = ClassLabel::NoDevice;
  int k_shifts = 1;
  int patch_size = 0;
  SignMode mode = SignMode::Negative;
  bool empty = false;
  std::vector<float> values;
};

std::string_view to_string(SignMode m);
SignMode parse_sign_mode(std::string_view s);  // "neg" or "pos"

/// Writes <stem>.sal and a display-normalized 8-bit <stem>.png preview.
void write_saliency(const std::filesystem::path& dir, const std::string& stem,
                    const SaliencyExport& map);

SaliencyExport read_saliency(const std::filesystem::path& path);

}  // namespace bvsviz

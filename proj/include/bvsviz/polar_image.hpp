#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bvsviz/labels.hpp"

namespace bvsviz {

/// One polar IVOCT slice. Rows index the acquisition angle, columns the
/// depth along the A-line. Pixels are row-major in [0,1].
struct PolarImage {
  int rows = 0;
  int cols = 0;
  std::vector<float> pixels;
  ClassLabel label = ClassLabel::NoDevice;
  std::string pullback_id;
  int slice_index = 0;
  /// 1 where a strut was rendered; absent for slices without a device.
  std::optional<std::vector<std::uint8_t>> strut_mask;
  /// Depth index of the lumen surface for each angle row.
  std::optional<std::vector<int>> lumen_boundary;

  float at(int r, int c) const {
    return pixels[static_cast<std::size_t>(r) * cols + c];
  }
  float& at(int r, int c) { return pixels[static_cast<std::size_t>(r) * cols + c]; }
};

/// Rotates the slice along the angle axis: output row r is input row
/// (r - s) mod rows. Masks and the lumen boundary move with the pixels.
PolarImage angular_shift(const PolarImage& image, int s);

/// Shifts any row-major rows x cols grid the same way as angular_shift.
template <typename V>
std::vector<V> shift_rows(const std::vector<V>& grid, int rows, int cols, int s);

/// Drops the last n depth columns. Throws if the lumen boundary would fall
/// outside the remaining range.
PolarImage depth_trim(const PolarImage& image, int n);

/// Copies a size x size window with top-left (row, col). Rows wrap around
/// the angle axis; columns must fit.
std::vector<float> crop_window(const PolarImage& image, int row, int col, int size);

}  // namespace bvsviz

#include "bvsviz/polar_image.hpp"

#include <algorithm>
#include <stdexcept>

namespace bvsviz {

namespace {
int wrap(int v, int n) {
  const int m = v % n;
  return m < 0 ? m + n : m;
}
}  // namespace

template <typename V>
std::vector<V> shift_rows(const std::vector<V>& grid, int rows, int cols, int s) {
  if (rows <= 0) return grid;
  std::vector<V> out(grid.size());
  const int shift = wrap(s, rows);
  for (int r = 0; r < rows; ++r) {
    const int src = wrap(r - shift, rows);
    std::copy_n(grid.begin() + static_cast<std::ptrdiff_t>(src) * cols, cols,
                out.begin() + static_cast<std::ptrdiff_t>(r) * cols);
  }
  return out;
}

template std::vector<float> shift_rows(const std::vector<float>&, int, int, int);
template std::vector<double> shift_rows(const std::vector<double>&, int, int, int);
template std::vector<int> shift_rows(const std::vector<int>&, int, int, int);
template std::vector<std::uint8_t> shift_rows(const std::vector<std::uint8_t>&, int,
                                              int, int);

PolarImage angular_shift(const PolarImage& image, int s) {
  PolarImage out = image;
  out.pixels = shift_rows(image.pixels, image.rows, image.cols, s);
  if (image.strut_mask) {
    out.strut_mask = shift_rows(*image.strut_mask, image.rows, image.cols, s);
  }
  if (image.lumen_boundary) {
    out.lumen_boundary = shift_rows(*image.lumen_boundary, image.rows, 1, s);
  }
  return out;
}

PolarImage depth_trim(const PolarImage& image, int n) {
  if (n < 0 || n >= image.cols) {
    throw std::invalid_argument("depth trim of " + std::to_string(n) +
                                " columns on an image of depth " +
                                std::to_string(image.cols));
  }
  if (n == 0) return image;
  const int keep = image.cols - n;
  if (image.lumen_boundary) {
    for (int b : *image.lumen_boundary) {
      if (b >= keep) {
        throw std::invalid_argument("depth trim to " + std::to_string(keep) +
                                    " columns cuts the lumen boundary at depth " +
                                    std::to_string(b));
      }
    }
  }
  PolarImage out = image;
  out.cols = keep;
  out.pixels.resize(static_cast<std::size_t>(image.rows) * keep);
  for (int r = 0; r < image.rows; ++r) {
    std::copy_n(image.pixels.begin() + static_cast<std::ptrdiff_t>(r) * image.cols,
                keep, out.pixels.begin() + static_cast<std::ptrdiff_t>(r) * keep);
  }
  if (image.strut_mask) {
    std::vector<std::uint8_t> m(static_cast<std::size_t>(image.rows) * keep);
    for (int r = 0; r < image.rows; ++r) {
      std::copy_n(image.strut_mask->begin() + static_cast<std::ptrdiff_t>(r) * image.cols,
                  keep, m.begin() + static_cast<std::ptrdiff_t>(r) * keep);
    }
    out.strut_mask = std::move(m);
  }
  return out;
}

std::vector<float> crop_window(const PolarImage& image, int row, int col, int size) {
  if (size > image.rows || col < 0 || col + size > image.cols) {
    throw std::invalid_argument("crop of " + std::to_string(size) + " at (" +
                                std::to_string(row) + "," + std::to_string(col) +
                                ") does not fit a " + std::to_string(image.rows) +
                                "x" + std::to_string(image.cols) + " image");
  }
  std::vector<float> out(static_cast<std::size_t>(size) * size);
  for (int r = 0; r < size; ++r) {
    const int src = wrap(row + r, image.rows);
    std::copy_n(image.pixels.begin() + static_cast<std::ptrdiff_t>(src) * image.cols + col,
                size, out.begin() + static_cast<std::ptrdiff_t>(r) * size);
  }
  return out;
}

}  // namespace bvsviz

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

namespace bvsviz {

/// File or format problems (missing file, bad PNG, malformed header).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GrayImage {
  int rows = 0;
  int cols = 0;
  int bit_depth = 8;  // 8 or 16 as stored
  std::vector<float> pixels;  // scaled to [0,1]
};

void write_png_gray16(const std::filesystem::path& path, int rows, int cols,
                      std::span<const std::uint16_t> pixels);
void write_png_gray8(const std::filesystem::path& path, int rows, int cols,
                     std::span<const std::uint8_t> pixels);
/// pixels: interleaved R,G,B.
void write_png_rgb8(const std::filesystem::path& path, int rows, int cols,
                    std::span<const std::uint8_t> pixels);

/// Reads an 8- or 16-bit grayscale PNG.
GrayImage read_png_gray(const std::filesystem::path& path);

/// Raw samples of an 8- or 16-bit grayscale PNG without rescaling.
std::vector<std::uint16_t> read_png_gray_raw(const std::filesystem::path& path, int& rows,
                                             int& cols, int& bit_depth);

/// Values in [0,1] (clamped) to 16- or 8-bit codes by rounding.
std::vector<std::uint16_t> to_u16(std::span<const float> values);
std::vector<std::uint8_t> to_u8(std::span<const float> values);

/// Whole-file helpers.
std::vector<char> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const char> bytes);

}  // namespace bvsviz

#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace bvsviz {

/// Square single-channel image in cartesian space. Pixel (i, j) sits at
/// x = j - size/2, y = size/2 - i, so +x points right and +y up; polar
/// angle 0 lies on +x and grows counterclockwise.
struct CartesianImage {
  int size = 0;
  double scale = 0;  // pixels per depth sample
  std::vector<float> pixels;

  float at(int i, int j) const { return pixels[static_cast<std::size_t>(i) * size + j]; }
};

/// Inverse mapping with bilinear sampling. Row r of the polar grid is the
/// angle 2*pi*r/rows (wrapping); depth is clamped at the last column and
/// anything at depth >= cols is 0. scale = (size/2 - 1) / cols.
CartesianImage polar_to_cartesian(std::span<const float> polar, int rows, int cols,
                                  int out_size);

/// Cartesian pixel position (row, col) of polar sample (angle row, depth).
struct PixelPos {
  double row = 0;
  double col = 0;
};
PixelPos polar_to_pixel(double angle_row, double depth, int rows, int cols, int out_size);

/// Counterclockwise rotation by alpha radians about the image center,
/// bilinear, zero outside.
CartesianImage rotate(const CartesianImage& img, double alpha);

/// Interleaved RGB, channels in [0,1].
struct RgbImage {
  int size = 0;
  std::vector<float> rgb;
};

/// R = saliency, G = B = OCT intensity.
RgbImage overlay(const CartesianImage& oct, const CartesianImage& saliency);

void write_png(const std::filesystem::path& path, const RgbImage& img);
void write_png(const std::filesystem::path& path, const CartesianImage& img);

/// Metadata written next to a raw volume.
struct VolumeHeader {
  int width = 0;   // x
  int height = 0;  // y
  int depth = 0;   // number of slices
  double slice_spacing = 1;
  double scale = 0;  // in-plane pixels per depth sample
  std::string dtype = "float32";
  std::string endian = "little";
  std::string raw_file;
};

struct StackFiles {
  std::vector<std::filesystem::path> slices;
  std::filesystem::path volume;
  std::filesystem::path header;
};

/// Writes slice_NNN.png for every image, plus volume.raw (slice-major
/// little-endian float32) and volume.txt.
StackFiles render_stack(const std::vector<CartesianImage>& stack,
                        const std::filesystem::path& out_dir, double slice_spacing = 1.0);

VolumeHeader read_volume_header(const std::filesystem::path& path);

/// Loads a raw volume described by header (path relative to its folder).
std::vector<float> read_volume(const std::filesystem::path& header_path);

}  // namespace bvsviz

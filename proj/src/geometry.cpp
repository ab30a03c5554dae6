#include "bvsviz/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <numbers>
#include <stdexcept>

#include "bvsviz/config.hpp"
#include "bvsviz/image_io.hpp"

namespace bvsviz {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::string numbered(const char* stem, int i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%03d.%s", stem, i, ext);
  return buf;
}

}  // namespace

CartesianImage polar_to_cartesian(std::span<const float> polar, int rows, int cols,
                                  int out_size) {
  if (out_size < 2) throw std::invalid_argument("out_size must be at least 2");
  if (rows < 1 || cols < 1 || polar.size() != static_cast<std::size_t>(rows) * cols) {
    throw std::invalid_argument("polar grid size does not match rows x cols");
  }
  CartesianImage out;
  out.size = out_size;
  out.scale = (out_size / 2.0 - 1.0) / cols;
  out.pixels.assign(static_cast<std::size_t>(out_size) * out_size, 0.0f);
  const double half = out_size / 2.0;
  for (int i = 0; i < out_size; ++i) {
    const double y = half - i;
    for (int j = 0; j < out_size; ++j) {
      const double x = j - half;
      const double d = std::hypot(x, y) / out.scale;
      if (d >= cols) continue;
      double theta = std::atan2(y, x);
      if (theta < 0) theta += kTwoPi;
      const double t = theta / kTwoPi * rows;
      const int r0 = static_cast<int>(std::floor(t));
      const double fr = t - r0;
      const int ra = ((r0 % rows) + rows) % rows;
      const int rb = (ra + 1) % rows;
      const double dc = std::min(d, static_cast<double>(cols - 1));
      const int c0 = static_cast<int>(std::floor(dc));
      const int c1 = std::min(c0 + 1, cols - 1);
      const double fc = dc - c0;
      auto px = [&](int r, int c) {
        return static_cast<double>(polar[static_cast<std::size_t>(r) * cols + c]);
      };
      const double v = (1 - fr) * ((1 - fc) * px(ra, c0) + fc * px(ra, c1)) +
                       fr * ((1 - fc) * px(rb, c0) + fc * px(rb, c1));
      out.pixels[static_cast<std::size_t>(i) * out_size + j] = static_cast<float>(v);
    }
  }
  return out;
}

PixelPos polar_to_pixel(double angle_row, double depth, int rows, int cols, int out_size) {
  const double scale = (out_size / 2.0 - 1.0) / cols;
  const double theta = kTwoPi * angle_row / rows;
  const double half = out_size / 2.0;
  return {half - depth * scale * std::sin(theta), half + depth * scale * std::cos(theta)};
}

CartesianImage rotate(const CartesianImage& img, double alpha) {
  CartesianImage out = img;
  std::fill(out.pixels.begin(), out.pixels.end(), 0.0f);
  const int n = img.size;
  const double half = n / 2.0;
  const double c = std::cos(alpha), s = std::sin(alpha);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      // Source point: rotate the destination back by -alpha.
      const double x = j - half, y = half - i;
      const double xs = c * x + s * y;
      const double ys = -s * x + c * y;
      const double si = half - ys, sj = xs + half;
      const int i0 = static_cast<int>(std::floor(si));
      const int j0 = static_cast<int>(std::floor(sj));
      if (i0 < 0 || j0 < 0 || i0 + 1 >= n || j0 + 1 >= n) continue;
      const double fi = si - i0, fj = sj - j0;
      const double v = (1 - fi) * ((1 - fj) * img.at(i0, j0) + fj * img.at(i0, j0 + 1)) +
                       fi * ((1 - fj) * img.at(i0 + 1, j0) + fj * img.at(i0 + 1, j0 + 1));
      out.pixels[static_cast<std::size_t>(i) * n + j] = static_cast<float>(v);
    }
  }
  return out;
}

RgbImage overlay(const CartesianImage& oct, const CartesianImage& saliency) {
  if (oct.size != saliency.size || oct.pixels.size() != saliency.pixels.size()) {
    throw std::invalid_argument("overlay: OCT is " + std::to_string(oct.size) +
                                " px, saliency is " + std::to_string(saliency.size) + " px");
  }
  RgbImage out;
  out.size = oct.size;
  out.rgb.resize(oct.pixels.size() * 3);
  for (std::size_t i = 0; i < oct.pixels.size(); ++i) {
    const float g = std::clamp(oct.pixels[i], 0.0f, 1.0f);
    out.rgb[3 * i] = std::clamp(saliency.pixels[i], 0.0f, 1.0f);
    out.rgb[3 * i + 1] = g;
    out.rgb[3 * i + 2] = g;
  }
  return out;
}

void write_png(const std::filesystem::path& path, const RgbImage& img) {
  write_png_rgb8(path, img.size, img.size, to_u8(img.rgb));
}

void write_png(const std::filesystem::path& path, const CartesianImage& img) {
  write_png_gray8(path, img.size, img.size, to_u8(img.pixels));
}

StackFiles render_stack(const std::vector<CartesianImage>& stack,
                        const std::filesystem::path& out_dir, double slice_spacing) {
  if (stack.empty()) throw std::invalid_argument("render_stack needs at least one slice");
  const int n = stack.front().size;
  for (std::size_t k = 0; k < stack.size(); ++k) {
    if (stack[k].size != n || stack[k].pixels.size() != static_cast<std::size_t>(n) * n) {
      throw std::invalid_argument("slice " + std::to_string(k) + " is " +
                                  std::to_string(stack[k].size) + " px, expected " +
                                  std::to_string(n));
    }
  }
  std::filesystem::create_directories(out_dir);
  StackFiles files;
  std::vector<char> raw;
  raw.reserve(stack.size() * stack.front().pixels.size() * 4);
  for (std::size_t k = 0; k < stack.size(); ++k) {
    const auto path = out_dir / numbered("slice", static_cast<int>(k), "png");
    write_png(path, stack[k]);
    files.slices.push_back(path);
    for (float v : stack[k].pixels) {
      std::uint32_t b;
      std::memcpy(&b, &v, 4);
      for (int i = 0; i < 4; ++i) raw.push_back(static_cast<char>((b >> (8 * i)) & 0xff));
    }
  }
  files.volume = out_dir / "volume.raw";
  files.header = out_dir / "volume.txt";
  write_file(files.volume, raw);
  KeyValues h;
  h["width"] = std::to_string(n);
  h["height"] = std::to_string(n);
  h["depth"] = std::to_string(stack.size());
  h["slice_spacing"] = format_double(slice_spacing);
  h["scale"] = format_double(stack.front().scale);
  h["dtype"] = "float32";
  h["endian"] = "little";
  h["order"] = "x-fastest,y,slice";
  h["raw_file"] = "volume.raw";
  write_key_values(files.header, h);
  return files;
}

VolumeHeader read_volume_header(const std::filesystem::path& path) {
  const KeyValues kv = read_key_values(path);
  VolumeHeader h;
  h.width = get_int(kv, "width", 0);
  h.height = get_int(kv, "height", 0);
  h.depth = get_int(kv, "depth", 0);
  h.slice_spacing = get_double(kv, "slice_spacing", 1.0);
  h.scale = get_double(kv, "scale", 0.0);
  h.dtype = get_string(kv, "dtype", "");
  h.endian = get_string(kv, "endian", "");
  h.raw_file = get_string(kv, "raw_file", "");
  if (h.width <= 0 || h.height <= 0 || h.depth <= 0 || h.dtype != "float32" ||
      h.endian != "little" || h.raw_file.empty()) {
    throw IoError(path.string() + ": incomplete volume header");
  }
  return h;
}

std::vector<float> read_volume(const std::filesystem::path& header_path) {
  const VolumeHeader h = read_volume_header(header_path);
  const auto bytes = read_file(header_path.parent_path() / h.raw_file);
  const std::size_t count = static_cast<std::size_t>(h.width) * h.height * h.depth;
  if (bytes.size() != count * 4) {
    throw IoError("volume is " + std::to_string(bytes.size()) + " bytes, header implies " +
                  std::to_string(count * 4));
  }
  std::vector<float> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t b = 0;
    for (int k = 0; k < 4; ++k) {
      b |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 * i + k])) << (8 * k);
    }
    std::memcpy(&out[i], &b, 4);
  }
  return out;
}

}  // namespace bvsviz

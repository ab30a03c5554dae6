#include "bvsviz/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <string>

namespace bvsviz {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

File open_file(const std::filesystem::path& path, const char* mode) {
  File f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

[[noreturn]] void png_fail(png_structp png, png_const_charp msg) {
  auto* what = static_cast<std::string*>(png_get_error_ptr(png));
  if (what) *what = msg;
  png_longjmp(png, 1);
}

void png_warn(png_structp, png_const_charp) {}

// Writes rows of already packed samples; setjmp stays in this frame so no
// C++ object with a destructor is skipped by the longjmp.
void write_png(const std::filesystem::path& path, int rows, int cols, int depth,
               int color_type, const std::uint8_t* data, std::size_t row_bytes) {
  if (rows <= 0 || cols <= 0) throw IoError("empty image for " + path.string());
  File f = open_file(path, "wb");
  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_fail, png_warn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng allocation failed");
  }
  std::vector<png_bytep> row_ptrs(static_cast<std::size_t>(rows));
  for (int r = 0; r < rows; ++r) {
    row_ptrs[static_cast<std::size_t>(r)] =
        const_cast<png_bytep>(data + static_cast<std::size_t>(r) * row_bytes);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png write failed for " + path.string() + ": " + err);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(cols), static_cast<png_uint_32>(rows),
               depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (depth == 16) png_set_swap(png);  // host little-endian to PNG big-endian
  png_write_image(png, row_ptrs.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png_gray16(const std::filesystem::path& path, int rows, int cols,
                      std::span<const std::uint16_t> pixels) {
  if (pixels.size() != static_cast<std::size_t>(rows) * cols) {
    throw IoError("pixel count does not match " + std::to_string(rows) + "x" +
                  std::to_string(cols));
  }
  write_png(path, rows, cols, 16, PNG_COLOR_TYPE_GRAY,
            reinterpret_cast<const std::uint8_t*>(pixels.data()),
            static_cast<std::size_t>(cols) * 2);
}

void write_png_gray8(const std::filesystem::path& path, int rows, int cols,
                     std::span<const std::uint8_t> pixels) {
  if (pixels.size() != static_cast<std::size_t>(rows) * cols) {
    throw IoError("pixel count does not match " + std::to_string(rows) + "x" +
                  std::to_string(cols));
  }
  write_png(path, rows, cols, 8, PNG_COLOR_TYPE_GRAY, pixels.data(),
            static_cast<std::size_t>(cols));
}

void write_png_rgb8(const std::filesystem::path& path, int rows, int cols,
                    std::span<const std::uint8_t> pixels) {
  if (pixels.size() != static_cast<std::size_t>(rows) * cols * 3) {
    throw IoError("pixel count does not match " + std::to_string(rows) + "x" +
                  std::to_string(cols) + "x3");
  }
  write_png(path, rows, cols, 8, PNG_COLOR_TYPE_RGB, pixels.data(),
            static_cast<std::size_t>(cols) * 3);
}

std::vector<std::uint16_t> read_png_gray_raw(const std::filesystem::path& path, int& rows,
                                             int& cols, int& bit_depth) {
  File f = open_file(path, "rb");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw IoError(path.string() + " is not a PNG file");
  }
  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_fail, png_warn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng allocation failed");
  }
  // Allocated before setjmp; filled after the header is known.
  std::vector<std::uint8_t> buffer;
  std::vector<png_bytep> row_ptrs;
  png_uint_32 w = 0, h = 0;
  int depth = 0, color = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("png read failed for " + path.string() + ": " + err);
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  png_get_IHDR(png, info, &w, &h, &depth, &color, nullptr, nullptr, nullptr);
  if (color != PNG_COLOR_TYPE_GRAY || (depth != 8 && depth != 16)) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(path.string() + ": expected 8- or 16-bit grayscale");
  }
  if (depth == 16) png_set_swap(png);
  png_read_update_info(png, info);
  const std::size_t row_bytes = png_get_rowbytes(png, info);
  buffer.resize(row_bytes * h);
  row_ptrs.resize(h);
  for (png_uint_32 r = 0; r < h; ++r) row_ptrs[r] = buffer.data() + r * row_bytes;
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  rows = static_cast<int>(h);
  cols = static_cast<int>(w);
  bit_depth = depth;
  std::vector<std::uint16_t> out(static_cast<std::size_t>(w) * h);
  if (depth == 16) {
    for (png_uint_32 r = 0; r < h; ++r) {
      std::copy_n(reinterpret_cast<const std::uint16_t*>(row_ptrs[r]), w,
                  out.data() + static_cast<std::size_t>(r) * w);
    }
  } else {
    for (png_uint_32 r = 0; r < h; ++r) {
      std::copy_n(row_ptrs[r], w, out.data() + static_cast<std::size_t>(r) * w);
    }
  }
  return out;
}

GrayImage read_png_gray(const std::filesystem::path& path) {
  GrayImage img;
  const auto raw = read_png_gray_raw(path, img.rows, img.cols, img.bit_depth);
  const float scale = img.bit_depth == 16 ? 1.0f / 65535.0f : 1.0f / 255.0f;
  img.pixels.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) img.pixels[i] = raw[i] * scale;
  return img;
}

std::vector<std::uint16_t> to_u16(std::span<const float> values) {
  std::vector<std::uint16_t> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float v = std::clamp(values[i], 0.0f, 1.0f);
    out[i] = static_cast<std::uint16_t>(std::lround(v * 65535.0f));
  }
  return out;
}

std::vector<std::uint8_t> to_u8(std::span<const float> values) {
  std::vector<std::uint8_t> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float v = std::clamp(values[i], 0.0f, 1.0f);
    out[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  return out;
}

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, std::span<const char> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace bvsviz

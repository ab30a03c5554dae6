#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>

#include "bvsviz/geometry.hpp"
#include "bvsviz/image_io.hpp"
#include "helpers.hpp"

using namespace bvsviz;
using bvsviz::testing::TempDir;

namespace {

CartesianImage constant_image(int size, float v) {
  CartesianImage img;
  img.size = size;
  img.scale = 1;
  img.pixels.assign(static_cast<std::size_t>(size) * size, v);
  return img;
}

}  // namespace

TEST_CASE("depth zero maps to the image center") {
  const int rows = 32, cols = 20, size = 64;
  std::vector<float> polar(static_cast<std::size_t>(rows) * cols, 0.0f);
  for (int r = 0; r < rows; ++r) polar[static_cast<std::size_t>(r) * cols] = 1.0f;
  const auto img = polar_to_cartesian(polar, rows, cols, size);
  CHECK(img.at(size / 2, size / 2) == 1.0f);
  CHECK(img.scale == doctest::Approx((size / 2.0 - 1) / cols));
  const auto p = polar_to_pixel(5, 0, rows, cols, size);
  CHECK(p.row == size / 2.0);
  CHECK(p.col == size / 2.0);
}

TEST_CASE("angle-constant input renders radially symmetric") {
  const int rows = 64, cols = 30, size = 128;
  std::vector<float> polar(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) polar[static_cast<std::size_t>(r) * cols + c] = std::sin(0.3f * c) + 1.5f;
  }
  const auto img = polar_to_cartesian(polar, rows, cols, size);
  const int h = size / 2;
  // Quarter turns map pixel centers onto pixel centers at equal radius.
  for (int i = 1; i < size; ++i) {
    for (int j = 1; j < size; ++j) {
      const int x = j - h, y = h - i;
      const int i2 = h - x, j2 = h - y;  // (x, y) -> (-y, x)
      CHECK(std::abs(img.at(i, j) - img.at(i2, j2)) < 1e-6);
    }
  }
}

TEST_CASE("single bright samples land on the forward mapping") {
  const int rows = 48, cols = 30, size = 200;
  const double scale = (size / 2.0 - 1) / cols;
  for (int r : {0, 7, 12, 24, 36, 45}) {
    for (int c : {4, 15, 28}) {
      std::vector<float> polar(static_cast<std::size_t>(rows) * cols, 0.0f);
      polar[static_cast<std::size_t>(r) * cols + c] = 1.0f;
      const auto img = polar_to_cartesian(polar, rows, cols, size);
      int bi = 0, bj = 0;
      for (int i = 0; i < size; ++i) {
        for (int j = 0; j < size; ++j) {
          if (img.at(i, j) > img.at(bi, bj)) bi = i, bj = j;
        }
      }
      const double t = 2 * M_PI * r / rows;
      const double want_i = size / 2.0 - c * scale * std::sin(t);
      const double want_j = size / 2.0 + c * scale * std::cos(t);
      CHECK(std::hypot(bi - want_i, bj - want_j) <= 1.0);
      const auto p = polar_to_pixel(r, c, rows, cols, size);
      CHECK(p.row == doctest::Approx(want_i));
      CHECK(p.col == doctest::Approx(want_j));
    }
  }
}

TEST_CASE("angle zero points right and angles grow counterclockwise") {
  const int rows = 4, cols = 10, size = 100;
  const auto right = polar_to_pixel(0, 8, rows, cols, size);
  const auto up = polar_to_pixel(1, 8, rows, cols, size);
  CHECK(right.col > size / 2.0);
  CHECK(right.row == doctest::Approx(size / 2.0));
  CHECK(up.row < size / 2.0);
  CHECK(up.col == doctest::Approx(size / 2.0));
}

TEST_CASE("pixels beyond the depth range are exactly zero") {
  const int rows = 16, cols = 12, size = 80;
  const std::vector<float> polar(static_cast<std::size_t>(rows) * cols, 1.0f);
  const auto img = polar_to_cartesian(polar, rows, cols, size);
  for (int i = 0; i < size; ++i) {
    for (int j = 0; j < size; ++j) {
      const double d = std::hypot(j - size / 2.0, size / 2.0 - i) / img.scale;
      if (d >= cols) CHECK(img.at(i, j) == 0.0f);
      if (d < cols - 1) CHECK(img.at(i, j) == 1.0f);
    }
  }
}

TEST_CASE("angular shift equals a cartesian rotation") {
  PhantomSpec spec = bvsviz::testing::tiny_spec();
  const auto pb = generate_pullback(spec, ClassLabel::Bvs, "g", 3);
  const auto img = depth_trim(pb.slices[1], spec.depth_trim);
  for (int s : {9, 50, 128}) {
    const auto a = polar_to_cartesian(angular_shift(img, s).pixels, img.rows, img.cols, 400);
    const auto b = rotate(polar_to_cartesian(img.pixels, img.rows, img.cols, 400), 2 * M_PI * s / img.rows);
    double diff = 0;
    long n = 0;
    for (int i = 0; i < 400; ++i) {
      for (int j = 0; j < 400; ++j) {
        if (std::hypot(j - 200.0, 200.0 - i) > 0.9 * 199) continue;
        diff += std::abs(a.at(i, j) - b.at(i, j));
        ++n;
      }
    }
    const auto [lo, hi] = std::minmax_element(a.pixels.begin(), a.pixels.end());
    CHECK(diff / n < 0.02 * (*hi - *lo));
  }
}

TEST_CASE("rotation by zero is the identity and a quarter turn is exact") {
  auto img = constant_image(20, 0.0f);
  img.pixels[static_cast<std::size_t>(10 * 20 + 15)] = 1.0f;  // x = 5, y = 0
  CHECK(rotate(img, 0.0).pixels == img.pixels);
  const auto q = rotate(img, M_PI / 2);
  CHECK(q.at(5, 10) == doctest::Approx(1.0f));  // x = 0, y = 5
}

TEST_CASE("overlay channels") {
  auto oct = constant_image(4, 0.0f);
  for (std::size_t i = 0; i < oct.pixels.size(); ++i) oct.pixels[i] = static_cast<float>(i) / 16;
  const auto zero = constant_image(4, 0.0f);
  const auto a = overlay(oct, zero);
  for (std::size_t i = 0; i < 16; ++i) {
    CHECK(a.rgb[3 * i] == 0.0f);
    CHECK(a.rgb[3 * i + 1] == oct.pixels[i]);
    CHECK(a.rgb[3 * i + 2] == oct.pixels[i]);
  }
  auto sal = constant_image(4, 0.0f);
  sal.pixels[5] = 1.0f;
  const auto b = overlay(zero, sal);
  for (std::size_t i = 0; i < 16; ++i) {
    CHECK(b.rgb[3 * i] == (i == 5 ? 1.0f : 0.0f));
    CHECK(b.rgb[3 * i + 1] == 0.0f);
    CHECK(b.rgb[3 * i + 2] == 0.0f);
  }
  float last = -1;
  for (float v : {0.0f, 0.1f, 0.4f, 0.9f, 1.0f}) {
    sal.pixels[5] = v;
    const float r = overlay(oct, sal).rgb[15];
    CHECK(r >= last);
    last = r;
  }
  CHECK_THROWS(overlay(oct, constant_image(6, 0.0f)));
}

TEST_CASE("stack export of one and many slices") {
  TempDir dir("stack");
  auto one = constant_image(8, 0.0f);
  for (std::size_t i = 0; i < one.pixels.size(); ++i) one.pixels[i] = 0.01f * static_cast<float>(i);
  one.scale = 0.75;
  const auto f1 = render_stack({one}, dir.path() / "one");
  CHECK(read_volume(f1.header) == one.pixels);
  const auto h1 = read_volume_header(f1.header);
  CHECK(h1.depth == 1);
  CHECK(h1.scale == 0.75);

  const std::vector<CartesianImage> many(7, one);
  const auto f7 = render_stack(many, dir.path() / "many", 0.2);
  CHECK(std::filesystem::file_size(f7.volume) == 7u * 8 * 8 * 4);
  CHECK(f7.slices.size() == 7);
  const auto h7 = read_volume_header(f7.header);
  CHECK(h7.width == 8);
  CHECK(h7.height == 8);
  CHECK(h7.depth == 7);
  CHECK(h7.slice_spacing == 0.2);
  CHECK(h7.raw_file == "volume.raw");
  const auto png = read_png_gray(f7.slices[3]);
  CHECK(png.rows == 8);
  CHECK(png.cols == 8);

  // Little-endian float32 on disk.
  std::ifstream raw(f7.volume, std::ios::binary);
  unsigned char b[8];
  raw.read(reinterpret_cast<char*>(b), 8);
  const float want = one.pixels[1];
  std::uint32_t bits;
  std::memcpy(&bits, &want, 4);
  for (int k = 0; k < 4; ++k) CHECK(b[4 + k] == ((bits >> (8 * k)) & 0xff));

  CHECK_THROWS(render_stack({}, dir.path() / "none"));
  CHECK_THROWS(render_stack({one, constant_image(10, 0.0f)}, dir.path() / "mixed"));
}

TEST_CASE("helical struts advance counterclockwise at the generator rate") {
  PhantomSpec spec = bvsviz::testing::tiny_spec();
  spec.helix_families = 1;
  spec.struts_per_family = 1;
  spec.helix_rate = 5.0;
  spec.slices_per_pullback = 8;
  const auto pb = generate_pullback(spec, ClassLabel::MetalStent, "h", 17);
  std::vector<CartesianImage> stack;
  for (const auto& s : pb.slices) {
    const auto t = depth_trim(s, spec.depth_trim);
    std::vector<float> mask(t.strut_mask->begin(), t.strut_mask->end());
    stack.push_back(polar_to_cartesian(mask, t.rows, t.cols, 256));
  }
  TempDir dir("helix");
  const auto files = render_stack(stack, dir.path());
  const auto vol = read_volume(files.header);
  std::vector<double> angles;
  for (int k = 0; k < 8; ++k) {
    double sx = 0, sy = 0;
    for (int i = 0; i < 256; ++i) {
      for (int j = 0; j < 256; ++j) {
        const float v = vol[static_cast<std::size_t>(k) * 256 * 256 + static_cast<std::size_t>(i) * 256 + j];
        sx += v * (j - 128.0);
        sy += v * (128.0 - i);
      }
    }
    angles.push_back(std::atan2(sy, sx));
  }
  const double step = 2 * M_PI * spec.helix_rate / spec.angles;
  for (std::size_t k = 1; k < angles.size(); ++k) {
    double d = angles[k] - angles[k - 1];
    d = std::remainder(d, 2 * M_PI);
    CHECK(d > 0);
    CHECK(d == doctest::Approx(step).epsilon(0.25));
  }
}

#pragma once

#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include "bvsviz/phantom.hpp"
#include "bvsviz/polar_image.hpp"
#include "bvsviz/rng.hpp"
#include "bvsviz/tensor.hpp"

namespace bvsviz::testing {

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.values()) v = static_cast<T>(u(rng));
  return t;
}

inline PolarImage random_image(int rows, int cols, Rng& rng) {
  PolarImage img;
  img.rows = rows;
  img.cols = cols;
  img.pixels.resize(static_cast<std::size_t>(rows) * cols);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& v : img.pixels) v = u(rng);
  return img;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("bvsviz_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// Small desk-like spec that renders quickly.
inline PhantomSpec tiny_spec() {
  PhantomSpec s = PhantomSpec::desk();
  s.slices_per_pullback = 3;
  return s;
}

}  // namespace bvsviz::testing

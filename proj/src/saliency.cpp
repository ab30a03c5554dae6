#include "bvsviz/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bvsviz {

namespace {

std::vector<int> linear_positions(int extent, int patch, int n) {
  std::vector<int> pos(static_cast<std::size_t>(n), 0);
  if (n == 1) return pos;
  const double step = static_cast<double>(extent - patch) / (n - 1);
  for (int i = 0; i < n; ++i) {
    pos[static_cast<std::size_t>(i)] = static_cast<int>(std::lround(i * step));
  }
  return pos;
}

// Coverage statistics of one axis after border cropping.
struct AxisCoverage {
  long covered = 0;  // samples hit by at least one cropped patch
  double mean = 0;   // over covered samples
  double mean_sq = 0;
};

AxisCoverage axis_coverage(int extent, int patch, int crop,
                           const std::vector<int>& pos) {
  std::vector<int> count(static_cast<std::size_t>(extent), 0);
  for (int p : pos) {
    for (int x = p + crop; x < p + patch - crop; ++x) ++count[static_cast<std::size_t>(x)];
  }
  AxisCoverage a;
  for (int c : count) {
    if (c == 0) continue;
    ++a.covered;
    a.mean += c;
    a.mean_sq += static_cast<double>(c) * c;
  }
  if (a.covered > 0) {
    a.mean /= static_cast<double>(a.covered);
    a.mean_sq /= static_cast<double>(a.covered);
  }
  return a;
}

int border_pixels(int patch_size, double border_fraction) {
  return static_cast<int>(std::lround(border_fraction * patch_size));
}

}  // namespace

TileLayout tile_patches(int rows, int cols, int patch_size, double border_fraction) {
  if (patch_size < 1 || patch_size > rows || patch_size > cols) {
    throw std::invalid_argument("patch of " + std::to_string(patch_size) +
                                " does not fit a " + std::to_string(rows) + "x" +
                                std::to_string(cols) + " image");
  }
  if (!(border_fraction >= 0.0 && border_fraction < 0.5)) {
    throw std::invalid_argument("border fraction must lie in [0, 0.5)");
  }
  const int crop = border_pixels(patch_size, border_fraction);

  struct Candidate {
    int na, nd;
    long covered;
    double cv;
  };
  std::vector<Candidate> cands;
  for (int na = 1; na <= kPatchCount; ++na) {
    if (kPatchCount % na) continue;
    const int nd = kPatchCount / na;
    const auto ra = axis_coverage(rows, patch_size, crop, linear_positions(rows, patch_size, na));
    const auto rd = axis_coverage(cols, patch_size, crop, linear_positions(cols, patch_size, nd));
    const long covered = ra.covered * rd.covered;
    double cv = 0;
    if (covered > 0) {
      // Per-pixel count is the product of the two axis counts.
      const double m = ra.mean * rd.mean;
      const double var = std::max(0.0, ra.mean_sq * rd.mean_sq - m * m);
      cv = std::sqrt(var) / m;
    }
    cands.push_back({na, nd, covered, cv});
  }
  const bool cols_longer = cols >= rows;
  const Candidate* best = nullptr;
  for (const auto& c : cands) {
    if (!best) {
      best = &c;
      continue;
    }
    if (c.covered != best->covered) {
      if (c.covered > best->covered) best = &c;
      continue;
    }
    if (std::abs(c.cv - best->cv) > 1e-12) {
      if (c.cv < best->cv) best = &c;
      continue;
    }
    const bool more_on_long = cols_longer ? c.nd > best->nd : c.na > best->na;
    if (more_on_long) best = &c;
  }

  TileLayout t;
  t.grid_rows = best->na;
  t.grid_cols = best->nd;
  const auto pr = linear_positions(rows, patch_size, best->na);
  const auto pc = linear_positions(cols, patch_size, best->nd);
  for (int r : pr) {
    for (int c : pc) t.positions.push_back({r, c});
  }
  return t;
}

int argmax(const ClassProbabilities& p) {
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

template <typename T>
int ModelScorer<T>::chunk() const {
  const long px = static_cast<long>(patch_size_) * patch_size_;
  return static_cast<int>(std::clamp<long>(262144 / px, 1, kPatchCount));
}

template <typename T>
std::vector<ClassProbabilities> ModelScorer<T>::predict(std::span<const float> patches,
                                                        int count) const {
  const std::size_t px = static_cast<std::size_t>(patch_size_) * patch_size_;
  if (patches.size() != px * static_cast<std::size_t>(count)) {
    throw ShapeError("predict: patch buffer size mismatch");
  }
  std::vector<ClassProbabilities> out;
  for (int start = 0; start < count; start += chunk()) {
    const int n = std::min(chunk(), count - start);
    auto first = patches.begin() + static_cast<std::ptrdiff_t>(start * px);
    Tensor<T> batch({n, 1, patch_size_, patch_size_},
                    std::vector<T>(first, first + static_cast<std::ptrdiff_t>(n * px)));
    const Tensor<T> prob = softmax_rows(predict_logits(model_, batch));
    const int k = prob.dim(1);
    if (k != kNumClasses) throw ShapeError("model does not emit 3 classes");
    for (int i = 0; i < n; ++i) {
      ClassProbabilities p{};
      for (int j = 0; j < k; ++j) {
        p[static_cast<std::size_t>(j)] = static_cast<double>(prob[static_cast<std::size_t>(i) * k + j]);
      }
      out.push_back(p);
    }
  }
  return out;
}

template <typename T>
std::vector<float> ModelScorer<T>::saliency(std::span<const float> patches, int count,
                                            ClassLabel target) const {
  const std::size_t px = static_cast<std::size_t>(patch_size_) * patch_size_;
  if (patches.size() != px * static_cast<std::size_t>(count)) {
    throw ShapeError("saliency: patch buffer size mismatch");
  }
  std::vector<float> out;
  out.reserve(patches.size());
  for (int start = 0; start < count; start += chunk()) {
    const int n = std::min(chunk(), count - start);
    auto first = patches.begin() + static_cast<std::ptrdiff_t>(start * px);
    Tensor<T> batch({n, 1, patch_size_, patch_size_},
                    std::vector<T>(first, first + static_cast<std::ptrdiff_t>(n * px)));
    const Tensor<T> g = guided_gradient(model_, batch, to_index(target));
    for (T v : g.data()) out.push_back(static_cast<float>(v));
  }
  return out;
}

template class ModelScorer<float>;
template class ModelScorer<double>;

namespace {

std::vector<float> gather_patches(const PolarImage& image, const TileLayout& layout,
                                  int patch) {
  std::vector<float> buf;
  buf.reserve(layout.positions.size() * static_cast<std::size_t>(patch) * patch);
  for (const auto& p : layout.positions) {
    const auto w = crop_window(image, p.row, p.col, patch);
    buf.insert(buf.end(), w.begin(), w.end());
  }
  return buf;
}

ClassProbabilities mean_probabilities(const std::vector<ClassProbabilities>& probs) {
  ClassProbabilities m{};
  for (const auto& p : probs) {
    for (std::size_t j = 0; j < m.size(); ++j) m[j] += p[j];
  }
  for (double& v : m) v /= static_cast<double>(probs.size());
  return m;
}

}  // namespace

ClassProbabilities predict_image(const PatchScorer& scorer, const PolarImage& image) {
  const int patch = scorer.patch_size();
  const TileLayout layout = tile_patches(image.rows, image.cols, patch);
  const auto buf = gather_patches(image, layout, patch);
  return mean_probabilities(
      scorer.predict(buf, static_cast<int>(layout.positions.size())));
}

PatchGrid evaluate_patches(const PatchScorer& scorer, const PolarImage& image,
                           ClassLabel* global_class, double border_fraction) {
  PatchGrid grid;
  grid.rows = image.rows;
  grid.cols = image.cols;
  grid.patch_size = scorer.patch_size();
  grid.layout = tile_patches(image.rows, image.cols, grid.patch_size, border_fraction);
  const int n = static_cast<int>(grid.layout.positions.size());
  const auto buf = gather_patches(image, grid.layout, grid.patch_size);
  grid.probabilities = scorer.predict(buf, n);
  const ClassLabel global = label_from_index(argmax(mean_probabilities(grid.probabilities)));
  if (global_class) *global_class = global;

  const std::size_t px = static_cast<std::size_t>(grid.patch_size) * grid.patch_size;
  std::vector<int> agree;
  std::vector<float> sub;
  for (int i = 0; i < n; ++i) {
    if (argmax(grid.probabilities[static_cast<std::size_t>(i)]) != to_index(global)) continue;
    agree.push_back(i);
    sub.insert(sub.end(), buf.begin() + static_cast<std::ptrdiff_t>(i * px),
               buf.begin() + static_cast<std::ptrdiff_t>((i + 1) * px));
  }
  grid.saliency.assign(static_cast<std::size_t>(n), {});
  if (!agree.empty()) {
    const auto sal = scorer.saliency(sub, static_cast<int>(agree.size()), global);
    for (std::size_t a = 0; a < agree.size(); ++a) {
      grid.saliency[static_cast<std::size_t>(agree[a])].assign(
          sal.begin() + static_cast<std::ptrdiff_t>(a * px),
          sal.begin() + static_cast<std::ptrdiff_t>((a + 1) * px));
    }
  }
  return grid;
}

SaliencyMap assemble(const PatchGrid& grid, ClassLabel global_class,
                     double border_fraction) {
  const int p = grid.patch_size;
  const int crop = border_pixels(p, border_fraction);
  if (2 * crop >= p) throw std::invalid_argument("border crop removes the whole patch");
  const std::size_t n = grid.layout.positions.size();
  if (grid.probabilities.size() != n || grid.saliency.size() != n) {
    throw std::invalid_argument("patch grid is incomplete");
  }

  SaliencyMap map;
  map.rows = grid.rows;
  map.cols = grid.cols;
  map.patch_size = p;
  map.source_class = global_class;
  map.k_shifts = 1;
  const std::size_t total = static_cast<std::size_t>(grid.rows) * grid.cols;
  std::vector<double> acc(total, 0.0);
  map.contribution_count.assign(total, 0);

  for (std::size_t i = 0; i < n; ++i) {
    if (argmax(grid.probabilities[i]) != to_index(global_class)) continue;
    const auto& sal = grid.saliency[i];
    if (sal.size() != static_cast<std::size_t>(p) * p) {
      throw std::invalid_argument("patch " + std::to_string(i) +
                                  " matches the global class but has no saliency");
    }
    map.contributing_patches.push_back(static_cast<int>(i));
    const auto& pos = grid.layout.positions[i];
    for (int y = crop; y < p - crop; ++y) {
      const std::size_t row = static_cast<std::size_t>(pos.row + y) * grid.cols;
      for (int x = crop; x < p - crop; ++x) {
        const std::size_t idx = row + static_cast<std::size_t>(pos.col + x);
        acc[idx] += sal[static_cast<std::size_t>(y) * p + x];
        ++map.contribution_count[idx];
      }
    }
  }
  map.values.assign(total, 0.0f);
  for (std::size_t i = 0; i < total; ++i) {
    if (map.contribution_count[i] > 0) {
      map.values[i] = static_cast<float>(acc[i] / map.contribution_count[i]);
    }
  }
  map.empty = map.contributing_patches.empty();
  return map;
}

std::vector<int> shift_offsets(int rows, int k) {
  std::vector<int> s;
  for (int i = 0; i < k; ++i) {
    s.push_back(static_cast<int>(std::lround(static_cast<double>(i) * rows / k)));
  }
  return s;
}

SaliencyMap shifted_saliency(const PatchScorer& scorer, const PolarImage& image, int k,
                             double border_fraction) {
  if (k < 1) throw std::invalid_argument("shift count k must be at least 1");
  const std::size_t total = static_cast<std::size_t>(image.rows) * image.cols;
  std::vector<double> acc(total, 0.0);
  std::vector<int> maps_at(total, 0);
  std::vector<int> count(total, 0);
  ClassProbabilities votes{};
  bool any = false;
  SaliencyMap single;

  for (int s : shift_offsets(image.rows, k)) {
    PolarImage shifted = image;
    shifted.pixels = shift_rows(image.pixels, image.rows, image.cols, s);
    shifted.strut_mask.reset();
    shifted.lumen_boundary.reset();
    ClassLabel global{};
    const PatchGrid grid = evaluate_patches(scorer, shifted, &global, border_fraction);
    SaliencyMap m = assemble(grid, global, border_fraction);
    const auto mean = mean_probabilities(grid.probabilities);
    for (std::size_t j = 0; j < votes.size(); ++j) votes[j] += mean[j] / k;
    if (k == 1) {
      single = std::move(m);
      break;
    }
    const auto values = shift_rows(m.values, image.rows, image.cols, -s);
    const auto counts = shift_rows(m.contribution_count, image.rows, image.cols, -s);
    for (std::size_t i = 0; i < total; ++i) {
      if (counts[i] == 0) continue;
      acc[i] += values[i];
      ++maps_at[i];
      count[i] += counts[i];
    }
    any = any || !m.empty;
  }
  if (k == 1) return single;

  SaliencyMap out;
  out.rows = image.rows;
  out.cols = image.cols;
  out.patch_size = scorer.patch_size();
  out.k_shifts = k;
  out.source_class = label_from_index(argmax(votes));
  out.values.assign(total, 0.0f);
  out.contribution_count = std::move(count);
  for (std::size_t i = 0; i < total; ++i) {
    if (maps_at[i] > 0) out.values[i] = static_cast<float>(acc[i] / maps_at[i]);
  }
  out.empty = !any;
  return out;
}

SignMode default_sign_mode(ClassLabel c) {
  return c == ClassLabel::MetalStent ? SignMode::Positive : SignMode::Negative;
}

std::vector<float> sign_select(std::span<const float> values, SignMode mode) {
  std::vector<float> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float v = mode == SignMode::Negative ? -values[i] : values[i];
    out[i] = v > 0.0f ? v : 0.0f;
  }
  return out;
}

double percentile99_nonzero(std::span<const float> values) {
  std::vector<float> nz;
  for (float v : values) {
    if (v != 0.0f) nz.push_back(v);
  }
  if (nz.empty()) return 0.0;
  const std::size_t rank =
      static_cast<std::size_t>(std::ceil(0.99 * static_cast<double>(nz.size())));
  const std::size_t idx = std::max<std::size_t>(rank, 1) - 1;
  std::nth_element(nz.begin(), nz.begin() + static_cast<std::ptrdiff_t>(idx), nz.end());
  return nz[idx];
}

std::vector<float> normalize_for_display(std::span<const float> values) {
  for (float v : values) {
    if (v < 0.0f) throw std::invalid_argument("normalize_for_display needs a nonnegative map");
  }
  std::vector<float> out(values.size(), 0.0f);
  const double p = percentile99_nonzero(values);
  if (p <= 0.0) return out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    out[i] = static_cast<float>(std::clamp(values[i] / p, 0.0, 1.0));
  }
  return out;
}

}  // namespace bvsviz

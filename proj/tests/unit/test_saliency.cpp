#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "bvsviz/resnet.hpp"
#include "bvsviz/saliency.hpp"
#include "helpers.hpp"

using namespace bvsviz;
using bvsviz::testing::random_image;

namespace {

// Returns fixed per-call probabilities and a constant saliency value.
class ScriptedScorer final : public PatchScorer {
 public:
  ScriptedScorer(int patch, std::vector<ClassProbabilities> probs, float value)
      : patch_(patch), probs_(std::move(probs)), value_(value) {}
  int patch_size() const override { return patch_; }
  std::vector<ClassProbabilities> predict(std::span<const float>, int count) const override {
    if (probs_.size() == 1) return std::vector<ClassProbabilities>(static_cast<std::size_t>(count), probs_[0]);
    return {probs_.begin(), probs_.begin() + count};
  }
  std::vector<float> saliency(std::span<const float> patches, int, ClassLabel) const override {
    return std::vector<float>(patches.size(), value_);
  }

 private:
  int patch_;
  std::vector<ClassProbabilities> probs_;
  float value_;
};

// Saliency equal to the patch pixels themselves; prediction fixed.
class PixelScorer final : public PatchScorer {
 public:
  explicit PixelScorer(int patch) : patch_(patch) {}
  int patch_size() const override { return patch_; }
  std::vector<ClassProbabilities> predict(std::span<const float>, int count) const override {
    return std::vector<ClassProbabilities>(static_cast<std::size_t>(count), {0.1, 0.7, 0.2});
  }
  std::vector<float> saliency(std::span<const float> patches, int, ClassLabel) const override {
    return {patches.begin(), patches.end()};
  }

 private:
  int patch_;
};

std::vector<int> unique_rows(const TileLayout& t) {
  std::vector<int> v;
  for (const auto& p : t.positions) v.push_back(p.row);
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

std::vector<int> unique_cols(const TileLayout& t) {
  std::vector<int> v;
  for (const auto& p : t.positions) v.push_back(p.col);
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

}  // namespace

TEST_CASE("tiling tables for the full-size image") {
  const auto a = tile_patches(496, 776, 224);
  CHECK(a.grid_rows == 4);
  CHECK(a.grid_cols == 9);
  CHECK(unique_rows(a) == std::vector<int>{0, 91, 181, 272});
  CHECK(unique_cols(a) == std::vector<int>{0, 69, 138, 207, 276, 345, 414, 483, 552});
  const auto b = tile_patches(496, 776, 160);
  CHECK(b.grid_rows == 6);
  CHECK(b.grid_cols == 6);
  CHECK(unique_rows(b) == std::vector<int>{0, 67, 134, 202, 269, 336});
  CHECK(unique_cols(b) == std::vector<int>{0, 123, 246, 370, 493, 616});
  // Row-major order over the grid.
  CHECK(a.positions[1] == PatchPosition{0, 69});
  CHECK(a.positions[9] == PatchPosition{91, 0});
}

TEST_CASE("tiling covers every pixel and stays inside the image") {
  for (auto [rows, cols, patch] : {std::tuple{256, 320, 64}, std::tuple{496, 776, 224},
                                   std::tuple{50, 90, 20}, std::tuple{100, 40, 32}}) {
    const auto t = tile_patches(rows, cols, patch);
    CHECK(t.positions.size() == 36);
    CHECK(t.grid_rows * t.grid_cols == 36);
    std::vector<int> cover(static_cast<std::size_t>(rows) * cols, 0);
    for (const auto& p : t.positions) {
      CHECK(p.row >= 0);
      CHECK(p.col >= 0);
      CHECK(p.row + patch <= rows);
      CHECK(p.col + patch <= cols);
      for (int r = p.row; r < p.row + patch; ++r) {
        for (int c = p.col; c < p.col + patch; ++c) ++cover[static_cast<std::size_t>(r) * cols + c];
      }
    }
    CHECK(std::count(cover.begin(), cover.end(), 0) == 0);
  }
}

TEST_CASE("degenerate tiling and errors") {
  const auto t = tile_patches(40, 40, 40);
  CHECK(t.positions.size() == 36);
  for (const auto& p : t.positions) CHECK(p == PatchPosition{0, 0});
  CHECK_THROWS(tile_patches(40, 60, 41));
  CHECK_THROWS(tile_patches(40, 60, 0));
}

TEST_CASE("image prediction averages patch probabilities") {
  Rng rng(41);
  const auto img = random_image(64, 80, rng);
  const ClassProbabilities v{0.2, 0.5, 0.3};
  const auto same = predict_image(ScriptedScorer(32, {v}, 0), img);
  for (int c = 0; c < 3; ++c) CHECK(same[static_cast<std::size_t>(c)] == doctest::Approx(v[static_cast<std::size_t>(c)]).epsilon(1e-15));

  std::vector<ClassProbabilities> votes;
  for (int i = 0; i < 36; ++i) votes.push_back(i < 20 ? ClassProbabilities{0, 1, 0} : ClassProbabilities{1, 0, 0});
  const auto p = predict_image(ScriptedScorer(32, votes, 0), img);
  CHECK(argmax(p) == to_index(ClassLabel::Bvs));
  CHECK(p[1] == doctest::Approx(20.0 / 36).epsilon(1e-15));
  CHECK(p[0] == doctest::Approx(16.0 / 36).epsilon(1e-15));

  std::reverse(votes.begin(), votes.end());
  CHECK(predict_image(ScriptedScorer(32, votes, 0), img) == p);
}

TEST_CASE("assembly of constant saliency is constant on covered pixels") {
  Rng rng(42);
  const auto img = random_image(64, 90, rng);
  const ScriptedScorer scorer(32, {{0.1, 0.1, 0.8}}, 2.5f);
  ClassLabel global{};
  const auto grid = evaluate_patches(scorer, img, &global);
  CHECK(global == ClassLabel::NoDevice);
  const auto map = assemble(grid, global);
  long covered = 0;
  for (std::size_t i = 0; i < map.values.size(); ++i) {
    if (map.contribution_count[i] > 0) {
      CHECK(map.values[i] == 2.5f);
      ++covered;
    } else {
      CHECK(map.values[i] == 0.0f);
    }
  }
  CHECK(covered > 0);
  CHECK_FALSE(map.empty);
}

TEST_CASE("border crop of a 224 patch keeps a 180 interior") {
  PatchGrid grid;
  grid.rows = 496;
  grid.cols = 776;
  grid.patch_size = 224;
  grid.layout = tile_patches(496, 776, 224);
  grid.probabilities.assign(36, ClassProbabilities{0.2, 0.2, 0.6});
  grid.probabilities[10] = {0.1, 0.8, 0.1};
  grid.saliency.assign(36, {});
  grid.saliency[10].assign(224u * 224u, 1.0f);
  const auto map = assemble(grid, ClassLabel::Bvs);
  const auto pos = grid.layout.positions[10];
  int min_r = 1 << 20, max_r = -1, min_c = 1 << 20, max_c = -1;
  long count = 0;
  for (int r = 0; r < 496; ++r) {
    for (int c = 0; c < 776; ++c) {
      if (!map.contribution_count[static_cast<std::size_t>(r) * 776 + c]) continue;
      ++count;
      min_r = std::min(min_r, r);
      max_r = std::max(max_r, r);
      min_c = std::min(min_c, c);
      max_c = std::max(max_c, c);
    }
  }
  CHECK(count == 180 * 180);
  CHECK(min_r == pos.row + 22);
  CHECK(max_r == pos.row + 22 + 179);
  CHECK(min_c == pos.col + 22);
  CHECK(max_c == pos.col + 22 + 179);
  CHECK(map.contributing_patches == std::vector<int>{10});
}

TEST_CASE("assembly with no agreeing patch is a flagged zero map") {
  PatchGrid grid;
  grid.rows = 40;
  grid.cols = 60;
  grid.patch_size = 20;
  grid.layout = tile_patches(40, 60, 20);
  grid.probabilities.assign(36, ClassProbabilities{0.6, 0.3, 0.1});
  grid.saliency.assign(36, std::vector<float>(400, 3.0f));
  const auto map = assemble(grid, ClassLabel::Bvs);
  CHECK(map.empty);
  CHECK(std::all_of(map.values.begin(), map.values.end(), [](float v) { return v == 0.0f; }));
  CHECK(std::all_of(map.contribution_count.begin(), map.contribution_count.end(),
                    [](int v) { return v == 0; }));
  grid.saliency.assign(36, {});  // agreeing patches without saliency
  CHECK_THROWS(assemble(grid, ClassLabel::MetalStent));
}

TEST_CASE("shift offsets") {
  CHECK(shift_offsets(496, 3) == std::vector<int>{0, 165, 331});
  CHECK(shift_offsets(256, 3) == std::vector<int>{0, 85, 171});
  CHECK(shift_offsets(100, 1) == std::vector<int>{0});
}

TEST_CASE("k = 1 equals plain assembly") {
  Rng rng(43);
  const auto img = random_image(48, 70, rng);
  const PixelScorer scorer(24);
  ClassLabel global{};
  const auto grid = evaluate_patches(scorer, img, &global);
  const auto a = assemble(grid, global);
  const auto b = shifted_saliency(scorer, img, 1);
  CHECK(a.values == b.values);
  CHECK(a.contribution_count == b.contribution_count);
  CHECK(b.source_class == ClassLabel::Bvs);
  CHECK_THROWS(shifted_saliency(scorer, img, 0));
}

TEST_CASE("translation-invariant mock model gives a shift-invariant map") {
  Rng rng(44);
  const auto img = random_image(60, 80, rng);
  const ScriptedScorer scorer(24, {{0.7, 0.2, 0.1}}, -1.25f);
  const auto base = shifted_saliency(scorer, img, 3);
  CHECK(base.k_shifts == 3);
  CHECK(base.source_class == ClassLabel::MetalStent);
  for (int s : {1, 7, 31, 59}) {
    const auto moved = shifted_saliency(scorer, angular_shift(img, s), 3);
    CHECK(moved.values == base.values);
  }
}

TEST_CASE("pixel-identity saliency is exactly shift equivariant") {
  // Saliency equal to the input makes every assembled value the pixel itself.
  Rng rng(45);
  const auto img = random_image(60, 80, rng);
  const PixelScorer scorer(24);
  const auto base = shifted_saliency(scorer, img, 3);
  for (std::size_t i = 0; i < base.values.size(); ++i) {
    if (base.contribution_count[i] > 0) CHECK(base.values[i] == doctest::Approx(img.pixels[i]).epsilon(1e-6));
  }
}

TEST_CASE("sign selection") {
  const std::vector<float> v{-2, 0, 3};
  CHECK(sign_select(v, SignMode::Negative) == std::vector<float>{2, 0, 0});
  CHECK(sign_select(v, SignMode::Positive) == std::vector<float>{0, 0, 3});
  const std::vector<float> pos{0.5f, 1, 2};
  CHECK(sign_select(pos, SignMode::Negative) == std::vector<float>{0, 0, 0});
  Rng rng(46);
  std::normal_distribution<float> nd(0, 1);
  std::vector<float> r(200);
  for (auto& x : r) x = nd(rng);
  const auto n = sign_select(r, SignMode::Negative), p = sign_select(r, SignMode::Positive);
  for (std::size_t i = 0; i < r.size(); ++i) CHECK(n[i] + p[i] == std::abs(r[i]));
  CHECK(default_sign_mode(ClassLabel::MetalStent) == SignMode::Positive);
  CHECK(default_sign_mode(ClassLabel::Bvs) == SignMode::Negative);
  CHECK(default_sign_mode(ClassLabel::NoDevice) == SignMode::Negative);
}

TEST_CASE("display normalization") {
  const std::vector<float> zeros(50, 0.0f);
  CHECK(normalize_for_display(zeros) == zeros);

  Rng rng(47);
  std::uniform_real_distribution<float> u(0.001f, 5.0f);
  std::vector<float> v(10000);
  for (auto& x : v) x = u(rng);
  const auto out = normalize_for_display(v);
  for (float x : out) {
    CHECK(x >= 0.0f);
    CHECK(x <= 1.0f);
  }
  // Sort-based nearest-rank 99th percentile of the output.
  auto sorted = out;
  std::sort(sorted.begin(), sorted.end());
  const auto rank = static_cast<std::size_t>(std::ceil(0.99 * sorted.size()));
  CHECK(std::abs(sorted[rank - 1] - 1.0f) < 1e-6);

  auto scaled = v;
  for (auto& x : scaled) x *= 37.5f;
  const auto out2 = normalize_for_display(scaled);
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(out2[i] == doctest::Approx(out[i]).epsilon(1e-6));
}

TEST_CASE("model-backed saliency is deterministic and finite") {
  Rng rng(48);
  const auto model = build_model<float>(32, 4, 5);
  const ModelScorer<float> scorer(model, 32);
  const auto img = random_image(64, 72, rng);
  const auto a = shifted_saliency(scorer, img, 3);
  const auto b = shifted_saliency(scorer, img, 3);
  CHECK(a.values == b.values);
  CHECK(a.contribution_count == b.contribution_count);
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    CHECK(std::isfinite(a.values[i]));
    if (a.contribution_count[i] == 0) CHECK(a.values[i] == 0.0f);
  }
}

#include <doctest.h>

#include <cmath>
#include <set>

#include "bvsviz/phantom.hpp"
#include "helpers.hpp"

using namespace bvsviz;
using bvsviz::testing::tiny_spec;

namespace {

std::vector<PullbackDataset> sized_pullbacks(const std::vector<int>& sizes) {
  std::vector<PullbackDataset> out;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    PullbackDataset pb;
    pb.id = "p" + std::to_string(i);
    pb.slices.resize(static_cast<std::size_t>(sizes[i]));
    out.push_back(std::move(pb));
  }
  return out;
}

int slice_total(const std::vector<PullbackDataset>& v) {
  int n = 0;
  for (const auto& pb : v) n += static_cast<int>(pb.slices.size());
  return n;
}

}  // namespace

TEST_CASE("no-device pullbacks carry no masks") {
  const auto pb = generate_pullback(tiny_spec(), ClassLabel::NoDevice, "n", 3);
  CHECK(pb.slices.size() == 3);
  for (const auto& s : pb.slices) {
    CHECK(s.label == ClassLabel::NoDevice);
    CHECK_FALSE(s.strut_mask.has_value());
    CHECK(s.lumen_boundary.has_value());
  }
}

TEST_CASE("device pullbacks carry nonempty masks and consistent labels") {
  for (ClassLabel c : {ClassLabel::MetalStent, ClassLabel::Bvs}) {
    const auto pb = generate_pullback(tiny_spec(), c, "d", 4);
    CHECK(pb.label == c);
    for (const auto& s : pb.slices) {
      CHECK(s.label == c);
      CHECK(s.pullback_id == "d");
      REQUIRE(s.strut_mask.has_value());
      CHECK(std::count(s.strut_mask->begin(), s.strut_mask->end(), 1) > 0);
      for (float v : s.pixels) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
      }
    }
  }
}

TEST_CASE("generation is deterministic") {
  const auto a = generate_pullback(tiny_spec(), ClassLabel::Bvs, "x", 42);
  const auto b = generate_pullback(tiny_spec(), ClassLabel::Bvs, "x", 42);
  const auto c = generate_pullback(tiny_spec(), ClassLabel::Bvs, "x", 43);
  for (std::size_t i = 0; i < a.slices.size(); ++i) {
    CHECK(a.slices[i].pixels == b.slices[i].pixels);
    CHECK(a.slices[i].strut_mask == b.slices[i].strut_mask);
  }
  CHECK(a.slices[0].pixels != c.slices[0].pixels);

  const auto s1 = generate_dataset(tiny_spec(), 4, 7, 1);
  const auto s3 = generate_dataset(tiny_spec(), 4, 7, 3);
  for (std::size_t i = 0; i < s1.size(); ++i) {
    CHECK(s1[i].id == s3[i].id);
    for (std::size_t k = 0; k < s1[i].slices.size(); ++k) {
      CHECK(s1[i].slices[k].pixels == s3[i].slices[k].pixels);
    }
  }
}

TEST_CASE("polymer struts have a dark core inside a bright ring") {
  const PhantomSpec spec = tiny_spec();
  const auto pb = generate_pullback(spec, ClassLabel::Bvs, "b", 9);
  for (const auto& s : pb.slices) {
    const auto& m = *s.strut_mask;
    const int rows = s.rows, cols = s.cols;
    auto in_mask = [&](int r, int c) {
      if (c < 0 || c >= cols) return false;
      return m[static_cast<std::size_t>(((r % rows) + rows) % rows) * cols + c] != 0;
    };
    double core = 0, ring = 0;
    long nc = 0, nr = 0;
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        const float v = s.at(r, c);
        if (in_mask(r, c)) {
          // Core: strut pixels whose 4-neighbours are all strut pixels.
          if (in_mask(r - 1, c) && in_mask(r + 1, c) && in_mask(r, c - 1) && in_mask(r, c + 1)) {
            core += v;
            ++nc;
          }
          continue;
        }
        bool near = false;
        for (int dr = -5; dr <= 5 && !near; ++dr) {
          for (int dc = -5; dc <= 5 && !near; ++dc) {
            near = dr * dr + dc * dc <= 25 && in_mask(r + dr, c + dc);
          }
        }
        if (near) {
          ring += v;
          ++nr;
        }
      }
    }
    REQUIRE(nc > 0);
    REQUIRE(nr > 0);
    CHECK(core / nc < ring / nr);
  }
}

TEST_CASE("metal struts are bright and cast a shadow") {
  const PhantomSpec spec = tiny_spec();
  const auto pb = generate_pullback(spec, ClassLabel::MetalStent, "m", 10);
  const auto& s = pb.slices[0];
  const auto& m = *s.strut_mask;
  const auto& b = *s.lumen_boundary;
  double strut = 0, tissue = 0, shadow = 0, open = 0, deep_shadow = 0, deep_open = 0;
  long ns = 0, nt = 0, nsh = 0, no = 0, nds = 0, ndo = 0;
  for (int r = 0; r < s.rows; ++r) {
    bool has_strut = false;
    for (int c = 0; c < s.cols; ++c) has_strut = has_strut || m[static_cast<std::size_t>(r) * s.cols + c];
    for (int c = 0; c < s.cols; ++c) {
      const float v = s.at(r, c);
      if (m[static_cast<std::size_t>(r) * s.cols + c]) {
        strut += v;
        ++ns;
        continue;
      }
      if (c < b[static_cast<std::size_t>(r)]) continue;
      tissue += v;
      ++nt;
      // Tissue 5 to 25 samples under the surface, with and without a strut above.
      if (c >= b[static_cast<std::size_t>(r)] + 5 && c < b[static_cast<std::size_t>(r)] + 25) {
        if (has_strut) {
          shadow += v;
          ++nsh;
        } else {
          open += v;
          ++no;
        }
      }
      // Past the end of the shadow segment.
      if (c >= b[static_cast<std::size_t>(r)] + spec.shadow_length + 12 &&
          c < b[static_cast<std::size_t>(r)] + spec.shadow_length + 40) {
        (has_strut ? deep_shadow : deep_open) += v;
        ++(has_strut ? nds : ndo);
      }
    }
  }
  REQUIRE(ns > 0);
  REQUIRE(nsh > 0);
  CHECK(strut / ns > 1.5 * tissue / nt);
  CHECK(shadow / nsh < 0.5 * open / no);
  CHECK(deep_shadow / nds == doctest::Approx(deep_open / ndo).epsilon(0.1));
}

TEST_CASE("lumen boundary is smooth across slices") {
  PhantomSpec spec = tiny_spec();
  spec.slices_per_pullback = 12;
  const auto pb = generate_pullback(spec, ClassLabel::NoDevice, "l", 11);
  for (std::size_t i = 1; i < pb.slices.size(); ++i) {
    const auto& a = *pb.slices[i - 1].lumen_boundary;
    const auto& b = *pb.slices[i].lumen_boundary;
    for (std::size_t r = 0; r < a.size(); ++r) {
      CHECK(std::abs(a[r] - b[r]) <= spec.max_boundary_delta);
      CHECK(b[r] >= 0);
      CHECK(b[r] < spec.trimmed_depth());
    }
  }
}

TEST_CASE("depth trim") {
  const PhantomSpec spec = tiny_spec();
  const auto pb = generate_pullback(spec, ClassLabel::MetalStent, "t", 12);
  const auto& img = pb.slices[0];
  const auto same = depth_trim(img, 0);
  CHECK(same.pixels == img.pixels);
  CHECK(same.strut_mask == img.strut_mask);
  const auto cut = depth_trim(img, spec.depth_trim);
  CHECK(cut.cols == img.cols - spec.depth_trim);
  for (int r = 0; r < img.rows; ++r) {
    for (int c = 0; c < cut.cols; ++c) CHECK(cut.at(r, c) == img.at(r, c));
  }
  CHECK(cut.strut_mask->size() == cut.pixels.size());
  CHECK(cut.lumen_boundary == img.lumen_boundary);
  CHECK_THROWS(depth_trim(img, img.cols - 5));  // would cut the lumen surface
}

TEST_CASE("full-scale preset trims 976 to 776") {
  PhantomSpec spec = PhantomSpec::paper();
  CHECK(spec.angles == 496);
  CHECK(spec.depth_raw == 976);
  CHECK(spec.depth_trim == 200);
  CHECK(spec.trimmed_depth() == 776);
  spec.slices_per_pullback = 1;
  const auto pb = generate_pullback(spec, ClassLabel::Bvs, "paper", 1);
  const auto t = depth_trim(pb.slices[0], spec.depth_trim);
  CHECK(t.rows == 496);
  CHECK(t.cols == 776);
}

TEST_CASE("spec validation and key-value round trip") {
  PhantomSpec s = tiny_spec();
  CHECK_NOTHROW(s.validate(64));
  CHECK_THROWS(s.validate(400));
  s.depth_trim = s.depth_raw;
  CHECK_THROWS(s.validate());
  s = tiny_spec();
  s.speckle = -1;
  CHECK_THROWS(s.validate());

  PhantomSpec r;
  apply_key_values(r, to_key_values(PhantomSpec::paper()));
  CHECK(spec_hash(r) == spec_hash(PhantomSpec::paper()));
  CHECK(spec_hash(PhantomSpec::desk()) != spec_hash(PhantomSpec::paper()));
}

TEST_CASE("class mix assigns pullbacks round-robin by deficit") {
  const PhantomSpec spec = PhantomSpec::desk();
  int counts[3] = {0, 0, 0};
  for (int i = 0; i < 18; ++i) ++counts[to_index(pullback_class(spec, i))];
  CHECK(counts[0] == 6);
  CHECK(counts[1] == 6);
  CHECK(counts[2] == 6);
}

TEST_CASE("split of ten equal pullbacks") {
  const auto split = split_by_pullback(sized_pullbacks(std::vector<int>(10, 8)), 0.7, 3);
  CHECK(split.train.size() == 7);
  CHECK(split.test.size() == 3);
  std::set<std::string> ids;
  for (const auto& p : split.train) ids.insert(p.id);
  for (const auto& p : split.test) CHECK(ids.count(p.id) == 0);
}

TEST_CASE("split matches an exhaustive search over unequal pullbacks") {
  Rng rng(31);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = std::uniform_int_distribution<int>(2, 10)(rng);
    std::vector<int> sizes(static_cast<std::size_t>(n));
    for (auto& s : sizes) s = std::uniform_int_distribution<int>(1, 30)(rng);
    const double fraction = std::uniform_real_distribution<double>(0.2, 0.9)(rng);
    int total = 0;
    for (int s : sizes) total += s;
    double best = 2;
    for (int mask = 1; mask < (1 << n) - 1; ++mask) {
      int t = 0;
      for (int i = 0; i < n; ++i) {
        if (mask >> i & 1) t += sizes[static_cast<std::size_t>(i)];
      }
      best = std::min(best, std::abs(static_cast<double>(t) / total - fraction));
    }
    const auto split = split_by_pullback(sized_pullbacks(sizes), fraction, static_cast<std::uint64_t>(trial));
    CHECK_FALSE(split.train.empty());
    CHECK_FALSE(split.test.empty());
    CHECK(split.train.size() + split.test.size() == sizes.size());
    const double got = std::abs(static_cast<double>(slice_total(split.train)) / total - fraction);
    CHECK(got == doctest::Approx(best).epsilon(1e-12));
  }
}

TEST_CASE("split errors") {
  CHECK_THROWS(split_by_pullback(sized_pullbacks({5}), 0.7, 1));
  CHECK_THROWS(split_by_pullback(sized_pullbacks({5, 5}), 1.0, 1));
  CHECK_THROWS(split_by_pullback(sized_pullbacks({5, 0}), 0.5, 1));
}

TEST_CASE("stratified split of the desk dataset keeps 4/2 per class") {
  std::vector<PullbackDataset> all;
  const PhantomSpec spec = PhantomSpec::desk();
  for (int i = 0; i < 18; ++i) {
    PullbackDataset pb;
    pb.id = "pb" + std::to_string(i);
    pb.label = pullback_class(spec, i);
    pb.slices.resize(16);
    all.push_back(std::move(pb));
  }
  const auto split = split_by_pullback_stratified(std::move(all), 0.7, 1);
  CHECK(split.train.size() == 12);
  CHECK(split.test.size() == 6);
  int test_per_class[3] = {0, 0, 0};
  for (const auto& pb : split.test) ++test_per_class[to_index(pb.label)];
  for (int c : test_per_class) CHECK(c == 2);
}

#include <doctest.h>

#include <cmath>
#include <numeric>

#include "bvsviz/autodiff.hpp"
#include "bvsviz/checkpoint.hpp"
#include "bvsviz/classifier.hpp"
#include "helpers.hpp"

using namespace bvsviz;
using bvsviz::testing::random_image;
using bvsviz::testing::random_tensor;

namespace {

double wce(const Tensor<double>& logits, const std::vector<int>& labels,
           const std::vector<double>& w) {
  Tape<double> tape;
  const Var l = tape.leaf(logits);
  return tape.value(ops::weighted_cross_entropy(tape, l, labels, w))[0];
}

// Independent parameter count: conv k*k*cin*cout + cout, dense cin*cout + cout.
long walkthrough_parameters(int base) {
  auto conv = [](int k, int cin, int cout) { return static_cast<long>(k) * k * cin * cout + cout; };
  const int c1 = base, c2 = 2 * base, c3 = 4 * base;
  long n = conv(3, 1, c1);                                        // stem
  n += conv(3, c1, c1) + conv(3, c1, c1);                         // stage 1
  n += conv(3, c1, c2) + conv(3, c2, c2) + conv(1, c1, c2);       // stage 2 + projection
  n += conv(3, c2, c3) + conv(3, c3, c3) + conv(1, c2, c3);       // stage 3 + projection
  n += static_cast<long>(c3) * 3 + 3;                             // head
  return n;
}

// 32x32 slices downsampled from the desk phantom, several per class.
std::vector<PullbackDataset> toy_set(int per_class_pullbacks, int slices) {
  PhantomSpec spec = PhantomSpec::desk();
  spec.slices_per_pullback = slices;
  std::vector<PullbackDataset> out;
  int id = 0;
  for (ClassLabel c : {ClassLabel::MetalStent, ClassLabel::Bvs, ClassLabel::NoDevice}) {
    for (int p = 0; p < per_class_pullbacks; ++p) {
      auto pb = generate_pullback(spec, c, "toy" + std::to_string(id), 100 + id);
      ++id;
      for (auto& s : pb.slices) {
        PolarImage small;
        small.rows = small.cols = 32;
        small.pixels = downsample_area(depth_trim(s, spec.depth_trim), 32);
        small.label = s.label;
        small.pullback_id = s.pullback_id;
        s = std::move(small);
      }
      out.push_back(std::move(pb));
    }
  }
  return out;
}

}  // namespace

TEST_CASE("class weights from the clinical counts") {
  const auto w = class_weights({965, 1992, 3371});
  CHECK(w.w[0] == doctest::Approx(0.5647).epsilon(1e-4));
  CHECK(w.w[1] == doctest::Approx(0.2736).epsilon(1e-3));
  CHECK(w.w[2] == doctest::Approx(0.1617).epsilon(1e-3));
  CHECK(std::abs(w.w[0] + w.w[1] + w.w[2] - 1.0) < 1e-12);
  const double inv = 1.0 / 965 + 1.0 / 1992 + 1.0 / 3371;
  CHECK(w.w[0] == doctest::Approx((1.0 / 965) / inv).epsilon(1e-14));
}

TEST_CASE("class weights symmetry, scale invariance and errors") {
  const auto eq = class_weights({10, 10, 10});
  for (double v : eq.w) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));
  const auto a = class_weights({7, 19, 40}), b = class_weights({14, 38, 80});
  for (int i = 0; i < 3; ++i) CHECK(a.w[i] == doctest::Approx(b.w[i]).epsilon(1e-15));
  CHECK_THROWS(class_weights({0, 3, 4}));
}

TEST_CASE("weighted cross-entropy closed forms") {
  const std::vector<double> w{1.0 / 3, 1.0 / 3, 1.0 / 3};
  CHECK(wce(Tensor<double>({1, 3}, {800.0, 0.0, 0.0}), {0}, w) == doctest::Approx(0.0));
  CHECK(wce(Tensor<double>({2, 3}, 0.0), {0, 2}, w) ==
        doctest::Approx(std::log(3.0) / 3).epsilon(1e-14));
}

TEST_CASE("weighted cross-entropy invariant under consistent class relabeling") {
  Rng rng(21);
  const auto logits = random_tensor<double>({4, 3}, rng, -3, 3);
  const std::vector<int> labels{0, 2, 1, 2};
  const std::vector<double> w{0.5, 0.3, 0.2};
  const int perm[3] = {2, 0, 1};  // class c becomes perm[c]
  Tensor<double> pl({4, 3});
  std::vector<int> plabels(4);
  std::vector<double> pw(3);
  for (int n = 0; n < 4; ++n) {
    for (int c = 0; c < 3; ++c) pl[static_cast<std::size_t>(n * 3 + perm[c])] = logits[static_cast<std::size_t>(n * 3 + c)];
    plabels[static_cast<std::size_t>(n)] = perm[labels[static_cast<std::size_t>(n)]];
  }
  for (int c = 0; c < 3; ++c) pw[static_cast<std::size_t>(perm[c])] = w[static_cast<std::size_t>(c)];
  CHECK(wce(logits, labels, w) == doctest::Approx(wce(pl, plabels, pw)).epsilon(1e-14));
}

TEST_CASE("argmax invariant to per-row logit offsets") {
  Rng rng(22);
  const auto logits = random_tensor<double>({6, 3}, rng, -4, 4);
  auto shifted = logits;
  for (int n = 0; n < 6; ++n) {
    for (int c = 0; c < 3; ++c) shifted[static_cast<std::size_t>(n * 3 + c)] += 17.0 * (n + 1);
  }
  const auto a = softmax_rows(logits), b = softmax_rows(shifted);
  for (int n = 0; n < 6; ++n) {
    ClassProbabilities pa{}, pb{};
    for (int c = 0; c < 3; ++c) {
      pa[static_cast<std::size_t>(c)] = a[static_cast<std::size_t>(n * 3 + c)];
      pb[static_cast<std::size_t>(c)] = b[static_cast<std::size_t>(n * 3 + c)];
    }
    CHECK(argmax(pa) == argmax(pb));
  }
}

TEST_CASE("model shapes, determinism and parameter count") {
  const auto m = build_model<float>(64, 8, 1);
  Rng rng(23);
  for (int n : {1, 3}) {
    CHECK(predict_logits(m, random_tensor<float>({n, 1, 64, 64}, rng)).shape() == Shape{n, 3});
  }
  const auto again = build_model<float>(64, 8, 1);
  for (std::size_t i = 0; i < m.parameters().size(); ++i) {
    CHECK(m.parameters()[i].value == again.parameters()[i].value);
  }
  CHECK(parameter_count(m.parameters()) == 19411u);
  CHECK(parameter_count(m.parameters()) == static_cast<std::size_t>(walkthrough_parameters(8)));
  CHECK(parameter_count(build_model<float>(32, 4, 1).parameters()) ==
        static_cast<std::size_t>(walkthrough_parameters(4)));
  CHECK_THROWS(build_model<float>(60, 8, 1));
  CHECK_THROWS(build_model<float>(24, 8, 1));
  CHECK_THROWS(build_model<float>(64, 3, 1));
}

TEST_CASE("training crop sampling") {
  Rng rng(24);
  const auto img = random_image(64, 64, rng);
  const auto full = sample_training_crop(img, 64, rng);
  CHECK(full.row == 0);
  CHECK(full.col == 0);
  CHECK(full.pixels == img.pixels);

  const auto big = random_image(100, 90, rng);
  Rng r1(5), r2(5);
  for (int i = 0; i < 10; ++i) {
    const auto a = sample_training_crop(big, 32, r1);
    const auto b = sample_training_crop(big, 32, r2);
    CHECK(a.row == b.row);
    CHECK(a.col == b.col);
    CHECK(a.pixels == crop_window(big, a.row, a.col, 32));
  }
  CHECK_THROWS(sample_training_crop(big, 96, r1));
}

TEST_CASE("crop depth offsets are uniform (chi-square, alpha 0.01)") {
  PolarImage img;
  img.rows = 496;
  img.cols = 776;
  img.pixels.assign(496u * 776u, 0.0f);
  const int crop = 224, bins = 776 - 224 + 1, samples = 10000;
  std::vector<int> hist(static_cast<std::size_t>(bins), 0);
  Rng rng(25);
  for (int i = 0; i < samples; ++i) {
    const auto c = sample_training_crop(img, crop, rng);
    REQUIRE(c.col >= 0);
    REQUIRE(c.col < bins);
    REQUIRE(c.row >= 0);
    REQUIRE(c.row < 496);
    ++hist[static_cast<std::size_t>(c.col)];
  }
  const double expected = static_cast<double>(samples) / bins;
  double chi2 = 0;
  for (int h : hist) {
    CHECK(h > 0);
    chi2 += (h - expected) * (h - expected) / expected;
  }
  // 99th percentile of chi-square with 552 degrees of freedom.
  constexpr double kCritical = 632.2243442689437;
  CHECK(chi2 < kCritical);
}

TEST_CASE("angular shift group properties") {
  Rng rng(26);
  auto img = random_image(12, 5, rng);
  img.strut_mask = std::vector<std::uint8_t>(60, 0);
  (*img.strut_mask)[7] = 1;
  img.lumen_boundary = std::vector<int>{0, 1, 2, 3, 4, 0, 1, 2, 3, 4, 0, 1};
  CHECK(angular_shift(img, 0).pixels == img.pixels);
  CHECK(angular_shift(img, 12).pixels == img.pixels);
  CHECK(angular_shift(angular_shift(img, 5), 7).pixels == img.pixels);
  const auto s = angular_shift(img, 3);
  for (int r = 0; r < 12; ++r) {
    for (int c = 0; c < 5; ++c) CHECK(s.at(r, c) == img.at(((r - 3) % 12 + 12) % 12, c));
  }
  CHECK((*s.strut_mask)[static_cast<std::size_t>(4 * 5 + 2)] == 1);
  CHECK((*s.lumen_boundary)[3] == 0);
  CHECK(angular_shift(img, -2).pixels == angular_shift(img, 10).pixels);
}

TEST_CASE("train config validation") {
  TrainConfig c = TrainConfig::desk();
  CHECK_NOTHROW(c.validate(256, 320));
  CHECK_THROWS(c.validate(48, 320));
  c.batch_size = 0;
  CHECK_THROWS(c.validate(256, 320));
  c = TrainConfig::desk();
  c.learning_rate = 0;
  CHECK_THROWS(c.validate(256, 320));
  const TrainConfig p = TrainConfig::paper(224);
  CHECK(p.learning_rate == 1e-4);
  CHECK(p.batch_size == 40);
  CHECK(p.epochs == 400);
  CHECK(p.crop_size == 224);

  TrainConfig r;
  apply_key_values(r, to_key_values(TrainConfig::desk()));
  CHECK(to_key_values(r) == to_key_values(TrainConfig::desk()));
}

TEST_CASE("adam first step moves each parameter by the learning rate") {
  std::vector<Parameter<double>> params{{"p", Tensor<double>({3}, {1.0, -2.0, 0.5})}};
  Adam<double> adam(params, 0.01);
  const Tensor<double> g({3}, {0.3, -4.0, 1e-3});
  adam.step(params, {&g});
  CHECK(params[0].value[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
  CHECK(params[0].value[1] == doctest::Approx(-2.0 + 0.01).epsilon(1e-6));
  CHECK(params[0].value[2] == doctest::Approx(0.5 - 0.01).epsilon(1e-4));
  CHECK(adam.steps() == 1);
}

TEST_CASE("one epoch on a single batch lowers that batch's loss") {
  auto data = toy_set(1, 2);  // 6 slices, one batch of 16
  TrainConfig cfg = TrainConfig::desk();
  cfg.crop_size = 32;
  cfg.channels_base = 4;
  cfg.epochs = 1;
  auto model = build_model<double>(32, 4, 3);
  std::vector<double> buf;
  std::vector<int> labels;
  for (const auto& pb : data) {
    for (const auto& s : pb.slices) {
      buf.insert(buf.end(), s.pixels.begin(), s.pixels.end());
      labels.push_back(to_index(s.label));
    }
  }
  const int n = static_cast<int>(labels.size());
  const auto weights = class_weights(class_counts(data));
  auto loss = [&] {
    const auto logits = predict_logits(model, Tensor<double>({n, 1, 32, 32}, buf));
    return wce(logits, labels, {weights.w.begin(), weights.w.end()});
  };
  const double before = loss();
  cfg.precision = Precision::F64;
  train(model, data, {}, cfg);
  CHECK(loss() < before);
}

TEST_CASE("training is deterministic for a fixed seed") {
  const auto data = toy_set(1, 3);
  TrainConfig cfg = TrainConfig::desk();
  cfg.crop_size = 32;
  cfg.channels_base = 4;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  auto run = [&] {
    auto m = build_model<float>(32, 4, 9);
    return train(m, data, data, cfg).history;
  };
  const auto a = run(), b = run();
  REQUIRE(a.size() == 3);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].loss == b[i].loss);
    CHECK(a[i].heldout_accuracy == b[i].heldout_accuracy);
  }
}

TEST_CASE("memorizes a 20-slice toy set within 200 epochs") {
  auto data = toy_set(1, 7);
  data.back().slices.resize(6);  // 7 + 7 + 6 = 20 slices
  std::vector<float> buf;
  std::vector<int> labels;
  for (const auto& pb : data) {
    for (const auto& s : pb.slices) {
      buf.insert(buf.end(), s.pixels.begin(), s.pixels.end());
      labels.push_back(to_index(s.label));
    }
  }
  REQUIRE(labels.size() == 20);
  TrainConfig cfg = TrainConfig::desk();
  cfg.crop_size = 32;
  cfg.channels_base = 8;
  cfg.epochs = 200;
  auto model = build_model<float>(32, 8, 4);
  int first_perfect = 0;
  train(model, data, {}, cfg, [&](const EpochMetrics& m) {
    if (first_perfect || m.epoch % 5) return;
    const auto logits = predict_logits(model, Tensor<float>({20, 1, 32, 32}, buf));
    int correct = 0;
    for (int i = 0; i < 20; ++i) {
      ClassProbabilities p{};
      for (int c = 0; c < 3; ++c) p[static_cast<std::size_t>(c)] = logits[static_cast<std::size_t>(i * 3 + c)];
      correct += argmax(p) == labels[static_cast<std::size_t>(i)];
    }
    if (correct == 20) first_perfect = m.epoch;
  });
  INFO("first epoch with 100% training accuracy: " << first_perfect);
  CHECK(first_perfect > 0);
}

TEST_CASE("metrics on perfect and uninformative scores") {
  const std::vector<int> labels{0, 0, 1, 1, 2, 2, 2};
  std::vector<ClassProbabilities> perfect;
  for (int l : labels) {
    ClassProbabilities p{};
    p[static_cast<std::size_t>(l)] = 1.0;
    perfect.push_back(p);
  }
  const Metrics m = compute_metrics(labels, perfect);
  CHECK(m.accuracy == 1.0);
  CHECK(m.macro_f1 == 1.0);
  CHECK(m.macro_auc == 1.0);
  CHECK(m.samples == 7);
  CHECK(m.confusion[2][2] == 3);

  const std::vector<ClassProbabilities> flat(labels.size(), ClassProbabilities{0.3, 0.3, 0.4});
  const Metrics u = compute_metrics(labels, flat);
  for (const auto& a : u.auc) {
    REQUIRE(a.has_value());
    CHECK(*a == 0.5);
  }
}

TEST_CASE("a class absent from the data is dropped from the AUC average with a warning") {
  const std::vector<int> labels{0, 0, 2, 2};
  const std::vector<ClassProbabilities> s{{0.8, 0.1, 0.1}, {0.6, 0.3, 0.1}, {0.2, 0.1, 0.7}, {0.5, 0.1, 0.4}};
  const Metrics m = compute_metrics(labels, s);
  CHECK_FALSE(m.auc[1].has_value());
  CHECK(m.auc[0].has_value());
  CHECK(m.macro_auc == doctest::Approx((*m.auc[0] + *m.auc[2]) / 2));
  CHECK_FALSE(m.warnings.empty());
}

TEST_CASE("rank AUC matches a pairwise count") {
  Rng rng(27);
  std::vector<int> labels(40);
  std::vector<double> scores(40);
  std::uniform_int_distribution<int> lc(0, 2);
  std::uniform_int_distribution<int> sc(0, 6);  // coarse scores force ties
  for (int i = 0; i < 40; ++i) {
    labels[static_cast<std::size_t>(i)] = lc(rng);
    scores[static_cast<std::size_t>(i)] = sc(rng);
  }
  double wins = 0, pairs = 0;
  for (int i = 0; i < 40; ++i) {
    for (int j = 0; j < 40; ++j) {
      if (labels[static_cast<std::size_t>(i)] != 1 || labels[static_cast<std::size_t>(j)] == 1) continue;
      ++pairs;
      const double a = scores[static_cast<std::size_t>(i)], b = scores[static_cast<std::size_t>(j)];
      wins += a > b ? 1.0 : a == b ? 0.5 : 0.0;
    }
  }
  const auto auc = rank_auc(labels, scores, 1);
  REQUIRE(auc.has_value());
  CHECK(*auc == doctest::Approx(wins / pairs).epsilon(1e-12));
}

TEST_CASE("evaluate uses patch-averaged predictions and survives a checkpoint round trip") {
  const auto data = toy_set(1, 2);
  auto model = build_model<float>(32, 4, 31);
  const Metrics a = evaluate(model, data, InputMode::Patch);
  CHECK(a.samples == 6);
  bvsviz::testing::TempDir dir("eval");
  save_checkpoint(dir.path() / "m.ckpt", model, TrainConfig::desk(), {});
  const auto loaded = load_model<float>(read_checkpoint(dir.path() / "m.ckpt"));
  const Metrics b = evaluate(loaded, data, InputMode::Patch);
  CHECK(a.confusion == b.confusion);
  CHECK(evaluate(model, data, InputMode::Patch, 3).confusion == a.confusion);
}

TEST_CASE("label permutation keeps class counts") {
  auto data = toy_set(2, 3);
  const auto before = class_counts(data);
  permute_slice_labels(data, 5);
  CHECK(class_counts(data) == before);
  int moved = 0;
  for (const auto& pb : data) {
    for (const auto& s : pb.slices) moved += s.label != pb.label;
  }
  CHECK(moved > 0);
}

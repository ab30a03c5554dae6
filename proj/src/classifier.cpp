#include "bvsviz/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "bvsviz/parallel.hpp"

namespace bvsviz {

std::string_view to_string(Precision p) { return p == Precision::F32 ? "32" : "64"; }

std::string_view to_string(InputMode m) {
  return m == InputMode::Patch ? "patch" : "full";
}

Precision parse_precision(std::string_view s) {
  if (s == "32" || s == "f32" || s == "float") return Precision::F32;
  if (s == "64" || s == "f64" || s == "double") return Precision::F64;
  throw std::invalid_argument("unknown precision '" + std::string(s) + "' (use 32 or 64)");
}

InputMode parse_input_mode(std::string_view s) {
  if (s == "patch") return InputMode::Patch;
  if (s == "full") return InputMode::FullImage;
  throw std::invalid_argument("unknown input mode '" + std::string(s) +
                              "' (use patch or full)");
}

void TrainConfig::validate(int rows, int cols) const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("learning rate must be positive");
  }
  if (batch_size < 1) throw std::invalid_argument("batch size must be at least 1");
  if (epochs < 1) throw std::invalid_argument("epochs must be at least 1");
  if (!supported_input_size(crop_size)) {
    throw std::invalid_argument("unsupported crop size " + std::to_string(crop_size));
  }
  if (crop_size > rows || crop_size > cols) {
    throw std::invalid_argument("crop " + std::to_string(crop_size) +
                                " larger than the trimmed image " + std::to_string(rows) +
                                "x" + std::to_string(cols));
  }
}

TrainConfig TrainConfig::paper(int crop_size) {
  TrainConfig c;
  c.learning_rate = 1e-4;
  c.batch_size = 40;
  c.epochs = 400;
  c.crop_size = crop_size;
  return c;
}

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.learning_rate = 1e-3;
  c.batch_size = 16;
  c.epochs = 30;
  c.crop_size = 64;
  c.channels_base = 8;
  return c;
}

KeyValues to_key_values(const TrainConfig& c) {
  KeyValues kv;
  kv["learning_rate"] = format_double(c.learning_rate);
  kv["batch_size"] = std::to_string(c.batch_size);
  kv["epochs"] = std::to_string(c.epochs);
  kv["crop_size"] = std::to_string(c.crop_size);
  kv["channels_base"] = std::to_string(c.channels_base);
  kv["seed"] = std::to_string(c.seed);
  kv["precision"] = std::string(to_string(c.precision));
  kv["input_mode"] = std::string(to_string(c.input_mode));
  return kv;
}

void apply_key_values(TrainConfig& c, const KeyValues& kv) {
  c.learning_rate = get_double(kv, "learning_rate", c.learning_rate);
  c.batch_size = get_int(kv, "batch_size", c.batch_size);
  c.epochs = get_int(kv, "epochs", c.epochs);
  c.crop_size = get_int(kv, "crop_size", c.crop_size);
  c.channels_base = get_int(kv, "channels_base", c.channels_base);
  if (auto it = kv.find("seed"); it != kv.end()) c.seed = std::stoull(it->second);
  if (auto it = kv.find("precision"); it != kv.end()) c.precision = parse_precision(it->second);
  if (auto it = kv.find("input_mode"); it != kv.end()) c.input_mode = parse_input_mode(it->second);
}

ClassWeights class_weights(const std::array<long, kNumClasses>& counts) {
  double z = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] < 1) {
      throw std::invalid_argument("class " +
                                  std::string(to_string(label_from_index(static_cast<int>(c)))) +
                                  " is absent from the training set");
    }
    z += 1.0 / static_cast<double>(counts[c]);
  }
  ClassWeights w;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    w.w[c] = (1.0 / static_cast<double>(counts[c])) / z;
  }
  return w;
}

void permute_slice_labels(std::vector<PullbackDataset>& data, std::uint64_t seed) {
  std::vector<ClassLabel> labels;
  for (const auto& pb : data)
    for (const auto& s : pb.slices) labels.push_back(s.label);
  Rng rng(seed);
  std::shuffle(labels.begin(), labels.end(), rng);
  std::size_t i = 0;
  for (auto& pb : data)
    for (auto& s : pb.slices) s.label = labels[i++];
}

std::array<long, kNumClasses> class_counts(const std::vector<PullbackDataset>& data) {
  std::array<long, kNumClasses> n{};
  for (const auto& pb : data) {
    for (const auto& s : pb.slices) ++n[static_cast<std::size_t>(to_index(s.label))];
  }
  return n;
}

TrainingCrop sample_training_crop(const PolarImage& image, int crop_size, Rng& rng) {
  if (crop_size < 1 || crop_size > image.rows || crop_size > image.cols) {
    throw std::invalid_argument("crop of " + std::to_string(crop_size) +
                                " larger than the " + std::to_string(image.rows) + "x" +
                                std::to_string(image.cols) + " image");
  }
  TrainingCrop crop;
  crop.size = crop_size;
  if (crop_size < image.rows) {
    crop.row = std::uniform_int_distribution<int>(0, image.rows - 1)(rng);
  }
  crop.col = std::uniform_int_distribution<int>(0, image.cols - crop_size)(rng);
  crop.pixels = crop_window(image, crop.row, crop.col, crop_size);
  return crop;
}

std::vector<float> downsample_area(const PolarImage& image, int size) {
  std::vector<float> out(static_cast<std::size_t>(size) * size, 0.0f);
  const double sy = static_cast<double>(image.rows) / size;
  const double sx = static_cast<double>(image.cols) / size;
  // Per-axis overlap weights of each output cell with each source sample.
  auto weights = [](int n_src, double scale, int o) {
    std::vector<std::pair<int, double>> w;
    const double a = o * scale;
    const double b = (o + 1) * scale;
    for (int i = static_cast<int>(std::floor(a)); i < std::min<double>(n_src, std::ceil(b)); ++i) {
      const double ov = std::min<double>(b, i + 1) - std::max<double>(a, i);
      if (ov > 0) w.emplace_back(i, ov / scale);
    }
    return w;
  };
  std::vector<std::vector<std::pair<int, double>>> wx;
  for (int x = 0; x < size; ++x) wx.push_back(weights(image.cols, sx, x));
  for (int y = 0; y < size; ++y) {
    const auto wy = weights(image.rows, sy, y);
    for (int x = 0; x < size; ++x) {
      double acc = 0;
      for (const auto& [r, a] : wy) {
        for (const auto& [c, b] : wx[static_cast<std::size_t>(x)]) acc += a * b * image.at(r, c);
      }
      out[static_cast<std::size_t>(y) * size + x] = static_cast<float>(acc);
    }
  }
  return out;
}

template <typename T>
Adam<T>::Adam(const std::vector<Parameter<T>>& params, double learning_rate, double beta1,
              double beta2, double epsilon)
    : lr_(learning_rate), b1_(beta1), b2_(beta2), eps_(epsilon) {
  for (const auto& p : params) {
    m_.emplace_back(p.value.size(), 0.0);
    v_.emplace_back(p.value.size(), 0.0);
  }
}

template <typename T>
void Adam<T>::step(std::vector<Parameter<T>>& params,
                   const std::vector<const Tensor<T>*>& grads) {
  if (grads.size() != params.size() || params.size() != m_.size()) {
    throw std::invalid_argument("Adam: parameter/gradient count mismatch");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!grads[i]) continue;
    auto& m = m_[i];
    auto& v = v_[i];
    auto value = params[i].value.data();
    const auto g = grads[i]->data();
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double gj = static_cast<double>(g[j]);
      m[j] = b1_ * m[j] + (1.0 - b1_) * gj;
      v[j] = b2_ * v[j] + (1.0 - b2_) * gj * gj;
      const double update = lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
      value[j] = static_cast<T>(static_cast<double>(value[j]) - update);
    }
  }
}

template <typename T>
ClassProbabilities predict_slice(const ResidualNet<T>& model, const PolarImage& image,
                                 InputMode mode) {
  if (mode == InputMode::Patch) {
    return predict_image(ModelScorer<T>(model, model.input_size()), image);
  }
  const int s = model.input_size();
  const auto px = downsample_area(image, s);
  Tensor<T> batch({1, 1, s, s}, std::vector<T>(px.begin(), px.end()));
  const Tensor<T> prob = softmax_rows(predict_logits(model, batch));
  ClassProbabilities p{};
  for (std::size_t j = 0; j < p.size(); ++j) p[j] = static_cast<double>(prob[j]);
  return p;
}

namespace {

template <typename T>
double heldout_accuracy(const ResidualNet<T>& model, const std::vector<PullbackDataset>& data,
                        InputMode mode) {
  long correct = 0, total = 0;
  for (const auto& pb : data) {
    for (const auto& s : pb.slices) {
      correct += argmax(predict_slice(model, s, mode)) == to_index(s.label);
      ++total;
    }
  }
  return total ? static_cast<double>(correct) / total : 0.0;
}

}  // namespace

template <typename T>
TrainResult train(ResidualNet<T>& model, const std::vector<PullbackDataset>& train_set,
                  const std::vector<PullbackDataset>& heldout, const TrainConfig& config,
                  const EpochLogger& log) {
  std::vector<const PolarImage*> slices;
  for (const auto& pb : train_set) {
    for (const auto& s : pb.slices) slices.push_back(&s);
  }
  if (slices.empty()) throw std::invalid_argument("training set is empty");
  config.validate(slices.front()->rows, slices.front()->cols);
  if (model.input_size() != config.crop_size) {
    throw std::invalid_argument("model input size differs from the configured crop size");
  }

  TrainResult result;
  result.weights = class_weights(class_counts(train_set));
  const std::span<const double> weights(result.weights.w);
  const int s = config.crop_size;
  const std::size_t px = static_cast<std::size_t>(s) * s;

  Rng rng(derive_seed(config.seed, 0x7a11));
  Adam<T> adam(model.parameters(), config.learning_rate);
  std::vector<std::size_t> order(slices.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto best_params = model.parameters();

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t n =
          std::min(order.size() - start, static_cast<std::size_t>(config.batch_size));
      std::vector<T> buf(n * px);
      std::vector<int> labels(n);
      for (std::size_t b = 0; b < n; ++b) {
        const PolarImage& img = *slices[order[start + b]];
        std::vector<float> pixels;
        if (config.input_mode == InputMode::Patch) {
          pixels = sample_training_crop(img, s, rng).pixels;
        } else {
          const int shift = std::uniform_int_distribution<int>(0, img.rows - 1)(rng);
          PolarImage rotated = img;
          rotated.pixels = shift_rows(img.pixels, img.rows, img.cols, shift);
          pixels = downsample_area(rotated, s);
        }
        std::copy(pixels.begin(), pixels.end(), buf.begin() + static_cast<std::ptrdiff_t>(b * px));
        labels[b] = to_index(img.label);
      }
      Tape<T> tape;
      const Var x = tape.leaf(Tensor<T>({static_cast<int>(n), 1, s, s}, std::move(buf)));
      const auto fwd = model.forward(tape, x, true);
      const Var loss = ops::weighted_cross_entropy(tape, fwd.logits, labels, weights);
      tape.backward(loss);
      std::vector<const Tensor<T>*> grads;
      for (Var p : fwd.params) grads.push_back(tape.has_grad(p) ? &tape.grad(p) : nullptr);
      adam.step(model.parameters(), grads);
      loss_sum += static_cast<double>(tape.value(loss)[0]) * static_cast<double>(n);
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.loss = loss_sum / static_cast<double>(slices.size());
    if (!std::isfinite(m.loss)) {
      throw NumericalError("training loss became non-finite at epoch " + std::to_string(epoch));
    }
    m.heldout_accuracy = heldout_accuracy(model, heldout, config.input_mode);
    if (heldout.empty() || m.heldout_accuracy >= result.best_accuracy) {
      result.best_accuracy = m.heldout_accuracy;
      result.best_epoch = epoch;
      best_params = model.parameters();
    }
    result.history.push_back(m);
    if (log) log(m);
  }
  model.parameters() = std::move(best_params);
  return result;
}

std::optional<double> rank_auc(std::span<const int> labels, std::span<const double> scores,
                               int positive_class) {
  const std::size_t n = labels.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t q = i; q <= j; ++q) rank[idx[q]] = r;
    i = j + 1;
  }
  double pos = 0, rank_sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] == positive_class) {
      ++pos;
      rank_sum += rank[i];
    }
  }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0 || neg == 0) return std::nullopt;
  return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

Metrics compute_metrics(std::span<const int> labels, std::span<const ClassProbabilities> scores) {
  if (labels.empty() || labels.size() != scores.size()) {
    throw std::invalid_argument("metrics need matching, nonempty labels and scores");
  }
  Metrics m;
  m.samples = static_cast<long>(labels.size());
  long correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int pred = argmax(scores[i]);
    ++m.confusion[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(pred)];
    correct += pred == labels[i];
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());

  double auc_sum = 0, f1_sum = 0;
  int auc_n = 0, f1_n = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    std::vector<double> s(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) s[i] = scores[i][static_cast<std::size_t>(c)];
    m.auc[static_cast<std::size_t>(c)] = rank_auc(labels, s, c);
    const std::string name(to_string(label_from_index(c)));
    if (auto a = m.auc[static_cast<std::size_t>(c)]) {
      auc_sum += *a;
      ++auc_n;
    } else {
      m.warnings.push_back("AUC undefined for class " + name + "; omitted from macro average");
    }
    long tp = m.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
    long fp = 0, fn = 0;
    for (int o = 0; o < kNumClasses; ++o) {
      if (o == c) continue;
      fp += m.confusion[static_cast<std::size_t>(o)][static_cast<std::size_t>(c)];
      fn += m.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(o)];
    }
    if (2 * tp + fp + fn > 0) {
      f1_sum += 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
      ++f1_n;
    }
  }
  m.macro_auc = auc_n ? auc_sum / auc_n : 0.0;
  m.macro_f1 = f1_n ? f1_sum / f1_n : 0.0;
  return m;
}

template <typename T>
Metrics evaluate(const ResidualNet<T>& model, const std::vector<PullbackDataset>& data,
                 InputMode mode, int threads) {
  std::vector<const PolarImage*> slices;
  for (const auto& pb : data) {
    for (const auto& s : pb.slices) slices.push_back(&s);
  }
  if (slices.empty()) throw std::invalid_argument("evaluation set is empty");
  std::vector<ClassProbabilities> scores(slices.size());
  std::vector<int> labels(slices.size());
  parallel_for(static_cast<int>(slices.size()), threads, [&](int i) {
    const auto& img = *slices[static_cast<std::size_t>(i)];
    scores[static_cast<std::size_t>(i)] = predict_slice(model, img, mode);
    labels[static_cast<std::size_t>(i)] = to_index(img.label);
  });
  return compute_metrics(labels, scores);
}

template class Adam<float>;
template class Adam<double>;
template TrainResult train(ResidualNet<float>&, const std::vector<PullbackDataset>&,
                           const std::vector<PullbackDataset>&, const TrainConfig&,
                           const EpochLogger&);
template TrainResult train(ResidualNet<double>&, const std::vector<PullbackDataset>&,
                           const std::vector<PullbackDataset>&, const TrainConfig&,
                           const EpochLogger&);
template ClassProbabilities predict_slice(const ResidualNet<float>&, const PolarImage&,
                                          InputMode);
template ClassProbabilities predict_slice(const ResidualNet<double>&, const PolarImage&,
                                          InputMode);
template Metrics evaluate(const ResidualNet<float>&, const std::vector<PullbackDataset>&,
                          InputMode, int);
template Metrics evaluate(const ResidualNet<double>&, const std::vector<PullbackDataset>&,
                          InputMode, int);

}  // namespace bvsviz

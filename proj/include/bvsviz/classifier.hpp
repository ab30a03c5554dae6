#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bvsviz/config.hpp"
#include "bvsviz/phantom.hpp"
#include "bvsviz/resnet.hpp"
#include "bvsviz/rng.hpp"
#include "bvsviz/saliency.hpp"

namespace bvsviz {

enum class Precision { F32, F64 };
/// Patch: random square crops at full resolution. FullImage: the whole
/// slice area-downsampled to the model input size.
enum class InputMode { Patch, FullImage };

std::string_view to_string(Precision p);
std::string_view to_string(InputMode m);
Precision parse_precision(std::string_view s);
InputMode parse_input_mode(std::string_view s);

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 40;
  int epochs = 400;
  int crop_size = 224;
  int channels_base = 8;
  std::uint64_t seed = 1;
  Precision precision = Precision::F32;
  InputMode input_mode = InputMode::Patch;

  /// Throws std::invalid_argument for non-positive rates/batches or a crop
  /// that does not fit a rows x cols trimmed image.
  void validate(int rows, int cols) const;

  /// Published settings (crop 224 or 160).
  static TrainConfig paper(int crop_size = 160);
  /// CPU-sized settings for the desk phantom preset.
  static TrainConfig desk();
};

KeyValues to_key_values(const TrainConfig& config);
void apply_key_values(TrainConfig& config, const KeyValues& kv);

/// Normalized inverse class frequencies: w_c = (1/n_c) / sum_j (1/n_j).
struct ClassWeights {
  std::array<double, kNumClasses> w{};
};

ClassWeights class_weights(const std::array<long, kNumClasses>& counts);

/// Shuffles slice labels across the whole set (class counts preserved).
/// Used to train label-permuted control models.
void permute_slice_labels(std::vector<PullbackDataset>& data, std::uint64_t seed);

/// Training-set slice counts per class.
std::array<long, kNumClasses> class_counts(const std::vector<PullbackDataset>& data);

struct TrainingCrop {
  int row = 0;
  int col = 0;
  int size = 0;
  std::vector<float> pixels;
};

/// Uniform top-left position; the angle axis wraps, depth must fit. A crop
/// spanning every angle row starts at row 0.
TrainingCrop sample_training_crop(const PolarImage& image, int crop_size, Rng& rng);

/// Area-weighted resampling of a whole slice to size x size.
std::vector<float> downsample_area(const PolarImage& image, int size);

/// Adam with bias correction.
template <typename T>
class Adam {
 public:
  Adam(const std::vector<Parameter<T>>& params, double learning_rate,
       double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8);
  void step(std::vector<Parameter<T>>& params, const std::vector<const Tensor<T>*>& grads);
  long steps() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct EpochMetrics {
  int epoch = 0;
  double loss = 0;
  double heldout_accuracy = 0;
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  int best_epoch = 0;
  double best_accuracy = -1;
  ClassWeights weights;
};

using EpochLogger = std::function<void(const EpochMetrics&)>;

/// Trains in place and leaves the parameters of the best held-out epoch in
/// the model (latest epoch on ties). With an empty held-out set the final
/// epoch is kept.
template <typename T>
TrainResult train(ResidualNet<T>& model, const std::vector<PullbackDataset>& train_set,
                  const std::vector<PullbackDataset>& heldout,
                  const TrainConfig& config, const EpochLogger& log = {});

/// Image-level class probabilities under the given input mode: patch-averaged
/// for Patch, a single downsampled pass for FullImage.
template <typename T>
ClassProbabilities predict_slice(const ResidualNet<T>& model, const PolarImage& image,
                                 InputMode mode);

struct Metrics {
  double accuracy = 0;
  double macro_auc = 0;
  double macro_f1 = 0;
  std::array<std::optional<double>, kNumClasses> auc{};
  std::array<std::array<long, kNumClasses>, kNumClasses> confusion{};  // [true][pred]
  std::vector<std::string> warnings;
  long samples = 0;
};

/// One-vs-rest rank AUC (ties averaged). nullopt if the class has no
/// positives or no negatives.
std::optional<double> rank_auc(std::span<const int> labels, std::span<const double> scores,
                               int positive_class);

Metrics compute_metrics(std::span<const int> labels,
                        std::span<const ClassProbabilities> scores);

template <typename T>
Metrics evaluate(const ResidualNet<T>& model, const std::vector<PullbackDataset>& data,
                 InputMode mode, int threads = 1);

}  // namespace bvsviz

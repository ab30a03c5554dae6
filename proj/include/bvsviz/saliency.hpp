#pragma once

#include <array>
#include <span>
#include <vector>

#include "bvsviz/labels.hpp"
#include "bvsviz/model.hpp"
#include "bvsviz/polar_image.hpp"

namespace bvsviz {

inline constexpr int kPatchCount = 36;
inline constexpr double kDefaultBorderFraction = 0.1;
inline constexpr int kDefaultShifts = 3;

using ClassProbabilities = std::array<double, kNumClasses>;

struct PatchPosition {
  int row = 0;
  int col = 0;
  friend bool operator==(const PatchPosition&, const PatchPosition&) = default;
};

/// Grid layout for the 36 patches: grid_rows along the angle axis,
/// grid_cols along depth.
struct TileLayout {
  int grid_rows = 0;
  int grid_cols = 0;
  std::vector<PatchPosition> positions;  // row-major over the grid
};

/// Chooses the factorization of 36 and places patches with linear spacing
/// (first patch at 0, last flush with the far edge). Among factorizations,
/// the one whose border-cropped patches cover the most pixels wins; ties go
/// to the most uniform per-pixel coverage count, then to more positions
/// along the longer axis.
TileLayout tile_patches(int rows, int cols, int patch_size,
                        double border_fraction = kDefaultBorderFraction);

/// Evaluated patch tiling of one slice.
struct PatchGrid {
  int rows = 0;  // image extent
  int cols = 0;
  int patch_size = 0;
  TileLayout layout;
  std::vector<ClassProbabilities> probabilities;  // per patch
  /// Per-patch guided gradients for the saliency class, patch_size^2 each.
  /// Empty for patches that cannot contribute.
  std::vector<std::vector<float>> saliency;
};

/// Signed relevance aligned with a polar slice.
struct SaliencyMap {
  int rows = 0;
  int cols = 0;
  std::vector<float> values;
  std::vector<int> contribution_count;
  ClassLabel source_class = ClassLabel::NoDevice;
  int k_shifts = 1;
  int patch_size = 0;
  /// Set when no patch contributed anywhere.
  bool empty = false;
  /// Patch indices that were stitched in (single-pass maps only).
  std::vector<int> contributing_patches;
};

/// Anything that can classify and explain square single-channel patches.
class PatchScorer {
 public:
  virtual ~PatchScorer() = default;
  virtual int patch_size() const = 0;
  /// patches: count * patch_size^2 row-major values.
  virtual std::vector<ClassProbabilities> predict(std::span<const float> patches,
                                                  int count) const = 0;
  /// Guided gradient of the class logit for each patch, same layout.
  virtual std::vector<float> saliency(std::span<const float> patches, int count,
                                      ClassLabel target) const = 0;
};

/// PatchScorer backed by a network. The model must outlive the scorer.
template <typename T>
class ModelScorer final : public PatchScorer {
 public:
  ModelScorer(const Model<T>& model, int patch_size)
      : model_(model), patch_size_(patch_size) {}

  int patch_size() const override { return patch_size_; }
  std::vector<ClassProbabilities> predict(std::span<const float> patches,
                                          int count) const override;
  std::vector<float> saliency(std::span<const float> patches, int count,
                              ClassLabel target) const override;

 private:
  int chunk() const;
  const Model<T>& model_;
  int patch_size_;
};

int argmax(const ClassProbabilities& p);

/// Tiles the slice and returns the mean of the per-patch softmax vectors.
ClassProbabilities predict_image(const PatchScorer& scorer, const PolarImage& image);

/// Tiles, predicts every patch, and computes saliency for the global class
/// on the patches that agree with it.
PatchGrid evaluate_patches(const PatchScorer& scorer, const PolarImage& image,
                           ClassLabel* global_class = nullptr,
                           double border_fraction = kDefaultBorderFraction);

/// Stitches agreeing patches into a full-size map. Each contributing patch
/// loses round(border_fraction * patch_size) pixels on every side; overlaps
/// are averaged.
SaliencyMap assemble(const PatchGrid& grid, ClassLabel global_class,
                     double border_fraction = kDefaultBorderFraction);

/// Repeats tiling on k angularly shifted copies (shift round(i*rows/k)),
/// un-shifts each stitched map and averages them where they have coverage.
SaliencyMap shifted_saliency(const PatchScorer& scorer, const PolarImage& image,
                             int k = kDefaultShifts,
                             double border_fraction = kDefaultBorderFraction);

/// Shift amounts used by shifted_saliency.
std::vector<int> shift_offsets(int rows, int k);

enum class SignMode { Negative, Positive };

/// Negative for polymer scaffolds and empty vessels, Positive for metal.
SignMode default_sign_mode(ClassLabel c);

/// Negative keeps max(0,-v); Positive keeps max(0,v).
std::vector<float> sign_select(std::span<const float> values, SignMode mode);

/// Nearest-rank 99th percentile of the nonzero entries (0 if none).
double percentile99_nonzero(std::span<const float> values);

/// Scales a nonnegative map so its 99th percentile of nonzero values maps
/// to 1, clipping to [0,1].
std::vector<float> normalize_for_display(std::span<const float> values);

extern template class ModelScorer<float>;
extern template class ModelScorer<double>;

}  // namespace bvsviz

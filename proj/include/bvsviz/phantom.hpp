#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "bvsviz/config.hpp"
#include "bvsviz/labels.hpp"
#include "bvsviz/polar_image.hpp"

namespace bvsviz {

/// Consecutive slices from one catheter pullback, all with the same label.
struct PullbackDataset {
  std::string id;
  ClassLabel label = ClassLabel::NoDevice;
  std::vector<PolarImage> slices;
};

/// Generator parameters for synthetic polar pullbacks. Depth quantities are
/// in pixels of the raw (untrimmed) image; angular quantities in rows.
struct PhantomSpec {
  int angles = 256;             // H_a
  int depth_raw = 360;          // W_d before trimming
  int depth_trim = 40;          // noisy far-field columns dropped before use
  int slices_per_pullback = 16;
  std::array<int, 3> class_mix = {1, 1, 1};  // metal, bvs, none

  // Catheter sheath.
  int catheter_depth = 6;
  int catheter_width = 3;
  float catheter_intensity = 0.7f;

  // Lumen surface: b(theta, s) = R(s) + lobe cos(theta - a - drift s)
  //                              + ellipticity cos 2(theta - c - drift s)
  // with R(s) = radius_mean + swing sin(2 pi s / period + phase).
  double lumen_radius_mean = 110.0;
  double lumen_radius_jitter = 10.0;  // per-pullback uniform offset range
  double lumen_swing = 10.0;
  double lumen_period = 48.0;
  double lumen_lobe = 14.0;
  double lumen_ellipticity = 8.0;
  double lumen_drift = 0.04;  // radians per slice
  int max_boundary_delta = 4;  // bound on |b(s+1) - b(s)| per row

  // Tissue appearance.
  float lumen_intensity = 0.04f;
  float tissue_intensity = 0.55f;
  float tissue_floor = 0.06f;
  double attenuation_length = 60.0;
  double speckle = 0.3;

  // Helical strut lattice: families rotate in alternating directions.
  int helix_families = 2;
  int struts_per_family = 8;
  double helix_rate = 3.0;  // rows per slice

  // Metal: bright ellipse on the surface casting a radial shadow.
  int metal_half_angle = 2;
  int metal_half_depth = 2;
  float metal_intensity = 1.0f;
  float shadow_factor = 0.12f;
  int shadow_length = 24;  // depth samples shadowed behind the blob

  // Polymer (BVS): box with bright rim and dark core at or below the surface.
  int bvs_half_angle = 4;
  int bvs_depth = 9;
  int bvs_border = 1;
  int bvs_embed_max = 6;
  float bvs_border_intensity = 0.95f;
  float bvs_core_intensity = 0.03f;

  std::uint64_t seed = 1;

  int trimmed_depth() const { return depth_raw - depth_trim; }

  /// Throws std::invalid_argument describing the first violated invariant.
  void validate(int max_crop = 0) const;

  static PhantomSpec desk();
  static PhantomSpec paper();
};

KeyValues to_key_values(const PhantomSpec& spec);
/// Overwrites the fields named in kv; other keys are ignored.
void apply_key_values(PhantomSpec& spec, const KeyValues& kv);

/// Stable text hash of every field, written to dataset manifests.
std::string spec_hash(const PhantomSpec& spec);

/// Renders one pullback of raw (untrimmed) slices. Pure in (spec, label,
/// pullback_id, seed).
PullbackDataset generate_pullback(const PhantomSpec& spec, ClassLabel label,
                                  const std::string& pullback_id,
                                  std::uint64_t seed);

/// Class of the i-th pullback under spec.class_mix (largest-deficit order).
ClassLabel pullback_class(const PhantomSpec& spec, int index);

/// Generates n pullbacks named pb000.. with seeds derived from seed. The
/// result does not depend on the thread count.
std::vector<PullbackDataset> generate_dataset(const PhantomSpec& spec, int n,
                                              std::uint64_t seed, int threads = 1);

struct DatasetSplit {
  std::vector<PullbackDataset> train;
  std::vector<PullbackDataset> test;
};

/// Partitions whole pullbacks so the training slice fraction is as close to
/// train_fraction as the pullback sizes allow. Ties between equally good
/// partitions are broken by a seeded pullback order.
DatasetSplit split_by_pullback(std::vector<PullbackDataset> pullbacks,
                               double train_fraction, std::uint64_t seed);

/// split_by_pullback applied separately to each class.
DatasetSplit split_by_pullback_stratified(std::vector<PullbackDataset> pullbacks,
                                          double train_fraction,
                                          std::uint64_t seed);

/// Trims every slice of every pullback by n depth columns.
void depth_trim_all(std::vector<PullbackDataset>& pullbacks, int n);

}  // namespace bvsviz

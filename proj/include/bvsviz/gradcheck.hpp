#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace bvsviz {

struct GradcheckOptions {
  std::uint64_t seed = 1;
  int instances = 20;        // random instances per case
  double step = 1e-5;        // central-difference h
  double tolerance = 1e-4;   // on the tensor-level relative error
  int sampled_coords = 24;   // coordinates probed per full-classifier instance
};

struct GradcheckResult {
  std::string name;
  int instances = 0;
  int failures = 0;
  double max_error = 0;
  /// Coordinates dropped because +-h flipped a ReLU or max-pool decision.
  int skipped_coords = 0;
  bool ok() const { return instances > 0 && failures == 0; }
};

/// ||a - b||_2 / max(||a||_2, ||b||_2); the plain norm of the difference
/// when both sides are below 1e-12.
double relative_error(std::span<const double> a, std::span<const double> b);

/// Runs every op case, the conv-ReLU-dense network and the full classifier
/// loss at 64-bit precision. on_case fires after each case finishes.
std::vector<GradcheckResult> run_gradcheck(
    const GradcheckOptions& options,
    const std::function<void(const GradcheckResult&)>& on_case = {});

}  // namespace bvsviz

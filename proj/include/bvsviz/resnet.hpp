#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bvsviz/model.hpp"

namespace bvsviz {

/// One parameterized layer of the architecture descriptor.
struct LayerSpec {
  enum class Kind { Conv, Dense };
  std::string name;
  Kind kind = Kind::Conv;
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
};

/// Residual classifier layout: stem conv + max-pool, three residual stages
/// (the last two downsample by 2), global average pooling and a dense head.
/// No normalization layers; every conv carries a bias.
struct Architecture {
  int input_size = 64;
  int channels_base = 8;
  int num_classes = 3;

  std::vector<LayerSpec> layers() const;
  /// One-line textual form stored in checkpoints.
  std::string describe() const;
};

/// Valid crop sizes are multiples of 8 no smaller than 32.
bool supported_input_size(int size);

template <typename T>
class ResidualNet final : public Model<T> {
 public:
  ResidualNet(Architecture arch, std::uint64_t seed);

  typename Model<T>::Forward forward(Tape<T>& tape, Var input,
                                     bool track_params) const override;
  int num_classes() const override { return arch_.num_classes; }
  std::vector<Parameter<T>>& parameters() override { return params_; }
  const std::vector<Parameter<T>>& parameters() const override {
    return params_;
  }

  const Architecture& architecture() const { return arch_; }
  int input_size() const { return arch_.input_size; }

 private:
  Architecture arch_;
  std::vector<LayerSpec> layers_;
  std::vector<Parameter<T>> params_;  // weight, bias per layer
};

/// Builds the residual classifier for square crops of side crop_size.
template <typename T>
ResidualNet<T> build_model(int crop_size, int channels_base, std::uint64_t seed);

extern template class ResidualNet<float>;
extern template class ResidualNet<double>;
extern template ResidualNet<float> build_model(int, int, std::uint64_t);
extern template ResidualNet<double> build_model(int, int, std::uint64_t);

}  // namespace bvsviz

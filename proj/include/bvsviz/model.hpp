#pragma once

#include <string>
#include <vector>

#include "bvsviz/autodiff.hpp"

namespace bvsviz {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
};

/// A differentiable classifier mapping [N,1,h,w] images to [N,K] logits.
///
/// Implementations are read-only during forward, so inference and saliency
/// may run concurrently on a shared instance as long as nobody mutates the
/// parameters at the same time.
template <typename T>
class Model {
 public:
  struct Forward {
    Var logits;
    std::vector<Var> params;  // same order as parameters()
  };

  virtual ~Model() = default;

  /// Records the forward pass on tape. When track_params is false the
  /// parameter leaves do not request gradients.
  virtual Forward forward(Tape<T>& tape, Var input, bool track_params) const = 0;

  virtual int num_classes() const = 0;

  virtual std::vector<Parameter<T>>& parameters() = 0;
  virtual const std::vector<Parameter<T>>& parameters() const = 0;
};

/// Logits for a batch without gradient tracking.
template <typename T>
Tensor<T> predict_logits(const Model<T>& model, const Tensor<T>& batch);

/// d logit[class_index] / d input under the guided ReLU rule. For a batch
/// input, each item's map is the gradient of its own logit.
template <typename T>
Tensor<T> guided_gradient(const Model<T>& model, const Tensor<T>& input,
                          int class_index, GradMode mode = GradMode::Guided);

std::size_t parameter_count(const std::vector<Parameter<float>>& params);
std::size_t parameter_count(const std::vector<Parameter<double>>& params);

extern template Tensor<float> predict_logits(const Model<float>&,
                                             const Tensor<float>&);
extern template Tensor<double> predict_logits(const Model<double>&,
                                              const Tensor<double>&);
extern template Tensor<float> guided_gradient(const Model<float>&,
                                              const Tensor<float>&, int,
                                              GradMode);
extern template Tensor<double> guided_gradient(const Model<double>&,
                                               const Tensor<double>&, int,
                                               GradMode);

}  // namespace bvsviz

#include "bvsviz/model.hpp"

#include <stdexcept>

namespace bvsviz {

template <typename T>
Tensor<T> predict_logits(const Model<T>& model, const Tensor<T>& batch) {
  Tape<T> tape;
  const Var in = tape.leaf(batch, false);
  const auto fwd = model.forward(tape, in, false);
  return tape.value(fwd.logits);
}

template <typename T>
Tensor<T> guided_gradient(const Model<T>& model, const Tensor<T>& input,
                          int class_index, GradMode mode) {
  if (class_index < 0 || class_index >= model.num_classes()) {
    throw std::out_of_range("class index " + std::to_string(class_index) +
                            " outside [0," + std::to_string(model.num_classes()) +
                            ")");
  }
  Tape<T> tape;
  const Var in = tape.leaf(input, true);
  const auto fwd = model.forward(tape, in, false);
  const Var score = ops::select_class(tape, fwd.logits, class_index);
  tape.backward(score, mode);
  if (!tape.has_grad(in)) return Tensor<T>(input.shape());
  return tape.grad(in);
}

template <typename T>
static std::size_t count_impl(const std::vector<Parameter<T>>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.value.size();
  return n;
}

std::size_t parameter_count(const std::vector<Parameter<float>>& params) {
  return count_impl(params);
}
std::size_t parameter_count(const std::vector<Parameter<double>>& params) {
  return count_impl(params);
}

template Tensor<float> predict_logits(const Model<float>&, const Tensor<float>&);
template Tensor<double> predict_logits(const Model<double>&, const Tensor<double>&);
template Tensor<float> guided_gradient(const Model<float>&, const Tensor<float>&,
                                       int, GradMode);
template Tensor<double> guided_gradient(const Model<double>&,
                                        const Tensor<double>&, int, GradMode);

}  // namespace bvsviz

#include "bvsviz/resnet.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

namespace bvsviz {

bool supported_input_size(int size) { return size >= 32 && size % 8 == 0; }

std::vector<LayerSpec> Architecture::layers() const {
  using K = LayerSpec::Kind;
  const int c = channels_base;
  std::vector<LayerSpec> l;
  l.push_back({"stem", K::Conv, 1, c, 3, 1});
  l.push_back({"stage1.conv1", K::Conv, c, c, 3, 1});
  l.push_back({"stage1.conv2", K::Conv, c, c, 3, 1});
  l.push_back({"stage2.conv1", K::Conv, c, 2 * c, 3, 2});
  l.push_back({"stage2.conv2", K::Conv, 2 * c, 2 * c, 3, 1});
  l.push_back({"stage2.proj", K::Conv, c, 2 * c, 1, 2});
  l.push_back({"stage3.conv1", K::Conv, 2 * c, 4 * c, 3, 2});
  l.push_back({"stage3.conv2", K::Conv, 4 * c, 4 * c, 3, 1});
  l.push_back({"stage3.proj", K::Conv, 2 * c, 4 * c, 1, 2});
  l.push_back({"head", K::Dense, 4 * c, num_classes, 1, 1});
  return l;
}

std::string Architecture::describe() const {
  std::ostringstream os;
  os << "resnet-lite input=" << input_size << " base=" << channels_base
     << " classes=" << num_classes << " layers=";
  bool first = true;
  for (const auto& l : layers()) {
    if (!first) os << ';';
    first = false;
    os << l.name << ':' << (l.kind == LayerSpec::Kind::Conv ? "conv" : "dense")
       << l.kernel << 'x' << l.kernel << '/' << l.stride << ':' << l.in_channels
       << "->" << l.out_channels;
  }
  return os.str();
}

template <typename T>
ResidualNet<T>::ResidualNet(Architecture arch, std::uint64_t seed)
    : arch_(arch), layers_(arch.layers()) {
  if (!supported_input_size(arch_.input_size)) {
    throw std::invalid_argument("unsupported crop size " +
                                std::to_string(arch_.input_size) +
                                " (need a multiple of 8, at least 32)");
  }
  if (arch_.channels_base < 4) {
    throw std::invalid_argument("channels_base must be at least 4");
  }
  std::mt19937_64 rng(seed);
  for (const auto& l : layers_) {
    Shape wshape;
    int fan_in = 0;
    if (l.kind == LayerSpec::Kind::Conv) {
      wshape = {l.out_channels, l.in_channels, l.kernel, l.kernel};
      fan_in = l.in_channels * l.kernel * l.kernel;
    } else {
      wshape = {l.out_channels, l.in_channels};
      fan_in = l.in_channels;
    }
    std::normal_distribution<double> he(0.0, std::sqrt(2.0 / fan_in));
    Tensor<T> w(wshape);
    for (T& v : w.data()) v = static_cast<T>(he(rng));
    params_.push_back({l.name + ".weight", std::move(w)});
    params_.push_back({l.name + ".bias", Tensor<T>({l.out_channels})});
  }
}

template <typename T>
typename Model<T>::Forward ResidualNet<T>::forward(Tape<T>& tape, Var input,
                                                   bool track_params) const {
  const Tensor<T>& x = tape.value(input);
  if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != arch_.input_size ||
      x.dim(3) != arch_.input_size) {
    throw ShapeError("model expects [N,1," + std::to_string(arch_.input_size) +
                     "," + std::to_string(arch_.input_size) + "], got " +
                     to_string(x.shape()));
  }
  typename Model<T>::Forward out;
  for (const auto& p : params_) out.params.push_back(tape.leaf(p.value, track_params));

  std::size_t li = 0;
  auto conv = [&](Var v) {
    const LayerSpec& l = layers_[li];
    const Var w = out.params[2 * li];
    const Var b = out.params[2 * li + 1];
    ++li;
    return ops::bias_add(tape, ops::conv2d(tape, v, w, l.stride, l.kernel / 2), b);
  };

  Var h = ops::max_pool2x2(tape, ops::relu(tape, conv(input)));

  // stage 1: identity skip
  {
    Var a = ops::relu(tape, conv(h));
    Var b = conv(a);
    h = ops::relu(tape, ops::add(tape, b, h));
  }
  // stages 2 and 3: strided with projection skip
  for (int stage = 0; stage < 2; ++stage) {
    Var a = ops::relu(tape, conv(h));
    Var b = conv(a);
    Var skip = conv(h);
    h = ops::relu(tape, ops::add(tape, b, skip));
  }

  Var pooled = ops::global_avg_pool(tape, h);
  const Var w = out.params[2 * li];
  const Var b = out.params[2 * li + 1];
  out.logits = ops::dense(tape, pooled, w, b);
  return out;
}

template <typename T>
ResidualNet<T> build_model(int crop_size, int channels_base, std::uint64_t seed) {
  Architecture arch;
  arch.input_size = crop_size;
  arch.channels_base = channels_base;
  return ResidualNet<T>(arch, seed);
}

template class ResidualNet<float>;
template class ResidualNet<double>;
template ResidualNet<float> build_model(int, int, std::uint64_t);
template ResidualNet<double> build_model(int, int, std::uint64_t);

}  // namespace bvsviz

#pragma once

// Reverse-mode differentiation over a recorded tape.
//
// Every op appends one node holding its forward value and a closure that
// pushes the node's gradient into its inputs. Node ids are assigned in
// recording order, so walking the tape backwards visits nodes in reverse
// topological order. The ReLU rule is selected per backward pass through
// GradMode, which lets the same recorded forward be differentiated either
// as a plain gradient or as a guided-backprop saliency.

#include <array>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "bvsviz/tensor.hpp"

namespace bvsviz {

enum class GradMode { Standard, Guided };

/// Handle to a node on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

template <typename T>
class Tape;

/// What a node's backward closure sees.
template <typename T>
class BackwardContext {
 public:
  const Tensor<T>& input(int i) const;
  const Tensor<T>& output() const;
  const Tensor<T>& grad_output() const;
  /// Gradient buffer of input i, or nullptr when that input is untracked.
  Tensor<T>* grad_input(int i);
  GradMode mode() const { return mode_; }

 private:
  friend class Tape<T>;
  BackwardContext(Tape<T>& tape, int node, GradMode mode)
      : tape_(tape), node_(node), mode_(mode) {}
  Tape<T>& tape_;
  int node_;
  GradMode mode_;
};

template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(BackwardContext<T>&)>;

  /// Adds an input node. Only leaves with requires_grad receive gradients.
  Var leaf(Tensor<T> value, bool requires_grad = false);

  /// Records an op result. Throws NumericalError if value is not finite.
  Var record(std::string op, Tensor<T> value, std::vector<Var> inputs,
             BackwardFn backward);

  const Tensor<T>& value(Var v) const;
  /// Gradient after backward(); throws if v never received one.
  const Tensor<T>& grad(Var v) const;
  bool has_grad(Var v) const;
  bool requires_grad(Var v) const;
  const std::string& op_name(Var v) const;
  /// Handles of the nodes v was computed from (empty for leaves).
  std::vector<Var> inputs(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  /// Accumulates d(loss)/d(node) into every tracked node. loss must be a
  /// scalar. A tape may be differentiated once; call again only after
  /// recording a fresh forward on a new tape.
  void backward(Var loss, GradMode mode = GradMode::Standard);

 private:
  friend class BackwardContext<T>;

  struct Node {
    std::string op;
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::vector<int> inputs;
    BackwardFn backward;
  };

  const Node& node(Var v) const;

  std::vector<Node> nodes_;
  bool differentiated_ = false;
};

/// ReLU derivative rule. Standard passes upstream where the forward input
/// was positive; Guided additionally requires the upstream value itself to
/// be positive. Ties at exactly zero pass nothing.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& upstream,
                        const Tensor<T>& forward_input, GradMode mode);

namespace ops {

/// x: [N,C,H,W], kernel: [K,C,kh,kw] -> [N,K,H',W'].
template <typename T>
Var conv2d(Tape<T>& tape, Var x, Var kernel, int stride, int padding);

/// Adds a per-channel bias b: [C] to x: [N,C,...].
template <typename T>
Var bias_add(Tape<T>& tape, Var x, Var bias);

template <typename T>
Var relu(Tape<T>& tape, Var x);

/// 2x2 window, stride 2, floor on odd extents.
template <typename T>
Var max_pool2x2(Tape<T>& tape, Var x);

/// [N,C,H,W] -> [N,C].
template <typename T>
Var global_avg_pool(Tape<T>& tape, Var x);

/// x: [N,I], weight: [O,I], bias: [O] -> [N,O].
template <typename T>
Var dense(Tape<T>& tape, Var x, Var weight, Var bias);

/// Elementwise sum of two same-shape tensors (residual join).
template <typename T>
Var add(Tape<T>& tape, Var a, Var b);

/// Elementwise product of two same-shape tensors.
template <typename T>
Var mul(Tape<T>& tape, Var a, Var b);

template <typename T>
Var scale(Tape<T>& tape, Var x, T factor);

template <typename T>
Var reshape(Tape<T>& tape, Var x, Shape shape);

/// Sum of all elements -> scalar [1].
template <typename T>
Var sum(Tape<T>& tape, Var x);

/// Sum over the batch of logits[n, class_index] -> scalar [1].
template <typename T>
Var select_class(Tape<T>& tape, Var logits, int class_index);

/// Batch mean of weights[label] * -log softmax(logits)[label].
template <typename T>
Var weighted_cross_entropy(Tape<T>& tape, Var logits,
                           std::span<const int> labels,
                           std::span<const double> class_weights);

}  // namespace ops

/// Softmax over the last axis of a [N,K] tensor.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits);

}  // namespace bvsviz

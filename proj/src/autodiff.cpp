#include "bvsviz/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <utility>

namespace bvsviz {

// ---------------------------------------------------------------------------
// BackwardContext

template <typename T>
const Tensor<T>& BackwardContext<T>::input(int i) const {
  const auto& n = tape_.nodes_[static_cast<std::size_t>(node_)];
  return tape_.nodes_[static_cast<std::size_t>(n.inputs.at(i))].value;
}

template <typename T>
const Tensor<T>& BackwardContext<T>::output() const {
  return tape_.nodes_[static_cast<std::size_t>(node_)].value;
}

template <typename T>
const Tensor<T>& BackwardContext<T>::grad_output() const {
  return tape_.nodes_[static_cast<std::size_t>(node_)].grad;
}

template <typename T>
Tensor<T>* BackwardContext<T>::grad_input(int i) {
  const auto& n = tape_.nodes_[static_cast<std::size_t>(node_)];
  auto& in = tape_.nodes_[static_cast<std::size_t>(n.inputs.at(i))];
  if (!in.requires_grad) return nullptr;
  if (in.grad.empty() && !in.value.empty()) {
    in.grad = Tensor<T>(in.value.shape());
  }
  return &in.grad;
}

// ---------------------------------------------------------------------------
// Tape

template <typename T>
Var Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  if (!value.all_finite()) {
    throw NumericalError("non-finite value in leaf tensor " +
                         to_string(value.shape()));
  }
  Node n;
  n.op = "leaf";
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var Tape<T>::record(std::string op, Tensor<T> value, std::vector<Var> inputs,
                    BackwardFn backward) {
  if (!value.all_finite()) {
    throw NumericalError("non-finite value produced by op '" + op + "'");
  }
  Node n;
  n.op = std::move(op);
  n.value = std::move(value);
  for (Var v : inputs) {
    node(v);  // validates the handle
    n.inputs.push_back(v.id);
    n.requires_grad =
        n.requires_grad || nodes_[static_cast<std::size_t>(v.id)].requires_grad;
  }
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
const typename Tape<T>::Node& Tape<T>::node(Var v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw std::out_of_range("variable " + std::to_string(v.id) +
                            " is not on this tape");
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

template <typename T>
const Tensor<T>& Tape<T>::value(Var v) const {
  return node(v).value;
}

template <typename T>
const Tensor<T>& Tape<T>::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.empty() && !n.value.empty()) {
    throw std::logic_error("no gradient recorded for node " +
                           std::to_string(v.id) + " ('" + n.op + "')");
  }
  return n.grad;
}

template <typename T>
bool Tape<T>::has_grad(Var v) const {
  const Node& n = node(v);
  return !n.grad.empty();
}

template <typename T>
bool Tape<T>::requires_grad(Var v) const {
  return node(v).requires_grad;
}

template <typename T>
const std::string& Tape<T>::op_name(Var v) const {
  return node(v).op;
}

template <typename T>
std::vector<Var> Tape<T>::inputs(Var v) const {
  std::vector<Var> out;
  for (int id : node(v).inputs) out.push_back(Var{id});
  return out;
}

template <typename T>
void Tape<T>::backward(Var loss, GradMode mode) {
  if (nodes_.empty() || loss.id < 0 ||
      static_cast<std::size_t>(loss.id) >= nodes_.size()) {
    throw std::logic_error("backward called before a forward pass was recorded");
  }
  if (differentiated_) {
    throw std::logic_error(
        "backward called twice on the same tape; record a new forward pass");
  }
  Node& root = nodes_[static_cast<std::size_t>(loss.id)];
  if (root.value.size() != 1) {
    throw ShapeError("backward needs a scalar loss, got shape " +
                     to_string(root.value.shape()));
  }
  differentiated_ = true;
  if (!root.requires_grad) return;
  root.grad = Tensor<T>(root.value.shape(), T(1));

  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    BackwardContext<T> ctx(*this, id, mode);
    n.backward(ctx);
    for (int in : n.inputs) {
      const Node& src = nodes_[static_cast<std::size_t>(in)];
      if (!src.grad.empty() && !src.grad.all_finite()) {
        throw NumericalError("non-finite gradient produced by backward of op '" +
                             n.op + "'");
      }
    }
  }
}

// ---------------------------------------------------------------------------
// ReLU rule

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& upstream,
                        const Tensor<T>& forward_input, GradMode mode) {
  if (upstream.shape() != forward_input.shape()) {
    throw ShapeError("relu_backward: upstream " + to_string(upstream.shape()) +
                     " vs forward input " + to_string(forward_input.shape()));
  }
  Tensor<T> out(upstream.shape());
  const auto up = upstream.data();
  const auto x = forward_input.data();
  auto g = out.data();
  if (mode == GradMode::Guided) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] = (x[i] > T(0) && up[i] > T(0)) ? up[i] : T(0);
    }
  } else {
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] = x[i] > T(0) ? up[i] : T(0);
    }
  }
  return out;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  if (logits.rank() != 2) {
    throw ShapeError("softmax_rows expects [N,K], got " +
                     to_string(logits.shape()));
  }
  const int n = logits.dim(0);
  const int k = logits.dim(1);
  Tensor<T> out(logits.shape());
  for (int i = 0; i < n; ++i) {
    const T* row = logits.data().data() + static_cast<std::size_t>(i) * k;
    T* dst = out.data().data() + static_cast<std::size_t>(i) * k;
    T mx = *std::max_element(row, row + k);
    T z = 0;
    for (int j = 0; j < k; ++j) {
      dst[j] = std::exp(row[j] - mx);
      z += dst[j];
    }
    for (int j = 0; j < k; ++j) dst[j] /= z;
  }
  return out;
}

namespace ops {
namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

// Lower [C,H,W] image patches into rows of a [C*kh*kw, ld] matrix, writing
// Ho*Wo columns per row.
template <typename T>
void im2col(const T* img, int c, int h, int w, int kh, int kw, int stride,
            int pad, int ho, int wo, T* col, std::size_t ld) {
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        T* dst = col + static_cast<std::size_t>((ci * kh + ky) * kw + kx) * ld;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          T* drow = dst + static_cast<std::size_t>(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(drow, drow + wo, T(0));
            continue;
          }
          const T* srow = img + (static_cast<std::size_t>(ci) * h + iy) * w;
          if (stride == 1 && kx - pad >= 0 && wo - 1 + kx - pad < w) {
            std::copy_n(srow + kx - pad, wo, drow);
            continue;
          }
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            drow[ox] = (ix >= 0 && ix < w) ? srow[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, int c, int h, int w, int kh, int kw, int stride,
            int pad, int ho, int wo, T* img, std::size_t ld) {
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const T* src = col + static_cast<std::size_t>((ci * kh + ky) * kw + kx) * ld;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          const T* srow = src + static_cast<std::size_t>(oy) * wo;
          T* drow = img + (static_cast<std::size_t>(ci) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

#if defined(__AVX__)
constexpr std::size_t kVecBytes = 32;
#else
constexpr std::size_t kVecBytes = 16;
#endif

template <typename T>
struct Vec {
  using type [[gnu::vector_size(kVecBytes)]] = T;
  static constexpr int lanes = static_cast<int>(kVecBytes / sizeof(T));
  static type load(const T* p) {
    type v;
    std::memcpy(&v, p, sizeof v);
    return v;
  }
  static void store(T* p, type v) { std::memcpy(p, &v, sizeof v); }
  static type splat(T x) { return type{} + x; }
  static T hsum(type v) {
    T s = 0;
    for (int l = 0; l < lanes; ++l) s += v[l];
    return s;
  }
};

// C[M,P] += A[M,K] * B[K,P], all row-major. B is copied in column blocks
// so the 4x(2 vector) register tiles read it contiguously.
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, int m, int k, std::size_t p) {
  using V = Vec<T>;
  using v_t = typename V::type;
  constexpr std::size_t jt = 2 * V::lanes;
  constexpr std::size_t kBlock = 256;
  thread_local std::vector<T> panel;
  panel.resize(static_cast<std::size_t>(k) * kBlock);
  for (std::size_t j0 = 0; j0 < p; j0 += kBlock) {
    const std::size_t len = std::min(kBlock, p - j0);
    const std::size_t lv = len - len % jt;
    for (int q = 0; q < k; ++q) {
      std::copy_n(b + static_cast<std::size_t>(q) * p + j0, len, panel.data() + q * kBlock);
    }
    int i = 0;
    for (; i + 4 <= m; i += 4) {
      const T* a0 = a + static_cast<std::size_t>(i) * k;
      T* c0 = c + static_cast<std::size_t>(i) * p + j0;
      for (std::size_t j = 0; j < lv; j += jt) {
        v_t acc[4][2];
        for (int r = 0; r < 4; ++r) {
          acc[r][0] = V::load(c0 + r * p + j);
          acc[r][1] = V::load(c0 + r * p + j + V::lanes);
        }
        const T* bp = panel.data() + j;
        for (int q = 0; q < k; ++q, bp += kBlock) {
          const v_t b0 = V::load(bp);
          const v_t b1 = V::load(bp + V::lanes);
          for (int r = 0; r < 4; ++r) {
            const v_t av = V::splat(a0[r * k + q]);
            acc[r][0] += av * b0;
            acc[r][1] += av * b1;
          }
        }
        for (int r = 0; r < 4; ++r) {
          V::store(c0 + r * p + j, acc[r][0]);
          V::store(c0 + r * p + j + V::lanes, acc[r][1]);
        }
      }
      for (int r = 0; r < 4; ++r) {
        for (std::size_t j = lv; j < len; ++j) {
          T acc = c0[r * p + j];
          for (int q = 0; q < k; ++q) acc += a0[r * k + q] * panel[q * kBlock + j];
          c0[r * p + j] = acc;
        }
      }
    }
    for (; i < m; ++i) {
      const T* arow = a + static_cast<std::size_t>(i) * k;
      T* crow = c + static_cast<std::size_t>(i) * p + j0;
      for (int q = 0; q < k; ++q) {
        const T av = arow[q];
        const T* brow = panel.data() + q * kBlock;
        for (std::size_t j = 0; j < len; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

// C[M,K] += A[M,P] * B[K,P]^T with lane-wise partial sums.
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, int m, int k, std::size_t p) {
  using V = Vec<T>;
  using v_t = typename V::type;
  constexpr std::size_t jt = V::lanes;
  const std::size_t pv = p - p % jt;
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<std::size_t>(i) * p;
    T* crow = c + static_cast<std::size_t>(i) * k;
    int q = 0;
    for (; q + 4 <= k; q += 4) {
      const T* b0 = b + static_cast<std::size_t>(q) * p;
      v_t acc[4] = {};
      for (std::size_t j = 0; j < pv; j += jt) {
        const v_t av = V::load(arow + j);
        for (int r = 0; r < 4; ++r) acc[r] += av * V::load(b0 + r * p + j);
      }
      for (int r = 0; r < 4; ++r) {
        T sum = V::hsum(acc[r]);
        for (std::size_t j = pv; j < p; ++j) sum += arow[j] * b0[r * p + j];
        crow[q + r] += sum;
      }
    }
    for (; q < k; ++q) {
      const T* brow = b + static_cast<std::size_t>(q) * p;
      v_t acc{};
      for (std::size_t j = 0; j < pv; j += jt) acc += V::load(arow + j) * V::load(brow + j);
      T sum = V::hsum(acc);
      for (std::size_t j = pv; j < p; ++j) sum += arow[j] * brow[j];
      crow[q] += sum;
    }
  }
}

}  // namespace

// Reused per-thread buffers; resize() never shrinks capacity, so repeated
// calls skip allocation and page faults.
template <typename T>
T* scratch(int slot, std::size_t size) {
  thread_local std::vector<T> buffers[3];
  auto& v = buffers[slot];
  if (v.size() < size) v.resize(size);
  return v.data();
}

template <typename T>
Var conv2d(Tape<T>& tape, Var x, Var kernel, int stride, int padding) {
  const Tensor<T>& in = tape.value(x);
  const Tensor<T>& wt = tape.value(kernel);
  require(in.rank() == 4 && wt.rank() == 4 && in.dim(1) == wt.dim(1),
          "conv2d: input " + to_string(in.shape()) + " incompatible with kernel " +
              to_string(wt.shape()));
  require(stride >= 1 && padding >= 0, "conv2d: stride must be >= 1 and padding >= 0");
  const int n = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
  const int k = wt.dim(0), kh = wt.dim(2), kw = wt.dim(3);
  require(kh <= h + 2 * padding && kw <= w + 2 * padding,
          "conv2d: kernel " + to_string(wt.shape()) + " larger than padded input " +
              to_string(in.shape()));
  const int ho = (h + 2 * padding - kh) / stride + 1;
  const int wo = (w + 2 * padding - kw) / stride + 1;
  const int ckk = c * kh * kw;
  const std::size_t plane = static_cast<std::size_t>(ho) * wo;
  const std::size_t in_stride = static_cast<std::size_t>(c) * h * w;
  // Samples are lowered side by side in groups whose [ckk, g*plane] matrix
  // stays cache sized; late stages with tiny planes still get long rows.
  const int group = static_cast<int>(std::clamp<std::size_t>(
      (512 * 1024 / sizeof(T)) / (static_cast<std::size_t>(ckk) * plane), 1,
      static_cast<std::size_t>(n)));

  auto lower = [=](const T* src, int g, T* col) {
    const std::size_t cols = plane * static_cast<std::size_t>(g);
    for (int b = 0; b < g; ++b) {
      im2col(src + b * in_stride, c, h, w, kh, kw, stride, padding, ho, wo,
             col + b * plane, cols);
    }
  };

  Tensor<T> out({n, k, ho, wo});
  for (int b0 = 0; b0 < n; b0 += group) {
    const int g = std::min(group, n - b0);
    const std::size_t cols = plane * static_cast<std::size_t>(g);
    T* col = scratch<T>(0, static_cast<std::size_t>(ckk) * cols);
    T* prod = scratch<T>(1, static_cast<std::size_t>(k) * cols);
    lower(in.data().data() + b0 * in_stride, g, col);
    std::fill_n(prod, static_cast<std::size_t>(k) * cols, T(0));
    gemm_nn(wt.data().data(), col, prod, k, ckk, cols);
    for (int ko = 0; ko < k; ++ko) {
      for (int b = 0; b < g; ++b) {
        std::copy_n(prod + ko * cols + b * plane, plane,
                    out.data().data() + (static_cast<std::size_t>(b0 + b) * k + ko) * plane);
      }
    }
  }

  return tape.record(
      "conv2d", std::move(out), {x, kernel},
      [=](BackwardContext<T>& ctx) {
        const Tensor<T>& xin = ctx.input(0);
        const Tensor<T>& wk = ctx.input(1);
        const Tensor<T>& gout = ctx.grad_output();
        Tensor<T>* gx = ctx.grad_input(0);
        Tensor<T>* gw = ctx.grad_input(1);
        std::vector<T> wtr;
        if (gx) {
          wtr.resize(static_cast<std::size_t>(ckk) * k);
          for (int ko = 0; ko < k; ++ko)
            for (int q = 0; q < ckk; ++q)
              wtr[static_cast<std::size_t>(q) * k + ko] =
                  wk[static_cast<std::size_t>(ko) * ckk + q];
        }
        for (int b0 = 0; b0 < n; b0 += group) {
          const int g = std::min(group, n - b0);
          const std::size_t cols = plane * static_cast<std::size_t>(g);
          T* gbuf = scratch<T>(1, static_cast<std::size_t>(k) * cols);
          for (int ko = 0; ko < k; ++ko) {
            for (int b = 0; b < g; ++b) {
              std::copy_n(
                  gout.data().data() + (static_cast<std::size_t>(b0 + b) * k + ko) * plane,
                  plane, gbuf + ko * cols + b * plane);
            }
          }
          if (gw) {
            T* col = scratch<T>(0, static_cast<std::size_t>(ckk) * cols);
            lower(xin.data().data() + b0 * in_stride, g, col);
            gemm_nt(gbuf, col, gw->data().data(), k, ckk, cols);
          }
          if (gx) {
            T* dcol = scratch<T>(2, static_cast<std::size_t>(ckk) * cols);
            std::fill_n(dcol, static_cast<std::size_t>(ckk) * cols, T(0));
            gemm_nn(wtr.data(), gbuf, dcol, ckk, k, cols);
            for (int b = 0; b < g; ++b) {
              col2im(dcol + b * plane, c, h, w, kh, kw, stride, padding, ho, wo,
                     gx->data().data() + (b0 + b) * in_stride, cols);
            }
          }
        }
      });
}

template <typename T>
Var bias_add(Tape<T>& tape, Var x, Var bias) {
  const Tensor<T>& in = tape.value(x);
  const Tensor<T>& bv = tape.value(bias);
  require(in.rank() >= 2 && bv.rank() == 1 && bv.dim(0) == in.dim(1),
          "bias_add: input " + to_string(in.shape()) + " incompatible with bias " +
              to_string(bv.shape()));
  const int n = in.dim(0), c = in.dim(1);
  const std::size_t inner = in.size() / (static_cast<std::size_t>(n) * c);
  Tensor<T> out = in;
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      T* p = out.data().data() + (static_cast<std::size_t>(b) * c + ch) * inner;
      const T v = bv[static_cast<std::size_t>(ch)];
      for (std::size_t i = 0; i < inner; ++i) p[i] += v;
    }
  }
  return tape.record("bias_add", std::move(out), {x, bias},
                     [=](BackwardContext<T>& ctx) {
                       const Tensor<T>& g = ctx.grad_output();
                       if (Tensor<T>* gx = ctx.grad_input(0)) {
                         for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
                       }
                       if (Tensor<T>* gb = ctx.grad_input(1)) {
                         for (int b = 0; b < n; ++b) {
                           for (int ch = 0; ch < c; ++ch) {
                             const T* p = g.data().data() +
                                          (static_cast<std::size_t>(b) * c + ch) * inner;
                             T acc = 0;
                             for (std::size_t i = 0; i < inner; ++i) acc += p[i];
                             (*gb)[static_cast<std::size_t>(ch)] += acc;
                           }
                         }
                       }
                     });
}

template <typename T>
Var relu(Tape<T>& tape, Var x) {
  Tensor<T> out = tape.value(x);
  for (T& v : out.data()) v = v > T(0) ? v : T(0);
  return tape.record("relu", std::move(out), {x}, [](BackwardContext<T>& ctx) {
    Tensor<T>* gx = ctx.grad_input(0);
    if (!gx) return;
    const Tensor<T> g = relu_backward(ctx.grad_output(), ctx.input(0), ctx.mode());
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
  });
}

template <typename T>
Var max_pool2x2(Tape<T>& tape, Var x) {
  const Tensor<T>& in = tape.value(x);
  require(in.rank() == 4 && in.dim(2) >= 2 && in.dim(3) >= 2,
          "max_pool2x2: expected [N,C,H>=2,W>=2], got " + to_string(in.shape()));
  const int n = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
  const int ho = h / 2, wo = w / 2;
  Tensor<T> out({n, c, ho, wo});
  std::vector<std::size_t> argmax(out.size());
  std::size_t o = 0;
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * h * w;
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox, ++o) {
          std::size_t best = base + static_cast<std::size_t>(2 * oy) * w + 2 * ox;
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              const std::size_t idx =
                  base + static_cast<std::size_t>(2 * oy + dy) * w + 2 * ox + dx;
              if (in[idx] > in[best]) best = idx;
            }
          }
          argmax[o] = best;
          out[o] = in[best];
        }
      }
    }
  }
  return tape.record("max_pool2x2", std::move(out), {x},
                     [argmax = std::move(argmax)](BackwardContext<T>& ctx) {
                       Tensor<T>* gx = ctx.grad_input(0);
                       if (!gx) return;
                       const Tensor<T>& g = ctx.grad_output();
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         (*gx)[argmax[i]] += g[i];
                       }
                     });
}

template <typename T>
Var global_avg_pool(Tape<T>& tape, Var x) {
  const Tensor<T>& in = tape.value(x);
  require(in.rank() == 4, "global_avg_pool: expected [N,C,H,W], got " +
                              to_string(in.shape()));
  const int n = in.dim(0), c = in.dim(1);
  const std::size_t plane = static_cast<std::size_t>(in.dim(2)) * in.dim(3);
  Tensor<T> out({n, c});
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T* p = in.data().data() + i * plane;
    T acc = 0;
    for (std::size_t q = 0; q < plane; ++q) acc += p[q];
    out[i] = acc / static_cast<T>(plane);
  }
  return tape.record("global_avg_pool", std::move(out), {x},
                     [plane](BackwardContext<T>& ctx) {
                       Tensor<T>* gx = ctx.grad_input(0);
                       if (!gx) return;
                       const Tensor<T>& g = ctx.grad_output();
                       const T inv = T(1) / static_cast<T>(plane);
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         T* p = gx->data().data() + i * plane;
                         const T v = g[i] * inv;
                         for (std::size_t q = 0; q < plane; ++q) p[q] += v;
                       }
                     });
}

template <typename T>
Var dense(Tape<T>& tape, Var x, Var weight, Var bias) {
  const Tensor<T>& in = tape.value(x);
  const Tensor<T>& wt = tape.value(weight);
  const Tensor<T>& bv = tape.value(bias);
  require(in.rank() == 2 && wt.rank() == 2 && in.dim(1) == wt.dim(1) &&
              bv.rank() == 1 && bv.dim(0) == wt.dim(0),
          "dense: input " + to_string(in.shape()) + " incompatible with weight " +
              to_string(wt.shape()) + " / bias " + to_string(bv.shape()));
  const int n = in.dim(0), fi = in.dim(1), fo = wt.dim(0);
  Tensor<T> out({n, fo});
  for (int b = 0; b < n; ++b) {
    const T* xr = in.data().data() + static_cast<std::size_t>(b) * fi;
    for (int o = 0; o < fo; ++o) {
      const T* wr = wt.data().data() + static_cast<std::size_t>(o) * fi;
      T acc = bv[static_cast<std::size_t>(o)];
      for (int i = 0; i < fi; ++i) acc += wr[i] * xr[i];
      out[static_cast<std::size_t>(b) * fo + o] = acc;
    }
  }
  return tape.record(
      "dense", std::move(out), {x, weight, bias}, [=](BackwardContext<T>& ctx) {
        const Tensor<T>& xin = ctx.input(0);
        const Tensor<T>& wk = ctx.input(1);
        const Tensor<T>& g = ctx.grad_output();
        Tensor<T>* gx = ctx.grad_input(0);
        Tensor<T>* gw = ctx.grad_input(1);
        Tensor<T>* gb = ctx.grad_input(2);
        for (int b = 0; b < n; ++b) {
          const T* xr = xin.data().data() + static_cast<std::size_t>(b) * fi;
          for (int o = 0; o < fo; ++o) {
            const T go = g[static_cast<std::size_t>(b) * fo + o];
            if (gb) (*gb)[static_cast<std::size_t>(o)] += go;
            if (gw) {
              T* dw = gw->data().data() + static_cast<std::size_t>(o) * fi;
              for (int i = 0; i < fi; ++i) dw[i] += go * xr[i];
            }
            if (gx) {
              const T* wr = wk.data().data() + static_cast<std::size_t>(o) * fi;
              T* dx = gx->data().data() + static_cast<std::size_t>(b) * fi;
              for (int i = 0; i < fi; ++i) dx[i] += go * wr[i];
            }
          }
        }
      });
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& va = tape.value(a);
  const Tensor<T>& vb = tape.value(b);
  require(va.shape() == vb.shape(), "add: shapes " + to_string(va.shape()) +
                                        " and " + to_string(vb.shape()) + " differ");
  Tensor<T> out = va;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += vb[i];
  return tape.record("add", std::move(out), {a, b}, [](BackwardContext<T>& ctx) {
    const Tensor<T>& g = ctx.grad_output();
    for (int side = 0; side < 2; ++side) {
      if (Tensor<T>* gi = ctx.grad_input(side)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gi)[i] += g[i];
      }
    }
  });
}

template <typename T>
Var mul(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& va = tape.value(a);
  const Tensor<T>& vb = tape.value(b);
  require(va.shape() == vb.shape(), "mul: shapes " + to_string(va.shape()) +
                                        " and " + to_string(vb.shape()) + " differ");
  Tensor<T> out = va;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= vb[i];
  return tape.record("mul", std::move(out), {a, b}, [](BackwardContext<T>& ctx) {
    const Tensor<T>& g = ctx.grad_output();
    if (Tensor<T>* ga = ctx.grad_input(0)) {
      const Tensor<T>& other = ctx.input(1);
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * other[i];
    }
    if (Tensor<T>* gb = ctx.grad_input(1)) {
      const Tensor<T>& other = ctx.input(0);
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * other[i];
    }
  });
}

template <typename T>
Var scale(Tape<T>& tape, Var x, T factor) {
  Tensor<T> out = tape.value(x);
  for (T& v : out.data()) v *= factor;
  return tape.record("scale", std::move(out), {x},
                     [factor](BackwardContext<T>& ctx) {
                       Tensor<T>* gx = ctx.grad_input(0);
                       if (!gx) return;
                       const Tensor<T>& g = ctx.grad_output();
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         (*gx)[i] += g[i] * factor;
                       }
                     });
}

template <typename T>
Var reshape(Tape<T>& tape, Var x, Shape shape) {
  Tensor<T> out = tape.value(x).reshaped(std::move(shape));
  return tape.record("reshape", std::move(out), {x}, [](BackwardContext<T>& ctx) {
    Tensor<T>* gx = ctx.grad_input(0);
    if (!gx) return;
    const Tensor<T>& g = ctx.grad_output();
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
  });
}

template <typename T>
Var sum(Tape<T>& tape, Var x) {
  T acc = 0;
  for (T v : tape.value(x).data()) acc += v;
  return tape.record("sum", Tensor<T>({1}, {acc}), {x},
                     [](BackwardContext<T>& ctx) {
                       Tensor<T>* gx = ctx.grad_input(0);
                       if (!gx) return;
                       const T g = ctx.grad_output()[0];
                       for (T& v : gx->data()) v += g;
                     });
}

template <typename T>
Var select_class(Tape<T>& tape, Var logits, int class_index) {
  const Tensor<T>& in = tape.value(logits);
  require(in.rank() == 2, "select_class: expected [N,K], got " +
                              to_string(in.shape()));
  const int n = in.dim(0), k = in.dim(1);
  if (class_index < 0 || class_index >= k) {
    throw std::out_of_range("class index " + std::to_string(class_index) +
                            " outside [0," + std::to_string(k) + ")");
  }
  T acc = 0;
  for (int b = 0; b < n; ++b) acc += in[static_cast<std::size_t>(b) * k + class_index];
  return tape.record("select_class", Tensor<T>({1}, {acc}), {logits},
                     [=](BackwardContext<T>& ctx) {
                       Tensor<T>* gx = ctx.grad_input(0);
                       if (!gx) return;
                       const T g = ctx.grad_output()[0];
                       for (int b = 0; b < n; ++b) {
                         (*gx)[static_cast<std::size_t>(b) * k + class_index] += g;
                       }
                     });
}

template <typename T>
Var weighted_cross_entropy(Tape<T>& tape, Var logits, std::span<const int> labels,
                           std::span<const double> class_weights) {
  const Tensor<T>& in = tape.value(logits);
  require(in.rank() == 2 && in.dim(0) >= 1,
          "weighted_cross_entropy: expected [N>=1,K] logits, got " +
              to_string(in.shape()));
  const int n = in.dim(0), k = in.dim(1);
  require(static_cast<int>(labels.size()) == n,
          "weighted_cross_entropy: " + std::to_string(labels.size()) +
              " labels for logits " + to_string(in.shape()));
  require(static_cast<int>(class_weights.size()) == k,
          "weighted_cross_entropy: " + std::to_string(class_weights.size()) +
              " class weights for " + std::to_string(k) + " classes");
  if (!in.all_finite()) {
    throw NumericalError("weighted_cross_entropy: non-finite logits");
  }
  for (int y : labels) {
    if (y < 0 || y >= k) throw std::out_of_range("label outside class range");
  }
  const Tensor<T> prob = softmax_rows(in);
  T loss = 0;
  for (int b = 0; b < n; ++b) {
    const T* row = in.data().data() + static_cast<std::size_t>(b) * k;
    const T mx = *std::max_element(row, row + k);
    T z = 0;
    for (int j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    const T logp = row[labels[b]] - mx - std::log(z);
    loss += static_cast<T>(class_weights[labels[b]]) * -logp;
  }
  loss /= static_cast<T>(n);

  std::vector<int> y(labels.begin(), labels.end());
  std::vector<double> w(class_weights.begin(), class_weights.end());
  return tape.record(
      "weighted_cross_entropy", Tensor<T>({1}, {loss}), {logits},
      [=, prob = std::move(prob)](BackwardContext<T>& ctx) {
        Tensor<T>* gx = ctx.grad_input(0);
        if (!gx) return;
        const T g = ctx.grad_output()[0];
        for (int b = 0; b < n; ++b) {
          const T scale_b =
              g * static_cast<T>(w[static_cast<std::size_t>(y[b])]) / static_cast<T>(n);
          for (int j = 0; j < k; ++j) {
            const std::size_t i = static_cast<std::size_t>(b) * k + j;
            (*gx)[i] += scale_b * (prob[i] - (j == y[b] ? T(1) : T(0)));
          }
        }
      });
}

}  // namespace ops

#define BVSVIZ_INSTANTIATE(T)                                                  \
  template class BackwardContext<T>;                                           \
  template class Tape<T>;                                                      \
  template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&,         \
                                   GradMode);                                  \
  template Tensor<T> softmax_rows(const Tensor<T>&);                           \
  template Var ops::conv2d(Tape<T>&, Var, Var, int, int);                      \
  template Var ops::bias_add(Tape<T>&, Var, Var);                              \
  template Var ops::relu(Tape<T>&, Var);                                       \
  template Var ops::max_pool2x2(Tape<T>&, Var);                                \
  template Var ops::global_avg_pool(Tape<T>&, Var);                            \
  template Var ops::dense(Tape<T>&, Var, Var, Var);                            \
  template Var ops::add(Tape<T>&, Var, Var);                                   \
  template Var ops::mul(Tape<T>&, Var, Var);                                   \
  template Var ops::scale(Tape<T>&, Var, T);                                   \
  template Var ops::reshape(Tape<T>&, Var, Shape);                             \
  template Var ops::sum(Tape<T>&, Var);                                        \
  template Var ops::select_class(Tape<T>&, Var, int);                          \
  template Var ops::weighted_cross_entropy(Tape<T>&, Var, std::span<const int>, \
                                           std::span<const double>);

BVSVIZ_INSTANTIATE(float)
BVSVIZ_INSTANTIATE(double)

#undef BVSVIZ_INSTANTIATE

}  // namespace bvsviz

#include "bvsviz/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>

#include "bvsviz/autodiff.hpp"
#include "bvsviz/resnet.hpp"
#include "bvsviz/rng.hpp"

namespace bvsviz {
namespace {

using Builder = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

struct Instance {
  std::vector<Tensor<double>> inputs;
  std::vector<bool> differentiable;
  Builder build;
  /// Alternative to build for graphs that copy an input into leaves of
  /// their own; grad_from[i] names the node holding input i's gradient.
  std::function<Var(Tape<double>&, const std::vector<Var>&, std::vector<Var>& grad_from)>
      build_aliased;
  /// Probe at most this many coordinates in total (0 = all).
  int sample = 0;
};

Tensor<double> uniform(const Shape& shape, Rng& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(shape);
  for (double& v : t.data()) v = u(rng);
  return t;
}

// Values bounded away from zero so ReLU kinks are never within reach of h.
Tensor<double> away_from_zero(const Shape& shape, Rng& rng) {
  std::uniform_real_distribution<double> mag(0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  Tensor<double> t(shape);
  for (double& v : t.data()) v = sign(rng) ? mag(rng) : -mag(rng);
  return t;
}

// Distinct values at least 0.04 apart so max-pool winners are stable.
Tensor<double> well_separated(const Shape& shape, Rng& rng) {
  Tensor<double> t(shape);
  std::vector<int> order(t.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::uniform_real_distribution<double> jitter(-0.005, 0.005);
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = 0.05 * (order[i] - static_cast<double>(t.size()) / 2) + jitter(rng);
  }
  return t;
}

int pick(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

// Which branch every ReLU and max-pool took; finite differences are only
// meaningful when +h and -h see the same branches.
std::vector<int> signature(const Tape<double>& tape) {
  std::vector<int> sig;
  for (std::size_t id = 0; id < tape.size(); ++id) {
    const Var v{static_cast<int>(id)};
    const std::string& op = tape.op_name(v);
    if (op == "relu") {
      for (double x : tape.value(tape.inputs(v)[0]).data()) sig.push_back(x > 0);
    } else if (op == "max_pool2x2") {
      const Tensor<double>& in = tape.value(tape.inputs(v)[0]);
      const int n = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
      for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch)
          for (int y = 0; y + 1 < h; y += 2)
            for (int x = 0; x + 1 < w; x += 2) {
              int best = 0;
              double bv = in.at(b, ch, y, x);
              for (int k = 1; k < 4; ++k) {
                const double cand = in.at(b, ch, y + k / 2, x + k % 2);
                if (cand > bv) {
                  bv = cand;
                  best = k;
                }
              }
              sig.push_back(best);
            }
    }
  }
  return sig;
}

struct Eval {
  double loss = 0;
  std::vector<int> sig;
};

// loss = sum(out * projection) so every output element is weighted.
Eval evaluate(const Instance& inst, const std::vector<Tensor<double>>& inputs,
              const Tensor<double>* projection, std::vector<Tensor<double>>* grads) {
  Tape<double> tape;
  std::vector<Var> leaves;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    leaves.push_back(tape.leaf(inputs[i], grads && inst.differentiable[i]));
  }
  std::vector<Var> grad_from = leaves;
  Var out = inst.build_aliased ? inst.build_aliased(tape, leaves, grad_from)
                               : inst.build(tape, leaves);
  Var loss = out;
  if (projection) {
    Var p = tape.leaf(*projection);
    loss = ops::sum(tape, ops::mul(tape, out, p));
  }
  Eval e;
  e.loss = tape.value(loss)[0];
  e.sig = signature(tape);
  if (grads) {
    tape.backward(loss);
    grads->clear();
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      grads->push_back(tape.has_grad(grad_from[i]) ? tape.grad(grad_from[i])
                                                   : Tensor<double>(inputs[i].shape()));
    }
  }
  return e;
}

struct InstanceOutcome {
  double error = 0;
  int skipped = 0;
};

InstanceOutcome check(const Instance& inst, const GradcheckOptions& opt, Rng& rng) {
  // Output shape from a plain forward, then a fixed random projection.
  Tensor<double> projection;
  {
    Tape<double> tape;
    std::vector<Var> leaves;
    for (const auto& t : inst.inputs) leaves.push_back(tape.leaf(t));
    std::vector<Var> grad_from = leaves;
    const Tensor<double>& out =
        tape.value(inst.build_aliased ? inst.build_aliased(tape, leaves, grad_from)
                                      : inst.build(tape, leaves));
    projection = out.size() == 1 ? Tensor<double>(out.shape(), 1.0) : uniform(out.shape(), rng);
  }
  std::vector<Tensor<double>> analytic;
  const Eval base = evaluate(inst, inst.inputs, &projection, &analytic);

  std::vector<std::pair<int, std::size_t>> coords;
  for (std::size_t i = 0; i < inst.inputs.size(); ++i) {
    if (!inst.differentiable[i]) continue;
    for (std::size_t j = 0; j < inst.inputs[i].size(); ++j) {
      coords.emplace_back(static_cast<int>(i), j);
    }
  }
  if (inst.sample > 0 && static_cast<int>(coords.size()) > inst.sample) {
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(static_cast<std::size_t>(inst.sample));
    std::sort(coords.begin(), coords.end());
  }

  InstanceOutcome outcome;
  std::vector<std::vector<double>> a(inst.inputs.size()), n(inst.inputs.size());
  std::vector<Tensor<double>> probe = inst.inputs;
  for (const auto& [i, j] : coords) {
    const double x0 = probe[i][j];
    probe[i][j] = x0 + opt.step;
    const Eval plus = evaluate(inst, probe, &projection, nullptr);
    probe[i][j] = x0 - opt.step;
    const Eval minus = evaluate(inst, probe, &projection, nullptr);
    probe[i][j] = x0;
    if (plus.sig != base.sig || minus.sig != base.sig) {
      ++outcome.skipped;
      continue;
    }
    a[i].push_back(analytic[i][j]);
    n[i].push_back((plus.loss - minus.loss) / (2 * opt.step));
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].empty()) outcome.error = std::max(outcome.error, relative_error(a[i], n[i]));
  }
  return outcome;
}

using Factory = std::function<Instance(Rng&, int)>;

std::vector<std::pair<std::string, Factory>> cases(const GradcheckOptions& opt) {
  std::vector<std::pair<std::string, Factory>> c;

  c.emplace_back("conv2d", [](Rng& rng, int k) {
    int n = 1, ch = 2, h = 5, w = 5, out = 3, ks = 3, stride = 1, pad = 0;
    if (k > 0) {
      n = pick(rng, 1, 2);
      ch = pick(rng, 1, 3);
      h = pick(rng, 3, 6);
      w = pick(rng, 3, 6);
      out = pick(rng, 1, 3);
      ks = pick(rng, 0, 1) ? 3 : 1;
      stride = pick(rng, 1, 2);
      pad = pick(rng, 0, 1);
      if (ks > std::min(h, w) + 2 * pad) ks = 1;
    }
    Instance inst;
    inst.inputs = {uniform({n, ch, h, w}, rng), uniform({out, ch, ks, ks}, rng)};
    inst.differentiable = {true, true};
    inst.build = [stride, pad](Tape<double>& t, const std::vector<Var>& v) {
      return ops::conv2d(t, v[0], v[1], stride, pad);
    };
    return inst;
  });

  c.emplace_back("bias_add", [](Rng& rng, int) {
    const int ch = pick(rng, 1, 4);
    Instance inst;
    inst.inputs = {uniform({pick(rng, 1, 2), ch, pick(rng, 1, 4), pick(rng, 1, 4)}, rng),
                   uniform({ch}, rng)};
    inst.differentiable = {true, true};
    inst.build = [](Tape<double>& t, const std::vector<Var>& v) {
      return ops::bias_add(t, v[0], v[1]);
    };
    return inst;
  });

  c.emplace_back("relu", [](Rng& rng, int) {
    Instance inst;
    inst.inputs = {away_from_zero({pick(rng, 1, 2), pick(rng, 1, 3), 4, 4}, rng)};
    inst.differentiable = {true};
    inst.build = [](Tape<double>& t, const std::vector<Var>& v) { return ops::relu(t, v[0]); };
    return inst;
  });

  c.emplace_back("max_pool2x2", [](Rng& rng, int) {
    Instance inst;
    inst.inputs = {well_separated({pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 2, 7),
                                   pick(rng, 2, 7)},
                                  rng)};
    inst.differentiable = {true};
    inst.build = [](Tape<double>& t, const std::vector<Var>& v) {
      return ops::max_pool2x2(t, v[0]);
    };
    return inst;
  });

  c.emplace_back("global_avg_pool", [](Rng& rng, int) {
    Instance inst;
    inst.inputs = {uniform({pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 5), pick(rng, 1, 5)},
                           rng)};
    inst.differentiable = {true};
    inst.build = [](Tape<double>& t, const std::vector<Var>& v) {
      return ops::global_avg_pool(t, v[0]);
    };
    return inst;
  });

  c.emplace_back("dense", [](Rng& rng, int) {
    const int n = pick(rng, 1, 4), in = pick(rng, 1, 8), out = pick(rng, 1, 5);
    Instance inst;
    inst.inputs = {uniform({n, in}, rng), uniform({out, in}, rng), uniform({out}, rng)};
    inst.differentiable = {true, true, true};
    inst.build = [](Tape<double>& t, const std::vector<Var>& v) {
      return ops::dense(t, v[0], v[1], v[2]);
    };
    return inst;
  });

  auto binary = [&c](const std::string& name, Var (*op)(Tape<double>&, Var, Var)) {
    c.emplace_back(name, [op](Rng& rng, int) {
      const Shape s = {pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 4)};
      Instance inst;
      inst.inputs = {uniform(s, rng), uniform(s, rng)};
      inst.differentiable = {true, true};
      inst.build = [op](Tape<double>& t, const std::vector<Var>& v) { return op(t, v[0], v[1]); };
      return inst;
    });
  };
  binary("add", &ops::add<double>);
  binary("mul", &ops::mul<double>);

  c.emplace_back("scale", [](Rng& rng, int) {
    const double f = std::uniform_real_distribution<double>(-2, 2)(rng);
    Instance inst;
    inst.inputs = {uniform({pick(rng, 1, 3), pick(rng, 1, 6)}, rng)};
    inst.differentiable = {true};
    inst.build = [f](Tape<double>& t, const std::vector<Var>& v) {
      return ops::scale(t, v[0], f);
    };
    return inst;
  });

  c.emplace_back("reshape", [](Rng& rng, int) {
    const int n = pick(rng, 1, 3), ch = pick(rng, 1, 3), hw = pick(rng, 1, 4);
    Instance inst;
    inst.inputs = {uniform({n, ch, hw, hw}, rng)};
    inst.differentiable = {true};
    inst.build = [n, ch, hw](Tape<double>& t, const std::vector<Var>& v) {
      return ops::reshape(t, v[0], Shape{n, ch * hw * hw});
    };
    return inst;
  });

  c.emplace_back("sum", [](Rng& rng, int) {
    Instance inst;
    inst.inputs = {uniform({pick(rng, 1, 4), pick(rng, 1, 6)}, rng)};
    inst.differentiable = {true};
    inst.build = [](Tape<double>& t, const std::vector<Var>& v) { return ops::sum(t, v[0]); };
    return inst;
  });

  c.emplace_back("select_class", [](Rng& rng, int) {
    const int cls = pick(rng, 0, 2);
    Instance inst;
    inst.inputs = {uniform({pick(rng, 1, 4), 3}, rng, -3, 3)};
    inst.differentiable = {true};
    inst.build = [cls](Tape<double>& t, const std::vector<Var>& v) {
      return ops::select_class(t, v[0], cls);
    };
    return inst;
  });

  c.emplace_back("weighted_cross_entropy", [](Rng& rng, int) {
    const int n = pick(rng, 1, 5);
    auto labels = std::make_shared<std::vector<int>>();
    for (int i = 0; i < n; ++i) labels->push_back(pick(rng, 0, 2));
    auto weights = std::make_shared<std::vector<double>>();
    double z = 0;
    for (int i = 0; i < 3; ++i) {
      weights->push_back(std::uniform_real_distribution<double>(0.1, 1)(rng));
      z += weights->back();
    }
    for (double& w : *weights) w /= z;
    Instance inst;
    inst.inputs = {uniform({n, 3}, rng, -4, 4)};
    inst.differentiable = {true};
    inst.build = [labels, weights](Tape<double>& t, const std::vector<Var>& v) {
      return ops::weighted_cross_entropy(t, v[0], *labels, *weights);
    };
    return inst;
  });

  c.emplace_back("conv_relu_dense_net", [](Rng& rng, int) {
    const int n = 2, h = 5, ch = 3;
    auto labels = std::make_shared<std::vector<int>>();
    for (int i = 0; i < n; ++i) labels->push_back(pick(rng, 0, 2));
    auto weights = std::make_shared<std::vector<double>>(3, 1.0 / 3);
    Instance inst;
    inst.inputs = {uniform({n, 1, h, h}, rng), uniform({ch, 1, 3, 3}, rng),
                   uniform({ch}, rng, -0.2, 0.2), uniform({3, ch * h * h}, rng, -0.3, 0.3),
                   uniform({3}, rng)};
    inst.differentiable = {false, true, true, true, true};
    inst.build = [labels, weights, n, h, ch](Tape<double>& t, const std::vector<Var>& v) {
      Var a = ops::relu(t, ops::bias_add(t, ops::conv2d(t, v[0], v[1], 1, 1), v[2]));
      Var flat = ops::reshape(t, a, Shape{n, ch * h * h});
      Var logits = ops::dense(t, flat, v[3], v[4]);
      return ops::weighted_cross_entropy(t, logits, *labels, *weights);
    };
    return inst;
  });

  const int sample = opt.sampled_coords;
  c.emplace_back("classifier_loss", [sample](Rng& rng, int k) {
    auto model = std::make_shared<ResidualNet<double>>(
        build_model<double>(32, 4, derive_seed(rng(), static_cast<std::uint64_t>(k))));
    const int n = 2;
    auto labels = std::make_shared<std::vector<int>>();
    for (int i = 0; i < n; ++i) labels->push_back(pick(rng, 0, 2));
    auto weights = std::make_shared<std::vector<double>>(std::vector<double>{0.5, 0.3, 0.2});
    Instance inst;
    inst.inputs.push_back(uniform({n, 1, 32, 32}, rng, 0, 1));
    inst.differentiable.push_back(true);
    for (const auto& p : model->parameters()) {
      // Small random biases so the bias gradients are exercised too.
      Tensor<double> v = p.value;
      if (p.name.ends_with(".bias")) v = uniform(v.shape(), rng, -0.05, 0.05);
      inst.inputs.push_back(std::move(v));
      inst.differentiable.push_back(true);
    }
    inst.sample = sample;
    inst.build_aliased = [model, labels, weights](Tape<double>& t, const std::vector<Var>& v,
                                                   std::vector<Var>& grad_from) {
      ResidualNet<double> m = *model;
      auto& params = m.parameters();
      for (std::size_t i = 0; i < params.size(); ++i) params[i].value = t.value(v[i + 1]);
      const auto fwd = m.forward(t, v[0], true);
      for (std::size_t i = 0; i < params.size(); ++i) grad_from[i + 1] = fwd.params[i];
      return ops::weighted_cross_entropy(t, fwd.logits, *labels, *weights);
    };
    return inst;
  });

  return c;
}

}  // namespace

double relative_error(std::span<const double> a, std::span<const double> b) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  diff = std::sqrt(diff);
  const double denom = std::max(std::sqrt(na), std::sqrt(nb));
  return denom < 1e-12 ? diff : diff / denom;
}

std::vector<GradcheckResult> run_gradcheck(
    const GradcheckOptions& options,
    const std::function<void(const GradcheckResult&)>& on_case) {
  std::vector<GradcheckResult> results;
  auto all = cases(options);
  for (std::size_t ci = 0; ci < all.size(); ++ci) {
    GradcheckResult r;
    r.name = all[ci].first;
    Rng rng(derive_seed(options.seed, ci));
    for (int k = 0; k < options.instances; ++k) {
      const Instance inst = all[ci].second(rng, k);
      const InstanceOutcome o = check(inst, options, rng);
      ++r.instances;
      r.skipped_coords += o.skipped;
      r.max_error = std::max(r.max_error, o.error);
      if (!(o.error < options.tolerance)) ++r.failures;
    }
    if (on_case) on_case(r);
    results.push_back(r);
  }
  return results;
}

}  // namespace bvsviz

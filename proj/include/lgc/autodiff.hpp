#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "lgc/rng.hpp"
#include "lgc/tensor.hpp"

// Tape-free reverse-mode autodiff over Tensor<T>. Nodes form a DAG through
// shared_ptr parent links; creation order doubles as a topological order for
// the backward sweep. Everything is single-threaded and deterministic:
// reductions accumulate in double with a fixed order.

namespace lgc::nn {

template <typename T>
struct Node;

template <typename T>
using Var = std::shared_ptr<Node<T>>;

namespace detail {
inline int64_t& node_counter() {
  static thread_local int64_t c = 0;
  return c;
}
inline uint64_t& backward_epoch() {
  static thread_local uint64_t e = 0;
  return e;
}

// Double-precision reductions with a fixed 8-lane stripe order: deterministic
// across runs, and the independent accumulators let the compiler vectorize.
template <typename T>
inline double sum8(const T* p, int64_t n) {
  double a0 = 0, a1 = 0, a2 = 0, a3 = 0, a4 = 0, a5 = 0, a6 = 0, a7 = 0;
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    a0 += static_cast<double>(p[i]);
    a1 += static_cast<double>(p[i + 1]);
    a2 += static_cast<double>(p[i + 2]);
    a3 += static_cast<double>(p[i + 3]);
    a4 += static_cast<double>(p[i + 4]);
    a5 += static_cast<double>(p[i + 5]);
    a6 += static_cast<double>(p[i + 6]);
    a7 += static_cast<double>(p[i + 7]);
  }
  double tail = 0;
  for (; i < n; i++) tail += static_cast<double>(p[i]);
  return ((a0 + a1) + (a2 + a3)) + ((a4 + a5) + (a6 + a7)) + tail;
}

template <typename T>
inline double dot8(const T* a, const T* b, int64_t n) {
  double a0 = 0, a1 = 0, a2 = 0, a3 = 0, a4 = 0, a5 = 0, a6 = 0, a7 = 0;
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    a0 += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    a1 += static_cast<double>(a[i + 1]) * static_cast<double>(b[i + 1]);
    a2 += static_cast<double>(a[i + 2]) * static_cast<double>(b[i + 2]);
    a3 += static_cast<double>(a[i + 3]) * static_cast<double>(b[i + 3]);
    a4 += static_cast<double>(a[i + 4]) * static_cast<double>(b[i + 4]);
    a5 += static_cast<double>(a[i + 5]) * static_cast<double>(b[i + 5]);
    a6 += static_cast<double>(a[i + 6]) * static_cast<double>(b[i + 6]);
    a7 += static_cast<double>(a[i + 7]) * static_cast<double>(b[i + 7]);
  }
  double tail = 0;
  for (; i < n; i++) tail += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return ((a0 + a1) + (a2 + a3)) + ((a4 + a5) + (a6 + a7)) + tail;
}

// Sum of squared deviations from a precomputed mean, same stripe order.
template <typename T>
inline double sqdev8(const T* p, int64_t n, double mu) {
  double a0 = 0, a1 = 0, a2 = 0, a3 = 0, a4 = 0, a5 = 0, a6 = 0, a7 = 0;
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    double d0 = static_cast<double>(p[i]) - mu;
    double d1 = static_cast<double>(p[i + 1]) - mu;
    double d2 = static_cast<double>(p[i + 2]) - mu;
    double d3 = static_cast<double>(p[i + 3]) - mu;
    double d4 = static_cast<double>(p[i + 4]) - mu;
    double d5 = static_cast<double>(p[i + 5]) - mu;
    double d6 = static_cast<double>(p[i + 6]) - mu;
    double d7 = static_cast<double>(p[i + 7]) - mu;
    a0 += d0 * d0;
    a1 += d1 * d1;
    a2 += d2 * d2;
    a3 += d3 * d3;
    a4 += d4 * d4;
    a5 += d5 * d5;
    a6 += d6 * d6;
    a7 += d7 * d7;
  }
  double tail = 0;
  for (; i < n; i++) {
    double d = static_cast<double>(p[i]) - mu;
    tail += d * d;
  }
  return ((a0 + a1) + (a2 + a3)) + ((a4 + a5) + (a6 + a7)) + tail;
}
}  // namespace detail

// Optional activation epilogue fused into an op's output write. The fused
// forward computes the exact same expressions as a separate activation node;
// the backward folds the derivative mask into passes the op already makes.
enum class Act { none, relu, leaky };

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  uint64_t grad_epoch = 0;  // grad is meaningful only when equal to the current epoch
  int64_t id = 0;
  bool requires_grad = false;
  std::vector<Var<T>> parents;
  std::function<void(Node<T>&)> backward_fn;

  bool has_fresh_grad() const { return grad_epoch == detail::backward_epoch(); }
};

// Returns the zeroed-or-fresh gradient buffer for v in the current backward
// pass. Ops accumulate into this with +=.
template <typename T>
Tensor<T>& grad_buf(const Var<T>& v) {
  uint64_t epoch = detail::backward_epoch();
  if (v->grad_epoch != epoch) {
    if (v->grad.shape != v->value.shape)
      v->grad = Tensor<T>(v->value.shape);
    else
      v->grad.fill(T{});
    v->grad_epoch = epoch;
  }
  return v->grad;
}

template <typename T>
Var<T> leaf(Tensor<T> value, bool requires_grad = false) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->id = ++detail::node_counter();
  return n;
}

// Builds an op node. If no parent requires grad the node is a plain leaf and
// the graph below it is released immediately (cheap inference paths).
template <typename T, typename Bw>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents, Bw&& bw) {
  bool req = false;
  for (const auto& p : parents) req = req || p->requires_grad;
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = req;
  n->id = ++detail::node_counter();
  if (req) {
    n->parents = std::move(parents);
    n->backward_fn = std::forward<Bw>(bw);
  }
  return n;
}

// Reverse sweep from a scalar root. Nodes listed in `barriers` are treated as
// constants for this sweep: gradient neither materializes into them nor flows
// past them. Subgraphs that can only reach barriers or frozen leaves are
// skipped entirely, so sharing one forward pass between the generator and
// discriminator updates costs no wasted gradient work.
template <typename T>
void backward(const Var<T>& root, const std::vector<Var<T>>& barriers = {}) {
  check(root->value.numel() == 1, "backward root must be a scalar");
  if (!root->requires_grad) return;
  ++detail::backward_epoch();

  std::unordered_set<const Node<T>*> barrier_set;
  for (const auto& b : barriers) barrier_set.insert(b.get());

  std::vector<Node<T>*> order;
  std::unordered_set<const Node<T>*> seen;
  std::vector<Node<T>*> stack{root.get()};
  seen.insert(root.get());
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && !seen.count(p.get()) && !barrier_set.count(p.get())) {
        seen.insert(p.get());
        stack.push_back(p.get());
      }
    }
  }
  // Parents carry smaller ids than the ops consuming them, so an ascending
  // sweep sees every node after all of its parents.
  std::sort(order.begin(), order.end(),
            [](const Node<T>* a, const Node<T>* b) { return a->id < b->id; });

  // live(n): a requires-grad leaf is reachable from n without crossing a
  // barrier. Dead interior nodes get their requires_grad masked off for the
  // sweep so op closures skip input-gradient work nobody can consume.
  std::unordered_map<const Node<T>*, bool> live;
  live.reserve(order.size());
  for (Node<T>* n : order) {
    if (!n->backward_fn) {
      live.emplace(n, n->requires_grad);
      continue;
    }
    bool l = false;
    for (const auto& p : n->parents) {
      if (barrier_set.count(p.get())) continue;
      if (!p->backward_fn) {
        l = l || p->requires_grad;
      } else {
        auto it = live.find(p.get());
        l = l || (it != live.end() && it->second);
      }
      if (l) break;
    }
    live.emplace(n, l);
  }
  std::vector<Node<T>*> masked;
  for (Node<T>* n : order) {
    if (n->backward_fn && !live[n] && n->requires_grad) {
      n->requires_grad = false;
      masked.push_back(n);
    }
  }
  for (const auto& b : barriers) {
    if (b->requires_grad) {
      b->requires_grad = false;
      masked.push_back(b.get());
    }
  }

  {
    Var<T> r = root;
    grad_buf(r).fill(T(1));
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (!n->backward_fn || !live[n]) continue;
    if (!n->has_fresh_grad()) continue;  // no contribution reached this node
    n->backward_fn(*n);
  }
  for (Node<T>* n : masked) n->requires_grad = true;
}

template <typename T>
T value_of(const Var<T>& v) {
  check(v->value.numel() == 1, "value_of expects a scalar");
  return v->value[0];
}

template <typename T>
Var<T> detach(const Var<T>& v) {
  return leaf(v->value, false);
}

// ---------------------------------------------------------------------------
// Elementwise ops

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  check(a->value.same_shape(b->value), "add: shape mismatch");
  Tensor<T> out = Tensor<T>::uninit(a->value.shape);
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; i++) out[i] = a->value[i] + b->value[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    const Tensor<T>& g = self.grad;
    for (int k = 0; k < 2; k++) {
      const auto& p = self.parents[k];
      if (!p->requires_grad) continue;
      Tensor<T>& dst = grad_buf(p);
      for (int64_t i = 0; i < g.numel(); i++) dst[i] += g[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  check(a->value.same_shape(b->value), "sub: shape mismatch");
  Tensor<T> out = Tensor<T>::uninit(a->value.shape);
  for (int64_t i = 0; i < out.numel(); i++) out[i] = a->value[i] - b->value[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    const Tensor<T>& g = self.grad;
    if (self.parents[0]->requires_grad) {
      Tensor<T>& da = grad_buf(self.parents[0]);
      for (int64_t i = 0; i < g.numel(); i++) da[i] += g[i];
    }
    if (self.parents[1]->requires_grad) {
      Tensor<T>& db = grad_buf(self.parents[1]);
      for (int64_t i = 0; i < g.numel(); i++) db[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  check(a->value.same_shape(b->value), "mul: shape mismatch");
  Tensor<T> out = Tensor<T>::uninit(a->value.shape);
  for (int64_t i = 0; i < out.numel(); i++) out[i] = a->value[i] * b->value[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    const Tensor<T>& g = self.grad;
    const Tensor<T>& av = self.parents[0]->value;
    const Tensor<T>& bv = self.parents[1]->value;
    if (self.parents[0]->requires_grad) {
      Tensor<T>& da = grad_buf(self.parents[0]);
      for (int64_t i = 0; i < g.numel(); i++) da[i] += g[i] * bv[i];
    }
    if (self.parents[1]->requires_grad) {
      Tensor<T>& db = grad_buf(self.parents[1]);
      for (int64_t i = 0; i < g.numel(); i++) db[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  check(a->value.same_shape(b->value), "div: shape mismatch");
  Tensor<T> out = Tensor<T>::uninit(a->value.shape);
  for (int64_t i = 0; i < out.numel(); i++) out[i] = a->value[i] / b->value[i];
  Tensor<T> saved = out;
  return make_op<T>(std::move(out), {a, b}, [saved](Node<T>& self) {
    const Tensor<T>& g = self.grad;
    const Tensor<T>& bv = self.parents[1]->value;
    if (self.parents[0]->requires_grad) {
      Tensor<T>& da = grad_buf(self.parents[0]);
      for (int64_t i = 0; i < g.numel(); i++) da[i] += g[i] / bv[i];
    }
    if (self.parents[1]->requires_grad) {
      Tensor<T>& db = grad_buf(self.parents[1]);
      for (int64_t i = 0; i < g.numel(); i++) db[i] -= g[i] * saved[i] / bv[i];
    }
  });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
  Tensor<T> out = Tensor<T>::uninit(a->value.shape);
  for (int64_t i = 0; i < out.numel(); i++) out[i] = a->value[i] + s;
  return make_op<T>(std::move(out), {a}, [](Node<T>& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor<T>& da = grad_buf(self.parents[0]);
    for (int64_t i = 0; i < self.grad.numel(); i++) da[i] += self.grad[i];
  });
}

template <typename T>
Var<T> mul_scalar(const Var<T>& a, T s) {
  Tensor<T> out = Tensor<T>::uninit(a->value.shape);
  for (int64_t i = 0; i < out.numel(); i++) out[i] = a->value[i] * s;
  return make_op<T>(std::move(out), {a}, [s](Node<T>& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor<T>& da = grad_buf(self.parents[0]);
    for (int64_t i = 0; i < self.grad.numel(); i++) da[i] += self.grad[i] * s;
  });
}

template <typename T>
Var<T> neg(const Var<T>& a) {
  return mul_scalar(a, T(-1));
}

template <typename T>
Var<T> abs_(const Var<T>& a) {
  Tensor<T> out = Tensor<T>::uninit(a->value.shape);
  for (int64_t i = 0; i < out.numel(); i++) out[i] = std::abs(a->value[i]);
  return make_op<T>(std::move(out), {a}, [](Node<T>& self) {
    if (!self.parents[0]->requires_grad) return;
    const Tensor<T>& av = self.parents[0]->value;
    Tensor<T>& da = grad_buf(self.parents[0]);
    for (int64_t i = 0; i < self.grad.numel(); i++) {
      T s = av[i] > T(0) ? T(1) : (av[i] < T(0) ? T(-1) : T(0));
      da[i] += self.grad[i] * s;
    }
  });
}

template <typename T>
Var<T> square(const Var<T>& a) {
  Tensor<T> out = Tensor<T>::uninit(a->value.shape);
  for (int64_t i = 0; i < out.numel(); i++) out[i] = a->value[i] * a->value[i];
  return make_op<T>(std::move(out), {a}, [](Node<T>& self) {
    if (!self.parents[0]->requires_grad) return;
    const Tensor<T>& av = self.parents[0]->value;
    Tensor<T>& da = grad_buf(self.parents[0]);
    for (int64_t i = 0; i < self.grad.numel(); i++) da[i] += T(2) * av[i] * self.grad[i];
  });
}

template <typename T>
Var<T> sqrt_(const Var<T>& a) {
  Tensor<T> out = Tensor<T>::uninit(a->value.shape);
  for (int64_t i = 0; i < out.numel(); i++) out[i] = std::sqrt(a->value[i]);
  Tensor<T> saved = out;
  return make_op<T>(std::move(out), {a}, [saved](Node<T>& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor<T>& da = grad_buf(self.parents[0]);
    for (int64_t i = 0; i < self.grad.numel(); i++)
      da[i] += self.grad[i] / (T(2) * saved[i]);
  });
}

template <typename T>
Var<T> log_(const Var<T>& a) {
  Tensor<T> out = Tensor<T>::uninit(a->value.shape);
  for (int64_t i = 0; i < out.numel(); i++) out[i] = std::log(a->value[i]);
  return make_op<T>(std::move(out), {a}, [](Node<T>& self) {
    if (!self.parents[0]->requires_grad) return;
    const Tensor<T>& av = self.parents[0]->value;
    Tensor<T>& da = grad_buf(self.parents[0]);
    for (int64_t i = 0; i < self.grad.numel(); i++) da[i] += self.grad[i] / av[i];
  });
}

template <typename T>
Var<T> exp_(const Var<T>& a) {
  Tensor<T> out = Tensor<T>::uninit(a->value.shape);
  for (int64_t i = 0; i < out.numel(); i++) out[i] = std::exp(a->value[i]);
  Tensor<T> saved = out;
  return make_op<T>(std::move(out), {a}, [saved](Node<T>& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor<T>& da = grad_buf(self.parents[0]);
    for (int64_t i = 0; i < self.grad.numel(); i++) da[i] += self.grad[i] * saved[i];
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  Tensor<T> out = Tensor<T>::uninit(a->value.shape);
  for (int64_t i = 0; i < out.numel(); i++) {
    T x = a->value[i];
    out[i] = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                       : std::exp(x) / (T(1) + std::exp(x));
  }
  Tensor<T> saved = out;
  return make_op<T>(std::move(out), {a}, [saved](Node<T>& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor<T>& da = grad_buf(self.parents[0]);
    for (int64_t i = 0; i < self.grad.numel(); i++)
      da[i] += self.grad[i] * saved[i] * (T(1) - saved[i]);
  });
}

template <typename T>
Var<T> tanh_(const Var<T>& a) {
  Tensor<T> out = Tensor<T>::uninit(a->value.shape);
  for (int64_t i = 0; i < out.numel(); i++) out[i] = std::tanh(a->value[i]);
  Tensor<T> saved = out;
  return make_op<T>(std::move(out), {a}, [saved](Node<T>& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor<T>& da = grad_buf(self.parents[0]);
    for (int64_t i = 0; i < self.grad.numel(); i++)
      da[i] += self.grad[i] * (T(1) - saved[i] * saved[i]);
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out = Tensor<T>::uninit(a->value.shape);
  // max form instead of a ternary: it lowers to a vector max instead of a
  // branch (plain float selects are not if-converted at this opt level).
  for (int64_t i = 0; i < out.numel(); i++) out[i] = std::max(a->value[i], T(0));
  return make_op<T>(std::move(out), {a}, [](Node<T>& self) {
    if (!self.parents[0]->requires_grad) return;
    const Tensor<T>& av = self.parents[0]->value;
    Tensor<T>& da = grad_buf(self.parents[0]);
    for (int64_t i = 0; i < self.grad.numel(); i++)
      if (av[i] > T(0)) da[i] += self.grad[i];
  });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, T slope) {
  // For slope in [0,1], max(v, slope*v) selects v on the positive side and
  // slope*v otherwise — identical to the piecewise definition, but it lowers
  // to a vector max instead of a branch.
  check(slope >= T(0) && slope <= T(1), "leaky_relu: slope must be in [0,1]");
  Tensor<T> out = Tensor<T>::uninit(a->value.shape);
  for (int64_t i = 0; i < out.numel(); i++)
    out[i] = std::max(a->value[i], slope * a->value[i]);
  return make_op<T>(std::move(out), {a}, [slope](Node<T>& self) {
    if (!self.parents[0]->requires_grad) return;
    const Tensor<T>& av = self.parents[0]->value;
    Tensor<T>& da = grad_buf(self.parents[0]);
    for (int64_t i = 0; i < self.grad.numel(); i++)
      da[i] += self.grad[i] * (av[i] > T(0) ? T(1) : slope);
  });
}

template <typename T>
Var<T> softplus(const Var<T>& a) {
  Tensor<T> out = Tensor<T>::uninit(a->value.shape);
  for (int64_t i = 0; i < out.numel(); i++) {
    T x = a->value[i];
    out[i] = x > T(20) ? x : std::log1p(std::exp(x));
  }
  return make_op<T>(std::move(out), {a}, [](Node<T>& self) {
    if (!self.parents[0]->requires_grad) return;
    const Tensor<T>& av = self.parents[0]->value;
    Tensor<T>& da = grad_buf(self.parents[0]);
    for (int64_t i = 0; i < self.grad.numel(); i++) {
      T x = av[i];
      T s = x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
      da[i] += self.grad[i] * s;
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions (double accumulation, fixed order)

template <typename T>
Var<T> sum_all(const Var<T>& a) {
  double acc = 0.0;
  for (int64_t i = 0; i < a->value.numel(); i++) acc += static_cast<double>(a->value[i]);
  Tensor<T> out({1});
  out[0] = static_cast<T>(acc);
  return make_op<T>(std::move(out), {a}, [](Node<T>& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor<T>& da = grad_buf(self.parents[0]);
    T g = self.grad[0];
    for (int64_t i = 0; i < da.numel(); i++) da[i] += g;
  });
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
  const int64_t n = a->value.numel();
  check(n > 0, "mean_all: empty tensor");
  double acc = 0.0;
  for (int64_t i = 0; i < n; i++) acc += static_cast<double>(a->value[i]);
  Tensor<T> out({1});
  out[0] = static_cast<T>(acc / static_cast<double>(n));
  return make_op<T>(std::move(out), {a}, [n](Node<T>& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor<T>& da = grad_buf(self.parents[0]);
    T g = self.grad[0] / static_cast<T>(n);
    for (int64_t i = 0; i < da.numel(); i++) da[i] += g;
  });
}

// ---------------------------------------------------------------------------
// Shape ops

template <typename T>
Var<T> reshape(const Var<T>& a, std::vector<int> shape) {
  check(Tensor<T>::numel_of(shape) == a->value.numel(), "reshape: element count mismatch");
  Tensor<T> out(std::move(shape), a->value.data);
  return make_op<T>(std::move(out), {a}, [](Node<T>& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor<T>& da = grad_buf(self.parents[0]);
    for (int64_t i = 0; i < self.grad.numel(); i++) da[i] += self.grad[i];
  });
}

// Concatenate along dim 1 (channels for NCHW, columns for NC).
template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const auto& sa = a->value.shape;
  const auto& sb = b->value.shape;
  check(sa.size() == sb.size() && (sa.size() == 2 || sa.size() == 4),
        "concat_channels: rank mismatch");
  check(sa[0] == sb[0], "concat_channels: batch mismatch");
  if (sa.size() == 4)
    check(sa[2] == sb[2] && sa[3] == sb[3], "concat_channels: spatial mismatch");
  std::vector<int> so = sa;
  so[1] = sa[1] + sb[1];
  Tensor<T> out = Tensor<T>::uninit(so);
  const int64_t rows = sa[0];
  const int64_t inner = sa.size() == 4 ? static_cast<int64_t>(sa[2]) * sa[3] : 1;
  const int64_t ca = sa[1] * inner, cb = sb[1] * inner;
  for (int64_t r = 0; r < rows; r++) {
    std::copy_n(a->value.ptr() + r * ca, ca, out.ptr() + r * (ca + cb));
    std::copy_n(b->value.ptr() + r * cb, cb, out.ptr() + r * (ca + cb) + ca);
  }
  return make_op<T>(std::move(out), {a, b}, [rows, ca, cb](Node<T>& self) {
    const Tensor<T>& g = self.grad;
    if (self.parents[0]->requires_grad) {
      Tensor<T>& da = grad_buf(self.parents[0]);
      for (int64_t r = 0; r < rows; r++)
        for (int64_t i = 0; i < ca; i++) da[r * ca + i] += g[r * (ca + cb) + i];
    }
    if (self.parents[1]->requires_grad) {
      Tensor<T>& db = grad_buf(self.parents[1]);
      for (int64_t r = 0; r < rows; r++)
        for (int64_t i = 0; i < cb; i++) db[r * cb + i] += g[r * (ca + cb) + ca + i];
    }
  });
}

// Slice [c0, c1) along dim 1.
template <typename T>
Var<T> slice_channels(const Var<T>& a, int c0, int c1) {
  const auto& s = a->value.shape;
  check((s.size() == 2 || s.size() == 4) && c0 >= 0 && c1 <= s[1] && c0 < c1,
        "slice_channels: bad range");
  std::vector<int> so = s;
  so[1] = c1 - c0;
  Tensor<T> out = Tensor<T>::uninit(so);
  const int64_t rows = s[0];
  const int64_t inner = s.size() == 4 ? static_cast<int64_t>(s[2]) * s[3] : 1;
  const int64_t cs = s[1] * inner, co = (c1 - c0) * inner, off = c0 * inner;
  for (int64_t r = 0; r < rows; r++)
    std::copy_n(a->value.ptr() + r * cs + off, co, out.ptr() + r * co);
  return make_op<T>(std::move(out), {a, }, [rows, cs, co, off](Node<T>& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor<T>& da = grad_buf(self.parents[0]);
    const Tensor<T>& g = self.grad;
    for (int64_t r = 0; r < rows; r++)
      for (int64_t i = 0; i < co; i++) da[r * cs + off + i] += g[r * co + i];
  });
}

// ---------------------------------------------------------------------------
// Linear layer: x (N,K) * w(M,K)^T + b -> (N,M)

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Map = Eigen::Map<Mat>;
  using CMap = Eigen::Map<const Mat>;
  check(x->value.ndim() == 2 && w->value.ndim() == 2, "linear: expects 2-d inputs");
  const int N = x->value.dim(0), K = x->value.dim(1), M = w->value.dim(0);
  check(w->value.dim(1) == K, "linear: weight shape mismatch");
  Tensor<T> out = Tensor<T>::uninit({N, M});
  CMap xm(x->value.ptr(), N, K);
  CMap wm(w->value.ptr(), M, K);
  Map om(out.ptr(), N, M);
  om.noalias() = xm * wm.transpose();
  if (b) {
    check(b->value.numel() == M, "linear: bias shape mismatch");
    for (int n = 0; n < N; n++)
      for (int m = 0; m < M; m++) out[static_cast<int64_t>(n) * M + m] += b->value[m];
  }
  std::vector<Var<T>> parents = b ? std::vector<Var<T>>{x, w, b} : std::vector<Var<T>>{x, w};
  return make_op<T>(std::move(out), std::move(parents), [N, K, M](Node<T>& self) {
    const Tensor<T>& g = self.grad;
    CMap gm(g.ptr(), N, M);
    const auto& x = self.parents[0];
    const auto& w = self.parents[1];
    if (x->requires_grad) {
      Map dx(grad_buf(x).ptr(), N, K);
      CMap wm(w->value.ptr(), M, K);
      dx.noalias() += gm * wm;
    }
    if (w->requires_grad) {
      Map dw(grad_buf(w).ptr(), M, K);
      CMap xm(x->value.ptr(), N, K);
      dw.noalias() += gm.transpose() * xm;
    }
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      Tensor<T>& db = grad_buf(self.parents[2]);
      for (int n = 0; n < N; n++)
        for (int m = 0; m < M; m++) db[m] += g[static_cast<int64_t>(n) * M + m];
    }
  });
}

// ---------------------------------------------------------------------------
// Normalization

// Per-(sample, channel) statistics over spatial positions; population
// variance. gamma/beta are (N,C) vars (AdaIN) or empty (plain instance norm).
// `act` fuses an optional relu / leaky-relu epilogue into the output write.
template <typename T>
Var<T> adain(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps,
             Act act = Act::none, T slope = T(0)) {
  check(x->value.ndim() == 4, "adain: expects NCHW");
  const int N = x->value.dim(0), C = x->value.dim(1);
  const int64_t HW = static_cast<int64_t>(x->value.dim(2)) * x->value.dim(3);
  check(HW > 0, "adain: empty spatial extent");
  const bool affine = static_cast<bool>(gamma);
  if (affine) {
    check(gamma->value.ndim() == 2 && gamma->value.dim(0) == N && gamma->value.dim(1) == C,
          "adain: gamma must be (N,C)");
    check(beta->value.same_shape(gamma->value), "adain: beta must match gamma");
  }
  Tensor<T> out = Tensor<T>::uninit(x->value.shape);
  Tensor<T> xhat = Tensor<T>::uninit(x->value.shape);
  Tensor<T> inv_s({N, C});
  for (int n = 0; n < N; n++) {
    for (int c = 0; c < C; c++) {
      const T* src = x->value.ptr() + (static_cast<int64_t>(n) * C + c) * HW;
      const double mu = detail::sum8(src, HW) / static_cast<double>(HW);
      const double var = detail::sqdev8(src, HW, mu) / static_cast<double>(HW);
      T is = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      inv_s.at(n, c) = is;
      T* xh = xhat.ptr() + (static_cast<int64_t>(n) * C + c) * HW;
      T* dst = out.ptr() + (static_cast<int64_t>(n) * C + c) * HW;
      const T gm = affine ? gamma->value.at(n, c) : T(1);
      const T bt = affine ? beta->value.at(n, c) : T(0);
      // Epilogues use the same max form as the standalone activation ops, so
      // the fused output is bit-identical to the two-op composition.
      switch (act) {
        case Act::none:
          for (int64_t i = 0; i < HW; i++) {
            const T xv = static_cast<T>((static_cast<double>(src[i]) - mu) * is);
            xh[i] = xv;
            dst[i] = gm * xv + bt;
          }
          break;
        case Act::relu:
          for (int64_t i = 0; i < HW; i++) {
            const T xv = static_cast<T>((static_cast<double>(src[i]) - mu) * is);
            xh[i] = xv;
            dst[i] = std::max(gm * xv + bt, T(0));
          }
          break;
        case Act::leaky:
          for (int64_t i = 0; i < HW; i++) {
            const T xv = static_cast<T>((static_cast<double>(src[i]) - mu) * is);
            xh[i] = xv;
            const T v = gm * xv + bt;
            dst[i] = std::max(v, slope * v);
          }
          break;
      }
    }
  }
  std::vector<Var<T>> parents =
      affine ? std::vector<Var<T>>{x, gamma, beta} : std::vector<Var<T>>{x};
  return make_op<T>(std::move(out), std::move(parents),
                    [N, C, HW, affine, act, slope, xhat = std::move(xhat),
                     inv_s = std::move(inv_s)](Node<T>& self) {
    const Tensor<T>& g = self.grad;
    const auto& x = self.parents[0];
    const Var<T> gamma = affine ? self.parents[1] : Var<T>{};
    const Var<T> beta = affine ? self.parents[2] : Var<T>{};
    Tensor<T>* dgamma = (affine && gamma->requires_grad) ? &grad_buf(gamma) : nullptr;
    Tensor<T>* dbeta = (affine && beta->requires_grad) ? &grad_buf(beta) : nullptr;
    Tensor<T>* dx = x->requires_grad ? &grad_buf(x) : nullptr;
    // Epilogue derivative, evaluated on the op output: for slope >= 0 the
    // output sign matches the pre-activation sign. Masking the incoming
    // gradient into a per-channel scratch row keeps the reductions on their
    // fast unconditional path and matches the two-op composition exactly.
    const bool masked = act != Act::none;
    const T ms = act == Act::relu ? T(0) : slope;
    std::unique_ptr<T[]> gm_buf(masked ? new T[static_cast<size_t>(HW)] : nullptr);
    for (int n = 0; n < N; n++) {
      for (int c = 0; c < C; c++) {
        const int64_t base = (static_cast<int64_t>(n) * C + c) * HW;
        const T* gp = g.ptr() + base;
        const T* xh = xhat.ptr() + base;
        if (masked) {
          const T* vp = self.value.ptr() + base;
          for (int64_t i = 0; i < HW; i++)
            gm_buf[i] = vp[i] > T(0) ? gp[i] : gp[i] * ms;
          gp = gm_buf.get();
        }
        // The two reductions feed both the affine gradients and the
        // normalization correction terms, so compute them once.
        const bool need_sums = dgamma || dbeta || dx;
        const double s_gx = need_sums ? detail::dot8(gp, xh, HW) : 0.0;
        const double s_g = need_sums ? detail::sum8(gp, HW) : 0.0;
        if (dgamma) dgamma->at(n, c) += static_cast<T>(s_gx);
        if (dbeta) dbeta->at(n, c) += static_cast<T>(s_g);
        if (dx) {
          const double gm = affine ? static_cast<double>(gamma->value.at(n, c)) : 1.0;
          const double mg = gm * s_g / static_cast<double>(HW);
          const double mgx = gm * s_gx / static_cast<double>(HW);
          const double is = static_cast<double>(inv_s.at(n, c));
          T* dst = dx->ptr() + base;
          for (int64_t i = 0; i < HW; i++) {
            double gh = static_cast<double>(gp[i]) * gm;
            dst[i] += static_cast<T>((gh - mg - static_cast<double>(xh[i]) * mgx) * is);
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> instance_norm(const Var<T>& x, T eps, Act act = Act::none, T slope = T(0)) {
  return adain(x, Var<T>{}, Var<T>{}, eps, act, slope);
}

// ---------------------------------------------------------------------------
// Fused losses

// Mean binary cross entropy on logits against fixed {0,1} targets.
template <typename T>
Var<T> bce_with_logits(const Var<T>& logits, const Tensor<T>& targets) {
  check(logits->value.same_shape(targets), "bce_with_logits: shape mismatch");
  const int64_t n = logits->value.numel();
  check(n > 0, "bce_with_logits: empty input");
  double acc = 0.0;
  for (int64_t i = 0; i < n; i++) {
    double l = logits->value[i], y = targets[i];
    acc += std::max(l, 0.0) - l * y + std::log1p(std::exp(-std::abs(l)));
  }
  Tensor<T> out({1});
  out[0] = static_cast<T>(acc / static_cast<double>(n));
  return make_op<T>(std::move(out), {logits}, [targets, n](Node<T>& self) {
    if (!self.parents[0]->requires_grad) return;
    const Tensor<T>& lv = self.parents[0]->value;
    Tensor<T>& dl = grad_buf(self.parents[0]);
    T g = self.grad[0] / static_cast<T>(n);
    for (int64_t i = 0; i < n; i++) {
      double l = lv[i];
      double s = l >= 0 ? 1.0 / (1.0 + std::exp(-l)) : std::exp(l) / (1.0 + std::exp(l));
      dl[i] += g * static_cast<T>(s - static_cast<double>(targets[i]));
    }
  });
}

// Mean pixelwise cross entropy: logits (N,S,H,W) against integer labels
// (N,H,W) in [0,S).
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, const Tensor<int32_t>& labels) {
  check(logits->value.ndim() == 4, "softmax_cross_entropy: logits must be NSHW");
  const int N = logits->value.dim(0), S = logits->value.dim(1);
  const int H = logits->value.dim(2), W = logits->value.dim(3);
  check(labels.shape == std::vector<int>({N, H, W}),
        "softmax_cross_entropy: label shape mismatch");
  const int64_t HW = static_cast<int64_t>(H) * W;
  const int64_t count = static_cast<int64_t>(N) * HW;
  Tensor<T> probs(logits->value.shape);
  double acc = 0.0;
  for (int n = 0; n < N; n++) {
    for (int64_t p = 0; p < HW; p++) {
      const int64_t base = static_cast<int64_t>(n) * S * HW + p;
      int32_t y = labels[static_cast<int64_t>(n) * HW + p];
      check(y >= 0 && y < S, "softmax_cross_entropy: label out of range");
      double mx = -1e300;
      for (int s = 0; s < S; s++)
        mx = std::max(mx, static_cast<double>(logits->value[base + s * HW]));
      double z = 0.0;
      for (int s = 0; s < S; s++)
        z += std::exp(static_cast<double>(logits->value[base + s * HW]) - mx);
      double lse = std::log(z) + mx;
      acc += lse - static_cast<double>(logits->value[base + y * HW]);
      for (int s = 0; s < S; s++)
        probs[base + s * HW] = static_cast<T>(
            std::exp(static_cast<double>(logits->value[base + s * HW]) - lse));
    }
  }
  Tensor<T> out({1});
  out[0] = static_cast<T>(acc / static_cast<double>(count));
  return make_op<T>(std::move(out), {logits},
                    [labels, probs = std::move(probs), N, S, HW, count](Node<T>& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor<T>& dl = grad_buf(self.parents[0]);
    T g = self.grad[0] / static_cast<T>(count);
    for (int n = 0; n < N; n++) {
      for (int64_t p = 0; p < HW; p++) {
        const int64_t base = static_cast<int64_t>(n) * S * HW + p;
        int32_t y = labels[static_cast<int64_t>(n) * HW + p];
        for (int s = 0; s < S; s++) {
          T q = probs[base + s * HW];
          dl[base + s * HW] += g * (q - (s == y ? T(1) : T(0)));
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Quantization

template <typename T>
T round_half_away(T x) {
  return static_cast<T>(std::round(static_cast<double>(x)));
}

enum class QuantizeMode { train, eval };

// train: additive uniform noise in [-1/2, 1/2), straight-through gradient.
// eval: round-half-away-from-zero, no gradient.
template <typename T>
Var<T> quantize(const Var<T>& z, QuantizeMode mode, Rng* rng = nullptr) {
  if (mode == QuantizeMode::train) {
    check(rng != nullptr, "quantize: train mode needs an rng");
    Tensor<T> noise = Tensor<T>::uninit(z->value.shape);
    for (int64_t i = 0; i < noise.numel(); i++)
      noise[i] = static_cast<T>(rng->uniform() - 0.5);
    return add(z, leaf(std::move(noise)));
  }
  Tensor<T> out = Tensor<T>::uninit(z->value.shape);
  for (int64_t i = 0; i < out.numel(); i++) out[i] = round_half_away(z->value[i]);
  return leaf(std::move(out));
}

}  // namespace lgc::nn

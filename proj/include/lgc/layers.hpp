#pragma once

#include <string>
#include <vector>

#include "lgc/autodiff.hpp"
#include "lgc/conv.hpp"

namespace lgc::nn {

// Named parameter registry. Names are hierarchical ("disc1.conv2.w"); the
// first path segment is the parameter group used for optimizer routing,
// checkpointing and group hashes.
template <typename T>
class ParamStore {
 public:
  Var<T> add(const std::string& name, Tensor<T> init) {
    for (auto& [n, v] : items_) check(n != name, "duplicate parameter name: " + name);
    Var<T> v = leaf(std::move(init), true);
    items_.emplace_back(name, v);
    return v;
  }

  const std::vector<std::pair<std::string, Var<T>>>& items() const { return items_; }

  Var<T> find(const std::string& name) const {
    for (const auto& [n, v] : items_)
      if (n == name) return v;
    throw ContractError("unknown parameter: " + name);
  }

  static std::string group_of(const std::string& name) {
    auto pos = name.find('.');
    return pos == std::string::npos ? name : name.substr(0, pos);
  }

  std::vector<std::string> groups() const {
    std::vector<std::string> out;
    for (const auto& [n, v] : items_) {
      std::string g = group_of(n);
      if (std::find(out.begin(), out.end(), g) == out.end()) out.push_back(g);
    }
    return out;
  }

  std::vector<Var<T>> group_params(const std::vector<std::string>& groups) const {
    std::vector<Var<T>> out;
    for (const auto& [n, v] : items_)
      if (std::find(groups.begin(), groups.end(), group_of(n)) != groups.end())
        out.push_back(v);
    return out;
  }

  std::vector<Var<T>> all_params() const {
    std::vector<Var<T>> out;
    for (const auto& [n, v] : items_) out.push_back(v);
    return out;
  }

  // Hash of the byte content of all parameters in the given group (or all).
  uint64_t group_hash(const std::string& group = "") const {
    Fnv1a64 h;
    for (const auto& [n, v] : items_) {
      if (!group.empty() && group_of(n) != group) continue;
      h.update(n.data(), n.size());
      h.update(v->value.ptr(), sizeof(T) * static_cast<size_t>(v->value.numel()));
    }
    return h.digest();
  }

 private:
  std::vector<std::pair<std::string, Var<T>>> items_;
};

// Kaiming-uniform initialization; `slope` is the negative slope of the
// activation that follows (0 for relu/linear).
template <typename T>
Tensor<T> kaiming_uniform(std::vector<int> shape, int64_t fan_in, double slope, Rng& rng) {
  double gain = std::sqrt(2.0 / (1.0 + slope * slope));
  double bound = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
  Tensor<T> t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); i++)
    t[i] = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
struct Conv2dLayer {
  Var<T> w, b;
  int stride = 1, pad = 0;

  Conv2dLayer() = default;
  Conv2dLayer(ParamStore<T>& ps, const std::string& name, int cin, int cout, int k,
              int stride, int pad, Rng& rng, double slope = 0.0)
      : stride(stride), pad(pad) {
    int64_t fan_in = static_cast<int64_t>(cin) * k * k;
    w = ps.add(name + ".w", kaiming_uniform<T>({cout, cin, k, k}, fan_in, slope, rng));
    b = ps.add(name + ".b", Tensor<T>({cout}));
  }

  Var<T> operator()(const Var<T>& x, Act act = Act::none, T act_slope = T(0)) const {
    return conv2d(x, w, b, stride, pad, act, act_slope);
  }
};

template <typename T>
struct LinearLayer {
  Var<T> w, b;

  LinearLayer() = default;
  LinearLayer(ParamStore<T>& ps, const std::string& name, int in, int out, Rng& rng,
              double slope = 0.0, bool zero_init = false) {
    Tensor<T> wt = zero_init ? Tensor<T>({out, in})
                             : kaiming_uniform<T>({out, in}, in, slope, rng);
    w = ps.add(name + ".w", std::move(wt));
    b = ps.add(name + ".b", Tensor<T>({out}));
  }

  Var<T> operator()(const Var<T>& x) const { return linear(x, w, b); }
};

}  // namespace lgc::nn

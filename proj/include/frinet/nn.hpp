#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "frinet/autodiff.hpp"
#include "frinet/rng.hpp"
#include "frinet/tensor.hpp"

namespace frinet::core::nn {

template <typename T>
struct ParamEntry {
  Tensor<T> value;
  Tensor<T> velocity;  // SGD momentum buffer, lazily allocated
  bool learnable = true;
};

/// Named parameter/buffer registry with deterministic iteration order.
template <typename T>
class ParamStore {
 public:
  Tensor<T>& create(const std::string& name, std::vector<int> shape,
                    bool learnable = true) {
    if (entries_.count(name)) throw std::invalid_argument("ParamStore: duplicate " + name);
    names_.push_back(name);
    auto& e = entries_[name];
    e.value = Tensor<T>::zeros(std::move(shape));
    e.learnable = learnable;
    return e.value;
  }

  bool has(const std::string& name) const { return entries_.count(name) != 0; }

  ParamEntry<T>& entry(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::invalid_argument("ParamStore: unknown " + name);
    return it->second;
  }
  const ParamEntry<T>& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::invalid_argument("ParamStore: unknown " + name);
    return it->second;
  }

  Tensor<T>& value(const std::string& name) { return entry(name).value; }
  const Tensor<T>& value(const std::string& name) const { return entry(name).value; }

  const std::vector<std::string>& names() const { return names_; }

  long learnable_count() const {
    long n = 0;
    for (const auto& name : names_) {
      const auto& e = entry(name);
      if (e.learnable) n += e.value.numel();
    }
    return n;
  }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, ParamEntry<T>> entries_;
};

/// One forward build. Memoizes parameter leaves so a parameter used by
/// several branches appears as a single node and its gradients accumulate.
template <typename T>
class GraphBuild {
 public:
  GraphBuild(ParamStore<T>& store, bool train) : store_(&store), train_(train) {}

  bool train() const { return train_; }
  ParamStore<T>& store() { return *store_; }

  ad::Var<T> param(const std::string& name) {
    auto it = leaves_.find(name);
    if (it != leaves_.end()) return it->second;
    auto& e = store_->entry(name);
    ad::Var<T> v = (train_ && e.learnable) ? ad::leaf(e.value) : ad::constant(e.value);
    leaves_.emplace(name, v);
    return v;
  }

  /// After backward(): add scale * grad of every touched learnable leaf into
  /// the sink, keyed by parameter name.
  void accumulate_grads(std::map<std::string, Tensor<T>>& sink, T scale) const {
    for (const auto& [name, var] : leaves_) {
      if (!var->requires_grad || !var->has_grad()) continue;
      auto it = sink.find(name);
      if (it == sink.end())
        it = sink.emplace(name, Tensor<T>::zeros(var->value.shape())).first;
      auto& acc = it->second;
      for (long i = 0; i < acc.numel(); ++i) acc[i] += scale * var->grad[i];
    }
  }

 private:
  ParamStore<T>* store_;
  bool train_;
  std::unordered_map<std::string, ad::Var<T>> leaves_;
};

// ---------------------------------------------------------------------------
// Layers. Each layer owns parameter names inside a store; construction
// registers tensors and seeds them deterministically from the parameter name.

template <typename T>
struct Conv2d {
  std::string w_name, b_name;
  int stride = 1, pad = 0, dilation = 1;

  static Conv2d create(ParamStore<T>& store, const std::string& prefix, int in_ch,
                       int out_ch, int k, int stride, int pad, int dilation,
                       uint64_t seed) {
    Conv2d layer;
    layer.w_name = prefix + ".weight";
    layer.b_name = prefix + ".bias";
    layer.stride = stride;
    layer.pad = pad;
    layer.dilation = dilation;
    auto& w = store.create(layer.w_name, {out_ch, in_ch, k, k});
    store.create(layer.b_name, {out_ch});
    Rng rng(derive_seed(seed, layer.w_name));
    const double stddev = std::sqrt(2.0 / (static_cast<double>(in_ch) * k * k));
    for (long i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(rng.normal(0.0, stddev));
    return layer;
  }

  ad::Var<T> operator()(GraphBuild<T>& g, const ad::Var<T>& x) const {
    return ad::conv2d(x, g.param(w_name), g.param(b_name), stride, pad, dilation);
  }
};

/// Stateless per-channel spatial standardization with learnable affine.
template <typename T>
struct InstanceNorm {
  std::string gamma_name, beta_name;
  T eps = static_cast<T>(1e-5);

  static InstanceNorm create(ParamStore<T>& store, const std::string& prefix, int channels) {
    InstanceNorm layer;
    layer.gamma_name = prefix + ".gamma";
    layer.beta_name = prefix + ".beta";
    store.create(layer.gamma_name, {channels}).fill(T{1});
    store.create(layer.beta_name, {channels});
    return layer;
  }

  ad::Var<T> operator()(GraphBuild<T>& g, const ad::Var<T>& x) const {
    return ad::instance_norm(x, g.param(gamma_name), g.param(beta_name), eps);
  }
};

/// Observed normalization statistics for one layer during a training forward.
template <typename T>
struct NormStats {
  std::string mean_name, var_name;
  Tensor<T> mean, var;
};

/// Per-channel normalization with running statistics. During training the
/// current activation statistics are used and *reported* to the caller, who
/// folds them into the running buffers in a deterministic order (see
/// fold_norm_stats); in inference mode the stored statistics apply, a pure
/// affine map, so frozen-extractor outputs are a function of weights and
/// input only.
template <typename T>
struct ChannelNorm {
  std::string gamma_name, beta_name, mean_name, var_name;
  T eps = static_cast<T>(1e-5);

  static ChannelNorm create(ParamStore<T>& store, const std::string& prefix, int channels) {
    ChannelNorm layer;
    layer.gamma_name = prefix + ".gamma";
    layer.beta_name = prefix + ".beta";
    layer.mean_name = prefix + ".running_mean";
    layer.var_name = prefix + ".running_var";
    store.create(layer.gamma_name, {channels}).fill(T{1});
    store.create(layer.beta_name, {channels});
    store.create(layer.mean_name, {channels}, /*learnable=*/false);
    store.create(layer.var_name, {channels}, /*learnable=*/false).fill(T{1});
    return layer;
  }

  ad::Var<T> operator()(GraphBuild<T>& g, const ad::Var<T>& x,
                        std::vector<NormStats<T>>* stat_sink) const {
    auto gamma = g.param(gamma_name);
    auto beta = g.param(beta_name);
    if (stat_sink) {
      const int c = x->value.size(0);
      NormStats<T> stats;
      stats.mean_name = mean_name;
      stats.var_name = var_name;
      stats.mean = Tensor<T>({c});
      stats.var = Tensor<T>({c});
      auto out = ad::instance_norm(x, gamma, beta, eps, &stats.mean, &stats.var);
      stat_sink->push_back(std::move(stats));
      return out;
    }
    return ad::affine_norm(x, g.store().value(mean_name), g.store().value(var_name),
                           gamma, beta, eps);
  }
};

/// Fold observed statistics into the running buffers:
/// running = (1 - momentum) * running + momentum * observed.
template <typename T>
void fold_norm_stats(ParamStore<T>& store, const std::vector<NormStats<T>>& stats,
                     T momentum = static_cast<T>(0.1)) {
  for (const auto& s : stats) {
    auto& rm = store.value(s.mean_name);
    auto& rv = store.value(s.var_name);
    for (long i = 0; i < rm.numel(); ++i) {
      rm[i] = (T{1} - momentum) * rm[i] + momentum * s.mean[i];
      rv[i] = (T{1} - momentum) * rv[i] + momentum * s.var[i];
    }
  }
}

// ---------------------------------------------------------------------------
// Optimizer

/// One SGD step with classical momentum: v = mu*v + g; p -= lr*v.
/// Parameters missing from `grads` received no gradient this step (they still
/// decay their velocity).
template <typename T>
void sgd_step(ParamStore<T>& store, const std::map<std::string, Tensor<T>>& grads,
              T lr, T momentum) {
  for (const auto& name : store.names()) {
    auto& e = store.entry(name);
    if (!e.learnable) continue;
    if (e.velocity.numel() == 0) e.velocity = Tensor<T>::zeros(e.value.shape());
    const auto it = grads.find(name);
    const Tensor<T>* g = it == grads.end() ? nullptr : &it->second;
    if (g && !g->same_shape(e.value))
      throw std::invalid_argument("sgd_step: gradient shape mismatch for " + name);
    for (long i = 0; i < e.value.numel(); ++i) {
      const T gi = g ? (*g)[i] : T{0};
      e.velocity[i] = momentum * e.velocity[i] + gi;
      e.value[i] -= lr * e.velocity[i];
    }
  }
}

/// Polynomial decay used for the episodic schedule.
inline double poly_lr(double base_lr, long iter, long max_iter, double power = 0.9) {
  if (max_iter <= 0) return base_lr;
  const double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(max_iter);
  return base_lr * std::pow(std::max(frac, 0.0), power);
}

}  // namespace frinet::core::nn

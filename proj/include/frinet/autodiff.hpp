#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "frinet/logging.hpp"
#include "frinet/tensor.hpp"

// Reverse-mode autodiff over small dense tensors. Graphs are built per
// forward pass and discarded after backward(); nodes are shared_ptr-owned so
// subgraphs can be reused freely (gradients accumulate at shared nodes).

namespace frinet::core::ad {

template <typename T>
struct Node;

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated lazily during backward
  bool requires_grad = false;
  std::vector<Var<T>> inputs;
  std::function<void(Node<T>&)> backward_fn;
  const char* op = "";

  bool has_grad() const { return grad.numel() > 0; }
  Tensor<T>& ensure_grad() {
    if (grad.numel() == 0) grad = Tensor<T>::zeros(value.shape());
    return grad;
  }
};

template <typename T>
Var<T> make_node(Tensor<T> value, std::vector<Var<T>> inputs, const char* op) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->inputs = std::move(inputs);
  n->op = op;
  for (const auto& i : n->inputs)
    if (i->requires_grad) n->requires_grad = true;
  return n;
}

/// Wrap a tensor that never needs gradients.
template <typename T>
Var<T> constant(Tensor<T> v) {
  return make_node<T>(std::move(v), {}, "constant");
}

/// Wrap a learnable tensor; backward() will populate its grad.
template <typename T>
Var<T> leaf(Tensor<T> v) {
  auto n = make_node<T>(std::move(v), {}, "leaf");
  n->requires_grad = true;
  return n;
}

template <typename T>
void check_finite(const Var<T>& v, const std::string& stage) {
  if (!all_finite(v->value))
    throw std::runtime_error("non-finite values detected at stage: " + stage);
}

/// Backpropagate from a scalar root. Gradients accumulate into every
/// requires_grad node reachable from the root.
template <typename T>
void backward(const Var<T>& root) {
  if (root->value.numel() != 1)
    throw std::invalid_argument("backward: root must be a scalar");
  if (!root->requires_grad)
    throw std::invalid_argument("backward: root does not depend on any leaf");

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& top = stack.back();
    if (top.second < top.first->inputs.size()) {
      Node<T>* child = top.first->inputs[top.second].get();
      ++top.second;
      if (child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(top.first);
      stack.pop_back();
    }
  }

  root->ensure_grad().fill(T{1});
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// Elementwise ops

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (!a->value.same_shape(b->value))
    throw std::invalid_argument("add: shape mismatch");
  Tensor<T> out = a->value;
  for (long i = 0; i < out.numel(); ++i) out[i] += b->value[i];
  auto n = make_node<T>(std::move(out), {a, b}, "add");
  if (n->requires_grad)
    n->backward_fn = [](Node<T>& n) {
      for (int k = 0; k < 2; ++k) {
        auto& in = *n.inputs[k];
        if (!in.requires_grad) continue;
        auto& g = in.ensure_grad();
        for (long i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
      }
    };
  return n;
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  if (!a->value.same_shape(b->value))
    throw std::invalid_argument("sub: shape mismatch");
  Tensor<T> out = a->value;
  for (long i = 0; i < out.numel(); ++i) out[i] -= b->value[i];
  auto n = make_node<T>(std::move(out), {a, b}, "sub");
  if (n->requires_grad)
    n->backward_fn = [](Node<T>& n) {
      if (n.inputs[0]->requires_grad) {
        auto& g = n.inputs[0]->ensure_grad();
        for (long i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
      }
      if (n.inputs[1]->requires_grad) {
        auto& g = n.inputs[1]->ensure_grad();
        for (long i = 0; i < g.numel(); ++i) g[i] -= n.grad[i];
      }
    };
  return n;
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  if (!a->value.same_shape(b->value))
    throw std::invalid_argument("mul: shape mismatch");
  Tensor<T> out = a->value;
  for (long i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
  auto n = make_node<T>(std::move(out), {a, b}, "mul");
  if (n->requires_grad)
    n->backward_fn = [](Node<T>& n) {
      auto& a = *n.inputs[0];
      auto& b = *n.inputs[1];
      if (a.requires_grad) {
        auto& g = a.ensure_grad();
        for (long i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * b.value[i];
      }
      if (b.requires_grad) {
        auto& g = b.ensure_grad();
        for (long i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * a.value[i];
      }
    };
  return n;
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a->value;
  for (long i = 0; i < out.numel(); ++i) out[i] *= s;
  auto n = make_node<T>(std::move(out), {a}, "scale");
  if (n->requires_grad)
    n->backward_fn = [s](Node<T>& n) {
      auto& g = n.inputs[0]->ensure_grad();
      for (long i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * s;
    };
  return n;
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out = a->value;
  for (long i = 0; i < out.numel(); ++i) out[i] = out[i] > T{0} ? out[i] : T{0};
  auto n = make_node<T>(std::move(out), {a}, "relu");
  if (n->requires_grad)
    n->backward_fn = [](Node<T>& n) {
      auto& in = *n.inputs[0];
      auto& g = in.ensure_grad();
      for (long i = 0; i < g.numel(); ++i)
        if (in.value[i] > T{0}) g[i] += n.grad[i];
    };
  return n;
}

template <typename T>
Var<T> sum_all(const Var<T>& a) {
  T s{0};
  for (long i = 0; i < a->value.numel(); ++i) s += a->value[i];
  auto n = make_node<T>(Tensor<T>::scalar(s), {a}, "sum_all");
  if (n->requires_grad)
    n->backward_fn = [](Node<T>& n) {
      auto& g = n.inputs[0]->ensure_grad();
      const T go = n.grad[0];
      for (long i = 0; i < g.numel(); ++i) g[i] += go;
    };
  return n;
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
  return scale(sum_all(a), T{1} / static_cast<T>(a->value.numel()));
}

// ---------------------------------------------------------------------------
// Shape ops

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: empty input");
  const int h = parts[0]->value.size(1);
  const int w = parts[0]->value.size(2);
  int c_total = 0;
  for (const auto& p : parts) {
    if (p->value.rank() != 3 || p->value.size(1) != h || p->value.size(2) != w)
      throw std::invalid_argument("concat_channels: spatial shape mismatch");
    c_total += p->value.size(0);
  }
  Tensor<T> out({c_total, h, w});
  long offset = 0;
  for (const auto& p : parts) {
    std::copy(p->value.data(), p->value.data() + p->value.numel(),
              out.data() + offset);
    offset += p->value.numel();
  }
  auto n = make_node<T>(std::move(out), parts, "concat_channels");
  if (n->requires_grad)
    n->backward_fn = [](Node<T>& n) {
      long offset = 0;
      for (auto& in : n.inputs) {
        const long len = in->value.numel();
        if (in->requires_grad) {
          auto& g = in->ensure_grad();
          for (long i = 0; i < len; ++i) g[i] += n.grad[offset + i];
        }
        offset += len;
      }
    };
  return n;
}

template <typename T>
Var<T> slice_channels(const Var<T>& a, int begin, int count) {
  if (a->value.rank() != 3) throw std::invalid_argument("slice_channels: rank 3 required");
  const int c = a->value.size(0);
  if (begin < 0 || count <= 0 || begin + count > c)
    throw std::invalid_argument("slice_channels: out of range");
  const int h = a->value.size(1);
  const int w = a->value.size(2);
  const long plane = static_cast<long>(h) * w;
  Tensor<T> out({count, h, w});
  std::copy(a->value.data() + begin * plane,
            a->value.data() + (begin + count) * plane, out.data());
  auto n = make_node<T>(std::move(out), {a}, "slice_channels");
  if (n->requires_grad)
    n->backward_fn = [begin, plane](Node<T>& n) {
      auto& g = n.inputs[0]->ensure_grad();
      for (long i = 0; i < n.grad.numel(); ++i) g[begin * plane + i] += n.grad[i];
    };
  return n;
}

/// Differentiable exact rotation (index permutation of the last two axes).
template <typename T>
Var<T> rotate90(const Var<T>& a, int angle) {
  Tensor<T> out = rotate_exact(a->value, angle);
  auto n = make_node<T>(std::move(out), {a}, "rotate90");
  if (n->requires_grad)
    n->backward_fn = [angle](Node<T>& n) {
      Tensor<T> gi = rotate_exact(n.grad, inverse_angle(angle));
      auto& g = n.inputs[0]->ensure_grad();
      for (long i = 0; i < g.numel(); ++i) g[i] += gi[i];
    };
  return n;
}

// ---------------------------------------------------------------------------
// Spatial reductions / broadcasts

/// Mean over the spatial axes: C x H x W -> C x 1 x 1.
template <typename T>
Var<T> spatial_mean(const Var<T>& a) {
  if (a->value.rank() != 3) throw std::invalid_argument("spatial_mean: rank 3 required");
  const int c = a->value.size(0);
  const long plane = static_cast<long>(a->value.size(1)) * a->value.size(2);
  Tensor<T> out({c, 1, 1});
  for (int ch = 0; ch < c; ++ch) {
    T s{0};
    const T* src = a->value.data() + ch * plane;
    for (long i = 0; i < plane; ++i) s += src[i];
    out[ch] = s / static_cast<T>(plane);
  }
  auto n = make_node<T>(std::move(out), {a}, "spatial_mean");
  if (n->requires_grad)
    n->backward_fn = [plane](Node<T>& n) {
      auto& g = n.inputs[0]->ensure_grad();
      const int c = n.grad.size(0);
      for (int ch = 0; ch < c; ++ch) {
        const T go = n.grad[ch] / static_cast<T>(plane);
        T* dst = g.data() + ch * plane;
        for (long i = 0; i < plane; ++i) dst[i] += go;
      }
    };
  return n;
}

/// Broadcast C x 1 x 1 over a spatial grid: -> C x H x W.
template <typename T>
Var<T> broadcast_spatial(const Var<T>& a, int h, int w) {
  if (a->value.rank() != 3 || a->value.size(1) != 1 || a->value.size(2) != 1)
    throw std::invalid_argument("broadcast_spatial: C x 1 x 1 required");
  const int c = a->value.size(0);
  const long plane = static_cast<long>(h) * w;
  Tensor<T> out({c, h, w});
  for (int ch = 0; ch < c; ++ch) {
    T* dst = out.data() + ch * plane;
    const T v = a->value[ch];
    for (long i = 0; i < plane; ++i) dst[i] = v;
  }
  auto n = make_node<T>(std::move(out), {a}, "broadcast_spatial");
  if (n->requires_grad)
    n->backward_fn = [plane](Node<T>& n) {
      auto& g = n.inputs[0]->ensure_grad();
      const int c = g.size(0);
      for (int ch = 0; ch < c; ++ch) {
        T s{0};
        const T* src = n.grad.data() + ch * plane;
        for (long i = 0; i < plane; ++i) s += src[i];
        g[ch] += s;
      }
    };
  return n;
}

// ---------------------------------------------------------------------------
// Convolution

namespace detail {

inline int conv_out_dim(int in, int k, int stride, int pad, int dilation) {
  const int eff = dilation * (k - 1) + 1;
  const int out = (in + 2 * pad - eff) / stride + 1;
  if (out <= 0) throw std::invalid_argument("conv2d: non-positive output size");
  return out;
}

template <typename T>
void im2col(const Tensor<T>& x, int kh, int kw, int stride, int pad,
            int dilation, int ho, int wo, Tensor<T>& cols) {
  const int cin = x.size(0);
  const int h = x.size(1);
  const int w = x.size(2);
  const long p_count = static_cast<long>(ho) * wo;
  T* out = cols.data();
  for (int c = 0; c < cin; ++c) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const long row = (static_cast<long>(c) * kh + ki) * kw + kj;
        T* dst = out + row * p_count;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ki * dilation;
          if (iy < 0 || iy >= h) {
            for (int ox = 0; ox < wo; ++ox) dst[static_cast<long>(oy) * wo + ox] = T{0};
            continue;
          }
          const T* src_row = x.data() + (static_cast<long>(c) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kj * dilation;
            dst[static_cast<long>(oy) * wo + ox] =
                (ix < 0 || ix >= w) ? T{0} : src_row[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_accum(const Tensor<T>& cols, int cin, int h, int w, int kh, int kw,
                  int stride, int pad, int dilation, int ho, int wo,
                  Tensor<T>& dx) {
  const long p_count = static_cast<long>(ho) * wo;
  for (int c = 0; c < cin; ++c) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const long row = (static_cast<long>(c) * kh + ki) * kw + kj;
        const T* src = cols.data() + row * p_count;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ki * dilation;
          if (iy < 0 || iy >= h) continue;
          T* dst_row = dx.data() + (static_cast<long>(c) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kj * dilation;
            if (ix >= 0 && ix < w) dst_row[ix] += src[static_cast<long>(oy) * wo + ox];
          }
        }
      }
    }
  }
}

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

}  // namespace detail

/// 2-D convolution (cross-correlation): x C_in x H x W, w C_out x C_in x kh x kw,
/// b C_out. Implemented as im2col + GEMM; the column matrix is recomputed in
/// backward instead of stored.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride = 1,
              int pad = 0, int dilation = 1) {
  if (x->value.rank() != 3 || w->value.rank() != 4 || b->value.rank() != 1)
    throw std::invalid_argument("conv2d: bad ranks");
  const int cin = x->value.size(0);
  const int h = x->value.size(1);
  const int wd = x->value.size(2);
  const int cout = w->value.size(0);
  if (w->value.size(1) != cin)
    throw std::invalid_argument("conv2d: channel mismatch (input " +
                                std::to_string(cin) + ", weight expects " +
                                std::to_string(w->value.size(1)) + ")");
  if (b->value.size(0) != cout) throw std::invalid_argument("conv2d: bias size mismatch");
  const int kh = w->value.size(2);
  const int kw = w->value.size(3);
  const int ho = detail::conv_out_dim(h, kh, stride, pad, dilation);
  const int wo = detail::conv_out_dim(wd, kw, stride, pad, dilation);
  const long k_rows = static_cast<long>(cin) * kh * kw;
  const long p_count = static_cast<long>(ho) * wo;

  Tensor<T> cols({static_cast<int>(k_rows), static_cast<int>(p_count)});
  detail::im2col(x->value, kh, kw, stride, pad, dilation, ho, wo, cols);

  Tensor<T> out({cout, ho, wo});
  {
    detail::ConstMatMap<T> w_mat(w->value.data(), cout, k_rows);
    detail::ConstMatMap<T> c_mat(cols.data(), k_rows, p_count);
    detail::MatMap<T> o_mat(out.data(), cout, p_count);
    o_mat.noalias() = w_mat * c_mat;
  }
  for (int co = 0; co < cout; ++co) {
    T* dst = out.data() + co * p_count;
    const T bias = b->value[co];
    for (long i = 0; i < p_count; ++i) dst[i] += bias;
  }

  auto n = make_node<T>(std::move(out), {x, w, b}, "conv2d");
  if (n->requires_grad)
    n->backward_fn = [stride, pad, dilation, kh, kw, h, wd, cin, cout, ho, wo,
                      k_rows, p_count](Node<T>& n) {
      auto& x = *n.inputs[0];
      auto& w = *n.inputs[1];
      auto& b = *n.inputs[2];
      detail::ConstMatMap<T> go_mat(n.grad.data(), cout, p_count);
      if (b.requires_grad) {
        auto& gb = b.ensure_grad();
        for (int co = 0; co < cout; ++co) {
          T s{0};
          const T* src = n.grad.data() + co * p_count;
          for (long i = 0; i < p_count; ++i) s += src[i];
          gb[co] += s;
        }
      }
      if (w.requires_grad) {
        Tensor<T> cols({static_cast<int>(k_rows), static_cast<int>(p_count)});
        detail::im2col(x.value, kh, kw, stride, pad, dilation, ho, wo, cols);
        auto& gw = w.ensure_grad();
        detail::ConstMatMap<T> c_mat(cols.data(), k_rows, p_count);
        detail::MatMap<T> gw_mat(gw.data(), cout, k_rows);
        gw_mat.noalias() += go_mat * c_mat.transpose();
      }
      if (x.requires_grad) {
        Tensor<T> dcols({static_cast<int>(k_rows), static_cast<int>(p_count)});
        detail::ConstMatMap<T> w_mat(w.value.data(), cout, k_rows);
        detail::MatMap<T> dc_mat(dcols.data(), k_rows, p_count);
        dc_mat.noalias() = w_mat.transpose() * go_mat;
        auto& gx = x.ensure_grad();
        detail::col2im_accum(dcols, cin, h, wd, kh, kw, stride, pad, dilation,
                             ho, wo, gx);
      }
    };
  return n;
}

// ---------------------------------------------------------------------------
// Normalization

/// Per-channel standardization over the spatial axes with learnable affine.
/// Optionally reports the batch statistics (used to maintain running buffers).
template <typename T>
Var<T> instance_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                     T eps, Tensor<T>* stat_mean = nullptr,
                     Tensor<T>* stat_var = nullptr) {
  if (x->value.rank() != 3) throw std::invalid_argument("instance_norm: rank 3 required");
  const int c = x->value.size(0);
  if (gamma->value.numel() != c || beta->value.numel() != c)
    throw std::invalid_argument("instance_norm: affine size mismatch");
  const long plane = static_cast<long>(x->value.size(1)) * x->value.size(2);
  Tensor<T> mean({c}), inv_std({c});
  Tensor<T> out(x->value.shape());
  for (int ch = 0; ch < c; ++ch) {
    const T* src = x->value.data() + ch * plane;
    T m{0};
    for (long i = 0; i < plane; ++i) m += src[i];
    m /= static_cast<T>(plane);
    T v{0};
    for (long i = 0; i < plane; ++i) {
      const T d = src[i] - m;
      v += d * d;
    }
    v /= static_cast<T>(plane);
    mean[ch] = m;
    inv_std[ch] = T{1} / std::sqrt(v + eps);
    if (stat_mean) (*stat_mean)[ch] = m;
    if (stat_var) (*stat_var)[ch] = v;
    T* dst = out.data() + ch * plane;
    const T g = gamma->value[ch];
    const T bta = beta->value[ch];
    for (long i = 0; i < plane; ++i) dst[i] = (src[i] - m) * inv_std[ch] * g + bta;
  }
  auto n = make_node<T>(std::move(out), {x, gamma, beta}, "instance_norm");
  if (n->requires_grad)
    n->backward_fn = [mean, inv_std, plane](Node<T>& n) {
      auto& x = *n.inputs[0];
      auto& gamma = *n.inputs[1];
      auto& beta = *n.inputs[2];
      const int c = x.value.size(0);
      for (int ch = 0; ch < c; ++ch) {
        const T* xv = x.value.data() + ch * plane;
        const T* gy = n.grad.data() + ch * plane;
        const T m = mean[ch];
        const T is = inv_std[ch];
        T sum_gy{0}, sum_gy_xhat{0};
        for (long i = 0; i < plane; ++i) {
          const T xhat = (xv[i] - m) * is;
          sum_gy += gy[i];
          sum_gy_xhat += gy[i] * xhat;
        }
        if (beta.requires_grad) beta.ensure_grad()[ch] += sum_gy;
        if (gamma.requires_grad) gamma.ensure_grad()[ch] += sum_gy_xhat;
        if (x.requires_grad) {
          auto& gx = x.ensure_grad();
          T* dst = gx.data() + ch * plane;
          const T g = gamma.value[ch];
          const T mean_gy = sum_gy / static_cast<T>(plane);
          const T mean_gy_xhat = sum_gy_xhat / static_cast<T>(plane);
          for (long i = 0; i < plane; ++i) {
            const T xhat = (xv[i] - m) * is;
            dst[i] += g * is * (gy[i] - mean_gy - xhat * mean_gy_xhat);
          }
        }
      }
    };
  return n;
}

/// Normalize with fixed (stored) statistics: y = (x - mu) / sqrt(var + eps) * gamma + beta.
template <typename T>
Var<T> affine_norm(const Var<T>& x, const Tensor<T>& mu, const Tensor<T>& var,
                   const Var<T>& gamma, const Var<T>& beta, T eps) {
  if (x->value.rank() != 3) throw std::invalid_argument("affine_norm: rank 3 required");
  const int c = x->value.size(0);
  if (mu.numel() != c || var.numel() != c || gamma->value.numel() != c ||
      beta->value.numel() != c)
    throw std::invalid_argument("affine_norm: size mismatch");
  const long plane = static_cast<long>(x->value.size(1)) * x->value.size(2);
  Tensor<T> inv_std({c});
  for (int ch = 0; ch < c; ++ch) inv_std[ch] = T{1} / std::sqrt(var[ch] + eps);
  Tensor<T> out(x->value.shape());
  for (int ch = 0; ch < c; ++ch) {
    const T* src = x->value.data() + ch * plane;
    T* dst = out.data() + ch * plane;
    const T m = mu[ch];
    const T is = inv_std[ch];
    const T g = gamma->value[ch];
    const T bta = beta->value[ch];
    for (long i = 0; i < plane; ++i) dst[i] = (src[i] - m) * is * g + bta;
  }
  auto n = make_node<T>(std::move(out), {x, gamma, beta}, "affine_norm");
  if (n->requires_grad)
    n->backward_fn = [mu, inv_std, plane](Node<T>& n) {
      auto& x = *n.inputs[0];
      auto& gamma = *n.inputs[1];
      auto& beta = *n.inputs[2];
      const int c = x.value.size(0);
      for (int ch = 0; ch < c; ++ch) {
        const T* xv = x.value.data() + ch * plane;
        const T* gy = n.grad.data() + ch * plane;
        const T is = inv_std[ch];
        const T m = mu[ch];
        T sum_gy{0}, sum_gy_xhat{0};
        for (long i = 0; i < plane; ++i) {
          sum_gy += gy[i];
          sum_gy_xhat += gy[i] * (xv[i] - m) * is;
        }
        if (beta.requires_grad) beta.ensure_grad()[ch] += sum_gy;
        if (gamma.requires_grad) gamma.ensure_grad()[ch] += sum_gy_xhat;
        if (x.requires_grad) {
          auto& gx = x.ensure_grad();
          T* dst = gx.data() + ch * plane;
          const T gis = gamma.value[ch] * is;
          for (long i = 0; i < plane; ++i) dst[i] += gy[i] * gis;
        }
      }
    };
  return n;
}

// ---------------------------------------------------------------------------
// Resampling

/// Bilinear upsample of the last two axes (half-pixel centers).
template <typename T>
Var<T> bilinear_resize(const Var<T>& x, int out_h, int out_w) {
  if (x->value.rank() != 3) throw std::invalid_argument("bilinear_resize: rank 3 required");
  const int c = x->value.size(0);
  const int h = x->value.size(1);
  const int w = x->value.size(2);
  if (h == out_h && w == out_w) return x;
  Tensor<T> out = resize_bilinear(x->value, out_h, out_w);
  auto n = make_node<T>(std::move(out), {x}, "bilinear_resize");
  if (n->requires_grad)
    n->backward_fn = [c, h, w, out_h, out_w](Node<T>& n) {
      auto& gx = n.inputs[0]->ensure_grad();
      const double sy = static_cast<double>(h) / out_h;
      const double sx = static_cast<double>(w) / out_w;
      const long in_plane = static_cast<long>(h) * w;
      const long out_plane = static_cast<long>(out_h) * out_w;
      for (int ch = 0; ch < c; ++ch) {
        const T* gsrc = n.grad.data() + ch * out_plane;
        T* gdst = gx.data() + ch * in_plane;
        for (int i = 0; i < out_h; ++i) {
          double fy = (i + 0.5) * sy - 0.5;
          fy = std::clamp(fy, 0.0, static_cast<double>(h - 1));
          const int y0 = static_cast<int>(fy);
          const int y1 = std::min(h - 1, y0 + 1);
          const T wy = static_cast<T>(fy - y0);
          for (int j = 0; j < out_w; ++j) {
            double fx = (j + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(w - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(w - 1, x0 + 1);
            const T wx = static_cast<T>(fx - x0);
            const T g = gsrc[static_cast<long>(i) * out_w + j];
            gdst[static_cast<long>(y0) * w + x0] += (T{1} - wy) * (T{1} - wx) * g;
            gdst[static_cast<long>(y0) * w + x1] += (T{1} - wy) * wx * g;
            gdst[static_cast<long>(y1) * w + x0] += wy * (T{1} - wx) * g;
            gdst[static_cast<long>(y1) * w + x1] += wy * wx * g;
          }
        }
      }
    };
  return n;
}

// ---------------------------------------------------------------------------
// Matching primitives

/// Foreground-masked mean over spatial positions:
/// p_c = sum_hw x[c,h,w] * m[h,w] / (sum_hw m[h,w] + eps). The mask is a
/// constant 0/1 weight grid at feature resolution.
template <typename T>
Var<T> masked_mean_pool(const Var<T>& x, const Tensor<T>& mask, T eps) {
  if (x->value.rank() != 3) throw std::invalid_argument("masked_mean_pool: rank 3 required");
  const int c = x->value.size(0);
  const int h = x->value.size(1);
  const int w = x->value.size(2);
  if (mask.rank() != 2 || mask.size(0) != h || mask.size(1) != w)
    throw std::invalid_argument("masked_mean_pool: mask shape mismatch");
  const long plane = static_cast<long>(h) * w;
  T msum{0};
  for (long i = 0; i < plane; ++i) msum += mask[i];
  const T denom = msum + eps;
  Tensor<T> out({c, 1, 1});
  for (int ch = 0; ch < c; ++ch) {
    const T* src = x->value.data() + ch * plane;
    T s{0};
    for (long i = 0; i < plane; ++i) s += src[i] * mask[i];
    out[ch] = s / denom;
  }
  auto n = make_node<T>(std::move(out), {x}, "masked_mean_pool");
  if (n->requires_grad)
    n->backward_fn = [mask, denom, plane](Node<T>& n) {
      auto& gx = n.inputs[0]->ensure_grad();
      const int c = gx.size(0);
      for (int ch = 0; ch < c; ++ch) {
        const T go = n.grad[ch] / denom;
        T* dst = gx.data() + ch * plane;
        for (long i = 0; i < plane; ++i) dst[i] += go * mask[i];
      }
    };
  return n;
}

/// Cosine similarity between a prototype (C x 1 x 1) and every spatial vector
/// of a feature map (C x H x W) -> 1 x H x W. Norms are clamped below.
template <typename T>
Var<T> cosine_map(const Var<T>& proto, const Var<T>& query, T norm_floor) {
  if (proto->value.rank() != 3 || proto->value.size(1) != 1 || proto->value.size(2) != 1)
    throw std::invalid_argument("cosine_map: prototype must be C x 1 x 1");
  if (query->value.rank() != 3) throw std::invalid_argument("cosine_map: query rank 3 required");
  const int c = query->value.size(0);
  if (proto->value.size(0) != c)
    throw std::invalid_argument("cosine_map: channel mismatch");
  const int h = query->value.size(1);
  const int w = query->value.size(2);
  const long plane = static_cast<long>(h) * w;

  T pn2{0};
  for (int ch = 0; ch < c; ++ch) pn2 += proto->value[ch] * proto->value[ch];
  const T pnorm_raw = std::sqrt(pn2);
  const T pnorm = std::max(pnorm_raw, norm_floor);

  Tensor<T> out({1, h, w});
  Tensor<T> qnorms({static_cast<int>(h), static_cast<int>(w)});
  for (long i = 0; i < plane; ++i) {
    T dot{0}, qn2{0};
    for (int ch = 0; ch < c; ++ch) {
      const T qv = query->value[ch * plane + i];
      dot += proto->value[ch] * qv;
      qn2 += qv * qv;
    }
    const T qnorm = std::max(std::sqrt(qn2), norm_floor);
    qnorms[i] = qnorm;
    out[i] = dot / (pnorm * qnorm);
  }
  auto n = make_node<T>(std::move(out), {proto, query}, "cosine_map");
  if (n->requires_grad)
    n->backward_fn = [c, plane, pnorm, pnorm_raw, qnorms, norm_floor](Node<T>& n) {
      auto& proto = *n.inputs[0];
      auto& query = *n.inputs[1];
      const bool p_clamped = pnorm_raw < norm_floor;
      for (long i = 0; i < plane; ++i) {
        const T g = n.grad[i];
        if (g == T{0}) continue;
        const T qnorm = qnorms[i];
        const T s = n.value[i];
        if (proto.requires_grad) {
          auto& gp = proto.ensure_grad();
          for (int ch = 0; ch < c; ++ch) {
            const T qv = query.value[ch * plane + i];
            T d = qv / (pnorm * qnorm);
            if (!p_clamped) d -= s * proto.value[ch] / (pnorm * pnorm);
            gp[ch] += g * d;
          }
        }
        if (query.requires_grad) {
          auto& gq = query.ensure_grad();
          // Whether the query norm was clamped: recompute cheaply.
          T qn2{0};
          for (int ch = 0; ch < c; ++ch) {
            const T qv = query.value[ch * plane + i];
            qn2 += qv * qv;
          }
          const bool q_clamped = std::sqrt(qn2) < norm_floor;
          for (int ch = 0; ch < c; ++ch) {
            const T qv = query.value[ch * plane + i];
            T d = proto.value[ch] / (pnorm * qnorm);
            if (!q_clamped) d -= s * qv / (qnorm * qnorm);
            gq[ch * plane + i] += g * d;
          }
        }
      }
    };
  return n;
}

/// Softmax across the first (channel) axis at every spatial position.
template <typename T>
Var<T> channel_softmax(const Var<T>& x) {
  if (x->value.rank() != 3) throw std::invalid_argument("channel_softmax: rank 3 required");
  const int c = x->value.size(0);
  const int h = x->value.size(1);
  const int w = x->value.size(2);
  const long plane = static_cast<long>(h) * w;
  Tensor<T> out(x->value.shape());
  for (long i = 0; i < plane; ++i) {
    T m = x->value[i];
    for (int ch = 1; ch < c; ++ch) m = std::max(m, x->value[ch * plane + i]);
    T z{0};
    for (int ch = 0; ch < c; ++ch) {
      const T e = std::exp(x->value[ch * plane + i] - m);
      out[ch * plane + i] = e;
      z += e;
    }
    for (int ch = 0; ch < c; ++ch) out[ch * plane + i] /= z;
  }
  auto n = make_node<T>(std::move(out), {x}, "channel_softmax");
  if (n->requires_grad)
    n->backward_fn = [c, plane](Node<T>& n) {
      auto& gx = n.inputs[0]->ensure_grad();
      for (long i = 0; i < plane; ++i) {
        T dot{0};
        for (int ch = 0; ch < c; ++ch)
          dot += n.grad[ch * plane + i] * n.value[ch * plane + i];
        for (int ch = 0; ch < c; ++ch) {
          const T y = n.value[ch * plane + i];
          gx[ch * plane + i] += y * (n.grad[ch * plane + i] - dot);
        }
      }
    };
  return n;
}

/// Per-pixel convex combination of prototypes:
/// out[c,h,w] = sum_o weights[o,h,w] * protos[o][c]. Equivalent to the
/// (C x O) x (O x HW) matrix product.
template <typename T>
Var<T> aggregate_prototypes(const std::vector<Var<T>>& protos, const Var<T>& weights) {
  if (protos.empty()) throw std::invalid_argument("aggregate_prototypes: no prototypes");
  if (weights->value.rank() != 3)
    throw std::invalid_argument("aggregate_prototypes: weights rank 3 required");
  const int o_count = static_cast<int>(protos.size());
  if (weights->value.size(0) != o_count)
    throw std::invalid_argument("aggregate_prototypes: weight/prototype count mismatch");
  const int c = protos[0]->value.size(0);
  for (const auto& p : protos)
    if (p->value.rank() != 3 || p->value.size(0) != c || p->value.size(1) != 1 ||
        p->value.size(2) != 1)
      throw std::invalid_argument("aggregate_prototypes: prototypes must be C x 1 x 1");
  const int h = weights->value.size(1);
  const int w = weights->value.size(2);
  const long plane = static_cast<long>(h) * w;
  Tensor<T> out({c, h, w});
  for (int o = 0; o < o_count; ++o) {
    const T* wmap = weights->value.data() + o * plane;
    for (int ch = 0; ch < c; ++ch) {
      const T pv = protos[static_cast<size_t>(o)]->value[ch];
      T* dst = out.data() + ch * plane;
      for (long i = 0; i < plane; ++i) dst[i] += pv * wmap[i];
    }
  }
  std::vector<Var<T>> inputs = protos;
  inputs.push_back(weights);
  auto n = make_node<T>(std::move(out), std::move(inputs), "aggregate_prototypes");
  if (n->requires_grad)
    n->backward_fn = [o_count, c, plane](Node<T>& n) {
      auto& weights = *n.inputs.back();
      for (int o = 0; o < o_count; ++o) {
        auto& proto = *n.inputs[static_cast<size_t>(o)];
        const T* wmap = weights.value.data() + o * plane;
        if (proto.requires_grad) {
          auto& gp = proto.ensure_grad();
          for (int ch = 0; ch < c; ++ch) {
            const T* g = n.grad.data() + ch * plane;
            T s{0};
            for (long i = 0; i < plane; ++i) s += g[i] * wmap[i];
            gp[ch] += s;
          }
        }
        if (weights.requires_grad) {
          auto& gw = weights.ensure_grad();
          T* gwo = gw.data() + o * plane;
          for (int ch = 0; ch < c; ++ch) {
            const T pv = proto.value[ch];
            const T* g = n.grad.data() + ch * plane;
            for (long i = 0; i < plane; ++i) gwo[i] += g[i] * pv;
          }
        }
      }
    };
  return n;
}

/// Adaptive average pooling of C x H x W into C x bins x bins cells.
/// Cell edges follow floor(i * H / bins).
template <typename T>
Var<T> adaptive_avg_pool(const Var<T>& x, int bins) {
  if (x->value.rank() != 3) throw std::invalid_argument("adaptive_avg_pool: rank 3 required");
  const int c = x->value.size(0);
  const int h = x->value.size(1);
  const int w = x->value.size(2);
  if (bins <= 0 || bins > h || bins > w)
    throw std::invalid_argument("adaptive_avg_pool: bad bin count");
  Tensor<T> out({c, bins, bins});
  const long in_plane = static_cast<long>(h) * w;
  const long out_plane = static_cast<long>(bins) * bins;
  auto edge = [](int i, int n, int bins) { return (i * n) / bins; };
  for (int ch = 0; ch < c; ++ch) {
    const T* src = x->value.data() + ch * in_plane;
    T* dst = out.data() + ch * out_plane;
    for (int by = 0; by < bins; ++by) {
      const int y0 = edge(by, h, bins);
      const int y1 = edge(by + 1, h, bins);
      for (int bx = 0; bx < bins; ++bx) {
        const int x0 = edge(bx, w, bins);
        const int x1 = edge(bx + 1, w, bins);
        T s{0};
        for (int y = y0; y < y1; ++y)
          for (int xx = x0; xx < x1; ++xx) s += src[static_cast<long>(y) * w + xx];
        dst[static_cast<long>(by) * bins + bx] =
            s / static_cast<T>((y1 - y0) * (x1 - x0));
      }
    }
  }
  auto n = make_node<T>(std::move(out), {x}, "adaptive_avg_pool");
  if (n->requires_grad)
    n->backward_fn = [c, h, w, bins](Node<T>& n) {
      auto& gx = n.inputs[0]->ensure_grad();
      const long in_plane = static_cast<long>(h) * w;
      const long out_plane = static_cast<long>(bins) * bins;
      auto edge = [](int i, int nn, int bins) { return (i * nn) / bins; };
      for (int ch = 0; ch < c; ++ch) {
        const T* gsrc = n.grad.data() + ch * out_plane;
        T* gdst = gx.data() + ch * in_plane;
        for (int by = 0; by < bins; ++by) {
          const int y0 = edge(by, h, bins);
          const int y1 = edge(by + 1, h, bins);
          for (int bx = 0; bx < bins; ++bx) {
            const int x0 = edge(bx, w, bins);
            const int x1 = edge(bx + 1, w, bins);
            const T g = gsrc[static_cast<long>(by) * bins + bx] /
                        static_cast<T>((y1 - y0) * (x1 - x0));
            for (int y = y0; y < y1; ++y)
              for (int xx = x0; xx < x1; ++xx) gdst[static_cast<long>(y) * w + xx] += g;
          }
        }
      }
    };
  return n;
}

/// Mean K-way cross-entropy of logits (K x H x W) against integer labels in
/// [0, K) with 255 = ignore.
template <typename T>
Var<T> masked_cross_entropy_multi(const Var<T>& logits, const Tensor<uint8_t>& labels) {
  if (logits->value.rank() != 3)
    throw std::invalid_argument("masked_cross_entropy_multi: rank 3 required");
  const int k = logits->value.size(0);
  const int h = logits->value.size(1);
  const int w = logits->value.size(2);
  if (labels.rank() != 2 || labels.size(0) != h || labels.size(1) != w)
    throw std::invalid_argument("masked_cross_entropy_multi: label shape mismatch");
  const long plane = static_cast<long>(h) * w;
  long valid = 0;
  T loss{0};
  for (long i = 0; i < plane; ++i) {
    const uint8_t y = labels[i];
    if (y == 255) continue;
    if (y >= k)
      throw std::invalid_argument("masked_cross_entropy_multi: label out of range");
    ++valid;
    T m = logits->value[i];
    for (int ch = 1; ch < k; ++ch) m = std::max(m, logits->value[ch * plane + i]);
    T z{0};
    for (int ch = 0; ch < k; ++ch) z += std::exp(logits->value[ch * plane + i] - m);
    loss += m + std::log(z) - logits->value[static_cast<long>(y) * plane + i];
  }
  if (valid == 0)
    throw std::invalid_argument("masked_cross_entropy_multi: no valid pixels");
  loss /= static_cast<T>(valid);
  auto n = make_node<T>(Tensor<T>::scalar(loss), {logits}, "masked_cross_entropy_multi");
  if (n->requires_grad)
    n->backward_fn = [labels, plane, valid, k](Node<T>& n) {
      auto& logits = *n.inputs[0];
      auto& g = logits.ensure_grad();
      const T go = n.grad[0] / static_cast<T>(valid);
      for (long i = 0; i < plane; ++i) {
        const uint8_t y = labels[i];
        if (y == 255) continue;
        T m = logits.value[i];
        for (int ch = 1; ch < k; ++ch) m = std::max(m, logits.value[ch * plane + i]);
        T z{0};
        for (int ch = 0; ch < k; ++ch) z += std::exp(logits.value[ch * plane + i] - m);
        for (int ch = 0; ch < k; ++ch) {
          const T p = std::exp(logits.value[ch * plane + i] - m) / z;
          g[ch * plane + i] += go * (p - (ch == y ? T{1} : T{0}));
        }
      }
    };
  return n;
}

/// Mean two-class cross-entropy of logits (2 x H x W) against a label grid
/// {0 = background, 1 = foreground, 255 = ignore}. Ignore pixels are excluded
/// from the mean; a grid with no valid pixel is an error.
template <typename T>
Var<T> masked_cross_entropy(const Var<T>& logits, const Tensor<uint8_t>& labels) {
  if (logits->value.rank() != 3 || logits->value.size(0) != 2)
    throw std::invalid_argument("masked_cross_entropy: logits must be 2 x H x W");
  const int h = logits->value.size(1);
  const int w = logits->value.size(2);
  if (labels.rank() != 2 || labels.size(0) != h || labels.size(1) != w)
    throw std::invalid_argument("masked_cross_entropy: label shape mismatch");
  const long plane = static_cast<long>(h) * w;
  long valid = 0;
  T loss{0};
  for (long i = 0; i < plane; ++i) {
    const uint8_t y = labels[i];
    if (y == 255) continue;
    if (y > 1)
      throw std::invalid_argument("masked_cross_entropy: labels must be binary or 255");
    ++valid;
    const T zf = logits->value[i];          // channel 0 = foreground
    const T zb = logits->value[plane + i];  // channel 1 = background
    const T m = std::max(zf, zb);
    const T lse = m + std::log(std::exp(zf - m) + std::exp(zb - m));
    loss += lse - (y == 1 ? zf : zb);
  }
  if (valid == 0)
    throw std::invalid_argument("masked_cross_entropy: ground truth is entirely ignore");
  loss /= static_cast<T>(valid);
  auto n = make_node<T>(Tensor<T>::scalar(loss), {logits}, "masked_cross_entropy");
  if (n->requires_grad)
    n->backward_fn = [labels, plane, valid](Node<T>& n) {
      auto& logits = *n.inputs[0];
      auto& g = logits.ensure_grad();
      const T go = n.grad[0] / static_cast<T>(valid);
      for (long i = 0; i < plane; ++i) {
        const uint8_t y = labels[i];
        if (y == 255) continue;
        const T zf = logits.value[i];
        const T zb = logits.value[plane + i];
        const T m = std::max(zf, zb);
        const T ef = std::exp(zf - m);
        const T eb = std::exp(zb - m);
        const T z = ef + eb;
        g[i] += go * (ef / z - (y == 1 ? T{1} : T{0}));
        g[plane + i] += go * (eb / z - (y == 0 ? T{1} : T{0}));
      }
    };
  return n;
}

}  // namespace frinet::core::ad

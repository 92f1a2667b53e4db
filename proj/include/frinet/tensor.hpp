#pragma once

#include <algorithm>
#include <array>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace frinet::core {

/// Dense row-major tensor of rank 1..4. Spatial axes are always the last two.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    if (shape_.empty() || shape_.size() > 4)
      throw std::invalid_argument("Tensor: rank must be in [1,4]");
    long n = 1;
    for (int d : shape_) {
      if (d <= 0) throw std::invalid_argument("Tensor: dims must be positive");
      n *= d;
    }
    data_.assign(static_cast<size_t>(n), T{});
  }

  static Tensor full(std::vector<int> shape, T v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static Tensor scalar(T v) { return full({1}, v); }

  int rank() const { return static_cast<int>(shape_.size()); }
  const std::vector<int>& shape() const { return shape_; }
  int size(int axis) const { return shape_.at(static_cast<size_t>(axis)); }
  long numel() const { return static_cast<long>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& raw() { return data_; }
  const std::vector<T>& raw() const { return data_; }

  T& operator[](long i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](long i) const { return data_[static_cast<size_t>(i)]; }

  T& operator()(int a) {
    assert(rank() == 1);
    return data_[static_cast<size_t>(a)];
  }
  const T& operator()(int a) const {
    assert(rank() == 1);
    return data_[static_cast<size_t>(a)];
  }
  T& operator()(int a, int b) {
    assert(rank() == 2);
    return data_[static_cast<size_t>(a) * shape_[1] + b];
  }
  const T& operator()(int a, int b) const {
    assert(rank() == 2);
    return data_[static_cast<size_t>(a) * shape_[1] + b];
  }
  T& operator()(int a, int b, int c) {
    assert(rank() == 3);
    return data_[(static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c];
  }
  const T& operator()(int a, int b, int c) const {
    assert(rank() == 3);
    return data_[(static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c];
  }
  T& operator()(int a, int b, int c, int d) {
    assert(rank() == 4);
    return data_[((static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c) *
                     shape_[3] +
                 d];
  }
  const T& operator()(int a, int b, int c, int d) const {
    assert(rank() == 4);
    return data_[((static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c) *
                     shape_[3] +
                 d];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  int height() const { return shape_[shape_.size() - 2]; }
  int width() const { return shape_.back(); }
  /// Number of leading (non-spatial) slices, e.g. channels for rank 3.
  long planes() const {
    long n = 1;
    for (size_t i = 0; i + 2 < shape_.size(); ++i) n *= shape_[i];
    return n;
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.reshape_from(shape_);
    for (long i = 0; i < numel(); ++i) out[i] = static_cast<U>(data_[static_cast<size_t>(i)]);
    return out;
  }

  // Internal: adopt a shape without zero-reinit bookkeeping (used by cast()).
  void reshape_from(const std::vector<int>& shape) {
    shape_ = shape;
    long n = 1;
    for (int d : shape_) n *= d;
    data_.assign(static_cast<size_t>(n), T{});
  }

 private:
  std::vector<int> shape_;
  std::vector<T> data_;
};

template <typename T>
bool all_finite(const Tensor<T>& t) {
  if constexpr (std::is_floating_point_v<T>) {
    for (long i = 0; i < t.numel(); ++i)
      if (!std::isfinite(t[i])) return false;
  }
  return true;
}

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data(), b.data(), sizeof(T) * a.numel()) == 0;
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("max_abs_diff: shape mismatch");
  T m = 0;
  for (long i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

namespace detail {
inline void check_rot_angle(int angle) {
  if (angle != 0 && angle != 90 && angle != 180 && angle != 270)
    throw std::invalid_argument(
        "rotate_exact: angle must be one of {0,90,180,270}, got " +
        std::to_string(angle));
}
}  // namespace detail

/// Lossless counter-clockwise rotation by a multiple of 90 degrees, as a pure
/// index permutation of the last two axes. 90/270 swap H and W.
template <typename T>
Tensor<T> rotate_exact(const Tensor<T>& in, int angle) {
  detail::check_rot_angle(angle);
  if (in.rank() < 2)
    throw std::invalid_argument("rotate_exact: tensor must have spatial axes");
  if (angle == 0) return in;

  const int h = in.height();
  const int w = in.width();
  std::vector<int> out_shape = in.shape();
  if (angle == 90 || angle == 270) {
    out_shape[out_shape.size() - 2] = w;
    out_shape.back() = h;
  }
  Tensor<T> out(out_shape);
  const long planes = in.planes();
  const long in_plane = static_cast<long>(h) * w;
  const long out_plane = in_plane;
  for (long p = 0; p < planes; ++p) {
    const T* src = in.data() + p * in_plane;
    T* dst = out.data() + p * out_plane;
    if (angle == 90) {
      // out[i][j] = in[j][w-1-i], out is w x h
      for (int i = 0; i < w; ++i)
        for (int j = 0; j < h; ++j) dst[static_cast<long>(i) * h + j] = src[static_cast<long>(j) * w + (w - 1 - i)];
    } else if (angle == 180) {
      for (long i = 0; i < in_plane; ++i) dst[i] = src[in_plane - 1 - i];
    } else {  // 270
      // out[i][j] = in[h-1-j][i], out is w x h
      for (int i = 0; i < w; ++i)
        for (int j = 0; j < h; ++j) dst[static_cast<long>(i) * h + j] = src[static_cast<long>(h - 1 - j) * w + i];
    }
  }
  return out;
}

/// Reflection about the vertical axis (left-right flip of the last axis).
template <typename T>
Tensor<T> hflip(const Tensor<T>& in) {
  if (in.rank() < 2) throw std::invalid_argument("hflip: tensor must have spatial axes");
  Tensor<T> out(in.shape());
  const int h = in.height();
  const int w = in.width();
  const long planes = in.planes();
  const long plane = static_cast<long>(h) * w;
  for (long p = 0; p < planes; ++p) {
    const T* src = in.data() + p * plane;
    T* dst = out.data() + p * plane;
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) dst[static_cast<long>(i) * w + j] = src[static_cast<long>(i) * w + (w - 1 - j)];
  }
  return out;
}

inline constexpr std::array<int, 4> kOrientations = {0, 90, 180, 270};

inline int orientation_index(int angle) {
  detail::check_rot_angle(angle);
  return angle / 90;
}

inline int inverse_angle(int angle) {
  detail::check_rot_angle(angle);
  return (360 - angle) % 360;
}

/// A quadruple of values indexed by rotation angle {0, 90, 180, 270}.
template <typename V>
struct OrientationSet {
  std::array<V, 4> items;

  V& at(int angle) { return items[static_cast<size_t>(orientation_index(angle))]; }
  const V& at(int angle) const {
    return items[static_cast<size_t>(orientation_index(angle))];
  }
  V& at_0() { return items[0]; }
  V& at_90() { return items[1]; }
  V& at_180() { return items[2]; }
  V& at_270() { return items[3]; }
  const V& at_0() const { return items[0]; }
  const V& at_90() const { return items[1]; }
  const V& at_180() const { return items[2]; }
  const V& at_270() const { return items[3]; }
};

/// All four exact rotations of a spatial tensor; entry 0 is the input itself.
template <typename T>
OrientationSet<Tensor<T>> make_orientation_set(const Tensor<T>& grid) {
  OrientationSet<Tensor<T>> set;
  for (int a : kOrientations) set.at(a) = rotate_exact(grid, a);
  return set;
}

/// Nearest-neighbour resize of the last two axes. Used for label grids so
/// values never bleed. src index = floor((dst + 0.5) * scale).
template <typename T>
Tensor<T> resize_nearest(const Tensor<T>& in, int out_h, int out_w) {
  if (in.rank() < 2) throw std::invalid_argument("resize_nearest: need spatial axes");
  const int h = in.height();
  const int w = in.width();
  std::vector<int> out_shape = in.shape();
  out_shape[out_shape.size() - 2] = out_h;
  out_shape.back() = out_w;
  Tensor<T> out(out_shape);
  const long planes = in.planes();
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  for (long p = 0; p < planes; ++p) {
    const T* src = in.data() + p * static_cast<long>(h) * w;
    T* dst = out.data() + p * static_cast<long>(out_h) * out_w;
    for (int i = 0; i < out_h; ++i) {
      const int si = std::min(h - 1, static_cast<int>((i + 0.5) * sy));
      for (int j = 0; j < out_w; ++j) {
        const int sj = std::min(w - 1, static_cast<int>((j + 0.5) * sx));
        dst[static_cast<long>(i) * out_w + j] = src[static_cast<long>(si) * w + sj];
      }
    }
  }
  return out;
}

/// Bilinear resize of the last two axes (half-pixel centers, no corner
/// alignment). Used for images.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& in, int out_h, int out_w) {
  static_assert(std::is_floating_point_v<T>);
  if (in.rank() < 2) throw std::invalid_argument("resize_bilinear: need spatial axes");
  const int h = in.height();
  const int w = in.width();
  if (h == out_h && w == out_w) return in;
  std::vector<int> out_shape = in.shape();
  out_shape[out_shape.size() - 2] = out_h;
  out_shape.back() = out_w;
  Tensor<T> out(out_shape);
  const long planes = in.planes();
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  for (long p = 0; p < planes; ++p) {
    const T* src = in.data() + p * static_cast<long>(h) * w;
    T* dst = out.data() + p * static_cast<long>(out_h) * out_w;
    for (int i = 0; i < out_h; ++i) {
      double fy = (i + 0.5) * sy - 0.5;
      fy = std::clamp(fy, 0.0, static_cast<double>(h - 1));
      const int y0 = static_cast<int>(fy);
      const int y1 = std::min(h - 1, y0 + 1);
      const double wy = fy - y0;
      for (int j = 0; j < out_w; ++j) {
        double fx = (j + 0.5) * sx - 0.5;
        fx = std::clamp(fx, 0.0, static_cast<double>(w - 1));
        const int x0 = static_cast<int>(fx);
        const int x1 = std::min(w - 1, x0 + 1);
        const double wx = fx - x0;
        const double v = (1 - wy) * ((1 - wx) * src[static_cast<long>(y0) * w + x0] +
                                     wx * src[static_cast<long>(y0) * w + x1]) +
                         wy * ((1 - wx) * src[static_cast<long>(y1) * w + x0] +
                               wx * src[static_cast<long>(y1) * w + x1]);
        dst[static_cast<long>(i) * out_w + j] = static_cast<T>(v);
      }
    }
  }
  return out;
}

}  // namespace frinet::core

// Copyright 2026 The ovcount Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ovc/error.hpp"

namespace ovc {

using Shape = std::vector<std::size_t>;

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major array of doubles.
///
/// A Tensor is immutable once constructed. Construction rejects NaN/Inf and any
/// payload whose length disagrees with the shape. Rank 0 holds one scalar.
/// Zero extents are allowed so that empty token sets (no exemplars) are
/// representable.
class Tensor {
 public:
  Tensor() : data_(1, 0.0) {}

  Tensor(Shape dims, std::vector<double> data) : dims_(std::move(dims)), data_(std::move(data)) {
    if (data_.size() != shape_numel(dims_)) {
      throw ShapeError("tensor payload has " + std::to_string(data_.size()) + " values but shape " +
                       to_string(dims_) + " needs " + std::to_string(shape_numel(dims_)));
    }
    for (double v : data_) {
      if (!std::isfinite(v)) throw ValueError("tensor value is not finite");
    }
  }

  static Tensor zeros(Shape dims) { return full(std::move(dims), 0.0); }
  static Tensor full(Shape dims, double v) {
    const auto n = shape_numel(dims);
    return Tensor(std::move(dims), std::vector<double>(n, v));
  }
  static Tensor scalar(double v) { return Tensor({}, {v}); }
  static Tensor vector(std::vector<double> v) {
    const auto n = v.size();
    return Tensor({n}, std::move(v));
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Tensor({rows, cols}, std::move(v));
  }
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    std::vector<double> v;
    std::size_t cols = rows.size() ? rows.begin()->size() : 0;
    for (const auto& r : rows) {
      if (r.size() != cols) throw ShapeError("ragged matrix literal");
      v.insert(v.end(), r.begin(), r.end());
    }
    return Tensor({rows.size(), cols}, std::move(v));
  }
  static Tensor identity(std::size_t n) {
    std::vector<double> v(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
    return Tensor({n, n}, std::move(v));
  }

  const Shape& dims() const { return dims_; }
  std::size_t rank() const { return dims_.size(); }
  std::size_t dim(std::size_t i) const { return dims_.at(i); }
  std::size_t numel() const { return data_.size(); }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  /// Row count / column count of a rank-2 tensor.
  std::size_t rows() const { return expect_rank(2), dims_[0]; }
  std::size_t cols() const { return expect_rank(2), dims_[1]; }

  double item() const {
    if (data_.size() != 1) throw ShapeError("item() needs a single-element tensor, got " + to_string(dims_));
    return data_[0];
  }
  double operator[](std::size_t i) const { return data_[i]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * dims_[1] + j]; }
  double operator()(std::size_t i, std::size_t j, std::size_t c) const {
    return data_[(i * dims_[1] + j) * dims_[2] + c];
  }
  std::span<const double> row(std::size_t i) const {
    const std::size_t w = dims_.back();
    return std::span<const double>(data_).subspan(i * w, w);
  }

  Tensor reshaped(Shape dims) const {
    if (shape_numel(dims) != numel()) {
      throw ShapeError("cannot reshape " + to_string(dims_) + " to " + to_string(dims));
    }
    Tensor t;
    t.dims_ = std::move(dims);
    t.data_ = data_;
    return t;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.dims_ == b.dims_ && a.data_ == b.data_;
  }

 private:
  void expect_rank(std::size_t r) const {
    if (dims_.size() != r) {
      throw ShapeError("expected rank " + std::to_string(r) + ", got shape " + to_string(dims_));
    }
  }

  Shape dims_;
  std::vector<double> data_;
};

namespace detail {

inline void require_rank(const Tensor& t, std::size_t r, const char* what) {
  if (t.rank() != r) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(r) + ", got " +
                     to_string(t.dims()));
  }
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dims differ (" + to_string(a.dims()) + " x " + to_string(b.dims()) + ")");
  }
  std::vector<double> c(m * n, 0.0);
  const auto A = a.data();
  const auto B = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t r = 0; r < k; ++r) {
      const double air = A[i * k + r];
      if (air == 0.0) continue;
      const double* brow = B.data() + r * n;
      double* crow = c.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += air * brow[j];
    }
  }
  return Tensor({m, n}, std::move(c));
}

inline Tensor transpose(const Tensor& a) {
  detail::require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> t(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t[j * m + i] = a(i, j);
  return Tensor({n, m}, std::move(t));
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (a.dims() != b.dims()) throw ShapeError("add: " + to_string(a.dims()) + " vs " + to_string(b.dims()));
  std::vector<double> c(a.numel());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = a[i] + b[i];
  return Tensor(a.dims(), std::move(c));
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.dims() != b.dims()) throw ShapeError("mul: " + to_string(a.dims()) + " vs " + to_string(b.dims()));
  std::vector<double> c(a.numel());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = a[i] * b[i];
  return Tensor(a.dims(), std::move(c));
}

inline Tensor scale(const Tensor& a, double s) {
  std::vector<double> c(a.data().begin(), a.data().end());
  for (double& v : c) v *= s;
  return Tensor(a.dims(), std::move(c));
}

/// Adds a length-n bias to every row of the trailing axis.
inline Tensor add_bias(const Tensor& a, const Tensor& bias) {
  if (a.rank() == 0 || bias.rank() != 1 || bias.dim(0) != a.dims().back()) {
    throw ShapeError("add_bias: " + to_string(a.dims()) + " with bias " + to_string(bias.dims()));
  }
  const std::size_t n = bias.dim(0);
  std::vector<double> c(a.data().begin(), a.data().end());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] += bias[i % n];
  return Tensor(a.dims(), std::move(c));
}

inline double sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return s;
}

/// Numerically stable softmax along `axis` (max subtracted per slice).
inline Tensor softmax(const Tensor& v, std::size_t axis) {
  if (axis >= v.rank()) throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range");
  const auto& d = v.dims();
  const std::size_t len = d[axis];
  if (len == 0) throw ShapeError("softmax: empty axis");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= d[i];
  for (std::size_t i = axis + 1; i < d.size(); ++i) inner *= d[i];
  const auto x = v.data();
  std::vector<double> y(x.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, x[base + j * inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        const double e = std::exp(x[base + j * inner] - mx);
        y[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < len; ++j) y[base + j * inner] /= z;
    }
  }
  return Tensor(d, std::move(y));
}

/// Logistic function kept strictly inside (0, 1) even where exp saturates.
inline double sigmoid(double x) {
  constexpr double lo = std::numeric_limits<double>::denorm_min();
  constexpr double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
  const double s = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  return std::clamp(s, lo, hi);
}

inline Tensor sigmoid_map(const Tensor& m) {
  std::vector<double> y(m.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = sigmoid(m[i]);
  return Tensor(m.dims(), std::move(y));
}

namespace detail {

/// Bilinear sample of channel c of an h x w x C map at continuous (y, x),
/// coordinates clamped into [0, h-1] x [0, w-1].
inline double bilinear_at(const Tensor& map, double y, double x, std::size_t c) {
  const std::size_t h = map.dim(0), w = map.dim(1);
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const std::size_t y1 = std::min(y0 + 1, h - 1);
  const std::size_t x1 = std::min(x0 + 1, w - 1);
  const double ly = y - static_cast<double>(y0), lx = x - static_cast<double>(x0);
  const double hy = 1.0 - ly, hx = 1.0 - lx;
  return hy * hx * map(y0, x0, c) + hy * lx * map(y0, x1, c) + ly * hx * map(y1, x0, c) +
         ly * lx * map(y1, x1, c);
}

/// Source coordinate for destination index `dst` under align-corners-false.
inline double half_pixel_source(std::size_t dst, std::size_t in, std::size_t out) {
  const double s = static_cast<double>(in) / static_cast<double>(out);
  return (static_cast<double>(dst) + 0.5) * s - 0.5;
}

}  // namespace detail

/// Resizes an H x W x C map to H' x W' x C (align-corners-false, clamped samples).
inline Tensor bilinear_resize(const Tensor& map, std::size_t out_h, std::size_t out_w) {
  detail::require_rank(map, 3, "bilinear_resize");
  const std::size_t h = map.dim(0), w = map.dim(1), c = map.dim(2);
  if (h == 0 || w == 0) throw ShapeError("bilinear_resize: empty source map");
  if (out_h == 0 || out_w == 0) throw ShapeError("bilinear_resize: zero target extent");
  if (out_h == h && out_w == w) return map;
  std::vector<double> out(out_h * out_w * c);
  for (std::size_t i = 0; i < out_h; ++i) {
    const double sy = detail::half_pixel_source(i, h, out_h);
    for (std::size_t j = 0; j < out_w; ++j) {
      const double sx = detail::half_pixel_source(j, w, out_w);
      for (std::size_t ch = 0; ch < c; ++ch) out[(i * out_w + j) * c + ch] = detail::bilinear_at(map, sy, sx, ch);
    }
  }
  return Tensor({out_h, out_w, c}, std::move(out));
}

/// Per-position affine map over the channel axis: out[y,x,:] = map[y,x,:] W + b.
inline Tensor project_1x1(const Tensor& map, const Tensor& weight, const Tensor& bias) {
  detail::require_rank(map, 3, "project_1x1");
  detail::require_rank(weight, 2, "project_1x1 weight");
  const std::size_t h = map.dim(0), w = map.dim(1), cin = map.dim(2);
  if (weight.dim(0) != cin || bias.rank() != 1 || bias.dim(0) != weight.dim(1)) {
    throw ShapeError("project_1x1: map " + to_string(map.dims()) + ", weight " + to_string(weight.dims()) +
                     ", bias " + to_string(bias.dims()));
  }
  const Tensor flat = map.reshaped({h * w, cin});
  return add_bias(matmul(flat, weight), bias).reshaped({h, w, weight.dim(1)});
}

/// Indices of the k largest scores in descending order; equal scores keep the
/// smaller index first. k is clamped to the number of scores.
inline std::vector<std::size_t> topk_indices(std::span<const double> scores, std::size_t k) {
  if (scores.empty()) throw ValueError("topk_indices: empty scores");
  if (k == 0) throw ValueError("topk_indices: k must be at least 1");
  k = std::min(k, scores.size());
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto better = [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), better);
  idx.resize(k);
  return idx;
}

inline Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: nothing to concatenate");
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  std::vector<double> out;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column mismatch");
    rows += p.rows();
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  return Tensor({rows, cols}, std::move(out));
}

inline Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
  detail::require_rank(a, 2, "gather_rows");
  std::vector<double> out;
  out.reserve(rows.size() * a.cols());
  for (auto r : rows) {
    if (r >= a.rows()) throw ValueError("gather_rows: index " + std::to_string(r) + " out of range");
    auto src = a.row(r);
    out.insert(out.end(), src.begin(), src.end());
  }
  return Tensor({rows.size(), a.cols()}, std::move(out));
}

inline Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  detail::require_rank(a, 2, "slice_cols");
  if (begin > end || end > a.cols()) throw ShapeError("slice_cols: bad range");
  const std::size_t w = end - begin;
  std::vector<double> out(a.rows() * w);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = a(i, begin + j);
  return Tensor({a.rows(), w}, std::move(out));
}

inline Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: nothing to concatenate");
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row mismatch");
    cols += p.cols();
  }
  std::vector<double> out(rows * cols);
  std::size_t off = 0;
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < p.cols(); ++j) out[i * cols + off + j] = p(i, j);
    off += p.cols();
  }
  return Tensor({rows, cols}, std::move(out));
}

/// Maximum of each row of a matrix.
inline std::vector<double> row_max(const Tensor& a) {
  detail::require_rank(a, 2, "row_max");
  if (a.cols() == 0) throw ShapeError("row_max: matrix has no columns");
  std::vector<double> out(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto r = a.row(i);
    out[i] = *std::max_element(r.begin(), r.end());
  }
  return out;
}

}  // namespace ovc

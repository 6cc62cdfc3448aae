// Copyright 2026 The ovcount Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ovc/tensor.hpp"

namespace ovc {

class GradTape;

/// Handle to a value recorded on a GradTape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& dims() const { return value().dims(); }
  GradTape& tape() const;
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class GradTape;
  Var(GradTape* tape, std::size_t id) : tape_(tape), id_(id) {}

  GradTape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Leaf gradients produced by GradTape::grad.
class Gradients {
 public:
  /// Gradient of the output with respect to `leaf`; zeros when the output does
  /// not depend on it.
  Tensor of(Var leaf) const;

 private:
  friend class GradTape;
  const GradTape* tape_ = nullptr;
  std::unordered_map<std::size_t, std::vector<double>> by_id_;
};

/// Records a forward computation so gradients of a scalar output can be
/// accumulated in reverse. Nodes are appended in evaluation order, so every
/// node's inputs precede it and the graph is acyclic by construction.
///
/// A tape is single-threaded and must outlive every Var that refers to it.
class GradTape {
 public:
  using Grad = std::vector<double>;
  /// Adds the contribution of `out_grad` into each non-null input gradient.
  /// `out` is the node's own forward value.
  using BackwardFn =
      std::function<void(const Tensor& out, std::span<const double> out_grad, std::span<Grad* const> in_grads)>;

  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  Var leaf(Tensor value) { return push(std::move(value), {}, true, true, nullptr); }
  Var constant(Tensor value) { return push(std::move(value), {}, false, true, nullptr); }

  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
    std::vector<std::size_t> ids;
    bool needs = false;
    ids.reserve(inputs.size());
    for (const Var& v : inputs) {
      if (v.tape_ != this) throw ValueError("GradTape: input belongs to a different tape");
      ids.push_back(v.id_);
      needs = needs || nodes_[v.id_].requires_grad;
    }
    return push(std::move(value), std::move(ids), needs, false, needs ? std::move(backward) : nullptr);
  }

  const Tensor& value(Var v) const { return nodes_.at(v.id_).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id_).requires_grad; }
  bool owns(Var v) const { return v.tape_ == this && v.id_ < nodes_.size(); }
  std::size_t size() const { return nodes_.size(); }

  Gradients grad(Var output) const {
    if (!owns(output)) throw ValueError("grad: output is not recorded on this tape");
    if (value(output).numel() != 1) {
      throw ShapeError("grad: output must be scalar, got " + to_string(value(output).dims()));
    }
    std::vector<Grad> g(nodes_.size());
    g[output.id_] = {1.0};
    std::vector<Grad*> slots;
    for (std::size_t i = output.id_ + 1; i-- > 0;) {
      const Node& n = nodes_[i];
      if (g[i].empty() || n.is_leaf || !n.requires_grad) continue;
      slots.assign(n.inputs.size(), nullptr);
      for (std::size_t j = 0; j < n.inputs.size(); ++j) {
        const Node& in = nodes_[n.inputs[j]];
        if (!in.requires_grad) continue;
        Grad& dst = g[n.inputs[j]];
        if (dst.empty()) dst.assign(in.value.numel(), 0.0);
        slots[j] = &dst;
      }
      n.backward(n.value, g[i], slots);
    }
    Gradients out;
    out.tape_ = this;
    for (std::size_t i = 0; i <= output.id_; ++i) {
      if (nodes_[i].is_leaf && nodes_[i].requires_grad && !g[i].empty()) out.by_id_.emplace(i, std::move(g[i]));
    }
    return out;
  }

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    bool requires_grad = false;
    bool is_leaf = false;
    BackwardFn backward;
  };

  Var push(Tensor value, std::vector<std::size_t> inputs, bool requires_grad, bool is_leaf, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), std::move(inputs), requires_grad, is_leaf, std::move(fn)});
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(*this); }
inline GradTape& Var::tape() const { return *tape_; }

inline Tensor Gradients::of(Var leaf) const {
  if (tape_ == nullptr || !tape_->owns(leaf)) throw ValueError("Gradients::of: variable is not on this tape");
  const Tensor& v = leaf.value();
  auto it = by_id_.find(leaf.id());
  if (it == by_id_.end()) return Tensor::zeros(v.dims());
  return Tensor(v.dims(), it->second);
}

/// Maps parameter tensors onto tape variables. Registered tensors become
/// gradient-carrying leaves; anything else is recorded as a constant. Lookup is
/// by address, so the bound tensors must stay alive and unmoved while in use.
class ParamBinder {
 public:
  explicit ParamBinder(GradTape& tape) : tape_(tape) {}

  GradTape& tape() { return tape_; }

  Var trainable(const Tensor& t, std::string name) {
    Var v = tape_.leaf(t);
    vars_[&t] = v;
    named_.emplace(std::move(name), v);
    return v;
  }

  Var operator()(const Tensor& t) {
    auto it = vars_.find(&t);
    if (it != vars_.end()) return it->second;
    Var v = tape_.constant(t);
    vars_.emplace(&t, v);
    return v;
  }

  const std::map<std::string, Var>& trainables() const { return named_; }

 private:
  GradTape& tape_;
  std::unordered_map<const Tensor*, Var> vars_;
  std::map<std::string, Var> named_;
};

// ---------------------------------------------------------------------------
// Differentiable ops. Forward values reuse the Tensor kernels.

inline Var add(Var a, Var b) {
  return a.tape().record(add(a.value(), b.value()), {a, b}, [](const Tensor&, auto g, auto in) {
    for (auto* dst : in)
      if (dst)
        for (std::size_t i = 0; i < g.size(); ++i) (*dst)[i] += g[i];
  });
}

inline Var mul(Var a, Var b) {
  return a.tape().record(mul(a.value(), b.value()), {a, b}, [a, b](const Tensor&, auto g, auto in) {
    const auto A = a.value().data(), B = b.value().data();
    if (in[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i] * B[i];
    if (in[1])
      for (std::size_t i = 0; i < g.size(); ++i) (*in[1])[i] += g[i] * A[i];
  });
}

inline Var scale(Var a, double s) {
  return a.tape().record(scale(a.value(), s), {a}, [s](const Tensor&, auto g, auto in) {
    for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += s * g[i];
  });
}

inline Var add_bias(Var a, Var bias) {
  const std::size_t n = bias.value().numel();
  return a.tape().record(add_bias(a.value(), bias.value()), {a, bias}, [n](const Tensor&, auto g, auto in) {
    if (in[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i];
    if (in[1])
      for (std::size_t i = 0; i < g.size(); ++i) (*in[1])[i % n] += g[i];
  });
}

inline Var matmul(Var a, Var b) {
  return a.tape().record(matmul(a.value(), b.value()), {a, b}, [a, b](const Tensor&, auto g, auto in) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
    const auto Ad = A.data(), Bd = B.data();
    if (in[0]) {
      auto& ga = *in[0];
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t r = 0; r < k; ++r) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * Bd[r * n + j];
          ga[i * k + r] += s;
        }
    }
    if (in[1]) {
      auto& gb = *in[1];
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t r = 0; r < k; ++r) {
          const double air = Ad[i * k + r];
          if (air == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) gb[r * n + j] += air * g[i * n + j];
        }
    }
  });
}

inline Var transpose(Var a) {
  const std::size_t m = a.value().dim(0), n = a.value().dim(1);
  return a.tape().record(transpose(a.value()), {a}, [m, n](const Tensor&, auto g, auto in) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) (*in[0])[i * n + j] += g[j * m + i];
  });
}

inline Var softmax(Var v, std::size_t axis) {
  Tensor y = softmax(v.value(), axis);
  const auto& d = y.dims();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= d[i];
  for (std::size_t i = axis + 1; i < d.size(); ++i) inner *= d[i];
  const std::size_t len = d[axis];
  return v.tape().record(std::move(y), {v}, [outer, inner, len](const Tensor& out, auto g, auto in) {
    const auto y = out.data();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < inner; ++k) {
        const std::size_t base = o * len * inner + k;
        double dot = 0.0;
        for (std::size_t j = 0; j < len; ++j) dot += g[base + j * inner] * y[base + j * inner];
        for (std::size_t j = 0; j < len; ++j)
          (*in[0])[base + j * inner] += y[base + j * inner] * (g[base + j * inner] - dot);
      }
  });
}

inline Var sigmoid_map(Var v) {
  return v.tape().record(sigmoid_map(v.value()), {v}, [](const Tensor& out, auto g, auto in) {
    const auto y = out.data();
    for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

/// x * sigmoid(x), composed from recorded ops.
inline Var silu(Var v) { return mul(v, sigmoid_map(v)); }

inline Var sum(Var v) {
  return v.tape().record(Tensor::scalar(sum(v.value())), {v}, [](const Tensor&, auto g, auto in) {
    for (double& x : *in[0]) x += g[0];
  });
}

inline Var mean(Var v) {
  const double n = static_cast<double>(v.value().numel());
  if (n == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(v), 1.0 / n);
}

/// Column-wise mean of an m x n matrix, as a length-n vector.
inline Var column_mean(Var v) {
  const Tensor& x = v.value();
  detail::require_rank(x, 2, "column_mean");
  const std::size_t m = x.rows(), n = x.cols();
  if (m == 0) throw ShapeError("column_mean: no rows");
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += x(i, j);
  for (double& o : out) o /= static_cast<double>(m);
  return v.tape().record(Tensor::vector(std::move(out)), {v}, [m, n](const Tensor&, auto g, auto in) {
    const double w = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) (*in[0])[i * n + j] += w * g[j];
  });
}

inline Var reshape(Var v, Shape dims) {
  return v.tape().record(v.value().reshaped(std::move(dims)), {v}, [](const Tensor&, auto g, auto in) {
    for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i];
  });
}

inline Var slice_cols(Var v, std::size_t begin, std::size_t end) {
  const std::size_t cols = v.value().cols();
  return v.tape().record(slice_cols(v.value(), begin, end), {v}, [cols, begin, end](const Tensor&, auto g, auto in) {
    const std::size_t w = end - begin;
    const std::size_t rows = w ? g.size() / w : 0;
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < w; ++j) (*in[0])[i * cols + begin + j] += g[i * w + j];
  });
}

inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: nothing to concatenate");
  std::vector<Tensor> vals;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    vals.push_back(p.value());
    widths.push_back(p.value().cols());
  }
  Tensor out = concat_cols(vals);
  const std::size_t total = out.cols();
  return parts.front().tape().record(std::move(out), {parts.begin(), parts.end()},
                                     [widths, total](const Tensor&, auto g, auto in) {
                                       const std::size_t rows = total ? g.size() / total : 0;
                                       std::size_t off = 0;
                                       for (std::size_t p = 0; p < widths.size(); ++p) {
                                         if (in[p])
                                           for (std::size_t i = 0; i < rows; ++i)
                                             for (std::size_t j = 0; j < widths[p]; ++j)
                                               (*in[p])[i * widths[p] + j] += g[i * total + off + j];
                                         off += widths[p];
                                       }
                                     });
}

inline Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: nothing to concatenate");
  std::vector<Tensor> vals;
  std::vector<std::size_t> sizes;
  for (const Var& p : parts) {
    vals.push_back(p.value());
    sizes.push_back(p.value().numel());
  }
  return parts.front().tape().record(concat_rows(vals), {parts.begin(), parts.end()},
                                     [sizes](const Tensor&, auto g, auto in) {
                                       std::size_t off = 0;
                                       for (std::size_t p = 0; p < sizes.size(); ++p) {
                                         if (in[p])
                                           for (std::size_t i = 0; i < sizes[p]; ++i) (*in[p])[i] += g[off + i];
                                         off += sizes[p];
                                       }
                                     });
}

inline Var gather_rows(Var v, std::vector<std::size_t> rows) {
  const std::size_t cols = v.value().cols();
  Tensor out = gather_rows(v.value(), rows);
  return v.tape().record(std::move(out), {v}, [rows = std::move(rows), cols](const Tensor&, auto g, auto in) {
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < cols; ++j) (*in[0])[rows[i] * cols + j] += g[i * cols + j];
  });
}

/// Per-position affine channel map of an H x W x C_in map.
inline Var project_1x1(Var map, Var weight, Var bias) {
  const Tensor& x = map.value();
  detail::require_rank(x, 3, "project_1x1");
  const std::size_t h = x.dim(0), w = x.dim(1);
  Var flat = reshape(map, {h * w, x.dim(2)});
  Var y = add_bias(matmul(flat, weight), bias);
  return reshape(y, {h, w, weight.value().dim(1)});
}

}  // namespace ovc

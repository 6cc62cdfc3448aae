// Copyright 2026 The ovcount Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "ovc/autodiff.hpp"
#include "ovc/pyramid.hpp"
#include "ovc/random.hpp"
#include "ovc/tensor.hpp"

namespace ovc {

/// Projection weights of one multi-head attention block. Head h owns columns
/// [h*d/heads, (h+1)*d/heads) of the Q/K/V projections.
struct AttentionParams {
  std::size_t heads = 8;
  Tensor w_q, w_k, w_v, w_o;  // each d x d

  std::size_t width() const { return w_q.dim(0); }

  void validate() const {
    const std::size_t d = width();
    if (heads == 0 || d % heads != 0) {
      throw ShapeError("attention width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
    }
    for (const Tensor* w : {&w_q, &w_k, &w_v, &w_o}) {
      if (w->dims() != Shape{d, d}) throw ShapeError("attention weight must be " + to_string(Shape{d, d}));
    }
  }

  static AttentionParams init(std::size_t d, std::size_t heads, Rng& rng) {
    const double s = 1.0 / std::sqrt(static_cast<double>(d));
    AttentionParams p{heads, rng.normal_tensor({d, d}, s), rng.normal_tensor({d, d}, s),
                      rng.normal_tensor({d, d}, s), rng.normal_tensor({d, d}, s)};
    p.validate();
    return p;
  }
  static AttentionParams identity(std::size_t d, std::size_t heads) {
    return {heads, Tensor::identity(d), Tensor::identity(d), Tensor::identity(d), Tensor::identity(d)};
  }
  static AttentionParams zeros(std::size_t d, std::size_t heads) {
    return {heads, Tensor::zeros({d, d}), Tensor::zeros({d, d}), Tensor::zeros({d, d}), Tensor::zeros({d, d})};
  }
};

template <either_const_of<AttentionParams> P, class F>
void for_each_tensor(P& p, const std::string& prefix, F&& f) {
  f(prefix + ".w_q", p.w_q);
  f(prefix + ".w_k", p.w_k);
  f(prefix + ".w_v", p.w_v);
  f(prefix + ".w_o", p.w_o);
}

/// Two-layer position-wise MLP with a SiLU hidden activation.
struct FeedForward {
  Linear hidden;
  Linear output;

  static FeedForward init(std::size_t d, std::size_t h, Rng& rng) {
    return {Linear::init(d, h, rng), Linear::init(h, d, rng)};
  }
  static FeedForward zeros(std::size_t d, std::size_t h) { return {Linear::zeros(d, h), Linear::zeros(h, d)}; }
};

template <either_const_of<FeedForward> P, class F>
void for_each_tensor(P& p, const std::string& prefix, F&& f) {
  for_each_tensor(p.hidden, prefix + ".hidden", f);
  for_each_tensor(p.output, prefix + ".output", f);
}

inline Var apply(const Linear& l, Var x, ParamBinder& bind) {
  return add_bias(matmul(x, bind(l.weight)), bind(l.bias));
}

inline Var apply(const FeedForward& ff, Var x, ParamBinder& bind) {
  return apply(ff.output, silu(apply(ff.hidden, x, bind)), bind);
}

/// Per-head scaled dot-product attention, heads concatenated, before W_O.
inline Var attend_heads(Var q, Var kv, const AttentionParams& p, ParamBinder& bind) {
  p.validate();
  const std::size_t d = p.width();
  if (q.value().rank() != 2 || kv.value().rank() != 2 || q.value().cols() != d || kv.value().cols() != d) {
    throw ShapeError("attention: inputs " + to_string(q.dims()) + " / " + to_string(kv.dims()) +
                     " do not match width " + std::to_string(d));
  }
  if (kv.value().rows() == 0) throw ShapeError("attention: empty key/value set");
  const std::size_t dh = d / p.heads;
  const double s = 1.0 / std::sqrt(static_cast<double>(dh));
  Var Q = matmul(q, bind(p.w_q));
  Var K = matmul(kv, bind(p.w_k));
  Var V = matmul(kv, bind(p.w_v));
  std::vector<Var> heads;
  heads.reserve(p.heads);
  for (std::size_t h = 0; h < p.heads; ++h) {
    Var qh = slice_cols(Q, h * dh, (h + 1) * dh);
    Var kh = slice_cols(K, h * dh, (h + 1) * dh);
    Var vh = slice_cols(V, h * dh, (h + 1) * dh);
    Var weights = softmax(scale(matmul(qh, transpose(kh)), s), 1);
    heads.push_back(matmul(weights, vh));
  }
  return p.heads == 1 ? heads.front() : concat_cols(heads);
}

inline Var multi_head_attention(Var q, Var kv, const AttentionParams& p, ParamBinder& bind) {
  return matmul(attend_heads(q, kv, p, bind), bind(p.w_o));
}

inline Tensor multi_head_attention(const Tensor& q, const Tensor& kv, const AttentionParams& p) {
  GradTape tape;
  ParamBinder bind(tape);
  return multi_head_attention(tape.constant(q), tape.constant(kv), p, bind).value();
}

/// Concatenated head outputs before the output projection.
inline Tensor attention_head_outputs(const Tensor& q, const Tensor& kv, const AttentionParams& p) {
  GradTape tape;
  ParamBinder bind(tape);
  return attend_heads(tape.constant(q), tape.constant(kv), p, bind).value();
}

/// Parameters of the cross-attention that injects remote-sensing features into
/// each level of the general-vision pyramid.
struct InjectionParams {
  std::vector<Linear> level_proj;  // C_cv(level) -> C_rs, one per pyramid level
  AttentionParams attention;       // width C_rs

  static InjectionParams init(const std::vector<std::size_t>& cv_channels, std::size_t rs_channels,
                              std::size_t heads, Rng& rng) {
    InjectionParams p;
    for (auto c : cv_channels) p.level_proj.push_back(Linear::init(c, rs_channels, rng));
    p.attention = AttentionParams::init(rs_channels, heads, rng);
    return p;
  }
};

template <either_const_of<InjectionParams> P, class F>
void for_each_tensor(P& p, const std::string& prefix, F&& f) {
  for (std::size_t i = 0; i < p.level_proj.size(); ++i)
    for_each_tensor(p.level_proj[i], prefix + ".level" + std::to_string(i), f);
  for_each_tensor(p.attention, prefix + ".attention", f);
}

/// Fuses every pyramid level with the RS map: the level is resized to the RS
/// grid, projected 1x1 to the RS channel count, and attended with the RS cells
/// as queries. Returns one (h_r*w_r) x C_rs token block per level.
inline std::vector<Var> inject_tokens(const FeaturePyramid& z_cv, const PyramidLevel& z_rs,
                                      const InjectionParams& p, ParamBinder& bind) {
  if (p.level_proj.size() != z_cv.size()) {
    throw ShapeError("rs_feature_injection: " + std::to_string(z_cv.size()) + " pyramid levels but " +
                     std::to_string(p.level_proj.size()) + " projections");
  }
  const std::size_t h = z_rs.height(), w = z_rs.width(), c = z_rs.channels();
  if (p.attention.width() != c) throw ShapeError("rs_feature_injection: attention width differs from z_rs channels");
  GradTape& tape = bind.tape();
  Var queries = tape.constant(z_rs.map.reshaped({h * w, c}));
  std::vector<Var> out;
  out.reserve(z_cv.size());
  for (std::size_t l = 0; l < z_cv.size(); ++l) {
    const Linear& proj = p.level_proj[l];
    if (proj.in() != z_cv.level(l).channels() || proj.out() != c) {
      throw ShapeError("rs_feature_injection: projection " + std::to_string(l) + " has wrong shape");
    }
    Var resized = tape.constant(bilinear_resize(z_cv.level(l).map, h, w));
    Var keys = reshape(project_1x1(resized, bind(proj.weight), bind(proj.bias)), {h * w, c});
    out.push_back(multi_head_attention(queries, keys, p.attention, bind));
  }
  return out;
}

inline FeaturePyramid rs_feature_injection(const FeaturePyramid& z_cv, const PyramidLevel& z_rs,
                                           const InjectionParams& p) {
  GradTape tape;
  ParamBinder bind(tape);
  auto tokens = inject_tokens(z_cv, z_rs, p, bind);
  std::vector<PyramidLevel> levels;
  for (const Var& t : tokens) {
    levels.push_back({z_rs.stride, t.value().reshaped({z_rs.height(), z_rs.width(), z_rs.channels()})});
  }
  return FeaturePyramid(std::move(levels));
}

}  // namespace ovc

// Copyright 2026 The ovcount Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ovc/attention.hpp"
#include "ovc/autodiff.hpp"
#include "ovc/pyramid.hpp"
#include "ovc/tensor.hpp"

namespace ovc {

inline constexpr std::size_t kDefaultTopK = 900;

// ---------------------------------------------------------------------------
// Feature enhancer

/// One enhancer layer. Order inside a layer: image self-attention, prompt
/// self-attention, then bidirectional image<->prompt cross-attention (both
/// directions read the post-self-attention states), then per-stream FFNs.
/// Every block is residual.
struct EnhancerLayer {
  AttentionParams image_self, prompt_self, image_from_prompt, prompt_from_image;
  FeedForward image_ffn, prompt_ffn;
};

struct EnhancerParams {
  std::vector<EnhancerLayer> layers;

  static EnhancerParams init(std::size_t d, std::size_t heads, std::size_t hidden, std::size_t n_layers, Rng& rng) {
    EnhancerParams p;
    for (std::size_t i = 0; i < n_layers; ++i) {
      EnhancerLayer l;
      l.image_self = AttentionParams::init(d, heads, rng);
      l.prompt_self = AttentionParams::init(d, heads, rng);
      l.image_from_prompt = AttentionParams::init(d, heads, rng);
      l.prompt_from_image = AttentionParams::init(d, heads, rng);
      l.image_ffn = FeedForward::init(d, hidden, rng);
      l.prompt_ffn = FeedForward::init(d, hidden, rng);
      p.layers.push_back(std::move(l));
    }
    return p;
  }

  static EnhancerParams zeros(std::size_t d, std::size_t heads, std::size_t hidden, std::size_t n_layers) {
    EnhancerParams p;
    for (std::size_t i = 0; i < n_layers; ++i) {
      const auto z = AttentionParams::zeros(d, heads);
      const auto f = FeedForward::zeros(d, hidden);
      p.layers.push_back({z, z, z, z, f, f});
    }
    return p;
  }
};

template <either_const_of<EnhancerParams> P, class F>
void for_each_tensor(P& p, const std::string& prefix, F&& f) {
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    auto& l = p.layers[i];
    const std::string pre = prefix + ".layer" + std::to_string(i);
    for_each_tensor(l.image_self, pre + ".image_self", f);
    for_each_tensor(l.prompt_self, pre + ".prompt_self", f);
    for_each_tensor(l.image_from_prompt, pre + ".image_from_prompt", f);
    for_each_tensor(l.prompt_from_image, pre + ".prompt_from_image", f);
    for_each_tensor(l.image_ffn, pre + ".image_ffn", f);
    for_each_tensor(l.prompt_ffn, pre + ".prompt_ffn", f);
  }
}

struct EnhancedTokens {
  Var prompt;  // (p+q) x d, exemplar rows first
  Var image;   // n x d
};

inline EnhancedTokens feature_enhancer(Var image, Var exemplars, Var text, const EnhancerParams& p,
                                       ParamBinder& bind) {
  const std::size_t d = image.value().cols();
  if (text.value().rows() == 0) throw ValueError("feature_enhancer: text prompt is empty");
  if (text.value().cols() != d || exemplars.value().cols() != d) {
    throw ShapeError("feature_enhancer: token widths differ (" + to_string(image.dims()) + ", " +
                     to_string(exemplars.dims()) + ", " + to_string(text.dims()) + ")");
  }
  Var prompt = text;
  if (exemplars.value().rows() > 0) {
    const Var parts[] = {exemplars, text};
    prompt = concat_rows(parts);
  }
  for (const auto& l : p.layers) {
    image = add(image, multi_head_attention(image, image, l.image_self, bind));
    prompt = add(prompt, multi_head_attention(prompt, prompt, l.prompt_self, bind));
    Var image_x = add(image, multi_head_attention(image, prompt, l.image_from_prompt, bind));
    Var prompt_x = add(prompt, multi_head_attention(prompt, image, l.prompt_from_image, bind));
    image = add(image_x, apply(l.image_ffn, image_x, bind));
    prompt = add(prompt_x, apply(l.prompt_ffn, prompt_x, bind));
  }
  return {prompt, image};
}

/// Returns (z_vt, z_i).
inline std::pair<TokenMatrix, TokenMatrix> feature_enhancer(const TokenMatrix& image, const TokenMatrix& exemplars,
                                                            const TokenMatrix& text, const EnhancerParams& p) {
  GradTape tape;
  ParamBinder bind(tape);
  const auto out = feature_enhancer(tape.constant(image.tokens), tape.constant(exemplars.tokens),
                                    tape.constant(text.tokens), p, bind);
  return {TokenMatrix(out.prompt.value(), TokenRole::fused), TokenMatrix(out.image.value(), TokenRole::image)};
}

// ---------------------------------------------------------------------------
// Query selection

struct QuerySelection {
  std::vector<std::size_t> indices;  // into the image tokens, best first
  Tensor queries;                    // k x d
};

/// Per-token score is the maximum over prompt columns of z_i z_vt^T; the top
/// min(k, n) tokens are kept with ties going to the smaller index.
inline std::vector<std::size_t> select_indices(const Tensor& image, const Tensor& prompt, std::size_t k) {
  if (image.rows() == 0) throw ValueError("select_queries: no image tokens");
  if (prompt.rows() == 0) throw ValueError("select_queries: no prompt tokens");
  const auto scores = row_max(matmul(image, transpose(prompt)));
  return topk_indices(scores, k);
}

inline QuerySelection select_queries(const TokenMatrix& z_i, const TokenMatrix& z_vt, std::size_t k = kDefaultTopK) {
  auto idx = select_indices(z_i.tokens, z_vt.tokens, k);
  Tensor q = gather_rows(z_i.tokens, idx);
  return {std::move(idx), std::move(q)};
}

// ---------------------------------------------------------------------------
// Decoder

struct DecoderLayer {
  AttentionParams self_attn, image_cross, prompt_cross;
  FeedForward ffn;
};

struct DecoderParams {
  std::vector<DecoderLayer> layers;
  Linear center_head;  // d -> 2, sigmoid gives normalized (x, y)

  static DecoderParams init(std::size_t d, std::size_t heads, std::size_t hidden, std::size_t n_layers, Rng& rng) {
    DecoderParams p;
    for (std::size_t i = 0; i < n_layers; ++i) {
      DecoderLayer l;
      l.self_attn = AttentionParams::init(d, heads, rng);
      l.image_cross = AttentionParams::init(d, heads, rng);
      l.prompt_cross = AttentionParams::init(d, heads, rng);
      l.ffn = FeedForward::init(d, hidden, rng);
      p.layers.push_back(std::move(l));
    }
    p.center_head = Linear::init(d, 2, rng);
    return p;
  }

  static DecoderParams zeros(std::size_t d, std::size_t heads, std::size_t hidden, std::size_t n_layers) {
    DecoderParams p;
    const auto z = AttentionParams::zeros(d, heads);
    for (std::size_t i = 0; i < n_layers; ++i) p.layers.push_back({z, z, z, FeedForward::zeros(d, hidden)});
    p.center_head = Linear::zeros(d, 2);
    return p;
  }
};

template <either_const_of<DecoderParams> P, class F>
void for_each_tensor(P& p, const std::string& prefix, F&& f) {
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    auto& l = p.layers[i];
    const std::string pre = prefix + ".layer" + std::to_string(i);
    for_each_tensor(l.self_attn, pre + ".self_attn", f);
    for_each_tensor(l.image_cross, pre + ".image_cross", f);
    for_each_tensor(l.prompt_cross, pre + ".prompt_cross", f);
    for_each_tensor(l.ffn, pre + ".ffn", f);
  }
  for_each_tensor(p.center_head, prefix + ".center_head", f);
}

struct DecodedQueries {
  Var logits;   // k x (p+q), before the sigmoid
  Var scores;   // sigmoid(logits)
  Var centers;  // k x 2 in [0,1]^2
};

inline DecodedQueries decode(Var image, Var prompt, std::span<const std::size_t> selected, const DecoderParams& p,
                             ParamBinder& bind) {
  const std::size_t n = image.value().rows();
  for (auto i : selected)
    if (i >= n) throw ValueError("decode_similarity: selected index " + std::to_string(i) + " out of range");
  Var q = gather_rows(image, {selected.begin(), selected.end()});
  for (const auto& l : p.layers) {
    q = add(q, multi_head_attention(q, q, l.self_attn, bind));
    q = add(q, multi_head_attention(q, image, l.image_cross, bind));
    q = add(q, multi_head_attention(q, prompt, l.prompt_cross, bind));
    q = add(q, apply(l.ffn, q, bind));
  }
  Var logits = matmul(q, transpose(prompt));
  return {logits, sigmoid_map(logits), sigmoid_map(apply(p.center_head, q, bind))};
}

/// Sigmoid similarity between decoded queries and prompt tokens.
struct SimilarityMatrix {
  Tensor scores;                      // k x (p+q), entries in (0,1)
  std::vector<std::size_t> selected;  // image-token index of each row
  Tensor centers;                     // k x 2 normalized
  std::size_t exemplar_columns = 0;   // p; the remaining q columns are text

  std::size_t k() const { return scores.rows(); }
  std::size_t columns() const { return scores.cols(); }

  /// Per-row confidence: maximum over all prompt columns.
  std::vector<double> confidences() const { return k() ? row_max(scores) : std::vector<double>{}; }

  double max_confidence() const {
    double m = 0.0;
    for (double v : scores.data()) m = std::max(m, v);
    return m;
  }
};

inline SimilarityMatrix decode_similarity(const TokenMatrix& z_i, const TokenMatrix& z_vt,
                                          std::span<const std::size_t> selected, const DecoderParams& p) {
  GradTape tape;
  ParamBinder bind(tape);
  const auto out = decode(tape.constant(z_i.tokens), tape.constant(z_vt.tokens), selected, p, bind);
  return {out.scores.value(), {selected.begin(), selected.end()}, out.centers.value(), 0};
}

// ---------------------------------------------------------------------------
// Counting

struct CountResult {
  std::size_t count = 0;
  std::vector<std::size_t> kept;   // rows of the similarity matrix above threshold
  std::vector<double> confidence;  // per row
  double threshold = 0.0;
};

inline CountResult count_from_similarity(const SimilarityMatrix& sm, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ValueError("count threshold must lie in [0, 1]");
  CountResult r;
  r.threshold = threshold;
  r.confidence = sm.confidences();
  for (std::size_t i = 0; i < r.confidence.size(); ++i)
    if (r.confidence[i] > threshold) r.kept.push_back(i);
  r.count = r.kept.size();
  return r;
}

}  // namespace ovc

// Copyright 2026 The ovcount Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ovc/attention.hpp"
#include "ovc/encoders.hpp"
#include "ovc/exemplars.hpp"
#include "ovc/fusion.hpp"

namespace ovc {

struct ModelConfig {
  std::size_t width = 32;        // d
  std::size_t heads = 8;
  std::size_t rs_channels = 16;  // C_rs
  std::vector<std::size_t> cv_channels{8, 16, 32};
  std::size_t ffn_hidden = 64;
  std::size_t enhancer_layers = 1;
  std::size_t decoder_layers = 1;
  std::size_t top_k = kDefaultTopK;
  std::size_t vocab = 512;
  RoiAlignConfig roi{};

  void validate() const {
    if (heads == 0 || width % heads || rs_channels % heads) {
      throw ConfigError("model widths must be divisible by the head count");
    }
    if (top_k == 0) throw ConfigError("k must be at least 1");
    if (cv_channels.empty()) throw ConfigError("at least one pyramid level is required");
    if (vocab == 0) throw ConfigError("vocabulary must be non-empty");
  }
};

/// Every trainable tensor of the counting model (encoders excluded).
struct ModelParams {
  InjectionParams injection;
  std::vector<Linear> image_proj;     // C_rs -> d per fused level
  std::vector<Linear> exemplar_proj;  // C_rs -> d per fused level
  EnhancerParams enhancer;
  DecoderParams decoder;

  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(derive_seed(seed, "model-init"));
    ModelParams p;
    p.injection = InjectionParams::init(cfg.cv_channels, cfg.rs_channels, cfg.heads, rng);
    for (std::size_t l = 0; l < cfg.cv_channels.size(); ++l) {
      p.image_proj.push_back(Linear::init(cfg.rs_channels, cfg.width, rng));
      p.exemplar_proj.push_back(Linear::init(cfg.rs_channels, cfg.width, rng));
    }
    p.enhancer = EnhancerParams::init(cfg.width, cfg.heads, cfg.ffn_hidden, cfg.enhancer_layers, rng);
    p.decoder = DecoderParams::init(cfg.width, cfg.heads, cfg.ffn_hidden, cfg.decoder_layers, rng);
    return p;
  }
};

template <either_const_of<ModelParams> P, class F>
void for_each_tensor(P& p, const std::string& prefix, F&& f) {
  for_each_tensor(p.injection, prefix + "injection", f);
  for (std::size_t i = 0; i < p.image_proj.size(); ++i) for_each_tensor(p.image_proj[i], prefix + "image_proj" + std::to_string(i), f);
  for (std::size_t i = 0; i < p.exemplar_proj.size(); ++i)
    for_each_tensor(p.exemplar_proj[i], prefix + "exemplar_proj" + std::to_string(i), f);
  for_each_tensor(p.enhancer, prefix + "enhancer", f);
  for_each_tensor(p.decoder, prefix + "decoder", f);
}

/// Frozen encoders that feed the model.
struct Encoders {
  FixtureImageEncoder image;
  FixtureTextEncoder text;

  static Encoders from_seed(const ModelConfig& cfg, std::uint64_t seed) {
    return {FixtureImageEncoder::from_seed(seed, cfg.cv_channels, cfg.rs_channels),
            FixtureTextEncoder::from_seed(seed, cfg.vocab, cfg.width)};
  }
};

template <either_const_of<Encoders> E, class F>
void for_each_tensor(E& e, const std::string& prefix, F&& f) {
  for_each_tensor(e.image, prefix + "encoder.image", f);
  for_each_tensor(e.text, prefix + "encoder.text", f);
}

/// Named tensors, ordered by name.
using ParamStore = std::map<std::string, Tensor>;

template <class P>
ParamStore to_store(const P& p) {
  ParamStore s;
  for_each_tensor(p, "", [&](const std::string& name, const Tensor& t) { s.emplace(name, t); });
  return s;
}

/// Overwrites every tensor of `p` from the store; names and shapes must match.
template <class P>
void assign_from_store(P& p, const ParamStore& s) {
  for_each_tensor(p, "", [&](const std::string& name, Tensor& t) {
    auto it = s.find(name);
    if (it == s.end()) throw FormatError("parameter '" + name + "' missing from store");
    if (it->second.dims() != t.dims()) {
      throw ShapeError("parameter '" + name + "' has shape " + to_string(it->second.dims()) + ", expected " +
                       to_string(t.dims()));
    }
    t = it->second;
  });
}

inline ParamStore merge(ParamStore a, const ParamStore& b) {
  for (const auto& [k, v] : b) a.insert_or_assign(k, v);
  return a;
}

/// Location of an image token on the fused grid.
struct TokenPosition {
  std::size_t level = 0, row = 0, col = 0;
};

struct ForwardPass {
  DecodedQueries decoded;
  Var prompt;
  Var image;
  std::vector<std::size_t> selected;
  std::vector<TokenPosition> positions;  // for all n image tokens
  std::size_t grid_h = 0, grid_w = 0, grid_stride = 1;
  std::size_t n = 0, p = 0, q = 0;
};

/// Full counting forward pass on a tape: RS injection, image/exemplar tokens,
/// enhancer, top-k selection, decoder.
inline ForwardPass forward(const ModelParams& params, const ModelConfig& cfg, const EncodedImage& features,
                           const TokenMatrix& text, const ExemplarBoxes& boxes, ParamBinder& bind) {
  GradTape& tape = bind.tape();
  const auto fused = inject_tokens(features.cv, features.rs, params.injection, bind);
  const std::size_t h = features.rs.height(), w = features.rs.width(), c = features.rs.channels();
  if (params.image_proj.size() != fused.size() || params.exemplar_proj.size() != fused.size()) {
    throw ShapeError("model: projection count differs from pyramid level count");
  }

  ForwardPass out;
  out.grid_h = h;
  out.grid_w = w;
  out.grid_stride = features.rs.stride;
  std::vector<Var> image_parts, maps;
  std::vector<std::size_t> strides(fused.size(), features.rs.stride);
  for (std::size_t l = 0; l < fused.size(); ++l) {
    image_parts.push_back(apply(params.image_proj[l], fused[l], bind));
    maps.push_back(reshape(fused[l], {h, w, c}));
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t col = 0; col < w; ++col) out.positions.push_back({l, r, col});
  }
  Var image = concat_rows(image_parts);
  Var exemplars = exemplar_tokens(maps, strides, boxes, params.exemplar_proj, cfg.roi, bind);
  if (text.width() != cfg.width) throw ShapeError("text tokens have width " + std::to_string(text.width()));
  Var z_t = tape.constant(text.tokens);

  auto enhanced = feature_enhancer(image, exemplars, z_t, params.enhancer, bind);
  out.selected = select_indices(enhanced.image.value(), enhanced.prompt.value(), cfg.top_k);
  out.decoded = decode(enhanced.image, enhanced.prompt, out.selected, params.decoder, bind);
  out.prompt = enhanced.prompt;
  out.image = enhanced.image;
  out.n = image.value().rows();
  out.p = exemplars.value().rows();
  out.q = text.count();
  return out;
}

struct Inference {
  SimilarityMatrix similarity;
  std::vector<TokenPosition> positions;
  std::size_t grid_h = 0, grid_w = 0;
  std::size_t n = 0;
};

inline Inference infer(const ModelParams& params, const ModelConfig& cfg, const EncodedImage& features,
                       const TokenMatrix& text, const ExemplarBoxes& boxes) {
  GradTape tape;
  ParamBinder bind(tape);
  auto fp = forward(params, cfg, features, text, boxes, bind);
  SimilarityMatrix sm{fp.decoded.scores.value(), fp.selected, fp.decoded.centers.value(), fp.p};
  return {std::move(sm), std::move(fp.positions), fp.grid_h, fp.grid_w, fp.n};
}

}  // namespace ovc

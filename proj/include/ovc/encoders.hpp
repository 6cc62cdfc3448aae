// Copyright 2026 The ovcount Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ovc/pyramid.hpp"
#include "ovc/random.hpp"
#include "ovc/tensor.hpp"

// Deterministic stand-ins for the frozen image and text encoders. They let the
// whole pipeline run without pretrained weights; real features can be loaded
// from OVCT files instead (see feature_io.hpp).
namespace ovc {

/// Non-overlapping patch means: H x W x C -> (H/s) x (W/s) x C.
inline Tensor patch_means(const Tensor& image, std::size_t stride) {
  detail::require_rank(image, 3, "patch_means");
  const std::size_t H = image.dim(0), W = image.dim(1), C = image.dim(2);
  if (stride == 0 || H % stride || W % stride) {
    throw ShapeError("patch_means: " + to_string(image.dims()) + " not divisible by stride " + std::to_string(stride));
  }
  const std::size_t h = H / stride, w = W / stride;
  std::vector<double> out(h * w * C, 0.0);
  const double inv = 1.0 / static_cast<double>(stride * stride);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < C; ++c) out[((y / stride) * w + x / stride) * C + c] += image(y, x, c);
  for (double& v : out) v *= inv;
  return Tensor({h, w, C}, std::move(out));
}

struct EncodedImage {
  FeaturePyramid cv;  // general-vision pyramid
  PyramidLevel rs;    // remote-sensing map
};

class FixtureImageEncoder {
 public:
  static constexpr std::size_t kImageChannels = 3;

  std::vector<std::size_t> cv_strides{8, 16, 32};
  std::vector<Linear> cv_proj;
  std::size_t rs_stride = 16;
  Linear rs_proj;

  static FixtureImageEncoder from_seed(std::uint64_t seed, const std::vector<std::size_t>& cv_channels = {8, 16, 32},
                                       std::size_t rs_channels = 16) {
    if (cv_channels.size() != 3) throw ConfigError("fixture image encoder has exactly 3 pyramid levels");
    Rng rng(derive_seed(seed, "fixture-image-encoder"));
    FixtureImageEncoder e;
    for (auto c : cv_channels) e.cv_proj.push_back(affine(kImageChannels, c, rng));
    e.rs_proj = affine(kImageChannels, rs_channels, rng);
    return e;
  }

  std::size_t required_divisor() const {
    std::size_t m = rs_stride;
    for (auto s : cv_strides) m = std::max(m, s);
    return m;
  }

  EncodedImage encode(const Tensor& image) const {
    detail::require_rank(image, 3, "fixture image encoder");
    if (image.dim(2) != kImageChannels) throw ShapeError("fixture image encoder expects 3 channels");
    const std::size_t div = required_divisor();
    if (image.dim(0) % div || image.dim(1) % div || image.dim(0) == 0 || image.dim(1) == 0) {
      throw ShapeError("fixture image encoder: image " + to_string(image.dims()) + " not divisible by " +
                       std::to_string(div));
    }
    std::vector<PyramidLevel> levels;
    for (std::size_t l = 0; l < cv_strides.size(); ++l) {
      levels.push_back({cv_strides[l], project_1x1(patch_means(image, cv_strides[l]), cv_proj[l].weight, cv_proj[l].bias)});
    }
    return {FeaturePyramid(std::move(levels)),
            {rs_stride, project_1x1(patch_means(image, rs_stride), rs_proj.weight, rs_proj.bias)}};
  }

 private:
  static Linear affine(std::size_t in, std::size_t out, Rng& rng) {
    return {rng.normal_tensor({in, out}, 1.0), rng.normal_tensor({out}, 0.1)};
  }
};

template <either_const_of<FixtureImageEncoder> E, class F>
void for_each_tensor(E& e, const std::string& prefix, F&& f) {
  for (std::size_t i = 0; i < e.cv_proj.size(); ++i) for_each_tensor(e.cv_proj[i], prefix + ".cv" + std::to_string(i), f);
  for_each_tensor(e.rs_proj, prefix + ".rs", f);
}

inline EncodedImage fixture_image_encoder(const Tensor& image, std::uint64_t seed) {
  return FixtureImageEncoder::from_seed(seed).encode(image);
}

/// Whitespace tokenizer mapping each word to a hashed id in [0, vocab).
inline std::vector<std::uint32_t> tokenize(std::string_view prompt, std::size_t vocab) {
  std::vector<std::uint32_t> ids;
  std::istringstream in{std::string(prompt)};
  std::string word;
  while (in >> word) ids.push_back(static_cast<std::uint32_t>(fnv1a(word) % vocab));
  return ids;
}

class FixtureTextEncoder {
 public:
  Tensor table;  // vocab x d

  static FixtureTextEncoder from_seed(std::uint64_t seed, std::size_t vocab = 512, std::size_t width = 32) {
    Rng rng(derive_seed(seed, "fixture-text-encoder"));
    return {rng.normal_tensor({vocab, width}, 1.0 / std::sqrt(static_cast<double>(width)))};
  }

  std::size_t vocab() const { return table.dim(0); }
  std::size_t width() const { return table.dim(1); }

  TokenMatrix encode(std::span<const std::uint32_t> ids) const {
    if (ids.empty()) throw ValueError("text encoder: empty prompt");
    std::vector<std::size_t> rows;
    for (auto id : ids) {
      if (id >= vocab()) throw ValueError("text encoder: token id " + std::to_string(id) + " outside vocabulary");
      rows.push_back(id);
    }
    return {gather_rows(table, rows), TokenRole::text};
  }

  TokenMatrix encode(std::string_view prompt) const {
    const auto ids = tokenize(prompt, vocab());
    return encode(ids);
  }
};

template <either_const_of<FixtureTextEncoder> E, class F>
void for_each_tensor(E& e, const std::string& prefix, F&& f) {
  f(prefix + ".table", e.table);
}

inline TokenMatrix fixture_text_encoder(std::span<const std::uint32_t> ids, std::uint64_t seed) {
  return FixtureTextEncoder::from_seed(seed).encode(ids);
}

}  // namespace ovc

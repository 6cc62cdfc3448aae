// Copyright 2026 The ovcount Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include "ovc/error.hpp"
#include "ovc/random.hpp"
#include "ovc/tensor.hpp"

namespace ovc {

/// One feature map of a pyramid: `stride` image pixels per cell.
struct PyramidLevel {
  std::size_t stride = 1;
  Tensor map;  // h x w x C

  std::size_t height() const { return map.dim(0); }
  std::size_t width() const { return map.dim(1); }
  std::size_t channels() const { return map.dim(2); }
};

/// Multi-level feature maps ordered from fine to coarse.
///
/// Strides are non-decreasing. Injected pyramids keep every level on the query
/// grid, so equal strides are legal there.
class FeaturePyramid {
 public:
  FeaturePyramid() = default;
  explicit FeaturePyramid(std::vector<PyramidLevel> levels) : levels_(std::move(levels)) {
    for (std::size_t i = 0; i < levels_.size(); ++i) {
      const auto& l = levels_[i];
      detail::require_rank(l.map, 3, "FeaturePyramid level");
      if (l.stride == 0) throw ValueError("FeaturePyramid: zero stride");
      if (l.height() * l.width() == 0) throw ShapeError("FeaturePyramid: empty level " + std::to_string(i));
      if (i > 0 && l.stride < levels_[i - 1].stride) throw ValueError("FeaturePyramid: strides must not decrease");
    }
  }

  const std::vector<PyramidLevel>& levels() const { return levels_; }
  const PyramidLevel& level(std::size_t i) const { return levels_.at(i); }
  std::size_t size() const { return levels_.size(); }
  bool empty() const { return levels_.empty(); }

  /// Total number of cells over all levels.
  std::size_t cell_count() const {
    std::size_t n = 0;
    for (const auto& l : levels_) n += l.height() * l.width();
    return n;
  }

 private:
  std::vector<PyramidLevel> levels_;
};

enum class TokenRole { image, exemplar, text, fused };

inline std::string_view to_string(TokenRole r) {
  switch (r) {
    case TokenRole::image: return "image";
    case TokenRole::exemplar: return "exemplar";
    case TokenRole::text: return "text";
    case TokenRole::fused: return "fused";
  }
  return "?";
}

/// A count x d set of tokens tagged with what produced them.
struct TokenMatrix {
  Tensor tokens;  // count x d
  TokenRole role = TokenRole::image;

  TokenMatrix() : tokens(Tensor::zeros({0, 0})) {}
  TokenMatrix(Tensor t, TokenRole r) : tokens(std::move(t)), role(r) {
    detail::require_rank(tokens, 2, "TokenMatrix");
  }

  std::size_t count() const { return tokens.dim(0); }
  std::size_t width() const { return tokens.dim(1); }
};

struct Box {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  bool has_area() const { return x_max > x_min && y_max > y_min; }
  friend bool operator==(const Box&, const Box&) = default;
};

struct Point2 {
  double x = 0, y = 0;
  friend bool operator==(const Point2&, const Point2&) = default;
};

/// Exemplar boxes in image pixel coordinates.
struct ExemplarBoxes {
  std::vector<Box> boxes;

  void validate(std::size_t image_w, std::size_t image_h) const {
    for (const auto& b : boxes) {
      if (!b.has_area()) throw ValueError("exemplar box has no area");
      if (b.x_min < 0 || b.y_min < 0 || b.x_max > static_cast<double>(image_w) ||
          b.y_max > static_cast<double>(image_h)) {
        throw ValueError("exemplar box outside image bounds");
      }
    }
  }
  std::size_t size() const { return boxes.size(); }
  bool empty() const { return boxes.empty(); }
};

/// Affine map x W + b with W in x out.
struct Linear {
  Tensor weight;
  Tensor bias;

  std::size_t in() const { return weight.dim(0); }
  std::size_t out() const { return weight.dim(1); }

  static Linear init(std::size_t in, std::size_t out, Rng& rng, double gain = 1.0) {
    return {rng.normal_tensor({in, out}, gain / std::sqrt(static_cast<double>(in))), Tensor::zeros({out})};
  }
  static Linear zeros(std::size_t in, std::size_t out) { return {Tensor::zeros({in, out}), Tensor::zeros({out})}; }
};

/// Matches T and const T, so parameter visitors serve both mutable and
/// read-only traversals.
template <class Self, class T>
concept either_const_of = std::same_as<std::remove_const_t<Self>, T>;

template <either_const_of<Linear> L, class F>
void for_each_tensor(L& l, const std::string& prefix, F&& f) {
  f(prefix + ".weight", l.weight);
  f(prefix + ".bias", l.bias);
}

}  // namespace ovc

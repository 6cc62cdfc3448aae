// Copyright 2026 The ovcount Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "ovc/attention.hpp"
#include "ovc/autodiff.hpp"
#include "ovc/pyramid.hpp"
#include "ovc/tensor.hpp"

namespace ovc {

struct RoiAlignConfig {
  std::size_t output_size = 7;
  std::size_t samples_per_cell = 2;
};

namespace detail {

struct SampleWeight {
  std::size_t cell;  // y * w + x in the source map
  double weight;
};

// Each output bin averages samples^2 bilinear taps at regular sub-positions.
// The box is mapped to feature coordinates with a half-cell offset so that a
// pixel-space cell center lands on an integer feature coordinate.
inline std::vector<std::vector<SampleWeight>> roi_align_taps(std::size_t h, std::size_t w, const Box& box,
                                                             std::size_t stride, const RoiAlignConfig& cfg) {
  if (stride == 0) throw ValueError("roi_align: zero stride");
  if (!box.has_area()) throw ValueError("roi_align: box has zero or negative area");
  if (cfg.output_size == 0 || cfg.samples_per_cell == 0) throw ValueError("roi_align: empty output or sampling grid");
  const double st = static_cast<double>(stride);
  const double x0 = box.x_min / st - 0.5, y0 = box.y_min / st - 0.5;
  const double bin_w = box.width() / st / static_cast<double>(cfg.output_size);
  const double bin_h = box.height() / st / static_cast<double>(cfg.output_size);
  const std::size_t s = cfg.output_size, n = cfg.samples_per_cell;
  const double per_sample = 1.0 / static_cast<double>(n * n);

  std::vector<std::vector<SampleWeight>> taps(s * s);
  for (std::size_t by = 0; by < s; ++by) {
    for (std::size_t bx = 0; bx < s; ++bx) {
      auto& cell = taps[by * s + bx];
      for (std::size_t iy = 0; iy < n; ++iy) {
        double y = y0 + (static_cast<double>(by) + (static_cast<double>(iy) + 0.5) / static_cast<double>(n)) * bin_h;
        y = std::clamp(y, 0.0, static_cast<double>(h - 1));
        const auto ylo = static_cast<std::size_t>(std::floor(y));
        const std::size_t yhi = std::min(ylo + 1, h - 1);
        const double ly = y - static_cast<double>(ylo);
        for (std::size_t ix = 0; ix < n; ++ix) {
          double x =
              x0 + (static_cast<double>(bx) + (static_cast<double>(ix) + 0.5) / static_cast<double>(n)) * bin_w;
          x = std::clamp(x, 0.0, static_cast<double>(w - 1));
          const auto xlo = static_cast<std::size_t>(std::floor(x));
          const std::size_t xhi = std::min(xlo + 1, w - 1);
          const double lx = x - static_cast<double>(xlo);
          cell.push_back({ylo * w + xlo, per_sample * (1 - ly) * (1 - lx)});
          cell.push_back({ylo * w + xhi, per_sample * (1 - ly) * lx});
          cell.push_back({yhi * w + xlo, per_sample * ly * (1 - lx)});
          cell.push_back({yhi * w + xhi, per_sample * ly * lx});
        }
      }
    }
  }
  return taps;
}

}  // namespace detail

/// RoIAlign of one box (image pixels) over an h x w x C map with the given
/// stride. Returns s x s x C.
inline Var roi_align(Var map, const Box& box, std::size_t stride, const RoiAlignConfig& cfg = {}) {
  const Tensor& m = map.value();
  detail::require_rank(m, 3, "roi_align");
  const std::size_t h = m.dim(0), w = m.dim(1), c = m.dim(2);
  if (h == 0 || w == 0) throw ShapeError("roi_align: empty map");
  auto taps = detail::roi_align_taps(h, w, box, stride, cfg);
  const std::size_t s = cfg.output_size;
  std::vector<double> out(s * s * c, 0.0);
  const auto src = m.data();
  for (std::size_t cell = 0; cell < taps.size(); ++cell)
    for (const auto& t : taps[cell])
      for (std::size_t ch = 0; ch < c; ++ch) out[cell * c + ch] += t.weight * src[t.cell * c + ch];
  return map.tape().record(Tensor({s, s, c}, std::move(out)), {map},
                           [taps = std::move(taps), c](const Tensor&, auto g, auto in) {
                             for (std::size_t cell = 0; cell < taps.size(); ++cell)
                               for (const auto& t : taps[cell])
                                 for (std::size_t ch = 0; ch < c; ++ch)
                                   (*in[0])[t.cell * c + ch] += t.weight * g[cell * c + ch];
                           });
}

inline Tensor roi_align(const Tensor& map, const Box& box, std::size_t stride, const RoiAlignConfig& cfg = {}) {
  GradTape tape;
  return roi_align(tape.constant(map), box, stride, cfg).value();
}

/// One token per (box, level), box-major: RoIAlign, mean-pool over the RoI,
/// then the level's projection to the common width. Empty boxes give 0 x d.
inline Var exemplar_tokens(std::span<const Var> level_maps, std::span<const std::size_t> strides,
                           const ExemplarBoxes& boxes, const std::vector<Linear>& proj, const RoiAlignConfig& cfg,
                           ParamBinder& bind) {
  if (level_maps.size() != proj.size() || strides.size() != proj.size()) {
    throw ShapeError("exemplar tokens: " + std::to_string(level_maps.size()) + " levels but " +
                     std::to_string(proj.size()) + " projections");
  }
  if (proj.empty()) throw ShapeError("exemplar tokens: no pyramid levels");
  const std::size_t d = proj.front().out();
  if (boxes.empty()) return bind.tape().constant(Tensor::zeros({0, d}));
  std::vector<Var> rows;
  rows.reserve(boxes.size() * proj.size());
  for (const Box& box : boxes.boxes) {
    for (std::size_t l = 0; l < proj.size(); ++l) {
      const std::size_t c = level_maps[l].value().dim(2);
      if (proj[l].in() != c || proj[l].out() != d) throw ShapeError("exemplar projection " + std::to_string(l) + " has wrong shape");
      const std::size_t s = cfg.output_size;
      Var pooled = column_mean(reshape(roi_align(level_maps[l], box, strides[l], cfg), {s * s, c}));
      rows.push_back(apply(proj[l], reshape(pooled, {1, c}), bind));
    }
  }
  return concat_rows(rows);
}

inline TokenMatrix extract_exemplar_tokens(const FeaturePyramid& pyramid, const ExemplarBoxes& boxes,
                                           const std::vector<Linear>& proj, const RoiAlignConfig& cfg = {}) {
  GradTape tape;
  ParamBinder bind(tape);
  std::vector<Var> maps;
  std::vector<std::size_t> strides;
  for (const auto& l : pyramid.levels()) {
    maps.push_back(tape.constant(l.map));
    strides.push_back(l.stride);
  }
  return {exemplar_tokens(maps, strides, boxes, proj, cfg, bind).value(), TokenRole::exemplar};
}

}  // namespace ovc

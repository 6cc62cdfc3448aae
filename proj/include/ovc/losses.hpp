// Copyright 2026 The ovcount Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "ovc/autodiff.hpp"
#include "ovc/matching.hpp"
#include "ovc/tensor.hpp"

namespace ovc {

struct LossWeights {
  double loc = 1.0;
  double cls = 1.0;

  void validate() const {
    if (!std::isfinite(loc) || !std::isfinite(cls) || loc < 0 || cls < 0) {
      throw ValueError("loss weights must be finite and non-negative");
    }
  }
};

struct FocalParams {
  double alpha = 0.25;
  double gamma = 2.0;
};

namespace detail {

inline void check_focal(const Tensor& probs, const Tensor& targets, const FocalParams& fp) {
  if (probs.dims() != targets.dims()) throw ShapeError("focal_loss: targets shape differs from scores");
  if (probs.numel() == 0) throw ShapeError("focal_loss: no entries");
  if (!(fp.alpha >= 0 && fp.alpha <= 1) || !(fp.gamma >= 0)) throw ValueError("focal_loss: need alpha in [0,1], gamma >= 0");
  for (double p : probs.data())
    if (!(p > 0.0 && p < 1.0)) throw ValueError("focal_loss: score outside (0, 1)");
  for (double t : targets.data())
    if (t != 0.0 && t != 1.0) throw ValueError("focal_loss: targets must be 0 or 1");
}

// x^e with the convention that the gamma * x^(gamma-1) factor vanishes at gamma = 0.
inline double gamma_factor(double x, double gamma) { return gamma == 0.0 ? 0.0 : gamma * std::pow(x, gamma - 1.0); }

inline double focal_term(double p, double t, const FocalParams& fp) {
  if (t == 1.0) return -fp.alpha * std::pow(1.0 - p, fp.gamma) * std::log(p);
  return -(1.0 - fp.alpha) * std::pow(p, fp.gamma) * std::log(1.0 - p);
}

inline double focal_term_grad(double p, double t, const FocalParams& fp) {
  if (t == 1.0) {
    return -fp.alpha * (-gamma_factor(1.0 - p, fp.gamma) * std::log(p) + std::pow(1.0 - p, fp.gamma) / p);
  }
  return -(1.0 - fp.alpha) * (gamma_factor(p, fp.gamma) * std::log(1.0 - p) - std::pow(p, fp.gamma) / (1.0 - p));
}

}  // namespace detail

/// Mean sigmoid focal loss over all entries; positives weighted by alpha,
/// negatives by 1 - alpha.
inline double focal_loss(const Tensor& probs, const Tensor& targets, const FocalParams& fp = {}) {
  detail::check_focal(probs, targets, fp);
  double s = 0.0;
  for (std::size_t i = 0; i < probs.numel(); ++i) s += detail::focal_term(probs[i], targets[i], fp);
  return s / static_cast<double>(probs.numel());
}

inline Var focal_loss(Var probs, const Tensor& targets, const FocalParams& fp = {}) {
  const double value = focal_loss(probs.value(), targets, fp);
  return probs.tape().record(Tensor::scalar(value), {probs}, [probs, targets, fp](const Tensor&, auto g, auto in) {
    const Tensor& p = probs.value();
    const double w = g[0] / static_cast<double>(p.numel());
    for (std::size_t i = 0; i < p.numel(); ++i) (*in[0])[i] += w * detail::focal_term_grad(p[i], targets[i], fp);
  });
}

/// Targets for the classification loss: a row is positive on every prompt
/// column iff its query is matched to a ground-truth point.
inline Tensor focal_targets(std::size_t rows, std::size_t cols, const MatchResult& match) {
  std::vector<double> t(rows * cols, 0.0);
  for (const auto& [pi, gi] : match.pairs) {
    if (pi >= rows) throw ValueError("focal_targets: match index out of range");
    std::fill_n(t.begin() + static_cast<std::ptrdiff_t>(pi * cols), cols, 1.0);
  }
  return Tensor({rows, cols}, std::move(t));
}

/// Mean over matched pairs of |dx| + |dy|; zero when nothing is matched.
inline double loc_loss(const MatchResult& match, std::span<const Point2> pred, std::span<const Point2> gt) {
  if (match.pairs.empty()) return 0.0;
  double s = 0.0;
  for (const auto& [pi, gi] : match.pairs) {
    if (pi >= pred.size() || gi >= gt.size()) throw ValueError("loc_loss: match index out of range");
    s += l1_distance(pred[pi], gt[gi]);
  }
  return s / static_cast<double>(match.pairs.size());
}

inline Var loc_loss(Var centers, const MatchResult& match, std::span<const Point2> gt) {
  const auto pred = to_points(centers.value());
  const double value = loc_loss(match, pred, gt);
  std::vector<Point2> gt_copy(gt.begin(), gt.end());
  return centers.tape().record(
      Tensor::scalar(value), {centers}, [centers, match, gt_copy](const Tensor&, auto g, auto in) {
        if (match.pairs.empty()) return;
        const Tensor& c = centers.value();
        const double w = g[0] / static_cast<double>(match.pairs.size());
        auto sign = [](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); };
        for (const auto& [pi, gi] : match.pairs) {
          (*in[0])[pi * 2] += w * sign(c(pi, 0) - gt_copy[gi].x);
          (*in[0])[pi * 2 + 1] += w * sign(c(pi, 1) - gt_copy[gi].y);
        }
      });
}

inline double total_loss(double loc, double cls, const LossWeights& w) {
  w.validate();
  if (!std::isfinite(loc) || !std::isfinite(cls)) throw ValueError("total_loss: non-finite loss term");
  return w.loc * loc + w.cls * cls;
}

inline Var total_loss(Var loc, Var cls, const LossWeights& w) {
  w.validate();
  return add(scale(loc, w.loc), scale(cls, w.cls));
}

}  // namespace ovc

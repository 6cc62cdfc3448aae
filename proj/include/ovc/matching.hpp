// Copyright 2026 The ovcount Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "ovc/pyramid.hpp"

namespace ovc {

struct MatchResult {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (prediction, ground truth), sorted
  std::vector<std::size_t> unmatched_predictions;
  std::vector<std::size_t> unmatched_ground_truth;
  double cost = 0.0;
};

inline double l1_distance(const Point2& a, const Point2& b) { return std::abs(a.x - b.x) + std::abs(a.y - b.y); }

namespace detail {

// Shortest-augmenting-path Hungarian method with potentials for an r x c cost
// matrix, r <= c. Returns the column assigned to each row. Scans run in index
// order with strict comparisons, so ties resolve to the smallest index.
inline std::vector<std::size_t> solve_assignment(const std::vector<double>& cost, std::size_t r, std::size_t c) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(r + 1, 0.0), v(c + 1, 0.0);
  std::vector<std::size_t> owner(c + 1, 0), way(c + 1, 0);
  for (std::size_t i = 1; i <= r; ++i) {
    owner[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(c + 1, inf);
    std::vector<char> used(c + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = owner[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= c; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * c + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= c; ++j) {
        if (used[j]) {
          u[owner[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (owner[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      owner[j0] = owner[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row_to_col(r, 0);
  for (std::size_t j = 1; j <= c; ++j)
    if (owner[j] != 0) row_to_col[owner[j] - 1] = j - 1;
  return row_to_col;
}

}  // namespace detail

/// Minimum total-L1 one-to-one assignment of size min(m, g) between predicted
/// centers and ground-truth points.
inline MatchResult hungarian_match(std::span<const Point2> pred, std::span<const Point2> gt) {
  MatchResult res;
  const std::size_t m = pred.size(), g = gt.size();
  if (m == 0 || g == 0) {
    for (std::size_t i = 0; i < m; ++i) res.unmatched_predictions.push_back(i);
    for (std::size_t j = 0; j < g; ++j) res.unmatched_ground_truth.push_back(j);
    return res;
  }
  const bool pred_rows = m <= g;
  const std::size_t r = pred_rows ? m : g, c = pred_rows ? g : m;
  std::vector<double> cost(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j)
      cost[i * c + j] = pred_rows ? l1_distance(pred[i], gt[j]) : l1_distance(pred[j], gt[i]);
  const auto assign = detail::solve_assignment(cost, r, c);
  std::vector<char> pred_used(m, 0), gt_used(g, 0);
  for (std::size_t i = 0; i < r; ++i) {
    const auto pi = pred_rows ? i : assign[i];
    const auto gi = pred_rows ? assign[i] : i;
    res.pairs.emplace_back(pi, gi);
    pred_used[pi] = gt_used[gi] = 1;
    res.cost += l1_distance(pred[pi], gt[gi]);
  }
  std::sort(res.pairs.begin(), res.pairs.end());
  for (std::size_t i = 0; i < m; ++i)
    if (!pred_used[i]) res.unmatched_predictions.push_back(i);
  for (std::size_t j = 0; j < g; ++j)
    if (!gt_used[j]) res.unmatched_ground_truth.push_back(j);
  return res;
}

inline std::vector<Point2> to_points(const Tensor& xy) {
  detail::require_rank(xy, 2, "to_points");
  if (xy.cols() != 2) throw ShapeError("point tensor must be n x 2");
  std::vector<Point2> pts(xy.rows());
  for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = {xy(i, 0), xy(i, 1)};
  return pts;
}

}  // namespace ovc

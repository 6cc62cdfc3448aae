// Copyright 2026 The ovcount Authors
// SPDX-License-Identifier: Apache-2.0

// Reference implementations written from the definitions, sharing no code
// with the library beyond plain data containers.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

namespace oracle {

using Mat = std::vector<std::vector<double>>;

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat c(a.size(), std::vector<double>(b.empty() ? 0 : b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < c[i].size(); ++j)
      for (std::size_t r = 0; r < b.size(); ++r) c[i][j] += a[i][r] * b[r][j];
  return c;
}

inline std::vector<double> softmax(std::vector<double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  double s = 0.0;
  for (double& x : v) s += (x = std::exp(x - m));
  for (double& x : v) x /= s;
  return v;
}

inline Mat transpose(const Mat& a) {
  Mat t(a.empty() ? 0 : a[0].size(), std::vector<double>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) t[j][i] = a[i][j];
  return t;
}

/// Per head h: softmax(Q_h K_h^T / sqrt(d/heads)) V_h over column block h of the
/// projections, heads concatenated, then W_O.
inline Mat attention(const Mat& q, const Mat& kv, const Mat& wq, const Mat& wk, const Mat& wv, const Mat& wo,
                     std::size_t heads) {
  const Mat Q = matmul(q, wq), K = matmul(kv, wk), V = matmul(kv, wv);
  const std::size_t d = wq.size(), dh = d / heads;
  Mat cat(q.size(), std::vector<double>(d, 0.0));
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < q.size(); ++i) {
      std::vector<double> logits(kv.size());
      for (std::size_t j = 0; j < kv.size(); ++j) {
        double dot = 0.0;
        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) dot += Q[i][c] * K[j][c];
        logits[j] = dot / std::sqrt(static_cast<double>(dh));
      }
      const auto w = softmax(logits);
      for (std::size_t j = 0; j < kv.size(); ++j)
        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) cat[i][c] += w[j] * V[j][c];
    }
  }
  return matmul(cat, wo);
}

/// Value of an H x W x C map (flat, row-major) at fractional (y, x), with the
/// coordinates clamped into [0, H-1] x [0, W-1].
inline double bilinear(const std::vector<double>& map, std::size_t H, std::size_t W, std::size_t C, double y,
                       double x, std::size_t c) {
  y = std::min(std::max(y, 0.0), static_cast<double>(H - 1));
  x = std::min(std::max(x, 0.0), static_cast<double>(W - 1));
  const auto y0 = static_cast<std::size_t>(y), x0 = static_cast<std::size_t>(x);
  const std::size_t y1 = y0 + 1 < H ? y0 + 1 : y0, x1 = x0 + 1 < W ? x0 + 1 : x0;
  const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
  auto at = [&](std::size_t yy, std::size_t xx) { return map[(yy * W + xx) * C + c]; };
  return at(y0, x0) * (1 - fy) * (1 - fx) + at(y0, x1) * (1 - fy) * fx + at(y1, x0) * fy * (1 - fx) +
         at(y1, x1) * fy * fx;
}

/// Align-corners-false resize: destination cell i samples source (i+0.5)*in/out-0.5.
inline std::vector<double> resize(const std::vector<double>& map, std::size_t H, std::size_t W, std::size_t C,
                                  std::size_t oh, std::size_t ow) {
  std::vector<double> out(oh * ow * C);
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j)
      for (std::size_t c = 0; c < C; ++c) {
        const double sy = (i + 0.5) * static_cast<double>(H) / static_cast<double>(oh) - 0.5;
        const double sx = (j + 0.5) * static_cast<double>(W) / static_cast<double>(ow) - 0.5;
        out[(i * ow + j) * C + c] = bilinear(map, H, W, C, sy, sx, c);
      }
  return out;
}

/// RoIAlign by direct sampling: the pixel box maps to feature coordinates as
/// v / stride - 0.5, each of the s x s bins averages n x n evenly spaced samples.
inline std::vector<double> roi_align(const std::vector<double>& map, std::size_t H, std::size_t W, std::size_t C,
                                     double x0, double y0, double x1, double y1, double stride, std::size_t s,
                                     std::size_t n) {
  const double fx0 = x0 / stride - 0.5, fy0 = y0 / stride - 0.5;
  const double bw = (x1 - x0) / stride / s, bh = (y1 - y0) / stride / s;
  std::vector<double> out(s * s * C, 0.0);
  for (std::size_t by = 0; by < s; ++by)
    for (std::size_t bx = 0; bx < s; ++bx)
      for (std::size_t c = 0; c < C; ++c) {
        double acc = 0.0;
        for (std::size_t iy = 0; iy < n; ++iy)
          for (std::size_t ix = 0; ix < n; ++ix) {
            const double y = fy0 + bh * (by + (iy + 0.5) / n);
            const double x = fx0 + bw * (bx + (ix + 0.5) / n);
            acc += bilinear(map, H, W, C, y, x, c);
          }
        out[(by * s + bx) * C + c] = acc / static_cast<double>(n * n);
      }
  return out;
}

/// Minimum total cost over all injective assignments of the smaller side.
inline double brute_assignment(const Mat& cost) {
  const std::size_t m = cost.size(), g = m ? cost[0].size() : 0;
  if (m == 0 || g == 0) return 0.0;
  const bool rows_small = m <= g;
  const std::size_t small = rows_small ? m : g, big = rows_small ? g : m;
  std::vector<std::size_t> perm(big);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < small; ++i) c += rows_small ? cost[i][perm[i]] : cost[perm[i]][i];
    best = std::min(best, c);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

/// Stable sort by descending score keeps the smaller index first on ties.
inline std::vector<std::size_t> topk(const std::vector<double>& scores, std::size_t k) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  idx.resize(std::min(k, idx.size()));
  return idx;
}

/// Central differences with step h.
inline std::vector<double> numeric_gradient(const std::function<double(const std::vector<double>&)>& f,
                                            std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||, floor).
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-8) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(d) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

inline double focal_term(double p, double t, double alpha, double gamma) {
  return t == 1.0 ? -alpha * std::pow(1 - p, gamma) * std::log(p)
                  : -(1 - alpha) * std::pow(p, gamma) * std::log(1 - p);
}

/// Exhaustive calibration: MAE at every grid point, smallest value on ties.
inline double best_threshold(const std::vector<std::vector<double>>& confidences, const std::vector<double>& gts,
                             const std::vector<double>& grid) {
  double best_t = grid[0], best = std::numeric_limits<double>::infinity();
  for (double t : grid) {
    double mae = 0.0;
    for (std::size_t i = 0; i < confidences.size(); ++i) {
      double c = 0.0;
      for (double v : confidences[i]) c += v > t ? 1.0 : 0.0;
      mae += std::abs(c - gts[i]);
    }
    mae /= static_cast<double>(confidences.size());
    if (mae < best || (mae == best && t < best_t)) {
      best = mae;
      best_t = t;
    }
  }
  return best_t;
}

}  // namespace oracle

// Copyright 2026 The ovcount Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "ovc/error.hpp"
#include "ovc/fusion.hpp"

namespace ovc::eval {

// ---------------------------------------------------------------------------
// Thresholds

/// 0.05, 0.06, ..., 0.95 built from integers so every entry is exactly i/100.
inline std::vector<double> default_grid() {
  std::vector<double> g;
  for (int i = 5; i <= 95; ++i) g.push_back(i / 100.0);
  return g;
}

/// Zero-shot rule: triple the base threshold (clamped at 1) when the matrix
/// maximum exceeds tau. Identity otherwise.
inline double adaptive_threshold(double max_conf, double sigma, double tau, bool zero_shot) {
  for (double v : {max_conf, sigma, tau})
    if (!(v >= 0.0 && v <= 1.0)) throw ValueError("adaptive_threshold: arguments must lie in [0, 1]");
  if (zero_shot && max_conf > tau) return std::min(3.0 * sigma, 1.0);
  return sigma;
}

/// What calibration needs from one model output.
struct CalibrationItem {
  std::vector<double> confidences;  // per selected token
  double max_confidence = 0.0;
  double gt_count = 0.0;

  static CalibrationItem from(const SimilarityMatrix& sm, double gt) {
    return {sm.confidences(), sm.max_confidence(), gt};
  }
};

inline std::size_t count_above(std::span<const double> conf, double thr) {
  return static_cast<std::size_t>(std::count_if(conf.begin(), conf.end(), [&](double c) { return c > thr; }));
}

struct CalibrationResult {
  double sigma = 0.0;  // base detection threshold
  double tau = 0.0;    // zero-shot tripling trigger
  double mae = 0.0;    // calibration MAE at sigma (plain rule)
  double zero_shot_mae = 0.0;
  std::vector<double> grid;
  std::uint64_t seed = 0;
};

namespace detail {

inline void check_calibration_inputs(std::span<const CalibrationItem> items, std::span<const double> grid) {
  if (items.empty()) throw ValueError("calibration set is empty");
  if (grid.empty()) throw ValueError("threshold grid is empty");
  for (double g : grid)
    if (!(g >= 0.0 && g <= 1.0)) throw ValueError("threshold grid values must lie in [0, 1]");
}

inline double mae_at(std::span<const CalibrationItem> items, double sigma, double tau, bool zero_shot) {
  double s = 0.0;
  for (const auto& it : items) {
    const double thr = adaptive_threshold(it.max_confidence, sigma, tau, zero_shot);
    s += std::abs(static_cast<double>(count_above(it.confidences, thr)) - it.gt_count);
  }
  return s / static_cast<double>(items.size());
}

// Index of the minimum; ties go to the smallest grid value.
inline std::size_t argmin_smallest(std::span<const double> values, std::span<const double> grid) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] < values[best] || (values[i] == values[best] && grid[i] < grid[best])) best = i;
  }
  return best;
}

}  // namespace detail

/// Base threshold by exhaustive grid search on calibration MAE, then tau by the
/// same search on zero-shot adaptive MAE with that base threshold fixed.
inline CalibrationResult calibrate_threshold(std::span<const CalibrationItem> items, std::span<const double> grid,
                                             std::uint64_t seed = 0) {
  detail::check_calibration_inputs(items, grid);

  std::vector<double> plain(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) plain[i] = detail::mae_at(items, grid[i], 1.0, false);
  const auto si = detail::argmin_smallest(plain, grid);

  std::vector<double> zs(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) zs[i] = detail::mae_at(items, grid[si], grid[i], true);
  const auto ti = detail::argmin_smallest(zs, grid);

  return {grid[si], grid[ti], plain[si], zs[ti], {grid.begin(), grid.end()}, seed};
}

inline CalibrationResult calibrate_threshold(std::span<const CalibrationItem> items, std::uint64_t seed = 0) {
  const auto grid = default_grid();
  return calibrate_threshold(items, grid, seed);
}

// ---------------------------------------------------------------------------
// Metrics

struct ErrorMetrics {
  double mae = 0.0;
  double rmse = 0.0;
};

inline ErrorMetrics mae_rmse(std::span<const double> preds, std::span<const double> gts) {
  if (preds.empty()) throw ValueError("mae_rmse: no samples");
  if (preds.size() != gts.size()) throw ValueError("mae_rmse: prediction and ground-truth lengths differ");
  double a = 0.0, s = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double e = preds[i] - gts[i];
    a += std::abs(e);
    s += e * e;
  }
  const double n = static_cast<double>(preds.size());
  return {a / n, std::sqrt(s / n)};
}

enum class Mode { zero_shot, few_shot };

inline std::string to_string(Mode m) { return m == Mode::zero_shot ? "zero-shot" : "few-shot"; }

inline Mode parse_mode(const std::string& s) {
  if (s == "zero-shot") return Mode::zero_shot;
  if (s == "few-shot") return Mode::few_shot;
  throw ConfigError("mode must be zero-shot or few-shot, got '" + s + "'");
}

struct ClassResult {
  std::string label;
  double pred = 0.0;
  double gt = 0.0;
};

struct ClassMetrics {
  double mae = 0.0, rmse = 0.0;
  std::size_t samples = 0;
};

struct EvalReport {
  std::map<std::string, ClassMetrics> per_class;  // lexicographic
  ClassMetrics pooled;
  Mode mode = Mode::few_shot;
  double sigma = 0.0;
  double tau = 0.0;
};

/// Per-class metrics plus pooled metrics over every sample jointly (not the
/// mean of class means).
inline EvalReport per_class_report(std::span<const ClassResult> results, Mode mode, double sigma = 0.0,
                                   double tau = 0.0) {
  if (results.empty()) throw ValueError("per_class_report: no results");
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> by;
  std::vector<double> all_p, all_g;
  for (const auto& r : results) {
    by[r.label].first.push_back(r.pred);
    by[r.label].second.push_back(r.gt);
    all_p.push_back(r.pred);
    all_g.push_back(r.gt);
  }
  EvalReport rep;
  rep.mode = mode;
  rep.sigma = sigma;
  rep.tau = tau;
  for (const auto& [label, pg] : by) {
    const auto m = mae_rmse(pg.first, pg.second);
    rep.per_class[label] = {m.mae, m.rmse, pg.first.size()};
  }
  const auto m = mae_rmse(all_p, all_g);
  rep.pooled = {m.mae, m.rmse, results.size()};
  return rep;
}

inline double round6(double v) {
  const double r = std::round(v * 1e6) / 1e6;
  return r == 0.0 ? 0.0 : r;  // no "-0.0"
}

/// nlohmann's default object type is a std::map, so dump() emits sorted keys.
inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json classes = nlohmann::json::object();
  for (const auto& [label, m] : r.per_class)
    classes[label] = {{"mae", round6(m.mae)}, {"rmse", round6(m.rmse)}, {"samples", m.samples}};
  return {{"mode", to_string(r.mode)},
          {"per_class", classes},
          {"pooled", {{"mae", round6(r.pooled.mae)}, {"rmse", round6(r.pooled.rmse)}, {"samples", r.pooled.samples}}},
          {"thresholds", {{"sigma", round6(r.sigma)}, {"tau", round6(r.tau)}}}};
}

inline nlohmann::json to_json(const CalibrationResult& c) {
  std::vector<double> grid;
  for (double g : c.grid) grid.push_back(round6(g));
  return {{"sigma", round6(c.sigma)}, {"tau", round6(c.tau)},
          {"mae", round6(c.mae)},     {"zero_shot_mae", round6(c.zero_shot_mae)},
          {"grid", grid},             {"seed", c.seed}};
}

inline CalibrationResult calibration_from_json(const nlohmann::json& j) {
  CalibrationResult c;
  c.sigma = j.at("sigma").get<double>();
  c.tau = j.at("tau").get<double>();
  c.mae = j.at("mae").get<double>();
  c.zero_shot_mae = j.at("zero_shot_mae").get<double>();
  c.grid = j.at("grid").get<std::vector<double>>();
  c.seed = j.at("seed").get<std::uint64_t>();
  for (double v : {c.sigma, c.tau})
    if (!(v >= 0.0 && v <= 1.0)) throw FormatError("calibration thresholds must lie in [0, 1]");
  return c;
}

// ---------------------------------------------------------------------------
// Density analysis

struct DensitySample {
  std::string sample_id;
  double gt_count = 0.0;
  double abs_error = 0.0;
};

struct DensityBin {
  double lo = 0.0, hi = 0.0;  // gt-count range
  std::size_t n = 0;
  double mean_abs_err = 0.0;
  double std_abs_err = 0.0;  // population
  std::vector<std::string> members;
};

using DensityCurve = std::vector<DensityBin>;

/// Equal-count bins over samples sorted by ground-truth count (ties by id);
/// the first n % bins bins hold one extra sample.
inline DensityCurve quantile_bins(std::vector<DensitySample> samples, std::size_t bins = 15) {
  if (bins == 0) throw ValueError("quantile_bins: bin count must be positive");
  if (samples.size() < bins) {
    throw ValueError("quantile_bins: " + std::to_string(samples.size()) + " samples for " + std::to_string(bins) +
                     " bins");
  }
  std::sort(samples.begin(), samples.end(), [](const auto& a, const auto& b) {
    return a.gt_count != b.gt_count ? a.gt_count < b.gt_count : a.sample_id < b.sample_id;
  });
  const std::size_t base = samples.size() / bins, extra = samples.size() % bins;
  DensityCurve out;
  std::size_t at = 0;
  for (std::size_t b = 0; b < bins; ++b) {
    const std::size_t size = base + (b < extra ? 1 : 0);
    DensityBin bin;
    bin.n = size;
    bin.lo = samples[at].gt_count;
    bin.hi = samples[at + size - 1].gt_count;
    double s = 0.0;
    for (std::size_t i = at; i < at + size; ++i) {
      s += samples[i].abs_error;
      bin.members.push_back(samples[i].sample_id);
    }
    bin.mean_abs_err = s / static_cast<double>(size);
    double v = 0.0;
    for (std::size_t i = at; i < at + size; ++i) v += std::pow(samples[i].abs_error - bin.mean_abs_err, 2);
    bin.std_abs_err = std::sqrt(v / static_cast<double>(size));
    out.push_back(std::move(bin));
    at += size;
  }
  return out;
}

inline std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", round6(v));
  return buf;
}

inline std::string density_csv(const DensityCurve& c) {
  std::string s = "bin_lo,bin_hi,n,mean_abs_err,std_abs_err\n";
  for (const auto& b : c) {
    s += format_number(b.lo) + "," + format_number(b.hi) + "," + std::to_string(b.n) + "," +
         format_number(b.mean_abs_err) + "," + format_number(b.std_abs_err) + "\n";
  }
  return s;
}

// ---------------------------------------------------------------------------
// Confidence maps

struct GridCell {
  std::size_t row = 0, col = 0;
};

struct ConfidenceMap {
  std::size_t height = 0, width = 0;
  std::vector<double> values;  // row-major; cells without a selected token stay 0
};

/// Rasterizes per-row confidence onto the grid. When several selected tokens
/// land on one cell (one per fused level) the cell keeps the largest.
inline ConfidenceMap rasterize_confidence(const SimilarityMatrix& sm, std::span<const GridCell> token_cells,
                                          std::size_t grid_h, std::size_t grid_w) {
  if (grid_h == 0 || grid_w == 0) throw ValueError("confidence map grid must be non-empty");
  ConfidenceMap m{grid_h, grid_w, std::vector<double>(grid_h * grid_w, 0.0)};
  const auto conf = sm.confidences();
  for (std::size_t r = 0; r < sm.k(); ++r) {
    const auto tok = sm.selected.at(r);
    if (tok >= token_cells.size()) throw ValueError("selected token has no grid position");
    const auto& cell = token_cells[tok];
    if (cell.row >= grid_h || cell.col >= grid_w) throw ValueError("token position outside the grid");
    auto& slot = m.values[cell.row * grid_w + cell.col];
    slot = std::max(slot, conf[r]);
  }
  return m;
}

inline std::string confidence_csv(const ConfidenceMap& m) {
  std::string s;
  char buf[64];
  for (std::size_t r = 0; r < m.height; ++r) {
    for (std::size_t c = 0; c < m.width; ++c) {
      std::snprintf(buf, sizeof buf, "%.9g", m.values[r * m.width + c]);
      if (c) s += ',';
      s += buf;
    }
    s += '\n';
  }
  return s;
}

/// Binary P5, linear scale with the map maximum at 255 (all-zero maps stay 0).
inline std::string confidence_pgm(const ConfidenceMap& m, std::size_t image_h, std::size_t image_w) {
  double mx = 0.0;
  for (double v : m.values) mx = std::max(mx, v);
  std::string s = "P5\n# image " + std::to_string(image_w) + "x" + std::to_string(image_h) + "\n" +
                  std::to_string(m.width) + " " + std::to_string(m.height) + "\n255\n";
  for (double v : m.values) {
    const long px = mx > 0.0 ? std::lround(v / mx * 255.0) : 0;
    s += static_cast<char>(static_cast<unsigned char>(std::clamp(px, 0L, 255L)));
  }
  return s;
}

inline void write_text(const std::filesystem::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << content;
  if (!f) throw IoError("write failed for " + path.string());
}

/// Writes `<stem>.csv` and `<stem>.pgm`.
inline ConfidenceMap export_confidence_map(const SimilarityMatrix& sm, std::span<const GridCell> token_cells,
                                           std::size_t grid_h, std::size_t grid_w, std::size_t image_h,
                                           std::size_t image_w, const std::filesystem::path& stem) {
  auto m = rasterize_confidence(sm, token_cells, grid_h, grid_w);
  auto csv = stem, pgm = stem;
  csv += ".csv";
  pgm += ".pgm";
  write_text(csv, confidence_csv(m));
  write_text(pgm, confidence_pgm(m, image_h, image_w));
  return m;
}

}  // namespace ovc::eval

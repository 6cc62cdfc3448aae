// Copyright 2026 The ovcount Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "oracles.hpp"
#include "ovc/evaluation.hpp"

namespace {

namespace ev = ovc::eval;

ev::CalibrationItem item(std::vector<double> conf, double gt) {
  const double mx = conf.empty() ? 0.0 : *std::max_element(conf.begin(), conf.end());
  return {std::move(conf), mx, gt};
}

TEST(Grid, DefaultSpansFiveToNinetyFive) {
  const auto g = ev::default_grid();
  ASSERT_EQ(g.size(), 91u);
  EXPECT_EQ(g.front(), 0.05);
  EXPECT_EQ(g.back(), 0.95);
  for (std::size_t i = 1; i < g.size(); ++i) EXPECT_NEAR(g[i] - g[i - 1], 0.01, 1e-12);
}

TEST(Calibrate, SingleImageExample) {
  const std::vector<ev::CalibrationItem> items{item({0.9, 0.9, 0.3}, 2)};
  const auto r = ev::calibrate_threshold(items);
  // a count needs confidence strictly above the threshold, so 0.30 already excludes the 0.3 token
  EXPECT_NEAR(r.sigma, 0.30, 1e-12);
  EXPECT_EQ(r.mae, 0.0);
  EXPECT_EQ(r.sigma, oracle::best_threshold({{0.9, 0.9, 0.3}}, {2}, ev::default_grid()));
  for (double t : ev::default_grid()) {
    if (t >= 0.30 && t < 0.9) EXPECT_EQ(ev::count_above(items[0].confidences, t), 2u) << t;
  }
}

TEST(Calibrate, AllOptimalPicksSmallest) {
  const std::vector<ev::CalibrationItem> items{item({0.001, 0.002, 0.0}, 0), item({0.01}, 0)};
  const auto r = ev::calibrate_threshold(items);
  EXPECT_EQ(r.sigma, 0.05);
  EXPECT_EQ(r.tau, 0.05);
  EXPECT_EQ(r.mae, 0.0);
}

TEST(Calibrate, MatchesExhaustiveOracle) {
  ovc::Rng rng(1);
  const auto grid = ev::default_grid();
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<ev::CalibrationItem> items;
    std::vector<std::vector<double>> confs;
    std::vector<double> gts;
    const std::size_t n = 1 + rng.index(12);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> c(1 + rng.index(30));
      for (auto& v : c) v = rng.uniform(0, 1);
      const double gt = static_cast<double>(rng.index(15));
      confs.push_back(c);
      gts.push_back(gt);
      items.push_back(item(c, gt));
    }
    const auto r = ev::calibrate_threshold(items, grid, 3);
    EXPECT_EQ(r.sigma, oracle::best_threshold(confs, gts, grid));
    // optimality over the grid, plain rule
    for (double t : grid) {
      double mae = 0.0;
      for (std::size_t i = 0; i < n; ++i) mae += std::abs(static_cast<double>(ev::count_above(confs[i], t)) - gts[i]);
      EXPECT_LE(r.mae, mae / static_cast<double>(n) + 1e-12);
    }
    // tau minimizes the adaptive zero-shot error with sigma fixed
    for (double tau : grid) {
      double mae = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double thr = ev::adaptive_threshold(items[i].max_confidence, r.sigma, tau, true);
        mae += std::abs(static_cast<double>(ev::count_above(confs[i], thr)) - gts[i]);
      }
      EXPECT_LE(r.zero_shot_mae, mae / static_cast<double>(n) + 1e-12);
    }
    EXPECT_GE(r.mae, 0.0);
    EXPECT_EQ(ev::calibrate_threshold(items, grid, 3).tau, r.tau);
  }
}

TEST(Calibrate, Errors) {
  const std::vector<ev::CalibrationItem> none;
  EXPECT_THROW(ev::calibrate_threshold(none), ovc::ValueError);
  const std::vector<ev::CalibrationItem> one{item({0.5}, 1)};
  const std::vector<double> empty, bad{0.5, 1.5};
  EXPECT_THROW(ev::calibrate_threshold(one, empty), ovc::ValueError);
  EXPECT_THROW(ev::calibrate_threshold(one, bad), ovc::ValueError);
}

TEST(Calibrate, JsonRoundTrip) {
  const std::vector<ev::CalibrationItem> items{item({0.9, 0.2, 0.7}, 2), item({0.4, 0.6}, 1)};
  const auto r = ev::calibrate_threshold(items, 17);
  const auto back = ev::calibration_from_json(ev::to_json(r));
  EXPECT_EQ(back.sigma, r.sigma);
  EXPECT_EQ(back.tau, r.tau);
  EXPECT_EQ(back.seed, 17u);
  EXPECT_EQ(ev::to_json(back), ev::to_json(r));
}

TEST(Adaptive, Examples) {
  EXPECT_NEAR(ev::adaptive_threshold(0.9, 0.2, 0.8, true), 0.6, 1e-15);
  EXPECT_EQ(ev::adaptive_threshold(0.8, 0.2, 0.8, true), 0.2);
  EXPECT_EQ(ev::adaptive_threshold(0.7, 0.2, 0.8, true), 0.2);
  EXPECT_EQ(ev::adaptive_threshold(0.9, 0.5, 0.1, true), 1.0);
  EXPECT_THROW(ev::adaptive_threshold(1.2, 0.5, 0.1, true), ovc::ValueError);
}

TEST(Adaptive, IdentityOutsideZeroShot) {
  ovc::Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const double m = rng.uniform(0, 1), s = rng.uniform(0, 1), t = rng.uniform(0, 1);
    EXPECT_EQ(ev::adaptive_threshold(m, s, t, false), s);
    const double z = ev::adaptive_threshold(m, s, t, true);
    EXPECT_TRUE(z == s || z == std::min(3 * s, 1.0));
    EXPECT_LE(z, 1.0);
  }
}

TEST(Metrics, MaeRmse) {
  const std::vector<double> p{1, 3}, g{2, 1};
  const auto m = ev::mae_rmse(p, g);
  EXPECT_NEAR(m.mae, 1.5, 1e-15);
  EXPECT_NEAR(m.rmse, std::sqrt(2.5), 1e-15);
  EXPECT_NEAR(m.rmse, 1.58114, 1e-5);
  const auto z = ev::mae_rmse(g, g);
  EXPECT_EQ(z.mae, 0.0);
  EXPECT_EQ(z.rmse, 0.0);
  const std::vector<double> empty, three{1, 2, 3};
  EXPECT_THROW(ev::mae_rmse(empty, empty), ovc::ValueError);
  EXPECT_THROW(ev::mae_rmse(three, g), ovc::ValueError);
}

TEST(Metrics, RmseAtLeastMae) {
  ovc::Rng rng(3);
  for (int t = 0; t < 500; ++t) {
    std::vector<double> p(1 + rng.index(20)), g(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = static_cast<double>(rng.index(50));
      g[i] = static_cast<double>(rng.index(50));
    }
    const auto m = ev::mae_rmse(p, g);
    EXPECT_GE(m.rmse + 1e-12, m.mae);
  }
}

TEST(Report, PooledIsNotMeanOfMeans) {
  const std::vector<ev::ClassResult> r{{"A", 5, 5}, {"A", 7, 5}, {"B", 1, 5}};
  const auto rep = ev::per_class_report(r, ev::Mode::few_shot);
  EXPECT_NEAR(rep.pooled.mae, 2.0, 1e-15);
  EXPECT_NEAR(rep.per_class.at("A").mae, 1.0, 1e-15);
  EXPECT_NEAR(rep.per_class.at("B").mae, 4.0, 1e-15);
  EXPECT_EQ(rep.pooled.samples, 3u);
  EXPECT_EQ(rep.per_class.at("A").samples, 2u);
}

TEST(Report, PooledEqualsConcatenatedMetrics) {
  ovc::Rng rng(4);
  const char* labels[] = {"ship", "plane", "boat"};
  for (int t = 0; t < 100; ++t) {
    std::vector<ev::ClassResult> r;
    std::vector<double> p, g;
    for (std::size_t i = 0, n = 1 + rng.index(30); i < n; ++i) {
      r.push_back({labels[rng.index(3)], static_cast<double>(rng.index(40)), static_cast<double>(rng.index(40))});
      p.push_back(r.back().pred);
      g.push_back(r.back().gt);
    }
    const auto rep = ev::per_class_report(r, ev::Mode::zero_shot);
    const auto m = ev::mae_rmse(p, g);
    EXPECT_EQ(rep.pooled.mae, m.mae);
    EXPECT_EQ(rep.pooled.rmse, m.rmse);
    if (rep.per_class.size() == 1) EXPECT_EQ(rep.per_class.begin()->second.mae, rep.pooled.mae);
  }
}

TEST(Report, JsonIsSortedAndRounded) {
  const std::vector<ev::ClassResult> r{{"zebra", 1, 4}, {"apple", 2, 2}, {"mango", 0, 1}};
  const auto j = ev::to_json(ev::per_class_report(r, ev::Mode::zero_shot, 0.3, 0.7)).dump();
  EXPECT_LT(j.find("\"apple\""), j.find("\"mango\""));
  EXPECT_LT(j.find("\"mango\""), j.find("\"zebra\""));
  EXPECT_NE(j.find("\"zero-shot\""), std::string::npos);
  EXPECT_EQ(ev::round6(1.23456789), 1.234568);
  EXPECT_EQ(ev::round6(-1e-9), 0.0);
  EXPECT_FALSE(std::signbit(ev::round6(-1e-9)));
  EXPECT_THROW(ev::per_class_report({}, ev::Mode::few_shot), ovc::ValueError);
}

TEST(Mode, Parse) {
  EXPECT_EQ(ev::parse_mode("zero-shot"), ev::Mode::zero_shot);
  EXPECT_EQ(ev::parse_mode("few-shot"), ev::Mode::few_shot);
  EXPECT_THROW(ev::parse_mode("one-shot"), ovc::ConfigError);
}

// ---------------------------------------------------------------------------
// Density bins

std::vector<ev::DensitySample> density(std::size_t n, ovc::Rng& rng) {
  std::vector<ev::DensitySample> s;
  for (std::size_t i = 0; i < n; ++i)
    s.push_back({"s" + std::to_string(1000 + i), static_cast<double>(rng.index(60)), rng.uniform(0, 10)});
  return s;
}

TEST(Bins, EqualCounts) {
  ovc::Rng rng(5);
  const auto thirty = ev::quantile_bins(density(30, rng));
  ASSERT_EQ(thirty.size(), 15u);
  for (const auto& b : thirty) EXPECT_EQ(b.n, 2u);
  const auto more = ev::quantile_bins(density(31, rng));
  EXPECT_EQ(more[0].n, 3u);
  for (std::size_t i = 1; i < 15; ++i) EXPECT_EQ(more[i].n, 2u);
  EXPECT_THROW(ev::quantile_bins(density(14, rng)), ovc::ValueError);
}

TEST(Bins, PartitionOrderedAndStatistics) {
  ovc::Rng rng(6);
  for (int t = 0; t < 100; ++t) {
    const std::size_t bins = 1 + rng.index(15);
    const auto s = density(bins + rng.index(80), rng);
    const auto c = ev::quantile_bins(s, bins);
    ASSERT_EQ(c.size(), bins);
    std::size_t lo = c[0].n, hi = c[0].n, total = 0;
    std::set<std::string> members;
    for (std::size_t i = 0; i < c.size(); ++i) {
      lo = std::min(lo, c[i].n);
      hi = std::max(hi, c[i].n);
      total += c[i].n;
      EXPECT_LE(c[i].lo, c[i].hi);
      if (i) EXPECT_LE(c[i - 1].hi, c[i].lo);
      double mean = 0, var = 0;
      std::vector<double> errs;
      for (const auto& id : c[i].members) {
        members.insert(id);
        const auto it = std::find_if(s.begin(), s.end(), [&](const auto& x) { return x.sample_id == id; });
        errs.push_back(it->abs_error);
        EXPECT_GE(it->gt_count, c[i].lo);
        EXPECT_LE(it->gt_count, c[i].hi);
      }
      for (double e : errs) mean += e / static_cast<double>(errs.size());
      for (double e : errs) var += (e - mean) * (e - mean) / static_cast<double>(errs.size());
      EXPECT_NEAR(c[i].mean_abs_err, mean, 1e-12);
      EXPECT_NEAR(c[i].std_abs_err, std::sqrt(var), 1e-12);
    }
    EXPECT_LE(hi - lo, 1u);
    EXPECT_EQ(total, s.size());
    EXPECT_EQ(members.size(), s.size());
  }
}

TEST(Bins, AllEqualCountsAreValid) {
  std::vector<ev::DensitySample> s;
  for (int i = 0; i < 20; ++i) s.push_back({"x" + std::to_string(i), 7, static_cast<double>(i)});
  const auto c = ev::quantile_bins(s, 4);
  for (const auto& b : c) {
    EXPECT_EQ(b.lo, 7);
    EXPECT_EQ(b.hi, 7);
    EXPECT_EQ(b.n, 5u);
  }
}

TEST(Bins, Csv) {
  ovc::Rng rng(7);
  const auto csv = ev::density_csv(ev::quantile_bins(density(40, rng)));
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "bin_lo,bin_hi,n,mean_abs_err,std_abs_err");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 15);
}

// ---------------------------------------------------------------------------
// Confidence maps

ovc::SimilarityMatrix similarity(std::vector<std::vector<double>> rows, std::vector<std::size_t> selected) {
  const std::size_t k = rows.size(), c = rows.empty() ? 0 : rows[0].size();
  std::vector<double> flat;
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  return {ovc::Tensor({k, c}, std::move(flat)), std::move(selected), ovc::Tensor::full({k, 2}, 0.5), 0};
}

TEST(ConfidenceMap, UniformIsFullWhite) {
  std::vector<std::vector<double>> rows(12, {0.4, 0.1});
  std::vector<std::size_t> sel(12);
  std::vector<ev::GridCell> cells;
  for (std::size_t i = 0; i < 12; ++i) {
    sel[i] = i;
    cells.push_back({i / 4, i % 4});
  }
  const auto m = ev::rasterize_confidence(similarity(rows, sel), cells, 3, 4);
  const auto pgm = ev::confidence_pgm(m, 48, 64);
  const std::string header = "P5\n# image 64x48\n4 3\n255\n";
  ASSERT_EQ(pgm.substr(0, header.size()), header);
  ASSERT_EQ(pgm.size(), header.size() + 12);
  for (std::size_t i = header.size(); i < pgm.size(); ++i) EXPECT_EQ(static_cast<unsigned char>(pgm[i]), 255);
}

TEST(ConfidenceMap, CellsKeepMaxAndCsvRoundTrips) {
  ovc::Rng rng(8);
  const std::size_t h = 5, w = 7;
  std::vector<ev::GridCell> cells;
  for (std::size_t level = 0; level < 2; ++level)
    for (std::size_t i = 0; i < h * w; ++i) cells.push_back({i / w, i % w});
  std::vector<std::size_t> sel;
  std::vector<std::vector<double>> rows;
  for (std::size_t t = 0; t < cells.size(); ++t) {
    if (rng.index(3) == 0) continue;
    sel.push_back(t);
    rows.push_back({rng.uniform(0.01, 0.99), rng.uniform(0.01, 0.99), rng.uniform(0.01, 0.99)});
  }
  const auto sm = similarity(rows, sel);
  std::vector<double> want(h * w, 0.0);
  for (std::size_t r = 0; r < sel.size(); ++r) {
    const auto& c = cells[sel[r]];
    const double conf = *std::max_element(rows[r].begin(), rows[r].end());
    want[c.row * w + c.col] = std::max(want[c.row * w + c.col], conf);
  }

  const auto stem = std::filesystem::temp_directory_path() / "ovc_test_confmap";
  const auto m = ev::export_confidence_map(sm, cells, h, w, 40, 56, stem);
  EXPECT_EQ(m.values, want);
  std::ifstream f(stem.string() + ".csv");
  std::string line;
  std::size_t count = 0, row = 0;
  while (std::getline(f, line)) {
    std::istringstream ls(line);
    std::string cell;
    std::size_t col = 0;
    while (std::getline(ls, cell, ',')) {
      EXPECT_NEAR(std::stod(cell), want[row * w + col], 1e-6);
      ++col;
      ++count;
    }
    EXPECT_EQ(col, w);
    ++row;
  }
  EXPECT_EQ(count, h * w);
  EXPECT_TRUE(std::filesystem::exists(stem.string() + ".pgm"));
  std::filesystem::remove(stem.string() + ".csv");
  std::filesystem::remove(stem.string() + ".pgm");
}

TEST(ConfidenceMap, Errors) {
  const auto sm = similarity({{0.5}}, {3});
  const std::vector<ev::GridCell> cells{{0, 0}};
  EXPECT_THROW(ev::rasterize_confidence(sm, cells, 1, 1), ovc::ValueError);
  const auto ok = similarity({{0.5}}, {0});
  const std::vector<ev::GridCell> outside{{2, 0}};
  EXPECT_THROW(ev::rasterize_confidence(ok, outside, 1, 1), ovc::ValueError);
  EXPECT_THROW(ev::export_confidence_map(ok, cells, 1, 1, 8, 8, "/nonexistent/dir/map"), ovc::IoError);
}

}  // namespace

// Copyright 2026 The ovcount Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "ovc/app/config.hpp"
#include "ovc/random.hpp"
#include "ovc/tensor_io.hpp"

// Synthetic dataset: bright class-coloured blobs with known centroids on a
// dim noisy background, annotated as boxes ("dior") or quads ("fair1m").
namespace ovc::app {

struct FixtureOptions {
  std::size_t images = 20;
  std::uint64_t seed = 7;
  std::size_t size = 128;  // square images; multiple of 32
};

struct PlantedObject {
  std::string label;
  double cx = 0, cy = 0, radius = 0;
  bool quad = false;
};

struct FixtureImage {
  std::string dataset;
  std::string image_id;
  std::vector<PlantedObject> objects;
};

namespace detail {

inline std::array<double, 3> class_colour(const std::string& label) {
  static const std::map<std::string, std::array<double, 3>> colours{
      {"boat", {1.0, 0.3, 0.2}},         {"Tugboat", {1.0, 0.3, 0.2}},      {"Motorboat", {0.95, 0.35, 0.25}},
      {"ship", {0.2, 0.4, 1.0}},         {"Warship", {0.2, 0.4, 1.0}},      {"Cargo-ship", {0.25, 0.45, 0.95}},
      {"plane", {0.9, 0.9, 0.9}},        {"storage-tank", {0.3, 1.0, 0.3}}, {"harbor", {0.9, 0.8, 0.1}},
  };
  auto it = colours.find(label);
  return it == colours.end() ? std::array<double, 3>{0.7, 0.7, 0.7} : it->second;
}

// Non-overlapping centres at least `gap` apart, kept `margin` from the edges.
inline bool place(std::vector<PlantedObject>& objs, PlantedObject o, std::size_t size, Rng& rng) {
  const double margin = 8.0, gap = 11.0;
  for (int attempt = 0; attempt < 400; ++attempt) {
    o.cx = rng.uniform(margin, static_cast<double>(size) - margin);
    o.cy = rng.uniform(margin, static_cast<double>(size) - margin);
    bool ok = true;
    for (const auto& p : objs) ok = ok && std::hypot(p.cx - o.cx, p.cy - o.cy) >= gap;
    if (ok) {
      objs.push_back(o);
      return true;
    }
  }
  return false;
}

}  // namespace detail

/// Layout of every image. Even indices are "dior" (box annotations, plain
/// labels); odd ones are "fair1m" (quads, FAIR-1M ship-family labels).
/// Every image holds at least four boats; image 0 holds exactly three planes
/// and image 1 exactly four, so the minimum-instance boundary is exercised.
inline std::vector<FixtureImage> plan_fixtures(const FixtureOptions& opt) {
  if (opt.images < 2) throw ConfigError("fixtures need at least 2 images");
  if (opt.size == 0 || opt.size % 32) throw ConfigError("fixture image size must be a positive multiple of 32");
  std::vector<FixtureImage> out;
  for (std::size_t i = 0; i < opt.images; ++i) {
    Rng rng(derive_seed(opt.seed, "fixture-image:" + std::to_string(i)));
    FixtureImage img;
    const bool fair = i % 2 == 1;
    img.dataset = fair ? "fair1m" : "dior";
    char id[32];
    std::snprintf(id, sizeof id, "img_%03zu", i);
    img.image_id = id;

    std::vector<std::pair<std::string, std::size_t>> plan;
    const std::size_t boats = 4 + rng.index(3);
    if (fair) {
      const std::size_t tug = 2 + rng.index(boats - 3);
      plan.push_back({"Tugboat", tug});
      plan.push_back({"Motorboat", boats - tug});
      plan.push_back({rng.index(2) ? "Warship" : "Cargo-ship", rng.index(7)});
    } else {
      plan.push_back({"boat", boats});
      plan.push_back({"ship", rng.index(7)});
    }
    std::size_t planes = rng.index(8);
    if (i == 0) planes = 3;
    if (i == 1) planes = 4;
    plan.push_back({"plane", planes});
    plan.push_back({"storage-tank", rng.index(7)});
    plan.push_back({"harbor", rng.index(6)});

    for (const auto& [label, n] : plan) {
      for (std::size_t k = 0; k < n; ++k) {
        PlantedObject o{label, 0, 0, rng.uniform(2.5, 4.0), fair};
        if (!detail::place(img.objects, o, opt.size, rng)) {
          throw InvariantError("fixture placement failed for " + img.image_id);
        }
      }
    }
    out.push_back(std::move(img));
  }
  return out;
}

inline Tensor render_fixture(const FixtureImage& img, std::size_t size, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "fixture-pixels:" + img.image_id));
  std::vector<double> px(size * size * 3);
  for (auto& v : px) v = rng.uniform(0.0, 0.08);
  for (const auto& o : img.objects) {
    const auto col = detail::class_colour(o.label);
    const double r = o.radius;
    const auto y0 = static_cast<std::size_t>(std::max(0.0, std::floor(o.cy - 2 * r)));
    const auto y1 = static_cast<std::size_t>(std::min<double>(size - 1, std::ceil(o.cy + 2 * r)));
    const auto x0 = static_cast<std::size_t>(std::max(0.0, std::floor(o.cx - 2 * r)));
    const auto x1 = static_cast<std::size_t>(std::min<double>(size - 1, std::ceil(o.cx + 2 * r)));
    for (std::size_t y = y0; y <= y1; ++y) {
      for (std::size_t x = x0; x <= x1; ++x) {
        // pixel centres at +0.5 so the blob's intensity centroid is (cx, cy)
        const double dx = x + 0.5 - o.cx, dy = y + 0.5 - o.cy;
        const double w = std::exp(-(dx * dx + dy * dy) / (2 * r * r / 4));
        for (std::size_t c = 0; c < 3; ++c) {
          auto& v = px[(y * size + x) * 3 + c];
          v = std::max(v, w * col[c]);
        }
      }
    }
  }
  return Tensor({size, size, 3}, std::move(px));
}

/// Box (x0,y0,x1,y1) or quad (square rotated by a seeded angle, so its vertex
/// mean is the planted centre).
inline nlohmann::json fixture_annotation(const FixtureImage& img, const PlantedObject& o, std::size_t size,
                                         Rng& rng) {
  nlohmann::json geom;
  if (o.quad) {
    const double a = rng.uniform(0.0, 1.5707963267948966);
    const double h = o.radius;
    std::vector<double> coords;
    for (int k = 0; k < 4; ++k) {
      const double t = a + k * 1.5707963267948966;
      coords.push_back(o.cx + h * std::sqrt(2.0) * std::cos(t));
      coords.push_back(o.cy + h * std::sqrt(2.0) * std::sin(t));
    }
    geom = {{"type", "quad"}, {"coords", coords}};
  } else {
    geom = {{"type", "box"}, {"coords", {o.cx - o.radius, o.cy - o.radius, o.cx + o.radius, o.cy + o.radius}}};
  }
  return {{"image_id", img.image_id}, {"width", size},     {"height", size},
          {"class", o.label},         {"geometry", geom}, {"dataset", img.dataset}};
}

/// The config written next to the fixtures; everything else uses defaults.
inline RunConfig fixture_config(const FixtureOptions& opt) {
  RunConfig c;
  c.seed = opt.seed;
  c.shots = 3;
  c.mode = eval::Mode::few_shot;
  c.curation.test_classes = {"boat"};
  c.curation.val_classes = {"harbor"};
  c.paths.annotations = {"annotations"};
  c.paths.images = "images";
  return c;
}

/// Writes images/<id>.ovct, annotations/<dataset>.jsonl and config.json.
inline std::vector<FixtureImage> write_fixtures(const fs::path& root, const FixtureOptions& opt) {
  const auto plan = plan_fixtures(opt);
  fs::create_directories(root / "images");
  fs::create_directories(root / "annotations");
  std::map<std::string, std::string> jsonl;
  for (const auto& img : plan) {
    save_ovct(root / "images" / (img.image_id + ".ovct"), render_fixture(img, opt.size, opt.seed));
    Rng rng(derive_seed(opt.seed, "fixture-geometry:" + img.image_id));
    for (const auto& o : img.objects) jsonl[img.dataset] += fixture_annotation(img, o, opt.size, rng).dump() + "\n";
  }
  for (const auto& [dataset, text] : jsonl) {
    std::ofstream f(root / "annotations" / (dataset + ".jsonl"), std::ios::binary);
    if (!f) throw IoError("cannot write annotations for " + dataset);
    f << text;
  }
  write_json(root / "config.json", to_json(fixture_config(opt)));
  return plan;
}

}  // namespace ovc::app

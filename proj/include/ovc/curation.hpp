// Copyright 2026 The ovcount Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "ovc/error.hpp"
#include "ovc/pyramid.hpp"
#include "ovc/random.hpp"

// Turns detection annotations into single-class counting samples and a
// class-disjoint train/validation/test/calibration split.
namespace ovc::curation {

enum class GeometryType { box, quad };

struct DetectionRecord {
  std::string dataset;
  std::string image_id;
  std::size_t width = 0, height = 0;
  std::string label;
  GeometryType geometry = GeometryType::box;
  std::vector<double> coords;  // box: x0,y0,x1,y1; quad: x,y for 4 vertices
};

struct PointAnnotation {
  std::string dataset;
  std::string image_id;
  std::size_t width = 0, height = 0;
  std::string label;
  Point2 point;
  Box box;  // axis-aligned extent of the source geometry
};

namespace detail {

inline PointAnnotation in_bounds(PointAnnotation p) {
  const auto w = static_cast<double>(p.width), h = static_cast<double>(p.height);
  if (!(p.point.x >= 0 && p.point.x <= w && p.point.y >= 0 && p.point.y <= h)) {
    throw ValueError("centroid of a " + p.label + " instance lies outside image " + p.image_id);
  }
  return p;
}

}  // namespace detail

/// Centroid of the geometry plus its axis-aligned extent. Boxes use the box
/// center, quadrilaterals the mean of their four vertices.
inline PointAnnotation convert_detection(const DetectionRecord& r) {
  PointAnnotation p{r.dataset, r.image_id, r.width, r.height, r.label, {}, {}};
  if (r.geometry == GeometryType::box) {
    if (r.coords.size() != 4) throw ValueError("box geometry needs 4 coordinates");
    const Box b{r.coords[0], r.coords[1], r.coords[2], r.coords[3]};
    if (!b.has_area()) throw ValueError("degenerate box in image " + r.image_id);
    p.box = b;
    p.point = {(b.x_min + b.x_max) / 2.0, (b.y_min + b.y_max) / 2.0};
    return detail::in_bounds(std::move(p));
  }
  if (r.coords.size() != 8) throw ValueError("quad geometry needs 8 coordinates");
  std::vector<Point2> v;
  for (int i = 0; i < 4; ++i) v.push_back({r.coords[2 * i], r.coords[2 * i + 1]});
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j)
      if (v[i] == v[j]) throw ValueError("degenerate quad in image " + r.image_id + " (repeated vertex)");
  Box b{v[0].x, v[0].y, v[0].x, v[0].y};
  double sx = 0, sy = 0;
  for (const auto& q : v) {
    sx += q.x;
    sy += q.y;
    b.x_min = std::min(b.x_min, q.x);
    b.y_min = std::min(b.y_min, q.y);
    b.x_max = std::max(b.x_max, q.x);
    b.y_max = std::max(b.y_max, q.y);
  }
  if (!b.has_area()) throw ValueError("degenerate quad in image " + r.image_id + " (collinear extent)");
  p.box = b;
  p.point = {sx / 4.0, sy / 4.0};
  return detail::in_bounds(std::move(p));
}

inline std::vector<PointAnnotation> convert_detections(std::span<const DetectionRecord> records) {
  std::vector<PointAnnotation> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(convert_detection(r));
  return out;
}

/// Splits the FAIR-1M ship family into "ship" (large vessels) and "boat".
inline std::string remap_fair1m_ships(const std::string& label) {
  static const std::set<std::string> boats{"Tugboat", "Motorboat", "Fishing-boat"};
  static const std::set<std::string> ships{"Warship", "Cargo-ship", "Engineering-ship", "Passenger-ship"};
  if (boats.contains(label)) return "boat";
  if (ships.contains(label)) return "ship";
  return label;
}

struct ImageAnnotations {
  std::string dataset;
  std::string image_id;
  std::size_t width = 0, height = 0;
  std::vector<PointAnnotation> instances;
};

/// Groups instances by (dataset, image id), keeping input order within an image.
inline std::vector<ImageAnnotations> group_by_image(std::span<const PointAnnotation> points) {
  std::map<std::pair<std::string, std::string>, ImageAnnotations> by;
  for (const auto& p : points) {
    auto& img = by[{p.dataset, p.image_id}];
    if (img.instances.empty()) {
      img.dataset = p.dataset;
      img.image_id = p.image_id;
      img.width = p.width;
      img.height = p.height;
    } else if (img.width != p.width || img.height != p.height) {
      throw ValueError("image " + p.image_id + " has inconsistent dimensions");
    }
    img.instances.push_back(p);
  }
  std::vector<ImageAnnotations> out;
  for (auto& [_, img] : by) out.push_back(std::move(img));
  return out;
}

struct ClassSample {
  std::string dataset;
  std::string image_id;
  std::size_t width = 0, height = 0;
  std::string label;
  std::vector<PointAnnotation> instances;

  std::string sample_id() const { return dataset + ":" + image_id + ":" + label; }
};

/// One single-class sample per distinct label, ordered by label.
inline std::vector<ClassSample> decompose_by_class(const ImageAnnotations& image) {
  std::map<std::string, ClassSample> by;
  for (const auto& p : image.instances) {
    auto& s = by[p.label];
    if (s.instances.empty()) s = {image.dataset, image.image_id, image.width, image.height, p.label, {}};
    s.instances.push_back(p);
  }
  std::vector<ClassSample> out;
  for (auto& [_, s] : by) out.push_back(std::move(s));
  return out;
}

inline std::vector<ClassSample> filter_min_instances(std::vector<ClassSample> samples, std::size_t min_count = 4) {
  if (min_count == 0) throw ValueError("min_count must be at least 1");
  std::erase_if(samples, [&](const ClassSample& s) { return s.instances.size() < min_count; });
  return samples;
}

struct ExemplarSplit {
  std::vector<Box> exemplars;
  std::vector<Point2> gt_points;
};

/// Draws `shots` instances uniformly (seeded per sample) as exemplar boxes;
/// the rest become ground-truth points. Both keep the original instance order.
inline ExemplarSplit split_exemplars(const ClassSample& s, std::size_t shots, std::uint64_t seed) {
  const std::size_t n = s.instances.size();
  if (shots > 0 && n < shots + 1) {
    throw ValueError("sample " + s.sample_id() + " has " + std::to_string(n) + " instances; " +
                     std::to_string(shots) + "-shot split needs at least " + std::to_string(shots + 1));
  }
  Rng rng(derive_seed(seed, "exemplars:" + s.sample_id()));
  auto chosen = rng.sample_without_replacement(n, shots);
  std::sort(chosen.begin(), chosen.end());
  ExemplarSplit out;
  std::size_t c = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (c < chosen.size() && chosen[c] == i) {
      out.exemplars.push_back(s.instances[i].box);
      ++c;
    } else {
      out.gt_points.push_back(s.instances[i].point);
    }
  }
  return out;
}

inline std::string prompt_for(const std::string& label) {
  std::string p = label;
  std::transform(p.begin(), p.end(), p.begin(), [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  return p;
}

struct CountingSample {
  std::string sample_id;
  std::string image_id;
  std::string label;
  std::string prompt;
  std::vector<Box> exemplar_boxes;
  std::vector<Point2> gt_points;
  std::string dataset;

  std::size_t instance_count() const { return exemplar_boxes.size() + gt_points.size(); }
};

inline CountingSample make_counting_sample(const ClassSample& s, std::size_t shots, std::uint64_t seed) {
  auto split = split_exemplars(s, shots, seed);
  return {s.sample_id(), s.image_id, s.label, prompt_for(s.label), std::move(split.exemplars),
          std::move(split.gt_points), s.dataset};
}

struct SplitManifest {
  std::vector<std::string> train, validation, test, calibration;
  std::vector<std::string> train_classes, validation_classes, test_classes, calibration_classes;
  std::uint64_t seed = 0;
};

/// Routes samples by class (test / validation / everything else to train),
/// then moves min(calib_per_dataset, available) seeded-random train samples of
/// each dataset into the calibration set.
inline SplitManifest build_splits(std::span<const CountingSample> samples, const std::vector<std::string>& test_classes,
                                  const std::vector<std::string>& val_classes, std::size_t calib_per_dataset,
                                  std::uint64_t seed) {
  const std::set<std::string> test_set(test_classes.begin(), test_classes.end());
  const std::set<std::string> val_set(val_classes.begin(), val_classes.end());
  for (const auto& c : test_set)
    if (val_set.contains(c)) throw ValueError("class '" + c + "' is listed for both test and validation");

  SplitManifest m;
  m.seed = seed;
  std::map<std::string, std::vector<const CountingSample*>> train_pool;
  std::set<std::string> tr_cls, va_cls, te_cls, ca_cls;
  for (const auto& s : samples) {
    if (test_set.contains(s.label)) {
      m.test.push_back(s.sample_id);
      te_cls.insert(s.label);
    } else if (val_set.contains(s.label)) {
      m.validation.push_back(s.sample_id);
      va_cls.insert(s.label);
    } else {
      train_pool[s.dataset].push_back(&s);
    }
  }
  for (auto& [dataset, pool] : train_pool) {
    std::sort(pool.begin(), pool.end(), [](auto* a, auto* b) { return a->sample_id < b->sample_id; });
    Rng rng(derive_seed(seed, "calibration:" + dataset));
    const auto pick = rng.sample_without_replacement(pool.size(), std::min(calib_per_dataset, pool.size()));
    std::vector<char> is_calib(pool.size(), 0);
    for (auto i : pick) is_calib[i] = 1;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (is_calib[i]) {
        m.calibration.push_back(pool[i]->sample_id);
        ca_cls.insert(pool[i]->label);
      } else {
        m.train.push_back(pool[i]->sample_id);
        tr_cls.insert(pool[i]->label);
      }
    }
  }
  for (auto* v : {&m.train, &m.validation, &m.test, &m.calibration}) std::sort(v->begin(), v->end());
  m.train_classes.assign(tr_cls.begin(), tr_cls.end());
  m.validation_classes.assign(va_cls.begin(), va_cls.end());
  m.test_classes.assign(te_cls.begin(), te_cls.end());
  m.calibration_classes.assign(ca_cls.begin(), ca_cls.end());
  return m;
}

/// Throws InvariantError naming the first violated manifest invariant.
inline void check_manifest(const SplitManifest& m) {
  std::set<std::string> seen;
  for (const auto* v : {&m.train, &m.validation, &m.test, &m.calibration})
    for (const auto& id : *v)
      if (!seen.insert(id).second) throw InvariantError("split-disjointness: sample " + id + " is in two splits");
  const std::set<std::string> test(m.test_classes.begin(), m.test_classes.end());
  for (const auto* v : {&m.train_classes, &m.calibration_classes, &m.validation_classes})
    for (const auto& c : *v)
      if (test.contains(c)) throw InvariantError("class-separation: test class " + c + " used outside test");
}

// ---------------------------------------------------------------------------
// JSONL I/O

inline DetectionRecord parse_annotation(const nlohmann::json& j, const std::string& default_dataset) {
  DetectionRecord r;
  r.image_id = j.at("image_id").get<std::string>();
  const auto w = j.at("width").get<long long>(), h = j.at("height").get<long long>();
  if (w <= 0 || h <= 0) throw ValueError("image dimensions must be positive");
  r.width = static_cast<std::size_t>(w);
  r.height = static_cast<std::size_t>(h);
  r.label = j.at("class").get<std::string>();
  r.dataset = j.value("dataset", default_dataset);
  const auto& g = j.at("geometry");
  const auto type = g.at("type").get<std::string>();
  if (type == "box") {
    r.geometry = GeometryType::box;
  } else if (type == "quad") {
    r.geometry = GeometryType::quad;
  } else {
    throw ValueError("unknown geometry type '" + type + "'");
  }
  r.coords = g.at("coords").get<std::vector<double>>();
  return r;
}

/// Reads annotation JSONL. Records without a "dataset" key take the file stem.
/// Errors carry the 1-based line number.
inline std::vector<DetectionRecord> read_annotations(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open annotations " + path.string());
  std::vector<DetectionRecord> out;
  std::string line;
  std::size_t line_no = 0;
  const std::string stem = path.stem().string();
  while (std::getline(f, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_annotation(nlohmann::json::parse(line), stem));
    } catch (const std::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline nlohmann::json to_json(const CountingSample& s) {
  nlohmann::json boxes = nlohmann::json::array(), pts = nlohmann::json::array();
  for (const auto& b : s.exemplar_boxes) boxes.push_back({b.x_min, b.y_min, b.x_max, b.y_max});
  for (const auto& p : s.gt_points) pts.push_back({p.x, p.y});
  return {{"sample_id", s.sample_id}, {"image_id", s.image_id}, {"class", s.label},     {"prompt", s.prompt},
          {"exemplar_boxes", boxes},  {"gt_points", pts},       {"dataset", s.dataset}};
}

inline CountingSample sample_from_json(const nlohmann::json& j) {
  CountingSample s;
  s.sample_id = j.at("sample_id").get<std::string>();
  s.image_id = j.at("image_id").get<std::string>();
  s.label = j.at("class").get<std::string>();
  s.prompt = j.at("prompt").get<std::string>();
  s.dataset = j.at("dataset").get<std::string>();
  for (const auto& b : j.at("exemplar_boxes")) {
    const auto v = b.get<std::vector<double>>();
    if (v.size() != 4) throw FormatError("exemplar box needs 4 numbers");
    s.exemplar_boxes.push_back({v[0], v[1], v[2], v[3]});
  }
  for (const auto& p : j.at("gt_points")) {
    const auto v = p.get<std::vector<double>>();
    if (v.size() != 2) throw FormatError("gt point needs 2 numbers");
    s.gt_points.push_back({v[0], v[1]});
  }
  return s;
}

inline std::vector<CountingSample> read_samples(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open curated samples " + path.string());
  std::vector<CountingSample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(sample_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline nlohmann::json to_json(const SplitManifest& m) {
  return {{"seed", m.seed},
          {"train", m.train},
          {"validation", m.validation},
          {"test", m.test},
          {"calibration", m.calibration},
          {"classes",
           {{"train", m.train_classes},
            {"validation", m.validation_classes},
            {"test", m.test_classes},
            {"calibration", m.calibration_classes}}}};
}

inline SplitManifest manifest_from_json(const nlohmann::json& j) {
  SplitManifest m;
  m.seed = j.at("seed").get<std::uint64_t>();
  m.train = j.at("train").get<std::vector<std::string>>();
  m.validation = j.at("validation").get<std::vector<std::string>>();
  m.test = j.at("test").get<std::vector<std::string>>();
  m.calibration = j.at("calibration").get<std::vector<std::string>>();
  const auto& c = j.at("classes");
  m.train_classes = c.at("train").get<std::vector<std::string>>();
  m.validation_classes = c.at("validation").get<std::vector<std::string>>();
  m.test_classes = c.at("test").get<std::vector<std::string>>();
  m.calibration_classes = c.at("calibration").get<std::vector<std::string>>();
  return m;
}

// ---------------------------------------------------------------------------
// End-to-end

struct CurationOptions {
  std::size_t shots = 3;
  std::size_t min_instances = 4;
  std::size_t calibration_per_dataset = 100;
  std::vector<std::string> test_classes;
  std::vector<std::string> validation_classes;
  std::uint64_t seed = 0;
};

struct CurationResult {
  std::vector<CountingSample> samples;  // sorted by sample id
  SplitManifest manifest;
};

/// convert -> remap -> decompose -> filter -> split exemplars -> build splits.
inline CurationResult curate(std::span<const DetectionRecord> records, const CurationOptions& opt) {
  auto points = convert_detections(records);
  for (auto& p : points) p.label = remap_fair1m_ships(p.label);
  std::vector<ClassSample> class_samples;
  for (const auto& img : group_by_image(points)) {
    auto parts = decompose_by_class(img);
    std::size_t before = img.instances.size(), after = 0;
    for (const auto& s : parts) after += s.instances.size();
    if (before != after) throw InvariantError("instance-conservation: image " + img.image_id);
    class_samples.insert(class_samples.end(), parts.begin(), parts.end());
  }
  class_samples = filter_min_instances(std::move(class_samples), opt.min_instances);

  CurationResult res;
  for (const auto& s : class_samples) {
    auto cs = make_counting_sample(s, opt.shots, opt.seed);
    if (cs.instance_count() != s.instances.size()) throw InvariantError("exemplar-split-conservation: " + cs.sample_id);
    res.samples.push_back(std::move(cs));
  }
  std::sort(res.samples.begin(), res.samples.end(),
            [](const auto& a, const auto& b) { return a.sample_id < b.sample_id; });
  res.manifest =
      build_splits(res.samples, opt.test_classes, opt.validation_classes, opt.calibration_per_dataset, opt.seed);
  check_manifest(res.manifest);
  return res;
}

}  // namespace ovc::curation

// Copyright 2026 The ovcount Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "ovc/app/config.hpp"
#include "ovc/app/fixtures.hpp"
#include "ovc/curation.hpp"
#include "ovc/evaluation.hpp"
#include "ovc/feature_io.hpp"
#include "ovc/model.hpp"
#include "ovc/training.hpp"

namespace ovc::app {

inline std::string file_safe(std::string id) {
  std::replace(id.begin(), id.end(), ':', '_');
  std::replace(id.begin(), id.end(), '/', '_');
  return id;
}

inline void require_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw IoError("missing " + what + ": " + p.string());
}

// ---------------------------------------------------------------------------
// Model and features

struct Runtime {
  ModelParams model;
  Encoders encoders;
  bool from_checkpoint = false;
};

/// Parameters from the configured checkpoint when it exists, otherwise the
/// seeded initialisation.
inline Runtime load_runtime(const RunConfig& cfg) {
  Runtime rt{ModelParams::init(cfg.model, cfg.seed), Encoders::from_seed(cfg.model, cfg.seed), false};
  const auto dir = cfg.resolve(cfg.paths.checkpoint);
  if (fs::exists(dir / "manifest.json")) {
    const auto ck = load_checkpoint(dir);
    assign_from_store(rt.model, ck.params);
    assign_from_store(rt.encoders, ck.params);
    rt.from_checkpoint = true;
  }
  return rt;
}

struct ImageFeatures {
  EncodedImage features;
  std::size_t height = 0, width = 0;  // image pixels
};

inline Tensor load_image(const RunConfig& cfg, const std::string& image_id) {
  const auto path = cfg.resolve(cfg.paths.images) / (image_id + ".ovct");
  require_file(path, "image");
  return load_ovct(path);
}

/// Precomputed feature files under <features>/<image_id>/ (cv0.ovct.. and
/// rs.ovct, each with a JSON sidecar) or the fixture encoder on the image.
inline ImageFeatures image_features(const RunConfig& cfg, const Runtime& rt, const std::string& image_id) {
  if (!cfg.paths.features.empty()) {
    const auto dir = cfg.resolve(cfg.paths.features) / image_id;
    std::vector<fs::path> levels;
    for (std::size_t l = 0; l < cfg.model.cv_channels.size(); ++l) {
      levels.push_back(dir / ("cv" + std::to_string(l) + ".ovct"));
      require_file(levels.back(), "feature file");
    }
    const auto rs_path = dir / "rs.ovct";
    require_file(rs_path, "feature file");
    auto rs = read_feature_file(rs_path);
    if (rs.meta.role != FeatureRole::rs_map) throw FormatError(rs_path.string() + ": not an rs_map file");
    PyramidLevel rs_level{rs.meta.stride, std::move(rs.tensor)};
    const std::size_t h = rs_level.height() * rs_level.stride, w = rs_level.width() * rs_level.stride;
    return {{load_pyramid(levels), std::move(rs_level)}, h, w};
  }
  const auto image = load_image(cfg, image_id);
  return {rt.encoders.image.encode(image), image.dim(0), image.dim(1)};
}

inline bool zero_shot(const RunConfig& cfg) { return cfg.mode == eval::Mode::zero_shot; }

/// Zero-shot counts every annotated instance; few-shot counts the instances
/// that were not used as exemplars.
inline double ground_truth(const curation::CountingSample& s, bool zs) {
  return static_cast<double>(zs ? s.instance_count() : s.gt_points.size());
}

struct SampleInference {
  Inference inference;
  std::size_t image_h = 0, image_w = 0;
};

inline SampleInference run_sample(const RunConfig& cfg, const Runtime& rt, const curation::CountingSample& s) {
  const auto f = image_features(cfg, rt, s.image_id);
  ExemplarBoxes boxes;
  if (!zero_shot(cfg)) boxes.boxes = s.exemplar_boxes;
  boxes.validate(f.width, f.height);
  const auto text = rt.encoders.text.encode(s.prompt);
  return {infer(rt.model, cfg.model, f.features, text, boxes), f.height, f.width};
}

// ---------------------------------------------------------------------------
// Curated data

struct CuratedData {
  std::vector<curation::CountingSample> samples;
  curation::SplitManifest manifest;

  const curation::CountingSample& find(const std::string& id) const {
    auto it = std::lower_bound(samples.begin(), samples.end(), id,
                               [](const auto& s, const std::string& v) { return s.sample_id < v; });
    if (it == samples.end() || it->sample_id != id) throw ValueError("unknown sample id '" + id + "'");
    return *it;
  }

  std::vector<const curation::CountingSample*> split(const std::vector<std::string>& ids) const {
    std::vector<const curation::CountingSample*> out;
    for (const auto& id : ids) out.push_back(&find(id));
    return out;
  }
};

inline CuratedData load_curated(const RunConfig& cfg) {
  const auto dir = cfg.resolve(cfg.paths.curated);
  require_file(dir / "samples.jsonl", "curated samples (run `ovc curate` first)");
  require_file(dir / "manifest.json", "split manifest (run `ovc curate` first)");
  CuratedData d{curation::read_samples(dir / "samples.jsonl"),
                curation::manifest_from_json(read_json(dir / "manifest.json", "split manifest"))};
  std::sort(d.samples.begin(), d.samples.end(), [](const auto& a, const auto& b) { return a.sample_id < b.sample_id; });
  return d;
}

// ---------------------------------------------------------------------------
// Commands

inline std::vector<FixtureImage> cmd_fixtures(const fs::path& out, const FixtureOptions& opt, std::ostream& log) {
  auto plan = write_fixtures(out, opt);
  std::size_t objects = 0;
  for (const auto& img : plan) objects += img.objects.size();
  log << "wrote " << plan.size() << " images with " << objects << " objects to " << out.string() << "\n";
  return plan;
}

inline std::vector<fs::path> annotation_files(const RunConfig& cfg) {
  std::vector<fs::path> files;
  for (const auto& entry : cfg.paths.annotations) {
    const auto p = cfg.resolve(entry);
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p))
        if (e.path().extension() == ".jsonl") found.push_back(e.path());
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else {
      require_file(p, "annotations");
      files.push_back(p);
    }
  }
  return files;
}

inline curation::CurationResult cmd_curate(const RunConfig& cfg, std::ostream& log) {
  std::vector<curation::DetectionRecord> records;
  for (const auto& f : annotation_files(cfg)) {
    auto part = curation::read_annotations(f);
    records.insert(records.end(), part.begin(), part.end());
  }
  if (records.empty()) throw ValueError("no annotation records found");
  curation::CurationOptions opt{cfg.shots,
                                cfg.curation.min_instances,
                                cfg.curation.calibration_per_dataset,
                                cfg.curation.test_classes,
                                cfg.curation.val_classes,
                                cfg.seed};
  auto res = curation::curate(records, opt);
  if (res.samples.empty()) throw ValueError("curation produced no samples");

  const auto dir = cfg.resolve(cfg.paths.curated);
  prepare_output(dir, cfg);
  std::string jsonl;
  std::map<std::string, std::size_t> per_class;
  for (const auto& s : res.samples) {
    jsonl += curation::to_json(s).dump() + "\n";
    ++per_class[s.label];
  }
  eval::write_text(dir / "samples.jsonl", jsonl);
  write_json(dir / "manifest.json", curation::to_json(res.manifest));
  for (const auto& [label, n] : per_class) log << label << ": " << n << "\n";
  log << "train " << res.manifest.train.size() << ", validation " << res.manifest.validation.size() << ", test "
      << res.manifest.test.size() << ", calibration " << res.manifest.calibration.size() << "\n";
  return res;
}

inline eval::CalibrationResult cmd_calibrate(const RunConfig& cfg, std::ostream& log) {
  const auto data = load_curated(cfg);
  if (data.manifest.calibration.empty()) throw ValueError("calibration split is empty");
  const auto rt = load_runtime(cfg);
  std::vector<eval::CalibrationItem> items;
  for (const auto* s : data.split(data.manifest.calibration)) {
    const auto r = run_sample(cfg, rt, *s);
    items.push_back(eval::CalibrationItem::from(r.inference.similarity, ground_truth(*s, zero_shot(cfg))));
  }
  const auto res = eval::calibrate_threshold(items, cfg.seed);
  const auto dir = cfg.resolve(cfg.paths.calibration);
  prepare_output(dir, cfg);
  write_json(dir / "calibration.json", eval::to_json(res));
  log << "sigma " << eval::format_number(res.sigma) << ", tau " << eval::format_number(res.tau) << ", mae "
      << eval::format_number(res.mae) << " over " << items.size() << " samples\n";
  return res;
}

/// Base thresholds: an explicit threshold wins, otherwise calibration.json.
struct Thresholds {
  double sigma = 0.0, tau = 1.0;
  bool explicit_threshold = false;
};

inline Thresholds thresholds(const RunConfig& cfg) {
  if (cfg.threshold) return {*cfg.threshold, 1.0, true};
  const auto path = cfg.resolve(cfg.paths.calibration) / "calibration.json";
  require_file(path, "calibration (run `ovc calibrate` first or pass --threshold)");
  const auto c = eval::calibration_from_json(read_json(path, "calibration"));
  return {c.sigma, c.tau, false};
}

inline double threshold_for(const RunConfig& cfg, const Thresholds& t, const SimilarityMatrix& sm) {
  if (t.explicit_threshold) return t.sigma;
  return eval::adaptive_threshold(sm.max_confidence(), t.sigma, t.tau, zero_shot(cfg));
}

struct CountOutput {
  std::string sample_id;
  CountResult result;
  double threshold_used = 0.0;
};

inline CountOutput cmd_count(const RunConfig& cfg, const std::string& sample_id, bool confidence_map,
                             std::ostream& log) {
  const auto th = thresholds(cfg);
  const auto data = load_curated(cfg);
  const auto& s = data.find(sample_id);
  const auto rt = load_runtime(cfg);
  const auto r = run_sample(cfg, rt, s);
  const double thr = threshold_for(cfg, th, r.inference.similarity);
  auto cr = count_from_similarity(r.inference.similarity, thr);

  const auto dir = cfg.resolve(cfg.paths.count);
  prepare_output(dir, cfg);
  const auto stem = dir / file_safe(sample_id);
  auto json_path = stem;
  json_path += ".json";
  write_json(json_path, {{"sample_id", sample_id},
                         {"count", cr.count},
                         {"threshold_used", eval::round6(thr)},
                         {"mode", eval::to_string(cfg.mode)}});
  if (confidence_map) {
    std::vector<eval::GridCell> cells;
    for (const auto& p : r.inference.positions) cells.push_back({p.row, p.col});
    auto map_stem = stem;
    map_stem += ".confidence";
    eval::export_confidence_map(r.inference.similarity, cells, r.inference.grid_h, r.inference.grid_w, r.image_h,
                                r.image_w, map_stem);
  }
  log << sample_id << ": count " << cr.count << " (threshold " << eval::format_number(thr) << ", "
      << eval::to_string(cfg.mode) << ")\n";
  return {sample_id, std::move(cr), thr};
}

inline eval::EvalReport cmd_eval(const RunConfig& cfg, std::ostream& log) {
  const auto th = thresholds(cfg);
  const auto data = load_curated(cfg);
  if (data.manifest.test.empty()) throw ValueError("test split is empty");
  const auto rt = load_runtime(cfg);
  std::vector<eval::ClassResult> results;
  std::string predictions;
  for (const auto* s : data.split(data.manifest.test)) {
    const auto r = run_sample(cfg, rt, *s);
    const double thr = threshold_for(cfg, th, r.inference.similarity);
    const auto cr = count_from_similarity(r.inference.similarity, thr);
    const double gt = ground_truth(*s, zero_shot(cfg));
    const double pred = static_cast<double>(cr.count);
    results.push_back({s->label, pred, gt});
    nlohmann::json line{{"sample_id", s->sample_id},
                        {"class", s->label},
                        {"count", cr.count},
                        {"gt", gt},
                        {"abs_error", eval::round6(std::abs(pred - gt))},
                        {"threshold_used", eval::round6(thr)}};
    predictions += line.dump() + "\n";
  }
  const auto rep = eval::per_class_report(results, cfg.mode, th.sigma, th.tau);
  const auto dir = cfg.resolve(cfg.paths.eval);
  prepare_output(dir, cfg);
  eval::write_text(dir / "predictions.jsonl", predictions);
  write_json(dir / "report.json", eval::to_json(rep));
  for (const auto& [label, m] : rep.per_class)
    log << label << ": mae " << eval::format_number(m.mae) << ", rmse " << eval::format_number(m.rmse) << " (n="
        << m.samples << ")\n";
  log << "pooled: mae " << eval::format_number(rep.pooled.mae) << ", rmse " << eval::format_number(rep.pooled.rmse)
      << " (n=" << rep.pooled.samples << ")\n";
  return rep;
}

inline eval::DensityCurve cmd_bins(const RunConfig& cfg, std::ostream& log) {
  const auto path = cfg.resolve(cfg.paths.eval) / "predictions.jsonl";
  require_file(path, "predictions (run `ovc eval` first)");
  std::ifstream f(path);
  std::vector<eval::DensitySample> samples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      samples.push_back(
          {j.at("sample_id").get<std::string>(), j.at("gt").get<double>(), j.at("abs_error").get<double>()});
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  auto curve = eval::quantile_bins(samples, cfg.bins);
  const auto dir = cfg.resolve(cfg.paths.bins);
  prepare_output(dir, cfg);
  eval::write_text(dir / "density.csv", eval::density_csv(curve));
  log << "wrote " << curve.size() << " bins over " << samples.size() << " samples\n";
  return curve;
}

struct TrainOutput {
  std::vector<LossBreakdown> history;
  Checkpoint checkpoint;
};

/// Finetunes the fusion/decoder parameters on the train split, cycling through
/// samples in id order; encoders stay frozen.
inline TrainOutput cmd_train(const RunConfig& cfg, std::ostream& log) {
  if (!cfg.paths.features.empty()) throw ConfigError("train needs images; it does not read precomputed features");
  const auto data = load_curated(cfg);
  if (data.manifest.train.empty()) throw ValueError("train split is empty");
  std::vector<TrainingSample> pool;
  for (const auto* s : data.split(data.manifest.train)) {
    TrainingSample t{load_image(cfg, s->image_id), s->prompt, {}, s->gt_points};
    if (zero_shot(cfg)) {
      for (const auto& b : s->exemplar_boxes) t.gt_points.push_back({(b.x_min + b.x_max) / 2, (b.y_min + b.y_max) / 2});
    } else {
      t.boxes.boxes = s->exemplar_boxes;
    }
    pool.push_back(std::move(t));
  }

  const Runtime init{ModelParams::init(cfg.model, cfg.seed), Encoders::from_seed(cfg.model, cfg.seed), false};
  ParamStore params = merge(to_store(init.model), to_store(init.encoders));
  const FrozenMask frozen = names_with_prefix(params, "encoder.");
  OptimizerState opt{{cfg.optimizer.lr}, 0, {}, {}};
  const TrainConfig tc{cfg.model, cfg.loss, cfg.focal};

  TrainOutput out;
  std::string log_lines;
  std::size_t cursor = 0;
  for (std::size_t step = 0; step < cfg.optimizer.steps; ++step) {
    std::vector<TrainingSample> batch;
    for (std::size_t b = 0; b < cfg.optimizer.batch_size; ++b) batch.push_back(pool[cursor++ % pool.size()]);
    const auto loss = finetune_step(params, frozen, batch, opt, tc);
    out.history.push_back(loss);
    log_lines += nlohmann::json{{"step", step + 1},
                                {"total", eval::round6(loss.total)},
                                {"loc", eval::round6(loss.loc)},
                                {"cls", eval::round6(loss.cls)}}
                     .dump() +
                 "\n";
  }
  out.checkpoint = {std::move(params), frozen};
  const auto dir = cfg.resolve(cfg.paths.checkpoint);
  prepare_output(dir, cfg);
  save_checkpoint(dir, out.checkpoint);
  eval::write_text(dir / "training_log.jsonl", log_lines);
  if (!out.history.empty()) {
    log << "step 1 loss " << eval::format_number(out.history.front().total) << ", step " << out.history.size()
        << " loss " << eval::format_number(out.history.back().total) << "\n";
  }
  return out;
}

}  // namespace ovc::app

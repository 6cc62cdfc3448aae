// Copyright 2026 The ovcount Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ovc/evaluation.hpp"
#include "ovc/losses.hpp"
#include "ovc/model.hpp"
#include "ovc/training.hpp"

namespace ovc::app {

namespace fs = std::filesystem;

struct PathConfig {
  std::vector<std::string> annotations{"annotations"};  // files or directories of *.jsonl
  std::string images = "images";
  std::string features;  // empty: run the fixture encoders on images
  std::string curated = "curated";
  std::string calibration = "calibration";
  std::string eval = "eval";
  std::string bins = "bins";
  std::string count = "count";
  std::string checkpoint = "checkpoint";
};

struct CurationConfig {
  std::size_t min_instances = 4;
  std::size_t calibration_per_dataset = 100;
  std::vector<std::string> test_classes;
  std::vector<std::string> val_classes;
};

struct OptimizerConfig {
  double lr = 1e-5;
  std::size_t batch_size = 4;
  std::size_t steps = 10;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t shots = 3;
  eval::Mode mode = eval::Mode::few_shot;
  std::optional<double> threshold;
  std::size_t bins = 15;
  ModelConfig model;
  LossWeights loss;
  FocalParams focal;
  OptimizerConfig optimizer;
  CurationConfig curation;
  PathConfig paths;
  fs::path base_dir = ".";  // directory that relative paths are resolved against

  fs::path resolve(const std::string& p) const {
    const fs::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  }

  void validate() const {
    model.validate();
    loss.validate();
    if (mode == eval::Mode::few_shot && shots == 0) throw ConfigError("few-shot mode needs shots >= 1");
    if (threshold && !(*threshold >= 0.0 && *threshold <= 1.0)) throw ConfigError("threshold must lie in [0, 1]");
    if (!(optimizer.lr > 0.0)) throw ConfigError("optimizer.lr must be positive");
    if (optimizer.batch_size == 0) throw ConfigError("optimizer.batch_size must be at least 1");
    if (curation.min_instances == 0) throw ConfigError("curation.min_instances must be at least 1");
    if (bins == 0) throw ConfigError("bins must be at least 1");
  }
};

namespace detail {

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

}  // namespace detail

inline RunConfig config_from_json(const nlohmann::json& j, const fs::path& base_dir) {
  RunConfig c;
  c.base_dir = base_dir;
  try {
    detail::read_opt(j, "seed", c.seed);
    detail::read_opt(j, "shots", c.shots);
    detail::read_opt(j, "k", c.model.top_k);
    detail::read_opt(j, "bins", c.bins);
    if (j.contains("mode")) {
      c.mode = eval::parse_mode(j.at("mode").get<std::string>());
    } else {
      c.mode = c.shots == 0 ? eval::Mode::zero_shot : eval::Mode::few_shot;
    }
    if (j.contains("threshold") && !j.at("threshold").is_null()) c.threshold = j.at("threshold").get<double>();
    if (j.contains("model")) {
      const auto& m = j.at("model");
      detail::read_opt(m, "width", c.model.width);
      detail::read_opt(m, "heads", c.model.heads);
      detail::read_opt(m, "rs_channels", c.model.rs_channels);
      detail::read_opt(m, "cv_channels", c.model.cv_channels);
      detail::read_opt(m, "ffn_hidden", c.model.ffn_hidden);
      detail::read_opt(m, "enhancer_layers", c.model.enhancer_layers);
      detail::read_opt(m, "decoder_layers", c.model.decoder_layers);
      detail::read_opt(m, "vocab", c.model.vocab);
      detail::read_opt(m, "roi_size", c.model.roi.output_size);
      detail::read_opt(m, "roi_samples", c.model.roi.samples_per_cell);
    }
    if (j.contains("loss")) {
      const auto& l = j.at("loss");
      detail::read_opt(l, "loc", c.loss.loc);
      detail::read_opt(l, "cls", c.loss.cls);
      detail::read_opt(l, "alpha", c.focal.alpha);
      detail::read_opt(l, "gamma", c.focal.gamma);
    }
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      detail::read_opt(o, "lr", c.optimizer.lr);
      detail::read_opt(o, "batch_size", c.optimizer.batch_size);
      detail::read_opt(o, "steps", c.optimizer.steps);
    }
    if (j.contains("curation")) {
      const auto& cu = j.at("curation");
      detail::read_opt(cu, "min_instances", c.curation.min_instances);
      detail::read_opt(cu, "calibration_per_dataset", c.curation.calibration_per_dataset);
      detail::read_opt(cu, "test_classes", c.curation.test_classes);
      detail::read_opt(cu, "val_classes", c.curation.val_classes);
    }
    if (j.contains("paths")) {
      const auto& p = j.at("paths");
      if (p.contains("annotations")) {
        const auto& a = p.at("annotations");
        c.paths.annotations = a.is_array() ? a.get<std::vector<std::string>>() : std::vector{a.get<std::string>()};
      }
      detail::read_opt(p, "images", c.paths.images);
      detail::read_opt(p, "features", c.paths.features);
      detail::read_opt(p, "curated", c.paths.curated);
      detail::read_opt(p, "calibration", c.paths.calibration);
      detail::read_opt(p, "eval", c.paths.eval);
      detail::read_opt(p, "bins", c.paths.bins);
      detail::read_opt(p, "count", c.paths.count);
      detail::read_opt(p, "checkpoint", c.paths.checkpoint);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j{
      {"seed", c.seed},
      {"shots", c.shots},
      {"k", c.model.top_k},
      {"bins", c.bins},
      {"mode", eval::to_string(c.mode)},
      {"model",
       {{"width", c.model.width},
        {"heads", c.model.heads},
        {"rs_channels", c.model.rs_channels},
        {"cv_channels", c.model.cv_channels},
        {"ffn_hidden", c.model.ffn_hidden},
        {"enhancer_layers", c.model.enhancer_layers},
        {"decoder_layers", c.model.decoder_layers},
        {"vocab", c.model.vocab},
        {"roi_size", c.model.roi.output_size},
        {"roi_samples", c.model.roi.samples_per_cell}}},
      {"loss", {{"loc", c.loss.loc}, {"cls", c.loss.cls}, {"alpha", c.focal.alpha}, {"gamma", c.focal.gamma}}},
      {"optimizer", {{"lr", c.optimizer.lr}, {"batch_size", c.optimizer.batch_size}, {"steps", c.optimizer.steps}}},
      {"curation",
       {{"min_instances", c.curation.min_instances},
        {"calibration_per_dataset", c.curation.calibration_per_dataset},
        {"test_classes", c.curation.test_classes},
        {"val_classes", c.curation.val_classes}}},
      {"paths",
       {{"annotations", c.paths.annotations},
        {"images", c.paths.images},
        {"features", c.paths.features},
        {"curated", c.paths.curated},
        {"calibration", c.paths.calibration},
        {"eval", c.paths.eval},
        {"bins", c.paths.bins},
        {"count", c.paths.count},
        {"checkpoint", c.paths.checkpoint}}}};
  j["threshold"] = c.threshold ? nlohmann::json(*c.threshold) : nlohmann::json(nullptr);
  return j;
}

inline RunConfig load_config(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j, path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

inline nlohmann::json read_json(const fs::path& path, const std::string& what) {
  std::ifstream f(path);
  if (!f) throw IoError("missing " + what + ": " + path.string());
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

/// Creates `dir` and records the effective configuration in it.
inline void prepare_output(const fs::path& dir, const RunConfig& c) {
  fs::create_directories(dir);
  write_json(dir / "run_config.json", to_json(c));
}

}  // namespace ovc::app

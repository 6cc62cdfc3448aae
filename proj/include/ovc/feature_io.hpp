// Copyright 2026 The ovcount Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "ovc/pyramid.hpp"
#include "ovc/tensor_io.hpp"

// Externally computed features: an OVCT tensor plus a JSON sidecar next to it
// (same stem, ".json") of the form {"role": ..., "stride": int, "level": int}.
namespace ovc {

enum class FeatureRole { cv_pyramid_level, rs_map, text_tokens };

inline std::string to_string(FeatureRole r) {
  switch (r) {
    case FeatureRole::cv_pyramid_level: return "cv_pyramid_level";
    case FeatureRole::rs_map: return "rs_map";
    case FeatureRole::text_tokens: return "text_tokens";
  }
  return "?";
}

inline FeatureRole parse_feature_role(const std::string& s) {
  if (s == "cv_pyramid_level") return FeatureRole::cv_pyramid_level;
  if (s == "rs_map") return FeatureRole::rs_map;
  if (s == "text_tokens") return FeatureRole::text_tokens;
  throw FormatError("unknown feature role '" + s + "'");
}

struct FeatureSidecar {
  FeatureRole role = FeatureRole::cv_pyramid_level;
  std::size_t stride = 1;
  std::size_t level = 0;
};

struct FeatureFile {
  FeatureSidecar meta;
  Tensor tensor;
};

inline std::filesystem::path sidecar_path(const std::filesystem::path& tensor_path) {
  auto p = tensor_path;
  return p.replace_extension(".json");
}

inline void save_features(const std::filesystem::path& path, const Tensor& t, const FeatureSidecar& meta) {
  save_ovct(path, t);
  nlohmann::json j{{"role", to_string(meta.role)}, {"stride", meta.stride}, {"level", meta.level}};
  std::ofstream f(sidecar_path(path));
  if (!f) throw IoError("cannot write sidecar for " + path.string());
  f << j.dump() << '\n';
}

inline FeatureFile read_feature_file(const std::filesystem::path& path) {
  const auto side = sidecar_path(path);
  std::ifstream f(side);
  if (!f) throw IoError("missing sidecar " + side.string());
  FeatureSidecar meta;
  try {
    const auto j = nlohmann::json::parse(f);
    meta.role = parse_feature_role(j.at("role").get<std::string>());
    const auto stride = j.value("stride", 1LL);
    const auto level = j.value("level", 0LL);
    if (stride < 1 || level < 0) throw FormatError("stride must be >= 1 and level >= 0");
    meta.stride = static_cast<std::size_t>(stride);
    meta.level = static_cast<std::size_t>(level);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(side.string() + ": " + e.what());
  }
  Tensor t = load_ovct(path);
  const std::size_t want = meta.role == FeatureRole::text_tokens ? 2 : 3;
  if (t.rank() != want) {
    throw FormatError(path.string() + ": role " + to_string(meta.role) + " needs rank " + std::to_string(want) +
                      " but tensor is " + ovc::to_string(t.dims()));
  }
  return {meta, std::move(t)};
}

/// Loads one feature file: map roles become a single-level pyramid, text
/// tokens become a TokenMatrix.
inline std::variant<FeaturePyramid, TokenMatrix> load_features(const std::filesystem::path& path) {
  auto file = read_feature_file(path);
  if (file.meta.role == FeatureRole::text_tokens) return TokenMatrix(std::move(file.tensor), TokenRole::text);
  return FeaturePyramid({{file.meta.stride, std::move(file.tensor)}});
}

/// Assembles a pyramid from cv_pyramid_level files ordered by their level index.
inline FeaturePyramid load_pyramid(std::span<const std::filesystem::path> paths) {
  std::vector<FeatureFile> files;
  for (const auto& p : paths) {
    auto f = read_feature_file(p);
    if (f.meta.role != FeatureRole::cv_pyramid_level) throw FormatError(p.string() + ": not a cv_pyramid_level file");
    files.push_back(std::move(f));
  }
  std::sort(files.begin(), files.end(), [](const auto& a, const auto& b) { return a.meta.level < b.meta.level; });
  std::vector<PyramidLevel> levels;
  for (std::size_t i = 0; i < files.size(); ++i) {
    if (files[i].meta.level != i) throw FormatError("pyramid levels are not contiguous from 0");
    levels.push_back({files[i].meta.stride, std::move(files[i].tensor)});
  }
  return FeaturePyramid(std::move(levels));
}

}  // namespace ovc

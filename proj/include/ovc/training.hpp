// Copyright 2026 The ovcount Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "ovc/losses.hpp"
#include "ovc/matching.hpp"
#include "ovc/model.hpp"
#include "ovc/tensor_io.hpp"

namespace ovc {

/// Names of parameters that must never change during finetuning.
using FrozenMask = std::set<std::string>;

inline FrozenMask names_with_prefix(const ParamStore& s, const std::string& prefix) {
  FrozenMask m;
  for (const auto& [name, _] : s)
    if (name.rfind(prefix, 0) == 0) m.insert(name);
  return m;
}

struct AdamConfig {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimizerState {
  AdamConfig config;
  std::size_t step = 0;
  std::map<std::string, std::vector<double>> first_moment;
  std::map<std::string, std::vector<double>> second_moment;
};

/// One bias-corrected Adam update of every parameter that has a gradient and
/// is not frozen.
inline void adam_step(ParamStore& params, const ParamStore& grads, const FrozenMask& frozen, OptimizerState& opt) {
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw ValueError("adam: gradient for unknown parameter '" + name + "'");
    if (it->second.dims() != g.dims()) {
      throw ShapeError("adam: gradient for '" + name + "' has shape " + to_string(g.dims()) + ", parameter has " +
                       to_string(it->second.dims()));
    }
  }
  ++opt.step;
  const auto& c = opt.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(opt.step));
  for (const auto& [name, g] : grads) {
    if (frozen.contains(name)) continue;
    Tensor& p = params.at(name);
    auto& m = opt.first_moment[name];
    auto& v = opt.second_moment[name];
    if (m.empty()) m.assign(p.numel(), 0.0);
    if (v.empty()) v.assign(p.numel(), 0.0);
    if (m.size() != p.numel() || v.size() != p.numel()) throw ShapeError("adam: moment shape differs for '" + name + "'");
    std::vector<double> next(p.data().begin(), p.data().end());
    for (std::size_t i = 0; i < next.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      next[i] -= c.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + c.eps);
    }
    p = Tensor(p.dims(), std::move(next));
  }
}

struct TrainingSample {
  Tensor image;                  // H x W x 3
  std::string prompt;
  ExemplarBoxes boxes;           // image pixels
  std::vector<Point2> gt_points; // image pixels
};

struct TrainConfig {
  ModelConfig model;
  LossWeights weights;
  FocalParams focal;
};

struct LossBreakdown {
  double total = 0, loc = 0, cls = 0;
};

struct BatchLoss {
  LossBreakdown value;
  ParamStore grads;  // only for parameters that were trainable
};

/// Mean batch loss and gradients for every non-frozen model parameter.
/// Encoders run outside the tape, so their tensors never receive gradients.
inline BatchLoss batch_loss(const ParamStore& params, const FrozenMask& frozen, std::span<const TrainingSample> batch,
                            const TrainConfig& cfg) {
  if (batch.empty()) throw ValueError("training batch is empty");
  ModelParams model = ModelParams::init(cfg.model, 0);
  assign_from_store(model, params);
  Encoders enc = Encoders::from_seed(cfg.model, 0);
  assign_from_store(enc, params);

  GradTape tape;
  ParamBinder bind(tape);
  for_each_tensor(model, "", [&](const std::string& name, const Tensor& t) {
    if (!frozen.contains(name)) bind.trainable(t, name);
  });

  BatchLoss out;
  std::vector<Var> per_sample;
  for (const auto& s : batch) {
    const auto features = enc.image.encode(s.image);
    const auto text = enc.text.encode(s.prompt);
    s.boxes.validate(s.image.dim(1), s.image.dim(0));
    auto fp = forward(model, cfg.model, features, text, s.boxes, bind);

    std::vector<Point2> gt;
    const double W = static_cast<double>(s.image.dim(1)), H = static_cast<double>(s.image.dim(0));
    for (const auto& p : s.gt_points) gt.push_back({p.x / W, p.y / H});
    const auto match = hungarian_match(to_points(fp.decoded.centers.value()), gt);
    Var loc = loc_loss(fp.decoded.centers, match, gt);
    const Tensor targets = focal_targets(fp.decoded.scores.value().rows(), fp.decoded.scores.value().cols(), match);
    Var cls = focal_loss(fp.decoded.scores, targets, cfg.focal);
    out.value.loc += loc.value().item();
    out.value.cls += cls.value().item();
    per_sample.push_back(total_loss(loc, cls, cfg.weights));
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  Var total = per_sample.front();
  for (std::size_t i = 1; i < per_sample.size(); ++i) total = add(total, per_sample[i]);
  total = scale(total, inv);
  out.value.total = total.value().item();
  out.value.loc *= inv;
  out.value.cls *= inv;

  const auto g = tape.grad(total);
  for (const auto& [name, var] : bind.trainables()) out.grads.emplace(name, g.of(var));
  return out;
}

/// One optimization step on `batch`. Frozen parameters are left bit-identical.
inline LossBreakdown finetune_step(ParamStore& params, const FrozenMask& frozen, std::span<const TrainingSample> batch,
                                   OptimizerState& opt, const TrainConfig& cfg) {
  auto loss = batch_loss(params, frozen, batch, cfg);
  adam_step(params, loss.grads, frozen, opt);
  return loss.value;
}

// ---------------------------------------------------------------------------
// Checkpoints: one OVCT file per tensor plus manifest.json.

struct Checkpoint {
  ParamStore params;
  FrozenMask frozen;
};

inline void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ck) {
  std::filesystem::create_directories(dir);
  nlohmann::json files = nlohmann::json::object();
  for (const auto& [name, t] : ck.params) {
    const std::string file = name + ".ovct";
    save_ovct(dir / file, t);
    files[name] = file;
  }
  nlohmann::json manifest{{"tensors", files}, {"frozen", std::vector<std::string>(ck.frozen.begin(), ck.frozen.end())}};
  std::ofstream f(dir / "manifest.json");
  if (!f) throw IoError("cannot write " + (dir / "manifest.json").string());
  f << manifest.dump(2) << '\n';
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto mpath = dir / "manifest.json";
  std::ifstream f(mpath);
  if (!f) throw IoError("missing checkpoint manifest " + mpath.string());
  Checkpoint ck;
  try {
    const auto j = nlohmann::json::parse(f);
    for (const auto& [name, file] : j.at("tensors").items()) ck.params.emplace(name, load_ovct(dir / file.get<std::string>()));
    for (const auto& name : j.at("frozen")) ck.frozen.insert(name.get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(mpath.string() + ": " + e.what());
  }
  for (const auto& name : ck.frozen)
    if (!ck.params.contains(name)) throw FormatError("frozen parameter '" + name + "' not in checkpoint");
  return ck;
}

}  // namespace ovc

// Copyright 2026 The ovcount Authors
// SPDX-License-Identifier: Apache-2.0

// ovc: curation, counting, calibration, training and evaluation runs.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data or invariant error.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "ovc/app/commands.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> shots;
  std::optional<double> threshold;
  std::optional<std::string> mode;
  std::optional<std::string> out;
};

void add_common(CLI::App* cmd, Overrides& o, bool needs_config = true) {
  auto* c = cmd->add_option("--config", o.config, "run configuration (JSON)");
  if (needs_config) c->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "random seed");
  cmd->add_option("--shots", o.shots, "exemplars per sample (0 = zero-shot)");
  cmd->add_option("--threshold", o.threshold, "explicit detection threshold in [0, 1]")->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--mode", o.mode, "zero-shot or few-shot")->check(CLI::IsMember({"zero-shot", "few-shot"}));
  cmd->add_option("--out", o.out, "output directory");
}

// Flags win over the config file. --shots without --mode picks the mode.
// --out is taken relative to the working directory.
ovc::app::RunConfig resolve(const Overrides& o, std::string ovc::app::PathConfig::*out_field) {
  auto cfg = ovc::app::load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.shots) {
    cfg.shots = *o.shots;
    if (!o.mode) cfg.mode = cfg.shots == 0 ? ovc::eval::Mode::zero_shot : ovc::eval::Mode::few_shot;
  }
  if (o.mode) cfg.mode = ovc::eval::parse_mode(*o.mode);
  if (o.threshold) cfg.threshold = *o.threshold;
  if (o.out && out_field) cfg.paths.*out_field = std::filesystem::absolute(*o.out).string();
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Open-vocabulary object counting for remote-sensing imagery"};
  app.require_subcommand(1);

  Overrides o;
  std::size_t images = 20;
  std::string sample;
  bool confidence_map = false;

  auto* fixtures = app.add_subcommand("fixtures", "generate a seeded synthetic dataset");
  add_common(fixtures, o, false);
  fixtures->add_option("--images", images, "number of images")->check(CLI::Range(2, 100000));

  auto* curate = app.add_subcommand("curate", "detections to single-class counting samples and splits");
  add_common(curate, o);
  auto* calibrate = app.add_subcommand("calibrate", "pick detection thresholds on the calibration split");
  add_common(calibrate, o);
  auto* count = app.add_subcommand("count", "count one curated sample");
  add_common(count, o);
  count->add_option("--sample", sample, "sample id")->required();
  count->add_flag("--confidence-map", confidence_map, "also write confidence-map CSV and PGM");
  auto* evaluate = app.add_subcommand("eval", "evaluate the test split");
  add_common(evaluate, o);
  auto* bins = app.add_subcommand("bins", "quantile-binned error against ground-truth count");
  add_common(bins, o);
  auto* train = app.add_subcommand("train", "finetune fusion and decoder with frozen encoders");
  add_common(train, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  using ovc::app::PathConfig;
  try {
    if (fixtures->parsed()) {
      ovc::app::FixtureOptions opt;
      opt.images = images;
      opt.seed = o.seed.value_or(7);
      ovc::app::cmd_fixtures(o.out.value_or("fixtures"), opt, std::cout);
    } else if (curate->parsed()) {
      ovc::app::cmd_curate(resolve(o, &PathConfig::curated), std::cout);
    } else if (calibrate->parsed()) {
      ovc::app::cmd_calibrate(resolve(o, &PathConfig::calibration), std::cout);
    } else if (count->parsed()) {
      ovc::app::cmd_count(resolve(o, &PathConfig::count), sample, confidence_map, std::cout);
    } else if (evaluate->parsed()) {
      ovc::app::cmd_eval(resolve(o, &PathConfig::eval), std::cout);
    } else if (bins->parsed()) {
      ovc::app::cmd_bins(resolve(o, &PathConfig::bins), std::cout);
    } else if (train->parsed()) {
      ovc::app::cmd_train(resolve(o, &PathConfig::checkpoint), std::cout);
    }
  } catch (const ovc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

// SPDX-License-Identifier: Apache-2.0
//
// nira — single-channel room-acoustics estimation toolkit CLI.
//
// Subcommands: simulate-rirs, synth-corpus, extract, train, fuse,
// estimate, evaluate, recipe. Exit codes: 0 success, 2 configuration
// error, 3 data error, 4 numerical failure.

#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "nira/pipeline.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  int64_t seed_override = -1;
};

nira::pipeline::Config load(const CommonArgs& args) {
  nira::pipeline::Config cfg = nira::pipeline::load_config(args.config_path);
  if (args.seed_override >= 0) {
    cfg.seed = static_cast<uint64_t>(args.seed_override);
    cfg.train.cfg.seed = cfg.seed;
  }
  return cfg;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "configuration file (JSON)")
      ->required();
  cmd->add_option("--seed", args.seed_override,
                  "override the configured seed");
}

void print_report_line(const nira::pipeline::RecipeModelResult& r) {
  std::cout << "target=" << r.target_kind
            << " eval_rmsd=" << r.report.global.rmsd
            << " n=" << r.report.global.n << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nira: non-intrusive room acoustics estimation toolkit"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string recipe_name;
  std::string model_path, split = "eval", estimates_path, out_path,
              target = "t60";

  CLI::App* sim = app.add_subcommand("simulate-rirs",
                                     "simulate the configured room set");
  add_common(sim, args);

  CLI::App* synth = app.add_subcommand(
      "synth-corpus", "synthesize reverberant noisy utterances + manifest");
  add_common(synth, args);

  CLI::App* extract =
      app.add_subcommand("extract", "fill the feature cache for the manifest");
  add_common(extract, args);

  CLI::App* train =
      app.add_subcommand("train", "train BLSTM models on the primary corpus");
  add_common(train, args);

  CLI::App* fuse = app.add_subcommand(
      "fuse", "train/refresh the 4-model SVR fusion (recipe v3 flow)");
  add_common(fuse, args);

  CLI::App* estimate = app.add_subcommand(
      "estimate", "apply a trained model to a manifest split");
  add_common(estimate, args);
  estimate->add_option("--model", model_path, "model file (.nirm)")->required();
  estimate->add_option("--split", split, "train|dev|eval");
  estimate->add_option("--out", out_path, "estimates CSV output path");

  CLI::App* evaluate = app.add_subcommand(
      "evaluate", "compute RMSD / box statistics from an estimates file");
  add_common(evaluate, args);
  evaluate->add_option("--estimates", estimates_path, "estimates CSV")
      ->required();
  evaluate->add_option("--target", target, "drr|t60")->required();
  evaluate->add_option("--out", out_path, "report path prefix");

  CLI::App* recipe =
      app.add_subcommand("recipe", "run a full configuration (v1|v2|v3)");
  add_common(recipe, args);
  recipe->add_option("name", recipe_name, "v1|v2|v3")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) {
      nira::pipeline::stage_simulate_rirs(load(args));
    } else if (synth->parsed()) {
      nira::pipeline::stage_synth_corpus(load(args));
    } else if (extract->parsed()) {
      const auto cfg = load(args);
      const auto manifest = nira::pipeline::DatasetManifest::load(
          cfg.workspace + "/manifest.csv", cfg.workspace, true);
      const int misses = nira::pipeline::stage_extract(cfg, manifest);
      std::cout << "extracted=" << misses
                << " cached=" << manifest.records.size() - misses << '\n';
    } else if (train->parsed()) {
      for (const auto& p : nira::pipeline::stage_train(load(args)))
        std::cout << "model=" << p << '\n';
    } else if (fuse->parsed()) {
      const auto result = nira::pipeline::run_recipe_v3(load(args));
      for (const auto& [tgt, rmsd] : result.fused_rmsd)
        std::cout << "target=" << tgt << " fused_rmsd=" << rmsd << '\n';
    } else if (estimate->parsed()) {
      const auto cfg = load(args);
      const auto est =
          nira::pipeline::stage_estimate(cfg, model_path, split, out_path);
      std::cout << "estimates=" << est.size() << '\n';
    } else if (evaluate->parsed()) {
      const auto cfg = load(args);
      const auto report =
          nira::pipeline::stage_evaluate(cfg, estimates_path, target, out_path);
      std::cout << "rmsd=" << report.global.rmsd << " n=" << report.global.n
                << " median=" << report.global.box.median
                << " iqr=" << report.global.box.iqr << '\n';
    } else if (recipe->parsed()) {
      const auto cfg = load(args);
      nira::pipeline::RecipeResult result;
      if (recipe_name == "v1") {
        result = nira::pipeline::run_recipe_v1(cfg);
      } else if (recipe_name == "v2") {
        result = nira::pipeline::run_recipe_v2(cfg);
      } else if (recipe_name == "v3") {
        result = nira::pipeline::run_recipe_v3(cfg);
      } else {
        throw nira::ConfigError("unknown recipe: " + recipe_name);
      }
      for (const auto& r : result.per_target) print_report_line(r);
      for (const auto& [tgt, rmsd] : result.fused_rmsd)
        std::cout << "target=" << tgt << " fused_rmsd=" << rmsd << '\n';
    }
  } catch (const nira::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  }
  return 0;
}

// SPDX-License-Identifier: Apache-2.0
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "srdl/cli.hpp"

namespace {

using namespace srdl;

void emit(const std::string& text, const std::string& out_path) {
  std::cout << text;
  if (!out_path.empty()) cli::detail::write_text(out_path, text);
}

void add_data_options(CLI::App* cmd, cli::DataSelection& d, std::string& split) {
  cmd->add_option("--config", d.config, "run config or manifest whose data section to use");
  cmd->add_option("--split", split, "train or test")->check(CLI::IsMember({"train", "test"}));
  cmd->add_option("--csv", d.csv, "CSV dataset (label,features...)");
  cmd->add_option("--idx-images", d.idx_images, "IDX image file");
  cmd->add_option("--idx-labels", d.idx_labels, "IDX label file");
}

int run(int argc, char** argv) {
  CLI::App app{"Self-referenced two-stage training and evaluation"};
  app.set_version_flag("--version", SRDL_VERSION);
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "run a configured training strategy");
  std::string config, out;
  std::optional<std::uint64_t> seed, restart_seed;
  train->add_option("--config", config, "config file or run manifest")->required();
  train->add_option("--out", out, "output directory (overrides output.dir)");
  train->add_option("--seed", seed, "overrides train.seed");
  train->add_option("--restart-seed", restart_seed, "overrides train.restart_seed");

  // eval
  auto* eval = app.add_subcommand("eval", "top-1 or retrieval metrics; several checkpoints form an ensemble");
  cli::EvalOptions eval_opts;
  std::string eval_split = "test", eval_out;
  eval->add_option("--checkpoint", eval_opts.checkpoints, "checkpoint file (repeatable)")->required();
  add_data_options(eval, eval_opts.data, eval_split);
  eval->add_flag("--retrieval", eval_opts.retrieval, "rank-1, rank-5 and mAP on penultimate embeddings");
  eval->add_flag("--f64", eval_opts.f64, "evaluate in 64-bit");
  eval->add_option("--out", eval_out, "also write the CSV here");

  // landscape
  auto* land = app.add_subcommand("landscape", "loss along random unit directions");
  cli::LandscapeOptions land_opts;
  std::string land_split = "train", land_out;
  land->add_option("--checkpoint", land_opts.checkpoint, "checkpoint file")->required();
  add_data_options(land, land_opts.data, land_split);
  land->add_option("--directions", land_opts.directions, "number of random directions")->capture_default_str();
  land->add_option("--d-max", land_opts.d_max, "largest perturbation magnitude")->capture_default_str();
  land->add_option("--points", land_opts.points, "grid points from 0 to d-max")->capture_default_str();
  land->add_option("--seed", land_opts.seed, "direction seed")->capture_default_str();
  land->add_flag("--f64", land_opts.f64, "evaluate in 64-bit");
  land->add_option("--out", land_out, "also write the CSV here");

  // compare
  auto* compare = app.add_subcommand("compare", "accuracy and cost table from run summaries");
  std::string vanilla, srdl_report, kd_report, compare_out;
  compare->add_option("--vanilla", vanilla, "vanilla summary.json")->required();
  compare->add_option("--srdl", srdl_report, "srdl summary.json")->required();
  compare->add_option("--kd", kd_report, "kd summary.json");
  compare->add_option("--out", compare_out, "also write the CSV here");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "write the configured synthetic mixture as CSV");
  std::string gen_config, gen_out = "data";
  gen->add_option("--config", gen_config, "config file");
  gen->add_option("--out", gen_out, "output directory")->capture_default_str();
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--seed", gen_seed, "overrides data.seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? cli::kExitOk : cli::kExitUsage;
  }

  try {
    if (*train) {
      auto m = load_config(config);
      if (!out.empty()) set_config_value(m, "output.dir", out);
      if (seed) set_config_value(m, "train.seed", std::to_string(*seed));
      if (restart_seed) set_config_value(m, "train.restart_seed", std::to_string(*restart_seed));
      cli::cmd_train(m, std::cerr);
    } else if (*eval) {
      eval_opts.data.split = eval_split == "train" ? Split::train : Split::test;
      emit(cli::cmd_eval(eval_opts), eval_out);
    } else if (*land) {
      land_opts.data.split = land_split == "train" ? Split::train : Split::test;
      emit(cli::cmd_landscape(land_opts), land_out);
    } else if (*compare) {
      emit(cli::cmd_compare(vanilla, srdl_report, kd_report), compare_out);
    } else if (*gen) {
      auto m = gen_config.empty() ? config_defaults() : load_config(gen_config);
      if (gen_seed) set_config_value(m, "data.seed", std::to_string(*gen_seed));
      cli::cmd_gen_data(m, gen_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "srdl: " << cli::error_message(e) << "\n";
    return cli::exit_code_for(e);
  }
  return cli::kExitOk;
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }

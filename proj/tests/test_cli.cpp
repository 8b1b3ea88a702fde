// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "srdl/cli.hpp"

using namespace srdl;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("srdl_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::trunc) << text; }

// A run small enough to finish in milliseconds.
std::string tiny_config(const std::string& strategy, const fs::path& out) {
  return "strategy = " + strategy +
         "\n"
         "model.hidden = 8\n"
         "data.classes = 3\n"
         "data.per_class = 20\n"
         "data.test_per_class = 10\n"
         "data.dim = 4\n"
         "train.epochs = 4\n"
         "optimizer.batch_size = 16\n"
         "output.dir = " +
         out.string() + "\n";
}

struct Completed {
  int code = -1;
  std::string stderr_text;
};

// Runs the srdl binary named by SRDL_CLI with `args`.
Completed run_cli(const std::string& args, const fs::path& work) {
  const char* cli = std::getenv("SRDL_CLI");
  if (!cli) return {};
  const auto err = work / "stderr.txt";
  const std::string cmd = std::string(cli) + " " + args + " > " + (work / "stdout.txt").string() + " 2> " + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err)};
}

#define REQUIRE_CLI()                                                      \
  if (!std::getenv("SRDL_CLI")) GTEST_SKIP() << "SRDL_CLI is not set"

RunReport report_with_accuracy(double top1, std::uint64_t fingerprint = 0xabc) {
  RunReport r;
  r.final_test_top1 = top1;
  r.final_train_top1 = 1.0;
  r.dataset_fingerprint = fingerprint;
  r.forward_flops = 100;
  r.train_size = 10;
  r.trcost = 1000;
  r.training_flops_estimate = 3000;
  r.epochs.resize(2);
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

TEST(Config, DefaultsHoldReferenceSettings) {
  const auto c = to_run_config(config_defaults());
  EXPECT_EQ(c.strategy, Strategy::srdl);
  EXPECT_EQ(c.optimizer.schedule.initial_lr, 0.1);
  EXPECT_EQ(c.optimizer.schedule.drop_factor, 0.1);
  EXPECT_EQ(c.optimizer.schedule.drop_points, (std::vector<double>{0.5, 0.75}));
  EXPECT_EQ(c.optimizer.momentum, 0.9);
  EXPECT_EQ(c.optimizer.weight_decay, 0.0002);
  EXPECT_EQ(c.optimizer.batch_size, 128u);
  EXPECT_EQ(c.temperature, 3.0);
  EXPECT_TRUE(c.stage_complete);
  EXPECT_TRUE(c.restart);
  EXPECT_FALSE(c.f64);
}

TEST(Config, ParsesCommentsAndOverrides) {
  const auto m = parse_config_text("# run\nstrategy = vanilla  # inline\n\n  train.epochs=12\nsrdl.restart = off\n");
  const auto c = to_run_config(m);
  EXPECT_EQ(c.strategy, Strategy::vanilla);
  EXPECT_EQ(c.epochs, 12);
  EXPECT_FALSE(c.restart);
  EXPECT_EQ(parse_config_text(config_to_text(m)), m);
}

TEST(Config, UnknownKeyNamesFileAndLine) {
  try {
    parse_config_text("strategy = srdl\ntrain.epoch = 3\n", "x.cfg");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("x.cfg:2"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("train.epoch"), std::string::npos);
  }
  EXPECT_THROW(parse_config_text("no equals sign\n"), ConfigError);
}

TEST(Config, FieldLevelValidationMessages) {
  const auto expect_field = [](const std::string& text, const std::string& key) {
    try {
      to_run_config(parse_config_text(text));
      ADD_FAILURE() << "expected ConfigError for " << key;
    } catch (const ConfigError& e) {
      EXPECT_EQ(std::string(e.what()).rfind(key + ":", 0), 0u) << e.what();
    }
  };
  expect_field("optimizer.momentum = 1.5\n", "optimizer.momentum");
  expect_field("train.epochs = 1\n", "train.epochs");
  expect_field("train.temperature = -2\n", "train.temperature");
  expect_field("schedule.drop_points = 0.75, 0.5\n", "schedule.drop_points");
  expect_field("optimizer.batch_size = many\n", "optimizer.batch_size");
  expect_field("data.source = csv\n", "data.train_csv");
  expect_field("strategy = kd\n", "kd.teacher_checkpoint");
  expect_field("model.arch = resnet\n", "model.arch");
  expect_field("data.augment = rotate\n", "data.augment");
}

TEST(Config, ManifestJsonLoadsAsConfig) {
  const auto dir = scratch("manifest");
  auto m = config_defaults();
  m["train.epochs"] = "7";
  cli::detail::write_text((dir / "manifest.json").string(), dump_json(cli::detail::manifest_json(m)));
  EXPECT_EQ(load_config((dir / "manifest.json").string()), m);
  spit(dir / "bad.json", "{\"config\": {\"train.epochs\": 7}}");
  EXPECT_THROW(load_config((dir / "bad.json").string()), ConfigError);
}

TEST(ExitCodes, MapErrorFamilies) {
  EXPECT_EQ(cli::exit_code_for(ConfigError("x")), cli::kExitUsage);
  EXPECT_EQ(cli::exit_code_for(ContractError("x")), cli::kExitUsage);
  EXPECT_EQ(cli::exit_code_for(DataError("x")), cli::kExitUsage);
  EXPECT_EQ(cli::exit_code_for(FormatError("x")), cli::kExitUsage);
  EXPECT_EQ(cli::exit_code_for(NumericError("x", 4)), cli::kExitNumeric);
  EXPECT_EQ(cli::exit_code_for(std::runtime_error("x")), cli::kExitInternal);
  EXPECT_NE(cli::error_message(NumericError("loss blew up", 4)).find("epoch 4"), std::string::npos);
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

TEST(CmdTrain, SrdlRunWritesArtifacts) {
  const auto dir = scratch("srdl");
  auto m = parse_config_text(tiny_config("srdl", dir / "run"));
  m["srdl.ensemble"] = "true";
  std::ostringstream log;
  const auto out = cli::cmd_train(m, log);
  for (const char* f : {"manifest.json", "run.cfg", "stage1.ckpt", "final.ckpt", "knowledge.srkn", "report.csv",
                        "summary.json", "timing.json", "ensemble.csv"}) {
    EXPECT_TRUE(fs::exists(out.dir / f)) << f;
  }
  const auto csv = slurp(out.dir / "report.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kReportCsvHeader);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  const auto summary = load_report((out.dir / "summary.json").string());
  EXPECT_EQ(summary.epochs, out.report.epochs);
  EXPECT_EQ(summary.trcost, out.report.trcost);
  EXPECT_EQ(load_checkpoint((out.dir / "stage1.ckpt").string()).epoch, 2);
  EXPECT_NE(slurp(out.dir / "ensemble.csv").find("top1,ensemble,"), std::string::npos);
  EXPECT_EQ(load_config((out.dir / "manifest.json").string()), m);
}

TEST(CmdTrain, KdWithInSessionTeacherCountsTeacherCost) {
  const auto dir = scratch("kd");
  auto m = parse_config_text(tiny_config("kd", dir / "run"));
  m["kd.teacher.arch"] = "mlp";
  m["kd.teacher.hidden"] = "16";
  m["kd.teacher.epochs"] = "3";
  std::ostringstream log;
  const auto out = cli::cmd_train(m, log);
  EXPECT_TRUE(fs::exists(out.dir / "teacher.ckpt"));
  const auto teacher = load_report((out.dir / "teacher_summary.json").string());
  EXPECT_EQ(out.report.teacher_trcost, teacher.trcost);
  EXPECT_EQ(out.report.table_trcost(), out.report.trcost + teacher.trcost);

  // reuse the trained teacher as a pre-existing checkpoint
  auto m2 = parse_config_text(tiny_config("kd", dir / "run2"));
  m2["kd.teacher_checkpoint"] = (out.dir / "teacher.ckpt").string();
  const auto out2 = cli::cmd_train(m2, log);
  EXPECT_EQ(out2.report.teacher_trcost, Flops{0});
}

TEST(CmdTrain, RepeatedRunIsByteIdentical) {
  const auto dir = scratch("repeat");
  const auto a = cli::cmd_train(parse_config_text(tiny_config("srdl", dir / "a")), std::cerr);
  const auto b = cli::cmd_train(parse_config_text(tiny_config("srdl", dir / "b")), std::cerr);
  for (const char* f : {"stage1.ckpt", "final.ckpt", "knowledge.srkn", "report.csv", "summary.json"}) {
    EXPECT_EQ(slurp(a.dir / f), slurp(b.dir / f)) << f;
  }
}

TEST(CmdTrain, CsvSourceTrainsAndEvaluates) {
  const auto dir = scratch("csvsrc");
  const auto gen = parse_config_text(tiny_config("vanilla", dir / "unused"));
  cli::cmd_gen_data(gen, dir / "data");
  auto m = gen;
  m["data.source"] = "csv";
  m["data.train_csv"] = (dir / "data" / "train.csv").string();
  m["data.test_csv"] = (dir / "data" / "test.csv").string();
  m["output.dir"] = (dir / "run").string();
  const auto out = cli::cmd_train(m, std::cerr);
  // same samples as the synthetic source, so the same data fingerprint
  const auto synthetic = cli::load_data(to_run_config(gen).data);
  EXPECT_EQ(out.report.dataset_fingerprint, synthetic.train.fingerprint());
  EXPECT_TRUE(std::isfinite(out.report.final_test_top1));
}

// ---------------------------------------------------------------------------
// eval, landscape, compare
// ---------------------------------------------------------------------------

TEST(CmdEval, MatchesReportAndAddsEnsembleRow) {
  const auto dir = scratch("eval");
  const auto run = cli::cmd_train(parse_config_text(tiny_config("srdl", dir / "run")), std::cerr);
  const auto cfg = (run.dir / "manifest.json").string();
  cli::EvalOptions single{{(run.dir / "final.ckpt").string()}, {cfg, Split::train, "", "", ""}, false, false};
  const auto csv = cli::cmd_eval(single);
  EXPECT_NE(csv.find("top1," + single.checkpoints[0] + "," + format_double(run.report.final_train_top1) + "\n"),
            std::string::npos)
      << csv;
  EXPECT_EQ(csv.find("ensemble"), std::string::npos);

  cli::EvalOptions pair = single;
  pair.checkpoints = {(run.dir / "stage1.ckpt").string(), (run.dir / "final.ckpt").string()};
  pair.data.split = Split::test;
  EXPECT_NE(cli::cmd_eval(pair).find("top1,ensemble,"), std::string::npos);

  cli::EvalOptions retrieval = single;
  retrieval.retrieval = true;
  const auto r = cli::cmd_eval(retrieval);
  for (const char* metric : {"rank1,", "rank5,", "mAP,"}) EXPECT_NE(r.find(metric), std::string::npos) << metric;
}

TEST(CmdEval, ClassMismatchIsContractError) {
  const auto dir = scratch("mismatch");
  const auto run = cli::cmd_train(parse_config_text(tiny_config("vanilla", dir / "run")), std::cerr);
  auto other = parse_config_text(tiny_config("vanilla", dir / "other"));
  other["data.classes"] = "4";
  spit(dir / "other.cfg", config_to_text(other));
  cli::EvalOptions o{{(run.dir / "final.ckpt").string()}, {(dir / "other.cfg").string(), Split::test, "", "", ""}};
  EXPECT_THROW(cli::cmd_eval(o), ContractError);
}

TEST(CmdLandscape, RowCountAndZeroGrid) {
  const auto dir = scratch("landscape");
  const auto run = cli::cmd_train(parse_config_text(tiny_config("vanilla", dir / "run")), std::cerr);
  cli::LandscapeOptions o;
  o.checkpoint = (run.dir / "final.ckpt").string();
  o.data.config = (run.dir / "manifest.json").string();
  o.directions = 3;
  o.points = 4;
  const auto csv = cli::cmd_landscape(o);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 3 * 4);

  o.points = 1;
  o.f64 = true;
  const auto zero = cli::cmd_landscape(o);
  const auto base = evaluate(load_checkpoint(o.checkpoint).spec,
                             load_checkpoint(o.checkpoint).params.cast<double>(),
                             cli::load_data(to_run_config(load_config(o.data.config)).data).train)
                        .mean_ce;
  std::istringstream lines(zero);
  std::string line;
  std::getline(lines, line);
  int rows = 0;
  while (std::getline(lines, line)) {
    ++rows;
    EXPECT_EQ(line.substr(line.find(',') + 1), "0," + format_double(base));
  }
  EXPECT_EQ(rows, 3);
}

TEST(CmdCompare, GainRowFromRoundedAccuracies) {
  const auto dir = scratch("compare");
  write_json(report_to_json(report_with_accuracy(0.6902)), (dir / "v.json").string());
  write_json(report_to_json(report_with_accuracy(0.7163)), (dir / "s.json").string());
  const auto table = cli::cmd_compare((dir / "v.json").string(), (dir / "s.json").string());
  EXPECT_NE(table.find("vanilla,69.02,"), std::string::npos) << table;
  EXPECT_NE(table.find("srdl,71.63,"), std::string::npos);
  EXPECT_NE(table.find("Gain,+2.61,"), std::string::npos);
  const auto same = cli::cmd_compare((dir / "v.json").string(), (dir / "v.json").string());
  EXPECT_NE(same.find("Gain,0.00,"), std::string::npos);
  EXPECT_NE(same.find(",1.000000,1.000000\n"), std::string::npos);
}

TEST(CmdCompare, DifferentDatasetsAreRejected) {
  const auto dir = scratch("compare_fp");
  write_json(report_to_json(report_with_accuracy(0.5, 1)), (dir / "v.json").string());
  write_json(report_to_json(report_with_accuracy(0.5, 2)), (dir / "s.json").string());
  EXPECT_THROW(cli::cmd_compare((dir / "v.json").string(), (dir / "s.json").string()), ContractError);
}

TEST(Report, JsonRoundTripAndMalformedInput) {
  auto r = report_with_accuracy(0.25);
  r.epochs = {{1, 1, 0.1, 2.0, 0.0, 2.0, 0.5}, {2, 2, 0.1, 1.5, 0.01, 1.59, 0.75}};
  r.final_test_top1 = std::numeric_limits<double>::quiet_NaN();
  r.seeds = {1, 2};
  const auto back = report_from_json(report_to_json(r));
  EXPECT_EQ(back.epochs, r.epochs);
  EXPECT_TRUE(std::isnan(back.final_test_top1));
  EXPECT_EQ(back.seeds, r.seeds);
  EXPECT_EQ(dump_json(report_to_json(back)), dump_json(report_to_json(r)));
  EXPECT_THROW(report_from_json(nlohmann::json{{"strategy", "srdl"}}), FormatError);
}

// ---------------------------------------------------------------------------
// Binary
// ---------------------------------------------------------------------------

TEST(Binary, TrainSucceedsAndMissingTeacherExitsTwo) {
  REQUIRE_CLI();
  const auto dir = scratch("bin_train");
  spit(dir / "ok.cfg", tiny_config("vanilla", dir / "run"));
  EXPECT_EQ(run_cli("train --config " + (dir / "ok.cfg").string(), dir).code, 0);
  EXPECT_TRUE(fs::exists(dir / "run" / "final.ckpt"));

  spit(dir / "kd.cfg", tiny_config("kd", dir / "kd"));
  const auto kd = run_cli("train --config " + (dir / "kd.cfg").string(), dir);
  EXPECT_EQ(kd.code, 2);
  EXPECT_NE(kd.stderr_text.find("kd.teacher_checkpoint"), std::string::npos) << kd.stderr_text;
}

TEST(Binary, UsageErrorsExitTwo) {
  REQUIRE_CLI();
  const auto dir = scratch("bin_usage");
  EXPECT_EQ(run_cli("", dir).code, 2);
  EXPECT_EQ(run_cli("train", dir).code, 2);
  EXPECT_EQ(run_cli("frobnicate", dir).code, 2);
  EXPECT_EQ(run_cli("train --config " + (dir / "absent.cfg").string(), dir).code, 2);
  spit(dir / "bad.cfg", "optimizer.momentum = 2\n");
  const auto bad = run_cli("train --config " + (dir / "bad.cfg").string(), dir);
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.stderr_text.find("optimizer.momentum"), std::string::npos);
}

TEST(Binary, NumericBlowUpExitsThreeWithEpoch) {
  REQUIRE_CLI();
  const auto dir = scratch("bin_numeric");
  spit(dir / "hot.cfg", tiny_config("vanilla", dir / "run") + "schedule.initial_lr = 1e30\n");
  const auto r = run_cli("train --config " + (dir / "hot.cfg").string(), dir);
  EXPECT_EQ(r.code, 3) << r.stderr_text;
  EXPECT_NE(r.stderr_text.find("epoch 1"), std::string::npos) << r.stderr_text;
}

TEST(Binary, CompareMismatchExitsTwo) {
  REQUIRE_CLI();
  const auto dir = scratch("bin_compare");
  write_json(report_to_json(report_with_accuracy(0.5, 1)), (dir / "v.json").string());
  write_json(report_to_json(report_with_accuracy(0.5, 2)), (dir / "s.json").string());
  EXPECT_EQ(run_cli("compare --vanilla " + (dir / "v.json").string() + " --srdl " + (dir / "s.json").string(), dir).code,
            2);
}

TEST(Binary, GenDataThenEvalAndLandscape) {
  REQUIRE_CLI();
  const auto dir = scratch("bin_flow");
  spit(dir / "run.cfg", tiny_config("srdl", dir / "run"));
  ASSERT_EQ(run_cli("gen-data --config " + (dir / "run.cfg").string() + " --out " + (dir / "data").string(), dir).code, 0);
  EXPECT_TRUE(fs::exists(dir / "data" / "train.csv"));
  ASSERT_EQ(run_cli("train --config " + (dir / "run.cfg").string(), dir).code, 0);
  const auto ckpt = (dir / "run" / "final.ckpt").string();
  ASSERT_EQ(run_cli("eval --checkpoint " + ckpt + " --checkpoint " + (dir / "run" / "stage1.ckpt").string() +
                        " --csv " + (dir / "data" / "test.csv").string() + " --out " + (dir / "eval.csv").string(),
                    dir)
                .code,
            0);
  EXPECT_NE(slurp(dir / "eval.csv").find("top1,ensemble,"), std::string::npos);
  ASSERT_EQ(run_cli("landscape --checkpoint " + ckpt + " --config " + (dir / "run.cfg").string() +
                        " --directions 2 --points 3 --out " + (dir / "land.csv").string(),
                    dir)
                .code,
            0);
  const auto land = slurp(dir / "land.csv");
  EXPECT_EQ(std::count(land.begin(), land.end(), '\n'), 1 + 2 * 3);
  EXPECT_EQ(slurp(dir / "stdout.txt"), land);
}

TEST(Binary, RerunFromManifestIsByteIdentical) {
  REQUIRE_CLI();
  const auto dir = scratch("bin_rerun");
  spit(dir / "run.cfg", tiny_config("srdl", dir / "first"));
  ASSERT_EQ(run_cli("train --config " + (dir / "run.cfg").string(), dir).code, 0);
  ASSERT_EQ(run_cli("train --config " + (dir / "first" / "manifest.json").string() + " --out " +
                        (dir / "second").string(),
                    dir)
                .code,
            0);
  for (const char* f : {"stage1.ckpt", "final.ckpt", "knowledge.srkn", "report.csv", "summary.json"}) {
    EXPECT_EQ(slurp(dir / "first" / f), slurp(dir / "second" / f)) << f;
  }
}

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fmt/format.h>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "srdl/checkpoint.hpp"
#include "srdl/config.hpp"
#include "srdl/data.hpp"
#include "srdl/errors.hpp"
#include "srdl/evaluation.hpp"
#include "srdl/knowledge.hpp"
#include "srdl/report.hpp"
#include "srdl/training.hpp"

#ifndef SRDL_VERSION
#define SRDL_VERSION "unknown"
#endif

namespace srdl::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;  // config, contract, data and format errors
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitInternal = 1;

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
  if (dynamic_cast<const Error*>(&e)) return kExitUsage;
  return kExitInternal;
}

inline std::string error_message(const std::exception& e) {
  if (const auto* n = dynamic_cast<const NumericError*>(&e)) {
    return fmt::format("numeric failure at epoch {}: {}", n->epoch(), n->what());
  }
  return e.what();
}

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

struct LoadedData {
  Dataset train;
  std::optional<Dataset> test;
};

inline LoadedData load_data(const DataConfig& d) {
  LoadedData out;
  if (d.source == "synthetic") {
    auto [train, test] = synth_gaussian_mixture(d.mixture);
    out.train = std::move(train);
    out.test = std::move(test);
  } else if (d.source == "csv") {
    out.train = load_csv(d.train_csv, {d.classes, false, Split::train, 0});
    if (!d.test_csv.empty()) {
      out.test = load_csv(d.test_csv, {out.train.classes, false, Split::test, out.train.size()});
    }
    if (d.standardize) {
      standardize(out.train);
      if (out.test) apply_standardization(*out.test, out.train.feature_mean, out.train.feature_std);
    }
  } else {
    out.train = load_idx_images(d.train_images, d.train_labels, d.classes, Split::train);
    if (!d.test_images.empty()) {
      out.test = load_idx_images(d.test_images, d.test_labels, out.train.classes, Split::test);
      for (auto& id : out.test->ids) id += out.train.size();
    }
  }
  if (out.test && out.test->sample_shape != out.train.sample_shape) {
    throw DataError("test samples " + shape_str(out.test->sample_shape) + " differ from training samples " +
                    shape_str(out.train.sample_shape));
  }
  return out;
}

inline ModelSpec model_for(Arch arch, const std::vector<std::size_t>& hidden, const Dataset& train) {
  ModelSpec spec{arch, hidden, train.sample_shape, train.classes};
  if (arch == Arch::mlp) spec.input_shape = {train.sample_size()};
  try {
    spec.validate();
    forward_flops(spec);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("model.arch: ") + e.what());
  }
  return spec;
}

/// Where eval and landscape read samples from.
struct DataSelection {
  std::string config;  // run config or manifest; uses its data section
  Split split = Split::test;
  std::string csv;
  std::string idx_images, idx_labels;
};

inline Dataset select_dataset(const DataSelection& s, std::size_t classes) {
  if (!s.csv.empty()) return load_csv(s.csv, {classes, false, s.split, 0});
  if (!s.idx_images.empty()) return load_idx_images(s.idx_images, s.idx_labels, classes, s.split);
  if (s.config.empty()) throw ConfigError("no dataset given (use --config, --csv or --idx-images)");
  auto data = load_data(to_run_config(load_config(s.config)).data);
  if (s.split == Split::train) return std::move(data.train);
  if (!data.test) throw ConfigError("data: the configuration has no test split");
  return std::move(*data.test);
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOutcome {
  std::filesystem::path dir;
  RunReport report;
};

namespace detail {

inline std::string path_str(const std::filesystem::path& dir, const char* name) {
  return (dir / name).string();
}

inline nlohmann::json manifest_json(const ConfigMap& m) {
  return {{"command", "train"}, {"version", SRDL_VERSION}, {"config", m}};
}

inline void write_text(const std::string& path, const std::string& text) {
  io::write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

inline void write_metrics_csv(const std::string& path, const std::string& body) {
  write_text(path, "metric,model,value\n" + body);
}

template <typename T>
RunReport train_with(const RunConfig& c, const LoadedData& data, const std::filesystem::path& dir,
                     std::ostream& log) {
  const ModelSpec spec = model_for(c.arch, c.hidden, data.train);
  const TrainData td{&data.train, data.test ? &*data.test : nullptr, c.data.augment};
  const Dataset& held_out = data.test ? *data.test : data.train;

  switch (c.strategy) {
    case Strategy::vanilla: {
      auto r = train_vanilla<T>(spec, td, c.epochs, c.optimizer, c.seed);
      save_checkpoint(r.checkpoint, path_str(dir, "final.ckpt"));
      return std::move(r.report);
    }
    case Strategy::srdl: {
      const SrdlOptions opts{c.restart, c.stage_complete};
      auto r = train_srdl<T>(spec, td, c.epochs, c.optimizer, c.temperature, c.seed, c.restart_seed, opts);
      save_checkpoint(r.stage1, path_str(dir, "stage1.ckpt"));
      save_checkpoint(r.final, path_str(dir, "final.ckpt"));
      r.knowledge.save(path_str(dir, "knowledge.srkn"));
      if (c.ensemble) {
        const std::vector<Checkpoint> members{r.stage1, r.final};
        std::string body;
        body += "top1,stage1," + format_double(evaluate(spec, r.stage1.params.template cast<T>(), held_out).top1) + "\n";
        body += "top1,final," + format_double(evaluate(spec, r.final.params.template cast<T>(), held_out).top1) + "\n";
        body += "top1,ensemble," + format_double(ensemble_accuracy<T>(members, held_out)) + "\n";
        write_metrics_csv(path_str(dir, "ensemble.csv"), body);
      }
      return std::move(r.report);
    }
    case Strategy::kd: {
      Checkpoint teacher;
      KdOptions opts;
      if (c.teacher.in_session) {
        const ModelSpec tspec = model_for(c.teacher.arch, c.teacher.hidden, data.train);
        log << "training teacher (" << to_string(tspec.arch) << ", " << c.teacher.epochs << " epochs)\n";
        auto t = train_vanilla<T>(tspec, td, c.teacher.epochs, c.optimizer, c.teacher.seed, StageTag::teacher);
        save_checkpoint(t.checkpoint, path_str(dir, "teacher.ckpt"));
        write_json(report_to_json(t.report), path_str(dir, "teacher_summary.json"));
        opts.teacher_trcost = t.report.trcost;
        teacher = std::move(t.checkpoint);
      } else {
        teacher = load_checkpoint(c.teacher.checkpoint);
      }
      auto r = train_kd<T>(spec, teacher, td, c.epochs, c.optimizer, c.temperature, c.seed, opts);
      save_checkpoint(r.checkpoint, path_str(dir, "final.ckpt"));
      r.knowledge.save(path_str(dir, "knowledge.srkn"));
      return std::move(r.report);
    }
  }
  throw ContractError("unknown strategy");
}

}  // namespace detail

/**
 * Runs one configuration and writes into its output directory:
 * manifest.json and run.cfg (the full resolved configuration), the
 * checkpoints, knowledge.srkn when soft targets were used, report.csv (one
 * row per epoch), summary.json and timing.json. Only timing.json depends on
 * the machine.
 */
inline TrainOutcome cmd_train(const ConfigMap& m, std::ostream& log) {
  const RunConfig c = to_run_config(m);
  const std::filesystem::path dir = c.output_dir;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ConfigError("output.dir: cannot create " + dir.string() + ": " + ec.message());

  write_json(detail::manifest_json(m), detail::path_str(dir, "manifest.json"));
  detail::write_text(detail::path_str(dir, "run.cfg"), config_to_text(m));

  const LoadedData data = load_data(c.data);
  log << fmt::format("{} run: {} train samples, {} epochs, output {}\n", to_string(c.strategy),
                     data.train.size(), c.epochs, dir.string());
  RunReport report = c.f64 ? detail::train_with<double>(c, data, dir, log)
                           : detail::train_with<float>(c, data, dir, log);

  write_report_csv(report, detail::path_str(dir, "report.csv"));
  write_json(report_to_json(report), detail::path_str(dir, "summary.json"));
  write_json({{"wall_clock_seconds", report.wall_clock_seconds}}, detail::path_str(dir, "timing.json"));

  log << fmt::format("done: train top1 {:.4f}", report.final_train_top1);
  if (std::isfinite(report.final_test_top1)) log << fmt::format(", test top1 {:.4f}", report.final_test_top1);
  log << fmt::format(", trcost {} FLOPs, {:.1f} s\n", to_string(report.table_trcost()),
                     report.wall_clock_seconds);
  return {dir, std::move(report)};
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalOptions {
  std::vector<std::string> checkpoints;
  DataSelection data;
  bool retrieval = false;
  bool f64 = false;
};

template <typename T>
std::string eval_metrics(const EvalOptions& o) {
  if (o.checkpoints.empty()) throw ConfigError("--checkpoint: at least one checkpoint is required");
  std::vector<Checkpoint> members;
  for (const auto& p : o.checkpoints) members.push_back(load_checkpoint(p));
  const std::size_t classes = members.front().spec.classes;
  for (std::size_t i = 1; i < members.size(); ++i) {
    if (members[i].spec.classes != classes) {
      throw ContractError(o.checkpoints[i] + " has " + std::to_string(members[i].spec.classes) +
                          " classes, " + o.checkpoints[0] + " has " + std::to_string(classes));
    }
  }
  const Dataset data = select_dataset(o.data, classes);
  if (data.classes != classes) {
    throw ContractError("dataset has " + std::to_string(data.classes) + " classes, checkpoints have " +
                        std::to_string(classes));
  }

  std::string body;
  for (std::size_t i = 0; i < members.size(); ++i) {
    const auto& m = members[i];
    const auto params = m.params.cast<T>();
    if (o.retrieval) {
      const auto inf = infer(m.spec, params, data, true);
      const auto set = retrieval_from_embeddings(inf.embeddings, data.labels);
      const std::vector<std::size_t> ranks{1, 5};
      const auto rates = cmc(set, ranks);
      body += "rank1," + o.checkpoints[i] + "," + format_double(rates[0]) + "\n";
      body += "rank5," + o.checkpoints[i] + "," + format_double(rates[1]) + "\n";
      body += "mAP," + o.checkpoints[i] + "," + format_double(mean_average_precision(set)) + "\n";
    } else {
      const auto r = evaluate(m.spec, params, data);
      body += "top1," + o.checkpoints[i] + "," + format_double(r.top1) + "\n";
      body += "mean_ce," + o.checkpoints[i] + "," + format_double(r.mean_ce) + "\n";
    }
  }
  if (members.size() > 1 && !o.retrieval) {
    body += "top1,ensemble," + format_double(ensemble_accuracy<T>(members, data)) + "\n";
  }
  return "metric,model,value\n" + body;
}

inline std::string cmd_eval(const EvalOptions& o) {
  return o.f64 ? eval_metrics<double>(o) : eval_metrics<float>(o);
}

// ---------------------------------------------------------------------------
// landscape
// ---------------------------------------------------------------------------

struct LandscapeOptions {
  std::string checkpoint;
  DataSelection data{"", Split::train, "", "", ""};
  std::size_t directions = 20;
  double d_max = 5.0;
  std::size_t points = 11;
  std::uint64_t seed = 0;
  bool f64 = false;
};

/// CSV with one row per (direction, d): direction,d,loss.
inline std::string cmd_landscape(const LandscapeOptions& o) {
  if (o.directions < 1) throw ConfigError("--directions: expected at least 1");
  if (!(o.d_max >= 0)) throw ConfigError("--d-max: expected a non-negative real");
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  const Dataset data = select_dataset(o.data, ckpt.spec.classes);
  PerturbationSpec spec{random_directions(o.directions, ckpt.params.element_count(), o.seed),
                        magnitude_grid(o.d_max, o.points)};
  const auto result = o.f64 ? landscape_sweep<double>(ckpt, data, spec) : landscape_sweep<float>(ckpt, data, spec);
  std::string out = "direction,d,loss\n";
  for (std::size_t di = 0; di < result.losses.size(); ++di)
    for (std::size_t mi = 0; mi < spec.magnitudes.size(); ++mi)
      out += std::to_string(di) + "," + format_double(spec.magnitudes[mi]) + "," +
             format_double(result.losses[di][mi]) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// compare, gen-data
// ---------------------------------------------------------------------------

inline std::string cmd_compare(const std::string& vanilla, const std::string& srdl, const std::string& kd = "") {
  const auto v = load_report(vanilla);
  const auto s = load_report(srdl);
  if (kd.empty()) return compare_table(v, s);
  const auto k = load_report(kd);
  return compare_table(v, s, &k);
}

/// Writes the configured synthetic mixture as train.csv and test.csv.
inline void cmd_gen_data(const ConfigMap& m, const std::filesystem::path& dir) {
  const RunConfig c = to_run_config(m);
  if (c.data.source != "synthetic") throw ConfigError("data.source: gen-data needs synthetic");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ConfigError("--out: cannot create " + dir.string());
  const auto [train, test] = synth_gaussian_mixture(c.data.mixture);
  write_csv(train, (dir / "train.csv").string());
  write_csv(test, (dir / "test.csv").string());
}

}  // namespace srdl::cli

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <charconv>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "srdl/binary_io.hpp"
#include "srdl/errors.hpp"
#include "srdl/evaluation.hpp"
#include "srdl/training.hpp"

namespace srdl {

/// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}

inline std::string format_hex(std::uint64_t v) { return fmt::format("{:016x}", v); }

inline std::uint64_t parse_hex(const std::string& s) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v, 16);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw FormatError("bad hex value '" + s + "'");
  }
  return v;
}

// ---------------------------------------------------------------------------
// Per-epoch CSV
// ---------------------------------------------------------------------------

inline constexpr const char* kReportCsvHeader = "epoch,stage,lr,mean_ce,mean_kl,mean_total,train_top1";

inline std::string report_csv(const RunReport& r) {
  std::string out = kReportCsvHeader;
  out += '\n';
  for (const auto& e : r.epochs) {
    out += std::to_string(e.epoch) + ',' + std::to_string(e.stage) + ',' + format_double(e.lr) + ',' +
           format_double(e.mean_ce) + ',' + format_double(e.mean_kl) + ',' +
           format_double(e.mean_total) + ',' + format_double(e.train_top1) + '\n';
  }
  return out;
}

inline void write_report_csv(const RunReport& r, const std::string& path) {
  const auto text = report_csv(r);
  io::write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

// ---------------------------------------------------------------------------
// JSON summary
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::json finite_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

inline double number_or_nan(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

}  // namespace detail

/// Everything in the report except wall-clock time. FLOP counts are decimal
/// strings because they can exceed 64 bits.
inline nlohmann::json report_to_json(const RunReport& r) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : r.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"stage", e.stage},
                      {"lr", e.lr},
                      {"mean_ce", e.mean_ce},
                      {"mean_kl", e.mean_kl},
                      {"mean_total", e.mean_total},
                      {"train_top1", e.train_top1}});
  }
  return {
      {"strategy", to_string(r.strategy)},
      {"epochs", std::move(epochs)},
      {"epoch_count", r.epochs.size()},
      {"temperature", r.temperature},
      {"forward_flops", r.forward_flops},
      {"train_size", r.train_size},
      {"trcost", to_string(r.trcost)},
      {"teacher_trcost", to_string(r.teacher_trcost)},
      {"table_trcost", to_string(r.table_trcost())},
      {"extraction_flops", to_string(r.extraction_flops)},
      {"training_flops_estimate", to_string(r.training_flops_estimate)},
      {"measured_cost", to_string(r.measured_cost())},
      {"seeds", r.seeds},
      {"dataset_fingerprint", format_hex(r.dataset_fingerprint)},
      {"final_train_ce", detail::finite_or_null(r.final_train_ce)},
      {"final_train_top1", detail::finite_or_null(r.final_train_top1)},
      {"final_test_top1", detail::finite_or_null(r.final_test_top1)},
      {"notes", r.notes},
  };
}

inline RunReport report_from_json(const nlohmann::json& j) {
  try {
    RunReport r;
    r.strategy = parse_strategy(j.at("strategy").get<std::string>());
    for (const auto& e : j.at("epochs")) {
      r.epochs.push_back({e.at("epoch").get<int>(), e.at("stage").get<int>(), e.at("lr").get<double>(),
                          e.at("mean_ce").get<double>(), e.at("mean_kl").get<double>(),
                          e.at("mean_total").get<double>(), e.at("train_top1").get<double>()});
    }
    r.temperature = j.at("temperature").get<double>();
    r.forward_flops = j.at("forward_flops").get<std::uint64_t>();
    r.train_size = j.at("train_size").get<std::uint64_t>();
    r.trcost = parse_flops(j.at("trcost").get<std::string>());
    r.teacher_trcost = parse_flops(j.at("teacher_trcost").get<std::string>());
    r.extraction_flops = parse_flops(j.at("extraction_flops").get<std::string>());
    r.training_flops_estimate = parse_flops(j.at("training_flops_estimate").get<std::string>());
    r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    r.dataset_fingerprint = parse_hex(j.at("dataset_fingerprint").get<std::string>());
    r.final_train_ce = detail::number_or_nan(j.at("final_train_ce"));
    r.final_train_top1 = detail::number_or_nan(j.at("final_train_top1"));
    r.final_test_top1 = detail::number_or_nan(j.at("final_test_top1"));
    r.notes = j.at("notes").get<std::vector<std::string>>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed run summary: ") + e.what());
  }
}

inline std::string dump_json(const nlohmann::json& j) { return j.dump(2) + "\n"; }

inline void write_json(const nlohmann::json& j, const std::string& path) {
  const auto text = dump_json(j);
  io::write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

inline nlohmann::json read_json(const std::string& path) {
  const auto bytes = io::read_file(path);
  try {
    return nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path + ": " + e.what());
  }
}

inline RunReport load_report(const std::string& path) { return report_from_json(read_json(path)); }

// ---------------------------------------------------------------------------
// Strategy comparison table
// ---------------------------------------------------------------------------

/// Accuracy shown in tables: test top-1 when a test split was evaluated,
/// train top-1 otherwise.
inline double table_top1(const RunReport& r) {
  return std::isfinite(r.final_test_top1) ? r.final_test_top1 : r.final_train_top1;
}

/// Percent points, two decimals, explicit sign; exact ties print as 0.00.
inline std::string format_gain(double gain_pct) {
  const auto s = fmt::format("{:+.2f}", gain_pct);
  return (s == "+0.00" || s == "-0.00") ? "0.00" : s;
}

inline double safe_ratio(Flops num, Flops den) {
  return den == 0 ? std::numeric_limits<double>::quiet_NaN()
                  : static_cast<double>(num) / static_cast<double>(den);
}

/**
 * CSV comparison table: one row per method
 * with top-1 (%), tabulated TrCost and the cost ratios against vanilla,
 * then a Gain row (srdl minus vanilla, percent points).
 *
 * Accuracies are rounded to two decimals before the gain is taken, so the
 * gain agrees with the printed rows.
 */
inline std::string compare_table(const RunReport& vanilla, const RunReport& srdl,
                                 const RunReport* kd = nullptr) {
  const auto check = [&](const RunReport& r, const char* name) {
    if (r.dataset_fingerprint != vanilla.dataset_fingerprint) {
      throw ContractError(std::string(name) + " report was trained on a different dataset (" +
                          format_hex(r.dataset_fingerprint) + " vs " +
                          format_hex(vanilla.dataset_fingerprint) + ")");
    }
  };
  check(srdl, "srdl");
  if (kd) check(*kd, "kd");

  std::string out = "method,top1_pct,epochs,trcost_flops,trcost_1e16,trcost_ratio,measured_ratio\n";
  const auto row = [&](const std::string& name, const RunReport& r) {
    out += fmt::format("{},{:.2f},{},{},{:.6g},{:.6f},{:.6f}\n", name, 100.0 * table_top1(r),
                       r.epochs.size(), to_string(r.table_trcost()), in_1e16(r.table_trcost()),
                       safe_ratio(r.table_trcost(), vanilla.table_trcost()),
                       safe_ratio(r.measured_cost(), vanilla.measured_cost()));
  };
  row("vanilla", vanilla);
  if (kd) row("kd", *kd);
  row("srdl", srdl);
  const double v = std::round(10000.0 * table_top1(vanilla)) / 100.0;
  const double s = std::round(10000.0 * table_top1(srdl)) / 100.0;
  out += "Gain," + format_gain(s - v) + ",,,,,\n";
  return out;
}

}  // namespace srdl

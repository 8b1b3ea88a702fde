// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "srdl/binary_io.hpp"
#include "srdl/data.hpp"
#include "srdl/errors.hpp"
#include "srdl/model.hpp"
#include "srdl/optimizer.hpp"
#include "srdl/schedule.hpp"
#include "srdl/training.hpp"

namespace srdl {

/// Every recognized key with its default. Keys not listed here are rejected.
inline const std::map<std::string, std::string>& config_defaults() {
  static const std::map<std::string, std::string> defaults{
      {"strategy", "srdl"},
      {"precision", "f32"},
      {"model.arch", "mlp"},
      {"model.hidden", "256,256"},
      {"data.source", "synthetic"},
      {"data.classes", "10"},
      {"data.per_class", "500"},
      {"data.test_per_class", "100"},
      {"data.dim", "16"},
      {"data.spread", "1.0"},
      {"data.seed", "7"},
      {"data.train_csv", ""},
      {"data.test_csv", ""},
      {"data.standardize", "false"},
      {"data.train_images", ""},
      {"data.train_labels", ""},
      {"data.test_images", ""},
      {"data.test_labels", ""},
      {"data.augment", "none"},
      {"train.epochs", "60"},
      {"train.temperature", "3"},
      {"train.seed", "1"},
      {"train.restart_seed", "2"},
      {"schedule.initial_lr", "0.1"},
      {"schedule.drop_factor", "0.1"},
      {"schedule.drop_points", "0.5,0.75"},
      {"schedule.stage_complete", "true"},
      {"srdl.restart", "true"},
      {"srdl.ensemble", "false"},
      {"optimizer.momentum", "0.9"},
      {"optimizer.weight_decay", "0.0002"},
      {"optimizer.batch_size", "128"},
      {"kd.teacher_checkpoint", ""},
      {"kd.teacher.arch", ""},
      {"kd.teacher.hidden", "512,512"},
      {"kd.teacher.epochs", "60"},
      {"kd.teacher.seed", "11"},
      {"output.dir", "run"},
  };
  return defaults;
}

/// Flat key/value view of a configuration; always holds every known key.
using ConfigMap = std::map<std::string, std::string>;

inline std::string config_trim(const std::string& s) { return detail::trim(s); }

/// Applies one `key = value` assignment, rejecting unknown keys.
inline void set_config_value(ConfigMap& m, const std::string& key, const std::string& value,
                             const std::string& where = "") {
  if (!config_defaults().contains(key)) {
    throw ConfigError((where.empty() ? "" : where + ": ") + "unknown key '" + key + "'");
  }
  m[key] = value;
}

/// Parses `key = value` lines; '#' starts a comment, blank lines are skipped.
inline ConfigMap parse_config_text(const std::string& text, const std::string& origin = "config") {
  ConfigMap m = config_defaults();
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = config_trim(line);
    if (line.empty()) continue;
    const auto where = origin + ":" + std::to_string(lineno);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    set_config_value(m, config_trim(line.substr(0, eq)), config_trim(line.substr(eq + 1)), where);
  }
  return m;
}

inline std::string config_to_text(const ConfigMap& m) {
  std::string out;
  for (const auto& [k, v] : m) out += k + " = " + v + "\n";
  return out;
}

/// Reads a key/value file, or the "config" object of a run manifest (.json).
inline ConfigMap load_config(const std::string& path) {
  const auto bytes = io::read_file(path);
  const std::string text(bytes.begin(), bytes.end());
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(path + ": " + e.what());
    }
    if (!j.contains("config") || !j["config"].is_object()) {
      throw ConfigError(path + ": manifest has no 'config' object");
    }
    ConfigMap m = config_defaults();
    for (const auto& [k, v] : j["config"].items()) {
      if (!v.is_string()) throw ConfigError(path + ": value of '" + k + "' must be a string");
      set_config_value(m, k, v.get<std::string>(), path);
    }
    return m;
  }
  return parse_config_text(text, path);
}

// ---------------------------------------------------------------------------
// Typed view
// ---------------------------------------------------------------------------

struct DataConfig {
  std::string source = "synthetic";  // synthetic | csv | idx
  MixtureParams mixture;
  std::size_t classes = 10;
  std::string train_csv, test_csv;
  bool standardize = false;
  std::string train_images, train_labels, test_images, test_labels;
  AugmentPolicy augment;
};

struct TeacherConfig {
  std::string checkpoint;  // pre-existing teacher
  bool in_session = false;  // train the teacher first from the fields below
  Arch arch = Arch::mlp;
  std::vector<std::size_t> hidden;
  int epochs = 0;
  std::uint64_t seed = 0;
};

struct RunConfig {
  Strategy strategy = Strategy::srdl;
  bool f64 = false;
  Arch arch = Arch::mlp;
  std::vector<std::size_t> hidden;
  DataConfig data;
  int epochs = 0;
  double temperature = 3;
  std::uint64_t seed = 1;
  std::uint64_t restart_seed = 2;
  OptimizerConfig optimizer;
  bool stage_complete = true;
  bool restart = true;
  bool ensemble = false;
  TeacherConfig teacher;
  std::string output_dir;
};

namespace detail {

class FieldReader {
public:
  explicit FieldReader(const ConfigMap& m) : m_(m) {}

  const std::string& str(const std::string& key) const { return m_.at(key); }

  [[noreturn]] void fail(const std::string& key, const std::string& expected) const {
    throw ConfigError(key + ": expected " + expected + ", got '" + str(key) + "'");
  }

  template <typename I>
  I integer(const std::string& key, I min) const {
    const auto& s = str(key);
    I v{};
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size() || v < min) {
      fail(key, "an integer >= " + std::to_string(min));
    }
    return v;
  }

  double real(const std::string& key) const {
    const auto& s = str(key);
    double v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || res.ec != std::errc{} || res.ptr != s.data() + s.size() || !std::isfinite(v)) {
      fail(key, "a real number");
    }
    return v;
  }

  bool boolean(const std::string& key) const {
    const auto& s = str(key);
    if (s == "true" || s == "on" || s == "1") return true;
    if (s == "false" || s == "off" || s == "0") return false;
    fail(key, "true or false");
  }

  std::vector<std::string> list(const std::string& key) const {
    std::vector<std::string> out;
    std::istringstream in(str(key));
    std::string item;
    while (std::getline(in, item, ',')) out.push_back(trim(item));
    return out;
  }

  std::vector<std::size_t> widths(const std::string& key) const {
    std::vector<std::size_t> out;
    for (const auto& item : list(key)) {
      std::size_t v = 0;
      const auto res = std::from_chars(item.data(), item.data() + item.size(), v);
      if (res.ec != std::errc{} || res.ptr != item.data() + item.size() || v < 1) {
        fail(key, "a comma-separated list of positive widths");
      }
      out.push_back(v);
    }
    return out;
  }

  Arch arch(const std::string& key) const {
    try {
      return parse_arch(str(key));
    } catch (const ConfigError&) {
      fail(key, "mlp or smallcnn");
    }
  }

  void require_file(const std::string& key) const {
    if (str(key).empty()) throw ConfigError(key + ": required for this configuration");
    if (!std::filesystem::is_regular_file(str(key))) {
      throw ConfigError(key + ": file not found: " + str(key));
    }
  }

private:
  const ConfigMap& m_;
};

}  // namespace detail

/// Converts and validates every field; messages name the offending key.
inline RunConfig to_run_config(const ConfigMap& m) {
  const detail::FieldReader f(m);
  RunConfig c;
  try {
    c.strategy = parse_strategy(f.str("strategy"));
  } catch (const ConfigError&) {
    f.fail("strategy", "vanilla, srdl or kd");
  }
  if (f.str("precision") == "f32") {
    c.f64 = false;
  } else if (f.str("precision") == "f64") {
    c.f64 = true;
  } else {
    f.fail("precision", "f32 or f64");
  }
  c.arch = f.arch("model.arch");
  c.hidden = f.widths("model.hidden");

  auto& d = c.data;
  d.source = f.str("data.source");
  d.classes = f.integer<std::size_t>("data.classes", 0);
  if (d.source == "synthetic") {
    if (d.classes < 2) f.fail("data.classes", "at least 2 classes");
    d.mixture.classes = d.classes;
    d.mixture.per_class = f.integer<std::size_t>("data.per_class", 1);
    d.mixture.test_per_class = f.integer<std::size_t>("data.test_per_class", 0);
    d.mixture.dim = f.integer<std::size_t>("data.dim", 2);
    d.mixture.spread = f.real("data.spread");
    if (d.mixture.spread < 0) f.fail("data.spread", "a non-negative real");
    d.mixture.seed = f.integer<std::uint64_t>("data.seed", 0);
  } else if (d.source == "csv") {
    f.require_file("data.train_csv");
    d.train_csv = f.str("data.train_csv");
    if (!f.str("data.test_csv").empty()) {
      f.require_file("data.test_csv");
      d.test_csv = f.str("data.test_csv");
    }
    d.standardize = f.boolean("data.standardize");
  } else if (d.source == "idx") {
    f.require_file("data.train_images");
    f.require_file("data.train_labels");
    d.train_images = f.str("data.train_images");
    d.train_labels = f.str("data.train_labels");
    if (!f.str("data.test_images").empty() || !f.str("data.test_labels").empty()) {
      f.require_file("data.test_images");
      f.require_file("data.test_labels");
      d.test_images = f.str("data.test_images");
      d.test_labels = f.str("data.test_labels");
    }
  } else {
    f.fail("data.source", "synthetic, csv or idx");
  }
  for (const auto& item : f.list("data.augment")) {
    if (item == "none") continue;
    if (item == "flip") {
      d.augment.hflip = true;
    } else if (item == "crop") {
      d.augment.crop_pad = 4;
    } else {
      f.fail("data.augment", "none, flip, crop or flip,crop");
    }
  }

  c.epochs = f.integer<int>("train.epochs", 1);
  if (c.strategy == Strategy::srdl && c.epochs < 2) f.fail("train.epochs", "at least 2 epochs for srdl");
  c.temperature = f.real("train.temperature");
  if (c.temperature <= 0) f.fail("train.temperature", "a positive real");
  c.seed = f.integer<std::uint64_t>("train.seed", 0);
  c.restart_seed = f.integer<std::uint64_t>("train.restart_seed", 0);

  auto& s = c.optimizer.schedule;
  s.initial_lr = f.real("schedule.initial_lr");
  if (s.initial_lr <= 0) f.fail("schedule.initial_lr", "a positive real");
  s.drop_factor = f.real("schedule.drop_factor");
  if (s.drop_factor <= 0 || s.drop_factor > 1) f.fail("schedule.drop_factor", "a real in (0, 1]");
  s.drop_points.clear();
  for (const auto& item : f.list("schedule.drop_points")) {
    double p = 0;
    const auto res = std::from_chars(item.data(), item.data() + item.size(), p);
    if (res.ec != std::errc{} || res.ptr != item.data() + item.size() || p <= 0 || p >= 1 ||
        (!s.drop_points.empty() && p <= s.drop_points.back())) {
      f.fail("schedule.drop_points", "ascending fractions in (0, 1)");
    }
    s.drop_points.push_back(p);
  }
  c.stage_complete = f.boolean("schedule.stage_complete");
  c.restart = f.boolean("srdl.restart");
  c.ensemble = f.boolean("srdl.ensemble");

  c.optimizer.momentum = f.real("optimizer.momentum");
  if (c.optimizer.momentum < 0 || c.optimizer.momentum >= 1) f.fail("optimizer.momentum", "a real in [0, 1)");
  c.optimizer.weight_decay = f.real("optimizer.weight_decay");
  if (c.optimizer.weight_decay < 0) f.fail("optimizer.weight_decay", "a non-negative real");
  c.optimizer.batch_size = f.integer<std::size_t>("optimizer.batch_size", 1);

  if (c.strategy == Strategy::kd) {
    auto& t = c.teacher;
    if (!f.str("kd.teacher_checkpoint").empty()) {
      f.require_file("kd.teacher_checkpoint");
      t.checkpoint = f.str("kd.teacher_checkpoint");
    } else if (!f.str("kd.teacher.arch").empty()) {
      t.in_session = true;
      t.arch = f.arch("kd.teacher.arch");
      t.hidden = f.widths("kd.teacher.hidden");
      t.epochs = f.integer<int>("kd.teacher.epochs", 1);
      t.seed = f.integer<std::uint64_t>("kd.teacher.seed", 0);
    } else {
      throw ConfigError("kd.teacher_checkpoint: kd needs a teacher (set kd.teacher_checkpoint or kd.teacher.arch)");
    }
  }
  c.output_dir = f.str("output.dir");
  if (c.output_dir.empty()) f.fail("output.dir", "a directory path");
  return c;
}

}  // namespace srdl

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "srdl/binary_io.hpp"
#include "srdl/errors.hpp"

namespace srdl {

enum class KnowledgeSource { self_stage1, teacher };

inline std::string to_string(KnowledgeSource s) {
  return s == KnowledgeSource::self_stage1 ? "self-stage1" : "teacher";
}

/**
 * Per-sample softened class probabilities keyed by sample id.
 *
 * File layout (little-endian):
 *
 *   "SRKN"  u32 version  u64 n  u32 C  f64 T
 *   n x ( u64 id, C x f32 probability )
 *
 * The source tag is not part of the file; loaded stores report `teacher`
 * unless the caller says otherwise.
 */
class KnowledgeStore {
public:
  static constexpr std::uint32_t kVersion = 1;

  KnowledgeStore(std::size_t classes, double temperature, KnowledgeSource source)
      : classes_(classes), temperature_(temperature), source_(source) {
    if (classes_ < 2) throw ContractError("knowledge store needs at least 2 classes");
    if (!(temperature_ > 0)) throw ContractError("knowledge store temperature must be > 0");
  }

  void add(std::uint64_t id, std::span<const float> probs) {
    if (probs.size() != classes_) {
      throw DimensionError("knowledge row has " + std::to_string(probs.size()) + " entries, expected " +
                           std::to_string(classes_));
    }
    if (!index_.emplace(id, ids_.size()).second) {
      throw ContractError("knowledge store: sample id " + std::to_string(id) + " already present");
    }
    ids_.push_back(id);
    probs_.insert(probs_.end(), probs.begin(), probs.end());
  }

  bool contains(std::uint64_t id) const { return index_.count(id) != 0; }

  std::span<const float> row(std::uint64_t id) const {
    const auto it = index_.find(id);
    if (it == index_.end()) {
      throw ContractError("knowledge store has no row for sample id " + std::to_string(id));
    }
    return {probs_.data() + it->second * classes_, classes_};
  }

  std::size_t size() const { return ids_.size(); }
  std::size_t classes() const { return classes_; }
  double temperature() const { return temperature_; }
  KnowledgeSource source() const { return source_; }
  const std::vector<std::uint64_t>& ids() const { return ids_; }

  /// Largest |sum(row) - 1| over all rows.
  double max_row_error() const {
    double worst = 0;
    for (std::size_t r = 0; r < ids_.size(); ++r) {
      double s = 0;
      for (std::size_t j = 0; j < classes_; ++j) s += probs_[r * classes_ + j];
      worst = std::max(worst, std::abs(s - 1.0));
    }
    return worst;
  }

  std::vector<std::uint8_t> serialize() const {
    io::Writer w;
    w.bytes("SRKN");
    w.u32(kVersion);
    w.u64(ids_.size());
    w.u32(static_cast<std::uint32_t>(classes_));
    w.f64(temperature_);
    for (std::size_t r = 0; r < ids_.size(); ++r) {
      w.u64(ids_[r]);
      for (std::size_t j = 0; j < classes_; ++j) w.f32(probs_[r * classes_ + j]);
    }
    return w.buffer();
  }

  static KnowledgeStore deserialize(const std::vector<std::uint8_t>& bytes,
                                    KnowledgeSource source = KnowledgeSource::teacher,
                                    const std::string& origin = "knowledge store") {
    io::Reader r(bytes, origin);
    if (bytes.size() < 4 || r.bytes(4) != "SRKN") throw FormatError(origin + ": bad magic");
    const auto version = r.u32();
    if (version != kVersion) {
      throw UnsupportedVersionError(origin + ": unsupported knowledge format version " +
                                    std::to_string(version));
    }
    const auto n = r.u64();
    const auto c = r.u32();
    const double t = r.f64();
    KnowledgeStore store(c, t, source);
    if (n > r.remaining() / (8 + 4 * static_cast<std::uint64_t>(c))) {
      throw IntegrityError(origin + ": " + std::to_string(n) + " rows exceed the file size");
    }
    std::vector<float> row(c);
    for (std::uint64_t i = 0; i < n; ++i) {
      const auto id = r.u64();
      for (auto& v : row) v = r.f32();
      store.add(id, row);
    }
    r.expect_end();
    return store;
  }

  void save(const std::string& path) const { io::write_file(path, serialize()); }

  static KnowledgeStore load(const std::string& path,
                             KnowledgeSource source = KnowledgeSource::teacher) {
    return deserialize(io::read_file(path), source, path);
  }

  friend bool operator==(const KnowledgeStore& a, const KnowledgeStore& b) {
    return a.classes_ == b.classes_ && a.temperature_ == b.temperature_ && a.ids_ == b.ids_ &&
           a.probs_ == b.probs_;
  }

private:
  std::size_t classes_;
  double temperature_;
  KnowledgeSource source_;
  std::vector<std::uint64_t> ids_;
  std::vector<float> probs_;
  std::unordered_map<std::uint64_t, std::size_t> index_;
};

}  // namespace srdl

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "srdl/binary_io.hpp"
#include "srdl/errors.hpp"
#include "srdl/model.hpp"

namespace srdl {

enum class StageTag { stage1_final, stage2_final, vanilla_final, teacher, kd_final };

inline std::string to_string(StageTag s) {
  switch (s) {
    case StageTag::stage1_final: return "stage1-final";
    case StageTag::stage2_final: return "stage2-final";
    case StageTag::vanilla_final: return "vanilla-final";
    case StageTag::teacher: return "teacher";
    case StageTag::kd_final: return "kd-final";
  }
  return "unknown";
}

inline StageTag parse_stage_tag(const std::string& s) {
  for (auto t : {StageTag::stage1_final, StageTag::stage2_final, StageTag::vanilla_final,
                 StageTag::teacher, StageTag::kd_final}) {
    if (to_string(t) == s) return t;
  }
  throw FormatError("unknown stage tag '" + s + "'");
}

/**
 * Saved model state.
 *
 * File layout (all integers little-endian):
 *
 *   "SRDL"            4-byte magic
 *   u32               format version (kCheckpointVersion)
 *   u32 + bytes       JSON metadata: model spec, stage, epoch, init scheme,
 *                     init seed, RNG state
 *   u32               tensor count
 *   per tensor:       u32 + bytes name, u32 rank, u32 extents[rank],
 *                     f32 values in row-major order
 *
 * Nothing may follow the last tensor.
 */
struct Checkpoint {
  ModelSpec spec;
  ParameterSet<float> params;
  StageTag stage = StageTag::vanilla_final;
  int epoch = 0;
  std::string rng_state;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[] = "SRDL";

inline nlohmann::json spec_to_json(const ModelSpec& spec) {
  return {{"arch", to_string(spec.arch)},
          {"hidden", spec.hidden},
          {"input_shape", spec.input_shape},
          {"classes", spec.classes}};
}

inline ModelSpec spec_from_json(const nlohmann::json& j) {
  ModelSpec spec;
  spec.arch = parse_arch(j.at("arch").get<std::string>());
  spec.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  spec.input_shape = j.at("input_shape").get<Shape>();
  spec.classes = j.at("classes").get<std::size_t>();
  spec.validate();
  return spec;
}

inline std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  io::Writer w;
  w.bytes(std::string_view(kCheckpointMagic, 4));
  w.u32(kCheckpointVersion);
  nlohmann::json meta = {{"spec", spec_to_json(ckpt.spec)},
                         {"stage", to_string(ckpt.stage)},
                         {"epoch", ckpt.epoch},
                         {"init_scheme", ckpt.params.init_scheme},
                         {"init_seed", ckpt.params.seed},
                         {"rng_state", ckpt.rng_state}};
  w.str(meta.dump());
  w.u32(static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& e : ckpt.params.entries) {
    w.str(e.name);
    w.u32(static_cast<std::uint32_t>(e.value.rank()));
    for (auto d : e.value.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : e.value.data()) w.f32(v);
  }
  return w.buffer();
}

inline Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes,
                                         const std::string& origin = "checkpoint") {
  io::Reader r(bytes, origin);
  if (bytes.size() < 4 || r.bytes(4) != std::string_view(kCheckpointMagic, 4)) {
    throw FormatError(origin + ": bad magic, not an SRDL checkpoint");
  }
  const auto version = r.u32();
  if (version > kCheckpointVersion) {
    throw UnsupportedVersionError(origin + ": checkpoint format version " +
                                  std::to_string(version) + " is newer than supported version " +
                                  std::to_string(kCheckpointVersion));
  }
  if (version == 0) throw FormatError(origin + ": invalid format version 0");

  Checkpoint ckpt;
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(r.str());
    ckpt.spec = spec_from_json(meta.at("spec"));
    ckpt.stage = parse_stage_tag(meta.at("stage").get<std::string>());
    ckpt.epoch = meta.at("epoch").get<int>();
    ckpt.params.init_scheme = meta.at("init_scheme").get<std::string>();
    ckpt.params.seed = meta.at("init_seed").get<std::uint64_t>();
    ckpt.rng_state = meta.at("rng_state").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(origin + ": bad metadata: " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(origin + ": bad model spec: " + e.what());
  }

  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const auto rank = r.u32();
    Shape shape;
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape.push_back(r.u32());
      n *= shape.back();
    }
    if (n == 0 || n > r.remaining() / 4) {
      throw IntegrityError(origin + ": tensor " + name + " " + shape_str(shape) +
                           " exceeds the remaining file");
    }
    std::vector<float> data(n);
    for (auto& v : data) v = r.f32();
    ckpt.params.entries.push_back({std::move(name), Tensor<float>(std::move(shape), std::move(data))});
  }
  r.expect_end();
  try {
    check_params(ckpt.spec, ckpt.params);
  } catch (const DimensionError& e) {
    throw IntegrityError(origin + ": " + e.what());
  }
  return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  io::write_file(path, serialize_checkpoint(ckpt));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return deserialize_checkpoint(io::read_file(path), path);
}

}  // namespace srdl

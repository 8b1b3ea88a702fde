// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "srdl/checkpoint.hpp"
#include "srdl/data.hpp"
#include "srdl/errors.hpp"
#include "srdl/losses.hpp"
#include "srdl/model.hpp"
#include "srdl/parallel.hpp"

namespace srdl {

// ---------------------------------------------------------------------------
// Classification
// ---------------------------------------------------------------------------

/// Index of the largest entry; ties go to the lowest index.
template <typename R>
std::size_t argmax(std::span<const R> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

template <typename T>
double top1_accuracy(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size() || labels.empty()) {
    throw DimensionError("top1_accuracy: logits " + shape_str(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t c = logits.dim(1);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto pred = argmax(std::span<const T>(logits.data().data() + i * c, c));
    if (static_cast<int>(pred) == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

inline constexpr std::size_t kEvalBatch = 256;

/// Logits (and last-hidden embeddings) for every sample, in dataset order.
template <typename T>
struct Inference {
  Tensor<T> logits;
  Tensor<T> embeddings;
};

template <typename T>
Inference<T> infer(const ModelSpec& spec, const ParameterSet<T>& params, const Dataset& data,
                   bool keep_embeddings = false) {
  const std::size_t n = data.size();
  if (n == 0) throw DataError("cannot evaluate an empty dataset");
  if (data.sample_size() != spec.input_size()) {
    throw DimensionError("dataset samples " + shape_str(data.sample_shape) +
                         " do not match model input " + shape_str(spec.input_shape));
  }
  const std::size_t batches = (n + kEvalBatch - 1) / kEvalBatch;
  std::vector<Tensor<T>> logit_parts(batches), emb_parts(batches);
  parallel_for(batches, [&](std::size_t bi) {
    const std::size_t lo = bi * kEvalBatch, hi = std::min(n, lo + kEvalBatch);
    std::vector<std::size_t> rows(hi - lo);
    std::iota(rows.begin(), rows.end(), lo);
    Graph<T> g;
    const auto pass = forward(g, spec, params, gather_features<T>(data, rows), false);
    logit_parts[bi] = g.value(pass.logits);
    if (keep_embeddings) emb_parts[bi] = g.value(pass.embedding);
  });
  auto concat = [n](const std::vector<Tensor<T>>& parts) {
    const std::size_t w = parts.front().dim(1);
    std::vector<T> all;
    all.reserve(n * w);
    for (const auto& p : parts) all.insert(all.end(), p.data().begin(), p.data().end());
    return Tensor<T>({n, w}, std::move(all));
  };
  Inference<T> out{concat(logit_parts), {}};
  if (keep_embeddings) out.embeddings = concat(emb_parts);
  return out;
}

struct EvalResult {
  double mean_ce = 0;
  double top1 = 0;
};

/// Mean cross-entropy (T = 1) and top-1 over a whole dataset; no augmentation.
template <typename T>
EvalResult evaluate(const ModelSpec& spec, const ParameterSet<T>& params, const Dataset& data) {
  const auto inf = infer(spec, params, data);
  const std::size_t c = spec.classes;
  std::vector<double> p(c);
  double ce = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    detail::softened_softmax_row(inf.logits.data().data() + i * c, c, 1.0, p.data());
    ce -= std::log(std::max(p[static_cast<std::size_t>(data.labels[i])], kLogFloor));
  }
  return {ce / static_cast<double>(data.size()), top1_accuracy(inf.logits, data.labels)};
}

// ---------------------------------------------------------------------------
// Retrieval
// ---------------------------------------------------------------------------

/// Probe and gallery embeddings (row-major, `dim` columns) with identities.
struct RetrievalSet {
  std::size_t dim = 0;
  std::vector<double> probe;
  std::vector<std::int64_t> probe_ids;
  std::vector<double> gallery;
  std::vector<std::int64_t> gallery_ids;
  std::vector<int> probe_cams;    // optional
  std::vector<int> gallery_cams;  // optional
  bool exclude_same_camera = false;

  std::size_t probes() const { return probe_ids.size(); }
  std::size_t gallery_size() const { return gallery_ids.size(); }

  void validate() const {
    if (dim == 0 || probe.size() != probes() * dim || gallery.size() != gallery_size() * dim) {
      throw DimensionError("retrieval set: embedding buffers do not match dim " + std::to_string(dim));
    }
    if (probes() == 0 || gallery_size() == 0) throw DataError("retrieval set is empty");
    if (exclude_same_camera &&
        (probe_cams.size() != probes() || gallery_cams.size() != gallery_size())) {
      throw ContractError("camera exclusion needs a camera tag per embedding");
    }
  }
};

namespace detail {

// Gallery indices by ascending Euclidean distance (ties: lower index first),
// with same-identity same-camera entries removed when requested.
inline std::vector<std::size_t> ranked_gallery(const RetrievalSet& s, std::size_t probe) {
  std::vector<std::pair<double, std::size_t>> order;
  order.reserve(s.gallery_size());
  for (std::size_t g = 0; g < s.gallery_size(); ++g) {
    if (s.exclude_same_camera && s.gallery_ids[g] == s.probe_ids[probe] &&
        s.gallery_cams[g] == s.probe_cams[probe]) {
      continue;
    }
    double d2 = 0;
    for (std::size_t k = 0; k < s.dim; ++k) {
      const double diff = s.probe[probe * s.dim + k] - s.gallery[g * s.dim + k];
      d2 += diff * diff;
    }
    order.emplace_back(std::sqrt(d2), g);
  }
  std::sort(order.begin(), order.end());
  std::vector<std::size_t> out;
  out.reserve(order.size());
  for (const auto& [d, g] : order) out.push_back(g);
  return out;
}

// 1-based ranks of the probe's truth matches.
inline std::vector<std::size_t> truth_ranks(const RetrievalSet& s, std::size_t probe) {
  const auto ranked = ranked_gallery(s, probe);
  std::vector<std::size_t> ranks;
  for (std::size_t r = 0; r < ranked.size(); ++r)
    if (s.gallery_ids[ranked[r]] == s.probe_ids[probe]) ranks.push_back(r + 1);
  if (ranks.empty()) {
    throw DataError("probe " + std::to_string(probe) + " (id " + std::to_string(s.probe_ids[probe]) +
                    ") has no truth match in the gallery");
  }
  return ranks;
}

}  // namespace detail

/// Fraction of probes whose first truth match is at rank <= k, for each k.
inline std::vector<double> cmc(const RetrievalSet& s, std::span<const std::size_t> ranks) {
  s.validate();
  std::vector<std::size_t> first(s.probes());
  for (std::size_t p = 0; p < s.probes(); ++p) first[p] = detail::truth_ranks(s, p).front();
  std::vector<double> out;
  for (auto k : ranks) {
    const auto hits = std::count_if(first.begin(), first.end(), [k](std::size_t r) { return r <= k; });
    out.push_back(static_cast<double>(hits) / static_cast<double>(s.probes()));
  }
  return out;
}

/// Mean over probes of the mean precision at each truth-match position.
inline double mean_average_precision(const RetrievalSet& s) {
  s.validate();
  double total = 0;
  for (std::size_t p = 0; p < s.probes(); ++p) {
    const auto ranks = detail::truth_ranks(s, p);
    double ap = 0;
    for (std::size_t i = 0; i < ranks.size(); ++i)
      ap += static_cast<double>(i + 1) / static_cast<double>(ranks[i]);
    total += ap / static_cast<double>(ranks.size());
  }
  return total / static_cast<double>(s.probes());
}

/**
 * Builds a retrieval set from embeddings of a labelled split: the first
 * sample of each class becomes a probe, every other sample joins the
 * gallery. Classes with a single sample are left out.
 */
template <typename T>
RetrievalSet retrieval_from_embeddings(const Tensor<T>& emb, std::span<const int> labels) {
  RetrievalSet s;
  s.dim = emb.dim(1);
  std::vector<std::size_t> count(*std::max_element(labels.begin(), labels.end()) + 1, 0);
  for (int y : labels) ++count[static_cast<std::size_t>(y)];
  std::vector<bool> seen(count.size(), false);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    if (count[y] < 2) continue;
    const bool is_probe = !seen[y];
    seen[y] = true;
    auto& dst = is_probe ? s.probe : s.gallery;
    auto& ids = is_probe ? s.probe_ids : s.gallery_ids;
    for (std::size_t k = 0; k < s.dim; ++k) dst.push_back(static_cast<double>(emb.at(i, k)));
    ids.push_back(labels[i]);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Training cost
// ---------------------------------------------------------------------------

using Flops = unsigned __int128;

/// forward_flops * epochs * train_size, exact; throws if 128 bits overflow.
inline Flops trcost(std::uint64_t forward_flops, std::uint64_t epochs, std::uint64_t train_size) {
  if (forward_flops == 0 || epochs == 0 || train_size == 0) {
    throw ContractError("trcost arguments must be positive");
  }
  const Flops max = ~Flops{0};
  Flops out = forward_flops;
  if (out > max / epochs) throw ContractError("trcost overflow");
  out *= epochs;
  if (out > max / train_size) throw ContractError("trcost overflow");
  return out * train_size;
}

inline std::string to_string(Flops v) {
  if (v == 0) return "0";
  std::string s;
  while (v) {
    s.push_back(static_cast<char>('0' + static_cast<int>(v % 10)));
    v /= 10;
  }
  return {s.rbegin(), s.rend()};
}

inline Flops parse_flops(const std::string& s) {
  if (s.empty()) throw FormatError("empty FLOPs value");
  Flops v = 0;
  for (char c : s) {
    if (c < '0' || c > '9') throw FormatError("bad FLOPs value '" + s + "'");
    v = v * 10 + static_cast<unsigned>(c - '0');
  }
  return v;
}

/// Value in units of 1e16 FLOPs, the unit used in cost tables.
inline double in_1e16(Flops v) { return static_cast<double>(v) / 1e16; }

// ---------------------------------------------------------------------------
// Loss-landscape probe
// ---------------------------------------------------------------------------

struct PerturbationSpec {
  std::vector<std::vector<double>> directions;  // unit vectors over flattened parameters
  std::vector<double> magnitudes;               // ascending, starting at 0
};

/// `points` evenly spaced magnitudes from 0 to d_max inclusive.
inline std::vector<double> magnitude_grid(double d_max, std::size_t points) {
  if (points == 0) throw ContractError("magnitude grid needs at least one point");
  if (points == 1) return {0.0};
  std::vector<double> grid(points);
  for (std::size_t i = 0; i < points; ++i)
    grid[i] = d_max * static_cast<double>(i) / static_cast<double>(points - 1);
  return grid;
}

/// Coordinates i.i.d. uniform in [-1, 1], normalized to unit length.
inline std::vector<std::vector<double>> random_directions(std::size_t count, std::size_t dim,
                                                          std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<std::vector<double>> out(count, std::vector<double>(dim));
  for (auto& v : out) {
    double norm2 = 0;
    for (auto& x : v) {
      x = u(rng);
      norm2 += x * x;
    }
    const double norm = std::sqrt(norm2);
    for (auto& x : v) x /= norm;
  }
  return out;
}

/// losses[direction][magnitude]: mean cross-entropy at theta + d * v.
struct LandscapeResult {
  double base_loss = 0;
  std::vector<std::vector<double>> losses;
};

/**
 * Evaluates the mean cross-entropy of the perturbed parameters on `data`
 * along every direction and magnitude. Each direction works on its own copy
 * of the parameters; the checkpoint is never touched.
 */
template <typename T>
LandscapeResult landscape_sweep(const Checkpoint& ckpt, const Dataset& data,
                                const PerturbationSpec& spec) {
  const auto base = ckpt.params.cast<T>();
  const std::size_t dim = base.element_count();
  if (spec.magnitudes.empty()) throw ContractError("landscape sweep needs magnitudes");
  for (std::size_t i = 0; i < spec.magnitudes.size(); ++i) {
    if (spec.magnitudes[i] < 0 || (i && spec.magnitudes[i] < spec.magnitudes[i - 1])) {
      throw ContractError("landscape magnitudes must be ascending and non-negative");
    }
  }
  for (const auto& v : spec.directions) {
    if (v.size() != dim) {
      throw DimensionError("direction has " + std::to_string(v.size()) + " entries, model has " +
                           std::to_string(dim) + " parameters");
    }
    double n2 = 0;
    for (double x : v) n2 += x * x;
    if (std::abs(std::sqrt(n2) - 1.0) > 1e-9) {
      throw ContractError("landscape direction is not unit length (norm " +
                          std::to_string(std::sqrt(n2)) + ")");
    }
  }

  LandscapeResult out;
  out.base_loss = evaluate(ckpt.spec, base, data).mean_ce;
  out.losses.assign(spec.directions.size(), std::vector<double>(spec.magnitudes.size()));
  for (std::size_t di = 0; di < spec.directions.size(); ++di) {
    const auto& v = spec.directions[di];
    for (std::size_t mi = 0; mi < spec.magnitudes.size(); ++mi) {
      const double d = spec.magnitudes[mi];
      ParameterSet<T> moved = base;
      if (d != 0) {
        std::size_t k = 0;
        for (auto& e : moved.entries)
          for (auto& x : e.value.data()) x = static_cast<T>(static_cast<double>(x) + d * v[k++]);
      }
      out.losses[di][mi] = evaluate(ckpt.spec, moved, data).mean_ce;
    }
  }
  return out;
}

}  // namespace srdl

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <system_error>
#include <utility>
#include <vector>

#include "srdl/binary_io.hpp"
#include "srdl/errors.hpp"
#include "srdl/tensor.hpp"

namespace srdl {

enum class Split { train, test };

inline std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

/**
 * Labelled samples with stable ids.
 *
 * Features are kept as one flat float buffer (sample-major). Labels are
 * 0-based class indices. Ids never change once assigned; they are the join
 * key for extracted knowledge.
 */
struct Dataset {
  Shape sample_shape;
  std::vector<float> features;
  std::vector<int> labels;
  std::vector<std::uint64_t> ids;
  std::size_t classes = 0;
  Split split = Split::train;
  std::vector<float> feature_mean;  // empty unless standardized
  std::vector<float> feature_std;

  std::size_t size() const { return labels.size(); }
  std::size_t sample_size() const { return shape_size(sample_shape); }

  std::span<const float> sample(std::size_t i) const {
    return {features.data() + i * sample_size(), sample_size()};
  }

  void validate() const {
    if (labels.empty()) throw DataError("dataset is empty");
    if (ids.size() != labels.size() || features.size() != labels.size() * sample_size()) {
      throw DataError("dataset buffers disagree in length");
    }
    std::vector<std::uint64_t> sorted = ids;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw DataError("dataset ids are not unique");
    }
    for (int y : labels) {
      if (y < 0 || static_cast<std::size_t>(y) >= classes) {
        throw DataError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
      }
    }
  }

  /// Deterministic fingerprint of shapes, ids, labels and features.
  std::uint64_t fingerprint() const {
    io::Fnv1a h;
    for (auto d : sample_shape) h.update(&d, sizeof d);
    h.update(&classes, sizeof classes);
    h.update(ids.data(), ids.size() * sizeof(std::uint64_t));
    h.update(labels.data(), labels.size() * sizeof(int));
    h.update(features.data(), features.size() * sizeof(float));
    return h.digest();
  }
};

/// Copies the selected samples into a [n x sample_shape...] tensor.
template <typename T>
Tensor<T> gather_features(const Dataset& d, std::span<const std::size_t> rows) {
  Shape shape{rows.size()};
  shape.insert(shape.end(), d.sample_shape.begin(), d.sample_shape.end());
  Tensor<T> out(shape);
  const std::size_t s = d.sample_size();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const float* src = d.features.data() + rows[r] * s;
    std::transform(src, src + s, out.data().begin() + static_cast<std::ptrdiff_t>(r * s),
                   [](float v) { return static_cast<T>(v); });
  }
  return out;
}

inline std::vector<int> gather_labels(const Dataset& d, std::span<const std::size_t> rows) {
  std::vector<int> out(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) out[r] = d.labels[rows[r]];
  return out;
}

/// Sample order for one epoch; depends only on (seed, epoch).
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch)};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

struct CsvSchema {
  std::size_t classes = 0;  // 0: infer as max label + 1
  bool standardize = false;
  Split split = Split::train;
  std::uint64_t first_id = 0;
};

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

inline double parse_real(const std::string& cell, std::size_t row, std::size_t col) {
  const auto t = trim(cell);
  double v = 0;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size() || !std::isfinite(v)) {
    throw DataError("row " + std::to_string(row) + ", column " + std::to_string(col) +
                    ": non-numeric cell '" + cell + "'");
  }
  return v;
}

}  // namespace detail

/// Applies (x - mean) / std per feature, computing the stats from `d`.
inline void standardize(Dataset& d) {
  const std::size_t s = d.sample_size();
  std::vector<double> mean(s, 0.0), var(s, 0.0);
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t f = 0; f < s; ++f) mean[f] += d.features[i * s + f];
  for (auto& m : mean) m /= static_cast<double>(d.size());
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t f = 0; f < s; ++f) {
      const double dv = d.features[i * s + f] - mean[f];
      var[f] += dv * dv;
    }
  d.feature_mean.assign(s, 0);
  d.feature_std.assign(s, 1);
  for (std::size_t f = 0; f < s; ++f) {
    const double sd = std::sqrt(var[f] / static_cast<double>(d.size()));
    d.feature_mean[f] = static_cast<float>(mean[f]);
    d.feature_std[f] = sd > 0 ? static_cast<float>(sd) : 1.0f;
  }
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t f = 0; f < s; ++f)
      d.features[i * s + f] = (d.features[i * s + f] - d.feature_mean[f]) / d.feature_std[f];
}

/// Applies stats computed elsewhere (e.g. a test split with training stats).
inline void apply_standardization(Dataset& d, std::span<const float> mean, std::span<const float> sd) {
  const std::size_t s = d.sample_size();
  if (mean.size() != s || sd.size() != s) throw DimensionError("standardization stats do not match features");
  d.feature_mean.assign(mean.begin(), mean.end());
  d.feature_std.assign(sd.begin(), sd.end());
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t f = 0; f < s; ++f) d.features[i * s + f] = (d.features[i * s + f] - mean[f]) / sd[f];
}

/**
 * Rows are `label, x1, ..., xk` with a 0-based integer label. Lines that are
 * blank or start with '#' are skipped. Row numbers in errors are 1-based
 * file lines.
 */
inline Dataset load_csv(const std::string& path, const CsvSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  Dataset d;
  d.split = schema.split;
  std::string line;
  std::size_t lineno = 0;
  std::size_t width = 0;
  int max_label = -1;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(t);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!t.empty() && t.back() == ',') cells.emplace_back();
    if (cells.size() < 2) {
      throw DataError(path + ": row " + std::to_string(lineno) + " needs a label and features");
    }
    if (width == 0) width = cells.size();
    if (cells.size() != width) {
      throw DataError(path + ": row " + std::to_string(lineno) + " has " +
                      std::to_string(cells.size()) + " columns, expected " +
                      std::to_string(width));
    }
    const double label = detail::parse_real(cells[0], lineno, 1);
    if (label != std::floor(label) || label < 0 ||
        (schema.classes && label >= static_cast<double>(schema.classes))) {
      throw DataError(path + ": row " + std::to_string(lineno) + ": label " + detail::trim(cells[0]) +
                      " out of range");
    }
    d.labels.push_back(static_cast<int>(label));
    max_label = std::max(max_label, d.labels.back());
    for (std::size_t c = 1; c < cells.size(); ++c) {
      d.features.push_back(static_cast<float>(detail::parse_real(cells[c], lineno, c + 1)));
    }
  }
  if (d.labels.empty()) throw DataError(path + ": empty dataset");
  d.sample_shape = {width - 1};
  d.classes = schema.classes ? schema.classes : static_cast<std::size_t>(max_label + 1);
  if (d.classes < 2) d.classes = 2;
  d.ids.resize(d.labels.size());
  std::iota(d.ids.begin(), d.ids.end(), schema.first_id);
  if (schema.standardize) standardize(d);
  d.validate();
  return d;
}

/// Writes the inverse of load_csv with round-trip exact float text.
inline void write_csv(const Dataset& d, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  char buf[64];
  const std::size_t s = d.sample_size();
  for (std::size_t i = 0; i < d.size(); ++i) {
    out << d.labels[i];
    for (std::size_t f = 0; f < s; ++f) {
      auto res = std::to_chars(buf, buf + sizeof buf, d.features[i * s + f]);
      out << ',' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// IDX (big-endian; 0x00000803 images, 0x00000801 labels)
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Pixels are scaled to [0, 1]; samples get shape [1 x rows x cols].
inline Dataset load_idx_images(const std::string& images_path, const std::string& labels_path,
                               std::size_t classes = 0, Split split = Split::train) {
  const auto img_bytes = io::read_file(images_path);
  const auto lbl_bytes = io::read_file(labels_path);
  io::Reader img(img_bytes, images_path);
  io::Reader lbl(lbl_bytes, labels_path);

  const auto img_magic = img.be<std::uint32_t>();
  if (img_magic != kIdxImagesMagic) {
    throw FormatError(images_path + ": expected IDX image magic 0x00000803");
  }
  const auto lbl_magic = lbl.be<std::uint32_t>();
  if (lbl_magic != kIdxLabelsMagic) {
    throw FormatError(labels_path + ": expected IDX label magic 0x00000801");
  }
  const auto n_img = img.be<std::uint32_t>();
  const auto rows = img.be<std::uint32_t>();
  const auto cols = img.be<std::uint32_t>();
  const auto n_lbl = lbl.be<std::uint32_t>();
  if (n_img != n_lbl) {
    throw IntegrityError("IDX counts disagree: " + std::to_string(n_img) + " images vs " +
                         std::to_string(n_lbl) + " labels");
  }
  if (n_img == 0 || rows == 0 || cols == 0) throw DataError(images_path + ": empty dataset");
  const std::size_t pixels = static_cast<std::size_t>(rows) * cols;
  if (img.remaining() != n_img * pixels) {
    throw IntegrityError(images_path + ": payload holds " + std::to_string(img.remaining()) +
                         " bytes, header promises " + std::to_string(n_img * pixels));
  }
  if (lbl.remaining() != n_lbl) {
    throw IntegrityError(labels_path + ": payload holds " + std::to_string(lbl.remaining()) +
                         " bytes, header promises " + std::to_string(n_lbl));
  }

  Dataset d;
  d.split = split;
  d.sample_shape = {1, rows, cols};
  d.features.resize(n_img * pixels);
  for (auto& v : d.features) v = static_cast<float>(img.u8()) / 255.0f;
  int max_label = 0;
  for (std::uint32_t i = 0; i < n_lbl; ++i) {
    d.labels.push_back(lbl.u8());
    max_label = std::max(max_label, d.labels.back());
  }
  d.classes = classes ? classes : static_cast<std::size_t>(max_label + 1);
  d.ids.resize(n_img);
  std::iota(d.ids.begin(), d.ids.end(), std::uint64_t{0});
  d.validate();
  return d;
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

struct MixtureParams {
  std::size_t classes = 10;
  std::size_t per_class = 500;
  std::size_t test_per_class = 0;  // 0: per_class / 5
  std::size_t dim = 16;
  double spread = 1.0;
  std::uint64_t seed = 0;
};

/// Scale of the class means; with dim 16 and unit spread the nearest-mean
/// rule scores roughly 95%.
inline constexpr double kMixtureMeanScale = 1.0;

/**
 * One isotropic Gaussian per class: means ~ N(0, kMixtureMeanScale^2 I),
 * samples = mean + spread * N(0, I). Train ids are 0..n-1, test ids continue
 * from n. Samples are interleaved by class.
 */
inline std::pair<Dataset, Dataset> synth_gaussian_mixture(const MixtureParams& p) {
  if (p.classes < 2) throw ContractError("mixture needs at least 2 classes");
  if (p.dim < 2) throw ContractError("mixture needs dim >= 2");
  if (p.per_class < 1) throw ContractError("mixture needs per_class >= 1");
  const std::size_t test_per_class = p.test_per_class ? p.test_per_class : std::max<std::size_t>(1, p.per_class / 5);

  std::mt19937_64 rng(p.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> means(p.classes * p.dim);
  for (auto& m : means) m = kMixtureMeanScale * normal(rng);

  auto draw = [&](std::size_t per_class, Split split, std::uint64_t first_id) {
    Dataset d;
    d.split = split;
    d.classes = p.classes;
    d.sample_shape = {p.dim};
    for (std::size_t i = 0; i < per_class; ++i) {
      for (std::size_t c = 0; c < p.classes; ++c) {
        for (std::size_t f = 0; f < p.dim; ++f) {
          d.features.push_back(static_cast<float>(means[c * p.dim + f] + p.spread * normal(rng)));
        }
        d.labels.push_back(static_cast<int>(c));
        d.ids.push_back(first_id + d.ids.size());
      }
    }
    return d;
  };
  Dataset train = draw(p.per_class, Split::train, 0);
  Dataset test = draw(test_per_class, Split::test, train.size());
  return {std::move(train), std::move(test)};
}

/// Class means used by synth_gaussian_mixture for the same parameters.
inline std::vector<double> mixture_means(const MixtureParams& p) {
  std::mt19937_64 rng(p.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> means(p.classes * p.dim);
  for (auto& m : means) m = kMixtureMeanScale * normal(rng);
  return means;
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

struct AugmentPolicy {
  bool hflip = false;
  double flip_probability = 0.5;
  std::size_t crop_pad = 0;  // 0 disables pad-and-crop

  bool enabled() const { return hflip || crop_pad > 0; }
};

namespace detail {
inline std::atomic<std::uint64_t>& augment_counter() {
  static std::atomic<std::uint64_t> calls{0};
  return calls;
}

// Reflection without repeating the edge pixel: -1 -> 1, n -> n - 2.
inline std::ptrdiff_t reflect(std::ptrdiff_t i, std::ptrdiff_t n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
  return i;
}
}  // namespace detail

/// Number of augment() calls so far; evaluation paths must leave it unchanged.
inline std::uint64_t augment_invocations() { return detail::augment_counter().load(); }

/**
 * Per-sample random horizontal flip and random crop from a reflection-padded
 * canvas on a [batch x c x h x w] tensor.
 */
template <typename T>
Tensor<T> augment(const Tensor<T>& batch, const AugmentPolicy& policy, std::mt19937_64& rng) {
  detail::augment_counter().fetch_add(1);
  if (!policy.enabled()) return batch;
  if (batch.rank() != 4) {
    throw ContractError("augment needs image batches [b x c x h x w], got " +
                        shape_str(batch.shape()));
  }
  const std::size_t b = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  const auto ih = static_cast<std::ptrdiff_t>(h), iw = static_cast<std::ptrdiff_t>(w);
  const auto pad = static_cast<std::ptrdiff_t>(policy.crop_pad);
  Tensor<T> out(batch.shape());
  std::bernoulli_distribution flip(policy.flip_probability);
  std::uniform_int_distribution<std::ptrdiff_t> offset(0, 2 * pad);
  for (std::size_t s = 0; s < b; ++s) {
    const bool mirrored = policy.hflip && flip(rng);
    const std::ptrdiff_t dy = pad ? offset(rng) - pad : 0;
    const std::ptrdiff_t dx = pad ? offset(rng) - pad : 0;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* src = batch.data().data() + (s * c + ch) * h * w;
      T* dst = out.data().data() + (s * c + ch) * h * w;
      for (std::ptrdiff_t y = 0; y < ih; ++y) {
        const auto sy = detail::reflect(y + dy, ih);
        for (std::ptrdiff_t x = 0; x < iw; ++x) {
          auto sx = detail::reflect(x + dx, iw);
          if (mirrored) sx = iw - 1 - sx;
          dst[y * iw + x] = src[sy * iw + sx];
        }
      }
    }
  }
  return out;
}

}  // namespace srdl

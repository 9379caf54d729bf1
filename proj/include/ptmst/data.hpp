/* Copyright 2026 The PTM-ST Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ptmst/errors.hpp"
#include "ptmst/matrix.hpp"
#include "ptmst/rng.hpp"

namespace ptmst {

enum class Split : std::uint8_t { train = 0, val = 1, test = 2 };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw InvalidArgument("unknown split '" + s + "'");
}

/// Index-aligned image/text feature pairs: row i of `images` matches row i of `texts`.
struct PairDataset {
  Matrix<> images;
  Matrix<> texts;
  Split split = Split::train;
  std::vector<std::uint32_t> classes;  // generator class ids; may be empty

  std::size_t size() const noexcept { return images.rows(); }

  void validate() const {
    if (images.rows() == 0) throw InvalidArgument("pair dataset has no rows");
    if (images.cols() == 0 || texts.cols() == 0) throw InvalidArgument("pair dataset has a zero feature dimension");
    if (images.rows() != texts.rows()) throw InvalidArgument("image and text row counts differ");
    if (!classes.empty() && classes.size() != images.rows()) throw InvalidArgument("class id count differs from rows");
    if (!all_finite(images.values()) || !all_finite(texts.values()))
      throw InvalidArgument("pair dataset holds non-finite values");
  }

  /// Rows `idx` as a new dataset (labels carried along).
  PairDataset subset(std::span<const std::size_t> idx) const {
    PairDataset out{gather_rows(images, idx), gather_rows(texts, idx), split, {}};
    if (!classes.empty())
      for (auto i : idx) out.classes.push_back(classes[i]);
    return out;
  }

  friend bool operator==(const PairDataset&, const PairDataset&) = default;
};

struct GeneratorConfig {
  std::size_t num_pairs = 2000;
  std::size_t dim_img = 32;
  std::size_t dim_txt = 32;
  std::size_t latent_dim = 8;
  std::size_t classes = 50;
  double noise_sd = 0.1;
  /// Spread of the latent code around its class center; makes individual
  /// pairs (not just classes) retrievable.
  double within_class_sd = 0.5;
  std::uint64_t seed = 0;
  Split split = Split::train;
};

/// Class centers and modality projections shared by every split drawn from
/// one seed.
struct GeneratorWorld {
  Matrix<> centers;     // classes × latent
  Matrix<> proj_image;  // dim_img × latent
  Matrix<> proj_text;   // dim_txt × latent
};

inline void validate(const GeneratorConfig& cfg) {
  if (cfg.num_pairs == 0 || cfg.dim_img == 0 || cfg.dim_txt == 0 || cfg.latent_dim == 0)
    throw InvalidArgument("generator dimensions must be positive");
  if (cfg.classes < 2) throw InvalidArgument("generator needs at least two classes");
  if (!(cfg.noise_sd >= 0.0) || !(cfg.within_class_sd >= 0.0))
    throw InvalidArgument("generator noise levels must be nonnegative");
}

inline GeneratorWorld make_world(const GeneratorConfig& cfg) {
  validate(cfg);
  Rng rng(derive_seed(cfg.seed, "generator/world"));
  GeneratorWorld w{Matrix<>(cfg.classes, cfg.latent_dim), Matrix<>(cfg.dim_img, cfg.latent_dim),
                   Matrix<>(cfg.dim_txt, cfg.latent_dim)};
  for (auto& v : w.centers.values()) v = rng.normal();
  // Columns have expected unit norm, so the projections are close to isometric.
  const double scale_img = 1.0 / std::sqrt(static_cast<double>(cfg.dim_img));
  const double scale_txt = 1.0 / std::sqrt(static_cast<double>(cfg.dim_txt));
  for (auto& v : w.proj_image.values()) v = rng.normal() * scale_img;
  for (auto& v : w.proj_text.values()) v = rng.normal() * scale_txt;
  return w;
}

/// Class-conditioned paired features: z = center[c] + within_class_sd·ξ,
/// image = A·z + noise_sd·ε, text = B·z + noise_sd·ε'. Classes are assigned
/// round-robin, so `num_pairs == classes` yields one pair per class.
inline PairDataset generate_pair_dataset(const GeneratorConfig& cfg) {
  const auto world = make_world(cfg);
  Rng rng(derive_seed(cfg.seed, std::string("generator/split/") + to_string(cfg.split)));
  PairDataset d{Matrix<>(cfg.num_pairs, cfg.dim_img), Matrix<>(cfg.num_pairs, cfg.dim_txt), cfg.split, {}};
  d.classes.resize(cfg.num_pairs);
  std::vector<double> z(cfg.latent_dim);
  for (std::size_t i = 0; i < cfg.num_pairs; ++i) {
    const auto c = static_cast<std::uint32_t>(i % cfg.classes);
    d.classes[i] = c;
    for (std::size_t k = 0; k < cfg.latent_dim; ++k) z[k] = world.centers(c, k) + cfg.within_class_sd * rng.normal();
    for (std::size_t r = 0; r < cfg.dim_img; ++r) {
      double s = 0.0;
      for (std::size_t k = 0; k < cfg.latent_dim; ++k) s += world.proj_image(r, k) * z[k];
      d.images(i, r) = s + cfg.noise_sd * rng.normal();
    }
    for (std::size_t r = 0; r < cfg.dim_txt; ++r) {
      double s = 0.0;
      for (std::size_t k = 0; k < cfg.latent_dim; ++k) s += world.proj_text(r, k) * z[k];
      d.texts(i, r) = s + cfg.noise_sd * rng.normal();
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Learnable similarity

enum class SimType : std::uint8_t { full = 0, lowrank = 1 };

inline const char* to_string(SimType s) { return s == SimType::full ? "full" : "lowrank"; }
inline SimType parse_sim_type(const std::string& s) {
  if (s == "full") return SimType::full;
  if (s == "lowrank") return SimType::lowrank;
  throw InvalidArgument("unknown sim_type '" + s + "'");
}

/// Learnable pairwise similarity S̃: either a dense N×N matrix or the
/// low-rank form ωI + (a/r)·L·Rᵀ.
struct SimilarityParams {
  SimType mode = SimType::full;
  Matrix<> dense;  // full mode
  double omega = 1.0;
  double alpha = 1.0;  // the scale `a`
  std::size_t rank = 0;
  Matrix<> left;   // N × r
  Matrix<> right;  // N × r

  static SimilarityParams identity(std::size_t n) {
    SimilarityParams s;
    s.dense = Matrix<>::identity(n);
    return s;
  }

  /// Low-rank parameters that reconstruct to the identity: ω = 1, R = 0,
  /// L small random so that R receives gradient.
  static SimilarityParams lowrank_identity(std::size_t n, std::size_t rank, double alpha, Rng& rng) {
    if (rank == 0 || rank > n) throw InvalidArgument("sim_rank must be in [1, N]");
    SimilarityParams s;
    s.mode = SimType::lowrank;
    s.omega = 1.0;
    s.alpha = alpha;
    s.rank = rank;
    s.left = Matrix<>(n, rank);
    s.right = Matrix<>(n, rank);
    for (auto& v : s.left.values()) v = rng.normal() / std::sqrt(static_cast<double>(rank));
    return s;
  }

  std::size_t size() const noexcept { return mode == SimType::full ? dense.rows() : left.rows(); }

  friend bool operator==(const SimilarityParams&, const SimilarityParams&) = default;
};

/// Learnable synthetic pairs for one phase.
struct SyntheticDataset {
  Matrix<> images;
  Matrix<> texts;
  SimilarityParams sim;
  double inner_lr_img = 0.1;
  double inner_lr_txt = 0.1;
  std::uint32_t phase = 0;
  std::vector<std::uint32_t> source_rows;  // real rows used at initialization

  std::size_t size() const noexcept { return images.rows(); }

  /// Row counts only; step sizes are not checked.
  void validate_shape() const {
    if (images.rows() == 0) throw InvalidArgument("synthetic dataset has no rows");
    if (images.rows() != texts.rows()) throw InvalidArgument("synthetic image/text row counts differ");
    if (sim.size() != images.rows()) throw InvalidArgument("similarity size differs from synthetic rows");
  }

  void validate() const {
    validate_shape();
    if (!(inner_lr_img > 0.0) || !(inner_lr_txt > 0.0)) throw InvalidArgument("inner step sizes must be positive");
  }

  friend bool operator==(const SyntheticDataset&, const SyntheticDataset&) = default;
};

}  // namespace ptmst

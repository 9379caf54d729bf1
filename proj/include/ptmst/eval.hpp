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
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "ptmst/data.hpp"
#include "ptmst/errors.hpp"
#include "ptmst/model.hpp"
#include "ptmst/retrieval.hpp"
#include "ptmst/rng.hpp"
#include "ptmst/similarity.hpp"
#include "ptmst/trajectory.hpp"

namespace ptmst {

struct EvalConfig {
  std::size_t epochs = 20;  // per subset
  std::size_t batch_size = 64;
  double lr_img = 0.1;
  double lr_txt = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  std::size_t hidden = 32;
  std::size_t embed = 16;
  LossSpec loss;
  std::vector<std::size_t> ks = default_ks();
  /// Train each distilled subset at the inner step sizes learned alongside
  /// it instead of lr_img / lr_txt. Subsets without learned rates keep the
  /// configured ones.
  bool use_learned_lr = false;

  void validate() const {
    if (batch_size < 1) throw InvalidArgument("student batch size must be positive");
    if (!std::is_sorted(ks.begin(), ks.end())) throw InvalidArgument("K list must be sorted ascending");
    loss.validate();
  }
};

/// One training subset for the student: pairs plus wBCE targets.
struct StudentSubset {
  Matrix<> images;
  Matrix<> texts;
  Matrix<> targets;
  std::optional<double> learned_lr_img;
  std::optional<double> learned_lr_txt;

  static StudentSubset from_synthetic(const SyntheticDataset& s) {
    return {s.images, s.texts, reconstruct_similarity(s.sim), s.inner_lr_img, s.inner_lr_txt};
  }
  static StudentSubset from_pairs(const PairDataset& d) {
    return {d.images, d.texts, Matrix<>::identity(d.size()), std::nullopt, std::nullopt};
  }

  std::size_t size() const noexcept { return images.rows(); }
};

/// Trains a fresh student on `subsets` in order, continuing the same
/// parameters and optimizer state from one subset to the next. Zero epochs
/// leaves the initialization untouched.
inline ParamVector train_student_params(const std::vector<StudentSubset>& subsets, const EvalConfig& cfg,
                                        std::uint64_t seed) {
  cfg.validate();
  if (subsets.empty()) throw InvalidArgument("progressive training needs at least one subset");
  const ModelShape shape{subsets.front().images.cols(), subsets.front().texts.cols(), cfg.hidden, cfg.embed};
  auto theta = init_params(shape, derive_seed(seed, "student/init"));
  SgdMomentum opt(cfg.momentum, cfg.weight_decay);
  LossSpec spec = cfg.loss;
  spec.kind = LossKind::wbce;
  Rng rng(derive_seed(seed, "student/order"));
  for (std::size_t p = 0; p < subsets.size(); ++p) {
    const auto& sub = subsets[p];
    if (sub.images.cols() != shape.dim_img || sub.texts.cols() != shape.dim_txt || sub.size() == 0)
      throw InvalidArgument("subset " + std::to_string(p) + " is inconsistent with the first subset");
    const auto rates = tower_rates(theta, cfg.use_learned_lr ? sub.learned_lr_img.value_or(cfg.lr_img) : cfg.lr_img,
                                   cfg.use_learned_lr ? sub.learned_lr_txt.value_or(cfg.lr_txt) : cfg.lr_txt);
    const std::size_t bs = std::min(cfg.batch_size, sub.size());
    std::vector<std::size_t> order(sub.size());
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      rng.shuffle(order.begin(), order.end());
      for (std::size_t start = 0; start < order.size(); start += bs) {
        const std::span<const std::size_t> idx(order.data() + start, std::min(bs, order.size() - start));
        const auto x = gather_rows(sub.images, idx);
        const auto y = gather_rows(sub.texts, idx);
        const auto s = gather_block(sub.targets, idx);
        const auto g = batch_gradient<double>(shape, theta.values(), x, y, &s, spec, false);
        opt.step(theta, g.d_params, rates);
      }
      if (!theta.finite())
        throw TrainingFailure("student diverged on subset " + std::to_string(p), epoch);
    }
  }
  return theta;
}

inline RetrievalReport train_student_progressive(const std::vector<StudentSubset>& subsets, const EvalConfig& cfg,
                                                 const PairDataset& test, std::uint64_t seed) {
  return evaluate_retrieval(train_student_params(subsets, cfg, seed), test, cfg.ks);
}

// ---------------------------------------------------------------------------
// Coreset baselines

inline std::vector<std::size_t> coreset_random(std::size_t m, std::size_t count, std::uint64_t seed) {
  if (count > m) throw CapacityError("coreset of " + std::to_string(count) + " from " + std::to_string(m) + " rows");
  Rng rng(derive_seed(seed, "coreset/random"));
  return rng.sample_without_replacement(m, count);
}

/// Greedy herding over rows of `points`: each step adds the unselected point
/// that brings the running selected mean closest to the global mean. Ties go
/// to the lower index.
inline std::vector<std::size_t> herding_select(const Matrix<>& points, std::size_t count) {
  const std::size_t m = points.rows(), d = points.cols();
  if (count > m) throw CapacityError("coreset of " + std::to_string(count) + " from " + std::to_string(m) + " rows");
  std::vector<double> mean(d, 0.0), sum(d, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < d; ++k) mean[k] += points(i, k);
  for (auto& v : mean) v /= static_cast<double>(m);
  std::vector<bool> used(m, false);
  std::vector<std::size_t> out;
  for (std::size_t step = 1; step <= count; ++step) {
    std::size_t best = m;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < m; ++i) {
      if (used[i]) continue;
      double dist = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = (sum[k] + points(i, k)) / static_cast<double>(step) - mean[k];
        dist += diff * diff;
      }
      if (dist < best_dist) {
        best_dist = dist;
        best = i;
      }
    }
    used[best] = true;
    out.push_back(best);
    for (std::size_t k = 0; k < d; ++k) sum[k] += points(best, k);
  }
  return out;
}

/// Greedy farthest-point k-center starting from `first`.
inline std::vector<std::size_t> kcenter_select(const Matrix<>& points, std::size_t count, std::size_t first) {
  const std::size_t m = points.rows(), d = points.cols();
  if (count > m) throw CapacityError("coreset of " + std::to_string(count) + " from " + std::to_string(m) + " rows");
  if (count == 0) return {};
  if (first >= m) throw InvalidArgument("k-center seed index out of range");
  auto dist2 = [&](std::size_t a, std::size_t b) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += (points(a, k) - points(b, k)) * (points(a, k) - points(b, k));
    return s;
  };
  std::vector<double> nearest(m, std::numeric_limits<double>::infinity());
  std::vector<bool> used(m, false);
  std::vector<std::size_t> out{first};
  used[first] = true;
  while (out.size() < count) {
    const auto last = out.back();
    std::size_t best = m;
    double best_d = -1.0;
    for (std::size_t i = 0; i < m; ++i) {
      nearest[i] = std::min(nearest[i], dist2(i, last));
      if (!used[i] && nearest[i] > best_d) {
        best_d = nearest[i];
        best = i;
      }
    }
    used[best] = true;
    out.push_back(best);
  }
  return out;
}

/// Concatenated teacher embeddings (u_i ‖ v_i) of every real pair.
inline Matrix<> pair_embeddings(const PairDataset& real, const ParamVector& teacher) {
  const auto emb = forward(teacher, real.images, real.texts);
  const std::size_t e = emb.image.cols();
  Matrix<> out(real.size(), 2 * e);
  for (std::size_t i = 0; i < real.size(); ++i)
    for (std::size_t k = 0; k < e; ++k) {
      out(i, k) = emb.image(i, k);
      out(i, e + k) = emb.text(i, k);
    }
  return out;
}

inline std::vector<std::size_t> coreset_herding(const PairDataset& real, std::size_t count, const ParamVector& teacher) {
  if (count > real.size()) throw CapacityError("coreset larger than the dataset");
  return herding_select(pair_embeddings(real, teacher), count);
}

inline std::vector<std::size_t> coreset_kcenter(const PairDataset& real, std::size_t count, const ParamVector& teacher,
                                                std::uint64_t seed) {
  if (count > real.size()) throw CapacityError("coreset larger than the dataset");
  Rng rng(derive_seed(seed, "coreset/kcenter"));
  const auto first = static_cast<std::size_t>(rng.below(real.size()));
  return kcenter_select(pair_embeddings(real, teacher), count, first);
}

}  // namespace ptmst

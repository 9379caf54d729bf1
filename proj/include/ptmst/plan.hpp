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

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ptmst/data.hpp"
#include "ptmst/errors.hpp"
#include "ptmst/model.hpp"
#include "ptmst/rng.hpp"
#include "ptmst/similarity.hpp"
#include "ptmst/trajectory.hpp"

namespace ptmst {

/// Hyperparameters of one distillation phase. Field names follow the config
/// keys (num_queries, iteration, min_start_epoch, ...).
struct PhaseConfig {
  std::size_t num_queries = 10;             // N_p
  std::size_t iterations = 200;             // I_p
  std::size_t min_start_epoch = 0;          // T_p^-
  std::size_t max_start_epoch = 2;          // T_p^+
  std::size_t interpolation_endpoint = 6;   // t_p
  std::size_t syn_steps = 8;                // t
  std::size_t expert_epochs = 1;            // ΔT
  double ema_decay = 0.99;                  // α
  double lr_img = 100.0;                    // γ_X
  double lr_txt = 100.0;                    // γ_Y
  double lr_sim = 10.0;                     // γ_S
  double lr_lr = 0.01;
  double lr_teacher_img = 0.1;              // initial learnable inner step size
  double lr_teacher_txt = 0.1;
  std::size_t mini_batch_size = 10;
  LossKind loss_type = LossKind::wbce;

  /// Checks the ordering constraints against a teacher horizon of n epochs.
  void validate(std::size_t n) const {
    if (num_queries < 1) throw InvalidArgument("num_queries must be at least 1");
    if (min_start_epoch > max_start_epoch) throw InvalidArgument("min_start_epoch exceeds max_start_epoch");
    if (max_start_epoch >= interpolation_endpoint)
      throw InvalidArgument("max_start_epoch must be below the interpolation endpoint");
    if (interpolation_endpoint > n) throw InvalidArgument("interpolation endpoint exceeds the teacher horizon");
    if (expert_epochs < 1) throw InvalidArgument("expert_epochs must be at least 1");
    if (max_start_epoch + expert_epochs > interpolation_endpoint)
      throw InvalidArgument("max_start_epoch + expert_epochs exceeds the interpolation endpoint");
    if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) throw InvalidArgument("ema_decay must lie in [0, 1]");
    if (!(lr_teacher_img > 0.0) || !(lr_teacher_txt > 0.0))
      throw InvalidArgument("initial inner step sizes must be positive");
    if (mini_batch_size < 1 || mini_batch_size > num_queries)
      throw InvalidArgument("mini_batch_size must lie in [1, num_queries]");
  }

  friend bool operator==(const PhaseConfig&, const PhaseConfig&) = default;
};

/// The multi-phase schedule plus settings shared by every phase.
struct DistillPlan {
  std::vector<PhaseConfig> phases;
  std::string buffer_path;
  std::uint64_t master_seed = 0;
  PathKind trajectory = PathKind::shortcut;
  SimType sim_type = SimType::full;
  std::size_t sim_rank = 10;
  double sim_alpha = 1.0;
  LossSpec loss;
  double clip_factor = 10.0;

  std::size_t total_queries() const {
    std::size_t s = 0;
    for (const auto& p : phases) s += p.num_queries;
    return s;
  }

  void validate(std::size_t n, std::size_t m) const {
    if (phases.empty()) throw InvalidArgument("a plan needs at least one phase");
    for (const auto& p : phases) p.validate(n);
    loss.validate();
    if (total_queries() > m)
      throw CapacityError("plan needs " + std::to_string(total_queries()) + " real pairs, dataset has " +
                          std::to_string(m));
  }
};

/// Disjoint initialization rows for every phase: one seeded permutation of
/// the real set, sliced consecutively by N_p.
inline std::vector<std::vector<std::size_t>> plan_initial_rows(std::size_t m, const DistillPlan& plan) {
  const auto total = plan.total_queries();
  if (total > m)
    throw CapacityError("plan needs " + std::to_string(total) + " real pairs, dataset has " + std::to_string(m));
  Rng rng(derive_seed(plan.master_seed, "distill/init-rows"));
  const auto perm = rng.sample_without_replacement(m, total);
  std::vector<std::vector<std::size_t>> out;
  std::size_t at = 0;
  for (const auto& p : plan.phases) {
    out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(at),
                     perm.begin() + static_cast<std::ptrdiff_t>(at + p.num_queries));
    at += p.num_queries;
  }
  return out;
}

struct SimilarityOptions {
  SimType type = SimType::full;
  std::size_t rank = 10;
  double alpha = 1.0;
};

/// Copies the selected real pairs, sets the similarity to the identity and
/// the inner step sizes to their configured initial values.
inline SyntheticDataset init_synthetic(const PairDataset& real, std::span<const std::size_t> rows,
                                       const PhaseConfig& cfg, std::uint32_t phase, const SimilarityOptions& sim,
                                       std::uint64_t seed) {
  real.validate();
  if (rows.size() != cfg.num_queries) throw InvalidArgument("row selection size differs from num_queries");
  for (auto r : rows)
    if (r >= real.size()) throw CapacityError("initialization row out of range");
  SyntheticDataset s;
  s.images = gather_rows(real.images, rows);
  s.texts = gather_rows(real.texts, rows);
  if (sim.type == SimType::full) {
    s.sim = SimilarityParams::identity(rows.size());
  } else {
    Rng rng(derive_seed(seed, "distill/sim-init", phase));
    s.sim = SimilarityParams::lowrank_identity(rows.size(), sim.rank, sim.alpha, rng);
  }
  s.inner_lr_img = cfg.lr_teacher_img;
  s.inner_lr_txt = cfg.lr_teacher_txt;
  s.phase = phase;
  for (auto r : rows) s.source_rows.push_back(static_cast<std::uint32_t>(r));
  return s;
}

/// Single-phase convenience: N_p rows drawn without replacement from `seed`.
inline SyntheticDataset init_synthetic(const PairDataset& real, const PhaseConfig& cfg, std::uint64_t seed) {
  if (cfg.num_queries > real.size())
    throw CapacityError("need " + std::to_string(cfg.num_queries) + " real pairs, dataset has " +
                        std::to_string(real.size()));
  DistillPlan plan;
  plan.phases = {cfg};
  plan.master_seed = seed;
  const auto rows = plan_initial_rows(real.size(), plan);
  return init_synthetic(real, rows.front(), cfg, 0, {}, seed);
}

}  // namespace ptmst

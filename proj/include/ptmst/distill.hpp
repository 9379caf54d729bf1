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
#include <functional>
#include <string>
#include <vector>

#include "ptmst/data.hpp"
#include "ptmst/dual.hpp"
#include "ptmst/errors.hpp"
#include "ptmst/model.hpp"
#include "ptmst/param_vector.hpp"
#include "ptmst/plan.hpp"
#include "ptmst/rng.hpp"
#include "ptmst/similarity.hpp"
#include "ptmst/trajectory.hpp"

namespace ptmst {

/// ‖θ_end − θ_target‖² / ‖θ_start − θ_target‖² over all layers.
inline double matching_loss(const ParamVector& student_end, const ParamVector& start, const ParamVector& target) {
  student_end.require_compatible(target, "matching_loss");
  start.require_compatible(target, "matching_loss");
  const auto a = student_end.values(), s = start.values(), t = target.values();
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    num += (a[i] - t[i]) * (a[i] - t[i]);
    den += (s[i] - t[i]) * (s[i] - t[i]);
  }
  if (!(den > 0.0)) throw DegenerateSegment("teacher segment has zero length");
  return num / den;
}

/// Everything needed to differentiate exactly through t inner SGD steps.
struct UnrollTape {
  ParamVector start;
  std::vector<std::vector<std::size_t>> batches;  // per step
  std::vector<std::vector<double>> params;        // θ_k before step k
  ParamVector end;
  double lr_img = 0.0;
  double lr_txt = 0.0;
};

struct UnrollOptions {
  std::size_t steps = 8;
  std::size_t mini_batch = 10;
  LossSpec loss;
};

namespace detail {

inline std::vector<double> rate_per_element(const ParamVector& p, double lr_img, double lr_txt) {
  std::vector<double> r(p.size());
  const auto layer_rates = tower_rates(p, lr_img, lr_txt);
  for (std::size_t l = 0; l < p.num_layers(); ++l) {
    const auto& info = p.info(l);
    std::fill(r.begin() + static_cast<std::ptrdiff_t>(info.offset),
              r.begin() + static_cast<std::ptrdiff_t>(info.offset + info.size), layer_rates[l]);
  }
  return r;
}

}  // namespace detail

/// Plain SGD (no momentum) on mini-batches of the synthetic pairs, with the
/// synthetic dataset's per-modality step sizes and wBCE targets taken from
/// its similarity.
inline UnrollTape inner_unroll(const SyntheticDataset& syn, const ParamVector& start, const UnrollOptions& opt,
                               std::uint64_t seed) {
  syn.validate_shape();
  if (!(syn.inner_lr_img >= 0.0) || !(syn.inner_lr_txt >= 0.0)) throw InvalidArgument("inner step sizes must be nonnegative");
  const auto shape = ModelShape::from_params(start);
  if (opt.mini_batch < 1 || opt.mini_batch > syn.size())
    throw InvalidArgument("mini_batch must lie in [1, N]");
  const auto targets = reconstruct_similarity(syn.sim);
  UnrollTape tape{start, {}, {}, start, syn.inner_lr_img, syn.inner_lr_txt};
  const auto rates = detail::rate_per_element(start, syn.inner_lr_img, syn.inner_lr_txt);
  Rng rng(seed);
  auto theta = tape.end.values();
  for (std::size_t k = 0; k < opt.steps; ++k) {
    auto idx = rng.sample_without_replacement(syn.size(), opt.mini_batch);
    const auto x = gather_rows(syn.images, idx);
    const auto y = gather_rows(syn.texts, idx);
    const auto s = gather_block(targets, idx);
    tape.params.emplace_back(theta.begin(), theta.end());
    const auto g = batch_gradient<double>(shape, tape.end.values(), x, y, &s, opt.loss, false);
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= rates[i] * g.d_params[i];
    if (!all_finite(theta)) throw UnrollDivergence("inner parameters became non-finite", k);
    tape.batches.push_back(std::move(idx));
  }
  return tape;
}

/// Derivatives of the matching loss with respect to every learnable part of
/// a synthetic dataset. `sim` mirrors the dataset's similarity parameters.
struct MetaGradient {
  Matrix<> d_images;
  Matrix<> d_texts;
  SimilarityParams d_sim;
  double d_lr_img = 0.0;
  double d_lr_txt = 0.0;

  double squared_norm() const {
    double s = d_lr_img * d_lr_img + d_lr_txt * d_lr_txt;
    for (double v : d_images.values()) s += v * v;
    for (double v : d_texts.values()) s += v * v;
    if (d_sim.mode == SimType::full) {
      for (double v : d_sim.dense.values()) s += v * v;
    } else {
      s += d_sim.omega * d_sim.omega;
      for (double v : d_sim.left.values()) s += v * v;
      for (double v : d_sim.right.values()) s += v * v;
    }
    return s;
  }

  void scale(double c) {
    d_lr_img *= c;
    d_lr_txt *= c;
    for (auto& v : d_images.values()) v *= c;
    for (auto& v : d_texts.values()) v *= c;
    if (d_sim.mode == SimType::full) {
      for (auto& v : d_sim.dense.values()) v *= c;
    } else {
      d_sim.omega *= c;
      for (auto& v : d_sim.left.values()) v *= c;
      for (auto& v : d_sim.right.values()) v *= c;
    }
  }
};

struct MetaResult {
  double loss = 0.0;
  MetaGradient grad;
  UnrollTape tape;
};

/// Exact reverse-mode derivative of the matching loss through the inner
/// unroll. Each reverse step evaluates the batch gradient once in dual
/// numbers with tangent η⊙λ on the parameters, which yields the
/// Hessian-vector product for the adjoint and the mixed second derivatives
/// for the data blocks.
inline MetaResult meta_gradient(const SyntheticDataset& syn, const ParamVector& start, const ParamVector& target,
                                const UnrollOptions& opt, std::uint64_t seed) {
  start.require_compatible(target, "meta_gradient");
  auto tape = inner_unroll(syn, start, opt, seed);
  const double loss = matching_loss(tape.end, start, target);
  const auto shape = ModelShape::from_params(start);
  const std::size_t n = syn.size();

  MetaGradient mg;
  mg.d_images = Matrix<>(n, syn.images.cols());
  mg.d_texts = Matrix<>(n, syn.texts.cols());
  Matrix<> d_dense(n, n);

  const auto t = target.values();
  const auto e = tape.end.values();
  double den = 0.0;
  {
    const auto s = start.values();
    for (std::size_t i = 0; i < t.size(); ++i) den += (s[i] - t[i]) * (s[i] - t[i]);
  }
  std::vector<double> adj(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) adj[i] = 2.0 * (e[i] - t[i]) / den;

  const auto rates = detail::rate_per_element(start, tape.lr_img, tape.lr_txt);
  const std::size_t image_end = shape.image_size();
  const auto targets = opt.steps > 0 ? reconstruct_similarity(syn.sim) : Matrix<>();

  std::vector<Dual> theta(t.size());
  for (std::size_t k = opt.steps; k-- > 0;) {
    const auto& idx = tape.batches[k];
    const auto& pk = tape.params[k];
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] = Dual(pk[i], rates[i] * adj[i]);
    const auto xs = gather_rows(syn.images, idx);
    const auto ys = gather_rows(syn.texts, idx);
    const auto ss = gather_block(targets, idx);
    Matrix<Dual> x(xs.rows(), xs.cols()), y(ys.rows(), ys.cols()), s(ss.rows(), ss.cols());
    std::copy(xs.values().begin(), xs.values().end(), x.values().begin());
    std::copy(ys.values().begin(), ys.values().end(), y.values().begin());
    std::copy(ss.values().begin(), ss.values().end(), s.values().begin());

    const auto bg =
        batch_gradient<Dual>(shape, std::span<const Dual>(theta), x, y, &s, opt.loss, /*input_grads=*/true);

    for (std::size_t i = 0; i < adj.size(); ++i) {
      const double g = bg.d_params[i].v;
      (i < image_end ? mg.d_lr_img : mg.d_lr_txt) -= adj[i] * g;
    }
    for (std::size_t r = 0; r < idx.size(); ++r) {
      auto dxi = mg.d_images.row(idx[r]);
      for (std::size_t c = 0; c < dxi.size(); ++c) dxi[c] -= bg.d_images(r, c).d;
      auto dyi = mg.d_texts.row(idx[r]);
      for (std::size_t c = 0; c < dyi.size(); ++c) dyi[c] -= bg.d_texts(r, c).d;
      if (!bg.d_targets.empty())
        for (std::size_t c = 0; c < idx.size(); ++c) d_dense(idx[r], idx[c]) -= bg.d_targets(r, c).d;
    }
    for (std::size_t i = 0; i < adj.size(); ++i) adj[i] -= bg.d_params[i].d;
  }
  mg.d_sim = similarity_backward(syn.sim, d_dense);
  return {loss, std::move(mg), std::move(tape)};
}

/// D̂ ← α·D̂ + (1 − α)·D̃ on images, texts and the dense similarity; inner
/// step sizes come from `current`. α = 1 returns `smoothed` untouched and
/// α = 0 returns `current`.
inline SyntheticDataset ema_update(const SyntheticDataset& smoothed, const SyntheticDataset& current, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("EMA decay must lie in [0, 1]");
  if (!smoothed.images.same_shape(current.images) || !smoothed.texts.same_shape(current.texts) ||
      smoothed.sim.size() != current.sim.size())
    throw InvalidArgument("EMA operands differ in shape");
  if (alpha == 1.0) return smoothed;
  if (alpha == 0.0) return current;
  SyntheticDataset out = smoothed;
  const double beta = 1.0 - alpha;
  auto mix = [&](std::span<double> dst, std::span<const double> cur) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = alpha * dst[i] + beta * cur[i];
  };
  mix(out.images.values(), current.images.values());
  mix(out.texts.values(), current.texts.values());
  auto dense = reconstruct_similarity(smoothed.sim);
  mix(dense.values(), reconstruct_similarity(current.sim).values());
  out.sim = SimilarityParams::identity(0);
  out.sim.dense = std::move(dense);
  out.inner_lr_img = current.inner_lr_img;
  out.inner_lr_txt = current.inner_lr_txt;
  return out;
}

/// Clips the meta-gradient norm at `factor` times the median of previously
/// seen norms.
class MedianClipper {
 public:
  explicit MedianClipper(double factor) : factor_(factor) {}

  /// Returns the applied scale (1 when not clipped).
  double apply(MetaGradient& g) {
    const double norm = std::sqrt(g.squared_norm());
    double scale = 1.0;
    if (!history_.empty() && factor_ > 0.0) {
      auto tmp = history_;
      const auto mid = tmp.begin() + static_cast<std::ptrdiff_t>((tmp.size() - 1) / 2);
      std::nth_element(tmp.begin(), mid, tmp.end());
      const double limit = factor_ * *mid;
      if (norm > limit && norm > 0.0) scale = limit / norm;
    }
    history_.push_back(norm);
    if (scale != 1.0) g.scale(scale);
    return scale;
  }

 private:
  double factor_;
  std::vector<double> history_;
};

inline constexpr double kMinInnerLr = 1e-6;

/// One outer SGD step on the synthetic data; dense similarity is clamped to
/// [0, 1] and step sizes are kept positive.
inline void apply_outer_update(SyntheticDataset& syn, const MetaGradient& g, const PhaseConfig& cfg) {
  auto step = [](std::span<double> x, std::span<const double> d, double lr) {
    for (std::size_t i = 0; i < x.size(); ++i) x[i] -= lr * d[i];
  };
  step(syn.images.values(), g.d_images.values(), cfg.lr_img);
  step(syn.texts.values(), g.d_texts.values(), cfg.lr_txt);
  if (syn.sim.mode == SimType::full) {
    step(syn.sim.dense.values(), g.d_sim.dense.values(), cfg.lr_sim);
    for (auto& v : syn.sim.dense.values()) v = std::clamp(v, 0.0, 1.0);
  } else {
    syn.sim.omega -= cfg.lr_sim * g.d_sim.omega;
    step(syn.sim.left.values(), g.d_sim.left.values(), cfg.lr_sim);
    step(syn.sim.right.values(), g.d_sim.right.values(), cfg.lr_sim);
  }
  syn.inner_lr_img = std::max(kMinInnerLr, syn.inner_lr_img - cfg.lr_lr * g.d_lr_img);
  syn.inner_lr_txt = std::max(kMinInnerLr, syn.inner_lr_txt - cfg.lr_lr * g.d_lr_txt);
}

struct IterationLog {
  std::size_t phase = 0;
  std::size_t iteration = 0;
  std::size_t expert = 0;
  std::size_t start_epoch = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
};

struct PhaseResult {
  SyntheticDataset distilled;  // D̂^{I_p}
  SyntheticDataset last;       // D̃^{I_p}, the raw iterate
  std::vector<IterationLog> log;
};

/// Optional per-iteration hook, called with the raw iterate D̃^i after the
/// outer update and the smoothed D̂^i after EMA.
using IterationObserver = std::function<void(std::size_t, const SyntheticDataset&, const SyntheticDataset&)>;

inline constexpr std::size_t kMaxStartResamples = 10;

namespace detail {

/// Samples T in [T^-, T^+] until the teacher segment is non-degenerate.
inline std::size_t sample_start(Rng& rng, const MatchingPath& path, const PhaseConfig& cfg) {
  for (std::size_t attempt = 0; attempt < kMaxStartResamples; ++attempt) {
    const auto T = static_cast<std::size_t>(rng.between(static_cast<std::int64_t>(cfg.min_start_epoch),
                                                        static_cast<std::int64_t>(cfg.max_start_epoch)));
    const auto a = path.knot(T).values();
    const auto b = path.knot(T + cfg.expert_epochs).values();
    double den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) den += (a[i] - b[i]) * (a[i] - b[i]);
    if (den > 0.0) return T;
  }
  throw DegenerateSegment("no non-degenerate teacher segment after " + std::to_string(kMaxStartResamples) +
                          " start samples");
}

inline UnrollOptions unroll_options(const PhaseConfig& cfg, const LossSpec& base) {
  UnrollOptions o;
  o.steps = cfg.syn_steps;
  o.mini_batch = cfg.mini_batch_size;
  o.loss = base;
  o.loss.kind = cfg.loss_type;
  return o;
}

}  // namespace detail

/// Matching paths for one phase, one per expert.
inline std::vector<MatchingPath> phase_paths(const std::vector<TeacherTrajectory>& buffer, const PhaseConfig& cfg,
                                             PathKind kind, std::size_t phase) {
  std::vector<MatchingPath> out;
  out.reserve(buffer.size());
  for (const auto& traj : buffer) {
    if (traj.epochs() < cfg.interpolation_endpoint) throw InvalidArgument("expert shorter than the phase endpoint");
    out.push_back(kind == PathKind::shortcut ? MatchingPath::shortcut(build_shortcut(traj, cfg.interpolation_endpoint, phase))
                                             : MatchingPath::original(traj));
  }
  return out;
}

/// Runs one phase of the distillation loop starting from `init`.
inline PhaseResult distill_phase(const SyntheticDataset& init, const std::vector<MatchingPath>& paths,
                                 const PhaseConfig& cfg, const DistillPlan& plan, std::uint64_t seed,
                                 const IterationObserver& observer = {}) {
  if (paths.empty()) throw InvalidArgument("distill_phase needs at least one expert");
  const auto opt = detail::unroll_options(cfg, plan.loss);
  Rng rng(seed);
  SyntheticDataset current = init;
  SyntheticDataset smoothed = init;
  MedianClipper clipper(plan.clip_factor);
  PhaseResult res;
  for (std::size_t i = 1; i <= cfg.iterations; ++i) {
    const auto expert = static_cast<std::size_t>(rng.below(paths.size()));
    const auto& path = paths[expert];
    const auto T = detail::sample_start(rng, path, cfg);
    const auto unroll_seed = splitmix64(rng.below(~std::uint64_t{0}));
    auto mr = meta_gradient(current, path.knot(T), path.knot(T + cfg.expert_epochs), opt, unroll_seed);
    const double norm = std::sqrt(mr.grad.squared_norm());
    clipper.apply(mr.grad);
    apply_outer_update(current, mr.grad, cfg);
    if (!std::isfinite(norm) || !all_finite(current.images.values()) || !all_finite(current.texts.values()) ||
        !all_finite(reconstruct_similarity(current.sim).values()) || !std::isfinite(current.inner_lr_img) ||
        !std::isfinite(current.inner_lr_txt))
      throw Error("synthetic set became non-finite at iteration " + std::to_string(i));
    smoothed = ema_update(smoothed, current, cfg.ema_decay);
    if (observer) observer(i, current, smoothed);
    res.log.push_back({init.phase, i, expert, T, mr.loss, norm});
  }
  res.distilled = std::move(smoothed);
  res.last = std::move(current);
  return res;
}

inline std::uint64_t phase_seed(const DistillPlan& plan, std::size_t phase) {
  return derive_seed(plan.master_seed, "distill/phase", phase);
}

/// All phases in order: disjoint initialization, per-phase paths, and the
/// shifted matching ranges of each phase. A failure is rethrown with the
/// phase id.
inline std::vector<PhaseResult> distill_all(const PairDataset& real, const DistillPlan& plan,
                                            const std::vector<TeacherTrajectory>& buffer) {
  if (buffer.empty()) throw InvalidArgument("empty expert buffer");
  plan.validate(buffer.front().epochs(), real.size());
  const auto rows = plan_initial_rows(real.size(), plan);
  const SimilarityOptions sim{plan.sim_type, plan.sim_rank, plan.sim_alpha};
  std::vector<PhaseResult> out;
  for (std::size_t p = 0; p < plan.phases.size(); ++p) {
    const auto& cfg = plan.phases[p];
    try {
      const auto init = init_synthetic(real, rows[p], cfg, static_cast<std::uint32_t>(p), sim, plan.master_seed);
      const auto paths = phase_paths(buffer, cfg, plan.trajectory, p);
      out.push_back(distill_phase(init, paths, cfg, plan, phase_seed(plan, p)));
    } catch (const Error& e) {
      throw Error("phase " + std::to_string(p) + ": " + e.what());
    }
  }
  return out;
}

/// Single-subset trajectory matching on raw expert checkpoints with no
/// smoothing, as in LoRS-style distillation. Shares initialization and random
/// streams with a one-phase plan so the two can be compared directly.
inline SyntheticDataset distill_mtt_baseline(const PairDataset& real, const DistillPlan& plan,
                                             const std::vector<TeacherTrajectory>& buffer) {
  if (plan.phases.size() != 1) throw InvalidArgument("the baseline runs exactly one phase");
  const auto& cfg = plan.phases.front();
  plan.validate(buffer.front().epochs(), real.size());
  const auto rows = plan_initial_rows(real.size(), plan);
  auto syn = init_synthetic(real, rows.front(), cfg, 0, {plan.sim_type, plan.sim_rank, plan.sim_alpha},
                            plan.master_seed);
  const auto opt = detail::unroll_options(cfg, plan.loss);
  Rng rng(phase_seed(plan, 0));
  MedianClipper clipper(plan.clip_factor);
  for (std::size_t i = 0; i < cfg.iterations; ++i) {
    const auto& traj = buffer[static_cast<std::size_t>(rng.below(buffer.size()))];
    const auto path = MatchingPath::original(traj);
    const auto T = detail::sample_start(rng, path, cfg);
    const auto unroll_seed = splitmix64(rng.below(~std::uint64_t{0}));
    auto mr = meta_gradient(syn, traj.at(T), traj.at(T + cfg.expert_epochs), opt, unroll_seed);
    clipper.apply(mr.grad);
    apply_outer_update(syn, mr.grad, cfg);
  }
  return syn;
}

}  // namespace ptmst

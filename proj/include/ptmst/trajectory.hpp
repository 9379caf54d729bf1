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

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ptmst/data.hpp"
#include "ptmst/errors.hpp"
#include "ptmst/model.hpp"
#include "ptmst/param_vector.hpp"
#include "ptmst/rng.hpp"
#include "ptmst/serialize.hpp"

namespace ptmst {

/// Per-layer step sizes; entry i applies to layer i of the ParamVector.
inline std::vector<double> tower_rates(const ParamVector& p, double lr_img, double lr_txt) {
  std::vector<double> r(p.num_layers());
  for (std::size_t i = 0; i < p.num_layers(); ++i) r[i] = p.info(i).name.rfind("img.", 0) == 0 ? lr_img : lr_txt;
  return r;
}

/// SGD with heavy-ball momentum and L2 weight decay:
///   g' = g + wd·θ,  v ← μ·v + g',  θ ← θ − lr·v.
/// The velocity belongs to the optimizer instance.
class SgdMomentum {
 public:
  SgdMomentum(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(ParamVector& params, std::span<const double> grads, std::span<const double> layer_rates) {
    if (grads.size() != params.size()) throw InvalidArgument("gradient size differs from parameters");
    if (layer_rates.size() != params.num_layers()) throw InvalidArgument("one rate per layer is required");
    if (velocity_.empty()) velocity_.assign(params.size(), 0.0);
    auto theta = params.values();
    for (std::size_t l = 0; l < params.num_layers(); ++l) {
      const auto& info = params.info(l);
      const double lr = layer_rates[l];
      for (std::size_t i = info.offset; i < info.offset + info.size; ++i) {
        const double g = grads[i] + weight_decay_ * theta[i];
        velocity_[i] = momentum_ * velocity_[i] + g;
        theta[i] -= lr * velocity_[i];
      }
    }
  }

  void step(ParamVector& params, std::span<const double> grads, double lr) {
    const std::vector<double> rates(params.num_layers(), lr);
    step(params, grads, rates);
  }

  const std::vector<double>& velocity() const noexcept { return velocity_; }

 private:
  double momentum_;
  double weight_decay_;
  std::vector<double> velocity_;
};

struct TeacherConfig {
  std::size_t hidden = 32;
  std::size_t embed = 16;
  std::size_t epochs = 10;
  std::size_t batch_size = 128;
  double lr_img = 0.1;
  double lr_txt = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  double temperature = 0.07;
  std::uint64_t seed = 0;

  friend bool operator==(const TeacherConfig&, const TeacherConfig&) = default;
};

/// Checkpoints θ_0..θ_n of one expert run, recorded once per epoch.
struct TeacherTrajectory {
  std::string expert_id;
  std::vector<Checkpoint> checkpoints;
  TeacherConfig meta;

  std::size_t epochs() const noexcept { return checkpoints.empty() ? 0 : checkpoints.size() - 1; }
  const ParamVector& at(std::size_t epoch) const { return checkpoints.at(epoch).params; }

  void validate() const {
    if (checkpoints.size() < 2) throw InvalidArgument("a trajectory needs at least two checkpoints");
    for (std::size_t i = 0; i < checkpoints.size(); ++i) {
      if (checkpoints[i].epoch != i) throw InvalidArgument("trajectory epochs must be 0..n in order");
      if (!checkpoints[i].params.compatible(checkpoints[0].params))
        throw InvalidArgument("trajectory checkpoints have differing schemas");
    }
  }

  friend bool operator==(const TeacherTrajectory&, const TeacherTrajectory&) = default;
};

/// Trains a two-tower teacher on `real` with InfoNCE and records the
/// parameters after initialization and after every epoch.
inline TeacherTrajectory train_teacher(const PairDataset& real, const TeacherConfig& cfg, std::string expert_id = "0") {
  real.validate();
  if (cfg.epochs < 1) throw InvalidArgument("teacher training needs at least one epoch");
  if (cfg.batch_size < 2) throw InvalidArgument("InfoNCE batches need at least two pairs");
  const ModelShape shape{real.images.cols(), real.texts.cols(), cfg.hidden, cfg.embed};
  LossSpec spec;
  spec.kind = LossKind::infonce;
  spec.infonce_temperature = cfg.temperature;

  TeacherTrajectory traj{std::move(expert_id), {}, cfg};
  auto theta = init_params(shape, derive_seed(cfg.seed, "teacher/init"));
  traj.checkpoints.push_back({0, theta});
  SgdMomentum opt(cfg.momentum, cfg.weight_decay);
  const auto rates = tower_rates(theta, cfg.lr_img, cfg.lr_txt);
  Rng order_rng(derive_seed(cfg.seed, "teacher/order"));
  std::vector<std::size_t> order(real.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    order_rng.shuffle(order.begin(), order.end());
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      if (end - start < 2) break;
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const auto x = gather_rows(real.images, idx);
      const auto y = gather_rows(real.texts, idx);
      const auto g = batch_gradient<double>(shape, theta.values(), x, y, nullptr, spec, false);
      opt.step(theta, g.d_params, rates);
    }
    if (!theta.finite()) throw TrainingFailure("teacher parameters diverged", epoch);
    traj.checkpoints.push_back({epoch, theta});
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Accumulated-distance weighting and shortcut trajectories

/// β^ℓ(t) for t = 0..endpoint, one row per layer.
struct BetaTable {
  std::size_t phase = 0;
  std::size_t endpoint = 0;
  std::vector<std::string> layers;
  std::vector<std::vector<double>> rows;

  /// Piecewise-linear β of layer `l` at real t in [0, endpoint].
  double at(std::size_t l, double t) const {
    const auto& row = rows.at(l);
    if (t <= 0.0) return row.front();
    if (t >= static_cast<double>(endpoint)) return row.back();
    const auto k = static_cast<std::size_t>(std::floor(t));
    const double f = t - static_cast<double>(k);
    if (f == 0.0) return row[k];
    return (1.0 - f) * row[k] + f * row[k + 1];
  }
};

enum class DegeneratePolicy { uniform_fallback, strict };

/// β^ℓ(t) = Σ_{l<t} ‖θ^ℓ_{l+1} − θ^ℓ_l‖ / Σ_{l<t_p} ‖θ^ℓ_{l+1} − θ^ℓ_l‖ per layer.
/// A layer that never moves gets β(t) = t/t_p unless `policy` is strict.
inline BetaTable compute_beta(const TeacherTrajectory& traj, std::size_t endpoint, std::size_t phase = 0,
                              DegeneratePolicy policy = DegeneratePolicy::uniform_fallback) {
  traj.validate();
  if (endpoint < 1 || endpoint > traj.epochs())
    throw InvalidArgument("interpolation endpoint must lie in [1, n]");
  const auto& ref = traj.at(0);
  BetaTable b{phase, endpoint, {}, {}};
  for (std::size_t l = 0; l < ref.num_layers(); ++l) {
    b.layers.push_back(ref.info(l).name);
    std::vector<double> cum(endpoint + 1, 0.0);
    for (std::size_t t = 0; t < endpoint; ++t) {
      const auto a = traj.at(t).layer(l);
      const auto c = traj.at(t + 1).layer(l);
      double sq = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) sq += (c[i] - a[i]) * (c[i] - a[i]);
      cum[t + 1] = cum[t] + std::sqrt(sq);
    }
    const double total = cum[endpoint];
    std::vector<double> row(endpoint + 1);
    if (total > 0.0) {
      for (std::size_t t = 0; t <= endpoint; ++t) row[t] = cum[t] / total;
    } else {
      if (policy == DegeneratePolicy::strict) throw DegenerateLayer(ref.info(l).name);
      for (std::size_t t = 0; t <= endpoint; ++t) row[t] = static_cast<double>(t) / static_cast<double>(endpoint);
    }
    row.front() = 0.0;
    row.back() = 1.0;
    b.rows.push_back(std::move(row));
  }
  return b;
}

/// θ^{p,ℓ}(t) = (1 − β^ℓ(t))·θ^ℓ_0 + β^ℓ(t)·θ^ℓ_{t_p}, per layer.
inline ParamVector interpolate_layers(const ParamVector& start, const ParamVector& end, const BetaTable& beta,
                                      double t) {
  ParamVector out = start;
  for (std::size_t l = 0; l < start.num_layers(); ++l) {
    const double w = beta.at(l, t);
    if (w == 0.0) continue;
    auto dst = out.layer(l);
    const auto a = start.layer(l);
    const auto c = end.layer(l);
    if (w == 1.0) {
      std::copy(c.begin(), c.end(), dst.begin());
      continue;
    }
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = (1.0 - w) * a[i] + w * c[i];
  }
  return out;
}

/// Interpolated trajectory θ^p_0..θ^p_{t_p} of one expert for one phase.
struct ShortcutTrajectory {
  std::size_t phase = 0;
  std::string expert_id;
  std::size_t endpoint = 0;
  BetaTable beta;
  std::vector<ParamVector> checkpoints;
};

inline ShortcutTrajectory build_shortcut(const TeacherTrajectory& traj, std::size_t endpoint, std::size_t phase = 0,
                                         DegeneratePolicy policy = DegeneratePolicy::uniform_fallback) {
  ShortcutTrajectory sc{phase, traj.expert_id, endpoint, compute_beta(traj, endpoint, phase, policy), {}};
  const auto& first = traj.at(0);
  const auto& last = traj.at(endpoint);
  sc.checkpoints.reserve(endpoint + 1);
  sc.checkpoints.push_back(first);
  for (std::size_t t = 1; t < endpoint; ++t)
    sc.checkpoints.push_back(interpolate_layers(first, last, sc.beta, static_cast<double>(t)));
  sc.checkpoints.push_back(last);
  return sc;
}

/// Shortcut parameters at real t: β is interpolated linearly between integer
/// epochs, then the per-layer convex combination is applied.
inline ParamVector query_shortcut(const ShortcutTrajectory& sc, double t) {
  if (!(t >= 0.0 && t <= static_cast<double>(sc.endpoint))) throw InvalidArgument("shortcut query outside [0, t_p]");
  if (t == std::floor(t)) return sc.checkpoints.at(static_cast<std::size_t>(t));
  return interpolate_layers(sc.checkpoints.front(), sc.checkpoints.back(), sc.beta, t);
}

enum class PathKind : std::uint8_t { original = 0, shortcut = 1 };

inline const char* to_string(PathKind k) { return k == PathKind::original ? "original" : "shortcut"; }
inline PathKind parse_path_kind(const std::string& s) {
  if (s == "original") return PathKind::original;
  if (s == "shortcut") return PathKind::shortcut;
  throw InvalidArgument("unknown trajectory kind '" + s + "'");
}

/// The teacher path a student is matched against: either an expert's raw
/// checkpoints or one of its shortcut trajectories. Integer epochs return
/// stored checkpoints; fractional epochs interpolate.
class MatchingPath {
 public:
  static MatchingPath original(const TeacherTrajectory& traj) {
    MatchingPath m;
    m.kind_ = PathKind::original;
    for (const auto& c : traj.checkpoints) m.knots_.push_back(c.params);
    return m;
  }

  static MatchingPath shortcut(ShortcutTrajectory sc) {
    MatchingPath m;
    m.kind_ = PathKind::shortcut;
    m.knots_ = sc.checkpoints;
    m.shortcut_ = std::move(sc);
    return m;
  }

  PathKind kind() const noexcept { return kind_; }
  std::size_t horizon() const noexcept { return knots_.empty() ? 0 : knots_.size() - 1; }
  const ParamVector& knot(std::size_t t) const { return knots_.at(t); }

  ParamVector at(double t) const {
    if (!(t >= 0.0 && t <= static_cast<double>(horizon()))) throw InvalidArgument("path query outside its horizon");
    if (kind_ == PathKind::shortcut) return query_shortcut(shortcut_, t);
    const auto k = static_cast<std::size_t>(std::floor(t));
    const double f = t - static_cast<double>(k);
    if (f == 0.0) return knots_[k];
    ParamVector out = knots_[k];
    const auto a = knots_[k].values();
    const auto b = knots_[k + 1].values();
    auto o = out.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = (1.0 - f) * a[i] + f * b[i];
    return out;
  }

 private:
  PathKind kind_ = PathKind::original;
  std::vector<ParamVector> knots_;
  ShortcutTrajectory shortcut_;
};

// ---------------------------------------------------------------------------
// Persistence

inline std::string encode_trajectory(const TeacherTrajectory& t) {
  t.validate();
  Writer w(RecordKind::trajectory);
  w.text(t.expert_id);
  w.u32(static_cast<std::uint32_t>(t.meta.hidden));
  w.u32(static_cast<std::uint32_t>(t.meta.embed));
  w.u32(static_cast<std::uint32_t>(t.meta.epochs));
  w.u32(static_cast<std::uint32_t>(t.meta.batch_size));
  w.f64(t.meta.lr_img);
  w.f64(t.meta.lr_txt);
  w.f64(t.meta.momentum);
  w.f64(t.meta.weight_decay);
  w.f64(t.meta.temperature);
  w.u64(t.meta.seed);
  w.u32(static_cast<std::uint32_t>(t.checkpoints.size()));
  for (const auto& c : t.checkpoints) {
    if (!c.params.finite()) throw InvalidArgument("trajectory holds non-finite values");
    w.u32(static_cast<std::uint32_t>(c.epoch));
    put_params(w, c.params);
  }
  return w.bytes();
}

inline TeacherTrajectory decode_trajectory(std::string bytes) {
  Reader r(std::move(bytes), RecordKind::trajectory);
  TeacherTrajectory t;
  t.expert_id = r.text();
  t.meta.hidden = r.u32();
  t.meta.embed = r.u32();
  t.meta.epochs = r.u32();
  t.meta.batch_size = r.u32();
  t.meta.lr_img = r.f64();
  t.meta.lr_txt = r.f64();
  t.meta.momentum = r.f64();
  t.meta.weight_decay = r.f64();
  t.meta.temperature = r.f64();
  t.meta.seed = r.u64();
  const auto at_count = r.offset();
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    Checkpoint c;
    c.epoch = r.u32();
    c.params = get_params(r);
    t.checkpoints.push_back(std::move(c));
  }
  r.finish();
  if (count != t.meta.epochs + 1) throw FormatError("checkpoint count does not match n + 1", at_count);
  try {
    t.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(e.what(), at_count);
  }
  return t;
}

inline void save_trajectory(const std::filesystem::path& path, const TeacherTrajectory& t) {
  write_file(path, encode_trajectory(t));
}
inline TeacherTrajectory load_trajectory(const std::filesystem::path& path) {
  return decode_trajectory(read_file(path));
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

/// Writes buffer/expert_{k}.ptms plus manifest.json.
inline void save_buffer(const std::filesystem::path& dir, const std::vector<TeacherTrajectory>& experts) {
  if (experts.empty()) throw InvalidArgument("an expert buffer needs at least one trajectory");
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["experts"] = nlohmann::ordered_json::array();
  const auto& ref = experts.front().at(0);
  for (std::size_t k = 0; k < experts.size(); ++k) {
    if (!experts[k].at(0).compatible(ref)) throw InvalidArgument("experts have differing schemas");
    const auto file = "expert_" + std::to_string(k) + ".ptms";
    save_trajectory(dir / file, experts[k]);
    manifest["experts"].push_back({{"id", experts[k].expert_id}, {"file", file}});
  }
  manifest["n"] = experts.front().epochs();
  manifest["schema_hash"] = hex64(ref.schema_hash());
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

inline std::vector<TeacherTrajectory> load_buffer(const std::filesystem::path& dir) {
  const auto manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
  std::vector<TeacherTrajectory> out;
  for (const auto& e : manifest.at("experts")) out.push_back(load_trajectory(dir / e.at("file").get<std::string>()));
  if (out.empty()) throw Error("expert buffer '" + dir.string() + "' is empty");
  const auto hash = manifest.at("schema_hash").get<std::string>();
  for (const auto& t : out) {
    if (hex64(t.at(0).schema_hash()) != hash) throw Error("expert schema does not match buffer manifest");
    if (t.epochs() != manifest.at("n").get<std::size_t>()) throw Error("expert epoch count does not match manifest");
  }
  return out;
}

}  // namespace ptmst

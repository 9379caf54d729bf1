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

#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ptmst/data.hpp"
#include "ptmst/errors.hpp"
#include "ptmst/eval.hpp"
#include "ptmst/model.hpp"
#include "ptmst/plan.hpp"
#include "ptmst/trajectory.hpp"

namespace ptmst {

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace detail

/// Flat `key = value` text, one entry per line, `#` starts a comment.
/// Every lookup marks its key as used so that `require_all_used` can reject
/// unknown keys once a command has read everything it understands.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& text) {
    KeyValueConfig c;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError("line " + std::to_string(lineno) + ": expected key = value", line);
      const auto key = detail::trim(line.substr(0, eq));
      const auto value = detail::trim(line.substr(eq + 1));
      if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key", key);
      if (!c.values_.emplace(key, value).second) throw ConfigError("duplicate key '" + key + "'", key);
    }
    return c;
  }

  static KeyValueConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path, "");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  const std::string& raw(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing required key '" + key + "'", key);
    used_.insert(key);
    return it->second;
  }

  std::string text(const std::string& key) const { return raw(key); }
  std::string text(const std::string& key, const std::string& fallback) const {
    return has(key) ? raw(key) : fallback;
  }

  double number(const std::string& key) const { return to_double(key, raw(key)); }
  double number(const std::string& key, double fallback) const { return has(key) ? number(key) : fallback; }

  std::uint64_t integer(const std::string& key) const { return to_u64(key, raw(key)); }
  std::uint64_t integer(const std::string& key, std::uint64_t fallback) const {
    return has(key) ? integer(key) : fallback;
  }

  std::size_t count(const std::string& key, std::size_t fallback) const {
    return has(key) ? static_cast<std::size_t>(integer(key)) : fallback;
  }

  /// Comma-separated list; an item of the form `v*k` stands for k copies of v.
  std::vector<std::string> list(const std::string& key) const {
    std::vector<std::string> out;
    std::istringstream in(raw(key));
    std::string item;
    while (std::getline(in, item, ',')) {
      item = detail::trim(item);
      if (item.empty()) throw ConfigError("empty list item in '" + key + "'", key);
      if (const auto star = item.find('*'); star != std::string::npos) {
        const auto reps = to_u64(key, detail::trim(item.substr(star + 1)));
        if (reps == 0) throw ConfigError("zero repetition in '" + key + "'", key);
        out.insert(out.end(), reps, detail::trim(item.substr(0, star)));
      } else {
        out.push_back(item);
      }
    }
    return out;
  }

  /// `list(key)` broadcast to `n` entries: a single value repeats, otherwise
  /// the length must equal `n`.
  std::vector<std::string> per_phase(const std::string& key, std::size_t n) const {
    auto v = list(key);
    if (v.size() == 1) return std::vector<std::string>(n, v.front());
    if (v.size() != n)
      throw ConfigError("'" + key + "' lists " + std::to_string(v.size()) + " values for " + std::to_string(n) +
                            " phases",
                        key);
    return v;
  }

  void require_all_used() const {
    for (const auto& [k, v] : values_)
      if (!used_.count(k)) throw ConfigError("unknown config key '" + k + "'", k);
  }

  static double to_double(const std::string& key, const std::string& s) {
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE || !std::isfinite(v))
      throw ConfigError("'" + key + "' expects a number, got '" + s + "'", key);
    return v;
  }

  static std::uint64_t to_u64(const std::string& key, const std::string& s) {
    errno = 0;
    char* end = nullptr;
    if (s.empty() || s.front() == '-') throw ConfigError("'" + key + "' expects a non-negative integer", key);
    const auto v = std::strtoull(s.c_str(), &end, 10);
    if (end != s.c_str() + s.size() || errno == ERANGE)
      throw ConfigError("'" + key + "' expects a non-negative integer, got '" + s + "'", key);
    return v;
  }

 private:
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

// ---------------------------------------------------------------------------
// Typed readers. Each rethrows semantic failures as ConfigError naming the key.

inline GeneratorConfig read_generator_config(const KeyValueConfig& c) {
  GeneratorConfig g;
  g.seed = c.integer("seed");
  g.num_pairs = c.count("num_pairs", g.num_pairs);
  g.dim_img = c.count("dim_img", g.dim_img);
  g.dim_txt = c.count("dim_txt", g.dim_txt);
  g.latent_dim = c.count("latent_dim", g.latent_dim);
  g.classes = c.count("classes", g.classes);
  g.noise_sd = c.number("noise_sd", g.noise_sd);
  g.within_class_sd = c.number("within_class_sd", g.within_class_sd);
  if (c.has("split")) {
    try {
      g.split = parse_split(c.text("split"));
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what(), "split");
    }
  }
  return g;
}

inline std::string render(const GeneratorConfig& g) {
  std::ostringstream o;
  o.precision(17);
  o << "seed = " << g.seed << "\nnum_pairs = " << g.num_pairs << "\ndim_img = " << g.dim_img
    << "\ndim_txt = " << g.dim_txt << "\nlatent_dim = " << g.latent_dim << "\nclasses = " << g.classes
    << "\nnoise_sd = " << g.noise_sd << "\nwithin_class_sd = " << g.within_class_sd
    << "\nsplit = " << to_string(g.split) << "\n";
  return o.str();
}

inline TeacherConfig read_teacher_config(const KeyValueConfig& c) {
  TeacherConfig t;
  t.seed = c.integer("seed", t.seed);
  t.hidden = c.count("hidden", t.hidden);
  t.embed = c.count("embed", t.embed);
  t.epochs = c.count("epochs", t.epochs);
  t.batch_size = c.count("batch_size", t.batch_size);
  t.lr_img = c.number("lr_img", t.lr_img);
  t.lr_txt = c.number("lr_txt", t.lr_txt);
  t.momentum = c.number("momentum", t.momentum);
  t.weight_decay = c.number("weight_decay", t.weight_decay);
  t.temperature = c.number("temperature", t.temperature);
  if (t.epochs < 1) throw ConfigError("epochs must be at least 1", "epochs");
  if (t.batch_size < 2) throw ConfigError("batch_size must be at least 2", "batch_size");
  return t;
}

inline std::string render(const TeacherConfig& t) {
  std::ostringstream o;
  o.precision(17);
  o << "seed = " << t.seed << "\nhidden = " << t.hidden << "\nembed = " << t.embed << "\nepochs = " << t.epochs
    << "\nbatch_size = " << t.batch_size << "\nlr_img = " << t.lr_img << "\nlr_txt = " << t.lr_txt
    << "\nmomentum = " << t.momentum << "\nweight_decay = " << t.weight_decay
    << "\ntemperature = " << t.temperature << "\n";
  return o.str();
}

/// Reads a multi-phase distillation plan. `subset_num` fixes P; per-phase
/// keys take either one value (shared) or P comma-separated values.
inline DistillPlan read_distill_plan(const KeyValueConfig& c) {
  DistillPlan plan;
  const auto p = static_cast<std::size_t>(c.integer("subset_num"));
  if (p < 1) throw ConfigError("subset_num must be at least 1", "subset_num");
  plan.phases.assign(p, PhaseConfig{});

  auto each_count = [&](const std::string& key, std::size_t PhaseConfig::*field) {
    if (!c.has(key)) return;
    const auto v = c.per_phase(key, p);
    for (std::size_t i = 0; i < p; ++i)
      plan.phases[i].*field = static_cast<std::size_t>(KeyValueConfig::to_u64(key, v[i]));
  };
  auto each_number = [&](const std::string& key, double PhaseConfig::*field) {
    if (!c.has(key)) return;
    const auto v = c.per_phase(key, p);
    for (std::size_t i = 0; i < p; ++i) plan.phases[i].*field = KeyValueConfig::to_double(key, v[i]);
  };

  each_count("num_queries", &PhaseConfig::num_queries);
  each_count("iteration", &PhaseConfig::iterations);
  each_count("min_start_epoch", &PhaseConfig::min_start_epoch);
  each_count("max_start_epoch", &PhaseConfig::max_start_epoch);
  each_count("interpolation_endpoints", &PhaseConfig::interpolation_endpoint);
  each_count("syn_steps", &PhaseConfig::syn_steps);
  each_count("expert_epochs", &PhaseConfig::expert_epochs);
  each_count("mini_batch_size", &PhaseConfig::mini_batch_size);
  each_number("lr_img", &PhaseConfig::lr_img);
  each_number("lr_txt", &PhaseConfig::lr_txt);
  each_number("lr_sim", &PhaseConfig::lr_sim);
  each_number("lr_lr", &PhaseConfig::lr_lr);
  each_number("lr_teacher_img", &PhaseConfig::lr_teacher_img);
  each_number("lr_teacher_txt", &PhaseConfig::lr_teacher_txt);
  if (c.has("alpha") && c.has("ema_decay")) throw ConfigError("give either alpha or ema_decay, not both", "alpha");
  each_number("alpha", &PhaseConfig::ema_decay);
  each_number("ema_decay", &PhaseConfig::ema_decay);

  try {
    if (c.has("loss_type")) {
      const auto v = c.per_phase("loss_type", p);
      for (std::size_t i = 0; i < p; ++i) plan.phases[i].loss_type = parse_loss_kind(v[i]);
    }
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what(), "loss_type");
  }
  try {
    if (c.has("sim_type")) plan.sim_type = parse_sim_type(detail::lower(c.text("sim_type")));
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what(), "sim_type");
  }
  try {
    if (c.has("trajectory")) plan.trajectory = parse_path_kind(c.text("trajectory"));
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what(), "trajectory");
  }
  plan.sim_rank = c.count("sim_rank", plan.sim_rank);
  plan.sim_alpha = c.number("sim_alpha", plan.sim_alpha);
  plan.master_seed = c.integer("seed", plan.master_seed);
  plan.buffer_path = c.text("buffer", plan.buffer_path);
  plan.clip_factor = c.number("clip_factor", plan.clip_factor);
  plan.loss.wbce_temperature = c.number("wbce_temperature", plan.loss.wbce_temperature);
  plan.loss.threshold = c.number("wbce_threshold", plan.loss.threshold);
  plan.loss.infonce_temperature = c.number("infonce_temperature", plan.loss.infonce_temperature);
  plan.loss.kind = plan.phases.front().loss_type;
  if (plan.sim_type == SimType::lowrank && plan.sim_rank < 1) throw ConfigError("sim_rank must be positive", "sim_rank");
  return plan;
}

namespace detail {

template <class F>
std::string join_phases(const DistillPlan& plan, F f) {
  std::ostringstream o;
  o.precision(17);
  for (std::size_t i = 0; i < plan.phases.size(); ++i) o << (i ? ", " : "") << f(plan.phases[i]);
  return o.str();
}

}  // namespace detail

inline std::string render(const DistillPlan& plan) {
  using detail::join_phases;
  std::ostringstream o;
  o.precision(17);
  o << "subset_num = " << plan.phases.size() << "\n";
  o << "num_queries = " << join_phases(plan, [](const PhaseConfig& p) { return p.num_queries; }) << "\n";
  o << "iteration = " << join_phases(plan, [](const PhaseConfig& p) { return p.iterations; }) << "\n";
  o << "min_start_epoch = " << join_phases(plan, [](const PhaseConfig& p) { return p.min_start_epoch; }) << "\n";
  o << "max_start_epoch = " << join_phases(plan, [](const PhaseConfig& p) { return p.max_start_epoch; }) << "\n";
  o << "interpolation_endpoints = "
    << join_phases(plan, [](const PhaseConfig& p) { return p.interpolation_endpoint; }) << "\n";
  o << "syn_steps = " << join_phases(plan, [](const PhaseConfig& p) { return p.syn_steps; }) << "\n";
  o << "expert_epochs = " << join_phases(plan, [](const PhaseConfig& p) { return p.expert_epochs; }) << "\n";
  o << "mini_batch_size = " << join_phases(plan, [](const PhaseConfig& p) { return p.mini_batch_size; }) << "\n";
  o << "ema_decay = " << join_phases(plan, [](const PhaseConfig& p) { return p.ema_decay; }) << "\n";
  o << "lr_img = " << join_phases(plan, [](const PhaseConfig& p) { return p.lr_img; }) << "\n";
  o << "lr_txt = " << join_phases(plan, [](const PhaseConfig& p) { return p.lr_txt; }) << "\n";
  o << "lr_sim = " << join_phases(plan, [](const PhaseConfig& p) { return p.lr_sim; }) << "\n";
  o << "lr_lr = " << join_phases(plan, [](const PhaseConfig& p) { return p.lr_lr; }) << "\n";
  o << "lr_teacher_img = " << join_phases(plan, [](const PhaseConfig& p) { return p.lr_teacher_img; }) << "\n";
  o << "lr_teacher_txt = " << join_phases(plan, [](const PhaseConfig& p) { return p.lr_teacher_txt; }) << "\n";
  o << "loss_type = " << join_phases(plan, [](const PhaseConfig& p) { return to_string(p.loss_type); }) << "\n";
  o << "sim_type = " << to_string(plan.sim_type) << "\nsim_rank = " << plan.sim_rank
    << "\nsim_alpha = " << plan.sim_alpha << "\ntrajectory = " << to_string(plan.trajectory)
    << "\nseed = " << plan.master_seed << "\nbuffer = " << plan.buffer_path << "\nclip_factor = " << plan.clip_factor
    << "\nwbce_temperature = " << plan.loss.wbce_temperature << "\nwbce_threshold = " << plan.loss.threshold
    << "\ninfonce_temperature = " << plan.loss.infonce_temperature << "\n";
  return o.str();
}

inline EvalConfig read_eval_config(const KeyValueConfig& c) {
  EvalConfig e;
  e.epochs = c.count("epochs", e.epochs);
  e.batch_size = c.count("batch_size", e.batch_size);
  e.lr_img = c.number("lr_img", e.lr_img);
  e.lr_txt = c.number("lr_txt", e.lr_txt);
  e.momentum = c.number("momentum", e.momentum);
  e.weight_decay = c.number("weight_decay", e.weight_decay);
  e.hidden = c.count("hidden", e.hidden);
  e.embed = c.count("embed", e.embed);
  e.loss.wbce_temperature = c.number("wbce_temperature", e.loss.wbce_temperature);
  e.loss.threshold = c.number("wbce_threshold", e.loss.threshold);
  if (c.has("ks")) {
    e.ks.clear();
    for (const auto& s : c.list("ks")) e.ks.push_back(static_cast<std::size_t>(KeyValueConfig::to_u64("ks", s)));
  }
  try {
    e.validate();
  } catch (const InvalidArgument& err) {
    throw ConfigError(err.what(), "");
  }
  return e;
}

inline std::string render(const EvalConfig& e) {
  std::ostringstream o;
  o.precision(17);
  o << "epochs = " << e.epochs << "\nbatch_size = " << e.batch_size << "\nlr_img = " << e.lr_img
    << "\nlr_txt = " << e.lr_txt << "\nmomentum = " << e.momentum << "\nweight_decay = " << e.weight_decay
    << "\nhidden = " << e.hidden << "\nembed = " << e.embed << "\nwbce_temperature = " << e.loss.wbce_temperature
    << "\nwbce_threshold = " << e.loss.threshold << "\nks = ";
  for (std::size_t i = 0; i < e.ks.size(); ++i) o << (i ? ", " : "") << e.ks[i];
  o << "\n";
  return o.str();
}

}  // namespace ptmst

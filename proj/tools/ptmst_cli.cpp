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

// Command-line driver: gen-data, train-teacher, distill, eval, analyze.
//
// Exit codes: 0 ok, 2 configuration, 3 teacher training, 4 distillation,
// 5 evaluation, 1 anything else.

#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ptmst/ptmst.hpp"

namespace fs = std::filesystem;
using namespace ptmst;

namespace {

enum Exit : int { kOk = 0, kOther = 1, kConfig = 2, kTraining = 3, kDistill = 4, kEval = 5 };

/// Failure already mapped to an exit code.
struct CommandFailure : std::runtime_error {
  CommandFailure(int code, const std::string& what) : std::runtime_error(what), code(code) {}
  int code;
};

fs::path default_root() {
  const char* env = std::getenv("PTMS_DATA_DIR");
  return env && *env ? fs::path(env) : fs::path(".");
}

fs::path resolve_out(const std::string& given, const std::string& fallback) {
  return given.empty() ? default_root() / fallback : fs::path(given);
}

void print_effective(const std::string& command, const std::string& body) {
  std::cerr << "# effective " << command << " config\n" << body << std::flush;
}

std::vector<double> parse_reals(const std::string& key, const std::string& text) {
  KeyValueConfig c;
  c.set(key, text);
  std::vector<double> out;
  for (const auto& s : c.list(key)) out.push_back(KeyValueConfig::to_double(key, s));
  return out;
}

template <class T>
std::string joined(const std::vector<T>& v) {
  std::ostringstream o;
  o.precision(17);
  for (std::size_t i = 0; i < v.size(); ++i) o << (i ? "," : "") << v[i];
  return o.str();
}

std::ofstream open_csv(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(17);
  return out;
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string config;
  std::string out;
};

int run_gen_data(const GenDataArgs& a) {
  const auto kv = KeyValueConfig::load(a.config);
  const auto cfg = read_generator_config(kv);
  kv.require_all_used();
  try {
    validate(cfg);
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what(), "");
  }
  print_effective("gen-data", render(cfg));
  const auto out = resolve_out(a.out, std::string("pairs_") + to_string(cfg.split) + ".ptms");
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_dataset(out, generate_pair_dataset(cfg));
  nlohmann::ordered_json stamp;
  stamp["file"] = out.filename().string();
  stamp["seed"] = cfg.seed;
  stamp["generator"] = {{"num_pairs", cfg.num_pairs},   {"dim_img", cfg.dim_img},
                        {"dim_txt", cfg.dim_txt},       {"latent_dim", cfg.latent_dim},
                        {"classes", cfg.classes},       {"noise_sd", cfg.noise_sd},
                        {"within_class_sd", cfg.within_class_sd}, {"split", to_string(cfg.split)}};
  write_file(fs::path(out.string() + ".json"), stamp.dump(2) + "\n");
  std::cerr << "wrote " << out << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct TeacherArgs {
  std::string data;
  std::string config;
  std::string out;
  std::size_t experts = 1;
  std::size_t jobs = 1;
  bool verify = false;
};

bool stationary(const TeacherTrajectory& t) {
  for (const auto& c : t.checkpoints)
    if (!(c.params == t.checkpoints.front().params)) return false;
  return true;
}

int run_train_teacher(const TeacherArgs& a) {
  TeacherConfig cfg;
  if (!a.config.empty()) {
    const auto kv = KeyValueConfig::load(a.config);
    cfg = read_teacher_config(kv);
    kv.require_all_used();
  }
  if (a.experts < 1) throw ConfigError("--experts must be at least 1", "experts");
  print_effective("train-teacher", render(cfg) + "experts = " + std::to_string(a.experts) + "\n");
  const auto real = load_dataset(a.data);
  const auto out = resolve_out(a.out, "buffer");

  auto train_one = [&](std::size_t k) {
    TeacherConfig c = cfg;
    c.seed = derive_seed(cfg.seed, "expert", k);
    try {
      return train_teacher(real, c, std::to_string(k));
    } catch (const Error& e) {
      throw CommandFailure(kTraining, "expert " + std::to_string(k) + ": " + e.what());
    }
  };
  std::vector<TeacherTrajectory> experts(a.experts);
  const std::size_t jobs = std::max<std::size_t>(a.jobs, 1);
  for (std::size_t base = 0; base < a.experts; base += jobs) {
    std::vector<std::future<TeacherTrajectory>> running;
    for (std::size_t k = base; k < std::min(base + jobs, a.experts); ++k)
      running.push_back(std::async(jobs > 1 ? std::launch::async : std::launch::deferred, train_one, k));
    for (std::size_t i = 0; i < running.size(); ++i) experts[base + i] = running[i].get();
  }
  save_buffer(out, experts);

  if (a.verify) {
    const auto back = load_buffer(out);
    for (std::size_t k = 0; k < experts.size(); ++k) {
      if (encode_trajectory(back[k]) != encode_trajectory(experts[k]))
        throw CommandFailure(kTraining, "expert " + std::to_string(k) + ": buffer does not round-trip");
      const bool still = stationary(back[k]);
      std::cerr << "verify expert " << k << ": round-trip ok, checkpoints "
                << (still ? "all equal" : "moving") << "\n";
      if (cfg.lr_img == 0.0 && cfg.lr_txt == 0.0 && !still)
        throw CommandFailure(kTraining, "expert " + std::to_string(k) + ": zero learning rate but checkpoints differ");
    }
  }
  std::cerr << "wrote " << experts.size() << " experts to " << out << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct DistillArgs {
  std::string buffer;
  std::string plan;
  std::string data;
  std::string out;
};

int run_distill(const DistillArgs& a) {
  const auto kv = KeyValueConfig::load(a.plan);
  auto plan = read_distill_plan(kv);
  kv.require_all_used();
  if (!a.buffer.empty()) plan.buffer_path = a.buffer;
  if (plan.buffer_path.empty()) throw ConfigError("no expert buffer given (--buffer or 'buffer')", "buffer");
  print_effective("distill", render(plan));

  const auto real = load_dataset(a.data);
  const auto buffer = load_buffer(plan.buffer_path);
  try {
    plan.validate(buffer.front().epochs(), real.size());
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what(), "");
  }
  const auto out = resolve_out(a.out, "distilled");
  fs::create_directories(out);

  std::vector<PhaseResult> results;
  try {
    results = distill_all(real, plan, buffer);
  } catch (const Error& e) {
    throw CommandFailure(kDistill, e.what());
  }

  auto log = open_csv(out / "distill_log.csv");
  log << "phase,iteration,expert,start_epoch,loss,grad_norm\n";
  nlohmann::ordered_json manifest;
  manifest["seed"] = plan.master_seed;
  manifest["trajectory"] = to_string(plan.trajectory);
  manifest["plan"] = render(plan);
  manifest["subsets"] = nlohmann::ordered_json::array();
  for (std::size_t p = 0; p < results.size(); ++p) {
    for (const auto& r : results[p].log) {
      if (!std::isfinite(r.loss)) throw CommandFailure(kDistill, "phase " + std::to_string(p) + ": non-finite loss");
      log << r.phase << ',' << r.iteration << ',' << r.expert << ',' << r.start_epoch << ',' << r.loss << ','
          << r.grad_norm << '\n';
    }
    const auto file = "phase_" + std::to_string(p) + ".ptms";
    save_synthetic(out / file, results[p].distilled);
    manifest["subsets"].push_back({{"phase", p}, {"file", file}, {"pairs", results[p].distilled.size()}});
  }
  write_file(out / "plan_manifest.json", manifest.dump(2) + "\n");
  std::cerr << "wrote " << results.size() << " subsets to " << out << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string subsets;
  std::string coreset;
  std::string data;
  std::string test;
  std::string buffer;
  std::string config;
  std::string out;
  std::size_t seeds = 1;
  std::size_t count = 20;
  std::uint64_t seed = 0;
};

std::vector<StudentSubset> load_manifest_subsets(const fs::path& manifest_path) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(manifest_path));
  } catch (const std::exception& e) {
    throw CommandFailure(kEval, std::string("cannot read subset manifest: ") + e.what());
  }
  std::vector<StudentSubset> out;
  for (const auto& s : manifest.at("subsets")) {
    const auto file = manifest_path.parent_path() / s.at("file").get<std::string>();
    if (!fs::exists(file)) throw CommandFailure(kEval, "missing subset " + file.string());
    out.push_back(StudentSubset::from_synthetic(load_synthetic(file)));
  }
  if (out.empty()) throw CommandFailure(kEval, "subset manifest lists no subsets");
  return out;
}

std::vector<std::size_t> pick_coreset(const std::string& kind, const PairDataset& real, std::size_t count,
                                      const std::string& buffer, std::uint64_t seed) {
  if (kind == "random") return coreset_random(real.size(), count, seed);
  if (buffer.empty()) throw ConfigError(kind + " coresets need --buffer for teacher embeddings", "buffer");
  const auto teacher = load_buffer(buffer).front();
  const auto& final_params = teacher.at(teacher.epochs());
  if (kind == "herding") return coreset_herding(real, count, final_params);
  return coreset_kcenter(real, count, final_params, seed);
}

int run_eval(const EvalArgs& a) {
  EvalConfig cfg;
  if (!a.config.empty()) {
    const auto kv = KeyValueConfig::load(a.config);
    cfg = read_eval_config(kv);
    kv.require_all_used();
  }
  if (a.seeds < 1) throw ConfigError("--seeds must be at least 1", "seeds");
  std::string source = a.subsets.empty() ? "coreset = " + a.coreset + "\ncount = " + std::to_string(a.count)
                                         : "subsets = " + a.subsets;
  print_effective("eval", render(cfg) + source + "\nseeds = " + std::to_string(a.seeds) +
                              "\nseed = " + std::to_string(a.seed) + "\n");

  const auto test = load_dataset(a.test);
  std::vector<StudentSubset> fixed;
  PairDataset real;
  if (!a.subsets.empty()) {
    fixed = load_manifest_subsets(a.subsets);
  } else {
    if (a.data.empty()) throw ConfigError("coreset evaluation needs --data", "data");
    real = load_dataset(a.data);
  }

  const auto out = resolve_out(a.out, "eval");
  fs::create_directories(out);
  std::ofstream jsonl(out / "reports.jsonl");
  if (!jsonl) throw Error("cannot write reports.jsonl");
  std::vector<RetrievalReport> reports;
  for (std::size_t s = 0; s < a.seeds; ++s) {
    const auto run_seed = derive_seed(a.seed, "eval/run", s);
    auto subsets = fixed;
    if (subsets.empty()) {
      try {
        subsets.push_back(StudentSubset::from_pairs(real.subset(pick_coreset(a.coreset, real, a.count, a.buffer, run_seed))));
      } catch (const CapacityError& e) {
        throw ConfigError(e.what(), "count");
      }
    }
    try {
      reports.push_back(train_student_progressive(subsets, cfg, test, run_seed));
    } catch (const Error& e) {
      throw CommandFailure(kEval, e.what());
    }
    nlohmann::ordered_json row;
    row["seed"] = s;
    row["run_seed"] = run_seed;
    row["source"] = a.subsets.empty() ? a.coreset : "distilled";
    row["report"] = reports.back().to_json();
    row["mean"] = reports.back().mean();
    jsonl << row.dump() << "\n";
  }

  auto agg = open_csv(out / "aggregate.csv");
  agg << "metric,mean,std\n";
  auto emit = [&](const std::string& name, auto pick) {
    double m = 0.0;
    for (const auto& r : reports) m += pick(r);
    m /= static_cast<double>(reports.size());
    double v = 0.0;
    for (const auto& r : reports) v += (pick(r) - m) * (pick(r) - m);
    const double sd = reports.size() > 1 ? std::sqrt(v / static_cast<double>(reports.size() - 1)) : 0.0;
    agg << name << ',' << m << ',' << sd << '\n';
  };
  for (std::size_t i = 0; i < cfg.ks.size(); ++i) {
    emit("IR@" + std::to_string(cfg.ks[i]), [i](const RetrievalReport& r) { return r.image_recall[i]; });
    emit("TR@" + std::to_string(cfg.ks[i]), [i](const RetrievalReport& r) { return r.text_recall[i]; });
  }
  emit("mean", [](const RetrievalReport& r) { return r.mean(); });
  std::cerr << "wrote " << reports.size() << " reports to " << out << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct AnalyzeArgs {
  std::string mode;
  std::string buffer;
  std::string synthetic;
  std::string trajectory = "shortcut";
  std::string out;
  std::size_t expert = 0;
  std::size_t endpoint = 0;  // 0: full trajectory length
  std::string starts = "0,1,2,3,4";
  double base = 0.0;
  std::string dts = "0.0625,0.125,0.25,0.5";
  std::size_t expert_epochs = 1;
  std::size_t syn_steps = 8;
  std::size_t mini_batch = 10;
  std::size_t components = 2;
  std::uint64_t seed = 0;
  bool full_probe = false;
};

void write_analysis(const AnalyzeArgs& a, const MatchingPath& path, const SyntheticDataset& syn,
                    const ProbeSettings& ps, const fs::path& out);

int run_analyze(const AnalyzeArgs& a) {
  const auto buffer = load_buffer(a.buffer);
  if (a.expert >= buffer.size()) throw ConfigError("--expert is out of range", "expert");
  const auto& traj = buffer[a.expert];
  const auto syn = load_synthetic(a.synthetic);
  PathKind kind;
  try {
    kind = parse_path_kind(a.trajectory);
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what(), "trajectory");
  }
  const std::size_t endpoint = a.endpoint ? a.endpoint : traj.epochs();
  if (endpoint > traj.epochs()) throw ConfigError("--endpoint exceeds the trajectory length", "endpoint");
  const auto path = kind == PathKind::shortcut ? MatchingPath::shortcut(build_shortcut(traj, endpoint))
                                               : MatchingPath::original(traj);

  ProbeSettings ps;
  ps.expert_epochs = a.expert_epochs;
  ps.unroll.steps = a.syn_steps;
  ps.unroll.mini_batch = a.mini_batch;
  ps.seed = a.seed;
  ps.probe = a.full_probe ? GradientProbe::full : GradientProbe::images;

  std::ostringstream eff;
  eff << "mode = " << a.mode << "\ntrajectory = " << to_string(kind) << "\nexpert = " << a.expert
      << "\nendpoint = " << endpoint << "\nexpert_epochs = " << a.expert_epochs << "\nsyn_steps = " << a.syn_steps
      << "\nmini_batch_size = " << a.mini_batch << "\nseed = " << a.seed
      << "\nprobe = " << (a.full_probe ? "full" : "images") << "\n";
  if (a.mode == "sweep") eff << "base = " << a.base << "\ndts = " << a.dts << "\n";
  else eff << "starts = " << a.starts << "\n";
  if (a.mode == "pca") eff << "components = " << a.components << "\n";
  print_effective("analyze", eff.str());

  const auto out = resolve_out(a.out, "analysis");
  fs::create_directories(out);
  try {
    write_analysis(a, path, syn, ps, out);
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what(), "");
  }
  std::cerr << "wrote " << a.mode << " output to " << out << "\n";
  return kOk;
}

void write_analysis(const AnalyzeArgs& a, const MatchingPath& path, const SyntheticDataset& syn,
                    const ProbeSettings& ps, const fs::path& out) {
  if (a.mode == "cosine") {
    const auto starts = parse_reals("starts", a.starts);
    const auto c = grad_cosine_matrix(path, syn, starts, ps);
    auto csv = open_csv(out / "cosine_matrix.csv");
    csv << "start";
    for (double s : starts) csv << ",T=" << s;
    csv << "\n";
    for (std::size_t i = 0; i < c.rows(); ++i) {
      csv << starts[i];
      for (std::size_t j = 0; j < c.cols(); ++j) csv << ',' << c(i, j);
      csv << '\n';
    }
    std::cerr << "mean off-diagonal cosine " << mean_off_diagonal(c) << "\n";
  } else if (a.mode == "sweep") {
    const auto r = proposition_sweep(path, syn, a.base, parse_reals("dts", a.dts), ps);
    auto csv = open_csv(out / "prop_sweep.csv");
    csv << "dt,grad_diff_norm\n";
    for (std::size_t i = 0; i < r.dts.size(); ++i) csv << r.dts[i] << ',' << r.diff_norms[i] << '\n';
    std::cerr << "log-log slope " << r.slope << "\n";
  } else {
    const auto starts = parse_reals("starts", a.starts);
    const auto r = pca_gradients(path, syn, starts, ps, a.components);
    auto csv = open_csv(out / "pca_grad.csv");
    csv << "start,norm";
    for (std::size_t c = 0; c < a.components; ++c) csv << ",pc" << (c + 1);
    csv << "\n";
    for (std::size_t i = 0; i < starts.size(); ++i) {
      csv << starts[i] << ',' << r.norms[i];
      for (std::size_t c = 0; c < a.components; ++c) {
        csv << ',';
        if (c < r.coords.cols()) csv << r.coords(i, c);
      }
      csv << '\n';
    }
    if (r.rank_deficient) std::cerr << "warning: only " << r.coords.cols() << " usable components\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Phased trajectory-matching distillation for paired retrieval data"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic paired dataset");
  gen_cmd->add_option("--config", gen.config, "Generator config (key = value)")->required();
  gen_cmd->add_option("--out", gen.out, "Output dataset file");

  TeacherArgs teach;
  auto* teach_cmd = app.add_subcommand("train-teacher", "Record expert trajectories");
  teach_cmd->add_option("--data", teach.data, "Training pairs")->required();
  teach_cmd->add_option("--config", teach.config, "Teacher config");
  teach_cmd->add_option("--experts", teach.experts, "Number of experts");
  teach_cmd->add_option("--out", teach.out, "Buffer directory");
  teach_cmd->add_option("--jobs", teach.jobs, "Experts trained concurrently");
  teach_cmd->add_flag("--verify", teach.verify, "Reload the buffer and check it");

  DistillArgs dist;
  auto* dist_cmd = app.add_subcommand("distill", "Run the phased distillation plan");
  dist_cmd->add_option("--buffer", dist.buffer, "Expert buffer directory");
  dist_cmd->add_option("--plan", dist.plan, "Distillation plan")->required();
  dist_cmd->add_option("--data", dist.data, "Real training pairs")->required();
  dist_cmd->add_option("--out", dist.out, "Output directory");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Train students and report retrieval recall");
  auto* subsets_opt = eval_cmd->add_option("--subsets", ev.subsets, "plan_manifest.json of distilled subsets");
  auto* coreset_opt = eval_cmd->add_option("--coreset", ev.coreset, "Coreset baseline")
                          ->check(CLI::IsMember({"random", "herding", "kcenter"}));
  subsets_opt->excludes(coreset_opt);
  eval_cmd->add_option("--data", ev.data, "Real pairs for coreset selection");
  eval_cmd->add_option("--test", ev.test, "Held-out test pairs")->required();
  eval_cmd->add_option("--buffer", ev.buffer, "Expert buffer for teacher embeddings");
  eval_cmd->add_option("--config", ev.config, "Student config");
  eval_cmd->add_option("--seeds", ev.seeds, "Number of student seeds");
  eval_cmd->add_option("--seed", ev.seed, "Master seed");
  eval_cmd->add_option("--count", ev.count, "Coreset size");
  eval_cmd->add_option("--out", ev.out, "Output directory");

  AnalyzeArgs an;
  auto* an_cmd = app.add_subcommand("analyze", "Meta-gradient diagnostics");
  an_cmd->add_option("--mode", an.mode, "cosine, sweep or pca")
      ->required()
      ->check(CLI::IsMember({"cosine", "sweep", "pca"}));
  an_cmd->add_option("--buffer", an.buffer, "Expert buffer directory")->required();
  an_cmd->add_option("--synthetic", an.synthetic, "Synthetic subset (.ptms)")->required();
  an_cmd->add_option("--trajectory", an.trajectory, "original or shortcut");
  an_cmd->add_option("--expert", an.expert, "Expert index");
  an_cmd->add_option("--endpoint", an.endpoint, "Shortcut endpoint epoch");
  an_cmd->add_option("--starts", an.starts, "Comma-separated start epochs");
  an_cmd->add_option("--base", an.base, "Sweep base start");
  an_cmd->add_option("--dts", an.dts, "Comma-separated sweep offsets");
  an_cmd->add_option("--expert-epochs", an.expert_epochs, "Matching length");
  an_cmd->add_option("--syn-steps", an.syn_steps, "Inner unroll steps");
  an_cmd->add_option("--mini-batch", an.mini_batch, "Inner mini-batch size");
  an_cmd->add_option("--components", an.components, "PCA components");
  an_cmd->add_option("--seed", an.seed, "Probe seed");
  an_cmd->add_flag("--full-probe", an.full_probe, "Probe every learnable block");
  an_cmd->add_option("--out", an.out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (gen_cmd->parsed()) return run_gen_data(gen);
    if (teach_cmd->parsed()) return run_train_teacher(teach);
    if (dist_cmd->parsed()) return run_distill(dist);
    if (eval_cmd->parsed()) {
      if (ev.subsets.empty() && ev.coreset.empty()) throw ConfigError("eval needs --subsets or --coreset", "subsets");
      return run_eval(ev);
    }
    return run_analyze(an);
  } catch (const CommandFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code;
  } catch (const ConfigError& e) {
    std::cerr << "config error";
    if (!e.key().empty()) std::cerr << " [" << e.key() << "]";
    std::cerr << ": " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
}

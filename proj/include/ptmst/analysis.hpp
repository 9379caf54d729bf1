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
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ptmst/distill.hpp"
#include "ptmst/errors.hpp"
#include "ptmst/trajectory.hpp"

namespace ptmst {

enum class GradientProbe { images, full };

/// Flattened meta-gradient used by the diagnostics: the image block only
/// (default) or every learnable block.
inline std::vector<double> probe_vector(const MetaGradient& g, GradientProbe probe) {
  std::vector<double> v(g.d_images.values().begin(), g.d_images.values().end());
  if (probe == GradientProbe::images) return v;
  v.insert(v.end(), g.d_texts.values().begin(), g.d_texts.values().end());
  if (g.d_sim.mode == SimType::full) {
    v.insert(v.end(), g.d_sim.dense.values().begin(), g.d_sim.dense.values().end());
  } else {
    v.push_back(g.d_sim.omega);
    v.insert(v.end(), g.d_sim.left.values().begin(), g.d_sim.left.values().end());
    v.insert(v.end(), g.d_sim.right.values().begin(), g.d_sim.right.values().end());
  }
  v.push_back(g.d_lr_img);
  v.push_back(g.d_lr_txt);
  return v;
}

struct ProbeSettings {
  std::size_t expert_epochs = 1;  // ΔT
  UnrollOptions unroll;
  std::uint64_t seed = 0;  // shared by every start, so all starts see the same batches
  GradientProbe probe = GradientProbe::images;
};

/// Meta-gradient probe at a real-valued start on `path`.
inline std::vector<double> probe_at(const MatchingPath& path, const SyntheticDataset& syn, double start,
                                    const ProbeSettings& ps) {
  const double end = start + static_cast<double>(ps.expert_epochs);
  if (start < 0.0 || end > static_cast<double>(path.horizon()))
    throw InvalidArgument("matching range exceeds the trajectory horizon");
  const auto mr = meta_gradient(syn, path.at(start), path.at(end), ps.unroll, ps.seed);
  return probe_vector(mr.grad, ps.probe);
}

/// Pairwise cosine similarity of meta-gradient probes at each start.
inline Matrix<> grad_cosine_matrix(const MatchingPath& path, const SyntheticDataset& syn,
                                   const std::vector<double>& starts, const ProbeSettings& ps) {
  std::vector<std::vector<double>> g;
  std::vector<double> norms;
  for (double s : starts) {
    g.push_back(probe_at(path, syn, s, ps));
    norms.push_back(norm2(g.back()));
    if (!(norms.back() > 0.0)) throw UndefinedCosine("zero meta-gradient at start " + std::to_string(s));
  }
  const std::size_t k = starts.size();
  Matrix<> c(k, k);
  for (std::size_t i = 0; i < k; ++i) {
    c(i, i) = 1.0;
    for (std::size_t j = i + 1; j < k; ++j) {
      const double v = std::clamp(dot(g[i], g[j]) / (norms[i] * norms[j]), -1.0, 1.0);
      c(i, j) = v;
      c(j, i) = v;
    }
  }
  return c;
}

inline double mean_off_diagonal(const Matrix<>& c) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < c.rows(); ++i)
    for (std::size_t j = 0; j < c.cols(); ++j)
      if (i != j) {
        s += c(i, j);
        ++n;
      }
  return n ? s / static_cast<double>(n) : 0.0;
}

struct SweepResult {
  std::vector<double> dts;
  std::vector<double> diff_norms;
  double slope = 0.0;  // least-squares slope of log diff vs log dt over dt > 0
};

/// Least-squares slope of log(y) against log(x), skipping nonpositive pairs.
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) continue;
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    ++n;
  }
  if (n < 2) throw InvalidArgument("slope fit needs at least two positive points");
  const double dn = static_cast<double>(n);
  return (dn * sxy - sx * sy) / (dn * sxx - sx * sx);
}

/// ‖∇L(T + Δt) − ∇L(T)‖ for every Δt, with the matching length ΔT held fixed.
inline SweepResult proposition_sweep(const MatchingPath& path, const SyntheticDataset& syn, double base_start,
                                     const std::vector<double>& dts, const ProbeSettings& ps) {
  for (double dt : dts)
    if (dt < 0.0 || base_start + dt + static_cast<double>(ps.expert_epochs) > static_cast<double>(path.horizon()))
      throw InvalidArgument("sweep step pushes the matching range past the trajectory horizon");
  const auto base = probe_at(path, syn, base_start, ps);
  SweepResult r;
  for (double dt : dts) {
    const auto g = dt == 0.0 ? base : probe_at(path, syn, base_start + dt, ps);
    double s = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) s += (g[i] - base[i]) * (g[i] - base[i]);
    r.dts.push_back(dt);
    r.diff_norms.push_back(std::sqrt(s));
  }
  std::size_t positive = 0;
  for (std::size_t i = 0; i < dts.size(); ++i) positive += dts[i] > 0.0 && r.diff_norms[i] > 0.0;
  r.slope = positive >= 2 ? loglog_slope(r.dts, r.diff_norms) : std::nan("");
  return r;
}

struct PcaResult {
  Matrix<> coords;           // samples × components
  std::vector<double> norms;  // raw norm of each input vector
  std::vector<double> eigenvalues;
  bool rank_deficient = false;  // fewer components than requested
};

/// Centers the vectors and projects them on the top principal components
/// using the eigendecomposition of the small Gram matrix. Each component's
/// sign is fixed so that its largest-magnitude coordinate is positive.
inline PcaResult pca_project(const std::vector<std::vector<double>>& vectors, std::size_t components) {
  const std::size_t k = vectors.size();
  if (k < 2) throw InvalidArgument("PCA needs at least two vectors");
  const std::size_t d = vectors.front().size();
  PcaResult r;
  Eigen::MatrixXd x(k, d);
  for (std::size_t i = 0; i < k; ++i) {
    if (vectors[i].size() != d) throw InvalidArgument("PCA vectors differ in length");
    r.norms.push_back(norm2(vectors[i]));
    for (std::size_t j = 0; j < d; ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = vectors[i][j];
  }
  x.rowwise() -= x.colwise().mean();
  const Eigen::MatrixXd gram = x * x.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
  const auto& vals = es.eigenvalues();  // ascending
  const auto& vecs = es.eigenvectors();
  const double top = std::max(vals(static_cast<Eigen::Index>(k - 1)), 0.0);
  const double tol = 1e-12 * std::max(top, 1e-300) * static_cast<double>(k);
  std::size_t usable = 0;
  for (std::size_t c = 0; c < std::min(components, k); ++c)
    if (vals(static_cast<Eigen::Index>(k - 1 - c)) > tol) ++usable;
  r.rank_deficient = usable < components;
  r.coords = Matrix<>(k, usable);
  for (std::size_t c = 0; c < usable; ++c) {
    const auto col = static_cast<Eigen::Index>(k - 1 - c);
    const double lambda = vals(col);
    r.eigenvalues.push_back(lambda);
    Eigen::VectorXd v = vecs.col(col);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    for (std::size_t i = 0; i < k; ++i) r.coords(i, c) = std::sqrt(lambda) * v(static_cast<Eigen::Index>(i));
  }
  return r;
}

inline PcaResult pca_gradients(const MatchingPath& path, const SyntheticDataset& syn, const std::vector<double>& starts,
                               const ProbeSettings& ps, std::size_t components = 2) {
  if (starts.size() < 2) throw InvalidArgument("PCA needs at least two starts");
  std::vector<std::vector<double>> g;
  for (double s : starts) g.push_back(probe_at(path, syn, s, ps));
  return pca_project(g, components);
}

}  // namespace ptmst

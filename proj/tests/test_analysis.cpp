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

#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "ptmst/ptmst.hpp"

using namespace ptmst;

namespace {

struct Setup {
  PairDataset real;
  TeacherTrajectory traj;
  SyntheticDataset syn;
};

Setup make_setup(std::uint64_t seed, std::size_t epochs = 6) {
  GeneratorConfig g;
  g.num_pairs = 120;
  g.dim_img = 8;
  g.dim_txt = 6;
  g.latent_dim = 4;
  g.classes = 10;
  g.seed = seed;
  Setup s;
  s.real = generate_pair_dataset(g);
  TeacherConfig tc;
  tc.hidden = 8;
  tc.embed = 4;
  tc.epochs = epochs;
  tc.batch_size = 20;
  tc.seed = derive_seed(seed, "expert", 0);
  s.traj = train_teacher(s.real, tc, "0");
  PhaseConfig pc;
  pc.num_queries = 8;
  s.syn = init_synthetic(s.real, pc, seed);
  return s;
}

ProbeSettings probe_settings(std::uint64_t seed) {
  ProbeSettings ps;
  ps.expert_epochs = 1;
  ps.unroll.steps = 3;
  ps.unroll.mini_batch = 4;
  ps.seed = seed;
  return ps;
}

double norm_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

// ---------------------------------------------------------------------------
// Cosine matrix

TEST(GradCosine, SymmetricUnitDiagonalBounded) {
  const auto s = make_setup(1);
  const auto path = MatchingPath::original(s.traj);
  const std::vector<double> starts{0, 1, 2.5, 4};
  const auto c = grad_cosine_matrix(path, s.syn, starts, probe_settings(3));
  ASSERT_EQ(c.rows(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(c(i, i), 1.0);
    for (std::size_t j = 0; j < 4; ++j) {
      EXPECT_EQ(c(i, j), c(j, i));
      EXPECT_LE(std::abs(c(i, j)), 1.0);
    }
  }
}

TEST(GradCosine, MatchesDirectProbeCosine) {
  const auto s = make_setup(2);
  const auto path = MatchingPath::original(s.traj);
  const auto ps = probe_settings(5);
  const auto c = grad_cosine_matrix(path, s.syn, {0, 3}, ps);
  const auto a = probe_at(path, s.syn, 0, ps);
  const auto b = probe_at(path, s.syn, 3, ps);
  double ab = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) ab += a[i] * b[i];
  EXPECT_NEAR(c(0, 1), ab / (norm_of(a) * norm_of(b)), 1e-12);
}

TEST(GradCosine, ZeroProbeIsUndefined) {
  auto s = make_setup(3);
  s.syn.inner_lr_img = s.syn.inner_lr_txt = 0.0;  // images no longer reach the student
  const auto path = MatchingPath::original(s.traj);
  EXPECT_THROW(grad_cosine_matrix(path, s.syn, {0, 1}, probe_settings(1)), UndefinedCosine);
}

TEST(GradCosine, RangeChecks) {
  const auto s = make_setup(4);
  const auto path = MatchingPath::original(s.traj);
  EXPECT_THROW(probe_at(path, s.syn, -0.5, probe_settings(1)), InvalidArgument);
  EXPECT_THROW(probe_at(path, s.syn, 5.5, probe_settings(1)), InvalidArgument);
}

TEST(GradCosine, MeanOffDiagonal) {
  Matrix<> c(3, 3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) c(i, j) = i == j ? 1.0 : 0.1 * static_cast<double>(i + j);
  EXPECT_NEAR(mean_off_diagonal(c), (0.1 + 0.2 + 0.1 + 0.3 + 0.2 + 0.3) / 6.0, 1e-15);
  EXPECT_EQ(mean_off_diagonal(Matrix<>(1, 1)), 0.0);
}

TEST(GradCosine, FullProbeIncludesEveryBlock) {
  const auto s = make_setup(5);
  const auto path = MatchingPath::original(s.traj);
  auto ps = probe_settings(1);
  const auto img = probe_at(path, s.syn, 0, ps);
  ps.probe = GradientProbe::full;
  const auto full = probe_at(path, s.syn, 0, ps);
  EXPECT_EQ(img.size(), s.syn.images.size());
  EXPECT_EQ(full.size(), s.syn.images.size() + s.syn.texts.size() + s.syn.sim.dense.size() + 2);
  EXPECT_TRUE(std::equal(img.begin(), img.end(), full.begin()));
}

// ---------------------------------------------------------------------------
// Sweep

TEST(Sweep, ZeroStepGivesZeroDifference) {
  const auto s = make_setup(6);
  const auto path = MatchingPath::original(s.traj);
  const auto r = proposition_sweep(path, s.syn, 1.0, {0.0, 0.25, 0.5}, probe_settings(2));
  EXPECT_EQ(r.diff_norms.front(), 0.0);
  EXPECT_GT(r.diff_norms[1], 0.0);
  EXPECT_TRUE(std::isfinite(r.slope));
}

TEST(Sweep, StepPastHorizonThrows) {
  const auto s = make_setup(7);
  const auto path = MatchingPath::original(s.traj);
  EXPECT_THROW(proposition_sweep(path, s.syn, 4.0, {0.5, 1.5}, probe_settings(2)), InvalidArgument);
  EXPECT_THROW(proposition_sweep(path, s.syn, 1.0, {-0.1}, probe_settings(2)), InvalidArgument);
}

TEST(Sweep, SmallStepsScaleLinearlyWithinASegment) {
  const auto s = make_setup(8);
  const auto path = MatchingPath::shortcut(build_shortcut(s.traj, 6));
  const auto r = proposition_sweep(path, s.syn, 1.0, {1.0 / 16, 1.0 / 8, 1.0 / 4, 1.0 / 2}, probe_settings(4));
  EXPECT_GT(r.slope, 0.8);
  EXPECT_LT(r.slope, 1.2);
}

TEST(Sweep, LogLogSlopeOracle) {
  std::vector<double> x{0.5, 1.0, 2.0, 4.0}, y;
  for (double v : x) y.push_back(3.0 * std::pow(v, 1.7));
  EXPECT_NEAR(loglog_slope(x, y), 1.7, 1e-12);
  x.insert(x.begin(), 0.0);
  y.insert(y.begin(), 0.0);
  EXPECT_NEAR(loglog_slope(x, y), 1.7, 1e-12);
  EXPECT_THROW(loglog_slope({1.0}, {1.0}), InvalidArgument);
}

// ---------------------------------------------------------------------------
// PCA

TEST(Pca, AntipodalPairLandsOnOneAxis) {
  const auto r = pca_project({{1.0, 2.0, -1.0}, {-1.0, -2.0, 1.0}}, 2);
  ASSERT_EQ(r.coords.cols(), 1u);
  EXPECT_TRUE(r.rank_deficient);
  EXPECT_NEAR(r.coords(0, 0), -r.coords(1, 0), 1e-12);
  EXPECT_NEAR(std::abs(r.coords(0, 0)), std::sqrt(6.0), 1e-12);
  EXPECT_NEAR(r.norms[0], std::sqrt(6.0), 1e-12);
}

TEST(Pca, FullRankPreservesCenteredGram) {
  Rng rng(3);
  std::vector<std::vector<double>> v(5, std::vector<double>(12));
  for (auto& row : v)
    for (auto& x : row) x = rng.normal();
  const auto r = pca_project(v, 4);  // centered rank is k - 1 = 4
  ASSERT_FALSE(r.rank_deficient);
  ASSERT_EQ(r.coords.cols(), 4u);
  std::vector<double> mean(12, 0.0);
  for (const auto& row : v)
    for (std::size_t j = 0; j < 12; ++j) mean[j] += row[j] / 5.0;
  for (std::size_t a = 0; a < 5; ++a)
    for (std::size_t b = 0; b < 5; ++b) {
      double want = 0.0, got = 0.0;
      for (std::size_t j = 0; j < 12; ++j) want += (v[a][j] - mean[j]) * (v[b][j] - mean[j]);
      for (std::size_t c = 0; c < 4; ++c) got += r.coords(a, c) * r.coords(b, c);
      EXPECT_NEAR(got, want, 1e-8);
    }
  for (std::size_t c = 1; c < r.eigenvalues.size(); ++c) EXPECT_GE(r.eigenvalues[c - 1], r.eigenvalues[c]);
}

TEST(Pca, ReorderingPermutesCoordinates) {
  Rng rng(4);
  std::vector<std::vector<double>> v(4, std::vector<double>(6));
  for (auto& row : v)
    for (auto& x : row) x = rng.normal();
  const auto a = pca_project(v, 2);
  std::vector<std::vector<double>> w{v[2], v[0], v[3], v[1]};
  const std::size_t perm[] = {2, 0, 3, 1};
  const auto b = pca_project(w, 2);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(b.coords(i, c), a.coords(perm[i], c), 1e-10);
}

TEST(Pca, InputChecks) {
  EXPECT_THROW(pca_project({{1.0}}, 1), InvalidArgument);
  EXPECT_THROW(pca_project({{1.0, 2.0}, {1.0}}, 1), InvalidArgument);
  const auto r = pca_project({{1.0, 1.0}, {1.0, 1.0}, {1.0, 1.0}}, 2);
  EXPECT_TRUE(r.rank_deficient);
  EXPECT_EQ(r.coords.cols(), 0u);
}

TEST(Pca, GradientNormsGrowAlongOriginalTrajectories) {
  int grows = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto s = make_setup(seed, 10);
    const auto path = MatchingPath::original(s.traj);
    const auto r = pca_gradients(path, s.syn, {0, 3, 6, 9}, probe_settings(seed));
    grows += r.norms.back() > r.norms.front();
  }
  EXPECT_GE(grows, 3);
}

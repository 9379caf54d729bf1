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

#include "ptmst/data.hpp"
#include "ptmst/errors.hpp"
#include "ptmst/matrix.hpp"

namespace ptmst {

/// Dense N×N similarity. Full mode passes S through; low-rank mode returns
/// clamp(ωI + (a/r)·L·Rᵀ, 0, 1).
inline Matrix<> reconstruct_similarity(const SimilarityParams& sim) {
  if (sim.mode == SimType::full) return sim.dense;
  const std::size_t n = sim.left.rows();
  if (sim.rank == 0 || sim.rank > n) throw InvalidArgument("similarity rank must be in [1, N]");
  if (sim.left.cols() != sim.rank || sim.right.cols() != sim.rank || sim.right.rows() != n)
    throw InvalidArgument("low-rank factors do not match the rank");
  const double scale = sim.alpha / static_cast<double>(sim.rank);
  Matrix<> s(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < sim.rank; ++k) acc += sim.left(i, k) * sim.right(j, k);
      double v = scale * acc;
      if (i == j) v += sim.omega;
      s(i, j) = std::clamp(v, 0.0, 1.0);
    }
  return s;
}

/// Pulls a gradient on the dense reconstruction back to the similarity
/// parameters. The result has the same mode and shapes as `sim`.
inline SimilarityParams similarity_backward(const SimilarityParams& sim, const Matrix<>& d_dense) {
  SimilarityParams g = sim;
  if (sim.mode == SimType::full) {
    g.dense = d_dense;
    return g;
  }
  const std::size_t n = sim.left.rows(), r = sim.rank;
  const double scale = sim.alpha / static_cast<double>(r);
  g.omega = 0.0;
  g.left = Matrix<>(n, r);
  g.right = Matrix<>(n, r);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < r; ++k) acc += sim.left(i, k) * sim.right(j, k);
      const double raw = scale * acc + (i == j ? sim.omega : 0.0);
      if (raw < 0.0 || raw > 1.0) continue;  // clamped: no gradient
      const double gij = d_dense(i, j);
      if (i == j) g.omega += gij;
      for (std::size_t k = 0; k < r; ++k) {
        g.left(i, k) += scale * gij * sim.right(j, k);
        g.right(j, k) += scale * gij * sim.left(i, k);
      }
    }
  return g;
}

}  // namespace ptmst

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
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ptmst/data.hpp"
#include "ptmst/model.hpp"

namespace ptmst {

/// Top-K recall in percent. `image_recall[k]` is IR@Ks[k] (text queries
/// retrieving images), `text_recall[k]` is TR@Ks[k].
struct RetrievalReport {
  std::vector<std::size_t> ks;
  std::vector<double> image_recall;
  std::vector<double> text_recall;

  double mean() const {
    double s = 0.0;
    for (double v : image_recall) s += v;
    for (double v : text_recall) s += v;
    const auto n = image_recall.size() + text_recall.size();
    return n ? s / static_cast<double>(n) : 0.0;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json ir = nlohmann::ordered_json::object(), tr = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < ks.size(); ++i) {
      ir[std::to_string(ks[i])] = image_recall[i];
      tr[std::to_string(ks[i])] = text_recall[i];
    }
    return {{"IR", ir}, {"TR", tr}};
  }

  friend bool operator==(const RetrievalReport&, const RetrievalReport&) = default;
};

inline const std::vector<std::size_t>& default_ks() {
  static const std::vector<std::size_t> ks{1, 5, 10};
  return ks;
}

/// Rank-based retrieval over Ŝ = U·Vᵀ; row i of U and V are the ground-truth
/// pair. Ties go to the lower index.
inline RetrievalReport retrieval_scores(const Matrix<>& scores, const std::vector<std::size_t>& ks) {
  const std::size_t m = scores.rows();
  if (scores.cols() != m) throw InvalidArgument("retrieval needs a square score matrix");
  for (auto k : ks)
    if (k == 0 || k >= m) throw InvalidArgument("retrieval K must satisfy 0 < K < m");
  std::vector<std::size_t> ir_rank(m), tr_rank(m);
  for (std::size_t q = 0; q < m; ++q) {
    // Text query q ranks images by column q; image query q ranks texts by row q.
    const double s_col = scores(q, q);
    std::size_t rc = 0, rr = 0;
    for (std::size_t i = 0; i < m; ++i) {
      const double c = scores(i, q);
      if (c > s_col || (c == s_col && i < q)) ++rc;
      const double r = scores(q, i);
      if (r > s_col || (r == s_col && i < q)) ++rr;
    }
    ir_rank[q] = rc;
    tr_rank[q] = rr;
  }
  RetrievalReport rep{ks, {}, {}};
  for (auto k : ks) {
    std::size_t hi = 0, ht = 0;
    for (std::size_t q = 0; q < m; ++q) {
      hi += ir_rank[q] < k;
      ht += tr_rank[q] < k;
    }
    rep.image_recall.push_back(100.0 * static_cast<double>(hi) / static_cast<double>(m));
    rep.text_recall.push_back(100.0 * static_cast<double>(ht) / static_cast<double>(m));
  }
  return rep;
}

inline RetrievalReport retrieval_scores(const Matrix<>& u, const Matrix<>& v, const std::vector<std::size_t>& ks) {
  if (u.rows() != v.rows() || u.cols() != v.cols()) throw InvalidArgument("embedding shapes differ");
  return retrieval_scores(detail::cosine_scores(u, v), ks);
}

inline RetrievalReport evaluate_retrieval(const ParamVector& params, const PairDataset& data,
                                          const std::vector<std::size_t>& ks = default_ks()) {
  return retrieval_scores(forward(params, data.images, data.texts).scores, ks);
}

}  // namespace ptmst

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
#include <span>
#include <string>
#include <vector>

#include "ptmst/dual.hpp"
#include "ptmst/errors.hpp"
#include "ptmst/matrix.hpp"
#include "ptmst/param_vector.hpp"
#include "ptmst/rng.hpp"

namespace ptmst {

/// Two-tower contrastive encoder: per modality, affine → tanh → affine, then
/// L2 normalization. Parameters live in one ParamVector with layers
/// img.w1, img.b1, img.w2, img.b2, txt.w1, txt.b1, txt.w2, txt.b2.
struct ModelShape {
  std::size_t dim_img = 32;
  std::size_t dim_txt = 32;
  std::size_t hidden = 32;
  std::size_t embed = 16;

  std::size_t tower_size(std::size_t dim_in) const { return hidden * dim_in + hidden + embed * hidden + embed; }
  std::size_t image_size() const { return tower_size(dim_img); }
  std::size_t text_size() const { return tower_size(dim_txt); }
  std::size_t total_size() const { return image_size() + text_size(); }

  /// Zero-valued parameters with the canonical layer layout.
  ParamVector make_params() const {
    ParamVector p;
    for (const auto& [prefix, dim] : {std::pair<const char*, std::size_t>{"img", dim_img}, {"txt", dim_txt}}) {
      const std::string pre(prefix);
      p.add_layer(pre + ".w1", {hidden, dim});
      p.add_layer(pre + ".b1", {hidden});
      p.add_layer(pre + ".w2", {embed, hidden});
      p.add_layer(pre + ".b2", {embed});
    }
    return p;
  }

  /// Recovers the shape from a parameter vector; throws if the layout is not
  /// the canonical two-tower one.
  static ModelShape from_params(const ParamVector& p) {
    if (p.num_layers() != 8) throw InvalidArgument("two-tower parameters must have 8 layers");
    const auto& w1 = p.info(0).shape;
    const auto& tw1 = p.info(4).shape;
    if (w1.size() != 2 || tw1.size() != 2) throw InvalidArgument("unexpected weight rank");
    ModelShape s{w1[1], tw1[1], w1[0], p.info(2).shape.at(0)};
    if (!s.make_params().compatible(p)) throw InvalidArgument("parameters do not follow the two-tower layout");
    return s;
  }

  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

/// Scaled-Gaussian initialization (std 1/sqrt(fan_in)), zero biases.
inline ParamVector init_params(const ModelShape& shape, std::uint64_t seed) {
  auto p = shape.make_params();
  Rng rng(seed);
  for (std::size_t i = 0; i < p.num_layers(); ++i) {
    const auto& info = p.info(i);
    if (info.shape.size() != 2) continue;
    const double sd = 1.0 / std::sqrt(static_cast<double>(info.shape[1]));
    for (auto& v : p.layer(i)) v = sd * rng.normal();
  }
  return p;
}

enum class LossKind : std::uint8_t { wbce = 0, infonce = 1 };

inline const char* to_string(LossKind k) { return k == LossKind::wbce ? "wBCE" : "InfoNCE"; }
inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "wBCE" || s == "wbce") return LossKind::wbce;
  if (s == "InfoNCE" || s == "infonce" || s == "NCE") return LossKind::infonce;
  throw InvalidArgument("unknown loss_type '" + s + "'");
}

struct LossSpec {
  LossKind kind = LossKind::wbce;
  double wbce_temperature = 0.2;     // τ in σ(ŝ/τ)
  double threshold = 0.5;            // positive/negative split of targets
  double infonce_temperature = 0.07;  // τ_c

  void validate() const {
    if (!(wbce_temperature > 0.0) || !(infonce_temperature > 0.0))
      throw InvalidArgument("loss temperatures must be positive");
    if (!(threshold > 0.0 && threshold < 1.0)) throw InvalidArgument("wBCE threshold must lie in (0, 1)");
  }
};

namespace detail {

inline constexpr double kNormEps2 = 1e-24;
inline constexpr double kLogFloor = 1e-12;

template <class T>
struct TowerCache {
  Matrix<T> hidden;  // b × h, post-tanh
  Matrix<T> emb;     // b × e, unit rows
  std::vector<T> inv_norm;
};

/// Offsets of one tower's layers inside the flat parameter array.
struct TowerLayout {
  std::size_t w1, b1, w2, b2, dim_in;
};

inline TowerLayout image_layout(const ModelShape& s) {
  const std::size_t w1 = 0, b1 = w1 + s.hidden * s.dim_img, w2 = b1 + s.hidden, b2 = w2 + s.embed * s.hidden;
  return {w1, b1, w2, b2, s.dim_img};
}
inline TowerLayout text_layout(const ModelShape& s) {
  const std::size_t base = s.image_size();
  const std::size_t w1 = base, b1 = w1 + s.hidden * s.dim_txt, w2 = b1 + s.hidden, b2 = w2 + s.embed * s.hidden;
  return {w1, b1, w2, b2, s.dim_txt};
}

template <class T>
TowerCache<T> tower_forward(const ModelShape& s, const TowerLayout& L, std::span<const T> p, const Matrix<T>& x) {
  using std::sqrt;
  using std::tanh;
  const std::size_t b = x.rows(), h = s.hidden, e = s.embed, d = L.dim_in;
  TowerCache<T> c{Matrix<T>(b, h), Matrix<T>(b, e), std::vector<T>(b)};
  std::vector<T> z(e);
  for (std::size_t n = 0; n < b; ++n) {
    const auto xr = x.row(n);
    for (std::size_t j = 0; j < h; ++j) {
      T a = p[L.b1 + j];
      const T* w = p.data() + L.w1 + j * d;
      for (std::size_t k = 0; k < d; ++k) a += w[k] * xr[k];
      c.hidden(n, j) = tanh(a);
    }
    T sq = T(kNormEps2);
    for (std::size_t i = 0; i < e; ++i) {
      T a = p[L.b2 + i];
      const T* w = p.data() + L.w2 + i * h;
      for (std::size_t j = 0; j < h; ++j) a += w[j] * c.hidden(n, j);
      z[i] = a;
      sq += a * a;
    }
    const T inv = T(1.0) / sqrt(sq);
    c.inv_norm[n] = inv;
    for (std::size_t i = 0; i < e; ++i) c.emb(n, i) = z[i] * inv;
  }
  return c;
}

/// Accumulates parameter gradients into `dp` and, if `dx` is non-null,
/// writes input gradients.
template <class T>
void tower_backward(const ModelShape& s, const TowerLayout& L, std::span<const T> p, const Matrix<T>& x,
                    const TowerCache<T>& c, const Matrix<T>& d_emb, std::span<T> dp, Matrix<T>* dx) {
  const std::size_t b = x.rows(), h = s.hidden, e = s.embed, d = L.dim_in;
  if (dx) *dx = Matrix<T>(b, d);
  std::vector<T> dz(e), da(h);
  for (std::size_t n = 0; n < b; ++n) {
    T proj = T(0.0);
    for (std::size_t i = 0; i < e; ++i) proj += c.emb(n, i) * d_emb(n, i);
    for (std::size_t i = 0; i < e; ++i) dz[i] = c.inv_norm[n] * (d_emb(n, i) - c.emb(n, i) * proj);
    for (std::size_t j = 0; j < h; ++j) da[j] = T(0.0);
    for (std::size_t i = 0; i < e; ++i) {
      dp[L.b2 + i] += dz[i];
      const T* w = p.data() + L.w2 + i * h;
      T* gw = dp.data() + L.w2 + i * h;
      for (std::size_t j = 0; j < h; ++j) {
        gw[j] += dz[i] * c.hidden(n, j);
        da[j] += w[j] * dz[i];
      }
    }
    for (std::size_t j = 0; j < h; ++j) {
      const T hv = c.hidden(n, j);
      da[j] *= T(1.0) - hv * hv;
    }
    const auto xr = x.row(n);
    for (std::size_t j = 0; j < h; ++j) {
      dp[L.b1 + j] += da[j];
      T* gw = dp.data() + L.w1 + j * d;
      for (std::size_t k = 0; k < d; ++k) gw[k] += da[j] * xr[k];
    }
    if (dx) {
      auto dr = dx->row(n);
      for (std::size_t j = 0; j < h; ++j) {
        const T* w = p.data() + L.w1 + j * d;
        for (std::size_t k = 0; k < d; ++k) dr[k] += w[k] * da[j];
      }
    }
  }
}

template <class T>
Matrix<T> cosine_scores(const Matrix<T>& u, const Matrix<T>& v) {
  Matrix<T> s(u.rows(), v.rows());
  for (std::size_t i = 0; i < u.rows(); ++i)
    for (std::size_t j = 0; j < v.rows(); ++j) {
      T acc = T(0.0);
      for (std::size_t k = 0; k < u.cols(); ++k) acc += u(i, k) * v(j, k);
      s(i, j) = acc;
    }
  return s;
}

template <class T>
T floored_log(const T& x) {
  using std::log;
  if (value_of(x) < kLogFloor) return T(std::log(kLogFloor));
  return log(x);
}

template <class T>
T sigmoid(const T& x) {
  using std::exp;
  return T(1.0) / (T(1.0) + exp(-x));
}

}  // namespace detail

template <class T>
struct ScoreLoss {
  T value{};
  Matrix<T> d_scores;   // ∂L/∂Ŝ
  Matrix<T> d_targets;  // ∂L/∂S (wBCE only)
};

/// Symmetric InfoNCE over a square score matrix with temperature τ_c.
template <class T>
ScoreLoss<T> infonce(const Matrix<T>& scores, double tau_c) {
  using std::exp;
  using std::log;
  if (scores.rows() != scores.cols() || scores.rows() == 0)
    throw InvalidArgument("InfoNCE requires a non-empty square score matrix");
  if (!(tau_c > 0.0)) throw InvalidArgument("InfoNCE temperature must be positive");
  const std::size_t b = scores.rows();
  const double inv_b = 1.0 / static_cast<double>(b);
  ScoreLoss<T> out{T(0.0), Matrix<T>(b, b), {}};
  Matrix<T> x(b, b);
  for (std::size_t i = 0; i < b * b; ++i) x.values()[i] = scores.values()[i] / tau_c;
  Matrix<T> pr(b, b), pc(b, b);
  for (std::size_t i = 0; i < b; ++i) {
    double m = value_of(x(i, 0));
    for (std::size_t k = 1; k < b; ++k) m = std::max(m, value_of(x(i, k)));
    T sum = T(0.0);
    for (std::size_t k = 0; k < b; ++k) sum += exp(x(i, k) - T(m));
    const T lse = T(m) + log(sum);
    for (std::size_t k = 0; k < b; ++k) pr(i, k) = exp(x(i, k) - lse);
    out.value += lse - x(i, i);
  }
  for (std::size_t j = 0; j < b; ++j) {
    double m = value_of(x(0, j));
    for (std::size_t k = 1; k < b; ++k) m = std::max(m, value_of(x(k, j)));
    T sum = T(0.0);
    for (std::size_t k = 0; k < b; ++k) sum += exp(x(k, j) - T(m));
    const T lse = T(m) + log(sum);
    for (std::size_t k = 0; k < b; ++k) pc(k, j) = exp(x(k, j) - lse);
    out.value += lse - x(j, j);
  }
  out.value *= inv_b;
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) {
      T g = pr(i, j) + pc(i, j);
      if (i == j) g -= T(2.0);
      out.d_scores(i, j) = g * (inv_b / tau_c);
    }
  return out;
}

/// Weighted BCE: mean BCE over positive targets (s > threshold) plus mean BCE
/// over negatives, with predictions σ(ŝ/τ). An empty group contributes 0.
template <class T>
ScoreLoss<T> wbce(const Matrix<T>& scores, const Matrix<T>& targets, double tau, double threshold) {
  if (!scores.same_shape(targets)) throw InvalidArgument("wBCE scores and targets differ in shape");
  if (!(tau > 0.0)) throw InvalidArgument("wBCE temperature must be positive");
  std::size_t n_pos = 0, n_neg = 0;
  for (const auto& s : targets.values()) {
    const double v = value_of(s);
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("wBCE targets must lie in [0, 1]");
    (v > threshold ? n_pos : n_neg)++;
  }
  const double w_pos = n_pos ? 1.0 / static_cast<double>(n_pos) : 0.0;
  const double w_neg = n_neg ? 1.0 / static_cast<double>(n_neg) : 0.0;
  ScoreLoss<T> out{T(0.0), Matrix<T>(scores.rows(), scores.cols()), Matrix<T>(scores.rows(), scores.cols())};
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const T& s = targets.values()[i];
    const double w = value_of(s) > threshold ? w_pos : w_neg;
    const T p = detail::sigmoid(scores.values()[i] / tau);
    const T q = T(1.0) - p;
    const T log_p = detail::floored_log(p);
    const T log_q = detail::floored_log(q);
    out.value += w * (-(s * log_p) - (T(1.0) - s) * log_q);
    T g = T(0.0);
    if (value_of(p) >= detail::kLogFloor) g -= s * q;
    if (value_of(q) >= detail::kLogFloor) g += (T(1.0) - s) * p;
    out.d_scores.values()[i] = g * (w / tau);
    out.d_targets.values()[i] = (log_q - log_p) * w;
  }
  return out;
}

inline double infonce_loss(const Matrix<>& scores, double tau_c) { return infonce(scores, tau_c).value; }
inline double wbce_loss(const Matrix<>& scores, const Matrix<>& targets, double tau, double threshold) {
  return wbce(scores, targets, tau, threshold).value;
}

struct Embeddings {
  Matrix<> image;   // U
  Matrix<> text;    // V
  Matrix<> scores;  // Ŝ = U Vᵀ
};

/// Unit-norm embeddings of both modalities and their cosine score matrix.
inline Embeddings forward(const ParamVector& params, const Matrix<>& images, const Matrix<>& texts) {
  const auto shape = ModelShape::from_params(params);
  if (images.cols() != shape.dim_img || texts.cols() != shape.dim_txt)
    throw InvalidArgument("input feature dimensions do not match the towers");
  const auto p = params.values();
  auto cu = detail::tower_forward<double>(shape, detail::image_layout(shape), p, images);
  auto cv = detail::tower_forward<double>(shape, detail::text_layout(shape), p, texts);
  Embeddings out{std::move(cu.emb), std::move(cv.emb), {}};
  out.scores = detail::cosine_scores(out.image, out.text);
  return out;
}

/// Loss and gradients of one batch with respect to parameters and,
/// optionally, the batch inputs and similarity targets.
template <class T>
struct BatchGradient {
  T loss{};
  std::vector<T> d_params;
  Matrix<T> d_images;
  Matrix<T> d_texts;
  Matrix<T> d_targets;
};

/// `targets` is required for wBCE and ignored for InfoNCE.
template <class T>
BatchGradient<T> batch_gradient(const ModelShape& shape, std::span<const T> params, const Matrix<T>& images,
                                const Matrix<T>& texts, const Matrix<T>* targets, const LossSpec& spec,
                                bool input_grads) {
  if (images.rows() != texts.rows()) throw InvalidArgument("batch image/text row counts differ");
  if (images.cols() != shape.dim_img || texts.cols() != shape.dim_txt)
    throw InvalidArgument("batch feature dimensions do not match the towers");
  if (params.size() != shape.total_size()) throw InvalidArgument("parameter count does not match model shape");
  const auto li = detail::image_layout(shape);
  const auto lt = detail::text_layout(shape);
  const auto cu = detail::tower_forward<T>(shape, li, params, images);
  const auto cv = detail::tower_forward<T>(shape, lt, params, texts);
  const auto scores = detail::cosine_scores(cu.emb, cv.emb);

  ScoreLoss<T> sl;
  if (spec.kind == LossKind::infonce) {
    sl = infonce(scores, spec.infonce_temperature);
  } else {
    if (!targets) throw InvalidArgument("wBCE requires similarity targets");
    sl = wbce(scores, *targets, spec.wbce_temperature, spec.threshold);
  }

  const std::size_t b = images.rows(), e = shape.embed;
  Matrix<T> du(b, e), dv(b, e);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) {
      const T g = sl.d_scores(i, j);
      for (std::size_t k = 0; k < e; ++k) {
        du(i, k) += g * cv.emb(j, k);
        dv(j, k) += g * cu.emb(i, k);
      }
    }

  BatchGradient<T> out;
  out.loss = sl.value;
  out.d_params.assign(params.size(), T(0.0));
  detail::tower_backward<T>(shape, li, params, images, cu, du, out.d_params, input_grads ? &out.d_images : nullptr);
  detail::tower_backward<T>(shape, lt, params, texts, cv, dv, out.d_params, input_grads ? &out.d_texts : nullptr);
  if (input_grads && spec.kind == LossKind::wbce) out.d_targets = std::move(sl.d_targets);
  return out;
}

/// Plain-double convenience: gradient with respect to parameters only.
inline BatchGradient<double> param_gradient(const ParamVector& params, const Matrix<>& images, const Matrix<>& texts,
                                            const Matrix<>* targets, const LossSpec& spec) {
  return batch_gradient<double>(ModelShape::from_params(params), params.values(), images, texts, targets, spec,
                                false);
}

}  // namespace ptmst

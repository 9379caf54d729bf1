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
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ptmst/errors.hpp"
#include "ptmst/matrix.hpp"
#include "ptmst/rng.hpp"

namespace ptmst {

struct LayerInfo {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t size = 0;

  friend bool operator==(const LayerInfo&, const LayerInfo&) = default;
};

/// Named, layered parameter container over one flat array of 64-bit reals.
/// Layer names and shapes are fixed once added; only values change.
class ParamVector {
 public:
  ParamVector() = default;

  /// Appends a zero-filled layer.
  void add_layer(const std::string& name, std::vector<std::size_t> shape) {
    for (const auto& l : layers_)
      if (l.name == name) throw InvalidArgument("duplicate layer name '" + name + "'");
    const std::size_t n =
        std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    layers_.push_back({name, std::move(shape), values_.size(), n});
    values_.resize(values_.size() + n, 0.0);
  }

  void add_layer(const std::string& name, std::vector<std::size_t> shape, std::span<const double> values) {
    add_layer(name, std::move(shape));
    auto dst = layer(layers_.size() - 1);
    if (values.size() != dst.size()) throw InvalidArgument("layer '" + name + "' value count does not match shape");
    std::copy(values.begin(), values.end(), dst.begin());
  }

  std::size_t num_layers() const noexcept { return layers_.size(); }
  std::size_t size() const noexcept { return values_.size(); }
  const std::vector<LayerInfo>& layers() const noexcept { return layers_; }
  const LayerInfo& info(std::size_t i) const { return layers_.at(i); }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < layers_.size(); ++i)
      if (layers_[i].name == name) return i;
    throw InvalidArgument("no layer named '" + name + "'");
  }

  std::span<double> layer(std::size_t i) {
    const auto& l = layers_.at(i);
    return {values_.data() + l.offset, l.size};
  }
  std::span<const double> layer(std::size_t i) const {
    const auto& l = layers_.at(i);
    return {values_.data() + l.offset, l.size};
  }
  std::span<double> layer(const std::string& name) { return layer(index_of(name)); }
  std::span<const double> layer(const std::string& name) const { return layer(index_of(name)); }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }

  /// Same layer names and shapes, in the same order.
  bool compatible(const ParamVector& o) const {
    if (layers_.size() != o.layers_.size()) return false;
    for (std::size_t i = 0; i < layers_.size(); ++i)
      if (layers_[i].name != o.layers_[i].name || layers_[i].shape != o.layers_[i].shape) return false;
    return true;
  }

  void require_compatible(const ParamVector& o, const char* what) const {
    if (!compatible(o)) throw InvalidArgument(std::string(what) + ": parameter schemas differ");
  }

  bool finite() const { return all_finite(values_); }

  /// A zero-valued vector with the same schema.
  ParamVector zeros_like() const {
    ParamVector z = *this;
    std::fill(z.values_.begin(), z.values_.end(), 0.0);
    return z;
  }

  /// Stable 64-bit hash of names and shapes, used to tag trajectory buffers.
  std::uint64_t schema_hash() const {
    std::string key;
    for (const auto& l : layers_) {
      key += l.name;
      key += '[';
      for (auto d : l.shape) key += std::to_string(d) + ",";
      key += ']';
    }
    return fnv1a64(key);
  }

  friend bool operator==(const ParamVector& a, const ParamVector& b) {
    return a.layers_ == b.layers_ && a.values_ == b.values_;
  }

 private:
  std::vector<LayerInfo> layers_;
  std::vector<double> values_;
};

struct Checkpoint {
  std::size_t epoch = 0;
  ParamVector params;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

}  // namespace ptmst

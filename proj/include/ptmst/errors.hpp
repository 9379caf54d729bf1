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
#include <stdexcept>
#include <string>

namespace ptmst {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A persisted container could not be decoded. `offset()` is the byte offset
/// at which decoding stopped.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Not enough rows left to satisfy a selection request.
class CapacityError : public Error {
 public:
  using Error::Error;
};

class TrainingFailure : public Error {
 public:
  TrainingFailure(const std::string& what, std::size_t epoch)
      : Error(what + " (epoch " + std::to_string(epoch) + ")"), epoch_(epoch) {}

  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

/// A layer never moved along the trajectory, so its accumulated-distance
/// weighting is 0/0.
class DegenerateLayer : public Error {
 public:
  explicit DegenerateLayer(const std::string& layer)
      : Error("layer '" + layer + "' has zero accumulated distance"), layer_(layer) {}

  const std::string& layer() const noexcept { return layer_; }

 private:
  std::string layer_;
};

/// The teacher segment used to normalize the matching loss has zero length.
class DegenerateSegment : public Error {
 public:
  using Error::Error;
};

class UnrollDivergence : public Error {
 public:
  UnrollDivergence(const std::string& what, std::size_t step)
      : Error(what + " (inner step " + std::to_string(step) + ")"), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class UndefinedCosine : public Error {
 public:
  using Error::Error;
};

/// Raised by the key=value config reader; `key()` names the offending key.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& what, std::string key) : Error(what), key_(std::move(key)) {}

  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

}  // namespace ptmst

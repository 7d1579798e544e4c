/*
   Licensed under the Apache License, Version 2.0 (the "License");
   you may not use this file except in compliance with the License.
   You may obtain a copy of the License at

       http://www.apache.org/licenses/LICENSE-2.0

   Unless required by applicable law or agreed to in writing, software
   distributed under the License is distributed on an "AS IS" BASIS,
   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
   See the License for the specific language governing permissions and
   limitations under the License.
*/

#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sfde {

// Largest state dimension handled by the stack-allocated vector/matrix types.
// Galerkin truncations beyond this many modes are rejected.
inline constexpr int kMaxDim = 16;

using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor,
                          kMaxDim, kMaxDim>;

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad configuration or violated precondition.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite sample found while reading or constructing a segment.
class NonFiniteSample : public Error {
 public:
  NonFiniteSample(std::size_t index, const std::string& where)
      : Error(where + ": non-finite sample at index " + std::to_string(index)),
        index_(index) {}
  std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};

/// Coefficient functional returned a non-finite value.
class ModelEvaluationError : public Error {
 public:
  ModelEvaluationError(const std::string& what, double segment_norm)
      : Error(what + " (segment norm " + std::to_string(segment_norm) + ")"),
        segment_norm_(segment_norm) {}
  double segment_norm() const { return segment_norm_; }

 private:
  double segment_norm_;
};

/// Estimation input that admits no fit (e.g. identically zero data).
class DegenerateFitError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the domain of a special function.
class DomainError : public Error {
 public:
  using Error::Error;
};

class DiffusionSingularError : public Error {
 public:
  using Error::Error;
};

/// Operation called on a model or trajectory of the wrong kind.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure inside a time step (NaN state, neutral iteration cap).
class StepError : public Error {
 public:
  StepError(const std::string& what, std::size_t step)
      : Error(what + " at step " + std::to_string(step)), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

inline Vec zeros(int d) { return Vec::Zero(d); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

}  // namespace sfde

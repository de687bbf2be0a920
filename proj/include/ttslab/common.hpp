//
// Copyright 2026 The ttslab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

#ifndef TTSLAB_COMMON_HPP_
#define TTSLAB_COMMON_HPP_

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ttslab {

// Frame/latent/parameter matrices are row-major so that row t is the
// feature vector of frame t and serialization is a straight memcpy.
template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

using Scalar = float;
using Mat = MatX<Scalar>;
using Vec = VecX<Scalar>;

// The synthetic world and its oracles run in double; model code runs in float.
using DMat = MatX<double>;
using DVec = VecX<double>;

using Index = Eigen::Index;

// Error taxonomy. The CLI maps these onto process exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad configuration, precondition violation, malformed input.
struct ValidationError : Error {
  using Error::Error;
};

// A required upstream artifact or model is missing or stale.
struct DependencyError : Error {
  using Error::Error;
};

// Training diverged (non-finite loss or gradient).
struct TrainingError : Error {
  using Error::Error;
};

// Shape or length mismatch between tensors/sequences.
struct ShapeError : ValidationError {
  using ValidationError::ValidationError;
};

// Unknown symbol or out-of-range token id.
struct VocabError : ValidationError {
  using ValidationError::ValidationError;
};

// Empty or degenerate input where content is required.
struct DataError : ValidationError {
  using ValidationError::ValidationError;
};

}  // namespace ttslab

#endif  // TTSLAB_COMMON_HPP_

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

#ifndef TTSLAB_RNG_HPP_
#define TTSLAB_RNG_HPP_

#include <cmath>
#include <cstdint>
#include <vector>

#include "ttslab/common.hpp"

namespace ttslab {

// Deterministic RNG with hand-rolled distributions. std::normal_distribution
// is implementation-defined, which would tie reproducibility to the standard
// library version; everything here is pinned to the bit level.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(splitmix(seed ^ 0x9e3779b97f4a7c15ull)) {
    if (state_ == 0) state_ = 0x4d595df4d0f33173ull;
  }

  // Derives an independent stream, e.g. one per utterance or per frame.
  static Rng fork(uint64_t seed, uint64_t stream) {
    return Rng(splitmix(seed) ^ splitmix(stream * 0xbf58476d1ce4e5b9ull + 0x94d049bb133111ebull));
  }

  uint64_t next_u64() {
    // xorshift64*
    state_ ^= state_ >> 12;
    state_ ^= state_ << 25;
    state_ ^= state_ >> 27;
    return state_ * 0x2545f4914f6cdd1dull;
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  uint64_t below(uint64_t n) {
    // Modulo bias is irrelevant at our n << 2^64.
    return next_u64() % n;
  }

  int uniform_int(int lo, int hi) {  // inclusive bounds
    return lo + static_cast<int>(below(static_cast<uint64_t>(hi - lo + 1)));
  }

  // Marsaglia polar method, cached second value.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return u * m;
  }

  template <typename S>
  void fill_gaussian(MatX<S>& m, double stddev = 1.0) {
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) m(i, j) = static_cast<S>(gaussian() * stddev);
  }

  template <typename S>
  void fill_gaussian(VecX<S>& v, double stddev = 1.0) {
    for (Index i = 0; i < v.size(); ++i) v(i) = static_cast<S>(gaussian() * stddev);
  }

  // Random unit vector.
  template <typename S>
  VecX<S> unit_vector(Index dim) {
    VecX<S> v(dim);
    double n2 = 0.0;
    do {
      fill_gaussian(v);
      n2 = v.template cast<double>().squaredNorm();
    } while (n2 < 1e-12);
    return (v.template cast<double>() / std::sqrt(n2)).template cast<S>();
  }

  // Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  static uint64_t splitmix(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

 private:
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ttslab

#endif  // TTSLAB_RNG_HPP_

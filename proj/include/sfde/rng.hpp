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

// Counter-based random numbers. Every Gaussian increment is a pure function of
// (seed, stream, path, step, component), so paths can be generated in any
// order, on any thread, and replayed exactly.

#include "sfde/types.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace sfde {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Philox4x32 with 10 rounds.
class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  explicit Philox4x32(std::uint64_t key = 0)
      : key_{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)} {}

  Counter operator()(Counter c) const {
    Key k = key_;
    for (int i = 0; i < 10; ++i) {
      c = round(c, k);
      k[0] += kW0;
      k[1] += kW1;
    }
    return c;
  }

 private:
  static constexpr std::uint32_t kM0 = 0xD2511F53u;
  static constexpr std::uint32_t kM1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kW0 = 0x9E3779B9u;
  static constexpr std::uint32_t kW1 = 0xBB67AE85u;

  static Counter round(const Counter& c, const Key& k) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * c[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * c[2];
    return {static_cast<std::uint32_t>(p1 >> 32) ^ c[1] ^ k[0], static_cast<std::uint32_t>(p1),
            static_cast<std::uint32_t>(p0 >> 32) ^ c[3] ^ k[1], static_cast<std::uint32_t>(p0)};
  }

  Key key_;
};

namespace rng_detail {
// 53-bit uniform in (0, 1)
inline double to_unit(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits = ((static_cast<std::uint64_t>(hi) << 32) | lo) >> 11;
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}
inline void box_muller(double u1, double u2, double& z0, double& z1) {
  const double rad = std::sqrt(-2.0 * std::log(u1));
  const double ang = 2.0 * std::numbers::pi * u2;
  z0 = rad * std::cos(ang);
  z1 = rad * std::sin(ang);
}
}  // namespace rng_detail

/// Gaussian noise indexed by (path, step). Distinct streams from one seed are
/// statistically independent.
class NoiseStream {
 public:
  NoiseStream() : NoiseStream(0, 0) {}
  NoiseStream(std::uint64_t seed, std::uint64_t stream = 0)
      : seed_(seed), stream_(stream), gen_(splitmix64(seed ^ splitmix64(stream))) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  /// Fills out[0..d) with iid N(0,1) for the given path and step.
  void normals(std::uint64_t path, std::uint64_t step, int d, double* out) const {
    for (int chunk = 0; 2 * chunk < d; ++chunk) {
      const auto c = gen_({static_cast<std::uint32_t>(chunk), static_cast<std::uint32_t>(step),
                           static_cast<std::uint32_t>(step >> 32), static_cast<std::uint32_t>(path)});
      double z0, z1;
      rng_detail::box_muller(rng_detail::to_unit(c[0], c[1]), rng_detail::to_unit(c[2], c[3]), z0, z1);
      out[2 * chunk] = z0;
      if (2 * chunk + 1 < d) out[2 * chunk + 1] = z1;
    }
  }

  /// Brownian increment sqrt(dt) * N(0, Id).
  Vec increment(std::uint64_t path, std::uint64_t step, int d, double dt) const {
    Vec v(d);
    normals(path, step, d, v.data());
    return v * std::sqrt(dt);
  }

  NoiseStream substream(std::uint64_t k) const { return NoiseStream(seed_, splitmix64(stream_ + 1) ^ k); }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  Philox4x32 gen_;
};

/// Sequential generator for auxiliary draws (samplers, random directions).
class CounterRng {
 public:
  using result_type = std::uint64_t;
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~0ull; }

  explicit CounterRng(std::uint64_t seed = 0, std::uint64_t stream = 0)
      : gen_(splitmix64(seed ^ splitmix64(stream ^ 0x5DEECE66Dull))) {}

  result_type operator()() {
    if (pos_ == 2) refill();
    return buf_[pos_++];
  }

  double uniform() {
    const std::uint64_t x = (*this)() >> 11;
    return (static_cast<double>(x) + 0.5) * 0x1.0p-53;
  }
  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double z0, z1;
    rng_detail::box_muller(uniform(), uniform(), z0, z1);
    spare_ = z1;
    has_spare_ = true;
    return z0;
  }

  Vec normal_vec(int d) {
    Vec v(d);
    for (int i = 0; i < d; ++i) v[i] = normal();
    return v;
  }

 private:
  void refill() {
    const auto c = gen_({static_cast<std::uint32_t>(ctr_), static_cast<std::uint32_t>(ctr_ >> 32), 0xA5A5A5A5u, 0});
    ++ctr_;
    buf_[0] = (static_cast<std::uint64_t>(c[0]) << 32) | c[1];
    buf_[1] = (static_cast<std::uint64_t>(c[2]) << 32) | c[3];
    pos_ = 0;
  }

  Philox4x32 gen_;
  std::uint64_t ctr_ = 0;
  std::array<std::uint64_t, 2> buf_{};
  int pos_ = 2;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace sfde

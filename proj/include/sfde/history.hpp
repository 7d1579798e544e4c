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

// Simulation-side view of a segment process: a ring buffer holding the recent
// grid values needed by delay terms, one fading integral per kernel rate, and
// the running weighted norm.

#include "sfde/segment.hpp"

#include <array>
#include <cmath>
#include <vector>

namespace sfde {

struct FadingKernel {
  double kappa = 1.0;
  double decay = 0.0;   // e^{-kappa dt}
  double weight = 0.0;  // (1 - e^{-kappa dt}) / kappa

  FadingKernel() = default;
  FadingKernel(double k, double dt)
      : kappa(k), decay(std::exp(-k * dt)), weight(-std::expm1(-k * dt) / k) {}
};

class PathState {
 public:
  PathState() = default;

  /// Builds the state at time t0 from an initial segment. The segment is
  /// resampled onto dt if needed; fading integrals come from the exact
  /// interpolant quadrature of the whole segment including its tail.
  PathState(const Segment& initial, double r, double dt, const std::vector<double>& kappas,
            double max_delay, double t0 = 0.0)
      : dim_(initial.dim()), dt_(dt), t_(t0) {
    require(dt > 0, "path step must be positive");
    require(max_delay >= 0, "negative delay");
    const Segment seg = initial.resampled(dt);
    capacity_ = static_cast<std::size_t>(std::ceil(max_delay / dt - 1e-9)) + 2;
    ring_.assign(capacity_ * dim_, 0.0);
    for (std::size_t j = 0; j < capacity_; ++j) {
      const Vec v = seg.eval(-static_cast<double>(j) * dt);
      // slot for lag j with head at 0 is (0 - j) mod capacity
      const std::size_t slot = (capacity_ - j % capacity_) % capacity_;
      for (int i = 0; i < dim_; ++i) ring_[slot * dim_ + i] = v[i];
    }
    head_ = 0;
    kernels_.reserve(kappas.size());
    fading_.reserve(kappas.size());
    for (double k : kappas) {
      require(k > r, "fading kernel rate must exceed the memory rate r");
      kernels_.emplace_back(k, dt);
      fading_.push_back(fading_quadrature(seg, k, identity_integrand()));
    }
    tracker_ = NormTracker(r, weighted_norm(seg, r), t0);
  }

  int dim() const { return dim_; }
  double dt() const { return dt_; }
  double time() const { return t_; }
  double norm() const { return tracker_.norm(); }
  const NormTracker& tracker() const { return tracker_; }
  std::size_t kernel_count() const { return kernels_.size(); }
  const FadingKernel& kernel(std::size_t k) const { return kernels_[k]; }
  std::size_t capacity() const { return capacity_; }

  Vec lag(std::size_t j) const {
    const std::size_t slot = (head_ + capacity_ - j % capacity_) % capacity_;
    return Eigen::Map<const Eigen::VectorXd>(ring_.data() + slot * dim_, dim_);
  }

  Vec current() const { return lag(0); }

  Vec delayed(double tau) const {
    const double s = tau / dt_;
    auto k = static_cast<std::size_t>(std::floor(s + 1e-12));
    double w = s - static_cast<double>(k);
    if (w < 1e-12) w = 0.0;
    require(k + (w > 0 ? 1 : 0) < capacity_, "delay exceeds the retained history");
    if (w == 0.0) return lag(k);
    return (1.0 - w) * lag(k) + w * lag(k + 1);
  }

  const Vec& fading(std::size_t k) const { return fading_[k]; }

  void push(const Vec& x_new) {
    head_ = (head_ + 1) % capacity_;
    for (int i = 0; i < dim_; ++i) ring_[head_ * dim_ + i] = x_new[i];
    for (std::size_t k = 0; k < kernels_.size(); ++k)
      fading_[k] = kernels_[k].decay * fading_[k] + kernels_[k].weight * x_new;
    t_ += dt_;
    tracker_.advance(t_, x_new);
  }

 private:
  int dim_ = 1;
  double dt_ = 1.0;
  double t_ = 0.0;
  std::size_t capacity_ = 0;
  std::size_t head_ = 0;
  std::vector<double> ring_;
  std::vector<FadingKernel> kernels_;
  std::vector<Vec> fading_;
  NormTracker tracker_;
};

/// The state one step ahead, as if candidate x_new had been pushed, without
/// touching the underlying PathState. Used by the implicit neutral update.
class TentativeView {
 public:
  TentativeView(const PathState& base, const Vec& x_new) : base_(&base), x_(x_new) {
    fading_.reserve(base.kernel_count());
    for (std::size_t k = 0; k < base.kernel_count(); ++k) {
      const auto& ker = base.kernel(k);
      fading_.push_back(ker.decay * base.fading(k) + ker.weight * x_new);
    }
  }

  int dim() const { return base_->dim(); }
  Vec current() const { return x_; }
  Vec lag(std::size_t j) const { return j == 0 ? x_ : base_->lag(j - 1); }
  Vec delayed(double tau) const {
    const double s = tau / base_->dt();
    auto k = static_cast<std::size_t>(std::floor(s + 1e-12));
    double w = s - static_cast<double>(k);
    if (w < 1e-12) w = 0.0;
    if (w == 0.0) return lag(k);
    return (1.0 - w) * lag(k) + w * lag(k + 1);
  }
  const Vec& fading(std::size_t k) const { return fading_[k]; }

 private:
  const PathState* base_;
  Vec x_;
  std::vector<Vec> fading_;
};

}  // namespace sfde

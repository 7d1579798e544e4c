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

// Segment states of the weighted history space, the exponentially weighted
// sup-norm, and the two O(1)-per-step recursions used along simulated paths:
// the log-domain running maximum and the fading-memory integral.

#include "sfde/types.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

namespace sfde {

enum class TailMode { constant_extension, zero_extension };

inline const char* to_string(TailMode m) {
  return m == TailMode::constant_extension ? "constant" : "zero";
}

inline TailMode tail_mode_from_string(const std::string& s) {
  if (s == "constant" || s == "constant-extension") return TailMode::constant_extension;
  if (s == "zero" || s == "zero-extension") return TailMode::zero_extension;
  throw ConfigError("unknown tail mode '" + s + "'");
}

// Window length making e^{-r T} <= 1e-8, rounded up to a multiple of dt.
inline double default_window(double r, double dt) {
  const double t = std::log(1e8) / r;
  return std::ceil(t / dt - 1e-9) * dt;
}

/// History of a path on the grid theta = 0, -dt, ..., -window, extended beyond
/// -window either by its last value or by zero. Sample k sits at theta = -k*dt.
class Segment {
 public:
  Segment() = default;

  Segment(int dim, double dt, double window, std::vector<double> values,
          TailMode tail = TailMode::constant_extension)
      : dim_(dim), dt_(dt), window_(window), tail_(tail), values_(std::move(values)) {
    require(dim >= 1 && dim <= kMaxDim, "segment dimension out of range");
    require(dt > 0 && std::isfinite(dt), "segment step must be positive");
    require(window > 0 && std::isfinite(window), "segment window must be positive");
    const double steps = window / dt;
    n_ = static_cast<std::size_t>(std::llround(steps));
    require(std::abs(steps - static_cast<double>(n_)) < 1e-7 * std::max(1.0, steps),
            "segment window must be an integer multiple of dt");
    require(values_.size() == (n_ + 1) * static_cast<std::size_t>(dim),
            "segment holds " + std::to_string(values_.size()) + " values, expected " +
                std::to_string((n_ + 1) * dim));
    for (std::size_t i = 0; i < values_.size(); ++i)
      if (!std::isfinite(values_[i])) throw NonFiniteSample(i / dim, "segment");
  }

  static Segment constant(const Vec& value, double dt, double window,
                          TailMode tail = TailMode::constant_extension) {
    const int d = static_cast<int>(value.size());
    const auto n = static_cast<std::size_t>(std::llround(window / dt));
    std::vector<double> v((n + 1) * d);
    for (std::size_t k = 0; k <= n; ++k)
      for (int i = 0; i < d; ++i) v[k * d + i] = value[i];
    return Segment(d, dt, window, std::move(v), tail);
  }

  /// Samples fn(theta) on the grid.
  template <class Fn>
  static Segment from_function(int dim, double dt, double window, Fn&& fn,
                               TailMode tail = TailMode::constant_extension) {
    const auto n = static_cast<std::size_t>(std::llround(window / dt));
    std::vector<double> v((n + 1) * dim);
    for (std::size_t k = 0; k <= n; ++k) {
      const Vec x = fn(-static_cast<double>(k) * dt);
      for (int i = 0; i < dim; ++i) v[k * dim + i] = x[i];
    }
    return Segment(dim, dt, window, std::move(v), tail);
  }

  int dim() const { return dim_; }
  double dt() const { return dt_; }
  double window() const { return window_; }
  std::size_t steps() const { return n_; }
  std::size_t points() const { return n_ + 1; }
  TailMode tail_mode() const { return tail_; }
  double theta(std::size_t k) const { return -static_cast<double>(k) * dt_; }
  const std::vector<double>& raw() const { return values_; }

  Vec at_lag(std::size_t k) const {
    return Eigen::Map<const Eigen::VectorXd>(values_.data() + k * dim_, dim_);
  }
  double component(std::size_t k, int i) const { return values_[k * dim_ + i]; }

  /// Value beyond the window.
  Vec tail_value() const {
    return tail_ == TailMode::constant_extension ? at_lag(n_) : zeros(dim_);
  }

  /// sup over theta <= -window of e^{r theta}|xi(theta)|.
  double tail_weighted_sup(double r) const {
    return std::exp(-r * window_) * tail_value().norm();
  }

  /// Piecewise-linear evaluation for theta in [-window, 0]; tail value below.
  Vec eval(double theta) const {
    require(theta <= 1e-12, "segment evaluated at positive theta");
    const double s = -theta / dt_;
    if (s >= static_cast<double>(n_)) return theta < -window_ - 1e-12 ? tail_value() : at_lag(n_);
    const auto k = static_cast<std::size_t>(std::floor(s));
    const double w = s - static_cast<double>(k);
    if (w <= 0.0) return at_lag(k);
    return (1.0 - w) * at_lag(k) + w * at_lag(k + 1);
  }

  Segment scaled(double c) const {
    std::vector<double> v(values_);
    for (double& x : v) x *= c;
    return Segment(dim_, dt_, window_, std::move(v), tail_);
  }

  /// Pointwise sum of segments sharing the same grid.
  Segment plus(const Segment& other, double c = 1.0) const {
    check_same_grid(other);
    std::vector<double> v(values_);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += c * other.values_[i];
    const TailMode t = (tail_ == TailMode::zero_extension && other.tail_ == TailMode::zero_extension)
                           ? TailMode::zero_extension
                           : TailMode::constant_extension;
    return Segment(dim_, dt_, window_, std::move(v), t);
  }
  Segment minus(const Segment& other) const { return plus(other, -1.0); }

  /// Resamples onto a different step by linear interpolation.
  Segment resampled(double new_dt) const {
    if (std::abs(new_dt - dt_) < 1e-15) return *this;
    const double w = std::floor(window_ / new_dt + 1e-9) * new_dt;
    return from_function(dim_, new_dt, w, [&](double th) { return eval(th); }, tail_);
  }

  void check_same_grid(const Segment& other) const {
    require(dim_ == other.dim_ && n_ == other.n_ && std::abs(dt_ - other.dt_) < 1e-15,
            "segments live on different grids");
  }

 private:
  int dim_ = 1;
  double dt_ = 1.0;
  double window_ = 1.0;
  std::size_t n_ = 0;
  TailMode tail_ = TailMode::constant_extension;
  std::vector<double> values_;
};

/// ||xi||_r = sup_{theta<=0} e^{r theta}|xi(theta)|, evaluated on the grid.
/// Off-grid points of the linear interpolant are dominated by the larger of the
/// two neighbouring grid candidates times e^{r dt}, so the grid maximum is
/// exact up to a factor 1 + O(r dt) for paths that are not piecewise constant.
inline double weighted_norm(const Segment& seg, double r) {
  require(r > 0, "weighted norm needs r > 0");
  double best = seg.tail_weighted_sup(r);
  for (std::size_t k = 0; k < seg.points(); ++k) {
    double sq = 0.0;
    for (int i = 0; i < seg.dim(); ++i) {
      const double x = seg.component(k, i);
      if (!std::isfinite(x)) throw NonFiniteSample(k, "weighted_norm");
      sq += x * x;
    }
    best = std::max(best, std::exp(r * seg.theta(k)) * std::sqrt(sq));
  }
  return best;
}

/// Norm of the concatenated R^{d1+d2+...}-valued history of several blocks.
inline double joint_weighted_norm(const std::vector<Segment>& blocks, double r) {
  require(!blocks.empty(), "empty block list");
  double tail_sq = 0.0;
  for (const auto& b : blocks) tail_sq += b.tail_value().squaredNorm();
  double best = std::exp(-r * blocks[0].window()) * std::sqrt(tail_sq);
  for (std::size_t k = 0; k < blocks[0].points(); ++k) {
    double sq = 0.0;
    for (const auto& b : blocks) sq += b.at_lag(k).squaredNorm();
    best = std::max(best, std::exp(r * blocks[0].theta(k)) * std::sqrt(sq));
  }
  return best;
}

/// Running ||X_t||_r along a forward path, using
/// ||X_t||_r = max(e^{-rt}||X_0||_r, e^{-rt} sup_{0<=s<=t} e^{rs}|X(s)|)
/// with the supremum kept as a logarithm so that e^{rs} never overflows.
class NormTracker {
 public:
  NormTracker() = default;
  NormTracker(double r, double init_norm, double t0 = 0.0)
      : r_(r), t_(t0), t0_(t0), init_norm_(init_norm) {
    require(r > 0, "norm tracker needs r > 0");
    require(init_norm >= 0 && std::isfinite(init_norm), "initial norm must be finite");
  }

  double rate() const { return r_; }
  double time() const { return t_; }
  double log_running_max() const { return m_; }
  double init_norm() const { return init_norm_; }

  double norm() const { return norm_at(t_); }

  /// Advances to t_new with forward sample x_new and returns ||X_{t_new}||_r.
  double advance(double t_new, const Vec& x_new) {
    if (t_new < t_) throw ConfigError("norm tracker: time regression");
    t_ = t_new;
    double mag = x_new.norm();
    if (std::isinf(mag) && x_new.allFinite()) mag = x_new.stableNorm();  // squared norm overflowed
    if (mag > 0.0) m_ = std::max(m_, r_ * (t_new - t0_) + std::log(mag));
    return norm();
  }

 private:
  double norm_at(double t) const {
    const double elapsed = t - t0_;
    const double a = init_norm_ > 0.0 ? std::log(init_norm_) : -kInf;
    const double top = std::max(a, m_);
    return top == -kInf ? 0.0 : std::exp(top - r_ * elapsed);
  }

  static constexpr double kInf = std::numeric_limits<double>::infinity();
  double r_ = 1.0;
  double t_ = 0.0;
  double t0_ = 0.0;
  double m_ = -kInf;
  double init_norm_ = 0.0;
};

/// Free-function form of NormTracker::advance.
inline std::pair<NormTracker, double> tracker_advance(NormTracker tr, double t_new, const Vec& x_new) {
  const double n = tr.advance(t_new, x_new);
  return {tr, n};
}

using Integrand = std::function<Vec(const Vec&)>;

inline Integrand identity_integrand() {
  return [](const Vec& x) { return x; };
}

/// I = int_{-inf}^0 e^{kappa theta} g(xi(theta)) dtheta, advanced by the exact
/// solution of dI/dt = g(X(t)) - kappa I with g(X) frozen at the new sample.
struct FadingIntegralState {
  double kappa = 1.0;
  Vec value;
  Integrand g = identity_integrand();

  FadingIntegralState() = default;
  FadingIntegralState(double kappa_, double r, Vec initial, Integrand g_ = identity_integrand())
      : kappa(kappa_), value(std::move(initial)), g(std::move(g_)) {
    require(kappa_ > r, "fading kernel rate must exceed the memory rate r");
  }
};

inline FadingIntegralState fading_step(FadingIntegralState st, const Vec& x_new, double dt) {
  const double decay = std::exp(-st.kappa * dt);
  st.value = decay * st.value + (-std::expm1(-st.kappa * dt) / st.kappa) * st.g(x_new);
  return st;
}

/// Exact integral of e^{kappa theta} against the piecewise-linear interpolant of
/// g(xi) over the window, plus the closed-form tail g(c) e^{-kappa T}/kappa.
inline Vec fading_quadrature(const Segment& seg, double kappa, const Integrand& g) {
  const double h = seg.dt();
  Vec acc = zeros(seg.dim());
  Vec f_hi = g(seg.at_lag(0));  // value at the right end of the current interval
  for (std::size_t k = 0; k < seg.steps(); ++k) {
    const Vec f_lo = g(seg.at_lag(k + 1));
    const double u = seg.theta(k + 1);
    const double e0 = std::exp(kappa * u);
    const double e1 = std::exp(kappa * (u + h));
    const double base = (e1 - e0) / kappa;
    const double slope = h * e1 / kappa - (e1 - e0) / (kappa * kappa);
    acc += base * f_lo + ((f_hi - f_lo) / h) * slope;
    f_hi = f_lo;
  }
  if (seg.tail_mode() == TailMode::constant_extension)
    acc += g(seg.at_lag(seg.steps())) * (std::exp(-kappa * seg.window()) / kappa);
  return acc;
}

inline FadingIntegralState init_fading_from_segment(const Segment& seg, double kappa, double r,
                                                    Integrand g = identity_integrand()) {
  require(kappa > r, "fading kernel rate must exceed the memory rate r");
  Vec v = fading_quadrature(seg, kappa, g);
  return FadingIntegralState(kappa, r, std::move(v), std::move(g));
}

}  // namespace sfde

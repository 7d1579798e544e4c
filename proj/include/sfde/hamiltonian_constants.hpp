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

// Constants of the stochastic hamiltonian coupling: the Gamma-function
// constant Lambda(p, alpha), its minimizer, mu(p0) and the lower bound on the
// coupling strength lambda, plus the Lyapunov function V and its sandwich.

#include "sfde/types.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace sfde {

/// log Lambda(p, alpha) for p > 2 and 1/p < alpha < 1/2.
inline double log_lambda_p_alpha(double p, double alpha) {
  if (!(p > 2.0) || !std::isfinite(p)) throw DomainError("Lambda(p, alpha) needs p > 2, got " + std::to_string(p));
  if (!(alpha > 1.0 / p && alpha < 0.5))
    throw DomainError("Lambda(p, alpha) needs 1/p < alpha < 1/2, got alpha = " + std::to_string(alpha));
  const double ln2 = std::log(2.0);
  const double a = (1.0 + p) * std::log(p) - ln2 - (p - 1.0) * std::log(p - 1.0);
  const double b = std::lgamma(1.0 - 2.0 * alpha) - (1.0 - 2.0 * alpha) * ln2;
  const double c = (p * alpha - 1.0) * std::log1p(-1.0 / p);
  const double d = (p - 1.0) * std::lgamma((p * alpha - 1.0) / (p - 1.0));
  return 0.5 * p * a + 0.5 * p * b + c + d;
}

inline double lambda_p_alpha(double p, double alpha) { return std::exp(log_lambda_p_alpha(p, alpha)); }

struct HamiltonianConstants {
  double p0 = 0.0;
  double alpha0 = 0.0;
  double lambda_min = 0.0;  // Lambda(p0, alpha0)
  double mu = 0.0;
  double threshold = 0.0;
  double beta = 0.0;
  double c_beta = 0.0;
};

struct LambdaSearchGrid {
  double p_max = 40.0;
  int p_points = 120;
  int alpha_points = 120;
  double tolerance = 1e-8;
};

inline double c_beta(double beta) { return (1.0 + beta + 2.0 * beta * beta) / 2.0; }

/// V(x, y) = (1/2 + beta^2)|x|^2 + |y|^2/2 + beta <x, y>.
inline double lyapunov_v(const Vec& x, const Vec& y, double beta) {
  return (0.5 + beta * beta) * x.squaredNorm() + 0.5 * y.squaredNorm() + beta * x.dot(y);
}

inline double mu_p(double p, double lambda_value, double l1, double l2) {
  return std::pow(2.0, 3.0 * p - 1.0) *
         (std::pow(l1 + l2 / 2.0, p) * std::pow(1.0 - 1.0 / p, p - 1.0) + lambda_value * std::pow(l2, p / 2.0));
}

inline double lambda_threshold(double mu, double p, double r, double beta) {
  return r + (1.0 + beta + 2.0 * beta * beta) / (2.0 * beta) * std::pow(mu / (2.0 * p * r), 2.0 / (p - 2.0));
}

namespace hc_detail {

// alpha in (1/p, 1/2) parametrized by s in (0, 1)
inline double alpha_of(double p, double s) { return 1.0 / p + s * (0.5 - 1.0 / p); }

inline double objective(double p, double s) {
  if (!(p > 2.0) || !(s > 0.0 && s < 1.0)) return std::numeric_limits<double>::infinity();
  return log_lambda_p_alpha(p, alpha_of(p, s));
}

// Golden-section minimization on [lo, hi].
template <class F>
double golden(F&& f, double lo, double hi, double tol) {
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - g * (b - a), d = a + g * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - g * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + g * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace hc_detail

/// Minimizer of Lambda over the admissible region: log-spaced grid in p - 2
/// over (0, p_max - 2] times a uniform grid in alpha, followed by coordinate
/// descent until both coordinates move by less than the tolerance.
inline std::pair<double, double> minimize_lambda(const LambdaSearchGrid& grid = {}) {
  require(grid.p_max > 2.0 && grid.p_points >= 2 && grid.alpha_points >= 1, "empty (p, alpha) search grid");
  double best = std::numeric_limits<double>::infinity(), bp = 0, bs = 0;
  const double lo = std::log(1e-3), hi = std::log(grid.p_max - 2.0);
  for (int i = 0; i < grid.p_points; ++i) {
    const double p = 2.0 + std::exp(lo + (hi - lo) * i / (grid.p_points - 1));
    for (int j = 0; j < grid.alpha_points; ++j) {
      const double s = (j + 0.5) / grid.alpha_points;
      const double v = hc_detail::objective(p, s);
      if (v < best) {
        best = v;
        bp = p;
        bs = s;
      }
    }
  }
  if (!std::isfinite(best)) throw ConfigError("no feasible (p, alpha) point on the search grid");
  double p = bp, alpha = hc_detail::alpha_of(bp, bs);
  // refine in (p, alpha) directly
  for (int it = 0; it < 200; ++it) {
    const double p_old = p, a_old = alpha;
    alpha = hc_detail::golden([&](double a) {
      return (a > 1.0 / p && a < 0.5) ? log_lambda_p_alpha(p, a) : std::numeric_limits<double>::infinity();
    }, 1.0 / p + 1e-12, 0.5 - 1e-12, grid.tolerance * 1e-2);
    p = hc_detail::golden([&](double q) {
      return (q > 2.0 && alpha > 1.0 / q) ? log_lambda_p_alpha(q, alpha) : std::numeric_limits<double>::infinity();
    }, std::max(2.0 + 1e-12, 1.0 / alpha + 1e-12), grid.p_max, grid.tolerance * 1e-2);
    if (std::abs(p - p_old) < grid.tolerance && std::abs(alpha - a_old) < grid.tolerance) break;
  }
  return {p, alpha};
}

inline HamiltonianConstants hamiltonian_constants(double l1, double l2, double beta, double r,
                                                  const LambdaSearchGrid& grid = {}) {
  require(l1 >= 0 && l2 >= 0, "L1 and L2 must be nonnegative");
  require(beta > 0, "beta must be positive");
  require(r > 0, "r must be positive");
  HamiltonianConstants hc;
  const auto [p, alpha] = minimize_lambda(grid);
  hc.p0 = p;
  hc.alpha0 = alpha;
  hc.lambda_min = lambda_p_alpha(p, alpha);
  hc.mu = mu_p(p, hc.lambda_min, l1, l2);
  hc.threshold = lambda_threshold(hc.mu, p, r, beta);
  hc.beta = beta;
  hc.c_beta = c_beta(beta);
  return hc;
}

}  // namespace sfde

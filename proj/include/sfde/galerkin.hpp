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

// Spectral Galerkin truncation of a semilinear SPDE with memory
//   dX = (A X + b(X_t)) dt + sigma(X_t) dW
// onto the first N eigenmodes of -A. The result is an ordinary
// non-degenerate model on R^N.

#include "sfde/model.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace sfde {

struct GalerkinSpec {
  int modes = 1;
  // Either an explicit eigenvalue list or the law lambda_i = scale * i^exponent.
  std::vector<double> eigenvalues;
  std::optional<double> law_scale;
  std::optional<double> law_exponent;
  double alpha = 0.5;
  double r = 1.0;

  // Nonlinearity b_N(xi)_i = (amplitude / i) tanh(source(xi)_i).
  double amplitude = 0.0;
  Source source = Source::point();

  // sigma_N(xi) = sigma0 Id + epsilon tanh(source(xi)_1) e_1 e_1^T.
  double sigma0 = 1.0;
  double epsilon = 0.0;

  std::vector<double> resolved_eigenvalues() const {
    if (!eigenvalues.empty()) {
      require(static_cast<int>(eigenvalues.size()) >= modes, "fewer eigenvalues than modes");
      return {eigenvalues.begin(), eigenvalues.begin() + modes};
    }
    require(law_scale && law_exponent, "galerkin spec needs eigenvalues or an eigenvalue law");
    std::vector<double> out(modes);
    for (int i = 0; i < modes; ++i) out[i] = *law_scale * std::pow(static_cast<double>(i + 1), *law_exponent);
    return out;
  }
};

/// Outcome of the summability check sum_i lambda_i^{-alpha} < infinity.
struct SpectralCheck {
  bool accepted = false;
  double partial_sum = 0.0;  // over the truncated modes
  std::string reason;
};

inline SpectralCheck check_spectrum(const GalerkinSpec& g) {
  SpectralCheck out;
  if (!(g.alpha > 0 && g.alpha < 1)) {
    out.reason = "alpha must lie in (0,1)";
    return out;
  }
  const auto ev = g.resolved_eigenvalues();
  double prev = 0.0;
  for (std::size_t i = 0; i < ev.size(); ++i) {
    if (!(ev[i] > 0) || !std::isfinite(ev[i])) {
      out.reason = "eigenvalue " + std::to_string(i + 1) + " is not positive";
      return out;
    }
    if (ev[i] < prev) {
      out.reason = "eigenvalues must be nondecreasing";
      return out;
    }
    prev = ev[i];
    out.partial_sum += std::pow(ev[i], -g.alpha);
  }
  if (g.eigenvalues.empty()) {
    // p-series test for scale * i^q: sum i^{-q alpha} converges iff q alpha > 1
    if (*g.law_exponent * g.alpha > 1.0) {
      out.accepted = true;
    } else {
      out.reason = "sum of lambda_i^-alpha diverges for this eigenvalue law";
    }
    return out;
  }
  out.accepted = true;
  out.reason = "explicit finite spectrum; summability of the full sequence not checked";
  return out;
}

inline ModelSpec galerkin_truncate(const GalerkinSpec& g) {
  require(g.modes >= 1, "galerkin truncation needs at least one mode");
  require(g.modes <= kMaxDim, "galerkin truncation supports at most " + std::to_string(kMaxDim) + " modes");
  require(g.r > 0, "memory rate r must be positive");
  const SpectralCheck sc = check_spectrum(g);
  if (!sc.accepted) throw ConfigError("galerkin spectrum rejected: " + sc.reason);
  const auto ev = g.resolved_eigenvalues();
  const int n = g.modes;

  VectorFunctional b(n);
  Mat diag = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i) diag(i, i) = -ev[i];
  b.add(Term::linear(diag, Source::point()));
  double amp_max = 0.0;
  if (g.amplitude != 0.0) {
    Vec amp(n);
    for (int i = 0; i < n; ++i) amp[i] = g.amplitude / (i + 1);
    amp_max = std::abs(g.amplitude);
    b.add(Term::saturated(amp, Mat::Identity(n, n), g.source));
  }

  std::vector<DiffusionFunctional::Modulation> mods;
  if (g.epsilon != 0.0) {
    Vec w = zeros(n);
    w[0] = 1.0;
    Mat e11 = Mat::Zero(n, n);
    e11(0, 0) = 1.0;
    mods.push_back({g.epsilon, w, Source::point(), e11});
  }
  DiffusionFunctional s(g.sigma0 * Mat::Identity(n, n), std::move(mods));

  DeclaredConstants k;
  const double lip_b = amp_max * g.source.lipschitz(g.r);
  k.L0 = lip_b + std::abs(g.epsilon);
  // -diag(lambda) only helps the one-sided bound
  k.K1 = std::max(2.0 * lip_b, 1e-12);
  k.K2 = g.epsilon * g.epsilon;
  if (g.sigma0 > std::abs(g.epsilon)) {
    k.sigma_max = g.sigma0 + std::abs(g.epsilon);
    k.sigma_inv_max = 1.0 / (g.sigma0 - std::abs(g.epsilon));
  }
  ModelSpec m(ModelKind::nondegenerate, n, g.r, std::move(b), std::move(s), k, std::nullopt, 1.0, "galerkin");
  GalerkinInfo info;
  info.eigenvalues = ev;
  info.alpha = g.alpha;
  info.law_scale = g.law_scale;
  info.law_exponent = g.law_exponent;
  m.set_galerkin(std::move(info));
  return m;
}

}  // namespace sfde

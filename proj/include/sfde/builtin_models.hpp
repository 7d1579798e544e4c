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

// Ready-made models with analytically declared assumption constants.

#include "sfde/model.hpp"

#include <cmath>

namespace sfde::models {

/// b(xi) = -a xi(0) + c I_kappa(xi),  sigma(xi) = (sigma0 + eps tanh(xi(0)_1)) Id.
struct LinearParams {
  int dim = 1;
  double r = 1.0;
  double a = 1.0;
  double c = 0.0;
  double kappa = 2.0;
  double sigma0 = 1.0;
  double epsilon = 0.0;
};

inline DiffusionFunctional tanh_modulated_identity(int d, double sigma0, double eps, int block = 0) {
  std::vector<DiffusionFunctional::Modulation> mods;
  if (eps != 0.0) {
    Vec w = zeros(d);
    w[0] = 1.0;
    mods.push_back({eps, w, Source::point(block), Mat::Identity(d, d)});
  }
  return DiffusionFunctional(sigma0 * Mat::Identity(d, d), std::move(mods));
}

inline ModelSpec linear(const LinearParams& p) {
  const int d = p.dim;
  VectorFunctional b(d);
  b.add(Term::linear(-p.a * Mat::Identity(d, d), Source::point()));
  if (p.c != 0.0) b.add(Term::linear(p.c * Mat::Identity(d, d), Source::fading(p.kappa)));
  DiffusionFunctional s = tanh_modulated_identity(d, p.sigma0, p.epsilon);

  DeclaredConstants k;
  const double lip_memory = p.c != 0.0 ? std::abs(p.c) / (p.kappa - p.r) : 0.0;
  k.K1 = 2.0 * (std::abs(p.a) + lip_memory);
  // ||Delta sigma||_HS = |eps| |Delta tanh| sqrt(d) <= |eps| sqrt(d) |Delta xi(0)|
  k.K2 = p.epsilon * p.epsilon * d;
  if (p.sigma0 > std::abs(p.epsilon)) {
    k.sigma_max = p.sigma0 + std::abs(p.epsilon);
    k.sigma_inv_max = 1.0 / (p.sigma0 - std::abs(p.epsilon));
  }
  return ModelSpec(ModelKind::nondegenerate, d, p.r, std::move(b), std::move(s), k, std::nullopt, 1.0, "linear");
}

/// b = 0, sigma = 0: every path stays at xi(0).
inline ModelSpec zero(int d, double r) {
  DeclaredConstants k;
  k.K1 = 0.0;
  k.K2 = 0.0;
  return ModelSpec(ModelKind::nondegenerate, d, r, VectorFunctional(d), DiffusionFunctional::scalar(d, 0.0), k,
                   std::nullopt, 1.0, "zero");
}

/// Linear drift and diffusion as above with neutral term
///   G(xi) = g_delay xi(-tau) + g_fading kappa_G I_{kappa_G}(xi).
struct NeutralParams {
  LinearParams base;
  double g_delay = 0.0;
  double tau = 0.5;
  double g_fading = 0.0;
  double kappa_g = 2.0;
};

inline ModelSpec neutral(const NeutralParams& p) {
  ModelSpec lin = linear(p.base);
  const int d = p.base.dim;
  const double r = p.base.r;
  VectorFunctional g(d);
  double delta = 0.0;
  if (p.g_delay != 0.0) {
    g.add(Term::linear(p.g_delay * Mat::Identity(d, d), Source::delay(p.tau)));
    delta += std::abs(p.g_delay) * std::exp(r * p.tau);
  }
  if (p.g_fading != 0.0) {
    g.add(Term::linear(p.g_fading * p.kappa_g * Mat::Identity(d, d), Source::fading(p.kappa_g)));
    delta += std::abs(p.g_fading) * p.kappa_g / (p.kappa_g - r);
  }
  DeclaredConstants k = lin.constants();
  const double lip_b = lin.drift_functional().lipschitz(r);
  // G == 0 is allowed and degenerates to the non-neutral model; keep delta positive.
  k.delta = delta > 0.0 ? delta : 1e-12;
  k.L = 2.0 * (1.0 + *k.delta) * lip_b;
  return ModelSpec(ModelKind::neutral, d, r, lin.drift_functional(), lin.diffusion_functional(), k, std::move(g),
                   1.0, "neutral");
}

/// Stochastic Hamiltonian system
///   dX = lambda Y dt,
///   dY = (-k X(t) - gamma Y(t) + c I_kappa(X_t)) dt + (sigma0 + eps tanh(Y(t)_1)) dW.
struct HamiltonianParams {
  int dim = 1;
  double r = 0.5;
  double lambda = 1.0;
  double k = 1.0;
  double gamma = 1.0;
  double c = 0.1;
  double kappa = 1.5;
  double sigma0 = 1.0;
  double epsilon = 0.0;
  double beta = 1.0;
};

inline ModelSpec hamiltonian(const HamiltonianParams& p) {
  const int d = p.dim;
  VectorFunctional b(d);
  b.add(Term::linear(-p.k * Mat::Identity(d, d), Source::point(0)));
  b.add(Term::linear(-p.gamma * Mat::Identity(d, d), Source::point(1)));
  if (p.c != 0.0) b.add(Term::linear(p.c * Mat::Identity(d, d), Source::fading(p.kappa, 0)));
  DiffusionFunctional s = tanh_modulated_identity(d, p.sigma0, p.epsilon, 1);

  // <beta dx + dy, -k dx - gamma dy> is the quadratic form of
  // [[-beta k, -(k + beta gamma)/2], [-(k + beta gamma)/2, -gamma]]; only its
  // positive part contributes. The memory term adds |c|/(kappa-r) (beta + 1/2).
  const double a11 = -p.beta * p.k, a22 = -p.gamma, a12 = -(p.k + p.beta * p.gamma) / 2.0;
  const double top = 0.5 * (a11 + a22) + std::sqrt(0.25 * (a11 - a22) * (a11 - a22) + a12 * a12);
  double l1 = std::max(top, 0.0);
  if (p.c != 0.0) l1 += std::abs(p.c) / (p.kappa - p.r) * (p.beta + 0.5);
  // the declared constant must be positive
  l1 = std::max(l1, 1e-12);

  DeclaredConstants kc;
  kc.beta = p.beta;
  kc.L1 = l1;
  kc.L2 = p.epsilon * p.epsilon * d;
  if (p.sigma0 > std::abs(p.epsilon)) {
    kc.sigma_max = p.sigma0 + std::abs(p.epsilon);
    kc.sigma_inv_max = 1.0 / (p.sigma0 - std::abs(p.epsilon));
  }
  return ModelSpec(ModelKind::hamiltonian, d, p.r, std::move(b), std::move(s), kc, std::nullopt, p.lambda,
                   "hamiltonian");
}

}  // namespace sfde::models

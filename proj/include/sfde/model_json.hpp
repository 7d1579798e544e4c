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

// JSON model definitions.
//
//   {
//     "kind": "nondegenerate" | "neutral" | "hamiltonian" | "galerkin",
//     "dimension": 1, "r": 1.0, "lambda": 1.0, "name": "...",
//     "drift": [ term, ... ],
//     "diffusion": { "base": matrix, "modulations": [ {"epsilon", "weights", "source", "matrix"} ] },
//     "neutral": [ term, ... ],
//     "galerkin": { "modes", "eigenvalues" | "law": {"scale", "exponent"}, "alpha",
//                   "amplitude", "source", "sigma0", "epsilon" },
//     "constants": { "K1", "K2", "sigma_max", "sigma_inv_max", "delta", "L", "L0", "L1", "L2", "beta" }
//   }
//
// term:   {"type": "linear", "matrix": M, "source": S}
//         {"type": "tanh", "amplitude": v, "matrix": M, "offset": v, "source": S}
//         {"type": "constant", "value": v}
// source: {"kind": "point" | "delay" | "fading", "tau": .., "kappa": .., "block": "x" | "y"}
// matrix: a number (multiple of the identity), a list (diagonal) or a list of rows.
//
// Alternatively {"builtin": "linear" | "zero" | "neutral" | "hamiltonian", ...parameters}
// instantiates one of the ready-made families with analytic constants.
// Constants left out of a generic definition are filled from the Lipschitz
// bounds of the functional family.

#include "sfde/builtin_models.hpp"
#include "sfde/galerkin.hpp"

#include <json.hpp>

#include <fstream>
#include <string>

namespace sfde {

namespace json_detail {

using nlohmann::json;

inline double num(const json& j, const char* key, double fallback) {
  return j.contains(key) ? j.at(key).get<double>() : fallback;
}

inline Mat parse_matrix(const json& j, int d) {
  if (j.is_number()) return j.get<double>() * Mat::Identity(d, d);
  require(j.is_array(), "matrix must be a number, a diagonal list or a list of rows");
  require(static_cast<int>(j.size()) == d, "matrix has " + std::to_string(j.size()) + " rows, expected " +
                                               std::to_string(d));
  Mat m = Mat::Zero(d, d);
  if (!j.empty() && j[0].is_number()) {
    for (int i = 0; i < d; ++i) m(i, i) = j[i].get<double>();
    return m;
  }
  for (int i = 0; i < d; ++i) {
    require(j[i].is_array() && static_cast<int>(j[i].size()) == d, "matrix row has wrong length");
    for (int k = 0; k < d; ++k) m(i, k) = j[i][k].get<double>();
  }
  return m;
}

inline Vec parse_vector(const json& j, int d) {
  if (j.is_number()) return Vec::Constant(d, j.get<double>());
  require(j.is_array() && static_cast<int>(j.size()) == d, "vector has wrong length");
  Vec v(d);
  for (int i = 0; i < d; ++i) v[i] = j[i].get<double>();
  return v;
}

inline Source parse_source(const json& j) {
  if (j.is_null()) return Source::point();
  const std::string kind = j.value("kind", std::string("point"));
  int block = 0;
  if (j.contains("block")) {
    const auto& b = j.at("block");
    if (b.is_string()) {
      const auto s = b.get<std::string>();
      require(s == "x" || s == "y", "source block must be \"x\" or \"y\"");
      block = s == "y" ? 1 : 0;
    } else {
      block = b.get<int>();
    }
  }
  if (kind == "point") return Source::point(block);
  if (kind == "delay") return Source::delay(j.at("tau").get<double>(), block);
  if (kind == "fading") return Source::fading(j.at("kappa").get<double>(), block);
  throw ConfigError("unknown source kind '" + kind + "'");
}

inline Term parse_term(const json& j, int d) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "constant") return Term::constant(parse_vector(j.at("value"), d));
  const Source src = parse_source(j.contains("source") ? j.at("source") : json());
  const Mat m = parse_matrix(j.contains("matrix") ? j.at("matrix") : json(1.0), d);
  if (type == "linear") return Term::linear(m, src);
  if (type == "tanh") {
    const Vec amp = parse_vector(j.contains("amplitude") ? j.at("amplitude") : json(1.0), d);
    const Vec off = j.contains("offset") ? parse_vector(j.at("offset"), d) : zeros(d);
    return Term::saturated(amp, m, src, off);
  }
  throw ConfigError("unknown term type '" + type + "'");
}

inline VectorFunctional parse_terms(const json& j, int d) {
  VectorFunctional f(d);
  if (j.is_null()) return f;
  require(j.is_array(), "term list must be an array");
  for (const auto& t : j) f.add(parse_term(t, d));
  return f;
}

inline DiffusionFunctional parse_diffusion(const json& j, int d) {
  if (j.is_null()) return DiffusionFunctional::scalar(d, 1.0);
  if (j.is_number()) return DiffusionFunctional::scalar(d, j.get<double>());
  const Mat base = parse_matrix(j.contains("base") ? j.at("base") : json(1.0), d);
  std::vector<DiffusionFunctional::Modulation> mods;
  if (j.contains("modulations")) {
    for (const auto& m : j.at("modulations")) {
      DiffusionFunctional::Modulation mod;
      mod.epsilon = m.at("epsilon").get<double>();
      if (m.contains("weights")) {
        mod.weights = parse_vector(m.at("weights"), d);
      } else {
        mod.weights = zeros(d);
        mod.weights[0] = 1.0;
      }
      mod.source = parse_source(m.contains("source") ? m.at("source") : json());
      mod.matrix = parse_matrix(m.contains("matrix") ? m.at("matrix") : json(1.0), d);
      mods.push_back(std::move(mod));
    }
  }
  return DiffusionFunctional(base, std::move(mods));
}

inline void read_constants(const json& j, DeclaredConstants& k) {
  if (j.is_null()) return;
  auto rd = [&](const char* key, std::optional<double>& dst) {
    if (j.contains(key)) dst = j.at(key).get<double>();
  };
  rd("K1", k.K1);
  rd("K2", k.K2);
  rd("sigma_max", k.sigma_max);
  rd("sigma_inv_max", k.sigma_inv_max);
  rd("delta", k.delta);
  rd("L", k.L);
  rd("L0", k.L0);
  rd("L1", k.L1);
  rd("L2", k.L2);
  rd("beta", k.beta);
}

inline models::LinearParams linear_params(const json& j) {
  models::LinearParams p;
  p.dim = j.value("dimension", 1);
  p.r = num(j, "r", p.r);
  p.a = num(j, "a", p.a);
  p.c = num(j, "c", p.c);
  p.kappa = num(j, "kappa", p.kappa);
  p.sigma0 = num(j, "sigma0", p.sigma0);
  p.epsilon = num(j, "epsilon", p.epsilon);
  return p;
}

inline GalerkinSpec galerkin_spec(const json& g, double r) {
  GalerkinSpec s;
  s.r = r;
  s.modes = g.at("modes").get<int>();
  if (g.contains("eigenvalues")) s.eigenvalues = g.at("eigenvalues").get<std::vector<double>>();
  if (g.contains("law")) {
    s.law_scale = num(g.at("law"), "scale", 1.0);
    s.law_exponent = num(g.at("law"), "exponent", 2.0);
  }
  s.alpha = num(g, "alpha", s.alpha);
  s.amplitude = num(g, "amplitude", 0.0);
  if (g.contains("source")) s.source = parse_source(g.at("source"));
  s.sigma0 = num(g, "sigma0", 1.0);
  s.epsilon = num(g, "epsilon", 0.0);
  return s;
}

inline ModelSpec builtin_from_json(const json& j) {
  const std::string b = j.at("builtin").get<std::string>();
  if (b == "linear") return models::linear(linear_params(j));
  if (b == "zero") return models::zero(j.value("dimension", 1), num(j, "r", 1.0));
  if (b == "neutral") {
    models::NeutralParams p;
    p.base = linear_params(j);
    p.g_delay = num(j, "g_delay", 0.0);
    p.tau = num(j, "tau", p.tau);
    p.g_fading = num(j, "g_fading", 0.0);
    p.kappa_g = num(j, "kappa_g", p.kappa_g);
    return models::neutral(p);
  }
  if (b == "hamiltonian") {
    models::HamiltonianParams p;
    p.dim = j.value("dimension", 1);
    p.r = num(j, "r", p.r);
    p.lambda = num(j, "lambda", p.lambda);
    p.k = num(j, "k", p.k);
    p.gamma = num(j, "gamma", p.gamma);
    p.c = num(j, "c", p.c);
    p.kappa = num(j, "kappa", p.kappa);
    p.sigma0 = num(j, "sigma0", p.sigma0);
    p.epsilon = num(j, "epsilon", p.epsilon);
    p.beta = num(j, "beta", p.beta);
    return models::hamiltonian(p);
  }
  throw ConfigError("unknown builtin model '" + b + "'");
}

// Constants implied by the functional family when not declared.
inline void fill_constants(const ModelSpec& m, DeclaredConstants& k) {
  const double r = m.r();
  const auto& b = m.drift_functional();
  const auto& s = m.diffusion_functional();
  if (!k.sigma_max) k.sigma_max = s.operator_bound();
  if (!k.sigma_inv_max) {
    const double lo = s.min_singular_bound();
    if (lo > 0) k.sigma_inv_max = 1.0 / lo;
  }
  switch (m.kind()) {
    case ModelKind::nondegenerate:
      if (!k.K1) k.K1 = std::max(2.0 * b.lipschitz(r), 1e-12);
      if (!k.K2) k.K2 = std::max(std::pow(s.hs_lipschitz(r), 2), 1e-12);
      break;
    case ModelKind::neutral: {
      if (!k.delta) k.delta = m.neutral_functional()->lipschitz(r);
      if (!k.L) k.L = std::max(2.0 * (1.0 + *k.delta) * b.lipschitz(r), 1e-12);
      if (!k.K2) k.K2 = std::max(std::pow(s.hs_lipschitz(r), 2), 1e-12);
      break;
    }
    case ModelKind::hamiltonian: {
      if (!k.beta) k.beta = 1.0;
      const double lx = b.lipschitz(r, 0), ly = b.lipschitz(r, 1);
      if (!k.L1) k.L1 = std::max(2.0 * std::max(*k.beta, 1.0) * std::max(lx, ly), 1e-12);
      const double hx = s.hs_lipschitz(r, 0), hy = s.hs_lipschitz(r, 1);
      if (!k.L2) k.L2 = hx * hx + hy * hy;
      break;
    }
  }
}

}  // namespace json_detail

inline ModelSpec model_from_json(const nlohmann::json& j) {
  using namespace json_detail;
  require(j.is_object(), "model definition must be a JSON object");
  ModelSpec m;
  if (j.contains("builtin")) {
    m = builtin_from_json(j);
    DeclaredConstants& k = m.constants();
    read_constants(j.contains("constants") ? j.at("constants") : json(), k);
  } else {
    require(j.contains("kind"), "model definition needs a kind");
    const std::string kind = j.at("kind").get<std::string>();
    const double r = j.at("r").get<double>();
    if (kind == "galerkin") {
      require(j.contains("galerkin"), "galerkin model needs a galerkin block");
      m = galerkin_truncate(galerkin_spec(j.at("galerkin"), r));
      read_constants(j.contains("constants") ? j.at("constants") : json(), m.constants());
    } else {
      ModelKind mk;
      if (kind == "nondegenerate") mk = ModelKind::nondegenerate;
      else if (kind == "neutral") mk = ModelKind::neutral;
      else if (kind == "hamiltonian") mk = ModelKind::hamiltonian;
      else throw ConfigError("unknown model kind '" + kind + "'");
      const int d = j.at("dimension").get<int>();
      require(d >= 1 && d <= kMaxDim, "model dimension out of range");
      VectorFunctional b = parse_terms(j.contains("drift") ? j.at("drift") : json(), d);
      DiffusionFunctional s = parse_diffusion(j.contains("diffusion") ? j.at("diffusion") : json(), d);
      std::optional<VectorFunctional> g;
      if (mk == ModelKind::neutral) g = parse_terms(j.contains("neutral") ? j.at("neutral") : json(), d);
      DeclaredConstants k;
      read_constants(j.contains("constants") ? j.at("constants") : json(), k);
      m = ModelSpec(mk, d, r, std::move(b), std::move(s), k, std::move(g), num(j, "lambda", 1.0), kind);
      fill_constants(m, m.constants());
    }
  }
  if (j.contains("name")) m.set_name(j.at("name").get<std::string>());
  return m;
}

inline ModelSpec load_model(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open model file " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("model file " + path + ": " + e.what());
  }
  return model_from_json(j);
}

}  // namespace sfde

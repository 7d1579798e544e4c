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

// Randomized falsification of declared assumption constants. Each condition
// is a ratio of a difference quantity to a power of ||xi - eta||_r; the
// validator records the largest ratio seen over random segment pairs and the
// pair attaining it.

#include "sfde/galerkin.hpp"
#include "sfde/rng.hpp"

#include <json.hpp>

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace sfde {

/// Random segments on a fixed grid with ||.||_r at most max_norm.
class SegmentSampler {
 public:
  SegmentSampler(int dim, double r, double dt, double window, double max_norm = 10.0, std::uint64_t seed = 1)
      : dim_(dim), r_(r), dt_(dt), window_(window), max_norm_(max_norm), rng_(seed, 0x5A) {
    require(max_norm > 0, "sampler norm bound must be positive");
  }

  int dim() const { return dim_; }
  double r() const { return r_; }
  double dt() const { return dt_; }
  double window() const { return window_; }
  CounterRng& rng() { return rng_; }

  /// Random piecewise-linear path with a random growth profile into the past,
  /// rescaled to norm `target`.
  Segment random(double target) {
    const double spacing = pick({dt_, 0.25, 1.0, 4.0});
    const double growth = rng_.uniform(0.0, r_);
    const std::size_t n = static_cast<std::size_t>(std::llround(window_ / dt_));
    const std::size_t knots = static_cast<std::size_t>(std::ceil(window_ / spacing)) + 2;
    std::vector<Vec> kv(knots);
    for (auto& v : kv) v = rng_.normal_vec(dim_);
    std::vector<double> vals((n + 1) * dim_);
    for (std::size_t k = 0; k <= n; ++k) {
      const double s = static_cast<double>(k) * dt_;
      const double u = s / spacing;
      const auto j = static_cast<std::size_t>(std::floor(u));
      const double w = u - static_cast<double>(j);
      const Vec x = ((1 - w) * kv[j] + w * kv[j + 1]) * std::exp(growth * s);
      for (int i = 0; i < dim_; ++i) vals[k * dim_ + i] = x[i];
    }
    return normalized(Segment(dim_, dt_, window_, std::move(vals)), target);
  }

  Segment random() { return random(rng_.uniform(0.0, max_norm_)); }

  /// Perturbation located at theta = 0 (hat function of width dt).
  Segment spike(double target) {
    const Vec v = rng_.normal_vec(dim_);
    return normalized(Segment::from_function(dim_, dt_, window_,
                                             [&](double th) { return th > -0.5 * dt_ ? v : zeros(dim_); },
                                             TailMode::zero_extension),
                      target);
  }

  /// Perturbation u e^{-r theta}, which saturates the weight at every theta.
  Segment saturating(double target) {
    const Vec v = rng_.normal_vec(dim_);
    return normalized(Segment::from_function(dim_, dt_, window_,
                                             [&](double th) { return Vec(v * std::exp(-r_ * th)); }),
                      target);
  }

  Segment zero() const { return Segment::constant(zeros(dim_), dt_, window_); }

  /// Pair (a, b) for trial i, cycling through independent pairs, small random
  /// perturbations, present-time spikes and weight-saturating perturbations.
  std::pair<Segment, Segment> pair(std::size_t i) {
    Segment a = random();
    const double base = weighted_norm(a, r_);
    const double room = std::max(max_norm_ - base, 1e-3);
    switch (i % 4) {
      case 0: return {a, random()};
      case 1: return {a, clip(a.plus(random(std::min(room, rng_.uniform(1e-3, 1.0)))))};
      case 2: return {a, clip(a.plus(spike(std::min(room, rng_.uniform(1e-3, 2.0)))))};
      default: return {a, clip(a.plus(saturating(std::min(room, rng_.uniform(1e-3, 2.0)))))};
    }
  }

 private:
  double pick(std::initializer_list<double> opts) {
    const auto k = static_cast<std::size_t>(rng_.uniform() * opts.size());
    return *(opts.begin() + std::min(k, opts.size() - 1));
  }
  Segment normalized(const Segment& s, double target) const {
    const double n = weighted_norm(s, r_);
    return n > 0 ? s.scaled(target / n) : s;
  }
  Segment clip(const Segment& s) const {
    const double n = weighted_norm(s, r_);
    return n > max_norm_ ? s.scaled(max_norm_ / n) : s;
  }

  int dim_;
  double r_, dt_, window_, max_norm_;
  CounterRng rng_;
};

struct ConditionResult {
  std::string name;
  std::string description;
  double declared = 0.0;
  double max_ratio = 0.0;
  std::size_t evaluated = 0;
  std::size_t skipped = 0;  // degenerate 0/0 pairs
  bool pass = true;
  std::string note;
  std::optional<SystemSegment> witness_a, witness_b;
};

struct ValidationReport {
  std::string model;
  double r = 1.0;
  std::size_t trials = 0;
  double tolerance = 0.0;
  std::vector<ConditionResult> conditions;

  bool pass() const {
    for (const auto& c : conditions)
      if (!c.pass) return false;
    return true;
  }
  const ConditionResult* find(const std::string& n) const {
    for (const auto& c : conditions)
      if (c.name == n) return &c;
    return nullptr;
  }
};

namespace validate_detail {

struct Eval {
  Vec b;
  Mat sigma;
  Vec g;
  Vec x0, y0;
};

inline Eval evaluate(const ModelSpec& m, const SystemSegment& s) {
  const auto st = make_path_states(m, s, s[0].dt());
  const PathState* blk[2];
  detail::block_ptrs(st, blk);
  Eval e;
  e.b = m.drift(blk);
  e.sigma = m.diffusion(blk);
  if (m.kind() == ModelKind::neutral) e.g = m.neutral(blk);
  e.x0 = st[0].current();
  if (st.size() > 1) e.y0 = st[1].current();
  return e;
}

struct Tracker {
  ConditionResult res;
  void offer(double num, double den, const SystemSegment& a, const SystemSegment& b) {
    if (!(den > 1e-300)) {
      ++res.skipped;
      return;
    }
    ++res.evaluated;
    const double ratio = num / den;
    if (!std::isfinite(ratio)) throw ModelEvaluationError("validator ratio is not finite", den);
    if (!res.witness_a || ratio > res.max_ratio) {
      res.max_ratio = ratio;
      res.witness_a = a;
      res.witness_b = b;
    }
  }
};

}  // namespace validate_detail

/// Grid used by the validator for a model: dt = 0.05 unless the model's delays
/// need a finer step, window chosen so that e^{-r T} <= 1e-8.
inline SegmentSampler default_sampler(const ModelSpec& m, std::uint64_t seed = 1) {
  const double dt = 0.05;
  return SegmentSampler(m.dim(), m.r(), dt, std::max(default_window(m.r(), dt), m.max_delay() + dt), 10.0, seed);
}

inline ValidationReport validate_assumptions(const ModelSpec& m, SegmentSampler& sampler, std::size_t trials) {
  using validate_detail::Tracker;
  require(trials >= 1, "validator needs at least one trial");
  require(sampler.dim() == m.dim(), "sampler dimension does not match the model");
  const double r = m.r();
  const auto& k = m.constants();
  ValidationReport rep;
  rep.model = m.name();
  rep.trials = trials;
  rep.r = r;
  // Linear interpolation between grid samples can exceed the grid norm by at
  // most a factor e^{r dt}.
  rep.tolerance = std::expm1(r * sampler.dt());

  const bool ham = m.kind() == ModelKind::hamiltonian;
  const bool neu = m.kind() == ModelKind::neutral;
  const bool gal = m.galerkin().has_value();

  auto make = [](const char* n, const char* d, std::optional<double> v) {
    Tracker t;
    t.res.name = n;
    t.res.description = d;
    t.res.declared = v.value_or(std::numeric_limits<double>::quiet_NaN());
    if (!v) {
      t.res.pass = false;
      t.res.note = "constant not declared";
    }
    return t;
  };

  std::vector<Tracker> conds;
  if (ham) {
    conds.push_back(make("C1", "<beta dx(0) + dy(0), db> / (|dx|^2 + |dy|^2) <= L1", k.L1));
    conds.push_back(make("C2", "|d sigma|_HS^2 / (|dx|^2 + |dy|^2) <= L2", k.L2));
  } else if (neu) {
    conds.push_back(make("A1", "|dG| / |dxi| <= delta < 1", k.delta));
    conds.push_back(make("A2", "2 <dxi(0) - dG, db> / |dxi|^2 <= L", k.L));
    conds.push_back(make("H2", "|d sigma|_HS^2 / |dxi|^2 <= K2", k.K2));
  } else {
    conds.push_back(make("H1", "2 <dxi(0), db> / |dxi|^2 <= K1", k.K1));
    conds.push_back(make("H2", "|d sigma|_HS^2 / |dxi|^2 <= K2", k.K2));
    if (gal) conds.push_back(make("B2", "(|db_N| + |d sigma|_HS) / |dxi| <= L0", k.L0));
  }
  Tracker smax = make(ham ? "C3" : (gal ? "B3" : "H3"), "sup |sigma| <= sigma_max", k.sigma_max);
  Tracker sinv = make(ham ? "C3-inverse" : (gal ? "B3-inverse" : "H3-inverse"),
                      "sup |sigma^-1| <= sigma_inv_max", k.sigma_inv_max);
  if (neu && k.delta && !(*k.delta > 0 && *k.delta < 1)) {
    conds[0].res.pass = false;
    conds[0].res.note = "declared delta outside (0,1)";
  }

  std::vector<double> lam;
  if (gal) lam = m.galerkin()->eigenvalues;

  auto nonlinear = [&](const validate_detail::Eval& e) {
    Vec v = e.b;
    for (std::size_t i = 0; i < lam.size(); ++i) v[i] += lam[i] * e.x0[i];
    return v;
  };

  std::size_t singular = 0;
  auto check_sigma = [&](const Mat& s, const SystemSegment& seg) {
    Eigen::JacobiSVD<Mat> svd(s);
    const auto& sv = svd.singularValues();
    const double top = sv(0), bot = sv(sv.size() - 1);
    smax.offer(top, 1.0, seg, seg);
    if (bot > 0)
      sinv.offer(1.0 / bot, 1.0, seg, seg);
    else
      ++singular;
  };

  for (std::size_t t = 0; t < trials; ++t) {
    SystemSegment a, b;
    if (ham) {
      auto [x, xb] = sampler.pair(t);
      auto [y, yb] = sampler.pair(t + 1);
      a = SystemSegment(x, y);
      b = SystemSegment(xb, yb);
    } else {
      auto [x, y] = sampler.pair(t);
      a = SystemSegment(x);
      b = SystemSegment(y);
    }
    const auto ea = validate_detail::evaluate(m, a);
    const auto eb = validate_detail::evaluate(m, b);
    if (!ea.b.allFinite() || !eb.b.allFinite() || !ea.sigma.allFinite() || !eb.sigma.allFinite())
      throw ModelEvaluationError("coefficient is not finite on a sampled segment", weighted_norm(a[0], r));
    check_sigma(ea.sigma, a);
    check_sigma(eb.sigma, b);

    const Vec db = ea.b - eb.b;
    const double hs2 = (ea.sigma - eb.sigma).squaredNorm();
    if (ham) {
      const double nx = weighted_norm(a[0].minus(b[0]), r), ny = weighted_norm(a[1].minus(b[1]), r);
      const double den = nx * nx + ny * ny;
      const double beta = k.beta.value_or(1.0);
      conds[0].offer((beta * (ea.x0 - eb.x0) + (ea.y0 - eb.y0)).dot(db), den, a, b);
      conds[1].offer(hs2, den, a, b);
    } else {
      const double n = weighted_norm(a[0].minus(b[0]), r);
      const Vec dx0 = ea.x0 - eb.x0;
      if (neu) {
        const Vec dg = ea.g - eb.g;
        conds[0].offer(dg.norm(), n, a, b);
        conds[1].offer(2.0 * (dx0 - dg).dot(db), n * n, a, b);
        conds[2].offer(hs2, n * n, a, b);
      } else {
        conds[0].offer(2.0 * dx0.dot(db), n * n, a, b);
        conds[1].offer(hs2, n * n, a, b);
        if (gal) conds[2].offer((nonlinear(ea) - nonlinear(eb)).norm() + std::sqrt(hs2), n, a, b);
      }
    }
  }

  if (singular > 0 && sinv.res.pass) {
    sinv.res.pass = false;
    sinv.res.max_ratio = std::numeric_limits<double>::infinity();
    sinv.res.note = "sigma is singular on " + std::to_string(singular) + " sampled segments";
  }
  conds.push_back(std::move(smax));
  conds.push_back(std::move(sinv));
  for (auto& c : conds) {
    auto& res = c.res;
    if (!res.pass) {
      rep.conditions.push_back(std::move(res));
      continue;
    }
    double limit = res.declared;
    if (res.name == "A1") limit = std::min(limit, 1.0);
    const bool ok = res.max_ratio <= limit * (1.0 + rep.tolerance) + 1e-12;
    if (res.name == "A1" && res.max_ratio >= 1.0) {
      res.note = "observed Lipschitz ratio of G is not below 1";
    }
    if (res.evaluated == 0) res.max_ratio = 0.0;
    res.pass = res.pass && ok;
    rep.conditions.push_back(std::move(res));
  }

  if (gal) {
    GalerkinSpec gs;
    gs.modes = m.dim();
    gs.eigenvalues = m.galerkin()->eigenvalues;
    gs.alpha = m.galerkin()->alpha;
    if (m.galerkin()->law_exponent) {
      gs.eigenvalues.clear();
      gs.law_scale = m.galerkin()->law_scale;
      gs.law_exponent = m.galerkin()->law_exponent;
    }
    const auto sc = check_spectrum(gs);
    ConditionResult b1;
    b1.name = "B1";
    b1.description = "eigenvalues positive, nondecreasing, sum lambda_i^-alpha finite";
    b1.declared = m.galerkin()->alpha;
    b1.max_ratio = sc.partial_sum;
    b1.pass = sc.accepted;
    b1.note = sc.reason;
    rep.conditions.insert(rep.conditions.begin(), std::move(b1));
  }
  return rep;
}

inline ValidationReport validate_assumptions(const ModelSpec& m, std::size_t trials, std::uint64_t seed = 1) {
  SegmentSampler s = default_sampler(m, seed);
  return validate_assumptions(m, s, trials);
}

inline nlohmann::json to_json(const ValidationReport& rep) {
  nlohmann::json j;
  j["model"] = rep.model;
  j["trials"] = rep.trials;
  j["tolerance"] = rep.tolerance;
  j["pass"] = rep.pass();
  auto& arr = j["conditions"] = nlohmann::json::array();
  for (const auto& c : rep.conditions) {
    nlohmann::json e{{"name", c.name},         {"description", c.description},
                     {"evaluated", c.evaluated}, {"skipped", c.skipped},
                     {"pass", c.pass},           {"note", c.note}};
    e["declared"] = std::isfinite(c.declared) ? nlohmann::json(c.declared) : nlohmann::json(nullptr);
    e["max_ratio"] = std::isfinite(c.max_ratio) ? nlohmann::json(c.max_ratio) : nlohmann::json(nullptr);
    if (!c.pass && c.witness_a) {
      nlohmann::json w;
      for (std::size_t b = 0; b < c.witness_a->size(); ++b) {
        const Vec xa = (*c.witness_a)[b].at_lag(0), xb = (*c.witness_b)[b].at_lag(0);
        w["blocks"].push_back({{"norm_a", weighted_norm((*c.witness_a)[b], rep.r)},
                               {"norm_b", weighted_norm((*c.witness_b)[b], rep.r)},
                               {"norm_diff", weighted_norm((*c.witness_a)[b].minus((*c.witness_b)[b]), rep.r)},
                               {"a_at_0", std::vector<double>(xa.data(), xa.data() + xa.size())},
                               {"b_at_0", std::vector<double>(xb.data(), xb.data() + xb.size())}});
      }
      e["witness"] = w;
    }
    arr.push_back(e);
  }
  return j;
}

}  // namespace sfde

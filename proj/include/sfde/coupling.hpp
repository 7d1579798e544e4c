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

// Couplings by change of measure. The base process X starts from xi, the
// coupled process Y from eta, and Y carries an extra drift that pulls it
// toward X. Under Q the pull is moved onto X instead and Y solves the original
// equation, so plain averages over Y estimate the semigroup at eta.

#include "sfde/hamiltonian_constants.hpp"
#include "sfde/solver.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace sfde {

enum class Measure { P, Q };

inline const char* to_string(Measure m) { return m == Measure::P ? "P" : "Q"; }

inline Measure measure_from_string(const std::string& s) {
  if (s == "P" || s == "p") return Measure::P;
  if (s == "Q" || s == "q") return Measure::Q;
  throw ConfigError("unknown measure '" + s + "' (expected P or Q)");
}

struct CouplingSpec {
  ModelSpec model;
  double lambda = 1.0;
  Measure measure = Measure::Q;
  double beta = 0.0;  // hamiltonian only
  std::optional<HamiltonianConstants> constants;
  std::vector<std::string> warnings;
};

/// max(2r, declared thresholds) * 2.
inline double default_coupling_strength(const ModelSpec& m) {
  double t = 2.0 * m.r();
  const auto& c = m.constants();
  if (c.K1) t = std::max(t, *c.K1);
  if (c.L) t = std::max(t, *c.L);
  return 2.0 * t;
}

/// Builds a coupling. For non-degenerate and neutral models lambda must exceed
/// r; lambda = 0 is accepted when `allow_override` is set and turns the
/// coupling off. Hamiltonian couplings use the model's own lambda and warn when
/// it does not clear the threshold computed from L1, L2, beta and r.
inline CouplingSpec make_coupling(const ModelSpec& m, std::optional<double> lambda = std::nullopt,
                                  Measure measure = Measure::Q, bool allow_override = false) {
  m.check_for_coupling();
  CouplingSpec cs;
  cs.model = m;
  cs.measure = measure;
  if (m.kind() == ModelKind::hamiltonian) {
    if (lambda && std::abs(*lambda - m.lambda()) > 1e-15)
      throw ConfigError("hamiltonian coupling strength is the model lambda (" + std::to_string(m.lambda()) +
                        "), got " + std::to_string(*lambda));
    cs.lambda = m.lambda();
    cs.beta = *m.constants().beta;
    const auto& c = m.constants();
    if (c.L1 && c.L2) {
      cs.constants = hamiltonian_constants(*c.L1, *c.L2, cs.beta, m.r());
      if (!(cs.lambda > cs.constants->threshold))
        cs.warnings.push_back("lambda = " + std::to_string(cs.lambda) + " does not exceed the threshold " +
                              std::to_string(cs.constants->threshold));
    } else {
      cs.warnings.push_back("L1/L2 not declared; lambda threshold not checked");
    }
    return cs;
  }
  cs.lambda = lambda ? *lambda : default_coupling_strength(m);
  require(std::isfinite(cs.lambda) && cs.lambda >= 0, "coupling strength must be finite and nonnegative");
  if (!(cs.lambda > m.r())) {
    if (allow_override && cs.lambda == 0.0)
      cs.warnings.push_back("coupling disabled (lambda = 0)");
    else
      throw ConfigError("coupling strength lambda = " + std::to_string(cs.lambda) + " must exceed r = " +
                        std::to_string(m.r()));
  }
  return cs;
}

/// Coefficients of one coupled step at the current pair of states.
struct PairCoefficients {
  Vec drift_x;  // full-width drift of the base system as simulated
  Vec drift_y;  // full-width drift of the coupled system as simulated
  Vec pull;     // lambda-weighted difference in the noise coordinates
  Vec h;        // sigma(X_t)^{-1} pull
  Mat sigma_x;
  Mat sigma_y;
};

namespace coupling_detail {

inline Vec pull(const CouplingSpec& cs, const std::vector<PathState>& x, const std::vector<PathState>& y) {
  const ModelSpec& m = cs.model;
  switch (m.kind()) {
    case ModelKind::nondegenerate:
      return cs.lambda * (x[0].current() - y[0].current());
    case ModelKind::neutral: {
      const PathState* bx[2] = {&x[0], &x[0]};
      const PathState* by[2] = {&y[0], &y[0]};
      return cs.lambda * ((x[0].current() - y[0].current()) - (m.neutral(bx) - m.neutral(by)));
    }
    case ModelKind::hamiltonian:
      return cs.lambda * (x[0].current() - y[0].current()) +
             2.0 * cs.lambda * cs.beta * (x[1].current() - y[1].current());
  }
  return {};
}

}  // namespace coupling_detail

/// Measure-appropriate drifts and the Girsanov integrand h. Under Q the base
/// drift is b(X_t) minus the pull and the coupled drift is plain b(Y_t); under
/// P the base drift is plain and the coupled one gains sigma(Y_t) h. For
/// hamiltonian systems the drift vectors are (lambda y, b) stacked; for neutral
/// ones they are the drifts of X - G(X_t).
inline PairCoefficients coupled_coefficients(const CouplingSpec& cs, const std::vector<PathState>& x,
                                             const std::vector<PathState>& y) {
  const ModelSpec& m = cs.model;
  const PathState* bx[2];
  const PathState* by[2];
  detail::block_ptrs(x, bx);
  detail::block_ptrs(y, by);
  PairCoefficients pc;
  pc.sigma_x = m.diffusion(bx);
  pc.sigma_y = m.diffusion(by);
  pc.pull = coupling_detail::pull(cs, x, y);
  pc.h = solve_diffusion(pc.sigma_x, pc.pull);
  Vec bxv = m.drift(bx);
  Vec byv = m.drift(by);
  if (cs.measure == Measure::Q)
    bxv -= pc.pull;
  else
    byv += pc.sigma_y * pc.h;
  if (m.kind() == ModelKind::hamiltonian) {
    const int d = m.dim();
    pc.drift_x.resize(2 * d);
    pc.drift_y.resize(2 * d);
    pc.drift_x << m.lambda() * x[1].current(), bxv;
    pc.drift_y << m.lambda() * y[1].current(), byv;
  } else {
    pc.drift_x = bxv;
    pc.drift_y = byv;
  }
  return pc;
}

struct CoupledDrift {
  Vec drift_x;
  Vec drift_y;
  Vec h;
};

/// Segment form: ξ and η hold one segment per block.
inline CoupledDrift coupled_drift(const CouplingSpec& cs, const SystemSegment& xi, const SystemSegment& eta) {
  const double dt = xi[0].dt();
  const auto x = make_path_states(cs.model, xi, dt);
  const auto y = make_path_states(cs.model, eta, dt);
  const auto pc = coupled_coefficients(cs, x, y);
  return {pc.drift_x, pc.drift_y, pc.h};
}

inline CoupledDrift coupled_drift(const CouplingSpec& cs, const Segment& xi, const Segment& eta) {
  return coupled_drift(cs, SystemSegment(xi), SystemSegment(eta));
}

/// Running state of a coupled pair.
struct CoupledState {
  std::vector<PathState> x;
  std::vector<PathState> y;
  std::vector<NormTracker> z;  // per block, on X - Y
  double log_r = 0.0;
  double entropy = 0.0;  // 1/2 sum |h|^2 dt
  Vec h;                 // h at the current time

  double time() const { return x[0].time(); }
  double z_norm() const {
    double s = 0.0;
    for (const auto& t : z) s += t.norm();
    return s;
  }
  double norm() const { return std::max(detail::system_norm(x), detail::system_norm(y)); }
  Vec x_state() const { return stacked(x); }
  Vec y_state() const { return stacked(y); }

 private:
  static Vec stacked(const std::vector<PathState>& st) {
    if (st.size() == 1) return st[0].current();
    const int d = st[0].dim();
    Vec v(2 * d);
    v << st[0].current(), st[1].current();
    return v;
  }
};

inline CoupledState make_coupled_state(const CouplingSpec& cs, const SystemSegment& xi, const SystemSegment& eta,
                                       double dt) {
  const ModelSpec& m = cs.model;
  CoupledState s;
  s.x = make_path_states(m, xi, dt);
  s.y = make_path_states(m, eta, dt);
  for (std::size_t b = 0; b < xi.size(); ++b) {
    const Segment a = xi[b].resampled(dt);
    const Segment c = eta[b].resampled(dt);
    s.z.emplace_back(m.r(), weighted_norm(a.minus(c), m.r()), 0.0);
  }
  return s;
}

namespace coupling_detail {

inline void push_block(PathState& st, const Vec& v, std::size_t step) {
  if (!v.allFinite()) throw StepError("coupled state is not finite", step);
  st.push(v);
}

/// One step of the pair using coefficients evaluated at the current states.
inline void step(const CouplingSpec& cs, CoupledState& s, const PairCoefficients& pc, const Vec& dw, double dt,
                 std::size_t k) {
  const ModelSpec& m = cs.model;
  const double hsq = pc.h.squaredNorm();
  const double hdw = pc.h.dot(dw);
  switch (m.kind()) {
    case ModelKind::nondegenerate: {
      Vec ix = pc.drift_x * dt;
      ix.noalias() += pc.sigma_x * dw;
      Vec iy = pc.drift_y * dt;
      iy.noalias() += pc.sigma_y * dw;
      push_block(s.x[0], s.x[0].current() + ix, k);
      push_block(s.y[0], s.y[0].current() + iy, k);
      break;
    }
    case ModelKind::neutral: {
      // neutral_solve adds b itself; pass only the coupling part
      const Vec ex = cs.measure == Measure::Q ? Vec(-pc.pull) : zeros(m.dim());
      const Vec ey = cs.measure == Measure::P ? Vec(pc.sigma_y * pc.h) : zeros(m.dim());
      const auto rx = neutral_solve(m, s.x[0], dt, dw, &ex, k);
      const auto ry = neutral_solve(m, s.y[0], dt, dw, &ey, k);
      s.x[0].push(rx.state);
      s.y[0].push(ry.state);
      break;
    }
    case ModelKind::hamiltonian: {
      const int d = m.dim();
      const Vec x0 = s.x[0].current() + pc.drift_x.head(d) * dt;
      Vec ix = pc.drift_x.tail(d) * dt;
      ix.noalias() += pc.sigma_x * dw;
      const Vec y0 = s.y[0].current() + pc.drift_y.head(d) * dt;
      Vec iy = pc.drift_y.tail(d) * dt;
      iy.noalias() += pc.sigma_y * dw;
      const Vec x1 = s.x[1].current() + ix;
      const Vec y1 = s.y[1].current() + iy;
      push_block(s.x[0], x0, k);
      push_block(s.x[1], x1, k);
      push_block(s.y[0], y0, k);
      push_block(s.y[1], y1, k);
      break;
    }
  }
  if (cs.measure == Measure::Q)
    s.log_r += -hdw + 0.5 * hsq * dt;
  else
    s.log_r += -hdw - 0.5 * hsq * dt;
  s.entropy += 0.5 * hsq * dt;
  const double t = s.x[0].time();
  for (std::size_t b = 0; b < s.z.size(); ++b) s.z[b].advance(t, s.x[b].current() - s.y[b].current());
}

}  // namespace coupling_detail

/// Runs one coupled path. `obs(step, state)` sees the state at every grid
/// time, with state.h evaluated there. Returns true if the guard stopped it.
template <class Noise, class Obs>
bool run_coupled(const CouplingSpec& cs, CoupledState s, const SolverConfig& cfg, const Noise& noise,
                 std::uint64_t path, Obs&& obs) {
  const std::size_t n = cfg.steps();
  const int d = cs.model.dim();
  PairCoefficients pc = coupled_coefficients(cs, s.x, s.y);
  s.h = pc.h;
  obs(std::size_t{0}, static_cast<const CoupledState&>(s));
  for (std::size_t k = 0; k < n; ++k) {
    const Vec dw = noise.increment(path, k, d, cfg.dt);
    coupling_detail::step(cs, s, pc, dw, cfg.dt, k);
    if (!std::isfinite(s.log_r)) throw StepError("log density is not finite", k);
    pc = coupled_coefficients(cs, s.x, s.y);
    s.h = pc.h;
    obs(k + 1, static_cast<const CoupledState&>(s));
    if (s.norm() >= cfg.r_stop) return true;
  }
  return false;
}

struct CoupledTrajectory {
  int dim = 1;
  int blocks = 1;
  Measure measure = Measure::Q;
  double dt = 0.0;
  std::vector<double> times;
  std::vector<double> x;  // rows of dim * blocks
  std::vector<double> y;
  std::vector<double> h;  // rows of dim
  std::vector<double> h_norm;
  std::vector<double> log_r;
  std::vector<double> z_norm;
  std::vector<double> entropy;  // cumulative
  bool stopped = false;
  double stop_time = std::numeric_limits<double>::quiet_NaN();

  std::size_t size() const { return times.size(); }
  int width() const { return dim * blocks; }
  Vec x_state(std::size_t k) const {
    return Eigen::Map<const Eigen::VectorXd>(x.data() + k * width(), width());
  }
  Vec y_state(std::size_t k) const {
    return Eigen::Map<const Eigen::VectorXd>(y.data() + k * width(), width());
  }
};

template <class Noise>
CoupledTrajectory simulate_coupled(const CouplingSpec& cs, const SystemSegment& xi, const SystemSegment& eta,
                                   const SolverConfig& cfg, const Noise& noise, std::uint64_t path = 0) {
  const ModelSpec& m = cs.model;
  require(xi.size() == eta.size(), "xi and eta have different block counts");
  CoupledState s = make_coupled_state(cs, xi, eta, cfg.dt);
  cfg.validate(m.r(), s.norm());
  CoupledTrajectory tr;
  tr.dim = m.dim();
  tr.blocks = m.blocks();
  tr.measure = cs.measure;
  tr.dt = cfg.dt;
  const std::size_t n = cfg.steps();
  auto push = [](std::vector<double>& dst, const Vec& v) { dst.insert(dst.end(), v.data(), v.data() + v.size()); };
  tr.stopped = run_coupled(cs, std::move(s), cfg, noise, path, [&](std::size_t k, const CoupledState& st) {
    if (!(k % cfg.stride == 0 || k == n || st.norm() >= cfg.r_stop)) return;
    tr.times.push_back(st.time());
    push(tr.x, st.x_state());
    push(tr.y, st.y_state());
    push(tr.h, st.h);
    tr.h_norm.push_back(st.h.norm());
    tr.log_r.push_back(st.log_r);
    tr.z_norm.push_back(st.z_norm());
    tr.entropy.push_back(st.entropy);
  });
  if (tr.stopped) tr.stop_time = tr.times.back();
  return tr;
}

template <class Noise>
CoupledTrajectory simulate_coupled(const CouplingSpec& cs, const Segment& xi, const Segment& eta,
                                   const SolverConfig& cfg, const Noise& noise, std::uint64_t path = 0) {
  return simulate_coupled(cs, SystemSegment(xi), SystemSegment(eta), cfg, noise, path);
}

/// 1/2 sum |h(t_k)|^2 dt along the path; its Q-mean is E[R log R].
inline double entropy_along_path(const CoupledTrajectory& tr) {
  if (tr.measure != Measure::Q) throw UsageError("entropy identity needs a trajectory simulated under Q");
  return tr.entropy.empty() ? 0.0 : tr.entropy.back();
}

}  // namespace sfde

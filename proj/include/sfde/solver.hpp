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

// Euler-Maruyama time stepping with coefficients evaluated at the segment
// frozen at the left grid point, for non-degenerate, neutral and hamiltonian
// models, with an explosion guard on the running weighted norm.

#include "sfde/model.hpp"
#include "sfde/rng.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <vector>

namespace sfde {

struct SolverConfig {
  double dt = 0.01;
  double horizon = 1.0;
  double r_stop = std::numeric_limits<double>::infinity();
  std::uint64_t seed = 1;
  std::size_t stride = 1;
  bool enforce_grid = true;  // require e^{r dt} <= 2

  std::size_t steps() const { return static_cast<std::size_t>(std::llround(horizon / dt)); }

  void validate(double r, double initial_norm) const {
    require(dt > 0 && std::isfinite(dt), "dt must be positive");
    require(horizon >= 0 && std::isfinite(horizon), "horizon must be nonnegative");
    require(std::abs(horizon / dt - std::round(horizon / dt)) < 1e-6,
            "horizon must be an integer multiple of dt");
    require(stride >= 1, "recording stride must be at least 1");
    if (enforce_grid)
      require(dt <= std::numbers::ln2 / r * (1 + 1e-12),
              "dt = " + std::to_string(dt) + " violates dt <= log(2)/r = " + std::to_string(std::numbers::ln2 / r));
    require(r_stop > initial_norm, "explosion radius must exceed the initial segment norm");
  }
};

/// Recorded path. For hamiltonian models each state is the concatenation
/// (X(t), Y(t)) and the norm is ||X_t||_r + ||Y_t||_r.
struct Trajectory {
  int dim = 1;     // per block
  int blocks = 1;
  std::vector<double> times;
  std::vector<double> states;  // times.size() rows of dim * blocks values
  std::vector<double> norms;
  bool stopped = false;
  double stop_time = std::numeric_limits<double>::quiet_NaN();

  std::size_t size() const { return times.size(); }
  int width() const { return dim * blocks; }
  Vec state(std::size_t k) const {
    return Eigen::Map<const Eigen::VectorXd>(states.data() + k * width(), width());
  }
  Vec block(std::size_t k, int b) const {
    return Eigen::Map<const Eigen::VectorXd>(states.data() + k * width() + b * dim, dim);
  }
};

/// Brownian increments over dt built from `factor` consecutive increments of a
/// finer stream, so that paths at different step sizes share one Brownian path.
class AggregatedNoise {
 public:
  AggregatedNoise(NoiseStream fine, std::size_t factor) : fine_(fine), factor_(factor) {
    require(factor >= 1, "aggregation factor must be at least 1");
  }
  Vec increment(std::uint64_t path, std::uint64_t step, int d, double dt) const {
    const double h = dt / static_cast<double>(factor_);
    Vec acc = zeros(d);
    for (std::size_t j = 0; j < factor_; ++j) acc += fine_.increment(path, step * factor_ + j, d, h);
    return acc;
  }

 private:
  NoiseStream fine_;
  std::size_t factor_;
};

namespace solver_detail {

template <class View>
inline void ptrs(const std::vector<View>& st, const View* out[2]) {
  out[0] = &st[0];
  out[1] = st.size() > 1 ? &st[1] : &st[0];
}

}  // namespace solver_detail

/// b(X_t) dt + sigma(X_t) dW with X_t the state in `st`.
inline Vec em_increment(const ModelSpec& m, const std::vector<PathState>& st, double dt, const Vec& dw) {
  const PathState* b[2];
  solver_detail::ptrs(st, b);
  Vec inc = m.drift(b) * dt;
  inc.noalias() += m.diffusion(b) * dw;
  return inc;
}

/// Segment form of one Euler-Maruyama increment.
inline Vec em_step(const ModelSpec& m, const Segment& frozen, double dt, const Vec& dw) {
  require(m.kind() == ModelKind::nondegenerate, "em_step applies to non-degenerate models");
  require(dw.allFinite(), "Brownian increment is not finite");
  const auto st = make_path_states(m, SystemSegment(frozen), frozen.dt());
  const Vec inc = em_increment(m, st, dt, dw);
  if (!inc.allFinite()) throw ModelEvaluationError("increment is not finite", st[0].norm());
  return inc;
}

struct NeutralStepResult {
  Vec state;
  int iterations = 0;
  std::vector<double> residuals;  // |x_{k+1} - x_k| per iteration
};

/// True when G only looks at values at least one step in the past, so the
/// neutral relation is explicit.
inline bool neutral_is_explicit(const ModelSpec& m, double dt) {
  if (!m.neutral_functional()) return true;
  for (const auto& t : m.neutral_functional()->terms()) {
    if (t.kind == TermKind::constant) continue;
    if (t.source.kind != SourceKind::delay || t.source.tau < dt - 1e-12) return false;
  }
  return true;
}

/// Solves X(t+dt) - G(X_{t+dt}) = X(t) - G(X_t) + (b + extra) dt + sigma dW
/// by Picard iteration started from the explicit Euler guess. `extra` is an
/// optional additional drift (coupling terms).
inline NeutralStepResult neutral_solve(const ModelSpec& m, const PathState& st, double dt, const Vec& dw,
                                       const Vec* extra, std::size_t step = 0, double tol = 1e-12,
                                       int max_iter = 50) {
  const PathState* blk[2] = {&st, &st};
  const Vec g_now = m.neutral(blk);
  const Vec x = st.current();
  Vec rhs = x - g_now + m.drift(blk) * dt;
  rhs.noalias() += m.diffusion(blk) * dw;
  if (extra) rhs += *extra * dt;

  NeutralStepResult out;
  Vec cur = rhs + g_now;
  auto apply = [&](const Vec& cand) {
    const TentativeView view(st, cand);
    const TentativeView* vb[2] = {&view, &view};
    return Vec(m.neutral(vb) + rhs);
  };
  if (neutral_is_explicit(m, st.dt())) {
    out.state = apply(cur);
    out.iterations = 1;
    out.residuals.push_back(0.0);
    if (!out.state.allFinite()) throw StepError("neutral state is not finite", step);
    return out;
  }
  for (int k = 1; k <= max_iter; ++k) {
    const Vec next = apply(cur);
    const double res = (next - cur).norm();
    out.residuals.push_back(res);
    cur = next;
    out.iterations = k;
    if (!cur.allFinite()) throw StepError("neutral iteration diverged", step);
    if (res <= tol * std::max(1.0, cur.norm())) {
      out.state = cur;
      return out;
    }
  }
  throw StepError("neutral fixed-point iteration did not converge (residual " +
                      std::to_string(out.residuals.back()) + ")",
                  step);
}

inline NeutralStepResult neutral_solve(const ModelSpec& m, const PathState& st, double dt, const Vec& dw,
                                       std::size_t step = 0, double tol = 1e-12, int max_iter = 50) {
  return neutral_solve(m, st, dt, dw, nullptr, step, tol, max_iter);
}

/// Segment form of the neutral update; returns the new state X(t+dt).
inline NeutralStepResult neutral_step(const ModelSpec& m, const Segment& seg, double dt, const Vec& dw) {
  if (m.kind() != ModelKind::neutral) throw UsageError("neutral_step called on a non-neutral model");
  const auto st = make_path_states(m, SystemSegment(seg), seg.dt());
  require(std::abs(dt - seg.dt()) < 1e-12, "neutral_step needs dt equal to the segment grid step");
  return neutral_solve(m, st[0], dt, dw);
}

/// Increments (lambda Y(t) dt, b dt + sigma dW) of a hamiltonian system.
inline std::pair<Vec, Vec> hamiltonian_increment(const ModelSpec& m, const std::vector<PathState>& st, double dt,
                                                 const Vec& dw) {
  const Vec dx = m.lambda() * dt * st[1].current();
  return {dx, em_increment(m, st, dt, dw)};
}

inline std::pair<Vec, Vec> hamiltonian_step(const ModelSpec& m, const Segment& x, const Segment& y, double dt,
                                            const Vec& dw) {
  if (m.kind() != ModelKind::hamiltonian) throw UsageError("hamiltonian_step called on a non-hamiltonian model");
  const auto st = make_path_states(m, SystemSegment(x, y), x.dt());
  return hamiltonian_increment(m, st, dt, dw);
}

/// Advances every block of `st` by one step of size st[0].dt().
inline void advance(const ModelSpec& m, std::vector<PathState>& st, const Vec& dw, std::size_t step) {
  const double dt = st[0].dt();
  switch (m.kind()) {
    case ModelKind::nondegenerate: {
      Vec x = st[0].current() + em_increment(m, st, dt, dw);
      if (!x.allFinite()) throw StepError("state is not finite", step);
      st[0].push(x);
      return;
    }
    case ModelKind::neutral: {
      const auto res = neutral_solve(m, st[0], dt, dw, step);
      st[0].push(res.state);
      return;
    }
    case ModelKind::hamiltonian: {
      const auto [dx, dy] = hamiltonian_increment(m, st, dt, dw);
      Vec x = st[0].current() + dx;
      Vec y = st[1].current() + dy;
      if (!x.allFinite() || !y.allFinite()) throw StepError("state is not finite", step);
      st[0].push(x);
      st[1].push(y);
      return;
    }
  }
}

/// Runs one path from the given initial states. `obs(step, states)` is called
/// at step 0 and after every step; simulation stops at the horizon or when the
/// running norm reaches cfg.r_stop. Returns true if the guard stopped it.
template <class Noise, class Obs>
bool run_path(const ModelSpec& m, std::vector<PathState> st, const SolverConfig& cfg, const Noise& noise,
              std::uint64_t path, Obs&& obs) {
  const std::size_t n = cfg.steps();
  const int d = m.dim();
  obs(std::size_t{0}, static_cast<const std::vector<PathState>&>(st));
  for (std::size_t k = 0; k < n; ++k) {
    const Vec dw = noise.increment(path, k, d, cfg.dt);
    advance(m, st, dw, k);
    obs(k + 1, static_cast<const std::vector<PathState>&>(st));
    if (detail::system_norm(st) >= cfg.r_stop) return true;
  }
  return false;
}

template <class Noise>
Trajectory simulate_path(const ModelSpec& m, const std::vector<PathState>& init, const SolverConfig& cfg,
                         const Noise& noise, std::uint64_t path = 0) {
  cfg.validate(m.r(), detail::system_norm(init));
  m.check_for_simulation();
  Trajectory tr;
  tr.dim = m.dim();
  tr.blocks = m.blocks();
  const std::size_t n = cfg.steps();
  tr.times.reserve(n / cfg.stride + 2);
  auto record = [&](const std::vector<PathState>& st) {
    tr.times.push_back(st[0].time());
    for (const auto& b : st) {
      const Vec x = b.current();
      tr.states.insert(tr.states.end(), x.data(), x.data() + x.size());
    }
    tr.norms.push_back(detail::system_norm(st));
  };
  tr.stopped = run_path(m, init, cfg, noise, path, [&](std::size_t k, const std::vector<PathState>& st) {
    if (k % cfg.stride == 0 || k == n || detail::system_norm(st) >= cfg.r_stop) record(st);
  });
  if (tr.stopped) tr.stop_time = tr.times.back();
  return tr;
}

template <class Noise>
Trajectory simulate_path(const ModelSpec& m, const SystemSegment& init, const SolverConfig& cfg,
                         const Noise& noise, std::uint64_t path = 0) {
  return simulate_path(m, make_path_states(m, init, cfg.dt), cfg, noise, path);
}

template <class Noise>
Trajectory simulate_path(const ModelSpec& m, const Segment& init, const SolverConfig& cfg, const Noise& noise,
                         std::uint64_t path = 0) {
  return simulate_path(m, SystemSegment(init), cfg, noise, path);
}

}  // namespace sfde

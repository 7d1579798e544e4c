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

// Monte Carlo estimators: contraction rate of the coupling, calibration of the
// Harnack constant c, the asymptotic log-Harnack inequality, the gradient
// estimate, asymptotic irreducibility, the heat-kernel bound and a moment
// envelope. Every check returns EstimateReport rows; inequality rows pass when
// margin + 3 stderr >= 0.

#include "sfde/convergence.hpp"
#include "sfde/coupling.hpp"
#include "sfde/parallel.hpp"
#include "sfde/test_function.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace sfde {

struct EstimateReport {
  std::string name;
  double estimate = 0.0;
  double stderr_ = 0.0;
  double bound = 0.0;
  double margin = 0.0;
  bool pass = false;
  bool inconclusive = false;
  nlohmann::json metadata = nlohmann::json::object();

  /// Upper-bound check: estimate <= bound within 3 stderr.
  void settle_upper() {
    margin = bound - estimate;
    pass = margin + 3.0 * stderr_ >= 0.0;
  }
};

inline nlohmann::json to_json(const EstimateReport& r) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return {{"name", r.name},       {"estimate", num(r.estimate)}, {"stderr", num(r.stderr_)},
          {"bound", num(r.bound)}, {"margin", num(r.margin)},     {"pass", r.pass},
          {"inconclusive", r.inconclusive}, {"metadata", r.metadata}};
}

inline nlohmann::json to_json(const std::vector<EstimateReport>& rows) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& r : rows) a.push_back(to_json(r));
  return a;
}

/// Passes unless some row fails; inconclusive rows count as passing.
inline bool all_pass(const std::vector<EstimateReport>& rows) {
  return std::all_of(rows.begin(), rows.end(), [](const EstimateReport& r) { return r.pass || r.inconclusive; });
}

struct McConfig {
  std::size_t paths = 1000;
  double dt = 0.01;
  std::uint64_t seed = 1;
  int workers = 0;
  std::optional<double> r0;  // target decay rate, default r/2
  double r_stop = std::numeric_limits<double>::infinity();
};

inline double resolve_r0(const ModelSpec& m, const McConfig& mc) {
  const double r0 = mc.r0.value_or(0.5 * m.r());
  require(r0 > 0 && r0 < m.r(), "decay rate r0 must lie in (0, r)");
  return r0;
}

// Noise substreams per estimator phase, so phases are independent.
namespace streams {
inline constexpr std::uint64_t calibration = 101;
inline constexpr std::uint64_t q_run = 102;
inline constexpr std::uint64_t p_run = 103;
inline constexpr std::uint64_t gradient = 104;
inline constexpr std::uint64_t irreducible_x = 105;
inline constexpr std::uint64_t irreducible_y = 106;
inline constexpr std::uint64_t heat_short = 107;
inline constexpr std::uint64_t heat_long = 108;
inline constexpr std::uint64_t decay = 109;
inline constexpr std::uint64_t moments = 110;
}  // namespace streams

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
  double sd = 0.0;
};

/// Mean, standard error and standard deviation of values[i * stride + offset],
/// accumulated in index order.
inline MeanSe mean_se(const std::vector<double>& values, std::size_t n, std::size_t stride = 1,
                      std::size_t offset = 0) {
  require(n >= 1, "no samples");
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += values[i * stride + offset];
  const double mean = s / static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = values[i * stride + offset] - mean;
    ss += e * e;
  }
  MeanSe out;
  out.mean = mean;
  out.sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
  out.se = out.sd / std::sqrt(static_cast<double>(n));
  return out;
}

/// Observation times snapped to the solver grid.
struct TimeGrid {
  std::vector<double> times;
  std::vector<std::size_t> steps;
  SolverConfig cfg;
};

inline TimeGrid make_grid(const std::vector<double>& times, const McConfig& mc) {
  require(!times.empty(), "empty time grid");
  TimeGrid g;
  for (std::size_t i = 0; i < times.size(); ++i) {
    require(times[i] >= 0 && std::isfinite(times[i]), "grid times must be nonnegative");
    if (i > 0) require(times[i] > times[i - 1], "time grid must be strictly increasing");
    const double k = times[i] / mc.dt;
    require(std::abs(k - std::round(k)) < 1e-6, "grid time " + std::to_string(times[i]) + " is not a multiple of dt");
    g.steps.push_back(static_cast<std::size_t>(std::llround(k)));
    g.times.push_back(times[i]);
  }
  g.cfg.dt = mc.dt;
  g.cfg.horizon = static_cast<double>(g.steps.back()) * mc.dt;
  g.cfg.seed = mc.seed;
  g.cfg.r_stop = mc.r_stop;
  return g;
}

inline nlohmann::json mc_metadata(const McConfig& mc, const std::vector<double>& times) {
  return {{"paths", mc.paths}, {"dt", mc.dt}, {"seed", mc.seed}, {"t_grid", times}};
}

/// Runs `paths` coupled paths and stores `width` values per grid time via
/// f(state, out). Paths stopped by the guard keep their last values.
template <class F>
std::vector<double> sample_coupled(const CouplingSpec& cs, const CoupledState& s0, const TimeGrid& g,
                                   const NoiseStream& noise, std::size_t paths, int workers, int width, F&& f) {
  const std::size_t nt = g.times.size();
  std::vector<double> out(paths * nt * width, 0.0);
  parallel_for(paths, resolve_workers(workers), [&](std::size_t i) {
    double* row = out.data() + i * nt * width;
    std::size_t next = 0;
    std::vector<double> last(width, 0.0);
    const bool stopped = run_coupled(cs, s0, g.cfg, noise, i, [&](std::size_t k, const CoupledState& s) {
      if (next < nt && k == g.steps[next]) {
        f(s, row + next * width);
        std::copy(row + next * width, row + (next + 1) * width, last.begin());
        ++next;
      } else if (s.norm() >= g.cfg.r_stop) {
        f(s, last.data());
      }
    });
    if (stopped)
      for (; next < nt; ++next) std::copy(last.begin(), last.end(), row + next * width);
  });
  return out;
}

/// Plain paths of the model from `init`, same layout as sample_coupled.
template <class F>
std::vector<double> sample_paths(const ModelSpec& m, const std::vector<PathState>& init, const TimeGrid& g,
                                 const NoiseStream& noise, std::size_t paths, int workers, int width, F&& f) {
  const std::size_t nt = g.times.size();
  std::vector<double> out(paths * nt * width, 0.0);
  parallel_for(paths, resolve_workers(workers), [&](std::size_t i) {
    double* row = out.data() + i * nt * width;
    std::size_t next = 0;
    std::vector<double> last(width, 0.0);
    const bool stopped = run_path(m, init, g.cfg, noise, i, [&](std::size_t k, const std::vector<PathState>& s) {
      if (next < nt && k == g.steps[next]) {
        f(s, row + next * width);
        std::copy(row + next * width, row + (next + 1) * width, last.begin());
        ++next;
      } else if (detail::system_norm(s) >= g.cfg.r_stop) {
        f(s, last.data());
      }
    });
    if (stopped)
      for (; next < nt; ++next) std::copy(last.begin(), last.end(), row + next * width);
  });
  return out;
}

// ---------------------------------------------------------------------------
// calibration of c

struct Calibration {
  double c = 0.0;
  double c_entropy = 0.0;
  double c_decay = 0.0;
  double r0 = 0.0;
  double distance = 0.0;
  double entropy = 0.0;  // Q-mean of the accumulated entropy at the last grid time
  std::size_t paths = 0;
};

inline nlohmann::json to_json(const Calibration& c) {
  return {{"c", c.c},   {"c_entropy", c.c_entropy}, {"c_decay", c.c_decay}, {"r0", c.r0},
          {"distance", c.distance}, {"entropy", c.entropy}, {"paths", c.paths}};
}

/// c = max(E_Q entropy / d^2, max_t E_Q ||Z_t||_r e^{r0 t} / d) with d the
/// initial distance, from a Q run on its own noise substream.
inline Calibration calibrate(const CouplingSpec& cs_in, const SystemSegment& xi, const SystemSegment& eta,
                             const std::vector<double>& times, const McConfig& mc) {
  CouplingSpec cs = cs_in;
  cs.measure = Measure::Q;
  Calibration cal;
  cal.r0 = resolve_r0(cs.model, mc);
  cal.paths = mc.paths;
  const TimeGrid g = make_grid(times, mc);
  const CoupledState s0 = make_coupled_state(cs, xi, eta, mc.dt);
  g.cfg.validate(cs.model.r(), s0.norm());
  cal.distance = s0.z_norm();
  if (cal.distance == 0.0) return cal;
  const auto data = sample_coupled(cs, s0, g, NoiseStream(mc.seed, streams::calibration), mc.paths, mc.workers, 2,
                                   [](const CoupledState& s, double* out) {
                                     out[0] = s.z_norm();
                                     out[1] = s.entropy;
                                   });
  const std::size_t nt = g.times.size();
  cal.c_decay = 1.0;  // t = 0
  for (std::size_t j = 0; j < nt; ++j) {
    const auto z = mean_se(data, mc.paths, nt * 2, j * 2);
    cal.c_decay = std::max(cal.c_decay, z.mean * std::exp(cal.r0 * g.times[j]) / cal.distance);
  }
  cal.entropy = mean_se(data, mc.paths, nt * 2, (nt - 1) * 2 + 1).mean;
  cal.c_entropy = cal.entropy / (cal.distance * cal.distance);
  cal.c = std::max(cal.c_entropy, cal.c_decay);
  return cal;
}

// ---------------------------------------------------------------------------
// decay of the coupling

struct DecayResult {
  double rate = 0.0;
  double rate_stderr = 0.0;
  double c_hat = 0.0;
  double distance = 0.0;
  std::vector<double> times;
  std::vector<double> mean;  // E_Q ||Z_t||_r^p
  std::vector<double> se;
  EstimateReport report;
};

/// Fits log E_Q ||X_t - Y_t||_r^p = log(c d^p) - p r0 t over the grid times at
/// or after `tail_from` (default: the second half of the grid).
inline DecayResult estimate_decay(const CouplingSpec& cs_in, const SystemSegment& xi, const SystemSegment& eta,
                                  double p, const std::vector<double>& times, const McConfig& mc,
                                  std::optional<double> tail_from = std::nullopt) {
  require(p > 0 && std::isfinite(p), "moment order p must be positive");
  CouplingSpec cs = cs_in;
  cs.measure = Measure::Q;
  const double target = resolve_r0(cs.model, mc);
  const TimeGrid g = make_grid(times, mc);
  const CoupledState s0 = make_coupled_state(cs, xi, eta, mc.dt);
  g.cfg.validate(cs.model.r(), s0.norm());
  DecayResult res;
  res.distance = s0.z_norm();
  if (res.distance == 0.0) throw DegenerateFitError("xi = eta: the difference is identically zero");
  const auto data = sample_coupled(cs, s0, g, NoiseStream(mc.seed, streams::decay), mc.paths, mc.workers, 1,
                                   [p](const CoupledState& s, double* out) { out[0] = std::pow(s.z_norm(), p); });
  const std::size_t nt = g.times.size();
  std::vector<double> lx, ly;
  if (nt < 2) throw DegenerateFitError("decay fit needs at least two grid times");
  const double from = tail_from.value_or(g.times[std::min(nt / 2, nt - 2)]);
  for (std::size_t j = 0; j < nt; ++j) {
    const auto z = mean_se(data, mc.paths, nt, j);
    res.times.push_back(g.times[j]);
    res.mean.push_back(z.mean);
    res.se.push_back(z.se);
    if (g.times[j] >= from - 1e-12) {
      if (!(z.mean > 0)) throw DegenerateFitError("zero mean difference at t = " + std::to_string(g.times[j]));
      lx.push_back(g.times[j]);
      ly.push_back(std::log(z.mean));
    }
  }
  if (lx.size() < 2) throw DegenerateFitError("decay fit needs at least two grid times in the tail");
  const LineFit fit = fit_line(lx, ly);
  res.rate = -fit.slope / p;
  res.rate_stderr = fit.slope_stderr / p;
  res.c_hat = std::exp(fit.intercept) / std::pow(res.distance, p);

  auto& r = res.report;
  r.name = "decay";
  r.estimate = res.rate;
  r.stderr_ = res.rate_stderr;
  r.bound = target;
  r.margin = res.rate - target;  // lower-bound check
  r.pass = res.rate >= target - res.rate_stderr;
  r.metadata = mc_metadata(mc, times);
  r.metadata["check"] = "estimate >= bound - stderr";
  r.metadata["p"] = p;
  r.metadata["lambda"] = cs.lambda;
  r.metadata["c_hat"] = res.c_hat;
  r.metadata["distance"] = res.distance;
  r.metadata["tail_from"] = from;
  r.metadata["moments"] = res.mean;
  r.metadata["moments_stderr"] = res.se;
  return res;
}

// ---------------------------------------------------------------------------
// asymptotic log-Harnack inequality

struct AlhOptions {
  std::optional<double> c;  // skips calibration
  bool common_noise = false;  // drive the P run with the Q run's increments
};

/// E_Q g(Y_t) <= log E_P e^{g(X_t)} + c d^2 + c e^{-r0 t} Lip(g) d at every t.
inline std::vector<EstimateReport> check_alh(const CouplingSpec& cs_in, const SystemSegment& xi,
                                             const SystemSegment& eta, const TestFunction& g,
                                             const std::vector<double>& times, const McConfig& mc,
                                             const AlhOptions& opt = {}) {
  CouplingSpec cs = cs_in;
  cs.measure = Measure::Q;
  const ModelSpec& m = cs.model;
  g.check(m.dim(), m.blocks());
  const double lip = g.lipschitz();
  if (!std::isfinite(lip)) throw UsageError("test function needs a finite Lipschitz constant");
  const double r0 = resolve_r0(m, mc);
  const TimeGrid grid = make_grid(times, mc);
  const CoupledState s0 = make_coupled_state(cs, xi, eta, mc.dt);
  grid.cfg.validate(m.r(), s0.norm());
  const double d = s0.z_norm();

  Calibration cal;
  if (opt.c) {
    cal.c = *opt.c;
    cal.r0 = r0;
    cal.distance = d;
  } else {
    cal = calibrate(cs, xi, eta, times, mc);
  }

  const NoiseStream qn(mc.seed, streams::q_run);
  const auto lhs = sample_coupled(cs, s0, grid, qn, mc.paths, mc.workers, 1,
                                  [&](const CoupledState& s, double* out) { out[0] = g(s.y); });
  const NoiseStream pn = opt.common_noise ? qn : NoiseStream(mc.seed, streams::p_run);
  const auto rhs = sample_paths(m, s0.x, grid, pn, mc.paths, mc.workers, 1,
                                [&](const std::vector<PathState>& s, double* out) { out[0] = std::exp(g(s)); });

  std::vector<EstimateReport> rows;
  const std::size_t nt = grid.times.size();
  for (std::size_t j = 0; j < nt; ++j) {
    const auto a = mean_se(lhs, mc.paths, nt, j);
    const auto b = mean_se(rhs, mc.paths, nt, j);
    const double log_pf = std::log(b.mean);
    const double ent = cal.c * d * d;
    const double grad = cal.c * std::exp(-r0 * grid.times[j]) * lip * d;
    EstimateReport r;
    r.name = "alh";
    r.estimate = a.mean;
    r.stderr_ = std::hypot(a.se, b.se / b.mean);
    r.bound = log_pf + ent + grad;
    r.settle_upper();
    r.metadata = mc_metadata(mc, times);
    r.metadata["t"] = grid.times[j];
    r.metadata["log_pt_f"] = log_pf;
    r.metadata["entropy_term"] = ent;
    r.metadata["gradient_term"] = grad;
    r.metadata["lhs_stderr"] = a.se;
    r.metadata["rhs_stderr"] = b.se / b.mean;
    r.metadata["calibration"] = to_json(cal);
    r.metadata["lambda"] = cs.lambda;
    r.metadata["test_function"] = to_json(g);
    r.metadata["common_noise"] = opt.common_noise;
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// gradient estimate

/// Smooth random segment of unit norm used as a perturbation direction.
inline SystemSegment random_direction(const ModelSpec& m, double dt, double window, CounterRng& rng) {
  SystemSegment out;
  for (int b = 0; b < m.blocks(); ++b) {
    const Vec a = rng.normal_vec(m.dim());
    const Vec c = rng.normal_vec(m.dim());
    const double w = rng.uniform(0.0, 3.0);
    const double rate = rng.uniform(0.0, m.r());
    out.blocks.push_back(Segment::from_function(m.dim(), dt, window, [&](double th) {
      return Vec((a + c * std::sin(w * th)) * std::exp(rate * th));
    }));
  }
  const double n = [&] {
    double s = 0.0;
    for (const auto& b : out.blocks) s += weighted_norm(b, m.r());
    return s;
  }();
  return out.scaled(1.0 / n);
}

struct GradientOptions {
  std::optional<double> c;
};

/// |P_t f(xi + eps v) - P_t f(xi)| / (eps ||v||_r) against
/// sqrt(2c) sd(f(X_t)) + Lip(f) c e^{-r0 t}, with common random numbers.
inline std::vector<EstimateReport> check_gradient(const CouplingSpec& cs, const SystemSegment& xi,
                                                  const std::vector<SystemSegment>& directions,
                                                  const std::vector<double>& eps, const TestFunction& f, double t,
                                                  const McConfig& mc, const GradientOptions& opt = {}) {
  const ModelSpec& m = cs.model;
  f.check(m.dim(), m.blocks());
  require(!directions.empty() && !eps.empty(), "gradient check needs directions and step sizes");
  for (double e : eps) require(e > 0, "finite-difference steps must be positive");
  const double r0 = resolve_r0(m, mc);
  const double eps_max = *std::max_element(eps.begin(), eps.end());
  const TimeGrid grid = make_grid({t}, mc);

  // c at xi: the largest calibrated constant over the perturbed pairs
  std::vector<Calibration> cals;
  double c = 0.0;
  if (opt.c) {
    c = *opt.c;
  } else {
    std::vector<double> ctimes;
    for (int k = 1; k <= 8; ++k) ctimes.push_back(std::round(t * k / 8.0 / mc.dt) * mc.dt);
    ctimes.erase(std::unique(ctimes.begin(), ctimes.end()), ctimes.end());
    if (ctimes.front() <= 0.0) ctimes.erase(ctimes.begin());
    for (const auto& v : directions) {
      cals.push_back(calibrate(cs, xi.plus(v, eps_max), xi, ctimes, mc));
      c = std::max(c, cals.back().c);
    }
  }
  const double gamma = c * std::exp(-r0 * t);

  const NoiseStream noise(mc.seed, streams::gradient);
  const auto base_states = make_path_states(m, xi, mc.dt);
  grid.cfg.validate(m.r(), detail::system_norm(base_states));
  const auto base = sample_paths(m, base_states, grid, noise, mc.paths, mc.workers, 1,
                                 [&](const std::vector<PathState>& s, double* out) { out[0] = f(s); });
  const auto fx = mean_se(base, mc.paths);

  std::vector<EstimateReport> rows;
  for (std::size_t di = 0; di < directions.size(); ++di) {
    const auto& v = directions[di];
    double vn = 0.0;
    for (std::size_t b = 0; b < v.size(); ++b) vn += weighted_norm(v[b].resampled(mc.dt), m.r());
    require(vn > 0, "direction must be nonzero");
    for (double e : eps) {
      const auto st = make_path_states(m, xi.plus(v, e), mc.dt);
      const auto pert = sample_paths(m, st, grid, noise, mc.paths, mc.workers, 1,
                                     [&](const std::vector<PathState>& s, double* out) { out[0] = f(s); });
      std::vector<double> diff(mc.paths);
      for (std::size_t i = 0; i < mc.paths; ++i) diff[i] = pert[i] - base[i];
      const auto dd = mean_se(diff, mc.paths);
      EstimateReport r;
      r.name = "gradient";
      r.estimate = std::abs(dd.mean) / (e * vn);
      r.stderr_ = dd.se / (e * vn);
      r.bound = std::sqrt(2.0 * c) * fx.sd + f.lipschitz() * gamma;
      r.settle_upper();
      r.inconclusive = r.stderr_ > r.estimate;
      r.metadata = mc_metadata(mc, {t});
      r.metadata["t"] = t;
      r.metadata["direction"] = di;
      r.metadata["eps"] = e;
      r.metadata["c"] = c;
      r.metadata["gamma_t"] = gamma;
      r.metadata["sd_f"] = fx.sd;
      r.metadata["test_function"] = to_json(f);
      if (!cals.empty()) r.metadata["calibration"] = to_json(cals[di]);
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// asymptotic irreducibility

/// Ball of radius `radius` in ||.||_r (summed over blocks) around constant
/// segments `center`, one per block.
struct Ball {
  std::vector<Vec> center;
  double radius = 1.0;
};

struct IrreducibilityOptions {
  std::optional<double> c;
};

namespace est_detail {

// Hit indicators of ||X_t - center||_r <= radius + extra at each grid time.
inline std::vector<double> ball_hits(const ModelSpec& m, const SystemSegment& init, const Ball& ball, double extra,
                                     const TimeGrid& g, const NoiseStream& noise, const McConfig& mc) {
  const auto st = make_path_states(m, init, mc.dt);
  std::vector<NormTracker> trackers0;
  for (std::size_t b = 0; b < init.size(); ++b) {
    const Segment s = init[b].resampled(mc.dt);
    const Segment c = Segment::constant(ball.center[b], mc.dt, s.window(), s.tail_mode());
    trackers0.emplace_back(m.r(), weighted_norm(s.minus(c), m.r()), 0.0);
  }
  const std::size_t nt = g.times.size();
  std::vector<double> out(mc.paths * nt, 0.0);
  parallel_for(mc.paths, resolve_workers(mc.workers), [&](std::size_t i) {
    auto tr = trackers0;
    std::size_t next = 0;
    run_path(m, st, g.cfg, noise, i, [&](std::size_t k, const std::vector<PathState>& s) {
      double dist = 0.0;
      for (std::size_t b = 0; b < s.size(); ++b) {
        if (k > 0) tr[b].advance(s[b].time(), s[b].current() - ball.center[b]);
        dist += tr[b].norm();
      }
      if (next < nt && k == g.steps[next]) {
        out[i * nt + next] = dist <= ball.radius + extra ? 1.0 : 0.0;
        ++next;
      }
    });
  });
  return out;
}

}  // namespace est_detail

/// P_t(x, A) <= (1/n) log(1 + e^n P_t(y, A_eps)) + (1/n) c d^2 + eps^{-1} c e^{-r0 t} d.
inline std::vector<EstimateReport> check_irreducibility(const CouplingSpec& cs, const SystemSegment& x,
                                                        const Ball& ball, double eps, int n,
                                                        const SystemSegment& y, const std::vector<double>& times,
                                                        const McConfig& mc, const IrreducibilityOptions& opt = {}) {
  const ModelSpec& m = cs.model;
  require(eps > 0, "epsilon must be positive");
  require(n >= 1, "n must be a positive integer");
  require(static_cast<int>(ball.center.size()) == m.blocks(), "ball center needs one vector per block");
  for (const auto& c : ball.center) require(c.size() == m.dim(), "ball center dimension mismatch");
  require(ball.radius >= 0, "ball radius must be nonnegative");
  const double r0 = resolve_r0(m, mc);
  const TimeGrid g = make_grid(times, mc);
  const CoupledState s0 = make_coupled_state(cs, x, y, mc.dt);
  g.cfg.validate(m.r(), s0.norm());
  const double d = s0.z_norm();
  Calibration cal;
  if (opt.c) {
    cal.c = *opt.c;
    cal.r0 = r0;
    cal.distance = d;
  } else {
    cal = calibrate(cs, x, y, times, mc);
  }

  const auto hx = est_detail::ball_hits(m, x, ball, 0.0, g, NoiseStream(mc.seed, streams::irreducible_x), mc);
  const auto hy = est_detail::ball_hits(m, y, ball, eps, g, NoiseStream(mc.seed, streams::irreducible_y), mc);
  const std::size_t nt = g.times.size();
  const double nn = static_cast<double>(mc.paths);
  std::vector<EstimateReport> rows;
  for (std::size_t j = 0; j < nt; ++j) {
    double kx = 0, ky = 0;
    for (std::size_t i = 0; i < mc.paths; ++i) {
      kx += hx[i * nt + j];
      ky += hy[i * nt + j];
    }
    const double px = kx / nn, py = ky / nn;
    const double se_x = std::sqrt(px * (1 - px) / nn);
    const double se_y = std::sqrt(py * (1 - py) / nn);
    const double dn = static_cast<double>(n);
    // (1/n) log(1 + e^n p) = 1 + (1/n) log(p + e^{-n})
    const double log_term = 1.0 + std::log(py + std::exp(-dn)) / dn;
    const double phi = cal.c * d * d / dn;
    const double psi = cal.c * std::exp(-r0 * g.times[j]) * d / eps;
    EstimateReport r;
    r.name = "irreducibility";
    r.estimate = px;
    r.stderr_ = std::hypot(se_x, se_y / (dn * (py + std::exp(-dn))));
    r.bound = log_term + phi + psi;
    r.settle_upper();
    r.inconclusive = kx == 0 && ky == 0;
    r.metadata = mc_metadata(mc, times);
    r.metadata["t"] = g.times[j];
    r.metadata["p_x"] = px;
    r.metadata["p_y_eps"] = py;
    r.metadata["n"] = n;
    r.metadata["eps"] = eps;
    r.metadata["radius"] = ball.radius;
    r.metadata["phi_term"] = phi;
    r.metadata["psi_term"] = psi;
    r.metadata["calibration"] = to_json(cal);
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// heat kernel bound under an ergodicity assumption

struct LongRun {
  std::optional<double> burn_in;  // default 20 / r
  std::optional<double> thin;     // default 1 / r
  std::size_t samples = 2000;
  std::optional<double> length;   // default burn_in + samples * thin
  std::size_t batches = 20;
};

struct HeatKernelOptions {
  std::optional<double> c;           // Phi = c ||x - y||_r^2; 0 turns Phi off
  std::optional<SystemSegment> eta;  // calibration partner, default constant zero
};

/// limsup_t P_t f(xi) <= log(mu(e^f) / mu(e^{-Phi(xi, .)})) with mu the
/// empirical law of one long path after burn-in.
inline EstimateReport check_heat_kernel(const CouplingSpec& cs, const SystemSegment& xi, const TestFunction& f,
                                        const std::vector<double>& times, const McConfig& mc,
                                        const LongRun& lr = {}, const HeatKernelOptions& opt = {}) {
  const ModelSpec& m = cs.model;
  f.check(m.dim(), m.blocks());
  const double r = m.r();
  const double burn = lr.burn_in.value_or(20.0 / r);
  const double thin = lr.thin.value_or(1.0 / r);
  require(thin > 0 && burn >= 0, "thinning must be positive and burn-in nonnegative");
  require(lr.batches >= 2 && lr.samples >= lr.batches, "need at least two batches of samples");
  const double length = lr.length.value_or(burn + static_cast<double>(lr.samples) * thin);
  if (!(burn < length)) throw ConfigError("burn-in " + std::to_string(burn) + " is not shorter than the run length " +
                                         std::to_string(length));
  const auto burn_steps = static_cast<std::size_t>(std::llround(burn / mc.dt));
  const auto thin_steps = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(thin / mc.dt)));
  const auto total_steps = static_cast<std::size_t>(std::llround(length / mc.dt));
  const std::size_t samples = std::min(lr.samples, (total_steps - burn_steps) / thin_steps);
  require(samples >= lr.batches, "long run too short for the requested batches");

  double c = 0.0;
  nlohmann::json cal_json;
  if (opt.c) {
    c = *opt.c;
  } else {
    SystemSegment eta;
    if (opt.eta) {
      eta = *opt.eta;
    } else {
      for (const auto& b : xi.blocks) eta.blocks.push_back(Segment::constant(zeros(m.dim()), b.dt(), b.window()));
    }
    const auto cal = calibrate(cs, xi, eta, times, mc);
    c = cal.c;
    cal_json = to_json(cal);
  }

  // left side
  const TimeGrid g = make_grid(times, mc);
  const auto init = make_path_states(m, xi, mc.dt);
  g.cfg.validate(m.r(), detail::system_norm(init));
  const auto lhs = sample_paths(m, init, g, NoiseStream(mc.seed, streams::heat_short), mc.paths, mc.workers, 1,
                                [&](const std::vector<PathState>& s, double* out) { out[0] = f(s); });
  const std::size_t nt = g.times.size();
  std::vector<double> lhs_means;
  for (std::size_t j = 0; j < nt; ++j) lhs_means.push_back(mean_se(lhs, mc.paths, nt, j).mean);
  const auto last = mean_se(lhs, mc.paths, nt, nt - 1);

  // long path, kept whole so distances to xi can be taken over full histories
  const int w = m.state_dim();
  const int d = m.dim();
  std::vector<Segment> xi_grid;
  for (const auto& b : xi.blocks) xi_grid.push_back(b.resampled(mc.dt));
  const std::size_t steps_needed = burn_steps + (samples - 1) * thin_steps;
  std::vector<double> path((steps_needed + 1) * w);
  SolverConfig lcfg = g.cfg;
  lcfg.horizon = static_cast<double>(steps_needed) * mc.dt;
  lcfg.r_stop = std::numeric_limits<double>::infinity();
  run_path(m, init, lcfg, NoiseStream(mc.seed, streams::heat_long), 0, [&](std::size_t k, const std::vector<PathState>& s) {
    for (int b = 0; b < m.blocks(); ++b)
      for (int i = 0; i < d; ++i) path[k * w + b * d + i] = s[b].current()[i];
  });
  auto value = [&](long k, int b) -> Vec {  // path value at step k, continuing into xi for k < 0
    if (k >= 0) return Eigen::Map<const Eigen::VectorXd>(path.data() + k * w + b * d, d);
    const auto lag = static_cast<std::size_t>(-k);
    return lag < xi_grid[b].points() ? xi_grid[b].at_lag(lag) : xi_grid[b].tail_value();
  };
  std::vector<double> ef(samples), ephi(samples);
  parallel_for(samples, resolve_workers(mc.workers), [&](std::size_t j) {
    const long k = static_cast<long>(burn_steps + j * thin_steps);
    double dist = 0.0;
    for (int b = 0; b < m.blocks(); ++b) {
      const auto& xs = xi_grid[b];
      double best = 0.0;
      for (std::size_t l = 0; l < xs.points(); ++l)
        best = std::max(best, std::exp(-r * static_cast<double>(l) * mc.dt) * (xs.at_lag(l) - value(k - static_cast<long>(l), b)).norm());
      const long beyond = k - static_cast<long>(xs.points());
      best = std::max(best, std::exp(-r * xs.window()) * (xs.tail_value() - value(beyond, b)).norm());
      dist += best;
    }
    std::vector<Vec> blocks;
    for (int b = 0; b < m.blocks(); ++b) blocks.push_back(value(k, b));
    struct Point {
      const Vec* v;
      Vec current() const { return *v; }
    };
    std::vector<Point> pts;
    for (const auto& v : blocks) pts.push_back({&v});
    ef[j] = std::exp(f(pts));
    ephi[j] = std::exp(-c * dist * dist);
  });

  // batch means for the right side
  const std::size_t nb = lr.batches, per = samples / nb;
  std::vector<double> rb;
  double sf = 0, sp = 0;
  for (std::size_t j = 0; j < nb * per; ++j) {
    sf += ef[j];
    sp += ephi[j];
  }
  const double rhs = std::log(sf / static_cast<double>(nb * per)) - std::log(sp / static_cast<double>(nb * per));
  for (std::size_t b = 0; b < nb; ++b) {
    double a = 0, e = 0;
    for (std::size_t j = b * per; j < (b + 1) * per; ++j) {
      a += ef[j];
      e += ephi[j];
    }
    rb.push_back(std::log(a / per) - std::log(e / per));
  }
  const auto rb_stats = mean_se(rb, nb);

  EstimateReport rep;
  rep.name = "heat_kernel";
  rep.estimate = last.mean;
  rep.stderr_ = std::hypot(last.se, rb_stats.se);
  rep.bound = rhs;
  rep.settle_upper();
  rep.metadata = mc_metadata(mc, times);
  rep.metadata["assumption"] =
      "ergodic: invariant measure approximated by the empirical law of one long path after burn-in";
  rep.metadata["t"] = g.times.back();
  rep.metadata["lhs_by_t"] = lhs_means;
  rep.metadata["c"] = c;
  rep.metadata["burn_in"] = burn;
  rep.metadata["thin"] = thin;
  rep.metadata["samples"] = samples;
  rep.metadata["batches"] = nb;
  rep.metadata["log_mu_ef"] = std::log(sf / static_cast<double>(nb * per));
  rep.metadata["log_mu_e_minus_phi"] = std::log(sp / static_cast<double>(nb * per));
  rep.metadata["test_function"] = to_json(f);
  if (!cal_json.is_null()) rep.metadata["calibration"] = cal_json;
  return rep;
}

// ---------------------------------------------------------------------------
// moment envelope

namespace est_detail {

// smallest C > 0 with C e^{C t} >= q
inline double envelope_rate(double q, double t) {
  if (q <= 0) return 0.0;
  double lo = 0.0, hi = 1.0;
  while (hi * std::exp(hi * t) < q) hi *= 2.0;
  for (int i = 0; i < 200 && hi - lo > 1e-12 * hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    (mid * std::exp(mid * t) >= q ? hi : lo) = mid;
  }
  return hi;
}

}  // namespace est_detail

/// Fits the smallest C with mean ||X_t||_r^2 + 3 se <= C e^{Ct}(1 + ||xi||_r^2)
/// on the first half of the paths for every initial segment, then checks the
/// envelope on the second half.
inline EstimateReport moment_bound(const ModelSpec& m, const std::vector<SystemSegment>& inits,
                                   const std::vector<double>& times, const McConfig& mc) {
  require(!inits.empty(), "moment bound needs initial segments");
  require(mc.paths >= 4, "moment bound needs at least four paths");
  const TimeGrid g = make_grid(times, mc);
  const std::size_t nt = g.times.size();
  const std::size_t half = mc.paths / 2;
  double C = 0.0;
  double worst = -std::numeric_limits<double>::infinity();
  double worst_se = 0.0;
  std::vector<std::vector<double>> data;
  std::vector<double> norms0;
  for (std::size_t q = 0; q < inits.size(); ++q) {
    const auto st = make_path_states(m, inits[q], mc.dt);
    g.cfg.validate(m.r(), detail::system_norm(st));
    norms0.push_back(detail::system_norm(st));
    data.push_back(sample_paths(m, st, g, NoiseStream(mc.seed, streams::moments + 1000 * q), mc.paths, mc.workers, 1,
                                [](const std::vector<PathState>& s, double* out) {
                                  const double n = detail::system_norm(s);
                                  out[0] = n * n;
                                }));
    for (std::size_t j = 0; j < nt; ++j) {
      const auto fit = mean_se(data.back(), half, nt, j);
      C = std::max(C, est_detail::envelope_rate((fit.mean + 3 * fit.se) / (1 + norms0[q] * norms0[q]), g.times[j]));
    }
  }
  // validation half: ratio of the held-out second moment to the envelope
  nlohmann::json curves = nlohmann::json::array();
  for (std::size_t q = 0; q < inits.size(); ++q) {
    std::vector<double> held(data[q].begin() + half * nt, data[q].end());
    std::vector<double> curve;
    for (std::size_t j = 0; j < nt; ++j) {
      const auto v = mean_se(held, mc.paths - half, nt, j);
      const double env = C * std::exp(C * g.times[j]) * (1 + norms0[q] * norms0[q]);
      curve.push_back(v.mean);
      if (v.mean - env > worst) {
        worst = v.mean - env;
        worst_se = v.se;
      }
    }
    curves.push_back({{"initial_norm", norms0[q]}, {"second_moment", curve}});
  }
  EstimateReport r;
  r.name = "moment_bound";
  r.estimate = worst;  // max_t (held-out moment - envelope)
  r.stderr_ = worst_se;
  r.bound = 0.0;
  r.settle_upper();
  r.metadata = mc_metadata(mc, times);
  r.metadata["C"] = C;
  r.metadata["curves"] = curves;
  r.metadata["fit_paths"] = half;
  return r;
}

}  // namespace sfde

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

#include "sfde/builtin_models.hpp"
#include "sfde/convergence.hpp"
#include "sfde/trajectory_io.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

using namespace sfde;
using Catch::Approx;

namespace {

Vec v1(double x) {
  Vec v(1);
  v[0] = x;
  return v;
}

Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

struct ZeroNoise {
  Vec increment(std::uint64_t, std::uint64_t, int d, double) const { return zeros(d); }
};

Segment const_seg(const Vec& u, double dt = 0.01, double r = 1.0) {
  return Segment::constant(u, dt, default_window(r, dt));
}

models::LinearParams deterministic(double a) {
  models::LinearParams p;
  p.a = a;
  p.sigma0 = 0.0;
  return p;
}

// brute-force sup_{s <= t} e^{-r(t-s)} |X(s)| over the recorded grid plus the initial segment
double brute_norm(const Trajectory& tr, std::size_t k, const Segment& init, double r) {
  double best = weighted_norm(init, r) * std::exp(-r * tr.times[k]);
  for (std::size_t j = 0; j <= k; ++j)
    best = std::max(best, std::exp(-r * (tr.times[k] - tr.times[j])) * tr.state(j).norm());
  return best;
}

}  // namespace

TEST_CASE("em_step with zero coefficients gives a zero increment") {
  const auto m = models::zero(2, 1.0);
  const Vec inc = em_step(m, const_seg(v2(1.0, -3.0)), 0.01, v2(0.4, -0.2));
  CHECK(inc.norm() == 0.0);
}

TEST_CASE("em_step with unit diffusion and no drift returns dW") {
  auto p = deterministic(0.0);
  p.sigma0 = 1.0;
  p.dim = 2;
  const auto m = models::linear(p);
  const Vec dw = v2(0.13, -0.07);
  CHECK((em_step(m, const_seg(v2(5.0, 2.0)), 0.01, dw) - dw).norm() == 0.0);
}

TEST_CASE("em_step for the linear drift by hand") {
  const auto m = models::linear(deterministic(1.0));
  CHECK(em_step(m, const_seg(v1(1.0)), 0.01, v1(0.0))[0] == Approx(-0.01).epsilon(1e-14));
}

TEST_CASE("em_step rejects non-finite noise") {
  const auto m = models::linear({});
  CHECK_THROWS_AS(em_step(m, const_seg(v1(1.0)), 0.01, v1(std::nan(""))), ConfigError);
}

TEST_CASE("deterministic linear path tracks exp(-t) to first order") {
  const auto m = models::linear(deterministic(1.0));
  double prev = 0.0;
  for (double dt : {0.02, 0.01, 0.005}) {
    SolverConfig cfg;
    cfg.dt = dt;
    cfg.horizon = 2.0;
    const auto tr = simulate_path(m, SystemSegment(const_seg(v1(1.0), dt)), cfg, ZeroNoise{});
    double err = 0.0;
    for (std::size_t k = 0; k < tr.size(); ++k) err = std::max(err, std::abs(tr.state(k)[0] - std::exp(-tr.times[k])));
    CHECK(err <= 0.5 * dt);
    if (prev > 0) CHECK(prev / err == Approx(2.0).epsilon(0.05));
    prev = err;
  }
}

TEST_CASE("OU variance matches the exact formula") {
  models::LinearParams p;
  p.a = 1.0;
  p.sigma0 = 0.8;
  const auto m = models::linear(p);
  SolverConfig cfg;
  cfg.dt = 0.01;
  cfg.horizon = 1.0;
  const auto init = make_path_states(m, SystemSegment(const_seg(v1(0.0))), cfg.dt);
  const NoiseStream noise(42);
  const std::size_t n = 10000;
  std::vector<double> end(n);
  parallel_for(n, 1, [&](std::size_t i) {
    run_path(m, init, cfg, noise, i, [&](std::size_t k, const std::vector<PathState>& st) {
      if (k == cfg.steps()) end[i] = st[0].current()[0];
    });
  });
  double s = 0, s2 = 0;
  for (double x : end) {
    s += x;
    s2 += x * x;
  }
  const double mean = s / n;
  const double var = s2 / n - mean * mean;
  const double exact = p.sigma0 * p.sigma0 / (2 * p.a) * (1 - std::exp(-2 * p.a * cfg.horizon));
  // Var of the sample variance of a Gaussian is 2 sigma^4 / n
  const double se = exact * std::sqrt(2.0 / n);
  CHECK(std::abs(var - exact) <= 3 * se);
  CHECK(std::abs(mean) <= 3 * std::sqrt(exact / n));
}

TEST_CASE("solver config validation") {
  const auto m = models::linear({});
  const auto seg = const_seg(v1(2.0));
  SolverConfig cfg;
  cfg.r_stop = 1.5;  // below ||xi||_r = 2
  CHECK_THROWS_AS(simulate_path(m, seg, cfg, NoiseStream(1)), ConfigError);
  cfg.r_stop = 2.0;
  CHECK_THROWS_AS(simulate_path(m, seg, cfg, NoiseStream(1)), ConfigError);
  SolverConfig big;
  big.dt = 0.8;  // > log 2 / r
  big.horizon = 1.6;
  CHECK_THROWS_AS(big.validate(1.0, 0.0), ConfigError);
  big.enforce_grid = false;
  CHECK_NOTHROW(big.validate(1.0, 0.0));
  SolverConfig off;
  off.dt = 0.03;
  off.horizon = 1.0;
  CHECK_THROWS_AS(off.validate(1.0, 0.0), ConfigError);
}

TEST_CASE("recorded norms equal the brute-force weighted norm") {
  models::LinearParams p;
  p.a = 0.5;
  p.sigma0 = 1.0;
  p.c = 0.3;
  p.kappa = 2.0;
  const auto m = models::linear(p);
  const auto seg = Segment::from_function(1, 0.01, default_window(1.0, 0.01),
                                          [](double th) { return v1(std::cos(3 * th)); });
  SolverConfig cfg;
  cfg.horizon = 3.0;
  const auto tr = simulate_path(m, seg, cfg, NoiseStream(5));
  REQUIRE(tr.size() == cfg.steps() + 1);
  for (std::size_t k = 0; k < tr.size(); k += 7)
    CHECK(tr.norms[k] == Approx(brute_norm(tr, k, seg, m.r())).epsilon(1e-12));
}

TEST_CASE("explosion guard stops the path") {
  const auto m = models::linear(deterministic(-3.0));  // growth
  SolverConfig cfg;
  cfg.horizon = 5.0;
  cfg.r_stop = 10.0;
  cfg.stride = 10;
  const auto tr = simulate_path(m, const_seg(v1(1.0)), cfg, ZeroNoise{});
  REQUIRE(tr.stopped);
  CHECK(tr.norms.back() >= cfg.r_stop);
  CHECK(tr.stop_time == tr.times.back());
  CHECK(tr.stop_time < cfg.horizon);
  // the guard sees the first grid time past the radius
  CHECK(tr.norms.back() < cfg.r_stop * std::exp(3.0 * cfg.dt) * 1.001);
}

TEST_CASE("non-finite state reports the step index") {
  const auto m = models::linear(deterministic(-1e300));
  SolverConfig cfg;
  cfg.horizon = 1.0;
  try {
    simulate_path(m, const_seg(v1(1.0)), cfg, ZeroNoise{});
    FAIL("expected a step error");
  } catch (const StepError& e) {
    CHECK(e.step() == 1);
  }
}

TEST_CASE("stride records every k-th grid time and the final one") {
  const auto m = models::linear({});
  SolverConfig cfg;
  cfg.horizon = 1.0;
  cfg.stride = 30;
  const auto tr = simulate_path(m, const_seg(v1(1.0)), cfg, NoiseStream(3));
  REQUIRE(tr.size() == 5);  // 0, 30, 60, 90, 100
  CHECK(tr.times.back() == Approx(1.0));
  CHECK(tr.times[1] == Approx(0.3));
}

TEST_CASE("identical seeds reproduce trajectories bit for bit") {
  models::LinearParams p;
  p.epsilon = 0.3;
  p.c = 0.5;
  const auto m = models::linear(p);
  SolverConfig cfg;
  cfg.horizon = 2.0;
  const auto a = simulate_path(m, const_seg(v1(0.7)), cfg, NoiseStream(11), 4);
  const auto b = simulate_path(m, const_seg(v1(0.7)), cfg, NoiseStream(11), 4);
  const auto c = simulate_path(m, const_seg(v1(0.7)), cfg, NoiseStream(11), 5);
  CHECK(a.states == b.states);
  CHECK(a.norms == b.norms);
  CHECK(a.states != c.states);
}

TEST_CASE("parallel fan-out is independent of the worker count") {
  const auto m = models::linear({});
  SolverConfig cfg;
  cfg.horizon = 0.5;
  const auto init = make_path_states(m, SystemSegment(const_seg(v1(1.0))), cfg.dt);
  auto run = [&](int workers) {
    std::vector<double> out(200);
    parallel_for(out.size(), workers, [&](std::size_t i) {
      run_path(m, init, cfg, NoiseStream(9), i, [&](std::size_t k, const std::vector<PathState>& st) {
        if (k == cfg.steps()) out[i] = st[0].current()[0];
      });
    });
    return out;
  };
  CHECK(run(1) == run(3));
}

TEST_CASE("neutral step with G = 0 equals em_step") {
  models::NeutralParams np;
  np.base.c = 0.4;
  const auto m = models::neutral(np);
  const auto lin = models::linear(np.base);
  const auto seg = Segment::from_function(1, 0.01, default_window(1.0, 0.01), [](double th) { return v1(1 + th); });
  const Vec dw = v1(0.05);
  const auto res = neutral_step(m, seg, 0.01, dw);
  CHECK(res.state[0] == Approx(seg.at_lag(0)[0] + em_step(lin, seg, 0.01, dw)[0]).epsilon(1e-14));
}

TEST_CASE("neutral step with a delay of at least dt is explicit") {
  models::NeutralParams np;
  np.g_delay = 0.3;
  np.tau = 0.05;
  const auto m = models::neutral(np);
  const auto seg = Segment::from_function(1, 0.01, default_window(1.0, 0.01), [](double th) { return v1(std::exp(th)); });
  const Vec dw = v1(-0.02);
  const auto res = neutral_step(m, seg, 0.01, dw);
  CHECK(res.iterations == 1);
  // X(t+dt) = G(X_{t+dt}) + X(t) - G(X_t) + b dt + sigma dW, with G reading xi(-tau + dt)
  const double g_new = 0.3 * seg.eval(-0.04)[0];
  const double g_now = 0.3 * seg.eval(-0.05)[0];
  const double expect = g_new + 1.0 - g_now + (-1.0 * 1.0) * 0.01 + 1.0 * dw[0];
  CHECK(res.state[0] == Approx(expect).epsilon(1e-14));
}

TEST_CASE("implicit neutral step contracts at least geometrically with ratio delta") {
  SECTION("fading G") {
    models::NeutralParams np;
    np.kappa_g = 2.0;
    np.g_fading = 0.25;  // delta = g kappa / (kappa - r) = 0.5
    const auto m = models::neutral(np);
    REQUIRE(*m.constants().delta == Approx(0.5));
    const double dt = 0.3;
    const auto seg = Segment::constant(v1(1.0), dt, 18.9);
    const Vec dw = v1(0.4);
    const auto res = neutral_step(m, seg, dt, dw);
    REQUIRE(res.iterations >= 3);
    for (std::size_t k = 1; k < res.residuals.size(); ++k)
      CHECK(res.residuals[k] <= std::pow(0.5, static_cast<double>(k)) * res.residuals[0] + 1e-15);
  }
  SECTION("delay shorter than the step") {
    models::NeutralParams np;
    np.tau = 0.05;
    np.g_delay = 0.5 * std::exp(-0.05);  // delta = 0.5
    const auto m = models::neutral(np);
    const double dt = 0.1;
    const auto seg = Segment::from_function(1, dt, 18.5, [](double th) { return v1(std::sin(th)); });
    const auto res = neutral_step(m, seg, dt, v1(0.3));
    REQUIRE(res.iterations >= 3);
    for (std::size_t k = 1; k < res.residuals.size(); ++k)
      CHECK(res.residuals[k] <= std::pow(0.5, static_cast<double>(k)) * res.residuals[0] + 1e-15);
    // relation holds at the fixed point
    const auto st = make_path_states(m, SystemSegment(seg), dt);
    const TentativeView view(st[0], res.state);
    const TentativeView* vb[2] = {&view, &view};
    const PathState* pb[2] = {&st[0], &st[0]};
    const Vec lhs = res.state - m.neutral(vb);
    const Vec rhs = st[0].current() - m.neutral(pb) + m.drift(pb) * dt + m.diffusion(pb) * v1(0.3);
    CHECK((lhs - rhs).norm() <= 1e-12);
  }
}

TEST_CASE("neutral iteration cap raises a step error") {
  models::NeutralParams np;
  np.tau = 0.05;
  np.g_delay = 0.9 * std::exp(-0.05);
  const auto m = models::neutral(np);
  const auto st = make_path_states(m, SystemSegment(Segment::constant(v1(1.0), 0.1, 18.5)), 0.1);
  CHECK_THROWS_AS(neutral_solve(m, st[0], 0.1, v1(0.5), std::size_t{7}, 1e-300, 2), StepError);
  try {
    neutral_solve(m, st[0], 0.1, v1(0.5), std::size_t{7}, 1e-300, 2);
  } catch (const StepError& e) {
    CHECK(e.step() == 7);
  }
}

TEST_CASE("neutral_step on a non-neutral model is a usage error") {
  CHECK_THROWS_AS(neutral_step(models::linear({}), const_seg(v1(1.0)), 0.01, v1(0.0)), UsageError);
}

TEST_CASE("hamiltonian step examples") {
  models::HamiltonianParams p;
  p.dim = 2;
  p.lambda = 2.0;
  const auto m = models::hamiltonian(p);
  const double dt = 0.1;
  const auto x = Segment::constant(v2(0.3, -0.4), dt, 18.5);
  {
    const auto y = Segment::constant(v2(1.0, 0.0), dt, 18.5);
    const auto [dx, dy] = hamiltonian_step(m, x, y, dt, v2(0, 0));
    CHECK(dx[0] == Approx(0.2).epsilon(1e-14));
    CHECK(dx[1] == 0.0);
  }
  {
    const auto y = Segment::constant(v2(0.0, 0.0), dt, 18.5);
    const auto [dx, dy] = hamiltonian_step(m, x, y, dt, v2(0.1, 0.2));
    CHECK(dx.norm() == 0.0);
  }
  {
    models::HamiltonianParams q;
    q.k = 0;
    q.gamma = 0;
    q.c = 0;
    const auto free = models::hamiltonian(q);
    const auto y = Segment::constant(v1(0.5), dt, 18.5);
    const auto [dx, dy] = hamiltonian_step(free, Segment::constant(v1(0.0), dt, 18.5), y, dt, v1(0.37));
    CHECK(dy[0] == Approx(0.37).epsilon(1e-14));
    CHECK(dx[0] == Approx(q.lambda * 0.5 * dt).epsilon(1e-14));
  }
  CHECK_THROWS_AS(hamiltonian_step(models::linear({}), x, x, dt, v2(0, 0)), UsageError);
}

TEST_CASE("hamiltonian trajectory integrates Y into X") {
  models::HamiltonianParams p;
  p.k = 0;
  p.gamma = 0;
  p.c = 0;
  p.sigma0 = 1.0;
  const auto m = models::hamiltonian(p);
  SolverConfig cfg;
  cfg.dt = 0.01;
  cfg.horizon = 1.0;
  const auto tr = simulate_path(m, SystemSegment(Segment::constant(v1(0.0), 0.01, 37.0),
                                                 Segment::constant(v1(0.0), 0.01, 37.0)),
                                cfg, NoiseStream(2));
  REQUIRE(tr.blocks == 2);
  double x = 0.0;
  for (std::size_t k = 0; k + 1 < tr.size(); ++k) x += p.lambda * tr.block(k, 1)[0] * cfg.dt;
  CHECK(tr.block(tr.size() - 1, 0)[0] == Approx(x).margin(1e-12));
  const double nx = weighted_norm(Segment::constant(v1(0.0), 0.01, 37.0), m.r());
  CHECK(nx == 0.0);
  CHECK(tr.norms.back() > 0.0);
}

TEST_CASE("strong order of Euler-Maruyama") {
  const std::vector<double> dts = {1.0 / 16, 1.0 / 32, 1.0 / 64, 1.0 / 128, 1.0 / 256};
  SECTION("additive noise") {
    models::LinearParams p;
    p.a = 1.0;
    p.c = 0.5;
    p.kappa = 2.0;
    p.sigma0 = 0.5;
    const auto m = models::linear(p);
    const auto st = strong_order(m, SystemSegment(Segment::constant(v1(1.0), 1.0 / 16, 20.0)), 1.0, dts,
                                 1.0 / 16384, 200, 17);
    CHECK(st.fit.slope >= 0.8);
    CHECK(st.fit.slope <= 1.2);
  }
  SECTION("multiplicative noise") {
    models::LinearParams p;
    p.a = 1.0;
    p.sigma0 = 1.0;
    p.epsilon = 0.9;
    const auto m = models::linear(p);
    const auto st = strong_order(m, SystemSegment(Segment::constant(v1(0.0), 1.0 / 16, 20.0)), 1.0, dts,
                                 1.0 / 16384, 200, 17);
    CHECK(st.fit.slope >= 0.4);
    CHECK(st.fit.slope <= 0.6);
  }
}

TEST_CASE("aggregated noise sums fine increments") {
  const NoiseStream fine(4);
  const AggregatedNoise agg(fine, 4);
  const Vec a = agg.increment(2, 3, 2, 0.4);
  Vec s = zeros(2);
  for (int j = 0; j < 4; ++j) s += fine.increment(2, 12 + j, 2, 0.1);
  CHECK((a - s).norm() == 0.0);
}

TEST_CASE("trajectory csv and binary dumps") {
  const auto m = models::linear({});
  SolverConfig cfg;
  cfg.horizon = 0.05;
  const auto tr = simulate_path(m, const_seg(v1(1.0)), cfg, NoiseStream(1));
  std::ostringstream csv;
  write_trajectory_csv(csv, tr);
  const std::string text = csv.str();
  CHECK(text.rfind("t,x_1,norm_r,stopped\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == static_cast<long>(tr.size() + 1));

  std::stringstream bin;
  write_trajectory_binary(bin, tr);
  const std::string raw = bin.str();
  CHECK(raw.substr(0, 5) == "SFDE1");
  const auto t = read_trajectory_binary(bin);
  REQUIRE(t.rows == tr.size());
  REQUIRE(t.cols == 4);
  for (std::size_t k = 0; k < tr.size(); ++k) {
    CHECK(t.values[k * 4] == tr.times[k]);
    CHECK(t.values[k * 4 + 1] == tr.states[k]);
    CHECK(t.values[k * 4 + 2] == tr.norms[k]);
  }
  std::istringstream bad("SFDE0xxxxxxxx");
  CHECK_THROWS_AS(read_trajectory_binary(bad), ConfigError);
}

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
#include "sfde/estimators.hpp"

#include <catch_amalgamated.hpp>

#include <boost/math/special_functions/gamma.hpp>
#include <boost/multiprecision/cpp_dec_float.hpp>

#include <cmath>

using namespace sfde;
using Catch::Approx;
using big = boost::multiprecision::cpp_dec_float_50;

namespace {

Vec v1(double x) {
  Vec v(1);
  v[0] = x;
  return v;
}

// Product form evaluated in 50 digits.
big lambda_reference(big p, big a) {
  using boost::multiprecision::pow;
  const big one = 1, two = 2;
  const big f1 = pow(pow(p, one + p) / (two * pow(p - one, p - one)), p / two);
  const big f2 = pow(boost::math::tgamma(one - two * a) / pow(two, one - two * a), p / two);
  const big f3 = pow(one - one / p, p * a - one);
  const big f4 = pow(boost::math::tgamma((p * a - one) / (p - one)), p - one);
  return f1 * f2 * f3 * f4;
}

Segment cseg(double u, double dt = 0.01, double r = 1.0) { return Segment::constant(v1(u), dt, default_window(r, dt)); }

Segment wavy(double amp, double dt = 0.01, double r = 1.0) {
  return Segment::from_function(1, dt, default_window(r, dt),
                                [&](double th) { return v1(amp * std::cos(2 * th) + 0.1); });
}

McConfig mc(std::size_t paths, double dt = 0.01, std::uint64_t seed = 3) {
  McConfig c;
  c.paths = paths;
  c.dt = dt;
  c.seed = seed;
  c.workers = 1;
  return c;
}

models::LinearParams multiplicative() {
  models::LinearParams p;
  p.a = 1.0;
  p.c = 0.5;
  p.kappa = 2.5;
  p.sigma0 = 1.0;
  p.epsilon = 0.4;
  return p;
}

}  // namespace

TEST_CASE("lambda_p_alpha matches a 50-digit evaluation at p = 4, alpha = 1/3") {
  const double v = lambda_p_alpha(4.0, 1.0 / 3.0);
  const big ref = lambda_reference(big(4), big(1) / 3);
  CHECK(std::abs(v / ref.convert_to<double>() - 1.0) <= 1e-10);
}

TEST_CASE("lambda_p_alpha matches a 50-digit evaluation on a 20-point grid") {
  int count = 0;
  for (double p : {2.2, 2.5, 3.0, 4.0, 7.5}) {
    for (double s : {0.1, 0.35, 0.65, 0.9}) {
      const double a = 1.0 / p + s * (0.5 - 1.0 / p);
      const big ref = lambda_reference(big(p), big(a));
      CHECK(std::abs(lambda_p_alpha(p, a) / ref.convert_to<double>() - 1.0) <= 1e-10);
      ++count;
    }
  }
  CHECK(count == 20);
}

TEST_CASE("lambda_p_alpha blows up at both alpha poles and rejects the outside") {
  const double p = 3.0;
  CHECK(lambda_p_alpha(p, 0.5 - 1e-9) > 1e6 * lambda_p_alpha(p, 0.4));
  CHECK(lambda_p_alpha(p, 1.0 / p + 1e-9) > 1e6 * lambda_p_alpha(p, 0.4));
  CHECK_THROWS_AS(lambda_p_alpha(2.0, 0.4), DomainError);
  CHECK_THROWS_AS(lambda_p_alpha(3.0, 0.5), DomainError);
  CHECK_THROWS_AS(lambda_p_alpha(3.0, 1.0 / 3.0), DomainError);
  CHECK_THROWS_AS(lambda_p_alpha(3.0, 0.2), DomainError);
}

TEST_CASE("hamiltonian constants at (L1, L2, beta, r) = (1, 0, 1, 0.5)") {
  const auto hc = hamiltonian_constants(1.0, 0.0, 1.0, 0.5);
  // minimizer computed independently with a Nelder-Mead search in double precision
  CHECK(hc.p0 == Approx(2.36505201).epsilon(1e-6));
  CHECK(hc.alpha0 == Approx(0.46398052).epsilon(1e-6));
  CHECK(hc.lambda_min == Approx(5493.4544).epsilon(1e-7));
  REQUIRE(hc.p0 > 2);
  REQUIRE(hc.alpha0 > 1 / hc.p0);
  REQUIRE(hc.alpha0 < 0.5);
  // the same formulas in 50 digits at the reported minimizer
  using boost::multiprecision::pow;
  const big p = hc.p0, one = 1, two = 2;
  const big mu = pow(two, 3 * p - one) * pow(big(1), p) * pow(one - one / p, p - one);
  CHECK(hc.mu == Approx(mu.convert_to<double>()).epsilon(1e-12));
  const big r = 0.5, beta = 1;
  const big thr = r + (one + beta + two * beta * beta) / (two * beta) * pow(mu / (two * p * r), two / (p - two));
  CHECK(hc.threshold == Approx(thr.convert_to<double>()).epsilon(1e-10));
  CHECK(hc.c_beta == 2.0);
}

TEST_CASE("hamiltonian constant invariants") {
  const auto hc = hamiltonian_constants(0.3, 0.2, 0.8, 1.0);
  const double base = lambda_p_alpha(hc.p0, hc.alpha0);
  for (double dp : {-1e-3, 0.0, 1e-3})
    for (double da : {-1e-4, 0.0, 1e-4})
      CHECK(lambda_p_alpha(hc.p0 + dp, hc.alpha0 + da) >= base * (1 - 1e-12));
  CHECK(hc.threshold == Approx(lambda_threshold(hc.mu, hc.p0, 1.0, 0.8)).epsilon(1e-14));
  CHECK(hc.mu == Approx(mu_p(hc.p0, hc.lambda_min, 0.3, 0.2)).epsilon(1e-14));
  // diffusion difference term vanishes with L2 = 0
  const auto z = hamiltonian_constants(0.3, 0.0, 0.8, 1.0);
  CHECK(z.mu == Approx(std::pow(2.0, 3 * z.p0 - 1) * std::pow(0.3, z.p0) * std::pow(1 - 1 / z.p0, z.p0 - 1)).epsilon(1e-13));
  // threshold grows with mu
  double prev = 0.0;
  for (double mu : {1.0, 10.0, 100.0, 1000.0}) {
    const double t = lambda_threshold(mu, hc.p0, 1.0, 0.8);
    CHECK(t > prev);
    prev = t;
  }
  LambdaSearchGrid empty;
  empty.p_points = 0;
  CHECK_THROWS_AS(hamiltonian_constants(1, 0, 1, 0.5, empty), ConfigError);
  CHECK_THROWS_AS(hamiltonian_constants(-1, 0, 1, 0.5), ConfigError);
  CHECK_THROWS_AS(hamiltonian_constants(1, 0, 0, 0.5), ConfigError);
}

TEST_CASE("decay rate of the constant-sigma linear model is pinned at r") {
  models::LinearParams p;
  p.a = 1.0;
  p.sigma0 = 0.5;
  const auto m = models::linear(p);
  const auto cs = make_coupling(m, 2.0);
  const double dt = 1e-3;
  auto cfg = mc(8, dt);
  const std::vector<double> times = {2, 4, 6, 8, 10};
  const auto res = estimate_decay(cs, SystemSegment(cseg(1.5, dt)), SystemSegment(cseg(0.5, dt)), 2.0, times, cfg);
  CHECK(res.rate == Approx(m.r()).epsilon(0.05));
  CHECK(res.report.pass);
  CHECK(res.report.name == "decay");

  // the pointwise difference decays at a + lambda
  SolverConfig sc;
  sc.dt = dt;
  sc.horizon = 4.0;
  const auto tr = simulate_coupled(cs, cseg(1.5, dt), cseg(0.5, dt), sc, NoiseStream(1));
  std::vector<double> t, lz;
  for (std::size_t k = 500; k < tr.size(); k += 500) {
    t.push_back(tr.times[k]);
    lz.push_back(std::log(std::abs(tr.x[k] - tr.y[k])));
  }
  CHECK(-fit_line(t, lz).slope == Approx(p.a + 2.0).epsilon(0.01));

  // scaling the offset by s scales the p-th moment by s^p
  const auto res2 = estimate_decay(cs, SystemSegment(cseg(2.5, dt)), SystemSegment(cseg(0.5, dt)), 2.0, times, cfg);
  for (std::size_t j = 0; j < times.size(); ++j) CHECK(res2.mean[j] / res.mean[j] == Approx(4.0).epsilon(1e-9));
  CHECK(res2.rate == Approx(res.rate).epsilon(1e-9));
}

TEST_CASE("decay with identical starts is a degenerate fit") {
  const auto m = models::linear({});
  const auto cs = make_coupling(m, 3.0);
  CHECK_THROWS_AS(estimate_decay(cs, SystemSegment(cseg(1)), SystemSegment(cseg(1)), 1.0, {1, 2}, mc(4)),
                  DegenerateFitError);
}

TEST_CASE("decay under multiplicative noise scales like the offset to the p") {
  const auto m = models::linear(multiplicative());
  const auto cs = make_coupling(m, 3.0);
  const std::vector<double> times = {2, 4, 6, 8};
  auto cfg = mc(400);
  const SystemSegment eta(wavy(0.3));
  const Segment off = cseg(0.2);
  const auto a = estimate_decay(cs, SystemSegment(eta[0].plus(off)), eta, 2.0, times, cfg);
  const auto b = estimate_decay(cs, SystemSegment(eta[0].plus(off, 2.0)), eta, 2.0, times, cfg);
  CHECK(a.rate > 0.0);
  const double expo = std::log(b.mean[1] / a.mean[1]) / std::log(2.0);
  CHECK(expo == Approx(2.0).epsilon(0.1));
}

TEST_CASE("log-Harnack with a constant function is an equality before corrections") {
  const auto m = models::linear(multiplicative());
  const auto cs = make_coupling(m, 3.0);
  const auto rows = check_alh(cs, SystemSegment(wavy(0.5)), SystemSegment(wavy(-0.5)), TestFunction::constant(0.7),
                              {1.0, 2.0}, mc(50));
  for (const auto& r : rows) {
    CHECK(r.estimate == Approx(r.metadata["log_pt_f"].get<double>()).epsilon(1e-12));
    CHECK(r.margin >= 0.0);
    CHECK(r.pass);
  }
}

TEST_CASE("log-Harnack on the diagonal reduces to Jensen") {
  const auto m = models::linear(multiplicative());
  const auto cs = make_coupling(m, 3.0);
  AlhOptions opt;
  opt.common_noise = true;
  const auto rows = check_alh(cs, SystemSegment(wavy(0.5)), SystemSegment(wavy(0.5)), TestFunction::tanh_of(),
                              {1.0, 2.0, 4.0}, mc(300), opt);
  for (const auto& r : rows) {
    CHECK(r.metadata["entropy_term"].get<double>() == 0.0);
    CHECK(r.margin >= 0.0);
  }
}

TEST_CASE("log-Harnack holds on the linear model") {
  const auto m = models::linear(multiplicative());
  const auto cs = make_coupling(m);
  const double r0 = 0.5 * m.r();
  std::vector<double> times;
  for (double k : {1.0, 2.0, 4.0, 8.0}) times.push_back(k / r0);
  const auto rows = check_alh(cs, SystemSegment(wavy(1.0)), SystemSegment(wavy(-0.5)), TestFunction::tanh_of(),
                              times, mc(1500));
  REQUIRE(rows.size() == 4);
  for (const auto& r : rows) CHECK(r.pass);
  CHECK(all_pass(rows));
  const auto cal = rows[0].metadata["calibration"];
  CHECK(cal["c"].get<double>() >= cal["c_entropy"].get<double>());
  CHECK(cal["c"].get<double>() >= cal["c_decay"].get<double>());
}

TEST_CASE("log-Harnack rejects a non-positive f") {
  CHECK_THROWS_AS(test_function_from_json({{"f_constant", 0.0}}), UsageError);
  CHECK_THROWS_AS(test_function_from_json({{"kind", "tanh"}, {"lipschitz", 3.0}}), UsageError);
  CHECK(test_function_from_json({{"f_constant", std::exp(1.0)}}).value == Approx(1.0));
}

TEST_CASE("gradient estimate") {
  const auto m = models::linear(multiplicative());
  const auto cs = make_coupling(m);
  const double r0 = 0.5 * m.r();
  const double t = 8.0 / r0;
  const SystemSegment xi(wavy(0.4));
  CounterRng rng(5);
  std::vector<SystemSegment> dirs;
  for (int i = 0; i < 2; ++i) dirs.push_back(random_direction(m, 0.01, xi[0].window(), rng));
  SECTION("constant f gives a zero quotient") {
    const auto rows = check_gradient(cs, xi, dirs, {0.1}, TestFunction::constant(2.0), 2.0, mc(50));
    for (const auto& r : rows) {
      CHECK(r.estimate == 0.0);
      CHECK(r.pass);
    }
  }
  SECTION("quotient below the bound at t = 8 / r0, stable in eps") {
    const auto rows = check_gradient(cs, xi, dirs, {0.1, 0.05, 0.025}, TestFunction::tanh_of(), t, mc(300));
    REQUIRE(rows.size() == 6);
    for (const auto& r : rows) CHECK(r.pass);
    for (std::size_t d = 0; d < 2; ++d) {
      const double q1 = rows[3 * d].estimate, q3 = rows[3 * d + 2].estimate;
      CHECK(std::abs(q1 - q3) <= 0.1 * std::max(q1, q3) + 3 * (rows[3 * d].stderr_ + rows[3 * d + 2].stderr_));
    }
  }
  SECTION("short time: finite differences are not noise-dominated") {
    const auto rows = check_gradient(cs, xi, dirs, {0.1}, TestFunction::tanh_of(), 0.5, mc(300));
    for (const auto& r : rows) {
      CHECK_FALSE(r.inconclusive);
      CHECK(r.pass);
    }
  }
}

TEST_CASE("irreducibility") {
  const auto m = models::linear(multiplicative());
  const auto cs = make_coupling(m);
  const SystemSegment x(wavy(0.8)), y(wavy(-0.3));
  SECTION("the whole space") {
    Ball all{{zeros(1)}, 1e9};
    const auto rows = check_irreducibility(cs, x, all, 0.1, 3, y, {1.0, 2.0}, mc(100));
    for (const auto& r : rows) {
      CHECK(r.estimate == 1.0);
      CHECK(r.metadata["p_y_eps"].get<double>() == 1.0);
      CHECK(r.margin >= 0.0);
      CHECK(r.pass);
    }
  }
  SECTION("diagonal") {
    Ball b{{zeros(1)}, 1.0};
    const auto rows = check_irreducibility(cs, x, b, 0.2, 2, x, {4.0, 8.0}, mc(800));
    for (const auto& r : rows) {
      CHECK(r.metadata["phi_term"].get<double>() == 0.0);
      CHECK(r.pass);
    }
  }
  SECTION("ball around the stationary mean") {
    Ball b{{zeros(1)}, 1.0};
    const auto rows = check_irreducibility(cs, x, b, 0.2, 2, y, {4.0, 8.0}, mc(800));
    for (const auto& r : rows) {
      CHECK(r.pass);
      CHECK_FALSE(r.inconclusive);
    }
  }
  SECTION("empty ball is inconclusive") {
    Ball b{{v1(100.0)}, 0.1};
    const auto rows = check_irreducibility(cs, x, b, 0.1, 2, y, {1.0}, mc(50));
    CHECK(rows[0].inconclusive);
  }
}

TEST_CASE("heat kernel") {
  models::LinearParams p;
  p.a = 1.0;
  p.sigma0 = 0.8;
  const auto m = models::linear(p);
  const auto cs = make_coupling(m);
  const SystemSegment xi(wavy(0.6));
  LongRun lr;
  lr.samples = 400;
  SECTION("constant f") {
    const auto r = check_heat_kernel(cs, xi, TestFunction::constant(0.4), {2.0, 4.0}, mc(50), lr);
    CHECK(r.estimate == Approx(0.4));
    CHECK(r.bound >= 0.4 - 1e-12);
    CHECK(r.pass);
    CHECK(r.metadata["assumption"].get<std::string>().find("ergodic") != std::string::npos);
  }
  SECTION("Phi = 0 gives log mu(e^f)") {
    HeatKernelOptions opt;
    opt.c = 0.0;
    const auto r = check_heat_kernel(cs, xi, TestFunction::tanh_of(), {2.0, 4.0}, mc(400), lr, opt);
    CHECK(r.bound == Approx(r.metadata["log_mu_ef"].get<double>()).epsilon(1e-12));
    CHECK(r.pass);
  }
  SECTION("calibrated Phi on the ergodic linear model") {
    const auto r = check_heat_kernel(cs, xi, TestFunction::tanh_of(), {4.0, 8.0}, mc(400), lr);
    CHECK(r.pass);
  }
  SECTION("burn-in longer than the run") {
    LongRun bad;
    bad.burn_in = 50.0;
    bad.length = 40.0;
    CHECK_THROWS_AS(check_heat_kernel(cs, xi, TestFunction::tanh_of(), {1.0}, mc(10), bad), ConfigError);
  }
}

TEST_CASE("moment envelope holds on held-out paths") {
  const auto m = models::linear(multiplicative());
  std::vector<double> times;
  for (int k = 0; k <= 10; ++k) times.push_back(k);
  const auto r = moment_bound(m, {SystemSegment(wavy(0.5)), SystemSegment(wavy(2.0))}, times, mc(400));
  CHECK(r.pass);
  CHECK(r.metadata["C"].get<double>() > 0.0);
  CHECK(std::isfinite(r.metadata["C"].get<double>()));
}

TEST_CASE("report json carries exactly the report fields") {
  EstimateReport r;
  r.name = "x";
  r.estimate = 1;
  r.bound = 2;
  r.stderr_ = 0.1;
  r.settle_upper();
  const auto j = to_json(r);
  std::vector<std::string> keys;
  for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
  std::sort(keys.begin(), keys.end());
  CHECK(keys == std::vector<std::string>{"bound", "estimate", "inconclusive", "margin", "metadata", "name", "pass",
                                         "stderr"});
  CHECK(j["margin"].get<double>() == 1.0);
  CHECK(j["pass"].get<bool>());
}

TEST_CASE("estimators are deterministic in the seed") {
  const auto m = models::linear(multiplicative());
  const auto cs = make_coupling(m);
  auto run = [&](int workers) {
    auto c = mc(64);
    c.workers = workers;
    return to_json(check_alh(cs, SystemSegment(wavy(1.0)), SystemSegment(wavy(0.0)), TestFunction::tanh_of(),
                             {1.0, 2.0}, c))
        .dump();
  };
  CHECK(run(1) == run(1));
  CHECK(run(1) == run(3));
}

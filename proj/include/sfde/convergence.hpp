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

// Empirical strong convergence order: paths at several step sizes share one
// Brownian path with a fine reference run, and the RMS endpoint error is fit
// against dt on a log-log scale.

#include "sfde/parallel.hpp"
#include "sfde/solver.hpp"

#include <cmath>
#include <vector>

namespace sfde {

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_stderr = 0.0;
  double intercept_stderr = 0.0;
};

/// Ordinary least squares y = intercept + slope x.
inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 2, "line fit needs at least two points");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  require(sxx > 0, "line fit needs distinct abscissae");
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  if (x.size() > 2) {
    double rss = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double e = y[i] - f.intercept - f.slope * x[i];
      rss += e * e;
    }
    const double s2 = rss / (n - 2.0);
    f.slope_stderr = std::sqrt(s2 / sxx);
    f.intercept_stderr = std::sqrt(s2 * (1.0 / n + mx * mx / sxx));
  }
  return f;
}

struct StrongOrderStudy {
  std::vector<double> dts;
  std::vector<double> rms;
  double reference_dt = 0.0;
  std::size_t paths = 0;
  LineFit fit;  // log rms against log dt; slope is the order
};

/// RMS error of X(T) at each dt in `dts` against a run at `reference_dt`,
/// all driven by aggregated increments of one fine stream. Every dt must be
/// an integer multiple of the reference step.
inline StrongOrderStudy strong_order(const ModelSpec& m, const SystemSegment& init, double horizon,
                                     const std::vector<double>& dts, double reference_dt, std::size_t paths,
                                     std::uint64_t seed, int workers = 1) {
  require(!dts.empty() && paths > 0, "strong order study needs step sizes and paths");
  StrongOrderStudy st;
  st.dts = dts;
  st.reference_dt = reference_dt;
  st.paths = paths;
  const NoiseStream fine(seed, 0x0D);

  auto endpoint_runner = [&](double dt) {
    const double q = dt / reference_dt;
    const auto factor = static_cast<std::size_t>(std::llround(q));
    require(factor >= 1 && std::abs(q - static_cast<double>(factor)) < 1e-9,
            "step size must be a multiple of the reference step");
    SolverConfig cfg;
    cfg.dt = dt;
    cfg.horizon = horizon;
    cfg.seed = seed;
    cfg.validate(m.r(), detail::system_norm(make_path_states(m, init, dt)));
    return std::make_tuple(make_path_states(m, init, dt), cfg, AggregatedNoise(fine, factor));
  };

  std::vector<std::vector<double>> sq(dts.size(), std::vector<double>(paths, 0.0));
  const auto ref = endpoint_runner(reference_dt);
  std::vector<decltype(endpoint_runner(1.0))> coarse;
  for (double dt : dts) coarse.push_back(endpoint_runner(dt));

  auto endpoint = [&](const auto& setup, std::uint64_t p) {
    const auto& [states, cfg, noise] = setup;
    Vec end;
    run_path(m, states, cfg, noise, p, [&](std::size_t k, const std::vector<PathState>& s) {
      if (k == cfg.steps()) {
        end.resize(m.state_dim());
        for (int b = 0; b < m.blocks(); ++b) end.segment(b * m.dim(), m.dim()) = s[b].current();
      }
    });
    return end;
  };

  parallel_for(paths, workers, [&](std::size_t p) {
    const Vec x_ref = endpoint(ref, p);
    for (std::size_t j = 0; j < dts.size(); ++j) sq[j][p] = (endpoint(coarse[j], p) - x_ref).squaredNorm();
  });

  std::vector<double> lx, ly;
  for (std::size_t j = 0; j < dts.size(); ++j) {
    double s = 0.0;
    for (double v : sq[j]) s += v;
    st.rms.push_back(std::sqrt(s / static_cast<double>(paths)));
    lx.push_back(std::log(dts[j]));
    ly.push_back(std::log(st.rms.back()));
  }
  if (dts.size() >= 2) st.fit = fit_line(lx, ly);
  return st;
}

}  // namespace sfde

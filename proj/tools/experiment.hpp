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

// Experiment configuration. A JSON document (optionally patched by command
// line flags) is resolved into concrete parameters; defaults are filled in
// so that the canonical form, and hence the config hash, only depends on
// what the run actually does.
//
// Relative input paths are taken from the directory of the config file.

#include "sfde/estimators.hpp"
#include "sfde/hamiltonian_constants.hpp"
#include "sfde/model_json.hpp"
#include "sfde/segment_io.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace sfde::cli {

using nlohmann::json;
namespace fs = std::filesystem;

class IoFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

inline std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw IoFailure("cannot read " + p.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline json parse_json_file(const fs::path& p) {
  const std::string text = read_file(p);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(p.string() + " is not valid JSON: " + e.what());
  }
}

inline const std::vector<std::string>& estimator_names() {
  static const std::vector<std::string> names{"simulate", "couple",    "decay",    "alh",     "gradient",
                                              "irreducibility", "heatkernel", "moments", "constants", "validate"};
  return names;
}

struct Experiment {
  fs::path base_dir;
  json model_def;  // null when the run needs no model
  std::optional<ModelSpec> model;
  std::uint64_t seed = 1;
  int workers = 0;
  fs::path output = "sfde_out";
  SolverConfig solver;
  std::size_t paths = 1000;
  double r0 = 0.0;
  std::optional<double> lambda;
  Measure measure = Measure::Q;
  bool allow_override = false;
  json xi_def, eta_def;  // canonical segment descriptions
  SystemSegment xi, eta;
  TestFunction f;
  json estimators = json::object();  // name -> resolved parameters
  std::vector<std::string> inputs;   // files read while resolving

  const ModelSpec& need_model() const {
    if (!model) throw ConfigError("config has no model");
    return *model;
  }

  McConfig mc(const json& params) const {
    McConfig c;
    c.paths = params.value("paths", paths);
    c.dt = solver.dt;
    c.seed = seed;
    c.workers = workers;
    c.r0 = r0;
    c.r_stop = solver.r_stop;
    return c;
  }

  double window() const { return default_window(need_model().r(), solver.dt); }

  /// Fields that change results. Output directory and worker count are left out.
  json canonical() const {
    json j;
    j["model"] = model_def;
    j["seed"] = seed;
    j["solver"] = {{"dt", solver.dt}, {"horizon", solver.horizon}, {"stride", solver.stride}};
    j["solver"]["r_stop"] = std::isfinite(solver.r_stop) ? json(solver.r_stop) : json(nullptr);
    j["paths"] = paths;
    j["r0"] = model ? json(r0) : json(nullptr);
    j["coupling"] = {{"lambda", lambda ? json(*lambda) : json(nullptr)},
                     {"measure", to_string(measure)},
                     {"allow_override", allow_override}};
    j["xi"] = xi_def;
    j["eta"] = eta_def;
    j["test_function"] = to_json(f);
    j["estimators"] = estimators;
    return j;
  }

  std::string config_hash() const { return "fnv1a64:" + hex64(fnv1a(canonical().dump())); }
};

namespace exp_detail {

inline fs::path resolve_path(const fs::path& base, const std::string& p) {
  const fs::path q(p);
  return q.is_absolute() ? q : base / q;
}

inline Vec constant_value(const json& v, int d) {
  if (v.is_number()) return Vec::Constant(d, v.get<double>());
  require(v.is_array() && static_cast<int>(v.size()) == d,
          "constant segment needs a number or " + std::to_string(d) + " values");
  Vec x(d);
  for (int i = 0; i < d; ++i) x[i] = v[i].get<double>();
  return x;
}

inline Segment block(const json& spec, const ModelSpec& m, double dt, Experiment& e, json& canon) {
  if (spec.is_number() || spec.is_array()) {
    const Vec v = constant_value(spec, m.dim());
    canon = {{"constant", std::vector<double>(v.data(), v.data() + v.size())}};
    return Segment::constant(v, dt, default_window(m.r(), dt));
  }
  require(spec.is_object(), "segment must be a number, a list, {\"constant\": ..} or {\"file\": ..}");
  if (spec.contains("constant")) return block(spec.at("constant"), m, dt, e, canon);
  require(spec.contains("file"), "segment object needs \"constant\" or \"file\"");
  const fs::path p = resolve_path(e.base_dir, spec.at("file").get<std::string>());
  std::string content = read_file(p);
  const fs::path side = sidecar_path(p.string());
  if (fs::exists(side)) content += read_file(side);
  e.inputs.push_back(p.string());
  const SegmentFile sf = load_segment(p.string());
  require(sf.segment.dim() == m.dim(), p.string() + ": segment dimension " + std::to_string(sf.segment.dim()) +
                                           " does not match the model dimension " + std::to_string(m.dim()));
  canon = {{"csv_fnv1a64", hex64(fnv1a(content))}};
  return sf.segment;
}

inline SystemSegment system_segment(const json& spec, const ModelSpec& m, double dt, Experiment& e, json& canon) {
  SystemSegment s;
  if (spec.is_object() && (spec.contains("x") || spec.contains("y"))) {
    require(m.blocks() == 2, "x/y segments are only meaningful for hamiltonian models");
    require(spec.contains("x") && spec.contains("y"), "hamiltonian segment needs both x and y");
    json cx, cy;
    s.blocks.push_back(block(spec.at("x"), m, dt, e, cx));
    s.blocks.push_back(block(spec.at("y"), m, dt, e, cy));
    canon = {{"x", cx}, {"y", cy}};
    return s;
  }
  json c;
  const Segment b = block(spec, m, dt, e, c);
  for (int k = 0; k < m.blocks(); ++k) s.blocks.push_back(b);
  canon = c;
  return s;
}

inline std::vector<double> snapped(std::vector<double> ts, double dt) {
  for (double& t : ts) t = std::round(t / dt) * dt;
  std::sort(ts.begin(), ts.end());
  ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
  return ts;
}

inline std::vector<double> times_or(const json& p, std::vector<double> fallback, double dt) {
  if (p.contains("times")) return snapped(p.at("times").get<std::vector<double>>(), dt);
  return snapped(std::move(fallback), dt);
}

inline std::vector<double> linspace(double hi, int n) {
  std::vector<double> out;
  for (int k = 0; k <= n; ++k) out.push_back(hi * k / n);
  return out;
}

inline void allow_keys(const json& j, const std::set<std::string>& keys, const std::string& where) {
  require(j.is_object(), where + " must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!keys.count(k)) throw ConfigError("unknown field '" + k + "' in " + where);
}

inline json center_json(const json& spec, const ModelSpec& m) {
  auto one = [&](const json& v) {
    const Vec x = constant_value(v, m.dim());
    return std::vector<double>(x.data(), x.data() + x.size());
  };
  json out = json::array();
  if (spec.is_object()) {
    require(m.blocks() == 2 && spec.contains("x") && spec.contains("y"), "ball center needs x and y");
    out.push_back(one(spec.at("x")));
    out.push_back(one(spec.at("y")));
  } else {
    for (int b = 0; b < m.blocks(); ++b) out.push_back(one(spec));
  }
  return out;
}

// Fills every parameter of one estimator block.
inline json resolve_estimator(const std::string& name, const json& given, Experiment& e) {
  const json g = given.is_null() ? json::object() : given;
  const double dt = e.solver.dt;
  json p;
  auto common = [&](std::set<std::string> keys) {
    keys.insert("paths");
    allow_keys(g, keys, "estimators." + name);
    if (g.contains("paths")) {
      const auto n = g.at("paths").get<long long>();
      require(n >= 1, "estimators." + name + ".paths must be positive");
      p["paths"] = static_cast<std::size_t>(n);
    } else {
      p["paths"] = e.paths;
    }
  };
  auto opt_c = [&] {
    if (g.contains("c") && !g.at("c").is_null()) {
      const double c = g.at("c").get<double>();
      require(c >= 0 && std::isfinite(c), "estimators." + name + ".c must be nonnegative");
      p["c"] = c;
    } else {
      p["c"] = nullptr;
    }
  };
  if (name == "constants") {
    allow_keys(g, {"L1", "L2", "beta", "r"}, "estimators.constants");
    const DeclaredConstants k = e.model ? e.model->constants() : DeclaredConstants{};
    auto pick = [&](const char* key, std::optional<double> fallback) {
      if (g.contains(key)) return g.at(key).get<double>();
      if (fallback) return *fallback;
      throw ConfigError(std::string("constants needs ") + key);
    };
    p["L1"] = pick("L1", k.L1);
    p["L2"] = pick("L2", k.L2);
    p["beta"] = pick("beta", k.beta);
    p["r"] = pick("r", e.model ? std::optional<double>(e.model->r()) : std::nullopt);
    return p;
  }
  const ModelSpec& m = e.need_model();
  const double r = m.r();
  const std::vector<double> harnack_times{1 / e.r0, 2 / e.r0, 4 / e.r0, 8 / e.r0};
  if (name == "simulate") {
    allow_keys(g, {"count"}, "estimators.simulate");
    const auto n = g.value("count", 1ll);
    require(n >= 1, "estimators.simulate.count must be positive");
    p["count"] = n;
  } else if (name == "couple") {
    allow_keys(g, {}, "estimators.couple");
  } else if (name == "decay") {
    common({"p", "times", "t_max", "points", "tail_from"});
    p["p"] = g.value("p", 2.0);
    const double t_max = g.value("t_max", 10.0 / r);
    const int points = g.value("points", 20);
    require(points >= 2, "estimators.decay.points must be at least 2");
    p["times"] = times_or(g, linspace(t_max, points), dt);
    p["tail_from"] = g.contains("tail_from") ? g.at("tail_from") : json(nullptr);
  } else if (name == "alh") {
    common({"times", "c", "common_noise"});
    p["times"] = times_or(g, harnack_times, dt);
    p["common_noise"] = g.value("common_noise", false);
    opt_c();
  } else if (name == "gradient") {
    common({"t", "directions", "eps", "c"});
    p["t"] = std::round(g.value("t", 8.0 / e.r0) / dt) * dt;
    const auto nd = g.value("directions", 5ll);
    require(nd >= 1, "estimators.gradient.directions must be positive");
    p["directions"] = nd;
    p["eps"] = g.value("eps", std::vector<double>{0.05, 0.1, 0.2});
    opt_c();
  } else if (name == "irreducibility") {
    common({"times", "center", "radius", "eps", "n", "c"});
    p["times"] = times_or(g, harnack_times, dt);
    p["center"] = center_json(g.contains("center") ? g.at("center") : json(0.0), m);
    p["radius"] = g.value("radius", 1.0);
    p["eps"] = g.value("eps", 0.5);
    p["n"] = g.value("n", 1);
    opt_c();
  } else if (name == "heatkernel") {
    common({"times", "samples", "batches", "burn_in", "thin", "c"});
    p["times"] = times_or(g, harnack_times, dt);
    p["samples"] = g.value("samples", 2000ll);
    p["batches"] = g.value("batches", 20ll);
    require(p["samples"].get<long long>() >= 1 && p["batches"].get<long long>() >= 2,
            "estimators.heatkernel needs samples >= 1 and batches >= 2");
    p["burn_in"] = std::round(g.value("burn_in", 20.0 / r) / dt) * dt;
    p["thin"] = std::max(dt, std::round(g.value("thin", 1.0 / r) / dt) * dt);
    opt_c();
  } else if (name == "moments") {
    common({"times", "inits"});
    p["times"] = times_or(g, linspace(10.0, 20), dt);
    json inits = json::array();
    if (g.contains("inits")) {
      require(g.at("inits").is_array() && !g.at("inits").empty(), "estimators.moments.inits must be a list");
      for (const auto& s : g.at("inits")) {
        json c;
        system_segment(s, m, dt, e, c);
        inits.push_back(c);
      }
    } else {
      inits.push_back(e.xi_def);
    }
    p["inits"] = inits;
  } else if (name == "validate") {
    allow_keys(g, {"trials"}, "estimators.validate");
    const auto n = g.value("trials", 10000ll);
    require(n >= 1, "estimators.validate.trials must be positive");
    p["trials"] = n;
  } else {
    throw ConfigError("unknown estimator '" + name + "'");
  }
  return p;
}

}  // namespace exp_detail

/// Rebuilds a segment from its canonical description.
inline SystemSegment segment_from_canonical(const json& canon, Experiment& e) {
  json scratch;
  return exp_detail::system_segment(canon, e.need_model(), e.solver.dt, e, scratch);
}

inline Experiment resolve(const json& cfg, const fs::path& base_dir) {
  using namespace exp_detail;
  allow_keys(cfg, {"model", "seed", "workers", "output", "solver", "paths", "r0", "coupling", "xi", "eta",
                   "test_function", "estimators"},
             "config");
  Experiment e;
  e.base_dir = base_dir;

  if (cfg.contains("model")) {
    const json& mj = cfg.at("model");
    if (mj.is_string()) {
      const fs::path p = resolve_path(base_dir, mj.get<std::string>());
      e.model_def = parse_json_file(p);
      e.inputs.push_back(p.string());
    } else {
      e.model_def = mj;
    }
    e.model = model_from_json(e.model_def);
  }

  if (cfg.contains("seed")) {
    const auto s = cfg.at("seed").get<long long>();
    require(s >= 1, "seed must be a positive integer");
    e.seed = static_cast<std::uint64_t>(s);
  }
  if (cfg.contains("workers")) {
    e.workers = cfg.at("workers").get<int>();
    require(e.workers >= 1, "workers must be a positive integer");
  }
  if (cfg.contains("output")) e.output = cfg.at("output").get<std::string>();

  const json solver = cfg.value("solver", json::object());
  allow_keys(solver, {"dt", "horizon", "stride", "r_stop"}, "solver");
  e.solver.dt = solver.value("dt", 0.01);
  e.solver.horizon = solver.value("horizon", 10.0);
  e.solver.stride = solver.value("stride", std::size_t{1});
  if (solver.contains("r_stop") && !solver.at("r_stop").is_null()) e.solver.r_stop = solver.at("r_stop").get<double>();
  e.solver.seed = e.seed;
  require(e.solver.dt > 0 && std::isfinite(e.solver.dt), "solver.dt must be positive");
  require(e.solver.stride >= 1, "solver.stride must be at least 1");
  e.solver.horizon = std::round(e.solver.horizon / e.solver.dt) * e.solver.dt;

  if (cfg.contains("paths")) {
    const auto n = cfg.at("paths").get<long long>();
    require(n >= 1, "paths must be positive");
    e.paths = static_cast<std::size_t>(n);
  }

  const json coupling = cfg.value("coupling", json::object());
  allow_keys(coupling, {"lambda", "measure", "allow_override"}, "coupling");
  if (coupling.contains("lambda") && !coupling.at("lambda").is_null()) e.lambda = coupling.at("lambda").get<double>();
  e.measure = measure_from_string(coupling.value("measure", std::string("Q")));
  e.allow_override = coupling.value("allow_override", false);

  if (cfg.contains("test_function")) e.f = test_function_from_json(cfg.at("test_function"));

  if (e.model) {
    const ModelSpec& m = *e.model;
    const double dt_max = std::numbers::ln2 / m.r();
    if (e.solver.dt > dt_max * (1 + 1e-12))
      throw ConfigError("solver.dt = " + std::to_string(e.solver.dt) + " exceeds log(2)/r = " + std::to_string(dt_max));
    e.r0 = cfg.contains("r0") ? cfg.at("r0").get<double>() : 0.5 * m.r();
    require(e.r0 > 0 && e.r0 < m.r(), "r0 must lie in (0, r)");
    e.f.check(m.dim(), m.blocks());
    e.xi = system_segment(cfg.contains("xi") ? cfg.at("xi") : json(1.0), m, e.solver.dt, e, e.xi_def);
    e.eta = system_segment(cfg.contains("eta") ? cfg.at("eta") : json(0.0), m, e.solver.dt, e, e.eta_def);
  }

  const json est = cfg.value("estimators", json::object());
  require(est.is_object(), "estimators must be a JSON object");
  for (const auto& [name, params] : est.items()) e.estimators[name] = resolve_estimator(name, params, e);
  return e;
}

}  // namespace sfde::cli

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

// sfde command line runner.
//
//   sfde run CONFIG.json [flags]
//   sfde simulate|couple|decay|alh|gradient|irreducibility|heatkernel|moments|validate [--config F] [flags]
//   sfde constants --l1 L1 --l2 L2 --beta B --r R
//
// Artifacts go to <output>/manifest.json, <output>/reports/*.json and
// <output>/paths/*.csv. Exit status: 0 when every selected check passes or is
// inconclusive, 2 on a violated check, 1 on a configuration or runtime error.

#include "experiment.hpp"

#include "sfde/trajectory_io.hpp"
#include "sfde/validate.hpp"
#include "sfde/version.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <iostream>

namespace sfde::cli {

namespace {

std::string timestamp_utc() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json library_versions() {
  return {{"sfde", kVersion},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
          {"cli11", CLI11_VERSION},
          {"compiler", __VERSION__}};
}

class Artifacts {
 public:
  explicit Artifacts(fs::path root) : root_(std::move(root)) {}

  void report(const std::string& name, const json& doc) {
    write(fs::path("reports") / (name + ".json"), doc.dump(2) + "\n");
    reports_.push_back("reports/" + name + ".json");
  }

  template <class Fn>
  void path_csv(const std::string& name, Fn&& fill) {
    const fs::path rel = fs::path("paths") / (name + ".csv");
    std::ostringstream os;
    fill(os);
    write(rel, os.str());
    paths_.push_back(rel.string());
  }

  void manifest(const json& doc) { write("manifest.json", doc.dump(2) + "\n"); }

  const std::vector<std::string>& reports() const { return reports_; }
  const std::vector<std::string>& paths() const { return paths_; }

 private:
  void write(const fs::path& rel, const std::string& text) {
    const fs::path p = root_ / rel;
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
    if (ec) throw IoFailure("cannot create " + p.parent_path().string() + ": " + ec.message());
    std::ofstream f(p, std::ios::binary);
    f << text;
    f.close();
    if (!f) throw IoFailure("cannot write " + p.string());
  }

  fs::path root_;
  std::vector<std::string> reports_, paths_;
};

enum class Verdict { pass, violation };

struct Outcome {
  json doc;
  Verdict verdict = Verdict::pass;
};

Outcome from_rows(const std::string& name, const ModelSpec& m, const std::vector<EstimateReport>& rows,
                  const CouplingSpec* cs = nullptr) {
  Outcome o;
  o.doc = {{"command", name}, {"model", m.name()}, {"kind", to_string(m.kind())}, {"rows", to_json(rows)}};
  o.doc["pass"] = all_pass(rows);
  if (cs) {
    o.doc["lambda"] = cs->lambda;
    o.doc["warnings"] = cs->warnings;
  }
  o.verdict = all_pass(rows) ? Verdict::pass : Verdict::violation;
  return o;
}

std::vector<double> times_of(const json& p) { return p.at("times").get<std::vector<double>>(); }

std::optional<double> opt_num(const json& p, const char* key) {
  if (!p.contains(key) || p.at(key).is_null()) return std::nullopt;
  return p.at(key).get<double>();
}

CouplingSpec coupling_of(const Experiment& e) {
  const CouplingSpec cs = make_coupling(e.need_model(), e.lambda, e.measure, e.allow_override);
  for (const auto& w : cs.warnings) std::cerr << "warning: " << w << '\n';
  return cs;
}

Outcome run_simulate(Experiment& e, const json& p, Artifacts& out) {
  const ModelSpec& m = e.need_model();
  const auto count = p.at("count").get<std::size_t>();
  std::vector<Trajectory> trs(count);
  const NoiseStream noise(e.seed, 0x51);
  parallel_for(count, resolve_workers(e.workers),
               [&](std::size_t i) { trs[i] = simulate_path(m, e.xi, e.solver, noise, i); });
  json rows = json::array();
  for (std::size_t i = 0; i < count; ++i) {
    const std::string name = "simulate_" + std::to_string(i);
    out.path_csv(name, [&](std::ostream& os) { write_trajectory_csv(os, trs[i]); });
    rows.push_back({{"path", "paths/" + name + ".csv"},
                    {"final_norm", trs[i].norms.back()},
                    {"stopped", trs[i].stopped},
                    {"stop_time", trs[i].stopped ? json(trs[i].stop_time) : json(nullptr)}});
  }
  return {{{"command", "simulate"}, {"model", m.name()}, {"kind", to_string(m.kind())}, {"rows", rows}, {"pass", true}},
          Verdict::pass};
}

Outcome run_couple(Experiment& e, const json&, Artifacts& out) {
  const CouplingSpec cs = coupling_of(e);
  const CoupledTrajectory tr = simulate_coupled(cs, e.xi, e.eta, e.solver, NoiseStream(e.seed, 0x52));
  out.path_csv("couple", [&](std::ostream& os) { write_coupled_csv(os, tr); });
  json doc{{"command", "couple"},       {"model", cs.model.name()},  {"kind", to_string(cs.model.kind())},
           {"measure", to_string(cs.measure)}, {"lambda", cs.lambda}, {"warnings", cs.warnings},
           {"path", "paths/couple.csv"},  {"final_log_r", tr.log_r.back()}, {"final_z_norm", tr.z_norm.back()},
           {"initial_z_norm", tr.z_norm.front()}, {"stopped", tr.stopped}, {"pass", true}};
  doc["entropy"] = cs.measure == Measure::Q ? json(entropy_along_path(tr)) : json(nullptr);
  return {doc, Verdict::pass};
}

Outcome run_decay(Experiment& e, const json& p, Artifacts&) {
  const CouplingSpec cs = coupling_of(e);
  const DecayResult res =
      estimate_decay(cs, e.xi, e.eta, p.at("p").get<double>(), times_of(p), e.mc(p), opt_num(p, "tail_from"));
  Outcome o = from_rows("decay", cs.model, {res.report}, &cs);
  o.doc["rate"] = res.rate;
  o.doc["rate_stderr"] = res.rate_stderr;
  return o;
}

Outcome run_alh(Experiment& e, const json& p, Artifacts&) {
  const CouplingSpec cs = coupling_of(e);
  AlhOptions opt;
  opt.c = opt_num(p, "c");
  opt.common_noise = p.at("common_noise").get<bool>();
  return from_rows("alh", cs.model, check_alh(cs, e.xi, e.eta, e.f, times_of(p), e.mc(p), opt), &cs);
}

Outcome run_gradient(Experiment& e, const json& p, Artifacts&) {
  const CouplingSpec cs = coupling_of(e);
  const ModelSpec& m = cs.model;
  CounterRng rng(e.seed, 0x6D);
  std::vector<SystemSegment> dirs;
  for (long long k = 0; k < p.at("directions").get<long long>(); ++k)
    dirs.push_back(random_direction(m, e.solver.dt, e.window(), rng));
  GradientOptions opt;
  opt.c = opt_num(p, "c");
  return from_rows("gradient", m,
                   check_gradient(cs, e.xi, dirs, p.at("eps").get<std::vector<double>>(), e.f,
                                  p.at("t").get<double>(), e.mc(p), opt),
                   &cs);
}

Outcome run_irreducibility(Experiment& e, const json& p, Artifacts&) {
  const CouplingSpec cs = coupling_of(e);
  Ball ball;
  for (const auto& c : p.at("center")) {
    const auto v = c.get<std::vector<double>>();
    ball.center.push_back(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
  }
  ball.radius = p.at("radius").get<double>();
  IrreducibilityOptions opt;
  opt.c = opt_num(p, "c");
  return from_rows("irreducibility", cs.model,
                   check_irreducibility(cs, e.xi, ball, p.at("eps").get<double>(), p.at("n").get<int>(), e.eta,
                                        times_of(p), e.mc(p), opt),
                   &cs);
}

Outcome run_heatkernel(Experiment& e, const json& p, Artifacts&) {
  const CouplingSpec cs = coupling_of(e);
  LongRun lr;
  lr.samples = p.at("samples").get<std::size_t>();
  lr.batches = p.at("batches").get<std::size_t>();
  lr.burn_in = p.at("burn_in").get<double>();
  lr.thin = p.at("thin").get<double>();
  HeatKernelOptions opt;
  opt.c = opt_num(p, "c");
  opt.eta = e.eta;
  return from_rows("heatkernel", cs.model, {check_heat_kernel(cs, e.xi, e.f, times_of(p), e.mc(p), lr, opt)}, &cs);
}

Outcome run_moments(Experiment& e, const json& p, Artifacts&) {
  const ModelSpec& m = e.need_model();
  std::vector<SystemSegment> inits;
  for (const auto& c : p.at("inits")) inits.push_back(segment_from_canonical(c, e));
  return from_rows("moments", m, {moment_bound(m, inits, times_of(p), e.mc(p))});
}

Outcome run_constants(const json& p) {
  HamiltonianConstants hc;
  try {
    hc = hamiltonian_constants(p.at("L1").get<double>(), p.at("L2").get<double>(), p.at("beta").get<double>(),
                               p.at("r").get<double>());
  } catch (const ConfigError& err) {
    throw DomainError(err.what());
  }
  std::printf("p0 = %.17g\nalpha0 = %.17g\nLambda = %.17g\nmu = %.17g\nthreshold = %.17g\n", hc.p0, hc.alpha0,
              hc.lambda_min, hc.mu, hc.threshold);
  json doc{{"command", "constants"}, {"input", p},         {"p0", hc.p0},         {"alpha0", hc.alpha0},
           {"Lambda", hc.lambda_min}, {"mu", hc.mu},       {"threshold", hc.threshold},
           {"beta", hc.beta},         {"c_beta", hc.c_beta}, {"pass", true}};
  return {doc, Verdict::pass};
}

Outcome run_validate(Experiment& e, const json& p, Artifacts&) {
  const ModelSpec& m = e.need_model();
  const ValidationReport rep = validate_assumptions(m, p.at("trials").get<std::size_t>(), e.seed);
  json doc = to_json(rep);
  doc["command"] = "validate";
  return {doc, rep.pass() ? Verdict::pass : Verdict::violation};
}

void print_summary(const std::string& name, const Outcome& o) {
  std::size_t ok = 0, bad = 0, unsure = 0;
  if (o.doc.contains("rows") && o.doc.at("rows").is_array()) {
    for (const auto& r : o.doc.at("rows")) {
      if (!r.contains("inconclusive")) continue;
      if (r.at("inconclusive").get<bool>())
        ++unsure;
      else if (r.at("pass").get<bool>())
        ++ok;
      else
        ++bad;
    }
  }
  std::cout << name << ": " << (o.verdict == Verdict::pass ? "pass" : "VIOLATION");
  if (ok + bad + unsure > 0)
    std::cout << " (" << ok << " pass, " << bad << " violated, " << unsure << " inconclusive)";
  std::cout << '\n';
}

int execute(Experiment& e, const std::string& command) {
  if (e.estimators.empty()) throw ConfigError("no estimator selected");
  // constants alone is a calculator: artifacts only with an explicit output
  const bool calculator = command == "constants";
  if (!calculator && e.output.empty()) throw ConfigError("output directory is empty");
  std::optional<Artifacts> out;
  if (!calculator || !e.output.empty()) out.emplace(e.output);
  bool violated = false;
  json summary = json::object();
  for (const auto& [name, params] : e.estimators.items()) {
    Outcome o;
    if (name == "constants") {
      o = run_constants(params);
    } else {
      Artifacts& a = *out;
      if (name == "simulate") o = run_simulate(e, params, a);
      else if (name == "couple") o = run_couple(e, params, a);
      else if (name == "decay") o = run_decay(e, params, a);
      else if (name == "alh") o = run_alh(e, params, a);
      else if (name == "gradient") o = run_gradient(e, params, a);
      else if (name == "irreducibility") o = run_irreducibility(e, params, a);
      else if (name == "heatkernel") o = run_heatkernel(e, params, a);
      else if (name == "moments") o = run_moments(e, params, a);
      else if (name == "validate") o = run_validate(e, params, a);
      else throw ConfigError("unknown estimator '" + name + "'");
    }
    o.doc["config_hash"] = e.config_hash();
    o.doc["seed"] = e.seed;
    if (out) out->report(name, o.doc);
    if (!calculator) print_summary(name, o);
    violated = violated || o.verdict == Verdict::violation;
    summary[name] = o.verdict == Verdict::pass ? "pass" : "violation";
  }
  if (out) {
    json manifest{{"command", command},
                  {"config_hash", e.config_hash()},
                  {"seed", e.seed},
                  {"workers", resolve_workers(e.workers)},
                  {"versions", library_versions()},
                  {"timestamp", timestamp_utc()},
                  {"config", e.canonical()},
                  {"inputs", e.inputs},
                  {"reports", out->reports()},
                  {"paths", out->paths()},
                  {"results", summary},
                  {"status", violated ? "violation" : "pass"}};
    out->manifest(manifest);
  }
  return violated ? 2 : 0;
}

// Flag values land in a JSON patch applied on top of the config file.
class Patch {
 public:
  template <class T>
  CLI::Option* add(CLI::App* app, const std::string& flag, const std::string& pointer, const std::string& help) {
    return app->add_option_function<T>(
        flag, [this, pointer](const T& v) { doc_[json::json_pointer(pointer)] = v; }, help);
  }
  CLI::Option* add_segment(CLI::App* app, const std::string& flag, const std::string& pointer,
                           const std::string& help) {
    return app->add_option_function<std::string>(
        flag, [this, pointer](const std::string& v) { doc_[json::json_pointer(pointer)] = segment_flag(v); }, help);
  }
  CLI::Option* add_switch(CLI::App* app, const std::string& flag, const std::string& pointer,
                          const std::string& help) {
    return app->add_flag_callback(flag, [this, pointer] { doc_[json::json_pointer(pointer)] = true; }, help);
  }
  const json& doc() const { return doc_; }

  // "a.csv" -> file, "1,0" -> constant, "X;Y" -> hamiltonian blocks
  static json segment_flag(const std::string& s) {
    const auto semi = s.find(';');
    if (semi != std::string::npos) return {{"x", segment_flag(s.substr(0, semi))}, {"y", segment_flag(s.substr(semi + 1))}};
    if (s.size() >= 4 && s.compare(s.size() - 4, 4, ".csv") == 0) return {{"file", fs::absolute(s).string()}};
    json out = json::array();
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        out.push_back(std::stod(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw ConfigError("cannot read segment '" + s + "': expected a .csv file or comma-separated numbers");
      }
    }
    if (out.size() == 1) return out[0];
    return out;
  }

 private:
  json doc_ = json::object();
};

void common_flags(CLI::App* app, Patch& patch, std::string* config_path) {
  if (config_path) app->add_option("--config", *config_path, "experiment config (JSON)");
  patch.add<std::string>(app, "--model", "/model", "model definition file (JSON)");
  patch.add<std::string>(app, "--out", "/output", "output directory");
  patch.add<long long>(app, "--seed", "/seed", "random seed");
  patch.add<int>(app, "--workers", "/workers", "worker threads (default: SFDE_WORKERS, then hardware)");
  patch.add<double>(app, "--dt", "/solver/dt", "time step");
  patch.add<double>(app, "--horizon", "/solver/horizon", "simulation horizon");
  patch.add<std::size_t>(app, "--stride", "/solver/stride", "record every k-th step");
  patch.add<double>(app, "--r-stop", "/solver/r_stop", "explosion radius");
  patch.add<long long>(app, "--paths", "/paths", "Monte Carlo paths");
  patch.add<double>(app, "--r0", "/r0", "target decay rate (default r/2)");
  patch.add<double>(app, "--lambda", "/coupling/lambda", "coupling strength");
  patch.add<std::string>(app, "--measure", "/coupling/measure", "P or Q");
  patch.add_switch(app, "--allow-override", "/coupling/allow_override", "accept lambda = 0");
  patch.add_segment(app, "--xi", "/xi", "initial segment: file.csv, constant a,b,.. or X;Y");
  patch.add_segment(app, "--eta", "/eta", "second initial segment");
  patch.add<std::string>(app, "--f-kind", "/test_function/kind", "test function: tanh, sin or constant");
  patch.add<int>(app, "--f-component", "/test_function/component", "test function component");
  patch.add<double>(app, "--f-scale", "/test_function/scale", "test function scale");
}

void estimator_flags(CLI::App* app, const std::string& name, Patch& patch) {
  const std::string base = "/estimators/" + name + "/";
  auto times = [&] {
    patch.add<std::vector<double>>(app, "--times", base + "times", "evaluation times")->delimiter(',');
  };
  auto c = [&] { patch.add<double>(app, "--c", base + "c", "use this constant c instead of calibrating"); };
  if (name == "simulate") {
    patch.add<long long>(app, "--count", base + "count", "number of sample paths");
  } else if (name == "decay") {
    patch.add<double>(app, "--p", base + "p", "moment order");
    patch.add<double>(app, "--t-max", base + "t_max", "last grid time");
    times();
  } else if (name == "alh") {
    times();
    c();
    patch.add_switch(app, "--common-noise", base + "common_noise", "drive both sides with the same noise");
  } else if (name == "gradient") {
    patch.add<double>(app, "--t", base + "t", "evaluation time");
    patch.add<long long>(app, "--directions", base + "directions", "random directions");
    patch.add<std::vector<double>>(app, "--eps", base + "eps", "finite-difference steps")->delimiter(',');
    c();
  } else if (name == "irreducibility") {
    times();
    c();
    patch.add<std::vector<double>>(app, "--center", base + "center", "ball center")->delimiter(',');
    patch.add<double>(app, "--radius", base + "radius", "ball radius");
    patch.add<double>(app, "--eps", base + "eps", "ball enlargement");
    patch.add<int>(app, "--n", base + "n", "integer n >= 1");
  } else if (name == "heatkernel") {
    times();
    c();
    patch.add<long long>(app, "--samples", base + "samples", "long-run samples");
    patch.add<double>(app, "--burn-in", base + "burn_in", "burn-in time");
    patch.add<double>(app, "--thin", base + "thin", "thinning interval");
  } else if (name == "moments") {
    times();
  } else if (name == "validate") {
    patch.add<long long>(app, "--trials", base + "trials", "random segment pairs per condition");
  }
}

int main_impl(int argc, char** argv) {
  CLI::App app{"Monte Carlo toolkit for functional SDEs with memory"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  Patch patch;
  std::string config_path;

  CLI::App* run = app.add_subcommand("run", "run every estimator selected in a config file");
  run->add_option("config", config_path, "experiment config (JSON)")->required();
  common_flags(run, patch, nullptr);

  std::vector<std::pair<std::string, CLI::App*>> subs;
  const std::vector<std::pair<std::string, std::string>> described{
      {"simulate", "simulate sample paths"},
      {"couple", "simulate one coupled pair and its Girsanov density"},
      {"decay", "fit the decay rate of the coupling difference"},
      {"alh", "check the asymptotic log-Harnack inequality"},
      {"gradient", "check the gradient estimate by finite differences"},
      {"irreducibility", "check asymptotic irreducibility on a ball"},
      {"heatkernel", "check the heat-kernel bound against a long run"},
      {"moments", "fit and check an exponential second-moment envelope"},
      {"validate", "test the model's declared assumption constants"}};
  for (const auto& [name, help] : described) {
    CLI::App* sub = app.add_subcommand(name, help);
    common_flags(sub, patch, &config_path);
    estimator_flags(sub, name, patch);
    subs.emplace_back(name, sub);
  }
  CLI::App* constants = app.add_subcommand("constants", "hamiltonian constants p0, alpha0, Lambda, mu, threshold");
  patch.add<double>(constants, "--l1", "/estimators/constants/L1", "drift constant L1");
  patch.add<double>(constants, "--l2", "/estimators/constants/L2", "diffusion constant L2");
  patch.add<double>(constants, "--beta", "/estimators/constants/beta", "Lyapunov weight beta");
  patch.add<double>(constants, "--r", "/estimators/constants/r", "memory rate r");
  patch.add<std::string>(constants, "--model", "/model", "take missing constants from this model");
  patch.add<std::string>(constants, "--out", "/output", "also write a report here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  std::string command;
  for (CLI::App* s : app.get_subcommands()) command = s->get_name();

  json cfg = json::object();
  fs::path base = fs::current_path();
  if (!config_path.empty()) {
    cfg = parse_json_file(config_path);
    require(cfg.is_object(), config_path + ": config must be a JSON object");
    base = fs::absolute(config_path).parent_path();
  }
  json overrides = patch.doc();
  // flag paths are relative to the working directory
  if (overrides.contains("model")) overrides["model"] = fs::absolute(overrides["model"].get<std::string>()).string();
  cfg.merge_patch(overrides);

  if (command != "run") {
    json chosen = cfg.contains("estimators") && cfg["estimators"].contains(command) ? cfg["estimators"][command]
                                                                                   : json::object();
    cfg["estimators"] = {{command, chosen}};
  }
  if (command == "constants" && !overrides.contains("output") && !(cfg.contains("output"))) cfg["output"] = "";

  Experiment e = resolve(cfg, base);
  if (e.workers == 0) e.workers = resolve_workers(0);
  return execute(e, command);
}

}  // namespace

}  // namespace sfde::cli

int main(int argc, char** argv) {
  using namespace sfde;
  try {
    return cli::main_impl(argc, argv);
  } catch (const cli::IoFailure& e) {
    std::cerr << "error: I/O failure: " << e.what() << '\n';
  } catch (const DomainError& e) {
    std::cerr << "error: invalid constants: " << e.what() << '\n';
  } catch (const UsageError& e) {
    std::cerr << "error: invalid usage: " << e.what() << '\n';
  } catch (const ConfigError& e) {
    std::cerr << "error: invalid configuration: " << e.what() << '\n';
  } catch (const StepError& e) {
    std::cerr << "error: numerical failure: " << e.what() << '\n';
  } catch (const ModelEvaluationError& e) {
    std::cerr << "error: model evaluation failed: " << e.what() << '\n';
  } catch (const DegenerateFitError& e) {
    std::cerr << "error: degenerate fit: " << e.what() << '\n';
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed config value: " << e.what() << '\n';
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
  }
  return 1;
}

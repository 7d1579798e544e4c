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

#include "sfde/hamiltonian_constants.hpp"
#include "sfde/segment_io.hpp"

#include <catch_amalgamated.hpp>
#include <json.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

using namespace sfde;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Result {
  int status = -1;
  std::string out;  // stdout and stderr
};

Result sh(const std::string& args) {
  const std::string cmd = std::string(SFDE_CLI_PATH) + " " + args + " 2>&1";
  Result r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p);
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int st = pclose(p);
  r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("sfde_cli_" + std::to_string(getpid())) / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

json load(const fs::path& p) { return json::parse(slurp(p)); }

void dump(const fs::path& p, const json& j) { std::ofstream(p) << j.dump(2); }

std::string cfg(const std::string& name) { return std::string(SFDE_CONFIG_DIR) + "/" + name; }

// column `name` of a CSV with a header row
std::vector<double> column(const fs::path& p, const std::string& name) {
  std::ifstream f(p);
  std::string line, cell;
  std::getline(f, line);
  std::stringstream hs(line);
  int idx = -1, k = 0;
  while (std::getline(hs, cell, ',')) {
    if (cell == name) idx = k;
    ++k;
  }
  REQUIRE(idx >= 0);
  std::vector<double> out;
  while (std::getline(f, line)) {
    std::stringstream ls(line);
    for (int i = 0; i <= idx; ++i) std::getline(ls, cell, ',');
    out.push_back(std::stod(cell));
  }
  return out;
}

}  // namespace

TEST_CASE("zero model simulate writes one constant path") {
  const auto d = scratch("zero");
  const auto r = sh("run " + cfg("simulate_zero.json") + " --out " + d.string());
  INFO(r.out);
  REQUIRE(r.status == 0);
  std::size_t csvs = 0;
  for (const auto& e : fs::directory_iterator(d / "paths")) csvs += e.path().extension() == ".csv";
  CHECK(csvs == 1);
  const auto x = column(d / "paths" / "simulate_0.csv", "x_1");
  REQUIRE(x.size() > 10);
  for (double v : x) CHECK(v == 0.75);
  const json m = load(d / "manifest.json");
  CHECK(m.at("status") == "pass");
  CHECK(m.at("seed") == 1);
  CHECK(m.at("config_hash").get<std::string>().rfind("fnv1a64:", 0) == 0);
  CHECK(m.contains("timestamp"));
  CHECK(m.at("versions").contains("eigen"));
}

TEST_CASE("dt above log2/r is rejected before running") {
  const auto d = scratch("bad_dt");
  json c = load(cfg("simulate_zero.json"));
  c["solver"]["dt"] = 0.7;  // log 2 / 1 = 0.693
  c["solver"]["horizon"] = 7.0;
  dump(d / "c.json", c);
  const auto r = sh("run " + (d / "c.json").string() + " --out " + (d / "o").string());
  CHECK(r.status == 1);
  CHECK(r.out.find("log(2)/r") != std::string::npos);
  CHECK_FALSE(fs::exists(d / "o" / "manifest.json"));
  // the same through a flag
  CHECK(sh("run " + cfg("simulate_zero.json") + " --dt 0.75 --out " + (d / "o").string()).status == 1);
}

TEST_CASE("linear_decay config recovers the memory rate") {
  const auto d = scratch("decay");
  const auto r = sh("run " + cfg("linear_decay.json") + " --out " + d.string());
  INFO(r.out);
  REQUIRE(r.status == 0);
  const json rep = load(d / "reports" / "decay.json");
  const double r_mem = 1.0;
  CHECK(std::abs(rep.at("rate").get<double>() - r_mem) < 0.05 * r_mem);
  CHECK(rep.at("rows")[0].at("pass") == true);
}

TEST_CASE("constants prints the hamiltonian constants") {
  const auto r = sh("constants --l1 1 --l2 0 --beta 1 --r 0.5");
  INFO(r.out);
  REQUIRE(r.status == 0);
  const auto hc = hamiltonian_constants(1, 0, 1, 0.5);
  auto value = [&](const std::string& key) {
    const auto at = r.out.find(key + " = ");
    REQUIRE(at != std::string::npos);
    return std::stod(r.out.substr(at + key.size() + 3));
  };
  CHECK(value("p0") == Catch::Approx(hc.p0).epsilon(1e-15));
  CHECK(value("alpha0") == Catch::Approx(hc.alpha0).epsilon(1e-15));
  CHECK(value("Lambda") == Catch::Approx(hc.lambda_min).epsilon(1e-15));
  CHECK(value("mu") == Catch::Approx(hc.mu).epsilon(1e-15));
  CHECK(value("threshold") == Catch::Approx(hc.threshold).epsilon(1e-15));

  const auto bad = sh("constants --l1 1 --l2 0 --beta -1 --r 0.5");
  CHECK(bad.status == 1);
  CHECK(bad.out.find("invalid constants") != std::string::npos);
}

TEST_CASE("validate reports shipped models and flags a neutral term with delta 1.5") {
  const auto d = scratch("validate");
  const auto ok = sh("validate --model " + cfg("models/neutral.json") + " --trials 10000 --out " + (d / "a").string());
  INFO(ok.out);
  CHECK(ok.status == 0);
  const json rep = load(d / "a" / "reports" / "validate.json");
  CHECK(rep.at("pass") == true);
  CHECK(rep.at("conditions").size() >= 3);

  json bad = load(cfg("models/neutral.json"));
  bad["g_delay"] = 1.5 * std::exp(-1.0 * 0.5);  // |G| Lipschitz 1.5 in ||.||_r
  bad["constants"] = {{"delta", 0.9}};
  dump(d / "bad.json", bad);
  const auto r = sh("validate --model " + (d / "bad.json").string() + " --trials 10000 --out " + (d / "b").string());
  CHECK(r.status == 2);
  const json rb = load(d / "b" / "reports" / "validate.json");
  CHECK(rb.at("pass") == false);
  CHECK(rb.at("conditions")[0].at("name") == "A1");
  CHECK(rb.at("conditions")[0].at("pass") == false);
}

TEST_CASE("couple from the same segment file has logR identically zero") {
  const auto d = scratch("couple");
  const Segment seg = Segment::from_function(1, 0.01, default_window(1.0, 0.01), [](double th) {
    Vec v(1);
    v[0] = std::cos(3 * th) * std::exp(0.5 * th);
    return v;
  });
  save_segment((d / "a.csv").string(), seg, 1.0);
  for (const char* measure : {"Q", "P"}) {
    const auto r = sh("couple --model " + cfg("models/multiplicative.json") + " --xi " + (d / "a.csv").string() +
                      " --eta " + (d / "a.csv").string() + " --measure " + measure + " --horizon 2 --out " +
                      (d / measure).string());
    INFO(r.out);
    REQUIRE(r.status == 0);
    const auto lr = column(d / measure / "paths" / "couple.csv", "logR");
    REQUIRE(lr.size() == 201);
    for (double v : lr) CHECK(v == 0.0);
    const auto z = column(d / measure / "paths" / "couple.csv", "z_norm_r");
    for (double v : z) CHECK(v == 0.0);
  }
}

TEST_CASE("same seed gives byte-identical reports") {
  const auto d = scratch("repro");
  const std::string base = "alh --config " + cfg("nondegenerate.json") + " --paths 200 --times 2,4 ";
  REQUIRE(sh(base + "--workers 1 --out " + (d / "a").string()).status == 0);
  REQUIRE(sh(base + "--workers 3 --out " + (d / "b").string()).status == 0);
  CHECK(slurp(d / "a" / "reports" / "alh.json") == slurp(d / "b" / "reports" / "alh.json"));
  const json ma = load(d / "a" / "manifest.json"), mb = load(d / "b" / "manifest.json");
  CHECK(ma.at("config_hash") == mb.at("config_hash"));

  REQUIRE(sh(base + "--seed 99 --out " + (d / "c").string()).status == 0);
  CHECK(slurp(d / "a" / "reports" / "alh.json") != slurp(d / "c" / "reports" / "alh.json"));
  CHECK(load(d / "c" / "manifest.json").at("config_hash") != ma.at("config_hash"));
  CHECK(load(d / "c" / "manifest.json").at("seed") == 99);
}

TEST_CASE("config hash follows meaningful fields only") {
  const auto d = scratch("hash");
  auto hash_of = [&](const json& c, const std::string& tag) {
    dump(d / (tag + ".json"), c);
    const auto r = sh("run " + (d / (tag + ".json")).string() + " --out " + (d / tag).string());
    REQUIRE(r.status == 0);
    return load(d / tag / "manifest.json").at("config_hash").get<std::string>();
  };
  json c = load(cfg("simulate_zero.json"));
  c.erase("output");
  const auto h0 = hash_of(c, "base");
  json same = c;
  same["workers"] = 2;
  same["estimators"]["simulate"] = json::object();  // count defaults to 1
  CHECK(hash_of(same, "same") == h0);
  json other = c;
  other["xi"] = 0.5;
  CHECK(hash_of(other, "xi") != h0);
  json longer = c;
  longer["solver"]["horizon"] = 6.0;
  CHECK(hash_of(longer, "horizon") != h0);
}

TEST_CASE("errors map to exit status 1 with distinct diagnostics") {
  const auto d = scratch("errors");
  dump(d / "m.json", {{"kind", "parabolic"}, {"dimension", 1}, {"r", 1.0}});
  const auto kind = sh("simulate --model " + (d / "m.json").string() + " --out " + (d / "o").string());
  CHECK(kind.status == 1);
  CHECK(kind.out.find("unknown model kind") != std::string::npos);

  const auto missing = sh("simulate --model " + (d / "nope.json").string() + " --out " + (d / "o").string());
  CHECK(missing.status == 1);
  CHECK(missing.out.find("I/O failure") != std::string::npos);

  std::ofstream(d / "broken.json") << "{\"seed\": ";
  const auto broken = sh("run " + (d / "broken.json").string());
  CHECK(broken.status == 1);
  CHECK(broken.out.find("not valid JSON") != std::string::npos);

  json typo = load(cfg("simulate_zero.json"));
  typo["sede"] = 3;
  dump(d / "typo.json", typo);
  const auto t = sh("run " + (d / "typo.json").string());
  CHECK(t.status == 1);
  CHECK(t.out.find("unknown field 'sede'") != std::string::npos);

  CHECK(sh("simulate --model " + cfg("models/linear.json") + " --seed 0 --out " + (d / "o").string()).status == 1);
  CHECK(sh("decay --model " + cfg("models/linear.json") + " --lambda 0.5 --out " + (d / "o").string()).status == 1);
  CHECK(sh("bogus").status == 1);
}

TEST_CASE("flags override config fields") {
  const auto d = scratch("override");
  const auto r = sh("run " + cfg("simulate_zero.json") + " --xi 2 --horizon 1 --stride 1 --out " + d.string());
  REQUIRE(r.status == 0);
  const auto x = column(d / "paths" / "simulate_0.csv", "x_1");
  CHECK(x.size() == 101);
  CHECK(x.back() == 2.0);
}

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "fastjm/cli.hpp"
#include "fastjm/errors.hpp"
#include "fastjm/io.hpp"
#include "fastjm/simulate.hpp"

using namespace fastjm;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* kToyLong =
    "id,time,y,x2\n"
    "a,0,5.1,1\n"
    "a,1,6.0,1\n"
    "b,0,4.2,0\n";

const char* kToySurv =
    "id,obs_time,cause,x1,x2\n"
    "a,1.5,1,2.2,1\n"
    "b,3.0,0,1.7,0\n";

Dataset toy(const std::string& lng, const std::string& srv, IngestOptions opts = {}) {
  std::istringstream l(lng), s(srv);
  return ingest(l, s, ModelSpec{}, opts);
}

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / "fastjm_tests";
  fs::create_directories(d);
  return d / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream o;
  o << f.rdbuf();
  return o.str();
}

int cli(std::vector<std::string> args, std::string* out = nullptr, std::string* err = nullptr) {
  args.insert(args.begin(), "fastjm");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream o, e;
  const int rc = run_cli(static_cast<int>(argv.size()), argv.data(), o, e);
  if (out) *out = o.str();
  if (err) *err = e.str();
  return rc;
}

// Numeric comparison of two JSON documents; "timings" subtrees are skipped.
void compare_json(const json& a, const json& b, const std::string& path, double rtol) {
  if (a.is_number() && b.is_number()) {
    const double x = a.get<double>(), y = b.get<double>();
    const double scale = std::max({std::abs(x), std::abs(y), 1e-12});
    INFO(path << ": " << x << " vs " << y);
    CHECK(std::abs(x - y) <= rtol * scale);
    return;
  }
  INFO(path);
  REQUIRE(a.type() == b.type());
  if (a.is_object()) {
    CHECK(a.size() == b.size());
    for (auto it = a.begin(); it != a.end(); ++it) {
      if (it.key() == "timings") continue;
      INFO(path << "/" << it.key());
      REQUIRE(b.contains(it.key()));
      compare_json(it.value(), b.at(it.key()), path + "/" + it.key(), rtol);
    }
  } else if (a.is_array()) {
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
      compare_json(a[i], b[i], path + "/" + std::to_string(i), rtol);
  } else {
    CHECK(a == b);
  }
}

}  // namespace

TEST_SUITE("io") {

TEST_CASE("toy ingest") {
  const Dataset d = toy(kToyLong, kToySurv);
  REQUIRE(d.n() == 2);
  CHECK(d.total_obs() == 3);
  CHECK(d.dims().p == 3);
  CHECK(d.dims().q == 2);
  CHECK(d.dims().p2 == 2);
  CHECK(d.desc_order().times() == std::vector<double>{3.0, 1.5});
  CHECK(d.subject(d.desc_order().index()[0]).id == "b");
  const Subject& a = d.subject(0);
  CHECK(a.id == "a");
  CHECK(a.obs[1].fixed_design == (Vec(3) << 1.0, 1.0, 1.0).finished());
  CHECK(a.obs[1].random_design == (Vec(2) << 1.0, 1.0).finished());
  CHECK(a.surv_covariates == (Vec(2) << 2.2, 1.0).finished());
  CHECK(d.events(1).times == std::vector<double>{1.5});
  CHECK(d.names().fixed == std::vector<std::string>{"(intercept)", "time", "x2"});
}

TEST_CASE("validation errors carry row context") {
  const std::string bad_cause = "id,obs_time,cause,x1,x2\na,1.5,3,2.2,1\nb,3.0,0,1.7,0\n";
  CHECK_THROWS_WITH_AS(toy(kToyLong, bad_cause), doctest::Contains("row 2"), InputError);

  const std::string non_numeric = "id,time,y,x2\na,0,abc,1\n";
  CHECK_THROWS_WITH(toy(non_numeric, kToySurv), doctest::Contains("abc"));

  const std::string orphan = "id,time,y,x2\nzz,0,1,1\n";
  CHECK_THROWS_WITH(toy(orphan, kToySurv), doctest::Contains("zz"));

  const std::string dup_time = "id,time,y,x2\na,0,5.1,1\na,0,6.0,1\n";
  CHECK_THROWS_WITH(toy(dup_time, kToySurv), doctest::Contains("row 3"));

  const std::string dup_id = "id,obs_time,cause,x1,x2\na,1.5,1,2.2,1\na,3.0,0,1.7,0\n";
  CHECK_THROWS_AS(toy(kToyLong, dup_id), InputError);

  const std::string missing_col = "id,obs_time,cause,x1\na,1.5,1,2.2\n";
  CHECK_THROWS_WITH_AS(toy(kToyLong, missing_col), doctest::Contains("x2"), ConfigError);
}

TEST_CASE("post-event measurements: error by default, dropped on request") {
  const std::string late = "id,time,y,x2\na,0,5.1,1\na,2,6.0,1\nb,0,4.2,0\n";
  CHECK_THROWS_WITH_AS(toy(late, kToySurv), doctest::Contains("a"), InputError);
  IngestOptions o;
  o.drop_post_event = true;
  const Dataset d = toy(late, kToySurv, o);
  CHECK(d.subject(0).obs.size() == 1);
}

TEST_CASE("simulate, write, ingest round trip is exact") {
  SimConfig c;
  c.n = 200;
  c.seed = 17;
  const Dataset d = simulate_dataset(c);
  std::ostringstream l, s;
  write_dataset_csv(d, l, s);
  std::istringstream li(l.str()), si(s.str());
  const Dataset r = ingest(li, si, ModelSpec{});
  REQUIRE(r.n() == d.n());
  for (std::size_t i = 0; i < d.n(); ++i) {
    const Subject& x = d.subject(i);
    const Subject& y = r.subject(i);
    CHECK(x.id == y.id);
    CHECK(x.obs_time == y.obs_time);
    CHECK(x.cause == y.cause);
    CHECK(x.surv_covariates == y.surv_covariates);
    REQUIRE(x.obs.size() == y.obs.size());
    for (std::size_t j = 0; j < x.obs.size(); ++j) {
      CHECK(x.obs[j].response == y.obs[j].response);
      CHECK(x.obs[j].fixed_design == y.obs[j].fixed_design);
      CHECK(x.obs[j].random_design == y.obs[j].random_design);
    }
  }
  CHECK(format_double(0.1) == "0.10000000000000001");
}

TEST_CASE("config parsing") {
  const RunConfig c = parse_config(R"({"em": {"tol": 1e-5, "max_iter": 50},
                                       "quadrature": {"mode": "standard"},
                                       "se": {"enabled": false}})");
  CHECK(c.em.tol == 1e-5);
  CHECK(c.em.max_iter == 50);
  CHECK(c.em.quad_mode == QuadMode::standard);
  CHECK(c.em.n_q == 20);
  CHECK_FALSE(c.se_enabled);
  CHECK_THROWS_AS(parse_config(R"({"em": {"tolerance": 1}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"bogus": {}})"), ConfigError);
  CHECK_THROWS_AS(parse_config("{not json"), ConfigError);
}

TEST_CASE("CLI: simulate is byte-identical for a fixed seed") {
  const auto p1 = scratch("simA").string();
  const auto p2 = scratch("simB").string();
  REQUIRE(cli({"simulate", "--out-prefix", p1, "--seed", "7", "--n", "100"}) == 0);
  REQUIRE(cli({"simulate", "--out-prefix", p2, "--seed", "7", "--n", "100"}) == 0);
  CHECK(slurp(p1 + "_long.csv") == slurp(p2 + "_long.csv"));
  CHECK(slurp(p1 + "_surv.csv") == slurp(p2 + "_surv.csv"));
  CHECK_FALSE(slurp(p1 + "_long.csv").empty());
}

TEST_CASE("CLI: missing column in config exits 2 naming the column") {
  const auto p = scratch("simC").string();
  REQUIRE(cli({"simulate", "--out-prefix", p, "--seed", "3", "--n", "50"}) == 0);
  const auto cfg = scratch("badcfg.json");
  std::ofstream(cfg) << R"({"model": {"survival": ["x1", "age"]}})";
  std::string err;
  const int rc = cli({"fit", "--config", cfg.string(), "--long", p + "_long.csv", "--surv",
                      p + "_surv.csv"},
                     nullptr, &err);
  CHECK(rc == 2);
  CHECK(err.find("age") != std::string::npos);
  CHECK(cli({"fit", "--bogus-flag"}) == 2);
  CHECK(cli({"fit", "--long", "/nonexistent/l.csv", "--surv", "/nonexistent/s.csv"}) != 0);
}

TEST_CASE("CLI: end-to-end fit writes a complete report" * doctest::timeout(300)) {
  const auto p = scratch("simD").string();
  REQUIRE(cli({"simulate", "--out-prefix", p, "--seed", "7", "--n", "500"}) == 0);
  const auto rep = scratch("reportD.json");
  std::string out;
  REQUIRE(cli({"fit", "--long", p + "_long.csv", "--surv", p + "_surv.csv", "--out", rep.string()},
              &out) == 0);
  const json j = json::parse(slurp(rep));
  CHECK(j.at("report_version") == kReportVersion);
  CHECK(j.at("converged") == true);
  CHECK(j.at("n_subjects") == 500);
  const auto& est = j.at("estimates");
  const auto& se = j.at("standard_errors");
  REQUIRE(se.is_object());
  CHECK(est.size() == 15);
  for (auto it = est.begin(); it != est.end(); ++it) {
    INFO(it.key());
    REQUIRE(se.contains(it.key()));
    CHECK(se.at(it.key()).get<double>() > 0.0);
  }
  CHECK(out.find("sigma2") != std::string::npos);
}

TEST_CASE("golden report for a fixed seed" * doctest::timeout(300)) {
  const auto p = scratch("simG").string();
  REQUIRE(cli({"simulate", "--out-prefix", p, "--seed", "2024", "--n", "150"}) == 0);
  const auto rep = scratch("reportG.json");
  REQUIRE(cli({"fit", "--long", p + "_long.csv", "--surv", p + "_surv.csv", "--out", rep.string()}) == 0);
  const fs::path golden = fs::path(FASTJM_GOLDEN_DIR) / "report_seed2024_n150.json";
  REQUIRE_MESSAGE(fs::exists(golden), "missing golden file " << golden.string());
  compare_json(json::parse(slurp(golden)), json::parse(slurp(rep)), "", 1e-8);
}

}

#include "lopt/lopt.hpp"

#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace lopt;
using Catch::Matchers::WithinAbs;

namespace {

std::filesystem::path scratch_dir() {
  const auto p = std::filesystem::temp_directory_path() / "lopt_test_harness";
  std::filesystem::create_directories(p);
  return p;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string l; std::getline(ss, l);) out.push_back(l);
  return out;
}

ExperimentConfig small_normal_mean() {
  ExperimentConfig c;
  c.fixture = "normal_mean";
  c.n = 60;
  c.M = 2;
  c.trials = 8;
  c.R = 300;
  c.probes = 4;
  c.B = 30;
  c.methods = {"normal", "wald", "lrt", "score", "bootstrap"};
  c.ascent.s0 = 1.0;
  c.diagnostics.gap_grid = 8;
  c.diagnostics.basin_grid = 8;
  c.diagnostics.R = 200;
  c.seed = 17;
  return c;
}

ExperimentConfig small_figure1() {
  ExperimentConfig c;
  c.n = 200;
  c.M = 1;
  c.trials = 40;
  c.R = 400;
  c.probes = 8;
  c.alpha = 0.5;
  c.delta = 1e-9;
  c.methods = {"normal", "wald", "lrt"};
  c.diagnostics.enabled = false;
  c.seed = 5;
  return c;
}

const CoverageReport& figure1_report() {
  static const CoverageReport rep = run_coverage(small_figure1());
  return rep;
}

}  // namespace

TEST_CASE("configuration", "[harness][config]") {
  SECTION("round trip") {
    ExperimentConfig c = small_normal_mean();
    c.delta = 0.05;
    c.init.kind = "uniform";
    c.init.lo = {-1.0};
    c.init.hi = {2.0};
    c.em.tol = 1e-9;
    const json j = c;
    const ExperimentConfig back = j.get<ExperimentConfig>();
    CHECK(json(back) == j);
    CHECK(back.delta == 0.05);
    CHECK(back.init == c.init);
    CHECK(back.ascent.s0 == 1.0);
  }
  SECTION("missing fields take defaults") {
    const ExperimentConfig c = json::parse(R"({"n": 321})").get<ExperimentConfig>();
    CHECK(c.n == 321);
    CHECK(c.fixture == "figure1");
    CHECK_FALSE(c.delta.has_value());
    CHECK(c.methods == std::vector<std::string>{"normal"});
  }
  SECTION("validation") {
    auto bad = [](auto edit) {
      ExperimentConfig c;
      edit(c);
      return c;
    };
    CHECK_THROWS_AS(bad([](auto& c) { c.alpha = 1.2; }).validate(), ConfigError);
    CHECK_THROWS_AS(bad([](auto& c) { c.delta = 0.0; }).validate(), ConfigError);
    CHECK_THROWS_AS(bad([](auto& c) { c.trials = 0; }).validate(), ConfigError);
    CHECK_THROWS_AS(bad([](auto& c) { c.methods = {"jackknife"}; }).validate(), ConfigError);
    CHECK_THROWS_AS(bad([](auto& c) { c.M = 0; }).validate(), ConfigError);
    CHECK_NOTHROW(ExperimentConfig{}.validate());
  }
  SECTION("files") {
    const auto dir = scratch_dir();
    CHECK_THROWS_AS(load_config((dir / "absent.json").string()), IOError);
    std::ofstream(dir / "broken.json") << "{ n: ";
    CHECK_THROWS_AS(load_config((dir / "broken.json").string()), ConfigError);
    std::ofstream(dir / "typed.json") << R"({"n": "many"})";
    CHECK_THROWS_AS(load_config((dir / "typed.json").string()), ConfigError);
    std::ofstream(dir / "good.json") << R"({"fixture": "normal_mean", "n": 40, "delta": 0.1})";
    const ExperimentConfig c = load_config((dir / "good.json").string());
    CHECK(c.n == 40);
    CHECK(c.delta == 0.1);
  }
  SECTION("fixtures") {
    CHECK(make_fixture("figure1").fit.dim() == 2);
    CHECK(make_fixture("normal_mean").fit.dim() == 1);
    ExperimentConfig c = small_normal_mean();
    c.fixture = "custom";
    CHECK_THROWS_AS(run_coverage(c), ConfigError);
  }
}

TEST_CASE("coverage reports are reproducible", "[harness][coverage]") {
  const ExperimentConfig c = small_normal_mean();
  const CoverageReport a = run_coverage(c, 1);

  SECTION("schedule independent") { CHECK(run_coverage(c, 3) == a); }
  SECTION("JSON round trip") {
    const json j = a;
    const CoverageReport back = j.get<CoverageReport>();
    CHECK(back == a);
    CHECK(json(back).dump() == j.dump());
  }
  SECTION("a trial depends only on its index") {
    ExperimentConfig shorter = c;
    shorter.trials = 3;
    const CoverageReport b = run_coverage(shorter);
    const std::size_t k = c.methods.size();
    REQUIRE(b.trials.size() == 3 * k);
    for (std::size_t i = 0; i < b.trials.size(); ++i) CHECK(b.trials[i] == a.trials[i]);
  }
  SECTION("report arithmetic") {
    REQUIRE(a.methods.size() == c.methods.size());
    for (const auto& m : a.methods) {
      CHECK(m.trials == c.trials);
      CHECK(m.hits_precision <= m.trials);
      CHECK(m.hits_mle <= m.trials);
      CHECK(m.rate_mle == static_cast<double>(m.hits_mle) / c.trials);
      CHECK(m.se_mle == target_se(m.target_mle, c.trials));
      CHECK(m.pass_mle == coverage_pass(m.rate_mle, m.target_mle, c.trials));
    }
    CHECK(a.population.maxima.size() == 1);
    CHECK(a.ledger_measured);
    CHECK(a.ledger.eps1 >= 0.0);
  }
}

TEST_CASE("figure 1 trial records", "[harness][coverage][figure1]") {
  const CoverageReport& rep = figure1_report();
  REQUIRE(rep.population.maxima.size() == 2);
  CHECK(rep.population.N == rep.population.maxima.size());

  for (const auto& t : rep.trials) {
    // The top maximum is a precision-set member, so covering it covers the set.
    if (t.hit_mle) CHECK(t.hit_precision);
  }
  CHECK(rep.method("lrt")->hits_precision >= rep.method("wald")->hits_precision);
  CHECK(rep.method("lrt")->failures == 0);
  CHECK(rep.method("absent") == nullptr);
}

TEST_CASE("coverage of a concave model", "[harness][coverage][montecarlo]") {
  ExperimentConfig c = small_normal_mean();
  c.n = 100;
  c.trials = 150;
  c.methods = {"normal", "wald", "lrt", "score"};
  c.diagnostics.enabled = false;
  const CoverageReport rep = run_coverage(c);
  for (const auto& m : rep.methods) {
    INFO(m.method << " rate " << m.rate_mle);
    CHECK_THAT(m.target_mle, WithinAbs(0.95, 1e-12));
    CHECK(std::abs(m.rate_mle - 0.95) <= 3.0 * target_se(0.95, c.trials));
    CHECK(m.failures == 0);
  }
}

TEST_CASE("plot data", "[harness][io]") {
  const auto dir = scratch_dir();
  SECTION("basin raster") {
    BasinMap map{Grid(Box(vec({-2.0}), vec({2.0})), 10), {}};
    for (std::size_t c = 0; c < 10; ++c) map.labels.push_back(c < 5 ? 0 : 1);
    write_basin_csv(map, (dir / "basins.csv").string());
    const auto ls = lines(slurp(dir / "basins.csv"));
    REQUIRE(ls.size() == 11);
    CHECK(ls[0] == "x0,label");
    CHECK_THAT(std::stod(ls[1]), WithinAbs(-1.8, 1e-12));
    CHECK(ls[1].substr(ls[1].find(',')) == ",0");
    CHECK_THAT(std::stod(ls[10]), WithinAbs(1.8, 1e-12));
    CHECK(ls[10].substr(ls[10].find(',')) == ",1");
  }
  SECTION("empty trajectory list") {
    write_trajectories_csv({}, (dir / "traj.csv").string());
    CHECK(slurp(dir / "traj.csv") == "run,iteration,value\n");
    write_trajectories_csv({Trajectory{{vec({1.0, 0.5}), vec({1.5, 0.5})}, {-2.0, -1.0}}}, (dir / "traj2.csv").string());
    const auto ls = lines(slurp(dir / "traj2.csv"));
    REQUIRE(ls.size() == 3);
    CHECK(ls[0] == "run,iteration,value,theta0,theta1");
    CHECK(ls[2] == "0,1,-1,1.5,0.5");
  }
  SECTION("report rows") {
    write_report_csv(figure1_report(), (dir / "report.csv").string());
    const auto ls = lines(slurp(dir / "report.csv"));
    REQUIRE(ls.size() == 1 + 2 * figure1_report().methods.size());
    CHECK(ls[0] == "method,target,hits,trials,rate,se,target_rate,pass");
    CHECK(ls[1].rfind("normal,precision_set,", 0) == 0);
    CHECK(ls[2].rfind("normal,mle,", 0) == 0);
  }
  SECTION("unwritable path") {
    CHECK_THROWS_AS(write_json(json::object(), "/dev/null/out.json"), IOError);
    CHECK_THROWS_AS(write_trajectories_csv({}, "/dev/null/t.csv"), IOError);
  }
}

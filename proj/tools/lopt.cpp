// Command-line front end. Every subcommand reads the same JSON experiment
// config, writes JSON (and CSV where useful) into --out, and exits 0 on
// success, 2 when a coverage check fails, 1 on error.

#include "lopt/lopt.hpp"

#include "CLI11.hpp"

#include <iostream>

using namespace lopt;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  unsigned threads = 1;
};

ExperimentConfig resolve(const Globals& g) {
  ExperimentConfig c = g.config.empty() ? ExperimentConfig{} : load_config(g.config);
  if (g.seed) c.seed = *g.seed;
  c.validate();
  return c;
}

std::string out_path(const Globals& g, const std::string& name) {
  return (std::filesystem::path(g.out) / name).string();
}

json to_json_vec(const Vector& v) { return std::vector<double>(v.begin(), v.end()); }

Dataset load_or_simulate(const ExperimentConfig& c, const Fixture& fx, const std::string& path,
                         std::uint64_t tag = 0) {
  if (!path.empty()) return read_dataset(path);
  return simulate(fx.truth, c.n, stream_seed(c.seed, streams::simulate, tag));
}

json run_json(const AscentResult& r) {
  return json{{"convergent", to_json_vec(r.convergent)},
              {"value", r.ok() ? json(r.value) : json(nullptr)},
              {"iterations", r.iterations},
              {"converged", r.converged},
              {"termination", to_string(r.termination)},
              {"classification", to_string(r.classification)},
              {"grad_norm", r.ok() ? json(r.grad_norm) : json(nullptr)},
              {"failure", r.failure}};
}

json outcome_json(const MultistartOutcome& o) {
  json runs = json::array();
  for (const auto& r : o.runs) runs.push_back(run_json(r));
  return json{{"selected", o.selected}, {"estimator", to_json_vec(o.estimator)}, {"value", o.value}, {"runs", runs}};
}

json interval_json(const ConfidenceInterval& ci) {
  json seg = json::array();
  for (const auto& [a, b] : ci.segments) seg.push_back({a, b});
  return json{{"method", ci.method}, {"level", ci.level}, {"lo", ci.lo}, {"hi", ci.hi}, {"segments", seg}};
}

int cmd_simulate(const Globals& g) {
  const auto c = resolve(g);
  const auto fx = make_fixture(c.fixture);
  const Dataset d = simulate(fx.truth, c.n, stream_seed(c.seed, streams::simulate));
  {
    auto os = open_output(out_path(g, "data.txt"));
    write_dataset(d, os);
  }
  double mean = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) mean += d.row(i)[0];
  mean /= static_cast<double>(d.size());
  write_json({{"fixture", c.fixture}, {"n", c.n}, {"seed", c.seed}, {"file", "data.txt"}, {"mean", mean}},
             out_path(g, "simulate.json"));
  return 0;
}

int cmd_fit(const Globals& g, const std::string& data_path) {
  auto c = resolve(g);
  const auto fx = make_fixture(c.fixture);
  const Dataset d = load_or_simulate(c, fx, data_path);
  const MixtureSurface s(fx.fit, d);
  const Initializer init = make_initializer(c.init, fx, &d);
  AscentConfig acfg = c.ascent;
  acfg.keep_trajectory = true;
  const auto o = multistart(s, init, c.M, acfg, stream_seed(c.seed, streams::multistart), g.threads);
  json j = outcome_json(o);
  j["fixture"] = c.fixture;
  j["n"] = d.size();
  j["M"] = c.M;
  j["seed"] = c.seed;
  write_json(j, out_path(g, "fit.json"));
  std::vector<Trajectory> tr;
  for (const auto& r : o.runs) tr.push_back({r.trajectory, r.values});
  write_trajectories_csv(tr, out_path(g, "fit_trajectories.csv"));
  return 0;
}

int cmd_basins(const Globals& g, std::size_t resolution) {
  const auto c = resolve(g);
  const auto fx = make_fixture(c.fixture);
  const PopulationTruth pt = compute_population_truth(c, fx, g.threads);
  const auto pop = population_surface(fx.fit, fx.truth);
  const BasinMap map = map_basins(pop, pt.registry, resolution, c.ascent, g.threads);
  json areas = json::array();
  for (std::size_t l = 0; l < pt.registry.size(); ++l) areas.push_back(map.area_fraction(static_cast<int>(l)));
  write_json({{"fixture", c.fixture},
              {"registry", registry_json(pt.registry)},
              {"q", {{"method", to_string(pt.q.method)}, {"values", pt.q.q}, {"se", pt.q.se},
                     {"unclassified", pt.q.unclassified}, {"draws", pt.q.draws}}},
              {"precision_set", {{"M", pt.precision.M}, {"delta", pt.precision.delta}, {"N", pt.precision.N},
                                 {"saturated", pt.precision.saturated}, {"cumulative", pt.precision.cumulative}}},
              {"min_initializations_for_q1",
               pt.q.q[0] > 0.0 && pt.q.q[0] < 1.0 ? json(min_initializations(0.05, pt.q.q[0])) : json(nullptr)},
              {"basin_map", {{"resolution", map.grid.resolution()}, {"area_fraction", areas},
                             {"boundary", map.count(BasinMap::kBoundary)},
                             {"unresolved", map.count(BasinMap::kUnresolved)}, {"file", "basins.csv"}}}},
             out_path(g, "basins.json"));
  write_basin_csv(map, out_path(g, "basins.csv"));
  return 0;
}

int cmd_ci(const Globals& g, const std::string& method, const std::string& data_path) {
  const auto c = resolve(g);
  const auto fx = make_fixture(c.fixture);
  const Dataset d = load_or_simulate(c, fx, data_path);
  const MixtureSurface s(fx.fit, d);
  const Initializer init = make_initializer(c.init, fx, &d);
  const double n = static_cast<double>(d.size());
  const auto tau = TauFunctional::coordinate(c.tau_coordinate, fx.fit.dim());
  json j{{"method", method}, {"fixture", c.fixture}, {"n", d.size()}, {"alpha", c.alpha}};

  if (method == "em-normal") {
    const auto em = em_multistart(s, init, c.M, c.em, stream_seed(c.seed, streams::multistart), g.threads);
    j["estimator"] = to_json_vec(em.estimator);
    j["interval"] = interval_json(em_normal_ci(s, em.estimator, tau, c.alpha, parse_covariance(c.covariance)));
    write_json(j, out_path(g, "ci.json"));
    return 0;
  }
  const auto o = multistart(s, init, c.M, c.ascent, stream_seed(c.seed, streams::multistart), g.threads);
  const Vector& th = o.estimator;
  j["estimator"] = to_json_vec(th);
  if (method == "normal") {
    j["interval"] = interval_json(normal_ci(th, sandwich_cov(s, th, parse_covariance(c.covariance)), tau, n, c.alpha));
  } else if (method == "bootstrap") {
    BootstrapOptions bo;
    bo.threads = g.threads;
    j["interval"] = interval_json(
        bootstrap_ci(s, th, tau, c.B, c.alpha, c.ascent, stream_seed(c.seed, streams::bootstrap), bo).ci);
  } else if (method == "lrt" || method == "score" || method == "wald") {
    auto region = method == "lrt"     ? lrt_region(s, th, n, c.alpha)
                  : method == "score" ? score_region(s, n, c.alpha, parse_information(c.score_information))
                                      : wald_region(s.domain(), th, sandwich_cov(s, th, parse_covariance(c.covariance)),
                                                    n, c.alpha);
    j["threshold"] = region.threshold();
    j["estimator_member"] = region.contains(th);
    if (s.domain().dim() <= 2) {
      const auto& ex = region.extract(c.region_grid, g.threads);
      j["extraction"] = {{"resolution", ex.grid.resolution()}, {"members", ex.count()},
                         {"excluded_singular", ex.excluded_singular}, {"file", "region.csv"}};
      if (ex.excluded_fraction() > 0.01) j["warning"] = "more than 1% of cells have singular information";
      write_region_csv(ex, out_path(g, "region.csv"));
      if (ex.count() > 0) j["interval"] = interval_json(tau_image(region, tau));
    }
  } else {
    throw ConfigError("unknown ci method '" + method + "'");
  }
  write_json(j, out_path(g, "ci.json"));
  return 0;
}

int cmd_bootstrap(const Globals& g, const std::string& data_path) {
  const auto c = resolve(g);
  const auto fx = make_fixture(c.fixture);
  const Dataset d = load_or_simulate(c, fx, data_path);
  const MixtureSurface s(fx.fit, d);
  const Initializer init = make_initializer(c.init, fx, &d);
  const auto o = multistart(s, init, c.M, c.ascent, stream_seed(c.seed, streams::multistart), g.threads);
  const auto tau = TauFunctional::coordinate(c.tau_coordinate, fx.fit.dim());
  BootstrapOptions bo;
  bo.threads = g.threads;
  const auto b = bootstrap_ci(s, o.estimator, tau, c.B, c.alpha, c.ascent, stream_seed(c.seed, streams::bootstrap), bo);
  write_json({{"estimator", to_json_vec(o.estimator)},
              {"interval", interval_json(b.ci)},
              {"B", b.distribution.B},
              {"diverged", b.distribution.diverged},
              {"file", "bootstrap_values.txt"}},
             out_path(g, "bootstrap.json"));
  auto out = open_output(out_path(g, "bootstrap_values.txt"));
  for (double v : b.distribution.values) out << v << '\n';
  return 0;
}

int cmd_em(const Globals& g, const std::string& data_path) {
  const auto c = resolve(g);
  const auto fx = make_fixture(c.fixture);
  const Dataset d = load_or_simulate(c, fx, data_path);
  const MixtureSurface s(fx.fit, d);
  const Initializer init = make_initializer(c.init, fx, &d);
  const std::uint64_t seed = stream_seed(c.seed, streams::multistart);
  const auto o = em_multistart(s, init, c.M, c.em, seed, g.threads);
  EMConfig traced = c.em;
  traced.keep_trace = true;
  const EMRun run = em_run(s, multistart_start(init, seed, o.selected), traced);
  json j = outcome_json(o);
  j["fixture"] = c.fixture;
  j["n"] = d.size();
  j["tol"] = c.em.tol;
  j["trace_file"] = "em_trace.csv";
  write_json(j, out_path(g, "em.json"));
  auto out = open_output(out_path(g, "em_trace.csv"));
  out << "t,loglik";
  for (std::size_t k = 0; k < fx.fit.dim(); ++k) out << ",theta" << k;
  out << '\n';
  for (std::size_t t = 0; t < run.logliks.size(); ++t) {
    out << t << ',' << run.logliks[t];
    for (Eigen::Index k = 0; k < run.thetas[t].size(); ++k) out << ',' << run.thetas[t][k];
    out << '\n';
  }
  return 0;
}

int cmd_mode(const Globals& g, const std::string& data_path) {
  const auto c = resolve(g);
  const auto fx = make_fixture(c.fixture);
  const Dataset d = load_or_simulate(c, fx, data_path);
  const double h = bandwidth_rule(d, parse_bandwidth(c.bandwidth));
  const KDE kde(d, h);
  const auto m = mode_estimate(kde, stream_seed(c.seed, streams::mode_starts), c.meanshift, g.threads);
  BootstrapOptions bo;
  bo.threads = g.threads;
  const auto ball =
      mode_bootstrap_ci(kde, m.best.location, c.B, c.alpha, stream_seed(c.seed, streams::bootstrap), c.meanshift, bo);
  write_json({{"bandwidth", h},
              {"rule", c.bandwidth},
              {"center", to_json_vec(ball.center)},
              {"kde_value", m.best.kde_value},
              {"radius", ball.radius},
              {"level", ball.level},
              {"B", ball.B},
              {"dropped", ball.dropped},
              {"starts", m.starts},
              {"distinct_starts", m.distinct_starts},
              {"isolated_starts", m.isolated}},
             out_path(g, "mode.json"));
  return 0;
}

int cmd_twosample(const Globals& g, const std::string& xp, const std::string& yp, const std::string& comparison) {
  const auto c = resolve(g);
  const auto fx = make_fixture(c.fixture);
  const Dataset x = load_or_simulate(c, fx, xp, 1);
  Dataset y = yp.empty() ? simulate(fx.truth, c.m ? c.m : c.n, stream_seed(c.seed, streams::simulate, 2))
                         : read_dataset(yp);
  const Initializer init = make_initializer(c.init, fx, nullptr);
  TwoSampleOptions o;
  o.comparison = comparison == "ci-overlap" ? Comparison::ci_overlap : Comparison::permutation;
  if (comparison != "ci-overlap" && comparison != "permutation")
    throw ConfigError("unknown comparison '" + comparison + "'");
  o.alpha = c.alpha;
  o.tau_coordinate = c.tau_coordinate;
  o.threads = g.threads;
  const auto r = two_sample_test(x, y, fx.fit, init, c.M, c.P, c.ascent, stream_seed(c.seed, streams::permutation), o);
  json j{{"comparison", comparison},
         {"theta_opt", to_json_vec(r.theta_opt)},
         {"theta_x", to_json_vec(r.theta_x)},
         {"theta_y", to_json_vec(r.theta_y)},
         {"statistic", r.statistic},
         {"p_value", r.p_value},
         {"permutations", r.permutations},
         {"nx", x.size()},
         {"ny", y.size()}};
  if (r.overlap) {
    j["ci_x"] = interval_json(*r.ci_x);
    j["ci_y"] = interval_json(*r.ci_y);
    j["overlap"] = *r.overlap;
  }
  write_json(j, out_path(g, "twosample.json"));
  return 0;
}

int cmd_coverage(const Globals& g) {
  const auto c = resolve(g);
  const CoverageReport rep = run_coverage(c, g.threads);
  write_json(rep, out_path(g, "coverage.json"));
  write_report_csv(rep, out_path(g, "coverage.csv"));
  for (const auto& m : rep.methods)
    std::cerr << m.method << ": precision-set " << m.rate_precision << " (target " << m.target_precision
              << ") mle " << m.rate_mle << " (target " << m.target_mle << ")\n";
  return rep.pass() ? 0 : 2;
}

int cmd_emit_plots(const Globals& g, const std::string& report, std::size_t resolution) {
  const auto c = resolve(g);
  const auto fx = make_fixture(c.fixture);
  const PopulationTruth pt = compute_population_truth(c, fx, g.threads);
  const auto pop = population_surface(fx.fit, fx.truth);
  write_basin_csv(map_basins(pop, pt.registry, resolution, c.ascent, g.threads), out_path(g, "basins.csv"));

  const Dataset d = simulate(fx.truth, c.n, stream_seed(c.seed, streams::simulate));
  AscentConfig acfg = c.ascent;
  acfg.keep_trajectory = true;
  const auto o = multistart(MixtureSurface(fx.fit, d), make_initializer(c.init, fx, &d), c.M, acfg,
                            stream_seed(c.seed, streams::multistart), g.threads);
  std::vector<Trajectory> tr;
  for (const auto& r : o.runs) tr.push_back({r.trajectory, r.values});
  write_trajectories_csv(tr, out_path(g, "trajectories.csv"));

  json files = {"basins.csv", "trajectories.csv"};
  if (!report.empty()) {
    std::ifstream in(report);
    if (!in) throw IOError("cannot open report " + report);
    write_report_csv(json::parse(in).get<CoverageReport>(), out_path(g, "coverage.csv"));
    files.push_back("coverage.csv");
  }
  write_json({{"fixture", c.fixture}, {"resolution", resolution}, {"files", files}}, out_path(g, "plots.json"));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-start likelihood inference: estimation, landscapes, confidence sets, coverage"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config, "JSON experiment config")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "master seed (overrides the config)");
  app.add_option("--out", g.out, "output directory");
  app.add_option("--threads", g.threads, "worker threads")->check(CLI::PositiveNumber);

  std::string data, xfile, yfile, method = "normal", comparison = "permutation", report;
  std::size_t resolution = 64;

  auto* sim = app.add_subcommand("simulate", "draw a dataset from the fixture truth");
  auto* fit = app.add_subcommand("fit", "multi-start gradient ascent");
  fit->add_option("--data", data, "dataset file (default: simulate)");
  auto* basins = app.add_subcommand("basins", "population maxima, basin map and basin probabilities");
  basins->add_option("--resolution", resolution, "cells per axis");
  auto* ci = app.add_subcommand("ci", "confidence interval or region");
  ci->add_option("--method", method, "normal | bootstrap | lrt | score | wald | em-normal")
      ->check(CLI::IsMember({"normal", "bootstrap", "lrt", "score", "wald", "em-normal"}));
  ci->add_option("--data", data, "dataset file");
  auto* boot = app.add_subcommand("bootstrap", "percentile bootstrap distribution");
  boot->add_option("--data", data, "dataset file");
  auto* em = app.add_subcommand("em", "multi-start EM");
  em->add_option("--data", data, "dataset file");
  auto* mode = app.add_subcommand("mode", "KDE mode and bootstrap mode ball");
  mode->add_option("--data", data, "dataset file");
  auto* two = app.add_subcommand("twosample", "pooled two-sample test");
  two->add_option("--x", xfile, "first sample file");
  two->add_option("--y", yfile, "second sample file");
  two->add_option("--comparison", comparison, "permutation | ci-overlap");
  auto* cov = app.add_subcommand("coverage", "Monte Carlo coverage experiment");
  auto* plots = app.add_subcommand("emit-plots", "CSV plot data");
  plots->add_option("--report", report, "coverage.json to tabulate");
  plots->add_option("--resolution", resolution, "basin raster cells per axis");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  if (*seed_opt) g.seed = seed;

  try {
    if (*sim) return cmd_simulate(g);
    if (*fit) return cmd_fit(g, data);
    if (*basins) return cmd_basins(g, resolution);
    if (*ci) return cmd_ci(g, method, data);
    if (*boot) return cmd_bootstrap(g, data);
    if (*em) return cmd_em(g, data);
    if (*mode) return cmd_mode(g, data);
    if (*two) return cmd_twosample(g, xfile, yfile, comparison);
    if (*cov) return cmd_coverage(g);
    if (*plots) return cmd_emit_plots(g, report, resolution);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

#pragma once

// Monte Carlo coverage experiments on the bundled fixtures: configuration,
// population truth (maxima, basin probabilities, precision set), per-trial
// pipelines, the coverage report with JSON round-tripping, and CSV emitters
// for external plotting.

#include "lopt/diagnostics.hpp"
#include "lopt/em.hpp"
#include "lopt/modehunt.hpp"
#include "lopt/twosample.hpp"

#include "json.hpp"

#include <filesystem>
#include <set>

namespace lopt {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> m = {"normal", "bootstrap", "lrt", "score", "wald", "em-normal", "mode-ball"};
  return m;
}

struct InitSpec {
  std::string kind = "uniform";  // uniform | empirical | gaussian-fit | point
  std::vector<double> lo, hi;    // uniform region (empty: whole domain)
  std::vector<double> at;        // point mass
  bool operator==(const InitSpec&) const = default;
};

struct DiagnosticsSpec {
  bool enabled = true;
  std::size_t gap_grid = 16;
  std::size_t basin_grid = 32;
  std::size_t R = 2000;
  bool operator==(const DiagnosticsSpec&) const = default;
};

struct ExperimentConfig {
  std::string fixture = "figure1";
  std::size_t n = 500;
  std::size_t M = 3;
  std::optional<double> delta;  // absent: (1 - q1)^M
  double alpha = 0.05;
  std::size_t B = 200;
  std::size_t trials = 400;
  std::size_t R = 10000;  // draws for the population basin probabilities
  std::size_t probes = 64;
  std::size_t em_R = 1000;  // draws for the EM basin probability
  std::size_t P = 199;      // permutations (twosample)
  std::size_t m = 0;        // second sample size (twosample; 0 = n)
  InitSpec init;
  std::size_t tau_coordinate = 0;
  std::vector<std::string> methods = {"normal"};
  std::uint64_t seed = 1;
  AscentConfig ascent;
  EMConfig em;
  MeanshiftConfig meanshift;
  std::string covariance = "sandwich";
  std::string score_information = "observed";
  std::string bandwidth = "undersmooth";
  std::size_t region_grid = 200;
  DiagnosticsSpec diagnostics;

  void validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("config: alpha must lie in (0,1)");
    if (delta && !(*delta > 0.0 && *delta < 1.0)) throw ConfigError("config: delta must lie in (0,1)");
    if (trials == 0) throw ConfigError("config: trials must be >= 1");
    if (n < 2) throw ConfigError("config: n must be >= 2");
    if (M == 0 || B == 0 || R == 0 || probes == 0 || em_R == 0) throw ConfigError("config: counts must be >= 1");
    for (const auto& m : methods)
      if (std::find(known_methods().begin(), known_methods().end(), m) == known_methods().end())
        throw ConfigError("config: unknown method '" + m + "'");
    ascent.validate();
    em.validate();
  }
};

inline CovarianceKind parse_covariance(const std::string& s) {
  if (s == "sandwich") return CovarianceKind::sandwich;
  if (s == "observed-information") return CovarianceKind::observed_information;
  if (s == "outer-product") return CovarianceKind::outer_product;
  throw ConfigError("unknown covariance kind '" + s + "'");
}

inline InformationKind parse_information(const std::string& s) {
  if (s == "observed") return InformationKind::observed;
  if (s == "centered-outer") return InformationKind::centered_outer;
  throw ConfigError("unknown score information '" + s + "'");
}

inline BandwidthRule parse_bandwidth(const std::string& s) {
  if (s == "undersmooth") return BandwidthRule::undersmooth;
  if (s == "reference") return BandwidthRule::reference;
  throw ConfigError("unknown bandwidth rule '" + s + "'");
}

inline void to_json(json& j, const InitSpec& s) {
  j = json{{"kind", s.kind}};
  if (!s.lo.empty()) j["lo"] = s.lo;
  if (!s.hi.empty()) j["hi"] = s.hi;
  if (!s.at.empty()) j["at"] = s.at;
}
inline void from_json(const json& j, InitSpec& s) {
  s = InitSpec{};
  s.kind = j.value("kind", s.kind);
  s.lo = j.value("lo", s.lo);
  s.hi = j.value("hi", s.hi);
  s.at = j.value("at", s.at);
}

inline void to_json(json& j, const ExperimentConfig& c) {
  j = json{{"fixture", c.fixture},
           {"n", c.n},
           {"M", c.M},
           {"alpha", c.alpha},
           {"B", c.B},
           {"trials", c.trials},
           {"R", c.R},
           {"probes", c.probes},
           {"em_R", c.em_R},
           {"P", c.P},
           {"m", c.m},
           {"init", c.init},
           {"tau", {{"coordinate", c.tau_coordinate}}},
           {"methods", c.methods},
           {"seed", c.seed},
           {"ascent",
            {{"s0", c.ascent.s0},
             {"shrink", c.ascent.shrink},
             {"armijo", c.ascent.armijo},
             {"grad_tol", c.ascent.grad_tol},
             {"max_iter", c.ascent.max_iter},
             {"classify_tol", c.ascent.classify_tol}}},
           {"em", {{"tol", c.em.tol}, {"max_iter", c.em.max_iter}}},
           {"meanshift", {{"tol", c.meanshift.tol}, {"max_iter", c.meanshift.max_iter}}},
           {"covariance", c.covariance},
           {"score_information", c.score_information},
           {"bandwidth", c.bandwidth},
           {"region_grid", c.region_grid},
           {"diagnostics",
            {{"enabled", c.diagnostics.enabled},
             {"gap_grid", c.diagnostics.gap_grid},
             {"basin_grid", c.diagnostics.basin_grid},
             {"R", c.diagnostics.R}}}};
  j["delta"] = c.delta ? json(*c.delta) : json(nullptr);
}

inline void from_json(const json& j, ExperimentConfig& c) {
  c = ExperimentConfig{};
  c.fixture = j.value("fixture", c.fixture);
  c.n = j.value("n", c.n);
  c.M = j.value("M", c.M);
  if (j.contains("delta") && !j["delta"].is_null()) c.delta = j["delta"].get<double>();
  c.alpha = j.value("alpha", c.alpha);
  c.B = j.value("B", c.B);
  c.trials = j.value("trials", c.trials);
  c.R = j.value("R", c.R);
  c.probes = j.value("probes", c.probes);
  c.em_R = j.value("em_R", c.em_R);
  c.P = j.value("P", c.P);
  c.m = j.value("m", c.m);
  if (j.contains("init")) c.init = j["init"].get<InitSpec>();
  if (j.contains("tau")) c.tau_coordinate = j["tau"].value("coordinate", c.tau_coordinate);
  c.methods = j.value("methods", c.methods);
  c.seed = j.value("seed", c.seed);
  if (j.contains("ascent")) {
    const json& a = j["ascent"];
    c.ascent.s0 = a.value("s0", c.ascent.s0);
    c.ascent.shrink = a.value("shrink", c.ascent.shrink);
    c.ascent.armijo = a.value("armijo", c.ascent.armijo);
    c.ascent.grad_tol = a.value("grad_tol", c.ascent.grad_tol);
    c.ascent.max_iter = a.value("max_iter", c.ascent.max_iter);
    c.ascent.classify_tol = a.value("classify_tol", c.ascent.classify_tol);
  }
  if (j.contains("em")) {
    c.em.tol = j["em"].value("tol", c.em.tol);
    c.em.max_iter = j["em"].value("max_iter", c.em.max_iter);
  }
  if (j.contains("meanshift")) {
    c.meanshift.tol = j["meanshift"].value("tol", c.meanshift.tol);
    c.meanshift.max_iter = j["meanshift"].value("max_iter", c.meanshift.max_iter);
  }
  c.covariance = j.value("covariance", c.covariance);
  c.score_information = j.value("score_information", c.score_information);
  c.bandwidth = j.value("bandwidth", c.bandwidth);
  c.region_grid = j.value("region_grid", c.region_grid);
  if (j.contains("diagnostics")) {
    const json& d = j["diagnostics"];
    c.diagnostics.enabled = d.value("enabled", c.diagnostics.enabled);
    c.diagnostics.gap_grid = d.value("gap_grid", c.diagnostics.gap_grid);
    c.diagnostics.basin_grid = d.value("basin_grid", c.diagnostics.basin_grid);
    c.diagnostics.R = d.value("R", c.diagnostics.R);
  }
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IOError("cannot open config " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  try {
    c = j.get<ExperimentConfig>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config has a field of the wrong type: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Fixtures
// ---------------------------------------------------------------------------

struct Fixture {
  std::string id;
  GaussianMixture1D truth;
  GaussianMixtureModel fit;
  Box default_init;
};

inline Fixture make_fixture(const std::string& id) {
  if (id == "figure1")
    return {id, fixtures::figure1_truth(), fixtures::figure1_fit(), Box(vec({0.0, 0.01}), vec({4.0, 0.99}))};
  if (id == "normal_mean") {
    auto fit = fixtures::normal_mean();
    return {id, fixtures::standard_normal(), fit, Box(vec({-3.0}), vec({3.0}))};
  }
  throw ConfigError("unknown fixture '" + id +
                    "'; coverage needs a population registry, available only for the bundled fixtures "
                    "(figure1, normal_mean)");
}

/// Reference sample standing in for the large-n limit of data-dependent
/// initializers.
inline constexpr std::size_t kReferenceSampleSize = 20000;

inline Initializer make_initializer(const InitSpec& spec, const Fixture& fx, const Dataset* data) {
  const Box& domain = fx.fit.domain();
  if (spec.kind == "uniform") {
    if (spec.lo.empty() && spec.hi.empty()) return Initializer::uniform(domain, fx.default_init);
    if (spec.lo.size() != domain.dim() || spec.hi.size() != domain.dim())
      throw ConfigError("uniform init: lo/hi must have one entry per parameter");
    Vector lo = Eigen::Map<const Vector>(spec.lo.data(), static_cast<Eigen::Index>(spec.lo.size()));
    Vector hi = Eigen::Map<const Vector>(spec.hi.data(), static_cast<Eigen::Index>(spec.hi.size()));
    return Initializer::uniform(domain, Box(lo, hi));
  }
  if (spec.kind == "point") {
    if (spec.at.size() != domain.dim()) throw ConfigError("point init: 'at' must have one entry per parameter");
    return Initializer::point(domain, Eigen::Map<const Vector>(spec.at.data(), static_cast<Eigen::Index>(spec.at.size())));
  }
  if (!data) throw ConfigError("data-dependent initializer needs data");
  if (spec.kind == "empirical") return Initializer::empirical(domain, *data);
  if (spec.kind == "gaussian-fit") return Initializer::gaussian_fit(domain, *data);
  throw ConfigError("unknown initializer kind '" + spec.kind + "'");
}

// ---------------------------------------------------------------------------
// Population truth
// ---------------------------------------------------------------------------

struct TruthModes {
  std::vector<double> modes;  // by density, highest first
  std::vector<double> q;      // truth mass of each mode's basin
};

/// Modes of a 1-D mixture density and the truth mass of their basins
/// (intervals between neighbouring local minima).
inline TruthModes truth_modes(const GaussianMixture1D& truth) {
  double a = std::numeric_limits<double>::infinity(), b = -a;
  for (std::size_t k = 0; k < truth.means.size(); ++k) {
    a = std::min(a, truth.means[k] - 8.0 * truth.sds[k]);
    b = std::max(b, truth.means[k] + 8.0 * truth.sds[k]);
  }
  const std::size_t G = 40000;
  const double h = (b - a) / static_cast<double>(G);
  std::vector<double> f(G + 1);
  for (std::size_t i = 0; i <= G; ++i) f[i] = truth.pdf(a + h * static_cast<double>(i));
  auto cdf = [&](double x) {
    double s = 0.0;
    for (std::size_t k = 0; k < truth.means.size(); ++k)
      s += truth.weights[k] * 0.5 * std::erfc(-(x - truth.means[k]) / (truth.sds[k] * std::numbers::sqrt2));
    return s;
  };
  auto golden = [&](double lo, double hi, bool maximize) {
    const double g = 0.5 * (std::sqrt(5.0) - 1.0);
    auto val = [&](double x) { return maximize ? truth.pdf(x) : -truth.pdf(x); };
    double c = hi - g * (hi - lo), d = lo + g * (hi - lo);
    for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
      if (val(c) > val(d)) {
        hi = d;
      } else {
        lo = c;
      }
      c = hi - g * (hi - lo);
      d = lo + g * (hi - lo);
    }
    return 0.5 * (lo + hi);
  };
  std::vector<double> modes, minima;
  for (std::size_t i = 1; i < G; ++i) {
    const double x = a + h * static_cast<double>(i);
    if (f[i] > f[i - 1] && f[i] >= f[i + 1]) modes.push_back(golden(x - h, x + h, true));
    if (f[i] < f[i - 1] && f[i] <= f[i + 1]) minima.push_back(golden(x - h, x + h, false));
  }
  std::vector<std::pair<double, double>> mq;  // (mode, basin mass)
  for (double m : modes) {
    double lo = -std::numeric_limits<double>::infinity(), hi = -lo;
    for (double v : minima) {
      if (v < m) lo = std::max(lo, v);
      if (v > m) hi = std::min(hi, v);
    }
    mq.emplace_back(m, (std::isfinite(hi) ? cdf(hi) : 1.0) - (std::isfinite(lo) ? cdf(lo) : 0.0));
  }
  std::stable_sort(mq.begin(), mq.end(),
                   [&](const auto& x, const auto& y) { return truth.pdf(x.first) > truth.pdf(y.first); });
  TruthModes out;
  for (const auto& [m, q] : mq) {
    out.modes.push_back(m);
    out.q.push_back(q);
  }
  return out;
}

struct PopulationTruth {
  MaximaRegistry registry;
  BasinProbabilities q;
  PrecisionSet precision;
  std::vector<double> tau;  // tau(m_l)
  std::optional<double> q_em;
  std::optional<TruthModes> modes;
  std::optional<PrecisionSet> mode_precision;
};

/// Precision set for a configured delta, or for delta = (1 - q1)^M (a
/// single member) when none is configured.
inline PrecisionSet configured_precision_set(const BasinProbabilities& q, std::size_t M,
                                             std::optional<double> delta) {
  if (delta) return precision_set(std::span<const double>(q.q), M, *delta);
  PrecisionSet ps;
  ps.M = M;
  ps.delta = miss_probability(q.q.at(0), M);
  ps.N = 1;
  CompensatedSum Q;
  for (double v : q.q) {
    Q.add(v);
    ps.cumulative.push_back(Q.result());
  }
  ps.members = {0};
  return ps;
}

inline bool uses(const ExperimentConfig& c, const std::string& m) {
  return std::find(c.methods.begin(), c.methods.end(), m) != c.methods.end();
}

inline Initializer population_initializer(const ExperimentConfig& cfg, const Fixture& fx) {
  if (cfg.init.kind == "uniform" || cfg.init.kind == "point") return make_initializer(cfg.init, fx, nullptr);
  const Dataset ref = simulate(fx.truth, kReferenceSampleSize, stream_seed(cfg.seed, streams::simulate, ~0ULL));
  return make_initializer(cfg.init, fx, &ref);
}

inline PopulationTruth compute_population_truth(const ExperimentConfig& cfg, const Fixture& fx, unsigned threads = 1) {
  PopulationTruth pt;
  const auto pop = population_surface(fx.fit, fx.truth);
  const Initializer init = population_initializer(cfg, fx);
  RegistryOptions ro;
  ro.threads = threads;
  pt.registry = build_registry(pop, init, cfg.probes, cfg.ascent, stream_seed(cfg.seed, streams::registry), ro);
  pt.q = estimate_q(pop, pt.registry, init, cfg.R, cfg.ascent, stream_seed(cfg.seed, streams::estimate_q), threads);
  pt.precision = configured_precision_set(pt.q, cfg.M, cfg.delta);
  const auto tau = TauFunctional::coordinate(cfg.tau_coordinate, fx.fit.dim());
  for (const auto& m : pt.registry.maxima()) pt.tau.push_back(tau(m.location));

  if (uses(cfg, "em-normal")) {
    // Fraction of population EM runs from Pi that end at the top maximum.
    std::vector<std::uint8_t> hit(cfg.em_R, 0);
    parallel_for(cfg.em_R, threads, [&](std::size_t r) {
      Rng rng = make_rng(stream_seed(cfg.seed, streams::estimate_q, 1), streams::estimate_q, r);
      try {
        const EMRun run = em_run(pop, init.draw(rng), cfg.em);
        const auto l = pt.registry.nearest(run.terminal.theta);
        hit[r] = l && *l == 0 ? 1 : 0;
      } catch (const Error&) {
      }
    });
    pt.q_em = static_cast<double>(std::accumulate(hit.begin(), hit.end(), std::size_t{0})) /
              static_cast<double>(cfg.em_R);
  }
  if (uses(cfg, "mode-ball")) {
    pt.modes = truth_modes(fx.truth);
    BasinProbabilities mq;
    mq.q = pt.modes->q;
    pt.mode_precision = configured_precision_set(mq, cfg.n, cfg.delta);
  }
  return pt;
}

// ---------------------------------------------------------------------------
// Coverage report
// ---------------------------------------------------------------------------

struct TrialRecord {
  std::size_t trial = 0;
  std::string method;
  bool hit_precision = false;
  bool hit_mle = false;
  bool failed = false;
  std::string error;
  bool operator==(const TrialRecord&) const = default;
};

struct MethodCoverage {
  std::string method;
  std::size_t trials = 0;
  std::size_t hits_precision = 0;
  std::size_t hits_mle = 0;
  std::size_t failures = 0;
  double rate_precision = 0.0, se_precision = 0.0, target_precision = 0.0;
  double rate_mle = 0.0, se_mle = 0.0, target_mle = 0.0;
  bool pass_precision = false, pass_mle = false;
  bool operator==(const MethodCoverage&) const = default;
};

struct PopulationSummary {
  std::vector<std::vector<double>> maxima;
  std::vector<double> values;
  std::vector<double> tau;
  std::vector<double> q;
  std::vector<double> q_se;
  std::size_t unclassified = 0;
  std::size_t N = 1;
  double delta = 0.0;
  bool saturated = false;
  std::optional<double> q_em;
  std::vector<double> modes;
  std::vector<double> mode_q;
  bool operator==(const PopulationSummary&) const = default;
};

struct CoverageReport {
  json config;
  PopulationSummary population;
  std::vector<MethodCoverage> methods;
  UncertaintyLedger ledger;
  bool ledger_measured = false;
  std::string region_certification;
  std::vector<TrialRecord> trials;

  bool pass() const {
    return std::all_of(methods.begin(), methods.end(),
                       [](const MethodCoverage& m) { return m.pass_precision && m.pass_mle; });
  }
  const MethodCoverage* method(const std::string& name) const {
    for (const auto& m : methods)
      if (m.method == name) return &m;
    return nullptr;
  }
  bool operator==(const CoverageReport& o) const {
    return config == o.config && population == o.population && methods == o.methods &&
           ledger_equal(ledger, o.ledger) && ledger_measured == o.ledger_measured &&
           region_certification == o.region_certification && trials == o.trials;
  }

  static bool ledger_equal(const UncertaintyLedger& a, const UncertaintyLedger& b) {
    return a.eps1 == b.eps1 && a.eps2 == b.eps2 && a.gap_resolution == b.gap_resolution && a.eps3 == b.eps3 &&
           a.basin_gaps == b.basin_gaps && a.radii == b.radii && a.tube_mass == b.tube_mass &&
           a.draws == b.draws && a.init_loss == b.init_loss;
  }
};

/// Binomial standard error at the target rate t over T trials.
inline double target_se(double target, std::size_t T) {
  const double t = std::clamp(target, 0.0, 1.0);
  return std::sqrt(t * (1.0 - t) / static_cast<double>(T));
}

/// rate >= target - 3 SE.
inline bool coverage_pass(double rate, double target, std::size_t T) {
  return rate >= target - 3.0 * target_se(target, T);
}

inline void to_json(json& j, const UncertaintyLedger& l) {
  j = json{{"eps1", l.eps1},           {"eps2", l.eps2},   {"gap_resolution", l.gap_resolution},
           {"eps3", l.eps3},           {"basin_gaps", l.basin_gaps}, {"radii", l.radii},
           {"tube_mass", l.tube_mass}, {"draws", l.draws}, {"init_loss", l.init_loss}};
}
inline void from_json(const json& j, UncertaintyLedger& l) {
  j.at("eps1").get_to(l.eps1);
  j.at("eps2").get_to(l.eps2);
  j.at("gap_resolution").get_to(l.gap_resolution);
  j.at("eps3").get_to(l.eps3);
  j.at("basin_gaps").get_to(l.basin_gaps);
  j.at("radii").get_to(l.radii);
  j.at("tube_mass").get_to(l.tube_mass);
  j.at("draws").get_to(l.draws);
  j.at("init_loss").get_to(l.init_loss);
}

inline void to_json(json& j, const TrialRecord& t) {
  j = json{{"trial", t.trial},   {"method", t.method}, {"hit_precision", t.hit_precision},
           {"hit_mle", t.hit_mle}, {"failed", t.failed}, {"error", t.error}};
}
inline void from_json(const json& j, TrialRecord& t) {
  j.at("trial").get_to(t.trial);
  j.at("method").get_to(t.method);
  j.at("hit_precision").get_to(t.hit_precision);
  j.at("hit_mle").get_to(t.hit_mle);
  j.at("failed").get_to(t.failed);
  j.at("error").get_to(t.error);
}

inline void to_json(json& j, const MethodCoverage& m) {
  j = json{{"method", m.method},
           {"trials", m.trials},
           {"failures", m.failures},
           {"precision_set",
            {{"hits", m.hits_precision},
             {"rate", m.rate_precision},
             {"se", m.se_precision},
             {"target", m.target_precision},
             {"pass", m.pass_precision}}},
           {"mle",
            {{"hits", m.hits_mle},
             {"rate", m.rate_mle},
             {"se", m.se_mle},
             {"target", m.target_mle},
             {"pass", m.pass_mle}}}};
}
inline void from_json(const json& j, MethodCoverage& m) {
  j.at("method").get_to(m.method);
  j.at("trials").get_to(m.trials);
  j.at("failures").get_to(m.failures);
  const json& p = j.at("precision_set");
  p.at("hits").get_to(m.hits_precision);
  p.at("rate").get_to(m.rate_precision);
  p.at("se").get_to(m.se_precision);
  p.at("target").get_to(m.target_precision);
  p.at("pass").get_to(m.pass_precision);
  const json& e = j.at("mle");
  e.at("hits").get_to(m.hits_mle);
  e.at("rate").get_to(m.rate_mle);
  e.at("se").get_to(m.se_mle);
  e.at("target").get_to(m.target_mle);
  e.at("pass").get_to(m.pass_mle);
}

inline void to_json(json& j, const PopulationSummary& p) {
  j = json{{"maxima", p.maxima}, {"values", p.values}, {"tau", p.tau},         {"q", p.q},
           {"q_se", p.q_se},     {"unclassified", p.unclassified}, {"N", p.N}, {"delta", p.delta},
           {"saturated", p.saturated}, {"modes", p.modes}, {"mode_q", p.mode_q}};
  j["q_em"] = p.q_em ? json(*p.q_em) : json(nullptr);
}
inline void from_json(const json& j, PopulationSummary& p) {
  j.at("maxima").get_to(p.maxima);
  j.at("values").get_to(p.values);
  j.at("tau").get_to(p.tau);
  j.at("q").get_to(p.q);
  j.at("q_se").get_to(p.q_se);
  j.at("unclassified").get_to(p.unclassified);
  j.at("N").get_to(p.N);
  j.at("delta").get_to(p.delta);
  j.at("saturated").get_to(p.saturated);
  j.at("modes").get_to(p.modes);
  j.at("mode_q").get_to(p.mode_q);
  p.q_em = j.at("q_em").is_null() ? std::nullopt : std::optional<double>(j.at("q_em").get<double>());
}

inline void to_json(json& j, const CoverageReport& r) {
  j = json{{"config", r.config},
           {"population", r.population},
           {"methods", r.methods},
           {"ledger_measured", r.ledger_measured},
           {"region_certification", r.region_certification},
           {"pass", r.pass()},
           {"trials", r.trials}};
  j["ledger"] = r.ledger_measured ? json(r.ledger) : json(nullptr);
}
inline void from_json(const json& j, CoverageReport& r) {
  r.config = j.at("config");
  j.at("population").get_to(r.population);
  j.at("methods").get_to(r.methods);
  j.at("ledger_measured").get_to(r.ledger_measured);
  j.at("region_certification").get_to(r.region_certification);
  j.at("trials").get_to(r.trials);
  r.ledger = r.ledger_measured ? j.at("ledger").get<UncertaintyLedger>() : UncertaintyLedger{};
}

// ---------------------------------------------------------------------------
// Trials
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<TrialRecord> run_trial(const ExperimentConfig& cfg, const Fixture& fx, const PopulationTruth& pt,
                                          std::size_t i) {
  const std::uint64_t seed = stream_seed(cfg.seed, streams::trial, i);
  const auto data = std::make_shared<const Dataset>(simulate(fx.truth, cfg.n, stream_seed(seed, streams::simulate)));
  const MixtureSurface s(fx.fit, data);
  const double n = static_cast<double>(cfg.n);
  const auto tau = TauFunctional::coordinate(cfg.tau_coordinate, fx.fit.dim());
  const auto& top = pt.registry[0].location;
  const auto& members = pt.precision.members;

  auto interval_hits = [&](const ConfidenceInterval& ci, TrialRecord& r) {
    r.hit_mle = ci.contains(pt.tau[0]);
    r.hit_precision = std::any_of(members.begin(), members.end(), [&](std::size_t l) { return ci.contains(pt.tau[l]); });
  };
  auto region_hits = [&](const ConfidenceRegion& reg, TrialRecord& r) {
    r.hit_mle = reg.contains(top);
    r.hit_precision = std::any_of(members.begin(), members.end(),
                                  [&](std::size_t l) { return reg.contains(pt.registry[l].location); });
  };

  std::optional<Initializer> init;
  std::string init_error;
  try {
    init = make_initializer(cfg.init, fx, data.get());
  } catch (const Error& e) {
    init_error = e.what();
  }

  // Lazily shared pieces of the likelihood pipeline.
  std::optional<Vector> theta;
  std::optional<SandwichCovariance> cov;
  auto estimate = [&]() -> const Vector& {
    if (!theta) {
      if (!init) throw ConfigError(init_error);
      theta = multistart(s, *init, cfg.M, cfg.ascent, stream_seed(seed, streams::multistart)).estimator;
    }
    return *theta;
  };
  auto covariance = [&]() -> const SandwichCovariance& {
    if (!cov) cov = sandwich_cov(s, estimate(), parse_covariance(cfg.covariance));
    return *cov;
  };

  std::vector<TrialRecord> out;
  for (const auto& method : cfg.methods) {
    TrialRecord r;
    r.trial = i;
    r.method = method;
    try {
      if (method == "normal") {
        interval_hits(normal_ci(estimate(), covariance(), tau, n, cfg.alpha), r);
      } else if (method == "wald") {
        region_hits(wald_region(s.domain(), estimate(), covariance(), n, cfg.alpha), r);
      } else if (method == "lrt") {
        region_hits(lrt_region(s, estimate(), n, cfg.alpha), r);
      } else if (method == "score") {
        region_hits(score_region(s, n, cfg.alpha, parse_information(cfg.score_information)), r);
      } else if (method == "bootstrap") {
        interval_hits(bootstrap_ci(s, estimate(), tau, cfg.B, cfg.alpha, cfg.ascent, stream_seed(seed, streams::bootstrap)).ci, r);
      } else if (method == "em-normal") {
        if (!init) throw ConfigError(init_error);
        const auto em = em_multistart(s, *init, cfg.M, cfg.em, stream_seed(seed, streams::multistart));
        interval_hits(em_normal_ci(s, em.estimator, tau, cfg.alpha, parse_covariance(cfg.covariance)), r);
      } else if (method == "mode-ball") {
        const KDE kde(data, bandwidth_rule(*data, parse_bandwidth(cfg.bandwidth)));
        const auto mode = mode_estimate(kde, stream_seed(seed, streams::mode_starts), cfg.meanshift);
        const auto ball = mode_bootstrap_ci(kde, mode.best.location, cfg.B, cfg.alpha,
                                            stream_seed(seed, streams::bootstrap), cfg.meanshift);
        const auto& modes = pt.modes->modes;
        r.hit_mle = ball.contains(vec({modes[0]}));
        r.hit_precision = std::any_of(pt.mode_precision->members.begin(), pt.mode_precision->members.end(),
                                      [&](std::size_t l) { return ball.contains(vec({modes[l]})); });
      }
    } catch (const Error& e) {
      r.failed = true;
      r.hit_mle = r.hit_precision = false;
      r.error = e.what();
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace detail

/// Ledger of grid-measured gaps for the first trial's sample surface
/// against the population surface.
inline UncertaintyLedger measure_ledger(const ExperimentConfig& cfg, const Fixture& fx, const PopulationTruth& pt,
                                        unsigned threads = 1) {
  UncertaintyLedger led;
  const auto pop = population_surface(fx.fit, fx.truth);
  const std::uint64_t seed = stream_seed(cfg.seed, streams::trial, 0);
  const Dataset data = simulate(fx.truth, cfg.n, stream_seed(seed, streams::simulate));
  const MixtureSurface s(fx.fit, data);
  measure_gaps(pop, s, Grid(pop.domain(), cfg.diagnostics.gap_grid), led, threads);
  const BasinMap basins = map_basins(pop, pt.registry, cfg.diagnostics.basin_grid, cfg.ascent, threads);
  measure_basin_gaps(basins, pt.registry.size(), make_initializer(cfg.init, fx, &data), population_initializer(cfg, fx),
                     cfg.diagnostics.R, stream_seed(cfg.seed, streams::basin_gaps), default_tube_radii(pop.domain()),
                     led);
  led.init_loss = initialization_loss(pt.q.q[0], cfg.M);
  return led;
}

inline CoverageReport run_coverage(const ExperimentConfig& cfg, unsigned threads = 1) {
  cfg.validate();
  const Fixture fx = make_fixture(cfg.fixture);
  const PopulationTruth pt = compute_population_truth(cfg, fx, threads);

  std::vector<std::vector<TrialRecord>> per(cfg.trials);
  parallel_for(cfg.trials, threads, [&](std::size_t i) { per[i] = detail::run_trial(cfg, fx, pt, i); });

  CoverageReport rep;
  rep.config = cfg;
  auto& ps = rep.population;
  for (const auto& m : pt.registry.maxima()) {
    ps.maxima.emplace_back(m.location.begin(), m.location.end());
    ps.values.push_back(m.value);
  }
  ps.tau = pt.tau;
  ps.q = pt.q.q;
  ps.q_se = pt.q.se;
  ps.unclassified = pt.q.unclassified;
  ps.N = pt.precision.N;
  ps.delta = pt.precision.delta;
  ps.saturated = pt.precision.saturated;
  ps.q_em = pt.q_em;
  if (pt.modes) {
    ps.modes = pt.modes->modes;
    ps.mode_q = pt.modes->q;
  }
  rep.region_certification =
      "regions are scored by exact membership of the registered population maxima (no grid); "
      "intervals by membership of tau(m_l)";

  const double T = static_cast<double>(cfg.trials);
  for (const auto& method : cfg.methods) {
    MethodCoverage mc;
    mc.method = method;
    mc.trials = cfg.trials;
    for (const auto& recs : per)
      for (const auto& r : recs)
        if (r.method == method) {
          mc.hits_precision += r.hit_precision;
          mc.hits_mle += r.hit_mle;
          mc.failures += r.failed;
        }
    const double a = cfg.alpha;
    if (method == "mode-ball") {
      mc.target_precision = 1.0 - a - pt.mode_precision->delta;
      mc.target_mle = 1.0 - a - miss_probability(pt.modes->q[0], cfg.n);
    } else {
      mc.target_precision = 1.0 - a - pt.precision.delta;
      const double q1 = method == "em-normal" ? pt.q_em.value_or(0.0) : pt.q.q[0];
      mc.target_mle = 1.0 - a - miss_probability(q1, cfg.M);
    }
    mc.rate_precision = static_cast<double>(mc.hits_precision) / T;
    mc.rate_mle = static_cast<double>(mc.hits_mle) / T;
    mc.se_precision = target_se(mc.target_precision, cfg.trials);
    mc.se_mle = target_se(mc.target_mle, cfg.trials);
    mc.pass_precision = coverage_pass(mc.rate_precision, mc.target_precision, cfg.trials);
    mc.pass_mle = coverage_pass(mc.rate_mle, mc.target_mle, cfg.trials);
    rep.methods.push_back(mc);
  }
  for (auto& recs : per)
    for (auto& r : recs) rep.trials.push_back(std::move(r));

  if (cfg.diagnostics.enabled) {
    rep.ledger = measure_ledger(cfg, fx, pt, threads);
    rep.ledger_measured = true;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

inline std::ofstream open_output(const std::string& path) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(p.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IOError("cannot write " + path);
  out << std::setprecision(17);
  return out;
}

inline void write_json(const json& j, const std::string& path) {
  auto out = open_output(path);
  out << j.dump(2) << '\n';
  if (!out) throw IOError("write failed for " + path);
}

/// Columns x0..x{d-1},label; cells in flat order.
inline void write_basin_csv(const BasinMap& map, const std::string& path) {
  auto out = open_output(path);
  for (std::size_t j = 0; j < map.grid.dim(); ++j) out << 'x' << j << ',';
  out << "label\n";
  for (std::size_t c = 0; c < map.grid.cells(); ++c) {
    const Vector x = map.grid.center(c);
    for (Eigen::Index j = 0; j < x.size(); ++j) out << x[j] << ',';
    out << map.labels[c] << '\n';
  }
}

/// Columns x0..x{d-1},member; -1 marks singular cells.
inline void write_region_csv(const RegionExtraction& ex, const std::string& path) {
  auto out = open_output(path);
  for (std::size_t j = 0; j < ex.grid.dim(); ++j) out << 'x' << j << ',';
  out << "member\n";
  for (std::size_t c = 0; c < ex.grid.cells(); ++c) {
    const Vector x = ex.grid.center(c);
    for (Eigen::Index j = 0; j < x.size(); ++j) out << x[j] << ',';
    out << static_cast<int>(ex.member[c]) << '\n';
  }
}

struct Trajectory {
  std::vector<Vector> points;
  std::vector<double> values;
};

/// Columns run,iteration,value,theta0..theta{d-1}. An empty list writes the
/// header only.
inline void write_trajectories_csv(const std::vector<Trajectory>& runs, const std::string& path) {
  auto out = open_output(path);
  std::size_t d = 0;
  for (const auto& t : runs)
    if (!t.points.empty()) d = static_cast<std::size_t>(t.points.front().size());
  out << "run,iteration,value";
  for (std::size_t j = 0; j < d; ++j) out << ",theta" << j;
  out << '\n';
  for (std::size_t r = 0; r < runs.size(); ++r)
    for (std::size_t i = 0; i < runs[r].points.size(); ++i) {
      out << r << ',' << i << ',' << runs[r].values[i];
      for (Eigen::Index j = 0; j < runs[r].points[i].size(); ++j) out << ',' << runs[r].points[i][j];
      out << '\n';
    }
}

/// One row per (method, target).
inline void write_report_csv(const CoverageReport& rep, const std::string& path) {
  auto out = open_output(path);
  out << "method,target,hits,trials,rate,se,target_rate,pass\n";
  for (const auto& m : rep.methods) {
    out << m.method << ",precision_set," << m.hits_precision << ',' << m.trials << ',' << m.rate_precision << ','
        << m.se_precision << ',' << m.target_precision << ',' << (m.pass_precision ? 1 : 0) << '\n';
    out << m.method << ",mle," << m.hits_mle << ',' << m.trials << ',' << m.rate_mle << ',' << m.se_mle << ','
        << m.target_mle << ',' << (m.pass_mle ? 1 : 0) << '\n';
  }
}

inline json registry_json(const MaximaRegistry& reg) {
  json arr = json::array();
  for (const auto& m : reg.maxima())
    arr.push_back({{"location", std::vector<double>(m.location.begin(), m.location.end())}, {"value", m.value}});
  return json{{"merge_radius", reg.merge_radius()}, {"maxima", arr}};
}

}  // namespace lopt

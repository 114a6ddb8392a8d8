#include "lopt/lopt.hpp"
#include "oracles.hpp"

#include <catch_amalgamated.hpp>

using namespace lopt;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

using Surface = SampleSurface<GaussianMixtureModel>;

Surface normal_surface(std::vector<double> xs) { return Surface(fixtures::normal_mean(), Dataset::scalar(std::move(xs))); }

double mean_of(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

}  // namespace

TEST_CASE("chi-square quantiles", "[infer][chisq]") {
  CHECK_THAT(chisq_quantile(1, 0.95), WithinAbs(3.841459, 1e-6));
  CHECK_THAT(chisq_quantile(1, 0.95), WithinAbs(std::pow(oracle::normal_quantile(0.975), 2), 1e-9));
  CHECK_THAT(chisq_quantile(2, 1.0 - std::exp(-2.0)), WithinAbs(4.0, 1e-9));
  for (std::size_t d = 1; d <= 6; ++d)
    for (double p : {0.001, 0.05, 0.5, 0.9, 0.95, 0.99, 0.999999}) {
      CHECK_THAT(chisq_quantile(d, p), WithinAbs(oracle::chisq_quantile(static_cast<double>(d), p), 1e-9));
      CHECK(chisq_quantile(d, p) < chisq_quantile(d + 1, p));
      CHECK(chisq_quantile(d, p) < chisq_quantile(d, std::min(p + 1e-4, 0.9999999)));
    }
}

TEST_CASE("tau functionals", "[infer][tau]") {
  const auto t = TauFunctional::coordinate(1, 2);
  CHECK(t(vec({3.0, 4.0})) == 4.0);
  CHECK(t.gradient(vec({3.0, 4.0})) == vec({0.0, 1.0}));
  TauFunctional ratio{[](const Vector& x) { return x[0] * std::exp(x[1]); }, {}, "ratio"};
  const Vector x = vec({0.7, -0.3});
  const Vector exact = vec({std::exp(-0.3), 0.7 * std::exp(-0.3)});
  CHECK(sup_norm(ratio.gradient(x) - exact) <= 1e-5 * sup_norm(exact));
}

TEST_CASE("sandwich covariance", "[infer][sandwich]") {
  SECTION("three points") {
    const std::vector<double> xs{1.0, 2.0, 6.0};
    const double m = mean_of(xs);
    double v = 0.0;
    for (double x : xs) v += (x - m) * (x - m) / 3.0;
    const auto cov = sandwich_cov(normal_surface(xs), vec({m}));
    CHECK_THAT(cov.matrix(0, 0), WithinRel(v, 1e-12));
    CHECK_THAT(cov.hessian(0, 0), WithinAbs(-1.0, 1e-12));
  }
  SECTION("information equality on a well-specified mixture") {
    const GaussianMixture1D truth{{0.6, 0.4}, {0.0, 1.5}, {0.2, 0.2}};
    const Dataset d = simulate(truth, 10000, 12);
    const Surface s(fixtures::figure1_fit(), d);
    const AscentResult fit = ascend(s, vec({1.5, 0.4}));
    REQUIRE(fit.converged);
    const auto sw = sandwich_cov(s, fit.convergent);
    const auto oi = sandwich_cov(s, fit.convergent, CovarianceKind::observed_information);
    CHECK((sw.matrix - oi.matrix).norm() <= 0.05 * oi.matrix.norm());
    CHECK(max_norm(sw.matrix - sw.matrix.transpose()) <= 1e-10);
    CHECK(symmetric_eigenvalues(sw.matrix).minCoeff() >= -1e-10);
  }
  SECTION("singular Hessian") {
    // All data at 0 and mu2 = 0: the weight no longer moves the density.
    const Surface s(fixtures::figure1_fit(), Dataset::scalar({0.0, 0.0, 0.0}));
    try {
      sandwich_cov(s, vec({0.0, 0.5}));
      FAIL("expected a conditioning error");
    } catch (const ConditioningError& e) {
      CHECK(std::string(e.what()).find("eigenvalues") != std::string::npos);
    }
  }
}

TEST_CASE("normal intervals", "[infer][normal]") {
  SandwichCovariance unit;
  unit.matrix = Matrix::Identity(1, 1);
  const auto tau = TauFunctional::coordinate(0, 1);
  SECTION("zero variance") {
    SandwichCovariance zero;
    zero.matrix = Matrix::Zero(1, 1);
    const auto ci = normal_ci(vec({0.3}), zero, tau, 10.0, 0.05);
    CHECK(ci.lo == 0.3);
    CHECK(ci.hi == 0.3);
  }
  SECTION("n = 100, unit variance") {
    const auto ci = normal_ci(vec({0.0}), unit, tau, 100.0, 0.05);
    CHECK_THAT(0.5 * ci.width(), WithinAbs(oracle::normal_quantile(0.975) / 10.0, 1e-12));
    CHECK_THAT(0.5 * ci.width(), WithinAbs(0.1959964, 1e-7));
    CHECK(ci.level == 0.95);
  }
  SECTION("one sigma") {
    const auto ci = normal_ci(vec({0.0}), unit, tau, 100.0, 0.32);
    CHECK_THAT(0.5 * ci.width(), WithinRel(0.1, 0.01));
  }
  SECTION("bad alpha and variance") {
    CHECK_THROWS_AS(normal_ci(vec({0.0}), unit, tau, 100.0, 0.0), ConfigError);
    SandwichCovariance bad;
    bad.matrix = Matrix::Constant(1, 1, std::nan(""));
    CHECK_THROWS_AS(normal_ci(vec({0.0}), bad, tau, 100.0, 0.05), PropagationError);
  }
}

TEST_CASE("likelihood ratio regions", "[infer][lrt]") {
  const Dataset d = simulate(fixtures::figure1_truth(), 300, 2);
  const Surface s(fixtures::figure1_fit(), d);
  const auto o = multistart(s, Initializer::uniform(s.domain()), 8, {}, 4);
  const auto region = lrt_region(s, o.estimator, 300.0, 0.05);
  CHECK(region.contains(o.estimator));
  CHECK_THAT(*region.statistic(o.estimator), WithinAbs(0.0, 1e-12));

  SECTION("higher likelihood is always a member") {
    const Vector low = vec({0.2, 0.9});
    const auto lower = lrt_region(s, low, 300.0, 0.05);
    for (const auto& r : o.runs) CHECK(lower.contains(r.convergent));
  }
  SECTION("likelihood monotone") {
    Rng rng(6);
    const Initializer u = Initializer::uniform(s.domain());
    for (int k = 0; k < 200; ++k) {
      const Vector a = u.draw(rng), b = u.draw(rng);
      if (region.contains(a) && value(s, b) >= value(s, a)) CHECK(region.contains(b));
    }
  }
  SECTION("a larger estimator value shrinks the extraction") {
    const Vector worse = vec({2.0, 0.3});
    auto small = lrt_region(s, o.estimator, 300.0, 0.05);
    auto big = lrt_region(s, worse, 300.0, 0.05);
    REQUIRE(value(s, o.estimator) >= value(s, worse));
    const auto& es = small.extract(60);
    const auto& eb = big.extract(60);
    for (std::size_t c = 0; c < es.member.size(); ++c)
      if (es.member[c]) CHECK(eb.member[c]);
  }
}

TEST_CASE("likelihood ratio region covers both wells when they nearly tie", "[infer][lrt]") {
  const double n = 500.0, zeta = chisq_quantile(2, 0.95);
  const Initializer init = Initializer::uniform(fixtures::figure1_fit().domain(), Box(vec({0.0, 0.01}), vec({4.0, 0.99})));
  // Search seeds for a sample whose two local maxima differ by less than zeta / 2n.
  for (std::uint64_t seed = 1; seed < 200; ++seed) {
    const Surface s(fixtures::figure1_fit(), simulate(fixtures::figure1_truth(), 500, seed));
    RegistryOptions ro;
    ro.grid_per_axis = 0;
    const MaximaRegistry reg = build_registry(s, init, 6, {}, seed, ro);
    if (reg.size() != 2 || reg[0].value - reg[1].value >= zeta / (2.0 * n)) continue;
    auto region = lrt_region(s, reg[1].location, n, 0.05);
    const auto& ex = region.extract(200);
    for (std::size_t l = 0; l < 2; ++l) {
      const auto cell = ex.grid.locate(reg[l].location);
      REQUIRE(cell);
      CHECK(region.contains(reg[l].location));
      CHECK(ex.member[*cell] == 1);
    }
    const auto img = tau_image(region, TauFunctional::coordinate(0, 2));
    CHECK(img.segments.size() >= 2);
    return;
  }
  FAIL("no near-tie sample found");
}

TEST_CASE("score regions", "[infer][score]") {
  SECTION("critical points are members") {
    const Dataset d = simulate(fixtures::figure1_truth(), 300, 8);
    const Surface s(fixtures::figure1_fit(), d);
    const MaximaRegistry reg = build_registry(s, Initializer::uniform(s.domain()), 16, {}, 2);
    auto region = score_region(s, 300.0, 0.05);
    const auto& ex = region.extract(100);
    for (const auto& m : reg.maxima()) {
      CHECK(region.contains(m.location));
      const auto cell = ex.grid.locate(m.location);
      REQUIRE(cell);
      // Some neighbouring cell (or the cell itself) is a member.
      const auto idx = ex.grid.unflatten(*cell);
      bool any = false;
      for (int di = -1; di <= 1; ++di)
        for (int dj = -1; dj <= 1; ++dj) {
          const long i = static_cast<long>(idx[0]) + di, j = static_cast<long>(idx[1]) + dj;
          if (i < 0 || j < 0 || i >= 100 || j >= 100) continue;
          any = any || ex.member[ex.grid.flatten({static_cast<std::size_t>(i), static_cast<std::size_t>(j)})];
        }
      CHECK(any);
    }
  }
  SECTION("normal location closed form") {
    const Dataset d = simulate(fixtures::standard_normal(), 200, 5);
    const Surface s(fixtures::normal_mean(-1.0, 1.0), d);
    double m = 0.0, v = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) m += d.row(i)[0] / 200.0;
    for (std::size_t i = 0; i < d.size(); ++i) v += std::pow(d.row(i)[0] - m, 2) / 200.0;
    const double zeta = chisq_quantile(1, 0.95), half = std::sqrt(zeta * v / 200.0);
    auto region = score_region(s, 200.0, 0.05, InformationKind::centered_outer);
    // Away from the closed-form boundary the predicate agrees exactly.
    for (double t = -1.0; t <= 1.0; t += 0.001) {
      if (std::abs(std::abs(t - m) - half) < 1e-6) continue;
      CHECK(region.contains(vec({t})) == (std::abs(t - m) <= half));
    }
    region.extract(2000);
    const auto img = tau_image(region, TauFunctional::coordinate(0, 1));
    CHECK_THAT(img.lo, WithinAbs(m - half, 1e-3));
    CHECK_THAT(img.hi, WithinAbs(m + half, 1e-3));
    // Observed information is 1 for this model.
    auto observed = score_region(s, 200.0, 0.05);
    CHECK_THAT(*observed.statistic(vec({0.1})), WithinAbs(200.0 * std::pow(m - 0.1, 2), 1e-9));
  }
  SECTION("singular cells are excluded and counted") {
    const Surface s(fixtures::figure1_fit(-1.0, 1.0), Dataset::scalar({0.0, 0.0, 0.0}));
    auto region = score_region(s, 3.0, 0.05);
    CHECK_FALSE(region.statistic(vec({0.0, 0.5})));
    CHECK_FALSE(region.contains(vec({0.0, 0.5})));
    // The middle column of a 3 x 3 grid sits on mu2 = 0.
    const auto& ex = region.extract(Grid(Box(vec({-1.0, 0.2}), vec({1.0, 0.8})), 3));
    CHECK(ex.excluded_singular == 3);
    CHECK_THAT(ex.excluded_fraction(), WithinAbs(1.0 / 3.0, 1e-12));
  }
}

TEST_CASE("Wald regions", "[infer][wald]") {
  const std::vector<double> xs{0.3, -0.2, 1.1, 0.4, 0.9, -0.5, 0.2};
  const Surface s = normal_surface(xs);
  const Vector th = vec({mean_of(xs)});
  const auto cov = sandwich_cov(s, th);
  const double n = static_cast<double>(xs.size());
  const auto region = wald_region(s.domain(), th, cov, n, 0.05);
  CHECK(region.contains(th));
  CHECK_THAT(region.threshold(), WithinAbs(std::pow(oracle::normal_quantile(0.975), 2), 1e-6));

  SECTION("one-dimensional region equals the normal interval") {
    const auto ci = normal_ci(th, cov, TauFunctional::coordinate(0, 1), n, 0.05);
    CHECK_THAT(*region.statistic(vec({ci.lo})), WithinRel(region.threshold(), 1e-9));
    CHECK_THAT(*region.statistic(vec({ci.hi})), WithinRel(region.threshold(), 1e-9));
    const double eps = 1e-9 * ci.width();
    CHECK(region.contains(vec({ci.lo + eps})));
    CHECK(region.contains(vec({ci.hi - eps})));
    CHECK_FALSE(region.contains(vec({ci.lo - eps})));
    CHECK_FALSE(region.contains(vec({ci.hi + eps})));
  }
  SECTION("boundary is inclusive") {
    const ConfidenceRegion r(RegionMethod::wald, Box(vec({-1.0}), vec({1.0})),
                             [](const Vector&) -> std::optional<double> { return 2.5; }, 2.5, 0.95);
    CHECK(r.contains(vec({0.0})));
  }
  SECTION("singular covariance") {
    SandwichCovariance z;
    z.matrix = Matrix::Zero(1, 1);
    CHECK_THROWS_AS(wald_region(s.domain(), th, z, n, 0.05), ConditioningError);
  }
}

TEST_CASE("tau images", "[infer][tau-image]") {
  SECTION("identity on an interval") {
    ConfidenceRegion r(RegionMethod::wald, Box(vec({-2.0}), vec({2.0})),
                       [](const Vector& t) -> std::optional<double> { return std::abs(t[0] - 0.5); }, 0.75, 0.95);
    r.extract(4000);
    const auto img = tau_image(r, TauFunctional::coordinate(0, 1));
    CHECK_THAT(img.lo, WithinAbs(-0.25, 1e-3));
    CHECK_THAT(img.hi, WithinAbs(1.25, 1e-3));
    CHECK(img.segments.size() == 1);
  }
  SECTION("constant tau") {
    ConfidenceRegion r(RegionMethod::lrt, Box(vec({-2.0, -2.0}), vec({2.0, 2.0})),
                       [](const Vector& t) -> std::optional<double> { return t.squaredNorm(); }, 1.0, 0.95);
    r.extract(50);
    const auto img = tau_image(r, TauFunctional{[](const Vector&) { return 3.5; }, {}, "const"});
    CHECK(img.lo == 3.5);
    CHECK(img.hi == 3.5);
  }
  SECTION("axis-aligned ellipse projects onto its semi-axis") {
    SandwichCovariance cov;
    cov.matrix = Matrix::Zero(2, 2);
    cov.matrix(0, 0) = 4.0;
    cov.matrix(1, 1) = 0.25;
    const Vector c = vec({0.5, -0.25});
    const double n = 50.0;
    auto r = wald_region(Box(vec({-2.0, -2.0}), vec({2.0, 2.0})), c, cov, n, 0.05);
    const auto& ex = r.extract(400);
    const auto img = tau_image(r, TauFunctional::coordinate(0, 2));
    const double r1 = std::sqrt(r.threshold() * 4.0 / n);
    CHECK_THAT(img.lo, WithinAbs(c[0] - r1, ex.grid.step(0)));
    CHECK_THAT(img.hi, WithinAbs(c[0] + r1, ex.grid.step(0)));
  }
  SECTION("empty extraction") {
    ConfidenceRegion r(RegionMethod::lrt, Box(vec({-1.0}), vec({1.0})),
                       [](const Vector&) -> std::optional<double> { return 10.0; }, 1.0, 0.95);
    CHECK_THROWS_AS(tau_image(r, TauFunctional::coordinate(0, 1)), RegionError);
    r.extract(10);
    CHECK_THROWS_AS(tau_image(r, TauFunctional::coordinate(0, 1)), RegionError);
  }
  SECTION("no extraction above two dimensions") {
    ConfidenceRegion r(RegionMethod::lrt, Box(vec({-1.0, -1.0, -1.0}), vec({1.0, 1.0, 1.0})),
                       [](const Vector&) -> std::optional<double> { return 0.0; }, 1.0, 0.95);
    CHECK_THROWS_AS(r.extract(10), RegionError);
    CHECK(r.contains(vec({0.0, 0.0, 0.0})));
  }
}

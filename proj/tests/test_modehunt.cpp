#include "lopt/lopt.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <catch_amalgamated.hpp>

using namespace lopt;
using Catch::Matchers::WithinAbs;

namespace {

// Brute-force argmax of a 1-D density on [lo, hi], refined by nested grids.
double grid_argmax(const KDE& kde, double lo, double hi) {
  double best = lo;
  for (int level = 0; level < 6; ++level) {
    const int N = 2001;
    const double step = (hi - lo) / (N - 1);
    double fbest = -1.0;
    for (int i = 0; i < N; ++i) {
      const double x = lo + step * i;
      const double f = kde(vec({x}));
      if (f > fbest) {
        fbest = f;
        best = x;
      }
    }
    lo = best - 2.0 * step;
    hi = best + 2.0 * step;
  }
  return best;
}

Dataset shifted(const Dataset& d, double v) {
  std::vector<double> xs;
  for (std::size_t i = 0; i < d.size(); ++i) xs.push_back(d.row(i)[0] + v);
  return Dataset::scalar(xs);
}

}  // namespace

TEST_CASE("meanshift step", "[modehunt][meanshift]") {
  CHECK(KDE(Dataset::scalar({2.5}), 0.7).meanshift_step(vec({1.0}))[0] == 2.5);
  CHECK_THAT(KDE(Dataset::scalar({-2.0, -0.5, 0.5, 2.0}), 0.6).meanshift_step(vec({0.0}))[0], WithinAbs(0.0, 1e-15));
  const KDE wide(Dataset::scalar({-1.0, 1.0}), 10.0);
  const double x1 = wide.meanshift_step(vec({0.3}))[0];
  CHECK(std::abs(x1) < 0.3);
  const ModeEstimate m = meanshift_run(wide, vec({0.3}));
  CHECK(m.converged);
  CHECK_THAT(m.location[0], WithinAbs(grid_argmax(wide, -1.0, 1.0), 1e-6));
  CHECK_THAT(m.location[0], WithinAbs(0.0, 1e-6));

  const KDE far(Dataset::scalar({0.0}), 0.01);
  CHECK_THROWS_AS(far.meanshift_step(vec({1000.0})), IsolationError);
  CHECK_THROWS_AS(meanshift_run(far, vec({1000.0})), DomainError);
}

TEST_CASE("meanshift run", "[modehunt][meanshift]") {
  SECTION("unimodal density") {
    const Dataset d = simulate({{1.0}, {1.2}, {0.1}}, 80, 3);
    const KDE kde(d, 1.0);
    const double target = grid_argmax(kde, 0.0, 2.5);
    for (double x0 : {-1.5, 0.0, 1.2, 3.9}) CHECK_THAT(meanshift_run(kde, vec({x0})).location[0], WithinAbs(target, 1e-4));
  }
  SECTION("fixed point returns at once") {
    const KDE kde(Dataset::scalar({-1.0, 1.0}), 0.5);
    const ModeEstimate m = meanshift_run(kde, vec({0.0}));
    CHECK(m.iterations == 1);
    CHECK(m.location[0] == 0.0);
  }
  SECTION("density is non-decreasing along iterates") {
    Rng rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::uint64_t k = 0; k < 100; ++k) {
      const Dataset d = simulate(fixtures::figure1_truth(), 40, 100 + k);
      const KDE kde(d, 0.05 + 0.5 * u(rng));
      const Box box = kde.support_box();
      MeanshiftConfig cfg;
      cfg.keep_trajectory = true;
      const ModeEstimate m = meanshift_run(kde, vec({box.lo[0] + u(rng) * (box.hi[0] - box.lo[0])}), cfg);
      for (std::size_t t = 1; t < m.values.size(); ++t) CHECK(m.values[t] >= m.values[t - 1] * (1.0 - 1e-12));
    }
  }
}

TEST_CASE("kde basics", "[modehunt][kde]") {
  const Dataset d = simulate(fixtures::figure1_truth(), 150, 8);
  for (double h : {0.05, 0.3, 2.0}) {
    const KDE kde(d, h);
    const Box b = kde.support_box();
    const double lo = b.lo[0] - 10.0 * h, hi = b.hi[0] + 10.0 * h;
    const double mass = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
        [&](double x) { return kde(vec({x})); }, lo, hi, 20, 1e-12);
    CHECK_THAT(mass, WithinAbs(1.0, 1e-6));
    for (int i = 0; i <= 50; ++i) CHECK(kde(vec({lo + (hi - lo) * i / 50.0})) >= 0.0);
  }
  CHECK_THROWS_AS(KDE(d, 0.0), ConfigError);
}

TEST_CASE("mode estimate", "[modehunt][mode]") {
  SECTION("a single point") {
    const ModeSearch m = mode_estimate(Dataset::scalar({1.7}), 0.4, 1);
    CHECK(m.best.location[0] == 1.7);
  }
  SECTION("the larger cluster wins") {
    const Dataset d = simulate({{1.0}, {0.0}, {0.3}}, 190, 1).concat(simulate({{1.0}, {5.0}, {0.3}}, 10, 2));
    const KDE kde(d, 0.2);
    const ModeSearch m = mode_estimate(kde, 4);
    CHECK(m.best.converged);
    CHECK_THAT(m.best.location[0], WithinAbs(grid_argmax(kde, -2.0, 7.0), 1e-4));
    CHECK(std::abs(m.best.location[0]) < 1.0);
  }
  SECTION("best over every trajectory") {
    const Dataset d = simulate(fixtures::figure1_truth(), 120, 5);
    const KDE kde(d, 0.25);
    const ModeSearch m = mode_estimate(kde, 9);
    CHECK(m.starts == 120);
    CHECK(m.isolated == 0);
    for (std::size_t i = 0; i < d.size(); ++i)
      CHECK(meanshift_run(kde, d.row_vector(i)).kde_value <= m.best.kde_value * (1.0 + 1e-12));
  }
  SECTION("duplicated data leave the density and the mode unchanged") {
    const Dataset d = simulate(fixtures::figure1_truth(), 100, 6);
    const KDE a(d, 0.3), b(d.concat(d), 0.3);
    for (double x : {-1.0, 0.2, 1.0, 2.9}) CHECK_THAT(b(vec({x})), WithinAbs(a(vec({x})), 1e-14));
    CHECK_THAT(mode_estimate(b, 2).best.location[0], WithinAbs(mode_estimate(a, 2).best.location[0], 1e-6));
  }
  SECTION("translation equivariance") {
    const Dataset d = simulate(fixtures::figure1_truth(), 100, 7);
    const double x0 = mode_estimate(d, 0.3, 12).best.location[0];
    for (double v : {-3.5, 0.25, 10.0}) CHECK_THAT(mode_estimate(shifted(d, v), 0.3, 12).best.location[0], WithinAbs(x0 + v, 1e-6));
  }
  SECTION("thread counts agree") {
    const Dataset d = simulate(fixtures::figure1_truth(), 100, 8);
    CHECK(mode_estimate(d, 0.3, 1, {}, 1).best.location == mode_estimate(d, 0.3, 1, {}, 3).best.location);
  }
}

TEST_CASE("mode bootstrap ball", "[modehunt][ball]") {
  SECTION("identical data give radius zero") {
    const KDE kde(Dataset::scalar(std::vector<double>(30, -0.4)), 0.5);
    const ModeBall ball = mode_bootstrap_ci(kde, vec({-0.4}), 20, 0.05, 1);
    CHECK(ball.radius == 0.0);
    CHECK(ball.contains(vec({-0.4})));
  }
  SECTION("one replicate") {
    const Dataset d = simulate(fixtures::standard_normal(), 60, 3);
    const KDE kde(d, 0.4);
    const Vector c = mode_estimate(kde, 3).best.location;
    const ModeBall ball = mode_bootstrap_ci(kde, c, 1, 0.05, 5);
    REQUIRE(ball.distances.size() == 1);
    const Vector manual = meanshift_run(kde.resampled(bootstrap_indices(60, 5, 0)), c).location;
    CHECK(ball.radius == (manual - c).norm());
  }
  SECTION("radius is an attained distance") {
    const Dataset d = simulate(fixtures::standard_normal(), 200, 4);
    const KDE kde(d, bandwidth_rule(d, BandwidthRule::undersmooth));
    const Vector c = mode_estimate(kde, 1).best.location;
    const ModeBall ball = mode_bootstrap_ci(kde, c, 80, 0.1, 7);
    CHECK(ball.radius >= 0.0);
    CHECK(std::find(ball.distances.begin(), ball.distances.end(), ball.radius) != ball.distances.end());
    CHECK(ball.radius == ball.distances[static_cast<std::size_t>(std::ceil(0.9 * 80)) - 1]);
    BootstrapOptions opt;
    opt.threads = 3;
    CHECK(mode_bootstrap_ci(kde, c, 80, 0.1, 7, {}, opt).distances == ball.distances);
  }
  SECTION("invalid arguments") {
    const KDE kde(Dataset::scalar({0.0, 1.0}), 0.5);
    CHECK_THROWS_AS(mode_bootstrap_ci(kde, vec({0.5}), 0, 0.05, 1), ConfigError);
    CHECK_THROWS_AS(mode_bootstrap_ci(kde, vec({0.5}), 5, 0.0, 1), ConfigError);
  }
}

TEST_CASE("bandwidth rule", "[modehunt][bandwidth]") {
  const Dataset d = simulate(fixtures::standard_normal(), 10000, 2);
  double m = 0.0, ss = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) m += d.row(i)[0] / 1e4;
  for (std::size_t i = 0; i < d.size(); ++i) ss += std::pow(d.row(i)[0] - m, 2);
  const double sd = std::sqrt(ss / 9999.0);
  const double h = bandwidth_rule(d, BandwidthRule::undersmooth);
  CHECK_THAT(h / sd, WithinAbs(0.25700, 1e-5));
  CHECK_THAT(bandwidth_rule(d, BandwidthRule::reference) / sd, WithinAbs(1.06 * std::pow(1e4, -0.2), 1e-12));

  std::vector<double> scaled;
  for (std::size_t i = 0; i < 500; ++i) scaled.push_back(3.0 * d.row(i)[0]);
  const Dataset head = d.subset([] {
    std::vector<std::size_t> idx(500);
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
  }());
  CHECK_THAT(bandwidth_rule(Dataset::scalar(scaled), BandwidthRule::undersmooth),
             WithinAbs(3.0 * bandwidth_rule(head, BandwidthRule::undersmooth), 1e-12));

  for (double dd : {1.0, 2.0, 3.0}) {
    const double e = 1.0 / (dd + 5.5);
    CHECK(1.0 - (dd + 6.0) * e < 0.0);
    CHECK(1.0 - (dd + 4.0) * e > 0.0);
  }
  CHECK_THROWS_AS(bandwidth_rule(Dataset::scalar({1.0, 1.0, 1.0}), BandwidthRule::undersmooth), DegenerateDataError);
  CHECK_THROWS_AS(bandwidth_rule(Dataset::scalar({1.0}), BandwidthRule::reference), DegenerateDataError);
}

#include "lopt/lopt.hpp"
#include "oracles.hpp"

#include <catch_amalgamated.hpp>

#include <sstream>

using namespace lopt;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

std::vector<GaussianMixtureModel> registered_models() {
  return {fixtures::normal_mean(), fixtures::figure1_fit(), fixtures::two_means(0.5, -3.0, 3.0)};
}

Vector random_interior(const Box& b, Rng& rng) {
  std::uniform_real_distribution<double> u(0.05, 0.95);
  Vector x(b.lo.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) x[j] = b.lo[j] + u(rng) * (b.hi[j] - b.lo[j]);
  return x;
}

}  // namespace

TEST_CASE("simulate is reproducible", "[model][simulate]") {
  const GaussianMixture1D one{{1.0}, {0.0}, {0.2}};
  const Dataset a = simulate(one, 4, 99);
  const Dataset b = simulate(one, 4, 99);
  REQUIRE(a.size() == 4);
  CHECK(a == b);
  CHECK_FALSE(a == simulate(one, 4, 100));
}

TEST_CASE("simulated figure 1 moments", "[model][simulate]") {
  const auto truth = fixtures::figure1_truth();
  const Dataset d = simulate(truth, 100000, 7);
  double mean = 0.0;
  std::size_t above = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    mean += d.row(i)[0];
    above += d.row(i)[0] > 2.0;
  }
  mean /= static_cast<double>(d.size());
  CHECK_THAT(mean, WithinAbs(0.5 * 0.0 + 0.45 * 0.75 + 0.05 * 3.0, 0.02));
  const double tail = 0.05 * boost::math::cdf(boost::math::complement(boost::math::normal(3.0, 0.2), 2.0));
  CHECK_THAT(static_cast<double>(above) / static_cast<double>(d.size()), WithinAbs(tail, 0.005));
}

TEST_CASE("invalid mixture weights are rejected", "[model][simulate]") {
  CHECK_THROWS_AS(simulate(GaussianMixture1D{{0.5, 0.4}, {0.0, 1.0}, {1.0, 1.0}}, 5, 1), ConfigError);
  CHECK_THROWS_AS(simulate(fixtures::figure1_truth(), 0, 1), ConfigError);
}

TEST_CASE("log-likelihood values", "[model][loglik]") {
  SECTION("standard normal at zero") {
    CHECK_THAT(eval_loglik(fixtures::normal_mean(), Dataset::scalar({0.0}), vec({0.0})),
               WithinAbs(-0.5 * std::log(2.0 * std::numbers::pi), 1e-15));
  }
  SECTION("zero weight collapses to the pinned component") {
    auto spec = fixtures::figure1_fit().spec();
    spec.weight_lo = 0.0;
    const GaussianMixtureModel m(spec);
    const Dataset d = Dataset::scalar({-0.3, 0.1, 0.5, 2.0});
    double expect = 0.0;
    for (double x : {-0.3, 0.1, 0.5, 2.0}) expect += std::log(oracle::phi(x, 0.0, 0.2)) / 4.0;
    CHECK_THAT(eval_loglik(m, d, vec({1.7, 0.0})), WithinAbs(expect, 1e-13));
  }
  SECTION("five points against direct density arithmetic") {
    const std::vector<double> xs{-0.41, 0.02, 0.66, 1.3, 2.95};
    double expect = 0.0;
    for (double x : xs) expect += oracle::fit_log_pdf(x, 0.75, 0.45) / 5.0;
    CHECK_THAT(eval_loglik(fixtures::figure1_fit(), Dataset::scalar(xs), vec({0.75, 0.45})),
               WithinAbs(expect, 1e-13));
  }
  SECTION("outside the domain") {
    CHECK_THROWS_AS(eval_loglik(fixtures::figure1_fit(), Dataset::scalar({0.0}), vec({0.75, 1.0})), DomainError);
  }
  SECTION("non-finite density names the observation") {
    try {
      eval_loglik(fixtures::normal_mean(), Dataset::scalar({0.0, 1e300}), vec({0.0}));
      FAIL("expected an evaluation error");
    } catch (const EvaluationError& e) {
      REQUIRE(e.observation());
      CHECK(*e.observation() == 1);
    }
  }
  SECTION("finite for any interior weight") {
    const Dataset d = simulate(fixtures::figure1_truth(), 300, 3);
    Rng rng(5);
    for (int k = 0; k < 100; ++k)
      CHECK(std::isfinite(eval_loglik(fixtures::figure1_fit(), d, random_interior(fixtures::figure1_fit().domain(), rng))));
  }
}

TEST_CASE("score and Hessian of the normal location model", "[model][derivatives]") {
  const auto [g, h] = eval_score_hessian(fixtures::normal_mean(), Dataset::scalar({1.25}), vec({0.5}));
  CHECK_THAT(g[0], WithinAbs(0.75, 1e-14));
  CHECK_THAT(h(0, 0), WithinAbs(-1.0, 1e-14));
}

TEST_CASE("analytic derivatives match finite differences", "[model][derivatives][property]") {
  const Dataset d = simulate(fixtures::figure1_truth(), 200, 11);
  Rng rng(17);
  for (const auto& m : registered_models()) {
    const SampleSurface<GaussianMixtureModel> s(m, d);
    for (int k = 0; k < 50; ++k) {
      const Vector x = random_interior(m.domain(), rng);
      const Evaluation e = s.evaluate(x, Order::hessian);
      const Vector fd = fd_gradient([&](const Vector& t) { return value(s, t); }, x);
      CHECK(sup_norm(e.gradient - fd) <= 1e-4 * (1.0 + sup_norm(e.gradient)));
      const Matrix fh = fd_jacobian_sym([&](const Vector& t) { return gradient(s, t); }, x);
      CHECK(max_norm(e.hessian - fh) <= 1e-3 * (1.0 + max_norm(e.hessian)));
      CHECK(max_norm(e.hessian - e.hessian.transpose()) <= 1e-8);
    }
  }
}

TEST_CASE("population surface", "[model][population]") {
  const auto pop = population_surface(fixtures::figure1_fit(), fixtures::figure1_truth());
  SECTION("agrees with adaptive quadrature") {
    for (auto [m, r] : {std::pair{3.0, 0.05}, {1.0, 0.4}, {-0.5, 0.9}, {4.5, 0.2}})
      CHECK_THAT(value(pop, vec({m, r})), WithinAbs(oracle::population_value(m, r), 1e-9));
  }
  SECTION("agrees with a large sample average") {
    const Dataset d = simulate(fixtures::figure1_truth(), 1000000, 21);
    const SampleSurface<GaussianMixtureModel> s(fixtures::figure1_fit(), d);
    const Vector theta = vec({1.0, 0.4});
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double lp = s.observation(theta, i, Order::value).value;
      sum += lp;
      sq += lp * lp;
    }
    const double n = static_cast<double>(d.size());
    const double mean = sum / n, se = std::sqrt((sq / n - mean * mean) / n);
    CHECK(std::abs(mean - value(pop, theta)) <= 3.0 * se);
    CHECK_THAT(value(s, theta), WithinAbs(mean, 1e-10));
  }
}

TEST_CASE("dataset text round trip", "[model][io]") {
  const Dataset d = Dataset::from_rows({{0.1, -2.0}, {1.0 / 3.0, 1e-17}});
  std::stringstream ss;
  write_dataset(d, ss);
  CHECK(read_dataset(ss) == d);
  std::stringstream bad("1.0 2.0\n3.0 oops\n");
  CHECK_THROWS_AS(read_dataset(bad), IOError);
  std::stringstream ragged("1.0 2.0\n3.0\n");
  CHECK_THROWS_AS(read_dataset(ragged), ConfigError);
  CHECK_THROWS_AS(read_dataset("/nonexistent/data.txt"), IOError);
}

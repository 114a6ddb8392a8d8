#pragma once

// Pooled two-sample comparison: a common anchor from multi-start ascent on
// the pooled sample, per-sample ascents from that anchor, and a
// permutation p-value for the distance between the two convergents.

#include "lopt/infer.hpp"

namespace lopt {

enum class Comparison { permutation, ci_overlap };

struct TwoSampleResult {
  Vector theta_opt;
  Vector theta_x;
  Vector theta_y;
  double statistic = 0.0;
  double p_value = 1.0;
  std::size_t permutations = 0;
  std::vector<double> permuted;  // T1 per permutation, in permutation order

  // CI-overlap comparison
  std::optional<ConfidenceInterval> ci_x, ci_y;
  std::optional<bool> overlap;
};

struct TwoSampleOptions {
  Comparison comparison = Comparison::permutation;
  double alpha = 0.05;  // per-sample interval level for ci_overlap
  std::size_t tau_coordinate = 0;
  unsigned threads = 1;
};

namespace detail {

template <PointModel Model>
Vector anchored_ascent(const Model& model, const Dataset& data, const Vector& anchor, const AscentConfig& cfg) {
  AscentResult r;
  try {
    r = ascend(SampleSurface<Model>(model, data), anchor, cfg);
  } catch (const Error& e) {
    throw TestError(std::string("two-sample ascent failed: ") + e.what());
  }
  if (r.termination == Termination::max_iter) throw TestError("two-sample ascent hit max_iter");
  return r.convergent;
}

}  // namespace detail

/// Permutation test of T1 = |theta_X - theta_Y|. Every permutation keeps the
/// sample sizes and reuses the pooled anchor.
template <PointModel Model>
TwoSampleResult two_sample_test(const Dataset& x, const Dataset& y, const Model& model, const Initializer& init,
                                std::size_t M, std::size_t P, const AscentConfig& cfg, std::uint64_t seed,
                                const TwoSampleOptions& opt = {}) {
  if (x.size() == 0 || y.size() == 0) throw ConfigError("two-sample test needs two non-empty samples");
  if (x.dim() != y.dim()) throw ConfigError("two-sample test: observation dimensions differ");
  const Dataset pooled = x.concat(y);

  TwoSampleResult out;
  try {
    out.theta_opt = multistart(SampleSurface<Model>(model, pooled), init, M, cfg, seed, opt.threads).estimator;
  } catch (const EstimationError& e) {
    throw TestError(std::string("pooled multistart failed: ") + e.what());
  }
  out.theta_x = detail::anchored_ascent(model, x, out.theta_opt, cfg);
  out.theta_y = detail::anchored_ascent(model, y, out.theta_opt, cfg);
  out.statistic = (out.theta_x - out.theta_y).norm();

  if (opt.comparison == Comparison::ci_overlap) {
    const auto tau = TauFunctional::coordinate(opt.tau_coordinate, model.dim());
    out.ci_x = normal_ci(out.theta_x, sandwich_cov(SampleSurface<Model>(model, x), out.theta_x), tau,
                         static_cast<double>(x.size()), opt.alpha);
    out.ci_y = normal_ci(out.theta_y, sandwich_cov(SampleSurface<Model>(model, y), out.theta_y), tau,
                         static_cast<double>(y.size()), opt.alpha);
    out.overlap = out.ci_x->lo <= out.ci_y->hi && out.ci_y->lo <= out.ci_x->hi;
    out.p_value = *out.overlap ? 1.0 : 0.0;
    return out;
  }

  out.permutations = P;
  out.permuted.assign(P, 0.0);
  const std::size_t nx = x.size();
  parallel_for(P, opt.threads, [&](std::size_t p) {
    Rng rng = make_rng(seed, streams::permutation, p);
    std::vector<std::size_t> idx(pooled.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::span<const std::size_t> all(idx);
    const Vector a = detail::anchored_ascent(model, pooled.subset(all.first(nx)), out.theta_opt, cfg);
    const Vector b = detail::anchored_ascent(model, pooled.subset(all.subspan(nx)), out.theta_opt, cfg);
    out.permuted[p] = (a - b).norm();
  });
  std::size_t exceed = 0;
  for (double t : out.permuted)
    if (t >= out.statistic) ++exceed;
  out.p_value = static_cast<double>(1 + exceed) / static_cast<double>(P + 1);
  return out;
}

}  // namespace lopt

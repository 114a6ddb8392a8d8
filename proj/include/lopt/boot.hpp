#pragma once

// Percentile bootstrap interval. Every replicate ascends its resampled
// surface from the same fixed start, the original estimate.

#include "lopt/infer.hpp"

namespace lopt {

struct BootstrapDistribution {
  std::vector<double> values;  // sorted
  std::size_t B = 0;
  std::size_t diverged = 0;

  double drop_rate() const { return B ? static_cast<double>(diverged) / static_cast<double>(B) : 0.0; }
};

struct BootstrapResult {
  ConfidenceInterval ci;
  BootstrapDistribution distribution;
};

struct BootstrapOptions {
  double max_drop_rate = 0.05;
  unsigned threads = 1;
};

/// Resample indices for replicate b.
inline std::vector<std::size_t> bootstrap_indices(std::size_t n, std::uint64_t seed, std::size_t b) {
  Rng rng = make_rng(seed, streams::bootstrap, b);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<std::size_t> idx(n);
  for (auto& i : idx) i = pick(rng);
  return idx;
}

/// [G^-1(alpha/2), G^-1(1-alpha/2)] over replicates that converged.
/// Replicates that fail, stall, hit a bound or run out of iterations are
/// dropped and counted.
template <PointModel Model>
BootstrapResult bootstrap_ci(const SampleSurface<Model>& surface, const Vector& theta_hat, const TauFunctional& tau,
                             std::size_t B, double alpha, const AscentConfig& cfg, std::uint64_t seed,
                             const BootstrapOptions& opt = {}) {
  if (B == 0) throw ConfigError("bootstrap requires B >= 1");
  check_alpha(alpha);
  if (!surface.domain().contains(theta_hat)) throw DomainError("bootstrap start outside domain");
  const std::size_t n = surface.size();

  std::vector<std::optional<double>> rep(B);
  parallel_for(B, opt.threads, [&](std::size_t b) {
    const auto idx = bootstrap_indices(n, seed, b);
    const auto star = surface.resampled(idx);
    try {
      const AscentResult r = ascend(star, theta_hat, cfg);
      if (r.converged) rep[b] = tau(r.convergent);
    } catch (const Error&) {
    }
  });

  BootstrapResult out;
  out.distribution.B = B;
  for (const auto& v : rep) {
    if (v)
      out.distribution.values.push_back(*v);
    else
      ++out.distribution.diverged;
  }
  if (out.distribution.values.empty()) throw BootstrapError("every bootstrap replicate diverged");
  if (out.distribution.drop_rate() > opt.max_drop_rate)
    throw BootstrapError("bootstrap drop rate " + std::to_string(out.distribution.drop_rate()) +
                         " exceeds the limit");
  std::sort(out.distribution.values.begin(), out.distribution.values.end());
  const auto& v = out.distribution.values;
  out.ci.lo = order_statistic(v, 0.5 * alpha);
  out.ci.hi = order_statistic(v, 1.0 - 0.5 * alpha);
  out.ci.level = 1.0 - alpha;
  out.ci.method = "bootstrap";
  return out;
}

template <PointModel Model>
BootstrapResult bootstrap_ci(const Dataset& data, const Model& model, const Vector& theta_hat,
                             const TauFunctional& tau, std::size_t B, double alpha, const AscentConfig& cfg,
                             std::uint64_t seed, const BootstrapOptions& opt = {}) {
  return bootstrap_ci(SampleSurface<Model>(model, data), theta_hat, tau, B, alpha, cfg, seed, opt);
}

}  // namespace lopt

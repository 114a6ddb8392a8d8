#pragma once

// EM for fixed-variance Gaussian mixtures: E-step responsibilities,
// closed-form M-step, multi-start selection by log-likelihood, the
// recovery-probability bound and the EM normal interval.

#include "lopt/infer.hpp"

namespace lopt {

using MixtureSurface = SampleSurface<GaussianMixtureModel>;

struct EMState {
  Vector theta;
  std::size_t t = 0;
  double loglik = std::numeric_limits<double>::quiet_NaN();
};

/// n x k posterior component probabilities.
struct Responsibilities {
  Matrix r;
};

inline constexpr double kDegenerateResponsibility = 1e-12;

inline Responsibilities e_step(const MixtureSurface& s, const Vector& theta) {
  const GaussianMixtureModel& m = s.model();
  std::vector<double> means, weights;
  m.unpack(theta, means, weights);
  const std::size_t k = m.components(), n = s.size();
  Responsibilities out{Matrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k))};
  std::vector<double> lp(k);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = s.data().row(i)[0];
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) {
      lp[j] = std::log(weights[j]) + normal_log_pdf(x, means[j], m.sd());
      top = std::max(top, lp[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(lp[j] - top);
    for (std::size_t j = 0; j < k; ++j)
      out.r(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = std::exp(lp[j] - top) / z;
  }
  return out;
}

/// Closed-form maximiser of Q(. | theta) over the parameter box: weighted
/// means for free means, mean responsibility for free weights, each
/// clamped to its bounds.
inline Vector m_step(const MixtureSurface& s, const Vector& theta, const Responsibilities& resp) {
  const GaussianMixtureModel& m = s.model();
  std::vector<double> means, weights;
  m.unpack(theta, means, weights);
  const std::size_t k = m.components(), n = s.size();
  std::vector<double> mass(k, 0.0), first(k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double w = s.weight(i), x = s.data().row(i)[0];
    for (std::size_t j = 0; j < k; ++j) {
      const double r = w * resp.r(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      mass[j] += r;
      first[j] += r * x;
    }
  }
  for (std::size_t j = 0; j < k; ++j)
    if (mass[j] < kDegenerateResponsibility)
      throw DegenerateComponentError("component " + std::to_string(j) + " has vanishing responsibility");
  double total = 0.0;
  for (double v : mass) total += v;
  for (std::size_t j : m.free_means()) means[j] = first[j] / mass[j];
  if (m.free_weights())
    for (std::size_t j = 0; j < k; ++j) weights[j] = mass[j] / total;
  return m.domain().clamp(m.pack(means, weights));
}

/// One EM update.
inline EMState em_step(const MixtureSurface& s, const EMState& cur) {
  const Vector next = m_step(s, cur.theta, e_step(s, cur.theta));
  return {next, cur.t + 1, value(s, next)};
}

struct EMConfig {
  double tol = 1e-10;  // stop when the summed log-likelihood moves by less than tol
  std::size_t max_iter = 10000;
  bool keep_trace = false;

  void validate() const {
    if (!(tol > 0.0)) throw ConfigError("em: tol must be positive");
    if (max_iter == 0) throw ConfigError("em: max_iter must be >= 1");
  }
};

struct EMRun {
  EMState terminal;
  bool converged = false;  // stopped by tol rather than max_iter
  bool interior = false;   // terminal point strictly inside the box
  std::vector<double> logliks;  // initial value first; with keep_trace
  std::vector<Vector> thetas;
};

inline bool strictly_inside(const Box& b, const Vector& x) {
  for (Eigen::Index j = 0; j < x.size(); ++j)
    if (!(x[j] > b.lo[j] && x[j] < b.hi[j])) return false;
  return true;
}

inline EMRun em_run(const MixtureSurface& s, const Vector& start, const EMConfig& cfg = {}) {
  cfg.validate();
  if (!s.domain().contains(start)) throw DomainError("em start outside domain");
  EMRun run;
  EMState cur{start, 0, value(s, start)};
  if (cfg.keep_trace) {
    run.logliks.push_back(cur.loglik);
    run.thetas.push_back(cur.theta);
  }
  while (cur.t < cfg.max_iter) {
    EMState next = em_step(s, cur);
    // loglik is a per-observation average; the rule applies to the sum.
    const double inc = (next.loglik - cur.loglik) * static_cast<double>(s.size());
    cur = std::move(next);
    if (cfg.keep_trace) {
      run.logliks.push_back(cur.loglik);
      run.thetas.push_back(cur.theta);
    }
    if (std::abs(inc) < cfg.tol) {
      run.converged = true;
      break;
    }
  }
  run.terminal = std::move(cur);
  run.interior = strictly_inside(s.domain(), run.terminal.theta);
  return run;
}

/// Multi-start EM; runs draw their starts from the same streams as
/// gradient-ascent multistart, so a larger M extends a smaller one.
inline MultistartOutcome em_multistart(const MixtureSurface& s, const Initializer& init, std::size_t M,
                                       const EMConfig& cfg, std::uint64_t seed, unsigned threads = 1) {
  if (M == 0) throw ConfigError("em_multistart requires M >= 1");
  std::vector<AscentResult> runs(M);
  parallel_for(M, threads, [&](std::size_t r) {
    const Vector start = multistart_start(init, seed, r);
    AscentResult& out = runs[r];
    try {
      const EMRun run = em_run(s, start, cfg);
      out.convergent = run.terminal.theta;
      out.value = run.terminal.loglik;
      out.iterations = run.terminal.t;
      out.converged = run.converged;
      out.termination = run.converged ? (run.interior ? Termination::converged : Termination::boundary)
                                      : Termination::max_iter;
      out.grad_norm = sup_norm(gradient(s, run.terminal.theta));
    } catch (const Error& e) {
      out.convergent = start;
      out.termination = Termination::failed;
      out.failure = e.what();
    }
  });
  return finish_multistart(std::move(runs));
}

struct EMRecoveryInputs {
  double r0 = 0.0;         // concavity radius, informational
  double ball_mass = 0.0;  // Pi(B(theta_MLE, r0 / 3))
  std::size_t M = 1;

  double q_em() const { return 0.5 * ball_mass; }
};

struct EMRecoveryBound {
  double bound = 0.0;  // 1 - (1 - q_EM)^M
  double q_em = 0.0;
  std::string remainder = "- eta_n(q_EM) - c1 exp(-c2 n)";
};

inline EMRecoveryBound em_recovery_bound(const EMRecoveryInputs& in) {
  if (!(in.ball_mass > 0.0 && in.ball_mass <= 1.0)) throw ConfigError("em recovery: ball mass must lie in (0,1]");
  if (in.M == 0) throw ConfigError("em recovery: M must be >= 1");
  EMRecoveryBound b;
  b.q_em = in.q_em();
  b.bound = 1.0 - std::pow(1.0 - b.q_em, static_cast<double>(in.M));
  return b;
}

/// Normal interval at the EM estimate: sandwich covariance of the mixture
/// log-likelihood, n taken as the sample size.
inline ConfidenceInterval em_normal_ci(const MixtureSurface& s, const Vector& theta_em, const TauFunctional& tau,
                                       double alpha, CovarianceKind kind = CovarianceKind::sandwich) {
  ConfidenceInterval ci =
      normal_ci(theta_em, sandwich_cov(s, theta_em, kind), tau, static_cast<double>(s.size()), alpha);
  ci.method = "em-normal";
  return ci;
}

}  // namespace lopt

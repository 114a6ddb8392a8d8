#pragma once

// Discrete gradient ascent with Armijo backtracking and box projection, the
// initialization distributions, and the multi-start estimator that keeps the
// convergent with the highest objective value.

#include "lopt/model.hpp"

#include <variant>

namespace lopt {

struct AscentConfig {
  double s0 = 0.1;
  double shrink = 0.5;
  double armijo = 1e-4;
  double grad_tol = 1e-8;
  std::size_t max_iter = 100000;
  double classify_tol = 1e-6;  // Hessian eigenvalue threshold
  bool keep_trajectory = false;

  void validate() const {
    if (!(s0 > 0.0)) throw ConfigError("ascent: s0 must be positive");
    if (!(shrink > 0.0 && shrink < 1.0)) throw ConfigError("ascent: shrink must lie in (0,1)");
    if (!(grad_tol > 0.0)) throw ConfigError("ascent: grad_tol must be positive");
    if (max_iter == 0) throw ConfigError("ascent: max_iter must be >= 1");
  }
};

enum class Classification { local_max, saddle_or_min, indeterminate };

inline const char* to_string(Classification c) {
  switch (c) {
    case Classification::local_max: return "local-max";
    case Classification::saddle_or_min: return "saddle-or-min";
    case Classification::indeterminate: return "indeterminate";
  }
  return "unknown";
}

enum class Termination {
  converged,  // projected gradient sup-norm <= grad_tol, no active bound
  boundary,   // stationary only after clamping against the box
  max_iter,
  stalled,    // line search cannot find a non-decreasing step
  failed,     // evaluation error (multistart records only)
};

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::converged: return "converged";
    case Termination::boundary: return "boundary";
    case Termination::max_iter: return "max-iter";
    case Termination::stalled: return "stalled";
    case Termination::failed: return "failed";
  }
  return "unknown";
}

struct AscentResult {
  Vector convergent;
  double value = std::numeric_limits<double>::quiet_NaN();
  std::size_t iterations = 0;
  bool converged = false;
  Termination termination = Termination::max_iter;
  Classification classification = Classification::indeterminate;
  double grad_norm = std::numeric_limits<double>::quiet_NaN();
  std::string failure;  // non-empty when the run raised an error

  std::vector<Vector> trajectory;  // only with keep_trajectory
  std::vector<double> values;

  bool ok() const { return failure.empty(); }
};

inline Classification classify_hessian(const Matrix& h, double tol) {
  const Vector ev = symmetric_eigenvalues(h);
  if (ev.maxCoeff() < -tol) return Classification::local_max;
  if (ev.maxCoeff() > tol) return Classification::saddle_or_min;
  return Classification::indeterminate;
}

namespace detail {

// Gradient with components zeroed where a bound is active and the gradient
// points out of the box. Sets `blocked` if any component was zeroed.
inline Vector projected_gradient(const Vector& x, const Vector& g, const Box& box, bool& blocked) {
  Vector p = g;
  blocked = false;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    if ((x[j] <= box.lo[j] && g[j] < 0.0) || (x[j] >= box.hi[j] && g[j] > 0.0)) {
      if (g[j] != 0.0) blocked = true;
      p[j] = 0.0;
    }
  }
  return p;
}

}  // namespace detail

/// Ascends the surface from `start` until the projected gradient sup-norm
/// drops below grad_tol or max_iter is hit. Accepted steps never decrease
/// the objective by more than its rounding resolution, 1e-15 (1 + |L|).
template <ObjectiveSurface S>
AscentResult ascend(const S& surface, const Vector& start, const AscentConfig& cfg = {}) {
  cfg.validate();
  const Box& box = surface.domain();
  if (!box.contains(start)) throw DomainError("ascent start outside domain");

  AscentResult res;
  Vector x = start;
  std::vector<Vector> prefix;  // for error reporting
  auto fail = [&](EvaluationError& e) {
    prefix.push_back(x);
    e.set_trajectory(std::move(prefix));
    throw e;
  };

  Evaluation cur;
  try {
    cur = surface.evaluate(x, Order::gradient);
  } catch (EvaluationError& e) {
    fail(e);
  }
  if (cfg.keep_trajectory) {
    res.trajectory.push_back(x);
    res.values.push_back(cur.value);
  }

  bool blocked = false;
  std::size_t it = 0;
  for (;; ++it) {
    const Vector pg = detail::projected_gradient(x, cur.gradient, box, blocked);
    const double gnorm = sup_norm(pg);
    if (gnorm <= cfg.grad_tol) {
      res.termination = blocked ? Termination::boundary : Termination::converged;
      break;
    }
    if (it >= cfg.max_iter) {
      res.termination = Termination::max_iter;
      break;
    }
    prefix.push_back(x);

    // Backtracking along the projected path x(s) = clamp(x + s g).
    double s = cfg.s0;
    bool accepted = false;
    Evaluation next;
    Vector trial;
    const double noise = 1e-15 * (1.0 + std::abs(cur.value));
    for (int bt = 0; bt < 200; ++bt, s *= cfg.shrink) {
      trial = box.clamp(x + s * cur.gradient);
      const Vector step = trial - x;
      if (sup_norm(step) == 0.0) break;
      try {
        next = surface.evaluate(trial, Order::gradient);
      } catch (EvaluationError& e) {
        fail(e);
      }
      const double predicted = cur.gradient.dot(step);
      const double gain = next.value - cur.value;
      if (gain >= cfg.armijo * predicted) {
        accepted = true;
        break;
      }
      // Below the rounding resolution of the objective the value test is
      // noise; accept a step that has not overshot along its direction.
      if (cfg.armijo * predicted <= noise && gain >= -noise && next.gradient.dot(step) >= 0.0) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      res.termination = Termination::stalled;
      break;
    }
    x = std::move(trial);
    cur = std::move(next);
    if (cfg.keep_trajectory) {
      res.trajectory.push_back(x);
      res.values.push_back(cur.value);
    }
  }

  res.convergent = x;
  res.value = cur.value;
  res.iterations = it;
  res.grad_norm = sup_norm(detail::projected_gradient(x, cur.gradient, box, blocked));
  res.converged = res.termination == Termination::converged;
  if (res.termination == Termination::boundary) {
    res.classification = Classification::indeterminate;
  } else {
    res.classification = classify_hessian(surface.evaluate(x, Order::hessian).hessian, cfg.classify_tol);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Initialization distributions
// ---------------------------------------------------------------------------

/// Distribution of multistart starting points. Every draw is clamped into
/// the parameter domain.
class Initializer {
 public:
  struct UniformBox { Box box; };
  struct EmpiricalResample { std::shared_ptr<const Dataset> points; };
  struct GaussianFit { Vector mean; Matrix chol; };
  struct PointMass { Vector point; };
  using Kind = std::variant<UniformBox, EmpiricalResample, GaussianFit, PointMass>;

  static Initializer uniform(const Box& domain, const Box& region) {
    return Initializer(domain, UniformBox{domain.intersect(region)});
  }
  static Initializer uniform(const Box& domain) { return Initializer(domain, UniformBox{domain}); }

  /// Starting points resampled from observations; observation dimension
  /// must equal the parameter dimension.
  static Initializer empirical(const Box& domain, const Dataset& data) {
    if (data.dim() != domain.dim())
      throw ConfigError("empirical initializer: observation and parameter dimensions differ");
    return Initializer(domain, EmpiricalResample{std::make_shared<const Dataset>(data)});
  }

  static Initializer gaussian(const Box& domain, const Vector& mean, const Matrix& cov) {
    if (mean.size() != static_cast<Eigen::Index>(domain.dim()) || cov.rows() != mean.size() ||
        cov.cols() != mean.size())
      throw ConfigError("gaussian initializer: dimension mismatch");
    Eigen::LLT<Matrix> llt(0.5 * (cov + cov.transpose()));
    if (llt.info() != Eigen::Success) throw ConfigError("gaussian initializer: covariance not positive definite");
    return Initializer(domain, GaussianFit{mean, llt.matrixL()});
  }

  /// Mean and covariance fitted to the observations.
  static Initializer gaussian_fit(const Box& domain, const Dataset& data) {
    const std::size_t n = data.size(), p = data.dim();
    if (p != domain.dim()) throw ConfigError("gaussian-fit initializer: dimension mismatch");
    Vector mean = Vector::Zero(static_cast<Eigen::Index>(p));
    for (std::size_t i = 0; i < n; ++i) mean += data.row_vector(i);
    mean /= static_cast<double>(n);
    Matrix cov = Matrix::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
    for (std::size_t i = 0; i < n; ++i) {
      const Vector c = data.row_vector(i) - mean;
      cov += c * c.transpose();
    }
    cov /= static_cast<double>(std::max<std::size_t>(n - 1, 1));
    cov += 1e-12 * Matrix::Identity(cov.rows(), cov.cols());
    return gaussian(domain, mean, cov);
  }

  static Initializer point(const Box& domain, const Vector& p) {
    if (!domain.contains(p)) throw ConfigError("point-mass initializer outside domain");
    return Initializer(domain, PointMass{p});
  }

  Vector draw(Rng& rng) const {
    return std::visit([&](const auto& k) { return domain_.clamp(draw_kind(k, rng)); }, kind_);
  }

  /// Density with respect to Lebesgue measure where one exists
  /// (uniform and Gaussian kinds; clamping mass ignored).
  std::optional<double> density(const Vector& x) const {
    if (auto* u = std::get_if<UniformBox>(&kind_)) {
      return u->box.contains(x) ? 1.0 / u->box.volume() : 0.0;
    }
    if (auto* g = std::get_if<GaussianFit>(&kind_)) {
      const Vector z = g->chol.triangularView<Eigen::Lower>().solve(x - g->mean);
      const double logdet = g->chol.diagonal().array().log().sum();
      const double d = static_cast<double>(x.size());
      return std::exp(-0.5 * z.squaredNorm() - logdet - 0.5 * d * std::log(2.0 * std::numbers::pi));
    }
    return std::nullopt;
  }

  const Box& domain() const { return domain_; }
  const Kind& kind() const { return kind_; }

 private:
  Initializer(Box domain, Kind kind) : domain_(std::move(domain)), kind_(std::move(kind)) {}

  static Vector draw_kind(const UniformBox& k, Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Vector x(static_cast<Eigen::Index>(k.box.dim()));
    for (Eigen::Index j = 0; j < x.size(); ++j) x[j] = k.box.lo[j] + u(rng) * (k.box.hi[j] - k.box.lo[j]);
    return x;
  }
  static Vector draw_kind(const EmpiricalResample& k, Rng& rng) {
    std::uniform_int_distribution<std::size_t> pick(0, k.points->size() - 1);
    return k.points->row_vector(pick(rng));
  }
  static Vector draw_kind(const GaussianFit& k, Rng& rng) {
    std::normal_distribution<double> z(0.0, 1.0);
    Vector e(k.mean.size());
    for (Eigen::Index j = 0; j < e.size(); ++j) e[j] = z(rng);
    return k.mean + k.chol * e;
  }
  static Vector draw_kind(const PointMass& k, Rng&) { return k.point; }

  Box domain_;
  Kind kind_;
};

// ---------------------------------------------------------------------------
// Multi-start estimator
// ---------------------------------------------------------------------------

struct MultistartOutcome {
  std::vector<AscentResult> runs;
  std::size_t selected = 0;
  Vector estimator;
  double value = std::numeric_limits<double>::quiet_NaN();

  const AscentResult& best() const { return runs[selected]; }
};

/// Index of the highest-valued successful run; ties go to the lowest index.
inline std::size_t select_best(const std::vector<AscentResult>& runs) {
  std::optional<std::size_t> best;
  for (std::size_t r = 0; r < runs.size(); ++r) {
    if (!runs[r].ok() || !std::isfinite(runs[r].value)) continue;
    if (!best || runs[r].value > runs[*best].value) best = r;
  }
  if (!best) throw EstimationError("every multistart run failed");
  return *best;
}

inline MultistartOutcome finish_multistart(std::vector<AscentResult> runs) {
  MultistartOutcome out;
  out.runs = std::move(runs);
  out.selected = select_best(out.runs);
  out.estimator = out.runs[out.selected].convergent;
  out.value = out.runs[out.selected].value;
  return out;
}

/// Start point of run r: drawn from its own stream so that runs can execute
/// in any order.
inline Vector multistart_start(const Initializer& init, std::uint64_t seed, std::size_t r) {
  Rng rng = make_rng(seed, streams::multistart, r);
  return init.draw(rng);
}

template <ObjectiveSurface S>
MultistartOutcome multistart(const S& surface, const Initializer& init, std::size_t M, const AscentConfig& cfg,
                             std::uint64_t seed, unsigned threads = 1) {
  if (M == 0) throw ConfigError("multistart requires M >= 1");
  std::vector<AscentResult> runs(M);
  parallel_for(M, threads, [&](std::size_t r) {
    const Vector start = multistart_start(init, seed, r);
    try {
      runs[r] = ascend(surface, start, cfg);
    } catch (const Error& e) {
      runs[r].convergent = start;
      runs[r].termination = Termination::failed;
      runs[r].failure = e.what();
    }
  });
  return finish_multistart(std::move(runs));
}

}  // namespace lopt

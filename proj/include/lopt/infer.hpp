#pragma once

// Sandwich covariance, the normal interval for a scalar functional, and the
// likelihood-ratio, score and Wald confidence regions with their grid
// extraction and tau-image.

#include "lopt/landscape.hpp"

#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/gamma.hpp>

namespace lopt {

// ---------------------------------------------------------------------------
// Quantiles
// ---------------------------------------------------------------------------

/// Standard normal quantile.
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("normal_quantile: p must lie in (0,1)");
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

inline double chisq_cdf(double d, double x) {
  if (x <= 0.0) return 0.0;
  return boost::math::gamma_p(0.5 * d, 0.5 * x);
}

/// p quantile of chi-square with d degrees of freedom, by safeguarded
/// Newton iteration on the regularized lower incomplete gamma.
inline double chisq_quantile(std::size_t d, double p) {
  if (d == 0) throw DomainError("chisq_quantile: d must be >= 1");
  if (!(p > 0.0 && p < 1.0)) throw DomainError("chisq_quantile: p must lie in (0,1)");
  const double k = static_cast<double>(d);
  double lo = 0.0, hi = std::max(1.0, k);
  while (chisq_cdf(k, hi) < p) {
    lo = hi;
    hi *= 2.0;
  }
  double x = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    const double f = chisq_cdf(k, x) - p;
    if (f == 0.0) return x;
    if (f < 0.0)
      lo = x;
    else
      hi = x;
    // chi-square density at x
    const double dens = std::exp((0.5 * k - 1.0) * std::log(x) - 0.5 * x - 0.5 * k * std::log(2.0) -
                                 std::lgamma(0.5 * k));
    double next = x - f / dens;
    if (!(next > lo && next < hi) || !std::isfinite(next)) next = 0.5 * (lo + hi);
    if (std::abs(next - x) <= 1e-13 * (1.0 + x) || hi - lo <= 1e-13 * (1.0 + x)) return next;
    x = next;
  }
  return x;
}

// ---------------------------------------------------------------------------
// Scalar functional
// ---------------------------------------------------------------------------

struct TauFunctional {
  std::function<double(const Vector&)> map;
  std::function<Vector(const Vector&)> grad;  // may be empty: finite differences
  std::string name = "tau";

  double operator()(const Vector& theta) const { return map(theta); }
  Vector gradient(const Vector& theta) const { return grad ? grad(theta) : fd_gradient(map, theta); }

  static TauFunctional coordinate(std::size_t j, std::size_t d) {
    const auto jj = static_cast<Eigen::Index>(j);
    if (j >= d) throw ConfigError("tau coordinate out of range");
    return TauFunctional{[jj](const Vector& t) { return t[jj]; },
                         [jj, d](const Vector&) {
                           Vector g = Vector::Zero(static_cast<Eigen::Index>(d));
                           g[jj] = 1.0;
                           return g;
                         },
                         "theta[" + std::to_string(j) + "]"};
  }
};

// ---------------------------------------------------------------------------
// Covariance
// ---------------------------------------------------------------------------

enum class CovarianceKind {
  sandwich,              // H^-1 J H^-1
  observed_information,  // (-H)^-1
  outer_product,         // J^-1
};

inline const char* to_string(CovarianceKind k) {
  switch (k) {
    case CovarianceKind::sandwich: return "sandwich";
    case CovarianceKind::observed_information: return "observed-information";
    case CovarianceKind::outer_product: return "outer-product";
  }
  return "unknown";
}

struct SandwichCovariance {
  Matrix matrix;  // covariance of sqrt(n) (theta_hat - theta)
  Matrix hessian;
  Matrix middle;  // weighted mean of score outer products
  CovarianceKind kind = CovarianceKind::sandwich;

  Matrix per_n(double n) const { return matrix / n; }
};

inline constexpr double kMaxCondition = 1e12;

inline std::string eigen_report(const Vector& ev) {
  std::string s = "[";
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(ev[i]);
  }
  return s + "]";
}

/// Inverse of a symmetric matrix whose condition number stays below 1e12.
inline Matrix checked_inverse(const Matrix& m, const char* what) {
  const Vector ev = symmetric_eigenvalues(m);
  const double big = ev.cwiseAbs().maxCoeff(), small = ev.cwiseAbs().minCoeff();
  if (!(small > 0.0) || big / small >= kMaxCondition || !std::isfinite(big))
    throw ConditioningError(std::string(what) + " is singular; eigenvalues " + eigen_report(ev));
  Matrix inv = m.inverse();
  return 0.5 * (inv + inv.transpose());
}

/// Weighted mean of per-observation score outer products.
template <PointModel Model>
Matrix score_outer_product(const SampleSurface<Model>& s, const Vector& theta, bool centered = false) {
  const auto d = static_cast<Eigen::Index>(s.domain().dim());
  Matrix J = Matrix::Zero(d, d);
  Vector mean = Vector::Zero(d);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double w = s.weight(i);
    if (w == 0.0) continue;
    const Vector g = s.observation(theta, i, Order::gradient).gradient;
    J.noalias() += w * g * g.transpose();
    mean += w * g;
  }
  if (centered) J -= mean * mean.transpose();
  return 0.5 * (J + J.transpose());
}

template <PointModel Model>
SandwichCovariance sandwich_cov(const SampleSurface<Model>& s, const Vector& theta_hat,
                                CovarianceKind kind = CovarianceKind::sandwich) {
  SandwichCovariance out;
  out.kind = kind;
  out.hessian = s.evaluate(theta_hat, Order::hessian).hessian;
  out.middle = score_outer_product(s, theta_hat);
  switch (kind) {
    case CovarianceKind::sandwich: {
      const Matrix hinv = checked_inverse(out.hessian, "Hessian");
      out.matrix = hinv * out.middle * hinv;
      break;
    }
    case CovarianceKind::observed_information:
      out.matrix = checked_inverse(-out.hessian, "observed information");
      break;
    case CovarianceKind::outer_product:
      out.matrix = checked_inverse(out.middle, "score outer product");
      break;
  }
  out.matrix = 0.5 * (out.matrix + out.matrix.transpose());
  return out;
}

// ---------------------------------------------------------------------------
// Intervals
// ---------------------------------------------------------------------------

struct ConfidenceInterval {
  double lo = 0.0;
  double hi = 0.0;
  double level = 0.95;
  std::string method;
  std::vector<std::pair<double, double>> segments;  // disjoint pieces, tau-image only

  bool contains(double t) const { return t >= lo && t <= hi; }
  double width() const { return hi - lo; }
};

inline void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0,1)");
}

/// tau(theta_hat) +- z_{1-alpha/2} sqrt(g' cov g / n).
inline ConfidenceInterval normal_ci(const Vector& theta_hat, const SandwichCovariance& cov, const TauFunctional& tau,
                                    double n, double alpha) {
  check_alpha(alpha);
  const Vector g = tau.gradient(theta_hat);
  const double var = g.dot(cov.matrix * g) / n;
  if (!std::isfinite(var) || var < -1e-12) throw PropagationError("non-finite or negative variance of tau");
  const double half = normal_quantile(1.0 - 0.5 * alpha) * std::sqrt(std::max(var, 0.0));
  const double c = tau(theta_hat);
  return {c - half, c + half, 1.0 - alpha, "normal", {}};
}

// ---------------------------------------------------------------------------
// Regions
// ---------------------------------------------------------------------------

enum class RegionMethod { lrt, score, wald };

inline const char* to_string(RegionMethod m) {
  switch (m) {
    case RegionMethod::lrt: return "lrt";
    case RegionMethod::score: return "score";
    case RegionMethod::wald: return "wald";
  }
  return "unknown";
}

/// Cells of a grid where a region's predicate holds.
struct RegionExtraction {
  Grid grid;
  std::vector<std::uint8_t> member;
  std::size_t excluded_singular = 0;

  std::size_t count() const { return static_cast<std::size_t>(std::count(member.begin(), member.end(), 1)); }
  double excluded_fraction() const {
    return static_cast<double>(excluded_singular) / static_cast<double>(member.size());
  }
};

/// {theta : statistic(theta) <= threshold}. The statistic returns nullopt
/// where it is undefined (singular information), which is not a member.
/// Regions built from a surface hold their own copy of it.
class ConfidenceRegion {
 public:
  using Statistic = std::function<std::optional<double>(const Vector&)>;

  ConfidenceRegion(RegionMethod method, Box domain, Statistic stat, double threshold, double level)
      : method_(method), domain_(std::move(domain)), stat_(std::move(stat)), threshold_(threshold), level_(level) {}

  RegionMethod method() const { return method_; }
  double threshold() const { return threshold_; }
  double level() const { return level_; }
  const Box& domain() const { return domain_; }
  std::size_t dim() const { return domain_.dim(); }

  std::optional<double> statistic(const Vector& theta) const {
    if (!domain_.contains(theta)) return std::nullopt;
    return stat_(theta);
  }

  bool contains(const Vector& theta) const {
    const auto s = statistic(theta);
    return s && *s <= threshold_;
  }

  /// Evaluates the predicate on every cell centre; d <= 2 only.
  const RegionExtraction& extract(const Grid& grid, unsigned threads = 1) {
    if (grid.dim() > 2) throw RegionError("grid extraction is limited to d <= 2");
    RegionExtraction ex{grid, std::vector<std::uint8_t>(grid.cells(), 0), 0};
    std::vector<std::uint8_t> singular(grid.cells(), 0);
    parallel_for(grid.cells(), threads, [&](std::size_t c) {
      const auto s = statistic(grid.center(c));
      if (!s)
        singular[c] = 1;
      else
        ex.member[c] = *s <= threshold_ ? 1 : 0;
    });
    for (auto v : singular) ex.excluded_singular += v;
    extraction_ = std::move(ex);
    return *extraction_;
  }
  const RegionExtraction& extract(std::size_t per_axis = 200, unsigned threads = 1) {
    return extract(Grid(domain_, per_axis), threads);
  }

  const std::optional<RegionExtraction>& extraction() const { return extraction_; }

 private:
  RegionMethod method_;
  Box domain_;
  Statistic stat_;
  double threshold_;
  double level_;
  std::optional<RegionExtraction> extraction_;
};

/// 2n (L(theta_hat) - L(theta)) <= chi2_{d,1-alpha}.
template <ObjectiveSurface S>
ConfidenceRegion lrt_region(const S& surface, const Vector& theta_hat, double n, double alpha) {
  check_alpha(alpha);
  const double top = value(surface, theta_hat);
  const std::size_t d = surface.domain().dim();
  return ConfidenceRegion(
      RegionMethod::lrt, surface.domain(),
      [surface, top, n](const Vector& t) -> std::optional<double> { return 2.0 * n * (top - value(surface, t)); },
      chisq_quantile(d, 1.0 - alpha), 1.0 - alpha);
}

enum class InformationKind {
  observed,          // -H
  centered_outer,    // weighted covariance of per-observation scores
};

/// n S(theta)' I(theta)^-1 S(theta) <= chi2_{d,1-alpha}.
template <PointModel Model>
ConfidenceRegion score_region(const SampleSurface<Model>& surface, double n, double alpha,
                              InformationKind info = InformationKind::observed) {
  check_alpha(alpha);
  const std::size_t d = surface.domain().dim();
  return ConfidenceRegion(
      RegionMethod::score, surface.domain(),
      [surface, n, info](const Vector& t) -> std::optional<double> {
        const Evaluation e = surface.evaluate(t, Order::hessian);
        const Matrix I = info == InformationKind::observed ? Matrix(-e.hessian)
                                                           : score_outer_product(surface, t, true);
        const Vector ev = symmetric_eigenvalues(I);
        const double big = ev.cwiseAbs().maxCoeff(), small = ev.cwiseAbs().minCoeff();
        if (!(small > 0.0) || big / small >= kMaxCondition) return std::nullopt;
        return n * e.gradient.dot(I.ldlt().solve(e.gradient));
      },
      chisq_quantile(d, 1.0 - alpha), 1.0 - alpha);
}

/// Ellipsoid n (theta_hat - theta)' cov^-1 (theta_hat - theta) <= chi2_{d,1-alpha}.
inline ConfidenceRegion wald_region(const Box& domain, const Vector& theta_hat, const SandwichCovariance& cov,
                                    double n, double alpha) {
  check_alpha(alpha);
  const Matrix inv = checked_inverse(cov.matrix, "covariance");
  return ConfidenceRegion(
      RegionMethod::wald, domain,
      [theta_hat, inv, n](const Vector& t) -> std::optional<double> {
        const Vector r = theta_hat - t;
        return n * r.dot(inv * r);
      },
      chisq_quantile(static_cast<std::size_t>(theta_hat.size()), 1.0 - alpha), 1.0 - alpha);
}

/// Hull of tau over extracted member cells, with the disjoint tau-segments
/// of the region's connected components.
inline ConfidenceInterval tau_image(const ConfidenceRegion& region, const TauFunctional& tau) {
  if (!region.extraction() || region.extraction()->count() == 0)
    throw RegionError("tau image needs a non-empty grid extraction");
  const RegionExtraction& ex = *region.extraction();
  const Grid& g = ex.grid;

  // Connected components over axis neighbours, each reduced to its tau-range.
  std::vector<int> comp(g.cells(), -1);
  std::vector<std::pair<double, double>> ranges;
  std::vector<std::size_t> stack;
  for (std::size_t c = 0; c < g.cells(); ++c) {
    if (!ex.member[c] || comp[c] >= 0) continue;
    const int id = static_cast<int>(ranges.size());
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    stack.push_back(c);
    comp[c] = id;
    while (!stack.empty()) {
      const std::size_t cur = stack.back();
      stack.pop_back();
      const double t = tau(g.center(cur));
      lo = std::min(lo, t);
      hi = std::max(hi, t);
      auto idx = g.unflatten(cur);
      for (std::size_t j = 0; j < g.dim(); ++j) {
        for (int dir : {-1, 1}) {
          if ((dir < 0 && idx[j] == 0) || (dir > 0 && idx[j] + 1 == g.resolution()[j])) continue;
          auto nb = idx;
          nb[j] = dir < 0 ? nb[j] - 1 : nb[j] + 1;
          const std::size_t f = g.flatten(nb);
          if (ex.member[f] && comp[f] < 0) {
            comp[f] = id;
            stack.push_back(f);
          }
        }
      }
    }
    ranges.emplace_back(lo, hi);
  }
  std::sort(ranges.begin(), ranges.end());
  std::vector<std::pair<double, double>> merged;
  for (const auto& r : ranges) {
    if (!merged.empty() && r.first <= merged.back().second)
      merged.back().second = std::max(merged.back().second, r.second);
    else
      merged.push_back(r);
  }
  ConfidenceInterval ci;
  ci.lo = merged.front().first;
  ci.hi = merged.back().second;
  ci.level = region.level();
  ci.method = std::string(to_string(region.method())) + "-image";
  ci.segments = std::move(merged);
  return ci;
}

}  // namespace lopt

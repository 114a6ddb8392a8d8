#pragma once

// Shared vocabulary: linear-algebra aliases, box domains, surface evaluation
// records, the error hierarchy, seeded random streams and a deterministic
// parallel loop.

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace lopt {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error { using Error::Error; };
class DomainError : public Error { using Error::Error; };
class EstimationError : public Error { using Error::Error; };
class LandscapeError : public Error { using Error::Error; };
class ConditioningError : public Error { using Error::Error; };
class PropagationError : public Error { using Error::Error; };
class RegionError : public Error { using Error::Error; };
class BootstrapError : public Error { using Error::Error; };
class DegenerateComponentError : public Error { using Error::Error; };
class IsolationError : public Error { using Error::Error; };
class DegenerateDataError : public Error { using Error::Error; };
class TestError : public Error { using Error::Error; };
class IOError : public Error { using Error::Error; };

/// Non-finite objective. Carries the offending observation index when the
/// surface is sample-backed, and the ascent trajectory prefix when raised
/// from inside an ascent.
class EvaluationError : public Error {
 public:
  explicit EvaluationError(const std::string& what,
                           std::optional<std::size_t> observation = std::nullopt)
      : Error(what), observation_(observation) {}

  std::optional<std::size_t> observation() const { return observation_; }
  const std::vector<Vector>& trajectory() const { return trajectory_; }
  void set_trajectory(std::vector<Vector> t) { trajectory_ = std::move(t); }

 private:
  std::optional<std::size_t> observation_;
  std::vector<Vector> trajectory_;
};

// ---------------------------------------------------------------------------
// Box domain
// ---------------------------------------------------------------------------

struct Box {
  Vector lo;
  Vector hi;

  Box() = default;
  Box(Vector lo_, Vector hi_) : lo(std::move(lo_)), hi(std::move(hi_)) {
    if (lo.size() != hi.size() || lo.size() == 0)
      throw ConfigError("box bounds must be non-empty and of equal dimension");
    for (Eigen::Index j = 0; j < lo.size(); ++j)
      if (!(lo[j] <= hi[j])) throw ConfigError("box bound lo > hi");
  }

  std::size_t dim() const { return static_cast<std::size_t>(lo.size()); }

  bool contains(const Vector& x) const {
    if (x.size() != lo.size()) return false;
    for (Eigen::Index j = 0; j < x.size(); ++j)
      if (!(x[j] >= lo[j] && x[j] <= hi[j])) return false;
    return true;
  }

  Vector clamp(const Vector& x) const { return x.cwiseMax(lo).cwiseMin(hi); }

  Vector center() const { return 0.5 * (lo + hi); }
  double diagonal() const { return (hi - lo).norm(); }
  double volume() const { return (hi - lo).prod(); }

  Box intersect(const Box& other) const {
    return Box(lo.cwiseMax(other.lo), hi.cwiseMin(other.hi));
  }
};

inline Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

// ---------------------------------------------------------------------------
// Surface evaluation
// ---------------------------------------------------------------------------

/// How much of the local expansion to compute.
enum class Order { value = 0, gradient = 1, hessian = 2 };

struct Evaluation {
  double value = 0.0;
  Vector gradient;  // empty unless Order >= gradient
  Matrix hessian;   // empty unless Order == hessian

  static Evaluation zero(std::size_t d, Order order) {
    Evaluation e;
    if (order >= Order::gradient) e.gradient = Vector::Zero(static_cast<Eigen::Index>(d));
    if (order >= Order::hessian)
      e.hessian = Matrix::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    return e;
  }
};

enum class SurfaceKind { population, sample, bootstrap, kde, analytic };

inline const char* to_string(SurfaceKind k) {
  switch (k) {
    case SurfaceKind::population: return "population-analytic";
    case SurfaceKind::sample: return "sample-loglik";
    case SurfaceKind::bootstrap: return "bootstrap-loglik";
    case SurfaceKind::kde: return "kde";
    case SurfaceKind::analytic: return "analytic";
  }
  return "unknown";
}

/// A twice-differentiable scalar objective on a box.
template <class S>
concept ObjectiveSurface = requires(const S& s, const Vector& theta, Order order) {
  { s.evaluate(theta, order) } -> std::same_as<Evaluation>;
  { s.domain() } -> std::convertible_to<const Box&>;
};

template <ObjectiveSurface S>
double value(const S& s, const Vector& theta) {
  return s.evaluate(theta, Order::value).value;
}

template <ObjectiveSurface S>
Vector gradient(const S& s, const Vector& theta) {
  return s.evaluate(theta, Order::gradient).gradient;
}

template <ObjectiveSurface S>
Matrix hessian(const S& s, const Vector& theta) {
  return s.evaluate(theta, Order::hessian).hessian;
}

inline double fd_step(double x) { return 1e-6 * (1.0 + std::abs(x)); }

/// Central finite differences of a scalar function.
inline Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x) {
  Vector g(x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h = fd_step(x[j]);
    Vector xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    g[j] = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

/// Central finite differences of a gradient, symmetrised.
inline Matrix fd_jacobian_sym(const std::function<Vector(const Vector&)>& g, const Vector& x) {
  const Eigen::Index d = x.size();
  Matrix h(d, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const double step = fd_step(x[j]);
    Vector xp = x, xm = x;
    xp[j] += step;
    xm[j] -= step;
    h.col(j) = (g(xp) - g(xm)) / (2.0 * step);
  }
  return 0.5 * (h + h.transpose());
}

/// Objective given by closures. Missing derivative hooks fall back to
/// central finite differences.
class AnalyticSurface {
 public:
  using ValueFn = std::function<double(const Vector&)>;
  using GradFn = std::function<Vector(const Vector&)>;
  using HessFn = std::function<Matrix(const Vector&)>;

  AnalyticSurface(Box domain, ValueFn f, GradFn g = {}, HessFn h = {})
      : domain_(std::move(domain)), f_(std::move(f)), g_(std::move(g)), h_(std::move(h)) {}

  Evaluation evaluate(const Vector& theta, Order order) const {
    if (!domain_.contains(theta)) throw DomainError("parameter outside domain");
    Evaluation e;
    e.value = f_(theta);
    if (!std::isfinite(e.value)) throw EvaluationError("non-finite objective value");
    if (order >= Order::gradient) e.gradient = grad(theta);
    if (order >= Order::hessian) {
      e.hessian = h_ ? h_(theta)
                     : fd_jacobian_sym([this](const Vector& x) { return grad(x); }, theta);
    }
    return e;
  }

  const Box& domain() const { return domain_; }
  SurfaceKind kind() const { return SurfaceKind::analytic; }

 private:
  Vector grad(const Vector& x) const { return g_ ? g_(x) : fd_gradient(f_, x); }

  Box domain_;
  ValueFn f_;
  GradFn g_;
  HessFn h_;
};

// ---------------------------------------------------------------------------
// Randomness
// ---------------------------------------------------------------------------

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Counter-based seed derivation: the stream for (master, a, b) never depends
/// on how many other streams were drawn before it.
inline std::uint64_t stream_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0) {
  return splitmix64(splitmix64(splitmix64(master) ^ (a * 0xd1342543de82ef95ULL)) ^
                    (b + 0x632be59bd9b4e019ULL));
}

inline Rng make_rng(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0) {
  return Rng(stream_seed(master, a, b));
}

// Purpose-specific stream tags, so different stages never share a stream.
namespace streams {
inline constexpr std::uint64_t simulate = 1;
inline constexpr std::uint64_t multistart = 2;
inline constexpr std::uint64_t bootstrap = 3;
inline constexpr std::uint64_t estimate_q = 4;
inline constexpr std::uint64_t registry = 5;
inline constexpr std::uint64_t permutation = 6;
inline constexpr std::uint64_t trial = 7;
inline constexpr std::uint64_t mode_starts = 8;
inline constexpr std::uint64_t basin_gaps = 9;
}  // namespace streams

// ---------------------------------------------------------------------------
// Deterministic parallel loop
// ---------------------------------------------------------------------------

/// Calls fn(i) for i in [0, count). Work is index-addressed, so results
/// written to slot i are independent of scheduling. The first exception
/// thrown by any worker is rethrown on the calling thread.
template <class Fn>
void parallel_for(std::size_t count, unsigned threads, Fn&& fn) {
  if (threads <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(threads, count));
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (;;) {
          const std::size_t i = next.fetch_add(1);
          if (i >= count) return;
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
            next.store(count);
            return;
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

// ---------------------------------------------------------------------------
// Small numerics shared across modules
// ---------------------------------------------------------------------------

/// Empirical-inverse quantile of sorted values: the order statistic at
/// 1-based index ceil(p * B), clamped to [1, B].
inline double order_statistic(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw Error("quantile of empty sample");
  const double b = static_cast<double>(sorted.size());
  const double x = p * b;
  double k = std::ceil(x);
  // p * B that lands on an integer up to rounding must not step one further.
  if (k - 1.0 >= 1.0 && std::abs(x - (k - 1.0)) < 1e-9) k -= 1.0;
  const auto idx = static_cast<std::size_t>(std::clamp(k, 1.0, b));
  return sorted[idx - 1];
}

/// Neumaier-compensated running sum.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      c_ += (sum_ - t) + x;
    else
      c_ += (x - t) + sum_;
    sum_ = t;
  }
  double result() const { return sum_ + c_; }

 private:
  double sum_ = 0.0;
  double c_ = 0.0;
};

inline double sup_norm(const Vector& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }
inline double max_norm(const Matrix& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

inline Vector symmetric_eigenvalues(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues();
}

}  // namespace lopt

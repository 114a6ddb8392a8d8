#pragma once

// Gaussian kernel density estimate, meanshift iteration, the multi-start
// mode estimator with resampled starts, and the bootstrap mode ball.

#include "lopt/boot.hpp"

namespace lopt {

/// Gaussian KDE, optionally with observation weights summing to one.
class KDE {
 public:
  KDE(std::shared_ptr<const Dataset> data, double h, std::vector<double> weights = {})
      : data_(std::move(data)), h_(h), weights_(std::move(weights)) {
    if (!data_ || data_->size() == 0) throw ConfigError("kde requires data");
    if (!(h_ > 0.0)) throw ConfigError("kde bandwidth must be positive");
    if (!weights_.empty() && weights_.size() != data_->size()) throw ConfigError("one kde weight per point");
    const double d = static_cast<double>(data_->dim());
    norm_ = std::pow(2.0 * std::numbers::pi, -0.5 * d) * std::pow(h_, -d);
  }
  KDE(const Dataset& data, double h) : KDE(std::make_shared<const Dataset>(data), h) {}

  double bandwidth() const { return h_; }
  const Dataset& data() const { return *data_; }
  std::size_t dim() const { return data_->dim(); }
  double weight(std::size_t i) const {
    return weights_.empty() ? 1.0 / static_cast<double>(data_->size()) : weights_[i];
  }

  double operator()(const Vector& x) const {
    CompensatedSum s;
    for (std::size_t i = 0; i < data_->size(); ++i) s.add(weight(i) * kernel(i, x));
    return norm_ * s.result();
  }

  /// Kernel-weighted mean of the data at x.
  Vector meanshift_step(const Vector& x) const {
    const auto d = static_cast<Eigen::Index>(dim());
    Vector num = Vector::Zero(d);
    double den = 0.0;
    for (std::size_t i = 0; i < data_->size(); ++i) {
      const double k = weight(i) * kernel(i, x);
      if (k == 0.0) continue;
      den += k;
      const auto row = data_->row(i);
      for (Eigen::Index j = 0; j < d; ++j) num[j] += k * (row[static_cast<std::size_t>(j)] - x[j]);
    }
    if (!(den > 1e-300)) throw IsolationError("meanshift: point is isolated from the data");
    return x + num / den;
  }

  /// Data bounding box inflated by 3h.
  Box support_box() const {
    const auto d = static_cast<Eigen::Index>(dim());
    Vector lo = Vector::Constant(d, std::numeric_limits<double>::infinity()), hi = -lo;
    for (std::size_t i = 0; i < data_->size(); ++i) {
      const Vector r = data_->row_vector(i);
      lo = lo.cwiseMin(r);
      hi = hi.cwiseMax(r);
    }
    return Box(lo.array() - 3.0 * h_, hi.array() + 3.0 * h_);
  }

  /// Same data with multiplicity weights from a resample.
  KDE resampled(std::span<const std::size_t> idx) const {
    std::vector<std::size_t> counts(data_->size(), 0);
    for (std::size_t i : idx) ++counts[i];
    std::vector<std::size_t> keep;
    std::vector<double> w;
    const double inv = 1.0 / static_cast<double>(idx.size());
    for (std::size_t i = 0; i < counts.size(); ++i)
      if (counts[i]) {
        keep.push_back(i);
        w.push_back(static_cast<double>(counts[i]) * inv);
      }
    return KDE(std::make_shared<const Dataset>(data_->subset(keep)), h_, std::move(w));
  }

 private:
  double kernel(std::size_t i, const Vector& x) const {
    const auto row = data_->row(i);
    double q = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) {
      const double u = (row[j] - x[static_cast<Eigen::Index>(j)]) / h_;
      q += u * u;
    }
    return std::exp(-0.5 * q);
  }

  std::shared_ptr<const Dataset> data_;
  double h_;
  std::vector<double> weights_;
  double norm_ = 0.0;
};

struct MeanshiftConfig {
  double tol = 1e-8;
  std::size_t max_iter = 10000;
  bool keep_trajectory = false;
};

struct ModeEstimate {
  Vector location;
  double kde_value = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  std::vector<Vector> trajectory;
  std::vector<double> values;
};

inline ModeEstimate meanshift_run(const KDE& kde, const Vector& start, const MeanshiftConfig& cfg = {}) {
  if (!kde.support_box().contains(start)) throw DomainError("meanshift start outside the inflated data box");
  ModeEstimate out;
  Vector x = start;
  if (cfg.keep_trajectory) {
    out.trajectory.push_back(x);
    out.values.push_back(kde(x));
  }
  std::size_t t = 0;
  while (t < cfg.max_iter) {
    Vector next = kde.meanshift_step(x);
    ++t;
    const double move = (next - x).norm();
    x = std::move(next);
    if (cfg.keep_trajectory) {
      out.trajectory.push_back(x);
      out.values.push_back(kde(x));
    }
    if (move <= cfg.tol) {
      out.converged = true;
      break;
    }
  }
  out.location = std::move(x);
  out.kde_value = kde(out.location);
  out.iterations = t;
  return out;
}

struct ModeSearch {
  ModeEstimate best;
  std::size_t starts = 0;
  std::size_t distinct_starts = 0;
  std::size_t isolated = 0;
};

/// Meanshift from n starts resampled from the data; the convergent with
/// the highest density wins, ties to the earliest draw. Starts that repeat
/// a data point reuse its run.
inline ModeSearch mode_estimate(const KDE& kde, std::uint64_t seed, const MeanshiftConfig& cfg = {},
                                unsigned threads = 1) {
  const std::size_t n = kde.data().size();
  Rng rng = make_rng(seed, streams::mode_starts);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<std::size_t> draws(n);
  for (auto& d : draws) d = pick(rng);
  std::vector<std::size_t> distinct = draws;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

  std::vector<std::optional<ModeEstimate>> runs(distinct.size());
  MeanshiftConfig inner = cfg;
  inner.keep_trajectory = false;
  parallel_for(distinct.size(), threads, [&](std::size_t u) {
    try {
      runs[u] = meanshift_run(kde, kde.data().row_vector(distinct[u]), inner);
    } catch (const IsolationError&) {
    }
  });

  ModeSearch out;
  out.starts = n;
  out.distinct_starts = distinct.size();
  std::optional<std::size_t> best;
  for (std::size_t d : draws) {
    const auto u = static_cast<std::size_t>(std::lower_bound(distinct.begin(), distinct.end(), d) - distinct.begin());
    if (!runs[u]) {
      ++out.isolated;
      continue;
    }
    if (!best || runs[u]->kde_value > runs[*best]->kde_value) best = u;
  }
  if (!best) throw IsolationError("every meanshift start was isolated");
  out.best = *runs[*best];
  return out;
}

inline ModeSearch mode_estimate(const Dataset& data, double h, std::uint64_t seed, const MeanshiftConfig& cfg = {},
                                unsigned threads = 1) {
  return mode_estimate(KDE(data, h), seed, cfg, threads);
}

struct ModeBall {
  Vector center;
  double radius = 0.0;
  double level = 0.95;
  std::size_t B = 0;
  std::size_t dropped = 0;
  std::vector<double> distances;  // sorted

  bool contains(const Vector& x) const { return (x - center).norm() <= radius; }
};

/// Ball around the mode estimate with radius the (1-alpha) empirical
/// quantile of bootstrap mode displacements. Each replicate starts
/// meanshift at the original estimate.
inline ModeBall mode_bootstrap_ci(const KDE& kde, const Vector& center, std::size_t B, double alpha,
                                  std::uint64_t seed, const MeanshiftConfig& cfg = {},
                                  const BootstrapOptions& opt = {}) {
  if (B == 0) throw ConfigError("mode bootstrap requires B >= 1");
  check_alpha(alpha);
  const std::size_t n = kde.data().size();
  MeanshiftConfig inner = cfg;
  inner.keep_trajectory = false;
  std::vector<std::optional<double>> dist(B);
  parallel_for(B, opt.threads, [&](std::size_t b) {
    const KDE star = kde.resampled(bootstrap_indices(n, seed, b));
    try {
      const ModeEstimate m = meanshift_run(star, center, inner);
      if (m.converged) dist[b] = (m.location - center).norm();
    } catch (const Error&) {
    }
  });
  ModeBall ball;
  ball.center = center;
  ball.level = 1.0 - alpha;
  ball.B = B;
  for (const auto& d : dist) {
    if (d)
      ball.distances.push_back(*d);
    else
      ++ball.dropped;
  }
  if (ball.distances.empty()) throw BootstrapError("every mode bootstrap replicate was dropped");
  if (static_cast<double>(ball.dropped) > opt.max_drop_rate * static_cast<double>(B))
    throw BootstrapError("mode bootstrap drop rate exceeds the limit");
  std::sort(ball.distances.begin(), ball.distances.end());
  ball.radius = order_statistic(ball.distances, 1.0 - alpha);
  return ball;
}

enum class BandwidthRule { undersmooth, reference };

inline const char* to_string(BandwidthRule r) { return r == BandwidthRule::undersmooth ? "undersmooth" : "reference"; }

/// 1.06 sigma n^(-1/(d+5.5)) or 1.06 sigma n^(-1/(d+4)); sigma is the mean
/// of the per-coordinate sample standard deviations.
inline double bandwidth_rule(const Dataset& data, BandwidthRule rule) {
  const std::size_t n = data.size(), d = data.dim();
  if (n < 2) throw DegenerateDataError("bandwidth rule needs at least two points");
  double sigma = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += data.row(i)[j];
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double c = data.row(i)[j] - mean;
      ss += c * c;
    }
    sigma += std::sqrt(ss / static_cast<double>(n - 1));
  }
  sigma /= static_cast<double>(d);
  if (!(sigma > 0.0)) throw DegenerateDataError("bandwidth rule: zero sample spread");
  const double dd = static_cast<double>(d);
  const double expo = rule == BandwidthRule::undersmooth ? -1.0 / (dd + 5.5) : -1.0 / (dd + 4.0);
  return 1.06 * sigma * std::pow(static_cast<double>(n), expo);
}

}  // namespace lopt

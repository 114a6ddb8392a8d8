#pragma once

// Parametric objective surfaces: datasets, the Gaussian-mixture family used
// for every fixture, sample and population log-likelihood surfaces, and data
// simulation.

#include "lopt/core.hpp"

#include <array>
#include <fstream>
#include <iomanip>
#include <memory>
#include <numbers>
#include <sstream>

namespace lopt {

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

/// n observations in R^p, stored row-major. Immutable after construction.
class Dataset {
 public:
  Dataset(std::size_t dim, std::vector<double> values) : dim_(dim), values_(std::move(values)) {
    if (dim_ == 0) throw ConfigError("dataset dimension must be >= 1");
    if (values_.empty()) throw ConfigError("dataset must contain at least one observation");
    if (values_.size() % dim_ != 0) throw ConfigError("ragged dataset");
  }

  static Dataset scalar(std::vector<double> xs) { return Dataset(1, std::move(xs)); }

  static Dataset from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw ConfigError("dataset must contain at least one observation");
    const std::size_t p = rows.front().size();
    std::vector<double> v;
    v.reserve(rows.size() * p);
    for (const auto& r : rows) {
      if (r.size() != p) throw ConfigError("observations do not share a dimension");
      v.insert(v.end(), r.begin(), r.end());
    }
    return Dataset(p, std::move(v));
  }

  std::size_t size() const { return values_.size() / dim_; }
  std::size_t dim() const { return dim_; }

  std::span<const double> row(std::size_t i) const {
    return {values_.data() + i * dim_, dim_};
  }
  Vector row_vector(std::size_t i) const {
    return Eigen::Map<const Vector>(values_.data() + i * dim_, static_cast<Eigen::Index>(dim_));
  }
  const std::vector<double>& values() const { return values_; }

  /// Observations selected by index (with repetition).
  Dataset subset(std::span<const std::size_t> idx) const {
    std::vector<double> v;
    v.reserve(idx.size() * dim_);
    for (std::size_t i : idx) {
      auto r = row(i);
      v.insert(v.end(), r.begin(), r.end());
    }
    return Dataset(dim_, std::move(v));
  }

  Dataset concat(const Dataset& other) const {
    if (other.dim_ != dim_) throw ConfigError("datasets differ in observation dimension");
    std::vector<double> v = values_;
    v.insert(v.end(), other.values_.begin(), other.values_.end());
    return Dataset(dim_, std::move(v));
  }

  bool operator==(const Dataset&) const = default;

 private:
  std::size_t dim_;
  std::vector<double> values_;
};

/// One observation per line, whitespace-separated reals.
inline void write_dataset(const Dataset& d, std::ostream& os) {
  os << std::setprecision(17);
  for (std::size_t i = 0; i < d.size(); ++i) {
    auto r = d.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) os << (j ? " " : "") << r[j];
    os << '\n';
  }
}

inline void write_dataset(const Dataset& d, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IOError("cannot write dataset: " + path);
  write_dataset(d, os);
  if (!os) throw IOError("write failed: " + path);
}

inline Dataset read_dataset(std::istream& is) {
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::vector<double> r;
    double x;
    while (ls >> x) r.push_back(x);
    if (!ls.eof()) throw IOError("malformed dataset line: " + line);
    if (!r.empty()) rows.push_back(std::move(r));
  }
  return Dataset::from_rows(rows);
}

inline Dataset read_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IOError("cannot read dataset: " + path);
  return read_dataset(is);
}

// ---------------------------------------------------------------------------
// Truth distribution: 1-D Gaussian mixture
// ---------------------------------------------------------------------------

inline double normal_log_pdf(double x, double mu, double sd) {
  const double z = (x - mu) / sd;
  return -0.5 * z * z - std::log(sd) - 0.5 * std::log(2.0 * std::numbers::pi);
}

inline double normal_pdf(double x, double mu, double sd) { return std::exp(normal_log_pdf(x, mu, sd)); }

struct GaussianMixture1D {
  std::vector<double> weights;
  std::vector<double> means;
  std::vector<double> sds;

  void validate() const {
    if (weights.empty() || weights.size() != means.size() || weights.size() != sds.size())
      throw ConfigError("mixture components must have matching weights, means and sds");
    double s = 0.0;
    for (std::size_t k = 0; k < weights.size(); ++k) {
      if (!(weights[k] >= 0.0)) throw ConfigError("mixture weight must be non-negative");
      if (!(sds[k] > 0.0)) throw ConfigError("mixture sd must be positive");
      s += weights[k];
    }
    if (std::abs(s - 1.0) > 1e-12) throw ConfigError("mixture weights must sum to 1");
  }

  double pdf(double x) const {
    double p = 0.0;
    for (std::size_t k = 0; k < weights.size(); ++k) p += weights[k] * normal_pdf(x, means[k], sds[k]);
    return p;
  }

  double mean() const {
    double m = 0.0;
    for (std::size_t k = 0; k < weights.size(); ++k) m += weights[k] * means[k];
    return m;
  }

  double draw(Rng& rng) const {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> z(0.0, 1.0);
    const double pick = u(rng);
    std::size_t k = 0;
    double acc = weights[0];
    while (pick >= acc && k + 1 < weights.size()) acc += weights[++k];
    return means[k] + sds[k] * z(rng);
  }
};

/// n IID draws; a pure function of (truth, n, seed).
inline Dataset simulate(const GaussianMixture1D& truth, std::size_t n, std::uint64_t seed) {
  truth.validate();
  if (n == 0) throw ConfigError("simulate requires n >= 1");
  Rng rng = make_rng(seed, streams::simulate);
  std::vector<double> xs(n);
  for (auto& x : xs) x = truth.draw(rng);
  return Dataset::scalar(std::move(xs));
}

// ---------------------------------------------------------------------------
// Fit model: Gaussian mixture with common fixed sd
// ---------------------------------------------------------------------------

/// A k-component 1-D Gaussian mixture with a common, fixed sd. Each mean is
/// either free or pinned; the weights are either free or pinned. The
/// parameter vector lists free means in component order, followed (when
/// weights are free) by the weights of components 2..k; component 1 takes
/// the remainder.
class GaussianMixtureModel {
 public:
  struct Spec {
    std::vector<double> means;     // pinned values (ignored where free)
    std::vector<bool> free_mean;
    std::vector<double> weights;   // pinned values (ignored if free_weights)
    bool free_weights = false;
    double sd = 1.0;
    std::vector<double> mean_lo, mean_hi;  // per free mean
    double weight_lo = 0.005, weight_hi = 0.995;
  };

  static constexpr std::size_t kMaxComponents = 8;

  explicit GaussianMixtureModel(Spec spec) : spec_(std::move(spec)) {
    const std::size_t k = spec_.means.size();
    if (k == 0 || k > kMaxComponents || spec_.free_mean.size() != k)
      throw ConfigError("mixture model: bad component count");
    if (!(spec_.sd > 0.0)) throw ConfigError("mixture model: sd must be positive");
    inv_sd_ = 1.0 / spec_.sd;
    log_norm_ = std::log(spec_.sd) + 0.5 * std::log(2.0 * std::numbers::pi);
    if (!spec_.free_weights) {
      if (spec_.weights.size() != k) throw ConfigError("mixture model: pinned weights missing");
      double s = 0.0;
      for (double w : spec_.weights) s += w;
      if (std::abs(s - 1.0) > 1e-12) throw ConfigError("mixture model: weights must sum to 1");
    }
    for (std::size_t j = 0; j < k; ++j)
      if (spec_.free_mean[j]) free_mean_idx_.push_back(j);
    if (spec_.mean_lo.size() != free_mean_idx_.size() || spec_.mean_hi.size() != free_mean_idx_.size())
      throw ConfigError("mixture model: one bound pair per free mean required");
    const std::size_t d = free_mean_idx_.size() + (spec_.free_weights ? k - 1 : 0);
    if (d == 0) throw ConfigError("mixture model has no free parameters");
    Vector lo(static_cast<Eigen::Index>(d)), hi(static_cast<Eigen::Index>(d));
    std::size_t i = 0;
    for (std::size_t f = 0; f < free_mean_idx_.size(); ++f, ++i) {
      lo[i] = spec_.mean_lo[f];
      hi[i] = spec_.mean_hi[f];
    }
    if (spec_.free_weights)
      for (std::size_t j = 1; j < k; ++j, ++i) {
        lo[i] = spec_.weight_lo;
        hi[i] = spec_.weight_hi;
      }
    domain_ = Box(lo, hi);
  }

  std::size_t dim() const { return domain_.dim(); }
  std::size_t components() const { return spec_.means.size(); }
  const Box& domain() const { return domain_; }
  const Spec& spec() const { return spec_; }
  double sd() const { return spec_.sd; }
  bool free_weights() const { return spec_.free_weights; }
  const std::vector<std::size_t>& free_means() const { return free_mean_idx_; }

  /// Full component means and weights for a parameter vector.
  void unpack(const Vector& theta, std::vector<double>& means, std::vector<double>& weights) const {
    const std::size_t k = components();
    means = spec_.means;
    std::size_t i = 0;
    for (std::size_t j : free_mean_idx_) means[j] = theta[static_cast<Eigen::Index>(i++)];
    if (spec_.free_weights) {
      weights.assign(k, 0.0);
      double rest = 0.0;
      for (std::size_t j = 1; j < k; ++j) {
        weights[j] = theta[static_cast<Eigen::Index>(i++)];
        rest += weights[j];
      }
      weights[0] = 1.0 - rest;
    } else {
      weights = spec_.weights;
    }
  }

  Vector pack(const std::vector<double>& means, const std::vector<double>& weights) const {
    Vector theta(static_cast<Eigen::Index>(dim()));
    std::size_t i = 0;
    for (std::size_t j : free_mean_idx_) theta[static_cast<Eigen::Index>(i++)] = means[j];
    if (spec_.free_weights)
      for (std::size_t j = 1; j < components(); ++j) theta[static_cast<Eigen::Index>(i++)] = weights[j];
    return theta;
  }

  /// Per-parameter quantities shared by every observation.
  struct Context {
    std::array<double, kMaxComponents> mean{};
    std::array<double, kMaxComponents> weight{};
    std::array<double, kMaxComponents> log_weight{};
  };

  Context prepare(const Vector& theta) const {
    Context c;
    std::vector<double> means, weights;
    unpack(theta, means, weights);
    for (std::size_t j = 0; j < components(); ++j) {
      c.mean[j] = means[j];
      c.weight[j] = weights[j];
      c.log_weight[j] = std::log(weights[j]);
    }
    return c;
  }

  /// Adds w * (log p, score, Hessian) of one observation into acc and
  /// returns the unweighted log density.
  double accumulate(const Context& c, std::span<const double> x, double w, Order order,
                    Evaluation& acc) const {
    const std::size_t k = components();
    std::array<double, kMaxComponents> logphi, r;
    const double xv = x[0];
    double amax = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) {
      const double z = (xv - c.mean[j]) * inv_sd_;
      logphi[j] = -0.5 * z * z - log_norm_;
      r[j] = c.log_weight[j] + logphi[j];
      amax = std::max(amax, r[j]);
    }
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      r[j] = std::exp(r[j] - amax);
      s += r[j];
    }
    const double logp = amax + std::log(s);
    acc.value += w * logp;
    if (order == Order::value || !std::isfinite(logp)) return logp;

    // Responsibilities r_j = w_j phi_j / p, and u_j = phi_j / p.
    std::array<double, kMaxComponents> u;
    const double inv_s = 1.0 / s;
    for (std::size_t j = 0; j < k; ++j) {
      r[j] *= inv_s;
      u[j] = c.weight[j] > 0.0 ? r[j] / c.weight[j] : std::exp(logphi[j] - logp);
    }
    const double inv_var = inv_sd_ * inv_sd_;

    // Score: derivatives of p divided by p, in free coordinates.
    const std::size_t nm = free_mean_idx_.size();
    const std::size_t d = dim();
    std::array<double, 2 * kMaxComponents> g;
    for (std::size_t f = 0; f < nm; ++f) {
      const std::size_t j = free_mean_idx_[f];
      g[f] = r[j] * (xv - c.mean[j]) * inv_var;
    }
    if (spec_.free_weights)
      for (std::size_t j = 1; j < k; ++j) g[nm + j - 1] = u[j] - u[0];
    for (std::size_t a = 0; a < d; ++a) acc.gradient[static_cast<Eigen::Index>(a)] += w * g[a];
    if (order == Order::gradient) return logp;

    // Hessian of log p = (Hessian of p)/p - score score^T.
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = a; b < d; ++b) {
        double hp = 0.0;
        if (a < nm && b < nm) {
          if (a == b) {
            const std::size_t j = free_mean_idx_[a];
            const double z = (xv - c.mean[j]) * inv_var;
            hp = r[j] * (z * z - inv_var);
          }
        } else if (a < nm) {
          const std::size_t jm = free_mean_idx_[a];
          const std::size_t jw = b - nm + 1;
          if (jm == jw) hp += u[jw] * (xv - c.mean[jw]) * inv_var;
          if (jm == 0) hp -= u[0] * (xv - c.mean[0]) * inv_var;
        }
        const double v = w * (hp - g[a] * g[b]);
        acc.hessian(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) += v;
        if (b != a) acc.hessian(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) += v;
      }
    }
    return logp;
  }

 private:
  Spec spec_;
  double inv_sd_ = 1.0;
  double log_norm_ = 0.0;
  std::vector<std::size_t> free_mean_idx_;
  Box domain_;
};

/// Pointwise log-density model with analytic derivatives.
/// prepare(theta) hoists per-parameter work; accumulate adds one weighted
/// observation's contribution and returns its log density.
template <class M>
concept PointModel = requires(const M& m, const Vector& theta, std::span<const double> x, double w,
                              Order order, Evaluation& acc) {
  { m.dim() } -> std::convertible_to<std::size_t>;
  { m.domain() } -> std::convertible_to<const Box&>;
  { m.accumulate(m.prepare(theta), x, w, order, acc) } -> std::convertible_to<double>;
};

// ---------------------------------------------------------------------------
// Sample-backed surfaces
// ---------------------------------------------------------------------------

/// Weighted average of per-observation log densities. With uniform weights
/// 1/n this is the sample log-likelihood; multiplicity weights give a
/// bootstrap surface; quadrature nodes weighted by a truth density give the
/// population surface.
template <PointModel Model>
class SampleSurface {
 public:
  SampleSurface(Model model, std::shared_ptr<const Dataset> data, SurfaceKind kind = SurfaceKind::sample,
                std::vector<double> weights = {})
      : model_(std::move(model)), data_(std::move(data)), kind_(kind), weights_(std::move(weights)) {
    if (!data_) throw ConfigError("surface requires a dataset");
    if (!weights_.empty() && weights_.size() != data_->size())
      throw ConfigError("one weight per observation required");
  }

  SampleSurface(Model model, const Dataset& data)
      : SampleSurface(std::move(model), std::make_shared<const Dataset>(data)) {}

  Evaluation evaluate(const Vector& theta, Order order) const {
    check_domain(theta);
    Evaluation acc = Evaluation::zero(model_.dim(), order);
    CompensatedSum total;
    const std::size_t n = data_->size();
    const double uniform = 1.0 / static_cast<double>(n);
    const auto ctx = model_.prepare(theta);
    for (std::size_t i = 0; i < n; ++i) {
      const double w = weights_.empty() ? uniform : weights_[i];
      if (w == 0.0) continue;
      const double before = acc.value;
      acc.value = 0.0;
      const double lp = model_.accumulate(ctx, data_->row(i), w, order, acc);
      if (!std::isfinite(lp))
        throw EvaluationError("non-finite density at observation " + std::to_string(i), i);
      total.add(acc.value);
      acc.value = before;
    }
    acc.value = total.result();
    return acc;
  }

  /// Unweighted log p, score and Hessian of observation i.
  Evaluation observation(const Vector& theta, std::size_t i, Order order) const {
    check_domain(theta);
    Evaluation acc = Evaluation::zero(model_.dim(), order);
    const double lp = model_.accumulate(model_.prepare(theta), data_->row(i), 1.0, order, acc);
    if (!std::isfinite(lp))
      throw EvaluationError("non-finite density at observation " + std::to_string(i), i);
    return acc;
  }

  const Box& domain() const { return model_.domain(); }
  SurfaceKind kind() const { return kind_; }
  const Model& model() const { return model_; }
  const Dataset& data() const { return *data_; }
  std::shared_ptr<const Dataset> data_ptr() const { return data_; }
  std::size_t size() const { return data_->size(); }
  double weight(std::size_t i) const {
    return weights_.empty() ? 1.0 / static_cast<double>(data_->size()) : weights_[i];
  }
  const std::vector<double>& weights() const { return weights_; }

  /// Resample of the underlying data expressed as multiplicity weights over
  /// the distinct selected observations.
  SampleSurface resampled(std::span<const std::size_t> idx) const {
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
    return SampleSurface(model_, std::make_shared<const Dataset>(data_->subset(keep)),
                         SurfaceKind::bootstrap, std::move(w));
  }

 private:
  void check_domain(const Vector& theta) const {
    if (!model_.domain().contains(theta)) throw DomainError("parameter outside domain");
  }

  Model model_;
  std::shared_ptr<const Dataset> data_;
  SurfaceKind kind_;
  std::vector<double> weights_;
};

/// Composite Gauss-Legendre nodes on [a, b].
inline void gauss_legendre_composite(double a, double b, double panel_width, std::vector<double>& nodes,
                                     std::vector<double>& weights) {
  // 8-point rule on [-1, 1]
  static constexpr double x8[4] = {0.1834346424956498, 0.5255324099163290, 0.7966664774136267,
                                   0.9602898564975363};
  static constexpr double w8[4] = {0.3626837833783620, 0.3137066458778873, 0.2223810344533745,
                                   0.1012285362903763};
  const auto panels = static_cast<std::size_t>(std::ceil((b - a) / panel_width - 1e-9));
  const double h = (b - a) / static_cast<double>(panels);
  nodes.clear();
  weights.clear();
  for (std::size_t p = 0; p < panels; ++p) {
    const double c = a + (static_cast<double>(p) + 0.5) * h;
    for (int s = 3; s >= 0; --s) {
      nodes.push_back(c - 0.5 * h * x8[s]);
      weights.push_back(0.5 * h * w8[s]);
    }
    for (int s = 0; s < 4; ++s) {
      nodes.push_back(c + 0.5 * h * x8[s]);
      weights.push_back(0.5 * h * w8[s]);
    }
  }
}

/// Population surface L(theta) = E log p(X; theta), X ~ truth, evaluated by
/// a fixed composite Gauss-Legendre rule over [min mu - 10 sd, max mu + 10 sd]
/// with panels of a quarter of the smallest truth sd. A fixed node set keeps
/// the surface exactly differentiable in theta.
template <PointModel Model>
SampleSurface<Model> population_surface(Model model, const GaussianMixture1D& truth) {
  truth.validate();
  double a = std::numeric_limits<double>::infinity(), b = -a, sd_min = a;
  for (std::size_t k = 0; k < truth.means.size(); ++k) {
    a = std::min(a, truth.means[k] - 10.0 * truth.sds[k]);
    b = std::max(b, truth.means[k] + 10.0 * truth.sds[k]);
    sd_min = std::min(sd_min, truth.sds[k]);
  }
  std::vector<double> nodes, qw;
  gauss_legendre_composite(a, b, 0.25 * sd_min, nodes, qw);
  for (std::size_t i = 0; i < nodes.size(); ++i) qw[i] *= truth.pdf(nodes[i]);
  return SampleSurface<Model>(std::move(model), std::make_shared<const Dataset>(Dataset::scalar(nodes)),
                              SurfaceKind::population, std::move(qw));
}

// ---------------------------------------------------------------------------
// Fixtures
// ---------------------------------------------------------------------------

namespace fixtures {

/// Three-component truth: weights (0.5, 0.45, 0.05), means (0, 0.75, 3), sd 0.2.
inline GaussianMixture1D figure1_truth() {
  return {{0.5, 0.45, 0.05}, {0.0, 0.75, 3.0}, {0.2, 0.2, 0.2}};
}

/// Two-component fit: first mean pinned at 0, both sds 0.2, free (mu2, rho).
inline GaussianMixtureModel figure1_fit(double mu_lo = -1.0, double mu_hi = 5.0) {
  GaussianMixtureModel::Spec s;
  s.means = {0.0, 0.0};
  s.free_mean = {false, true};
  s.free_weights = true;
  s.sd = 0.2;
  s.mean_lo = {mu_lo};
  s.mean_hi = {mu_hi};
  return GaussianMixtureModel(std::move(s));
}

/// N(theta, 1) location model.
inline GaussianMixtureModel normal_mean(double lo = -10.0, double hi = 10.0) {
  GaussianMixtureModel::Spec s;
  s.means = {0.0};
  s.free_mean = {true};
  s.weights = {1.0};
  s.sd = 1.0;
  s.mean_lo = {lo};
  s.mean_hi = {hi};
  return GaussianMixtureModel(std::move(s));
}

inline GaussianMixture1D standard_normal() { return {{1.0}, {0.0}, {1.0}}; }

/// Two free means and a free second weight, common sd.
inline GaussianMixtureModel two_means(double sd, double lo, double hi) {
  GaussianMixtureModel::Spec s;
  s.means = {0.0, 0.0};
  s.free_mean = {true, true};
  s.free_weights = true;
  s.sd = sd;
  s.mean_lo = {lo, lo};
  s.mean_hi = {hi, hi};
  return GaussianMixtureModel(std::move(s));
}

}  // namespace fixtures

// ---------------------------------------------------------------------------
// Free-function entry points
// ---------------------------------------------------------------------------

template <PointModel Model>
double eval_loglik(const Model& model, const Dataset& data, const Vector& theta) {
  return SampleSurface<Model>(model, data).evaluate(theta, Order::value).value;
}

template <PointModel Model>
std::pair<Vector, Matrix> eval_score_hessian(const Model& model, const Dataset& data, const Vector& theta) {
  auto e = SampleSurface<Model>(model, data).evaluate(theta, Order::hessian);
  return {std::move(e.gradient), std::move(e.hessian)};
}

}  // namespace lopt

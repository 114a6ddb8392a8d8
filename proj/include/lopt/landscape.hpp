#pragma once

// Local-maxima registry, basin-of-attraction rasters, basin probabilities
// and the precision set built from them.

#include "lopt/ascent.hpp"

namespace lopt {

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

struct Maximum {
  Vector location;
  double value = 0.0;
};

/// Deduplicated local maxima, highest value first.
class MaximaRegistry {
 public:
  MaximaRegistry() = default;
  MaximaRegistry(std::vector<Maximum> maxima, double merge_radius)
      : maxima_(std::move(maxima)), merge_radius_(merge_radius) {
    sort_maxima(maxima_);
  }

  std::size_t size() const { return maxima_.size(); }
  bool empty() const { return maxima_.empty(); }
  const Maximum& operator[](std::size_t i) const { return maxima_[i]; }
  const std::vector<Maximum>& maxima() const { return maxima_; }
  double merge_radius() const { return merge_radius_; }

  /// Index of the nearest maximum within merge_radius of x.
  std::optional<std::size_t> nearest(const Vector& x) const {
    std::optional<std::size_t> best;
    double best_d = merge_radius_;
    for (std::size_t l = 0; l < maxima_.size(); ++l) {
      const double d = (maxima_[l].location - x).norm();
      if (d <= best_d) {
        best_d = d;
        best = l;
      }
    }
    return best;
  }

  /// Values within this relative gap count as tied and are ordered by
  /// location instead.
  static constexpr double kTieTolerance = 1e-12;

  static void sort_maxima(std::vector<Maximum>& m) {
    std::sort(m.begin(), m.end(), [](const Maximum& a, const Maximum& b) { return a.value > b.value; });
    auto lex = [](const Maximum& a, const Maximum& b) {
      return std::lexicographical_compare(a.location.begin(), a.location.end(), b.location.begin(),
                                          b.location.end());
    };
    for (std::size_t i = 0; i < m.size();) {
      std::size_t j = i + 1;
      while (j < m.size() && m[i].value - m[j].value <= kTieTolerance * (1.0 + std::abs(m[i].value))) ++j;
      std::sort(m.begin() + static_cast<std::ptrdiff_t>(i), m.begin() + static_cast<std::ptrdiff_t>(j), lex);
      i = j;
    }
  }

 private:
  std::vector<Maximum> maxima_;
  double merge_radius_ = 0.0;
};

inline double default_merge_radius(const Box& domain) { return 1e-3 * domain.diagonal(); }

// ---------------------------------------------------------------------------
// Lattice
// ---------------------------------------------------------------------------

/// Cell-centred rectangular lattice over a box.
class Grid {
 public:
  Grid() = default;
  Grid(Box box, std::vector<std::size_t> resolution) : box_(std::move(box)), res_(std::move(resolution)) {
    if (res_.size() != box_.dim()) throw ConfigError("grid: one resolution per axis required");
    cells_ = 1;
    for (std::size_t r : res_) {
      if (r == 0) throw ConfigError("grid: resolution must be >= 1");
      cells_ *= r;
    }
  }
  Grid(Box box, std::size_t per_axis) : Grid(box, std::vector<std::size_t>(box.dim(), per_axis)) {}

  const Box& box() const { return box_; }
  const std::vector<std::size_t>& resolution() const { return res_; }
  std::size_t dim() const { return res_.size(); }
  std::size_t cells() const { return cells_; }

  double step(std::size_t j) const {
    const auto jj = static_cast<Eigen::Index>(j);
    return (box_.hi[jj] - box_.lo[jj]) / static_cast<double>(res_[j]);
  }
  double cell_volume() const {
    double v = 1.0;
    for (std::size_t j = 0; j < dim(); ++j) v *= step(j);
    return v;
  }

  /// Axis indices of a flat cell index; axis 0 varies fastest.
  std::vector<std::size_t> unflatten(std::size_t flat) const {
    std::vector<std::size_t> idx(dim());
    for (std::size_t j = 0; j < dim(); ++j) {
      idx[j] = flat % res_[j];
      flat /= res_[j];
    }
    return idx;
  }
  std::size_t flatten(const std::vector<std::size_t>& idx) const {
    std::size_t flat = 0;
    for (std::size_t j = dim(); j-- > 0;) flat = flat * res_[j] + idx[j];
    return flat;
  }

  Vector center(std::size_t flat) const {
    const auto idx = unflatten(flat);
    Vector x(static_cast<Eigen::Index>(dim()));
    for (std::size_t j = 0; j < dim(); ++j)
      x[static_cast<Eigen::Index>(j)] =
          box_.lo[static_cast<Eigen::Index>(j)] + (static_cast<double>(idx[j]) + 0.5) * step(j);
    return x;
  }

  /// Cell containing x, if x lies in the box.
  std::optional<std::size_t> locate(const Vector& x) const {
    if (!box_.contains(x)) return std::nullopt;
    std::vector<std::size_t> idx(dim());
    for (std::size_t j = 0; j < dim(); ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      const double t = (x[jj] - box_.lo[jj]) / step(j);
      idx[j] = std::min(static_cast<std::size_t>(std::max(t, 0.0)), res_[j] - 1);
    }
    return flatten(idx);
  }

 private:
  Box box_;
  std::vector<std::size_t> res_;
  std::size_t cells_ = 0;
};

// ---------------------------------------------------------------------------
// Registry construction
// ---------------------------------------------------------------------------

struct RegistryOptions {
  std::size_t grid_per_axis = 16;  // deterministic sweep, skipped above 65536 points
  std::optional<double> merge_radius;
  unsigned threads = 1;
};

/// Registry from the local-max convergents of `probes` random starts plus a
/// deterministic grid sweep over the domain.
template <ObjectiveSurface S>
MaximaRegistry build_registry(const S& surface, const Initializer& init, std::size_t probes,
                              const AscentConfig& cfg, std::uint64_t seed, const RegistryOptions& opt = {}) {
  if (probes == 0) throw ConfigError("build_registry requires probes >= 1");
  const Box& domain = surface.domain();
  std::vector<Vector> starts;
  for (std::size_t r = 0; r < probes; ++r) {
    Rng rng = make_rng(seed, streams::registry, r);
    starts.push_back(init.draw(rng));
  }
  const double sweep = std::pow(static_cast<double>(opt.grid_per_axis), static_cast<double>(domain.dim()));
  if (opt.grid_per_axis > 0 && sweep <= 65536.0) {
    Grid g(domain, opt.grid_per_axis);
    for (std::size_t c = 0; c < g.cells(); ++c) starts.push_back(g.center(c));
  }

  std::vector<std::optional<Maximum>> found(starts.size());
  parallel_for(starts.size(), opt.threads, [&](std::size_t i) {
    try {
      const AscentResult res = ascend(surface, starts[i], cfg);
      if (res.converged && res.classification == Classification::local_max)
        found[i] = Maximum{res.convergent, res.value};
    } catch (const Error&) {
    }
  });

  std::vector<Maximum> cand;
  for (auto& f : found)
    if (f) cand.push_back(std::move(*f));
  if (cand.empty()) throw LandscapeError("no local maximum found");
  // Highest values first, so each cluster is represented by its best point.
  std::stable_sort(cand.begin(), cand.end(), [](const Maximum& a, const Maximum& b) { return a.value > b.value; });
  const double radius = opt.merge_radius.value_or(default_merge_radius(domain));
  std::vector<Maximum> kept;
  for (auto& m : cand) {
    const bool dup = std::any_of(kept.begin(), kept.end(),
                                 [&](const Maximum& k) { return (k.location - m.location).norm() <= radius; });
    if (!dup) kept.push_back(std::move(m));
  }
  return MaximaRegistry(std::move(kept), radius);
}

// ---------------------------------------------------------------------------
// Basins
// ---------------------------------------------------------------------------

struct BasinMap {
  static constexpr int kBoundary = -1;    // converged, but not to a registered maximum
  static constexpr int kUnresolved = -2;  // ascent error or iteration limit

  Grid grid;
  std::vector<int> labels;  // one per cell

  int label_at(const Vector& x) const {
    const auto c = grid.locate(x);
    return c ? labels[*c] : kUnresolved;
  }

  std::size_t count(int label) const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
  }

  double area_fraction(int label) const {
    return static_cast<double>(count(label)) / static_cast<double>(labels.size());
  }
};

/// Ascends every cell centre and labels it by the registered maximum its
/// convergent lands on.
template <ObjectiveSurface S>
BasinMap map_basins(const S& surface, const MaximaRegistry& registry, const Grid& grid, const AscentConfig& cfg,
                    unsigned threads = 1) {
  if (registry.empty()) throw LandscapeError("map_basins requires a non-empty registry");
  BasinMap map{grid, std::vector<int>(grid.cells(), BasinMap::kUnresolved)};
  parallel_for(grid.cells(), threads, [&](std::size_t c) {
    try {
      const AscentResult res = ascend(surface, surface.domain().clamp(grid.center(c)), cfg);
      if (res.termination == Termination::max_iter) return;
      const auto l = res.classification == Classification::local_max ? registry.nearest(res.convergent)
                                                                      : std::nullopt;
      map.labels[c] = l ? static_cast<int>(*l) : BasinMap::kBoundary;
    } catch (const Error&) {
    }
  });
  return map;
}

template <ObjectiveSurface S>
BasinMap map_basins(const S& surface, const MaximaRegistry& registry, std::size_t per_axis,
                    const AscentConfig& cfg, unsigned threads = 1) {
  return map_basins(surface, registry, Grid(surface.domain(), per_axis), cfg, threads);
}

enum class QMethod { monte_carlo, grid_weighted };

inline const char* to_string(QMethod m) { return m == QMethod::monte_carlo ? "monte-carlo" : "grid-weighted"; }

struct BasinProbabilities {
  std::vector<double> q;
  std::vector<double> se;  // binomial, zero for the grid-weighted method
  std::vector<std::size_t> tally;
  std::size_t unclassified = 0;
  std::size_t draws = 0;
  QMethod method = QMethod::monte_carlo;

  double total() const {
    double s = 0.0;
    for (double v : q) s += v;
    return s;
  }
};

/// Monte Carlo basin probabilities: R draws from init, each ascended and
/// tallied by registered maximum. Saddle, boundary and failed outcomes are
/// counted as unclassified.
template <ObjectiveSurface S>
BasinProbabilities estimate_q(const S& surface, const MaximaRegistry& registry, const Initializer& init,
                              std::size_t R, const AscentConfig& cfg, std::uint64_t seed, unsigned threads = 1) {
  if (R == 0) throw ConfigError("estimate_q requires R >= 1");
  std::vector<int> label(R, -1);
  parallel_for(R, threads, [&](std::size_t r) {
    Rng rng = make_rng(seed, streams::estimate_q, r);
    const Vector start = init.draw(rng);
    try {
      const AscentResult res = ascend(surface, start, cfg);
      if (res.converged && res.classification == Classification::local_max)
        if (auto l = registry.nearest(res.convergent)) label[r] = static_cast<int>(*l);
    } catch (const Error&) {
    }
  });
  BasinProbabilities out;
  out.method = QMethod::monte_carlo;
  out.draws = R;
  out.tally.assign(registry.size(), 0);
  for (int l : label) {
    if (l < 0)
      ++out.unclassified;
    else
      ++out.tally[static_cast<std::size_t>(l)];
  }
  const double rr = static_cast<double>(R);
  for (std::size_t t : out.tally) {
    const double q = static_cast<double>(t) / rr;
    out.q.push_back(q);
    out.se.push_back(std::sqrt(q * (1.0 - q) / rr));
  }
  return out;
}

/// Grid-weighted basin probabilities: each cell contributes the init
/// density at its centre times its volume, normalised over the grid.
inline BasinProbabilities estimate_q(const BasinMap& map, std::size_t maxima, const Initializer& init) {
  BasinProbabilities out;
  out.method = QMethod::grid_weighted;
  out.q.assign(maxima, 0.0);
  out.se.assign(maxima, 0.0);
  out.tally.assign(maxima, 0);
  out.draws = map.grid.cells();
  CompensatedSum total;
  std::vector<CompensatedSum> mass(maxima);
  const double vol = map.grid.cell_volume();
  for (std::size_t c = 0; c < map.grid.cells(); ++c) {
    const auto dens = init.density(map.grid.center(c));
    if (!dens) throw ConfigError("grid-weighted basin probabilities need an initializer with a density");
    const double w = *dens * vol;
    total.add(w);
    const int l = map.labels[c];
    if (l >= 0 && static_cast<std::size_t>(l) < maxima) {
      mass[static_cast<std::size_t>(l)].add(w);
      ++out.tally[static_cast<std::size_t>(l)];
    } else {
      ++out.unclassified;
    }
  }
  const double t = total.result();
  if (!(t > 0.0)) throw ConfigError("initializer puts no mass on the grid");
  for (std::size_t l = 0; l < maxima; ++l) out.q[l] = mass[l].result() / t;
  return out;
}

// ---------------------------------------------------------------------------
// Precision set
// ---------------------------------------------------------------------------

struct PrecisionSet {
  std::size_t M = 1;
  double delta = 0.0;
  std::size_t N = 1;
  bool saturated = false;        // no N met the bound; N = K
  std::vector<double> cumulative;  // Q_1 .. Q_K
  std::vector<std::size_t> members;
};

/// (1 - Q)^M with Q clamped into [0, 1].
inline double miss_probability(double Q, std::size_t M) {
  return std::pow(std::clamp(1.0 - Q, 0.0, 1.0), static_cast<double>(M));
}

/// Smallest N with (1 - Q_N)^M <= delta, Q_N the mass of the top N basins.
inline PrecisionSet precision_set(std::span<const double> q, std::size_t M, double delta) {
  if (q.empty()) throw LandscapeError("precision set of an empty registry");
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("precision set: delta must lie in (0,1)");
  if (M == 0) throw ConfigError("precision set: M must be >= 1");
  double sum = 0.0;
  for (double v : q) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("precision set: basin probabilities must lie in [0,1]");
    sum += v;
  }
  if (!(sum > 0.0)) throw ConfigError("precision set: basin probabilities sum to zero");

  PrecisionSet ps;
  ps.M = M;
  ps.delta = delta;
  CompensatedSum Q;
  std::optional<std::size_t> n;
  for (std::size_t l = 0; l < q.size(); ++l) {
    Q.add(q[l]);
    ps.cumulative.push_back(Q.result());
    if (!n && miss_probability(Q.result(), M) <= delta) n = l + 1;
  }
  ps.N = n.value_or(q.size());
  ps.saturated = !n;
  for (std::size_t l = 0; l < ps.N; ++l) ps.members.push_back(l);
  return ps;
}

inline PrecisionSet precision_set(const MaximaRegistry& registry, const BasinProbabilities& q, std::size_t M,
                                  double delta) {
  if (registry.empty()) throw LandscapeError("precision set of an empty registry");
  if (q.q.size() != registry.size()) throw ConfigError("precision set: one probability per maximum required");
  return precision_set(std::span<const double>(q.q), M, delta);
}

/// Smallest M with (1 - ball_mass)^M <= delta.
inline std::size_t min_initializations(double delta, double ball_mass) {
  if (!(delta > 0.0 && delta < 1.0)) throw DomainError("min_initializations: delta must lie in (0,1)");
  if (!(ball_mass > 0.0 && ball_mass < 1.0)) throw DomainError("min_initializations: ball mass must lie in (0,1)");
  const double est = std::ceil(std::log(delta) / std::log1p(-ball_mass));
  auto M = static_cast<std::size_t>(std::max(est, 1.0));
  // The logarithm ratio can land one off after rounding; settle on the
  // defining inequality.
  while (std::pow(1.0 - ball_mass, static_cast<double>(M)) > delta) ++M;
  while (M > 1 && std::pow(1.0 - ball_mass, static_cast<double>(M - 1)) <= delta) --M;
  return M;
}

}  // namespace lopt

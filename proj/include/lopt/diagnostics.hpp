#pragma once

// Grid-measured gaps between a sample surface and the population surface,
// basin-probability gaps between two initializers, and boundary-tube
// masses. Every sup norm here is a grid maximum, a lower bound on the
// true supremum.

#include "lopt/landscape.hpp"

namespace lopt {

struct UncertaintyLedger {
  // derivative gaps on a grid of cell centres
  double eps1 = 0.0;
  double eps2 = 0.0;
  std::vector<std::size_t> gap_resolution;

  // basin-probability gap and tube masses
  double eps3 = 0.0;
  std::vector<double> basin_gaps;
  std::vector<double> radii;
  std::vector<double> tube_mass;
  std::size_t draws = 0;

  // initialization loss (1 - q1)^M
  double init_loss = 0.0;
};

template <ObjectiveSurface P, ObjectiveSurface S>
void measure_gaps(const P& pop, const S& sample, const Grid& grid, UncertaintyLedger& out, unsigned threads = 1) {
  const Box& a = pop.domain();
  const Box& b = sample.domain();
  if (a.lo != b.lo || a.hi != b.hi) throw ConfigError("measure_gaps: surfaces must share a domain");
  std::vector<double> g1(grid.cells()), g2(grid.cells());
  parallel_for(grid.cells(), threads, [&](std::size_t c) {
    const Vector x = a.clamp(grid.center(c));
    const Evaluation ep = pop.evaluate(x, Order::hessian);
    const Evaluation es = sample.evaluate(x, Order::hessian);
    g1[c] = sup_norm(es.gradient - ep.gradient);
    g2[c] = max_norm(es.hessian - ep.hessian);
  });
  out.eps1 = *std::max_element(g1.begin(), g1.end());
  out.eps2 = *std::max_element(g2.begin(), g2.end());
  out.gap_resolution = grid.resolution();
}

template <ObjectiveSurface P, ObjectiveSurface S>
UncertaintyLedger measure_gaps(const P& pop, const S& sample, const Grid& grid, unsigned threads = 1) {
  UncertaintyLedger out;
  measure_gaps(pop, sample, grid, out, threads);
  return out;
}

/// Points standing in for basin boundaries on a raster: midpoints of faces
/// between axis neighbours with different labels, and centres of cells
/// that belong to no basin.
inline std::vector<Vector> boundary_points(const BasinMap& map) {
  const Grid& g = map.grid;
  std::vector<Vector> pts;
  for (std::size_t c = 0; c < g.cells(); ++c) {
    const Vector xc = g.center(c);
    if (map.labels[c] < 0) {
      pts.push_back(xc);
      continue;
    }
    const auto idx = g.unflatten(c);
    for (std::size_t j = 0; j < g.dim(); ++j) {
      if (idx[j] + 1 == g.resolution()[j]) continue;
      auto nb = idx;
      ++nb[j];
      const std::size_t f = g.flatten(nb);
      if (map.labels[f] >= 0 && map.labels[f] != map.labels[c]) pts.push_back(0.5 * (xc + g.center(f)));
    }
  }
  return pts;
}

inline std::vector<double> default_tube_radii(const Box& b) {
  std::vector<double> r;
  const double top = 0.1 * b.diagonal();
  for (int k = 6; k >= 0; --k) r.push_back(top * std::pow(0.5, k));
  return r;
}

/// eps3 = max_l |Pi_sample(A_l) - Pi_pop(A_l)| from R paired draws (shared
/// random streams), and the Pi_pop mass within each radius of the basin
/// boundary.
inline void measure_basin_gaps(const BasinMap& pop_basins, std::size_t maxima, const Initializer& init_sample,
                               const Initializer& init_pop, std::size_t R, std::uint64_t seed,
                               std::vector<double> radii, UncertaintyLedger& out) {
  if (R == 0) throw ConfigError("measure_basin_gaps requires R >= 1");
  std::sort(radii.begin(), radii.end());
  std::vector<std::size_t> ts(maxima, 0), tp(maxima, 0), tube(radii.size(), 0);
  const auto bpts = boundary_points(pop_basins);
  for (std::size_t r = 0; r < R; ++r) {
    Rng ra = make_rng(seed, streams::basin_gaps, r);
    Rng rb = make_rng(seed, streams::basin_gaps, r);
    const Vector xs = init_sample.draw(ra);
    const Vector xp = init_pop.draw(rb);
    const int ls = pop_basins.label_at(xs), lp = pop_basins.label_at(xp);
    if (ls >= 0 && static_cast<std::size_t>(ls) < maxima) ++ts[static_cast<std::size_t>(ls)];
    if (lp >= 0 && static_cast<std::size_t>(lp) < maxima) ++tp[static_cast<std::size_t>(lp)];
    double dmin = std::numeric_limits<double>::infinity();
    for (const Vector& b : bpts) dmin = std::min(dmin, (b - xp).norm());
    for (std::size_t k = 0; k < radii.size(); ++k)
      if (dmin <= radii[k]) ++tube[k];
  }
  const double rr = static_cast<double>(R);
  out.basin_gaps.assign(maxima, 0.0);
  out.eps3 = 0.0;
  for (std::size_t l = 0; l < maxima; ++l) {
    out.basin_gaps[l] = std::abs(static_cast<double>(ts[l]) - static_cast<double>(tp[l])) / rr;
    out.eps3 = std::max(out.eps3, out.basin_gaps[l]);
  }
  out.radii = std::move(radii);
  out.tube_mass.clear();
  for (std::size_t t : tube) out.tube_mass.push_back(static_cast<double>(t) / rr);
  out.draws = R;
}

inline UncertaintyLedger measure_basin_gaps(const BasinMap& pop_basins, std::size_t maxima,
                                            const Initializer& init_sample, const Initializer& init_pop,
                                            std::size_t R, std::uint64_t seed, std::vector<double> radii) {
  UncertaintyLedger out;
  measure_basin_gaps(pop_basins, maxima, init_sample, init_pop, R, seed, std::move(radii), out);
  return out;
}

inline double initialization_loss(double q1, std::size_t M) { return miss_probability(q1, M); }

}  // namespace lopt

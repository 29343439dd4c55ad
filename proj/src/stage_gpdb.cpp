#include "crb/stage_gpdb.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "crb/error.hpp"
#include "crb/parallel.hpp"

namespace crb::gpdb {

double gaussian_kernel(double u) { return std::exp(-0.5 * u * u) / std::sqrt(2.0 * std::numbers::pi); }

double kde_pdf(std::span<const double> samples, double h, double x) {
  if (samples.empty()) throw DegenerateError("no boxes of this class");
  if (!(h > 0.0)) throw ConfigError("kde bandwidth must be positive");
  double acc = 0.0;
  for (double s : samples) acc += gaussian_kernel((x - s) / h);
  return acc / (static_cast<double>(samples.size()) * h);
}

double sorted_quantile(std::span<const double> sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

DensityInterval density_interval(std::span<const double> values) {
  if (values.size() < 2) throw DegenerateError("density interval needs at least two values");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const DensityInterval out{sorted_quantile(sorted, 0.025), sorted_quantile(sorted, 0.975)};
  if (!(out.hi > out.lo)) throw DegenerateError("density interval has zero width");
  return out;
}

std::vector<double> make_grid(const DensityInterval& interval, std::size_t grid_size) {
  std::vector<double> grid(grid_size);
  const double span = interval.hi - interval.lo;
  for (std::size_t i = 0; i < grid_size; ++i) {
    grid[i] = interval.lo + span * static_cast<double>(i) / static_cast<double>(grid_size - 1);
  }
  grid.back() = interval.hi;
  return grid;
}

DensityModel DensityModel::build(int class_id, std::vector<double> samples, double bandwidth,
                                 const DensityInterval& interval, std::size_t grid_size) {
  if (!(bandwidth > 0.0)) throw ConfigError("kde bandwidth must be positive");
  if (!(interval.hi > interval.lo)) throw DegenerateError("density interval has zero width");
  if (grid_size < 2) throw ConfigError("grid needs at least two points");
  DensityModel m;
  m.class_id = class_id;
  m.samples = std::move(samples);
  m.bandwidth = bandwidth;
  m.alpha_lo = interval.lo;
  m.alpha_hi = interval.hi;
  m.grid = make_grid(interval, grid_size);
  return m;
}

KlResult kl_from_grid_mass(std::span<const double> mass) {
  const double total = std::accumulate(mass.begin(), mass.end(), 0.0);
  const double g = static_cast<double>(mass.size());
  if (!(total > 0.0)) return {std::log(g), true};
  double kl = 0.0;
  for (double v : mass) {
    const double p = v / total;
    if (p <= 0.0) continue;  // also covers subnormal weights that underflow
    kl += p * std::log(p * g);
  }
  return {std::max(kl, 0.0), false};
}

KlResult kl_to_uniform(const DensityModel& model) {
  std::vector<double> mass(model.grid.size());
  for (std::size_t i = 0; i < model.grid.size(); ++i) {
    mass[i] = kde_pdf(model.samples, model.bandwidth, model.grid[i]);
  }
  return kl_from_grid_mass(mass);
}

double arctan_normalize(double d) {
  if (std::isinf(d)) return 1.0;
  return 2.0 / std::numbers::pi * std::atan(std::numbers::pi / 2.0 * d);
}

DensityPrior DensityPrior::from_pool(std::span<const PoolRecord> pool, std::size_t num_classes,
                                     double bandwidth, std::size_t grid_size) {
  DensityPrior prior;
  prior.num_classes = num_classes;
  prior.bandwidth = bandwidth;
  prior.grid_size = grid_size;
  std::vector<std::vector<double>> per_class(num_classes);
  for (const PoolRecord& r : pool) {
    for (const BoxPrediction& b : r.boxes()) {
      if (static_cast<std::size_t>(b.class_id) < num_classes) {
        per_class[static_cast<std::size_t>(b.class_id)].push_back(b.point_density);
      }
    }
  }
  prior.intervals.resize(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    try {
      prior.intervals[c] = density_interval(per_class[c]);
    } catch (const DegenerateError&) {
      prior.intervals[c].reset();
    }
  }
  return prior;
}

namespace {

// Unnormalized KDE weight of one record's boxes on every class grid:
// contribution[c][i] = sum over boxes of class c of exp(-u^2 / 2). The common
// factor 1 / (N h sqrt(2 pi)) cancels in the renormalized grid distribution.
struct GridContribution {
  std::vector<std::vector<double>> per_class;
  std::vector<std::size_t> counts;
};

struct PriorGrids {
  std::vector<std::vector<double>> grids;  // empty for excluded classes
};

PriorGrids prior_grids(const DensityPrior& prior) {
  PriorGrids out;
  out.grids.resize(prior.num_classes);
  for (std::size_t c = 0; c < prior.num_classes; ++c) {
    if (prior.intervals[c]) out.grids[c] = make_grid(*prior.intervals[c], prior.grid_size);
  }
  return out;
}

GridContribution contribution(const PoolRecord& record, const DensityPrior& prior,
                              const PriorGrids& grids) {
  GridContribution out;
  out.per_class.resize(prior.num_classes);
  out.counts.assign(prior.num_classes, 0);
  for (const BoxPrediction& b : record.boxes()) {
    const auto c = static_cast<std::size_t>(b.class_id);
    if (c >= prior.num_classes) {
      throw SchemaError("record '" + record.cloud_id() + "': class_id out of range");
    }
    ++out.counts[c];
    if (grids.grids[c].empty()) continue;
    auto& acc = out.per_class[c];
    if (acc.empty()) acc.assign(prior.grid_size, 0.0);
    for (std::size_t i = 0; i < prior.grid_size; ++i) {
      const double u = (grids.grids[c][i] - b.point_density) / prior.bandwidth;
      acc[i] += std::exp(-0.5 * u * u);
    }
  }
  return out;
}

// Running per-class grid weights of a selected set.
struct SetState {
  std::vector<std::vector<double>> mass;
  std::vector<std::size_t> counts;

  explicit SetState(const DensityPrior& prior)
      : mass(prior.num_classes, std::vector<double>(prior.grid_size, 0.0)),
        counts(prior.num_classes, 0) {}

  void add(const GridContribution& g) {
    for (std::size_t c = 0; c < mass.size(); ++c) {
      counts[c] += g.counts[c];
      if (g.per_class[c].empty()) continue;
      for (std::size_t i = 0; i < mass[c].size(); ++i) mass[c][i] += g.per_class[c][i];
    }
  }
};

BalanceScore score_state(const SetState& state, const DensityPrior& prior,
                         const GridContribution* extra, std::vector<double>& scratch) {
  BalanceScore s;
  const std::size_t nc = prior.num_classes;
  s.per_class_kl.assign(nc, 0.0);
  s.normalized.assign(nc, 0.0);
  s.status.assign(nc, ClassStatus::excluded);
  s.degenerate.assign(nc, 0);
  for (std::size_t c = 0; c < nc; ++c) {
    if (!prior.intervals[c]) continue;
    const std::size_t count = state.counts[c] + (extra ? extra->counts[c] : 0);
    if (count == 0) {
      s.status[c] = ClassStatus::absent;
      s.per_class_kl[c] = std::numeric_limits<double>::infinity();
      s.normalized[c] = 1.0;
    } else {
      std::span<const double> mass = state.mass[c];
      if (extra && !extra->per_class[c].empty()) {
        scratch.resize(prior.grid_size);
        for (std::size_t i = 0; i < prior.grid_size; ++i) {
          scratch[i] = state.mass[c][i] + extra->per_class[c][i];
        }
        mass = scratch;
      }
      const KlResult kl = kl_from_grid_mass(mass);
      s.status[c] = ClassStatus::scored;
      s.per_class_kl[c] = kl.value;
      s.degenerate[c] = kl.degenerate ? 1 : 0;
      s.normalized[c] = arctan_normalize(kl.value);
    }
    s.total += s.normalized[c];
  }
  return s;
}

}  // namespace

BalanceScore balance_score(std::span<const PoolRecord> selected, const DensityPrior& prior) {
  const PriorGrids grids = prior_grids(prior);
  SetState state(prior);
  for (const PoolRecord& r : selected) state.add(contribution(r, prior, grids));
  std::vector<double> scratch;
  return score_state(state, prior, nullptr, scratch);
}

GreedyResult greedy_balance(std::span<const PoolRecord> candidates, std::size_t nr,
                            const DensityPrior& prior) {
  GreedyResult result;
  const std::size_t n = candidates.size();
  if (nr > n) {
    result.warnings.push_back("nr=" + std::to_string(nr) + " exceeds " + std::to_string(n) +
                              " candidates; selecting all");
    nr = n;
  }
  const PriorGrids grids = prior_grids(prior);
  std::vector<GridContribution> contrib(n);
  parallel_for(n, [&](std::size_t i) { contrib[i] = contribution(candidates[i], prior, grids); }, 16);

  std::vector<std::size_t> remaining(n);
  std::iota(remaining.begin(), remaining.end(), std::size_t{0});
  std::sort(remaining.begin(), remaining.end(), [&](std::size_t a, std::size_t b) {
    return candidates[a].cloud_id() < candidates[b].cloud_id();
  });

  SetState state(prior);
  for (std::size_t step = 0; step < nr; ++step) {
    std::vector<double> objective(remaining.size());
    parallel_for(remaining.size(), [&](std::size_t k) {
      std::vector<double> scratch;
      objective[k] = score_state(state, prior, &contrib[remaining[k]], scratch).total;
    }, 16);
    // remaining is id-sorted, so the first minimum is the tie-break winner.
    std::size_t best = 0;
    for (std::size_t k = 1; k < remaining.size(); ++k) {
      if (objective[k] < objective[best]) best = k;
    }
    GreedyStep log;
    for (std::size_t k = 0; k < remaining.size(); ++k) {
      log.evaluated.emplace_back(candidates[remaining[k]].cloud_id(), objective[k]);
    }
    const std::size_t chosen = remaining[best];
    state.add(contrib[chosen]);
    std::vector<double> scratch;
    log.chosen = candidates[chosen].cloud_id();
    log.score = score_state(state, prior, nullptr, scratch);
    log.objective = log.score.total;
    result.selected.push_back(log.chosen);
    result.steps.push_back(std::move(log));
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(best));
  }
  if (!result.steps.empty()) {
    result.final_score = result.steps.back().score;
  } else {
    std::vector<double> scratch;
    result.final_score = score_state(SetState(prior), prior, nullptr, scratch);
  }
  return result;
}

}  // namespace crb::gpdb

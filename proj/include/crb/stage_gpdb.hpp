#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crb/pool.hpp"

// Greedy point-density balancing: per-class Gaussian KDE over box point
// densities, KL to a uniform prior on the 95% density interval, arctan
// normalization, and forward greedy subset selection.
namespace crb::gpdb {

// Standard normal density.
double gaussian_kernel(double u);

// (1 / (N h)) * sum_j K((x - x_j) / h). Throws DegenerateError when samples is
// empty ("no boxes of this class").
double kde_pdf(std::span<const double> samples, double h, double x);

struct DensityInterval {
  double lo = 0.0;
  double hi = 0.0;
};

// Empirical 2.5th and 97.5th percentiles with linear interpolation between
// order statistics. Throws DegenerateError for fewer than two values or a
// zero-width interval.
DensityInterval density_interval(std::span<const double> values);

// Linear-interpolated percentile, q in [0, 1], of an ascending-sorted span.
double sorted_quantile(std::span<const double> sorted, double q);

// G evenly spaced points from lo to hi inclusive.
std::vector<double> make_grid(const DensityInterval& interval, std::size_t grid_size);

struct DensityModel {
  int class_id = 0;
  std::vector<double> samples;
  double bandwidth = 5.0;
  double alpha_lo = 0.0;
  double alpha_hi = 1.0;
  std::vector<double> grid;

  static DensityModel build(int class_id, std::vector<double> samples, double bandwidth,
                            const DensityInterval& interval, std::size_t grid_size);
};

struct KlResult {
  double value = 0.0;
  bool degenerate = false;  // the KDE put no mass on the grid; value is ln G
};

// KL(p_hat || uniform) where p_hat is the KDE on the grid renormalized to sum
// to one. Grid points with zero mass contribute nothing.
KlResult kl_to_uniform(const DensityModel& model);

// Same divergence from unnormalized nonnegative grid weights.
KlResult kl_from_grid_mass(std::span<const double> mass);

// (2 / pi) * atan((pi / 2) * d): maps [0, inf) onto [0, 1).
double arctan_normalize(double d);

// Per-class uniform priors. A class whose pool densities give no usable
// interval is left unset and excluded from the objective.
struct DensityPrior {
  std::size_t num_classes = 0;
  double bandwidth = 5.0;
  std::size_t grid_size = 256;
  std::vector<std::optional<DensityInterval>> intervals;

  static DensityPrior from_pool(std::span<const PoolRecord> pool, std::size_t num_classes,
                                double bandwidth, std::size_t grid_size);
};

enum class ClassStatus { scored, absent, excluded };

struct BalanceScore {
  std::vector<double> per_class_kl;  // d_c; +inf for absent classes
  std::vector<double> normalized;    // d_bar_c; 1 for absent, 0 for excluded
  std::vector<ClassStatus> status;
  std::vector<char> degenerate;
  double total = 0.0;
};

// Objective of a set of records taken in the given order. Absent classes
// score 1, excluded classes 0.
BalanceScore balance_score(std::span<const PoolRecord> selected, const DensityPrior& prior);

struct GreedyStep {
  std::string chosen;
  double objective = 0.0;
  BalanceScore score;
  std::vector<std::pair<std::string, double>> evaluated;  // every candidate tried this step
};

struct GreedyResult {
  std::vector<std::string> selected;
  std::vector<GreedyStep> steps;
  BalanceScore final_score;
  std::vector<std::string> warnings;
};

// Forward greedy: nr times, add the remaining candidate that minimizes the
// balance objective of the selected set; ties go to the smallest cloud_id.
GreedyResult greedy_balance(std::span<const PoolRecord> candidates, std::size_t nr,
                            const DensityPrior& prior);

}  // namespace crb::gpdb

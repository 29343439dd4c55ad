#include "crb/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include "crb/error.hpp"
#include "crb/harness.hpp"
#include "crb/rng.hpp"
#include "crb/selection.hpp"
#include "crb/stage_rps.hpp"

namespace crb {

BenchResult run_bench(std::span<const std::size_t> sizes, Strategy strategy, std::uint64_t seed,
                      const BenchOptions& options) {
  if (sizes.empty()) throw ConfigError("bench: no pool sizes given");
  if (options.nr < 1) throw ConfigError("bench: nr must be at least 1");
  BenchResult result;
  result.strategy = strategy;
  result.nr = options.nr;
  StrategyConfig cfg;
  cfg.strategy = strategy;
  cfg.nr = options.nr;
  cfg.k2 = 2 * options.nr;
  cfg.k1 = 3 * options.nr;
  cfg.seed = seed;
  const harness::SceneSpec spec = harness::SceneSpec::defaults(cfg.num_classes);
  for (std::size_t n : sizes) {
    if (n < cfg.k1) throw ConfigError("bench: pool size " + std::to_string(n) + " is below K1");
    const harness::GeneratedPool gp = harness::generate_pool(n, spec, mix_seed(seed, n));
    // CORESET starts from a labeled set; embed the pretraining scenes once.
    std::vector<std::vector<double>> labeled;
    if (strategy == Strategy::coreset) {
      harness::SurrogateDetector det(spec, seed, cfg.dropout_rate, cfg.mc_passes);
      std::vector<PoolRecord> recs;
      for (std::size_t i = 0; i < gp.pretrain.size(); ++i) recs.push_back(det.infer(gp.pretrain[i], i));
      labeled = rps::resolve_embeddings(recs).vectors;
    }
    SelectionContext ctx;
    ctx.labeled_embeddings = labeled;
    ctx.seed = seed;
    BenchRow row;
    row.pool_size = n;
    row.ms = std::numeric_limits<double>::infinity();
    double total = 0.0;
    while (row.reps < options.max_reps && (row.reps < options.min_reps || total < options.min_total_ms)) {
      const auto t0 = std::chrono::steady_clock::now();
      const SelectionOutcome out = select_batch(gp.records, cfg, ctx);
      const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      if (out.selected_ids.empty()) throw DataError("bench: empty selection");
      row.ms = std::min(row.ms, ms);
      total += ms;
      ++row.reps;
    }
    result.rows.push_back(row);
  }
  result.slope = loglog_slope(result.rows);
  return result;
}

double loglog_slope(std::span<const BenchRow> rows) {
  if (rows.size() < 2) return 0.0;
  double mx = 0.0, my = 0.0;
  for (const BenchRow& r : rows) {
    mx += std::log(static_cast<double>(r.pool_size));
    my += std::log(r.ms);
  }
  mx /= static_cast<double>(rows.size());
  my /= static_cast<double>(rows.size());
  double sxy = 0.0, sxx = 0.0;
  for (const BenchRow& r : rows) {
    const double dx = std::log(static_cast<double>(r.pool_size)) - mx;
    sxy += dx * (std::log(r.ms) - my);
    sxx += dx * dx;
  }
  return sxx > 0.0 ? sxy / sxx : 0.0;
}

std::string bench_csv(const BenchResult& result) {
  std::ostringstream out;
  out << "strategy,pool_size,ms,reps\n";
  for (const BenchRow& r : result.rows) {
    out << to_string(result.strategy) << ',' << r.pool_size << ',' << r.ms << ',' << r.reps << '\n';
  }
  out << "# loglog_slope," << result.slope << '\n';
  return out.str();
}

}  // namespace crb

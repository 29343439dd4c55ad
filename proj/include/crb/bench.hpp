#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "crb/pool.hpp"

namespace crb {

struct BenchRow {
  std::size_t pool_size = 0;
  double ms = 0.0;  // fastest repetition
  std::size_t reps = 0;
};

struct BenchResult {
  Strategy strategy = Strategy::crb;
  std::size_t nr = 0;
  std::vector<BenchRow> rows;
  double slope = 0.0;  // least-squares slope of log(ms) against log(n)
};

struct BenchOptions {
  std::size_t nr = 5;  // K1 = 3 Nr, K2 = 2 Nr
  std::size_t min_reps = 3;
  double min_total_ms = 200.0;
  std::size_t max_reps = 50;
};

// Times select_batch alone on generated pools of each size. Pool generation
// and detector inference are outside the timed region.
BenchResult run_bench(std::span<const std::size_t> sizes, Strategy strategy, std::uint64_t seed,
                      const BenchOptions& options = {});

double loglog_slope(std::span<const BenchRow> rows);

std::string bench_csv(const BenchResult& result);

}  // namespace crb

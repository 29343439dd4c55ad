#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crb/pool.hpp"
#include "crb/stage_gpdb.hpp"
#include "crb/stage_rps.hpp"

namespace crb {

struct SelectionContext {
  // Embeddings of already-labeled clouds; CORESET covers from these.
  std::span<const std::vector<double>> labeled_embeddings;
  // Seed for the randomized strategies (rand, badge).
  std::uint64_t seed = 0;
  // Keep the greedy step log and medoid result for diagnostics output.
  bool keep_trace = false;
};

struct SelectionOutcome {
  std::vector<std::string> selected_ids;
  std::array<std::size_t, 3> stage_sizes{};
  std::map<std::string, double> diagnostics;
  std::vector<std::string> warnings;
  std::array<double, 3> stage_ms{};  // wall time per stage

  // Filled for crb only.
  std::vector<std::string> stage1_ids;
  std::vector<std::string> stage2_ids;
  std::optional<rps::MedoidResult> medoids;
  std::optional<gpdb::GreedyResult> greedy;
};

// One acquisition round over the unlabeled pool with the configured strategy.
// For crb: label-entropy top-K1, then K2-medoids on gradient embeddings, then
// greedy density balancing down to Nr. Throws DataError naming the missing
// field and the first offending cloud_id when a strategy's inputs are absent.
SelectionOutcome select_batch(std::span<const PoolRecord> pool, const StrategyConfig& cfg,
                              const SelectionContext& ctx = {});

SelectionRound to_selection_round(const SelectionOutcome& outcome, std::size_t round_index,
                                  std::int64_t boxes_annotated_cumulative);

}  // namespace crb

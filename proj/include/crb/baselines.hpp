#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "crb/pool.hpp"

// Reference acquisition strategies sharing the engine's record interface.
namespace crb::baselines {

struct StrategyOutput {
  std::vector<std::string> selected_ids;  // selection order
  std::map<std::string, double> scores;   // acquisition score of each selected id
  std::vector<std::string> warnings;
};

// Uniform sample without replacement, in draw order.
StrategyOutput rand_select(std::span<const PoolRecord> pool, std::size_t nr, std::uint64_t seed);

// Top-nr by label entropy; identical to cls::select_top_k1 with K1 = nr.
StrategyOutput entropy_select(std::span<const PoolRecord> pool, std::size_t nr,
                              std::size_t num_classes);

struct CoresetOutput {
  StrategyOutput output;
  // Max distance from any pool point to its nearest covered point, after
  // each pick.
  std::vector<double> cover_radii;
};

// Greedy furthest-first (k-center) traversal over pool embeddings, covering
// from the labeled embeddings. With no labeled points the first pick is the
// pool point of largest norm. Scores are each pick's cover distance.
CoresetOutput coreset_select(std::span<const std::vector<double>> pool_embeddings,
                             std::span<const std::string> pool_ids,
                             std::span<const std::vector<double>> labeled_embeddings,
                             std::size_t nr);

// Hallucinated classification gradient of one record: for every box, the
// cross-entropy logit gradient (p - onehot(class_id)) at the box confidence,
// outer product with [box7; 1], summed over boxes. Dimension C * 8.
std::vector<double> classification_gradient(const PoolRecord& record, std::size_t num_classes);

// Ingested embeddings when all records carry one, else classification_gradient.
std::vector<std::vector<double>> badge_embeddings(std::span<const PoolRecord> pool,
                                                  std::size_t num_classes);

// k-means++ seeding: first pick uniform, then D^2-weighted draws.
StrategyOutput kmeanspp_select(std::span<const std::vector<double>> embeddings,
                               std::span<const std::string> ids, std::size_t nr,
                               std::uint64_t seed);

StrategyOutput badge_select(std::span<const PoolRecord> pool, std::size_t nr, std::uint64_t seed,
                            std::size_t num_classes);

// Mean over boxes and the 7 coordinates of the unbiased variance across
// passes. Zero without boxes or with a single pass.
double mc_reg_score(const McPasses& passes);

// Top-nr by mc_reg_score, ties by id. Records without mc_passes are skipped
// with a warning.
StrategyOutput mc_reg_select(std::span<const PoolRecord> pool, std::size_t nr);

}  // namespace crb::baselines

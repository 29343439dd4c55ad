#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crb/pool.hpp"

// Concise label sampling: rank clouds by the entropy of their predicted label
// histogram and keep the top K1.
namespace crb::cls {

struct LabelHistogram {
  std::vector<std::size_t> counts;  // one slot per class
  std::size_t n_boxes = 0;

  // Throws SchemaError if a box's class_id is not below num_classes.
  static LabelHistogram of(const PoolRecord& record, std::size_t num_classes);
};

// Softmax of the relative class frequencies count_c / N_B. Returns nullopt for
// a histogram without boxes.
std::optional<std::vector<double>> class_probs(const LabelHistogram& hist);

// Natural-log Shannon entropy of class_probs; 0 when there are no boxes.
double label_entropy(const LabelHistogram& hist);

struct EntropyScore {
  std::string cloud_id;
  double entropy = 0.0;
  std::size_t n_boxes = 0;
};

std::vector<EntropyScore> score_pool(std::span<const PoolRecord> pool, std::size_t num_classes);

// Indices of the k best scores: entropy descending, then cloud_id ascending.
std::vector<std::size_t> rank_top_k(std::span<const EntropyScore> scores, std::size_t k);

// D_S1: min(K1, |pool|) cloud ids in rank order.
std::vector<std::string> select_top_k1(std::span<const PoolRecord> pool, std::size_t k1,
                                       std::size_t num_classes);

}  // namespace crb::cls

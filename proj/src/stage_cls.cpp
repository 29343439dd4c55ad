#include "crb/stage_cls.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "crb/error.hpp"
#include "crb/parallel.hpp"

namespace crb::cls {

LabelHistogram LabelHistogram::of(const PoolRecord& record, std::size_t num_classes) {
  LabelHistogram h;
  h.counts.assign(num_classes, 0);
  for (const BoxPrediction& b : record.boxes()) {
    if (static_cast<std::size_t>(b.class_id) >= num_classes) {
      throw SchemaError("record '" + record.cloud_id() + "': class_id " +
                        std::to_string(b.class_id) + " >= num_classes " +
                        std::to_string(num_classes));
    }
    ++h.counts[static_cast<std::size_t>(b.class_id)];
  }
  h.n_boxes = record.num_boxes();
  return h;
}

namespace {

// Shifted logits s_c - max_c s_c and the partition sum of their exponentials.
struct ShiftedLogits {
  std::vector<double> shifted;
  std::vector<double> expd;
  double partition = 0.0;
};

ShiftedLogits shifted_logits(const LabelHistogram& hist) {
  ShiftedLogits out;
  const double n = static_cast<double>(hist.n_boxes);
  const std::size_t top = static_cast<std::size_t>(
      std::max_element(hist.counts.begin(), hist.counts.end()) - hist.counts.begin());
  const double top_logit = static_cast<double>(hist.counts[top]) / n;
  out.shifted.resize(hist.counts.size());
  out.expd.resize(hist.counts.size());
  for (std::size_t c = 0; c < hist.counts.size(); ++c) {
    out.shifted[c] = static_cast<double>(hist.counts[c]) / n - top_logit;
    out.expd[c] = std::exp(out.shifted[c]);
    out.partition += out.expd[c];
  }
  return out;
}

}  // namespace

std::optional<std::vector<double>> class_probs(const LabelHistogram& hist) {
  if (hist.n_boxes == 0 || hist.counts.empty()) return std::nullopt;
  ShiftedLogits s = shifted_logits(hist);
  for (double& e : s.expd) e /= s.partition;
  return std::move(s.expd);
}

double label_entropy(const LabelHistogram& hist) {
  if (hist.n_boxes == 0 || hist.counts.empty()) return 0.0;
  // H = log Z - sum_c p_c * shifted_c; exact ln C for equal counts.
  const ShiftedLogits s = shifted_logits(hist);
  double weighted = 0.0;
  for (std::size_t c = 0; c < s.shifted.size(); ++c) {
    weighted += (s.expd[c] / s.partition) * s.shifted[c];
  }
  return std::log(s.partition) - weighted;
}

std::vector<EntropyScore> score_pool(std::span<const PoolRecord> pool, std::size_t num_classes) {
  std::vector<EntropyScore> scores(pool.size());
  parallel_for(pool.size(), [&](std::size_t i) {
    const LabelHistogram h = LabelHistogram::of(pool[i], num_classes);
    scores[i] = {pool[i].cloud_id(), label_entropy(h), h.n_boxes};
  });
  return scores;
}

std::vector<std::size_t> rank_top_k(std::span<const EntropyScore> scores, std::size_t k) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  k = std::min(k, order.size());
  auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a].entropy != scores[b].entropy) return scores[a].entropy > scores[b].entropy;
    return scores[a].cloud_id < scores[b].cloud_id;
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    better);
  order.resize(k);
  return order;
}

std::vector<std::string> select_top_k1(std::span<const PoolRecord> pool, std::size_t k1,
                                       std::size_t num_classes) {
  const auto scores = score_pool(pool, num_classes);
  std::vector<std::string> ids;
  for (std::size_t i : rank_top_k(scores, k1)) ids.push_back(scores[i].cloud_id);
  return ids;
}

}  // namespace crb::cls

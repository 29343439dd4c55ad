#include "crb/pool.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "crb/error.hpp"

namespace crb {

McPasses::McPasses(std::size_t passes, std::size_t boxes, std::vector<double> values)
    : passes_(passes), boxes_(boxes), values_(std::move(values)) {
  if (values_.size() != passes_ * boxes_ * kBoxDims) {
    throw SchemaError("mc_passes: expected " + std::to_string(passes_ * boxes_ * kBoxDims) +
                      " values, got " + std::to_string(values_.size()));
  }
  for (double v : values_) {
    if (!std::isfinite(v)) throw SchemaError("mc_passes: non-finite value");
  }
}

PoolRecord::PoolRecord(std::string cloud_id, std::vector<BoxPrediction> boxes,
                       std::optional<McPasses> mc_passes,
                       std::optional<std::vector<double>> gradient_embedding,
                       std::optional<std::int64_t> gt_box_count)
    : cloud_id_(std::move(cloud_id)),
      boxes_(std::move(boxes)),
      mc_passes_(std::move(mc_passes)),
      gradient_embedding_(std::move(gradient_embedding)),
      gt_box_count_(gt_box_count) {
  const std::string where = "record '" + cloud_id_ + "'";
  if (cloud_id_.empty()) throw SchemaError("cloud_id must be non-empty");
  for (std::size_t i = 0; i < boxes_.size(); ++i) {
    const BoxPrediction& b = boxes_[i];
    const std::string at = where + " box " + std::to_string(i);
    if (b.class_id < 0) throw SchemaError(at + ": negative class_id");
    if (!(b.confidence >= 0.0 && b.confidence <= 1.0)) {
      throw SchemaError(at + ": confidence outside [0,1]");
    }
    for (double v : b.box7) {
      if (!std::isfinite(v)) throw SchemaError(at + ": non-finite box7 entry");
    }
    if (!(b.box7[3] > 0.0 && b.box7[4] > 0.0 && b.box7[5] > 0.0)) {
      throw SchemaError(at + ": box size l, w, h must be positive");
    }
    if (!(b.point_density >= 0.0) || !std::isfinite(b.point_density)) {
      throw SchemaError(at + ": point_density must be a finite nonnegative number");
    }
  }
  if (mc_passes_ && mc_passes_->boxes() != boxes_.size()) {
    throw SchemaError(where + ": mc_passes covers " + std::to_string(mc_passes_->boxes()) +
                      " boxes but the record has " + std::to_string(boxes_.size()));
  }
  if (mc_passes_ && mc_passes_->passes() == 0) {
    throw SchemaError(where + ": mc_passes must hold at least one pass");
  }
  if (gradient_embedding_) {
    for (double v : *gradient_embedding_) {
      if (!std::isfinite(v)) throw SchemaError(where + ": non-finite gradient_embedding entry");
    }
  }
  if (gt_box_count_ && *gt_box_count_ < 0) {
    throw SchemaError(where + ": gt_box_count must be nonnegative");
  }
}

void validate_pool(std::span<const PoolRecord> pool, const PoolSchema& schema) {
  std::optional<std::size_t> passes = schema.mc_passes;
  std::optional<std::size_t> dim;
  std::unordered_set<std::string> seen;
  seen.reserve(pool.size());
  for (const PoolRecord& r : pool) {
    if (!seen.insert(r.cloud_id()).second) {
      throw IntegrityError("duplicate cloud_id '" + r.cloud_id() + "'");
    }
    if (schema.num_classes) {
      for (const BoxPrediction& b : r.boxes()) {
        if (static_cast<std::size_t>(b.class_id) >= *schema.num_classes) {
          throw SchemaError("record '" + r.cloud_id() + "': class_id " +
                            std::to_string(b.class_id) + " >= num_classes " +
                            std::to_string(*schema.num_classes));
        }
      }
    }
    if (r.mc_passes()) {
      const std::size_t m = r.mc_passes()->passes();
      if (!passes) passes = m;
      if (m != *passes) {
        throw SchemaError("record '" + r.cloud_id() + "': mc_passes has " + std::to_string(m) +
                          " passes, expected " + std::to_string(*passes));
      }
    }
    if (r.gradient_embedding()) {
      const std::size_t d = r.gradient_embedding()->size();
      if (!dim) dim = d;
      if (d != *dim) {
        throw SchemaError("record '" + r.cloud_id() + "': gradient_embedding has dimension " +
                          std::to_string(d) + ", expected " + std::to_string(*dim));
      }
    }
  }
}

std::size_t infer_num_classes(std::span<const PoolRecord> pool) {
  int max_id = -1;
  for (const PoolRecord& r : pool) {
    for (const BoxPrediction& b : r.boxes()) max_id = std::max(max_id, b.class_id);
  }
  return static_cast<std::size_t>(std::max(max_id + 1, 1));
}

void SelectionRound::validate() const {
  if (!(stage_sizes[0] >= stage_sizes[1] && stage_sizes[1] >= stage_sizes[2])) {
    throw DataError("selection round: stage sizes must be nonincreasing");
  }
  if (stage_sizes[2] != selected_ids.size()) {
    throw DataError("selection round: |D_S| does not match the number of selected ids");
  }
  if (boxes_annotated_cumulative < 0) {
    throw DataError("selection round: negative annotated box count");
  }
}

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::crb: return "crb";
    case Strategy::rand: return "rand";
    case Strategy::entropy: return "entropy";
    case Strategy::coreset: return "coreset";
    case Strategy::badge: return "badge";
    case Strategy::mc_reg: return "mc_reg";
  }
  return "unknown";
}

Strategy parse_strategy(std::string_view name) {
  for (Strategy s : {Strategy::crb, Strategy::rand, Strategy::entropy, Strategy::coreset,
                     Strategy::badge, Strategy::mc_reg}) {
    if (to_string(s) == name) return s;
  }
  throw ConfigError("unknown strategy '" + std::string(name) +
                    "' (expected crb, rand, entropy, coreset, badge or mc_reg)");
}

void StrategyConfig::validate() const {
  if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
  if (nr < 1) throw ConfigError("nr must be >= 1");
  if (k1 < k2) throw ConfigError("k1 must be >= k2");
  if (k2 < nr) throw ConfigError("k2 must be >= nr");
  if (rounds < 1) throw ConfigError("rounds must be >= 1");
  if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) throw ConfigError("bandwidth must be > 0");
  if (mc_passes < 1) throw ConfigError("mc_passes must be >= 1");
  if (!(dropout_rate > 0.0 && dropout_rate < 1.0)) {
    throw ConfigError("dropout_rate must lie in (0, 1)");
  }
  if (grid_size < 16) throw ConfigError("grid_size must be >= 16");
}

}  // namespace crb

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace crb {

namespace harness {
class Oracle;
}
namespace detail {
struct PoolCodec;
}

inline constexpr std::size_t kBoxDims = 7;

// (p_x, p_y, p_z, l, w, h, heading), heading in radians.
using Box7 = std::array<double, kBoxDims>;

struct BoxPrediction {
  int class_id = 0;
  double confidence = 0.0;
  Box7 box7{};
  double point_density = 0.0;  // points inside the predicted box

  bool operator==(const BoxPrediction&) const = default;
};

// Regression outputs of M stochastic forward passes, laid out pass-major as
// [pass][box][coordinate].
class McPasses {
 public:
  McPasses() = default;
  McPasses(std::size_t passes, std::size_t boxes, std::vector<double> values);

  std::size_t passes() const noexcept { return passes_; }
  std::size_t boxes() const noexcept { return boxes_; }
  double at(std::size_t pass, std::size_t box, std::size_t coord) const {
    return values_[(pass * boxes_ + box) * kBoxDims + coord];
  }
  std::span<const double> box(std::size_t pass, std::size_t box) const {
    return {values_.data() + (pass * boxes_ + box) * kBoxDims, kBoxDims};
  }
  const std::vector<double>& values() const noexcept { return values_; }

  bool operator==(const McPasses&) const = default;

 private:
  std::size_t passes_ = 0;
  std::size_t boxes_ = 0;
  std::vector<double> values_;
};

// Passkey for the ground-truth box count. Only the oracle and the record
// codec can mint one, so acquisition strategies cannot read labels.
class GroundTruthKey {
  GroundTruthKey() = default;
  friend class harness::Oracle;
  friend struct detail::PoolCodec;
};

// Detector outputs for one unlabeled point cloud. Immutable once built; the
// constructor enforces every per-record invariant and throws SchemaError.
class PoolRecord {
 public:
  PoolRecord(std::string cloud_id, std::vector<BoxPrediction> boxes,
             std::optional<McPasses> mc_passes = std::nullopt,
             std::optional<std::vector<double>> gradient_embedding = std::nullopt,
             std::optional<std::int64_t> gt_box_count = std::nullopt);

  const std::string& cloud_id() const noexcept { return cloud_id_; }
  const std::vector<BoxPrediction>& boxes() const noexcept { return boxes_; }
  std::size_t num_boxes() const noexcept { return boxes_.size(); }
  const std::optional<McPasses>& mc_passes() const noexcept { return mc_passes_; }
  const std::optional<std::vector<double>>& gradient_embedding() const noexcept {
    return gradient_embedding_;
  }
  std::optional<std::int64_t> gt_box_count(GroundTruthKey) const noexcept { return gt_box_count_; }

  bool operator==(const PoolRecord&) const = default;

 private:
  std::string cloud_id_;
  std::vector<BoxPrediction> boxes_;
  std::optional<McPasses> mc_passes_;
  std::optional<std::vector<double>> gradient_embedding_;
  std::optional<std::int64_t> gt_box_count_;
};

// Pool-level constraints. Unset fields are inferred from the first record
// that carries them and then enforced on the rest.
struct PoolSchema {
  std::optional<std::size_t> num_classes;
  std::optional<std::size_t> mc_passes;
};

// Checks class ids, pass counts, embedding dimension and id uniqueness.
void validate_pool(std::span<const PoolRecord> pool, const PoolSchema& schema);

// Smallest class count consistent with the records (max class id + 1).
std::size_t infer_num_classes(std::span<const PoolRecord> pool);

struct SelectionRound {
  std::size_t round_index = 0;
  std::vector<std::string> selected_ids;
  std::array<std::size_t, 3> stage_sizes{};  // |D_S1|, |D_S2|, |D_S|
  std::int64_t boxes_annotated_cumulative = 0;
  std::map<std::string, double> diagnostics;

  bool operator==(const SelectionRound&) const = default;

  // Throws DataError unless |D_S1| >= |D_S2| >= |D_S| == |selected_ids|.
  void validate() const;
};

enum class Strategy { crb, rand, entropy, coreset, badge, mc_reg };

std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view name);  // throws ConfigError

struct StrategyConfig {
  std::size_t num_classes = 3;
  std::size_t k1 = 300;
  std::size_t k2 = 200;
  std::size_t nr = 100;
  std::size_t rounds = 6;
  double bandwidth = 5.0;
  std::size_t mc_passes = 5;
  double dropout_rate = 0.3;
  std::size_t grid_size = 256;
  std::uint64_t seed = 0;
  Strategy strategy = Strategy::crb;

  // Throws ConfigError naming the first violated constraint.
  void validate() const;
};

}  // namespace crb

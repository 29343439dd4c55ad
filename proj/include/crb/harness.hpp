#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "crb/error.hpp"
#include "crb/pool.hpp"
#include "crb/rng.hpp"
#include "crb/stage_gpdb.hpp"

// Simulated acquisition loop: synthetic LiDAR-like scenes, a surrogate
// detector with MC dropout, an annotation oracle that charges per box, and the
// multi-round select / annotate / refit cycle.
namespace crb::harness {

struct SceneSpec {
  std::size_t num_classes = 3;
  std::vector<double> abundance;       // class shares of objects, sums to 1
  double objects_per_scene = 3.0;      // mean objects in a non-empty scene
  double empty_scene_rate = 0.02;      // share of scenes without objects
  std::vector<double> density_median;  // per-class lognormal median of point counts
  std::vector<double> density_sigma;   // per-class lognormal log-scale
  double label_accuracy = 0.9;         // diagonal of the class-confusion matrix
  double density_noise = 0.1;          // log-scale noise on predicted densities
  double observation_noise = 1.0;      // multiplier on the sensor noise model
  std::size_t hidden_units = 48;

  // Long-tailed abundance (ratio 1/4 between consecutive classes), distinct
  // density medians (denser for lower class ids).
  static SceneSpec defaults(std::size_t num_classes);
  void validate() const;  // throws ConfigError
};

struct SyntheticObject {
  int class_id = 0;
  Box7 box7{};
  double point_density = 0.0;
  Box7 observation{};  // what the detector's encoder sees
  // Per-object random draws, fixed at generation so detector outputs are a
  // pure function of (scene, detector state).
  double label_draw = 0.0;
  double confidence_draw = 0.0;
  double density_draw = 0.0;
};

struct SyntheticScene {
  std::string cloud_id;
  std::vector<SyntheticObject> objects;

  std::size_t gt_box_count() const noexcept { return objects.size(); }
};

std::vector<SyntheticScene> generate_scenes(std::size_t n, const SceneSpec& spec, Rng& rng,
                                            std::string_view id_prefix = "cloud_");

// Random-feature regressor standing in for a 3D detector: a fixed encoder
// (standardized observation plus ReLU random features), dropout on the hidden
// units, and a linear regression head refit by ridge least squares.
class SurrogateDetector {
 public:
  SurrogateDetector(const SceneSpec& spec, std::uint64_t seed, double dropout_rate,
                    std::size_t mc_passes);

  std::size_t feature_dim() const noexcept { return kBoxDims + hidden_units_ + 1; }
  std::vector<double> features(const SyntheticObject& obj) const;

  Box7 predict(const SyntheticObject& obj) const;
  int predict_class(const SyntheticObject& obj) const;

  // Refit the head from scratch on every object of the given scenes.
  void fit(std::span<const SyntheticScene* const> scenes);

  // Detector outputs for one scene: predicted boxes, M dropout passes and
  // the ground-truth box count. Passes draw their masks from pass_seed.
  PoolRecord infer(const SyntheticScene& scene, std::uint64_t pass_seed) const;

  // RMSE of predicted against true boxes over all coordinates of all objects.
  double rmse(std::span<const SyntheticScene> scenes) const;

  const std::vector<std::vector<double>>& confusion() const noexcept { return confusion_; }
  const std::vector<double>& head() const noexcept { return head_; }
  double dropout_rate() const noexcept { return dropout_rate_; }

 private:
  Box7 head_forward(std::span<const double> feats) const;

  std::size_t num_classes_;
  std::size_t hidden_units_;
  std::size_t mc_passes_;
  double dropout_rate_;
  double density_noise_;
  double ridge_ = 1e-3;
  std::vector<double> encoder_;       // hidden_units x 7
  std::vector<double> encoder_bias_;  // hidden_units
  std::vector<double> head_;          // 7 x feature_dim, row-major
  std::vector<std::vector<double>> confusion_;
};

struct GenOptions {
  std::size_t mc_passes = 5;
  double dropout_rate = 0.3;
  std::size_t initial_labeled = 100;
};

struct GeneratedPool {
  std::vector<SyntheticScene> scenes;
  std::vector<PoolRecord> records;
  std::vector<SyntheticScene> pretrain;  // labeled scenes the detector was fit on
};

// n unlabeled scenes and their detector records, the detector pretrained on
// options.initial_labeled separate scenes. Deterministic in all arguments.
GeneratedPool generate_pool(std::size_t n, const SceneSpec& spec, std::uint64_t seed,
                            const GenOptions& options = {});

nlohmann::ordered_json scene_to_json(const SyntheticScene& scene);
std::string scenes_to_jsonl(std::span<const SyntheticScene> scenes);

struct BudgetLedger {
  std::optional<std::int64_t> budget_boxes;  // unset: unlimited
  std::int64_t spent = 0;
  std::int64_t initial_boxes = 0;  // pre-labeled set, outside the budget
  std::vector<std::int64_t> per_round;
};

struct GroundTruthBox {
  int class_id = 0;
  Box7 box7{};
  double point_density = 0.0;
};

struct LabeledCloud {
  std::string cloud_id;
  std::vector<GroundTruthBox> boxes;
};

struct Annotation {
  std::vector<LabeledCloud> delivered;  // in request order
  std::int64_t cost = 0;
  bool truncated = false;
};

class BudgetExceededError : public Error {
 public:
  BudgetExceededError(const std::string& what, Annotation partial)
      : Error(what), partial_(std::move(partial)) {}
  const Annotation& partial() const noexcept { return partial_; }

 private:
  Annotation partial_;
};

// Returns ground truth for requested clouds and charges one unit per box.
class Oracle {
 public:
  Oracle(std::span<const SyntheticScene> scenes, std::optional<std::int64_t> budget_boxes);
  // Costs from the records' gt_box_count; no boxes are delivered.
  Oracle(std::span<const PoolRecord> records, std::optional<std::int64_t> budget_boxes);

  // Throws IntegrityError on unknown, repeated or already-annotated ids. When
  // the next id would overrun the budget, annotation stops there, the prefix
  // is charged, and BudgetExceededError carries the partial result.
  Annotation annotate(std::span<const std::string> ids);

  // Marks the initial labeled set; recorded in the ledger, not charged.
  void mark_initial(std::span<const std::string> ids);

  std::int64_t cost_of(const std::string& id) const;
  bool annotated(const std::string& id) const { return annotated_.count(id) != 0; }
  const BudgetLedger& ledger() const noexcept { return ledger_; }

 private:
  struct Entry {
    std::int64_t cost = 0;
    const SyntheticScene* scene = nullptr;
  };
  std::unordered_map<std::string, Entry> entries_;
  std::unordered_set<std::string> annotated_;
  BudgetLedger ledger_;
};

struct ReferencePrior {
  std::size_t num_classes = 0;
  gpdb::DensityPrior density;
  std::vector<std::vector<double>> pool_embeddings;
};

ReferencePrior make_reference_prior(std::span<const PoolRecord> pool, std::size_t num_classes,
                                    double bandwidth, std::size_t grid_size);

// label_kl: KL of the selected boxes' predicted-label frequencies to uniform.
// cover_radius: mean distance from each pool embedding to its nearest
// selected embedding. density_score: the balance objective of the selection.
std::map<std::string, double> alignment_metrics(std::span<const PoolRecord> selected,
                                                const ReferencePrior& reference);

struct LoopConfig {
  StrategyConfig strategy;
  SceneSpec scene = SceneSpec::defaults(3);
  std::size_t pool_size = 2000;
  std::size_t heldout_size = 300;
  std::size_t initial_labeled = 0;  // 0: use nr
  std::optional<std::int64_t> budget_boxes;
  bool record_timings = false;

  void validate() const;
};

struct RoundMetrics {
  double label_kl = 0.0;
  double cover_radius = 0.0;
  double density_score = 0.0;
  double heldout_rmse = 0.0;
  std::int64_t spent_boxes = 0;
  std::array<double, 3> stage_ms{};
};

struct RunManifest {
  LoopConfig config;
  std::vector<std::string> initial_labeled;
  double initial_heldout_rmse = 0.0;
  std::vector<SelectionRound> rounds;
  std::vector<RoundMetrics> metrics;
  BudgetLedger ledger;
  bool stopped_early = false;
  std::string stop_reason;
  std::vector<std::string> warnings;
};

struct Experiment {
  std::vector<SyntheticScene> scenes;
  std::vector<SyntheticScene> heldout;
  SurrogateDetector detector;
  std::vector<std::size_t> initial_labeled;
};

// Pool, held-out scenes, pretrained detector and D_L, all derived from the
// configured seed. Independent of the strategy, so strategies compare on
// identical inputs.
Experiment prepare_experiment(const LoopConfig& cfg);

// Runs the configured rounds: infer, select, annotate, refit, measure.
RunManifest run_loop(const LoopConfig& cfg, Experiment experiment);
RunManifest run_loop(const LoopConfig& cfg);

// Violations of the loop's structural invariants (stage-size chain, budget
// ceiling, no cloud annotated twice); empty when all hold.
std::vector<std::string> check_loop_invariants(const RunManifest& manifest);

nlohmann::ordered_json config_to_json(const LoopConfig& cfg);
nlohmann::ordered_json manifest_to_json(const RunManifest& manifest);
std::string metrics_csv(const RunManifest& manifest);

}  // namespace crb::harness

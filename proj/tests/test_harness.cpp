#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "crb/error.hpp"
#include "crb/harness.hpp"
#include "crb/pool_io.hpp"
#include "crb/selection.hpp"
#include "support.hpp"

using namespace crb;
using namespace crb::harness;

namespace {

LoopConfig small_loop(Strategy s, std::uint64_t seed = 0) {
  LoopConfig cfg;
  cfg.strategy.strategy = s;
  cfg.strategy.seed = seed;
  cfg.strategy.nr = 10;
  cfg.strategy.k2 = 20;
  cfg.strategy.k1 = 30;
  cfg.strategy.rounds = 3;
  cfg.pool_size = 300;
  cfg.heldout_size = 50;
  return cfg;
}

void require_invariants(const RunManifest& man) {
  const auto bad = check_loop_invariants(man);
  for (const auto& b : bad) MESSAGE(b);
  CHECK(bad.empty());
}

}  // namespace

TEST_CASE("scene spec validation") {
  SceneSpec s = SceneSpec::defaults(3);
  CHECK_NOTHROW(s.validate());
  double total = 0.0;
  for (double a : s.abundance) total += a;
  CHECK(total == doctest::Approx(1.0));
  s.abundance = {0.5, 0.3, 0.1};
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = SceneSpec::defaults(3);
  s.density_median = {10.0, 20.0};
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("noiseless labels pass through with an identity confusion matrix") {
  SceneSpec s = SceneSpec::defaults(1);
  s.label_accuracy = 1.0;
  s.empty_scene_rate = 0.0;
  const auto gp = generate_pool(1, s, 4, {5, 0.3, 10});
  REQUIRE(gp.records.size() == 1);
  const auto& rec = gp.records[0];
  REQUIRE(rec.num_boxes() == gp.scenes[0].objects.size());
  for (std::size_t i = 0; i < rec.num_boxes(); ++i) CHECK(rec.boxes()[i].class_id == gp.scenes[0].objects[i].class_id);

  SceneSpec three = SceneSpec::defaults(3);
  three.label_accuracy = 1.0;
  const auto gp3 = generate_pool(50, three, 4, {5, 0.3, 10});
  for (std::size_t j = 0; j < gp3.records.size(); ++j) {
    for (std::size_t i = 0; i < gp3.records[j].num_boxes(); ++i) {
      CHECK(gp3.records[j].boxes()[i].class_id == gp3.scenes[j].objects[i].class_id);
    }
  }
}

TEST_CASE("generated class shares follow the abundance") {
  SceneSpec s = SceneSpec::defaults(3);
  s.abundance = {0.8, 0.15, 0.05};
  Rng rng(77);
  const auto scenes = generate_scenes(10000, s, rng);
  std::vector<double> counts(3, 0.0);
  double total = 0.0;
  for (const auto& sc : scenes) {
    for (const auto& o : sc.objects) {
      counts[static_cast<std::size_t>(o.class_id)] += 1.0;
      total += 1.0;
    }
  }
  for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(counts[c] / total - s.abundance[c]) < 0.02);
}

TEST_CASE("pool generation is deterministic and carries passes") {
  const SceneSpec s = SceneSpec::defaults(3);
  const auto a = generate_pool(40, s, 12);
  const auto b = generate_pool(40, s, 12);
  std::ostringstream sa, sb;
  write_pool(sa, a.records);
  write_pool(sb, b.records);
  CHECK(sa.str() == sb.str());
  CHECK(scenes_to_jsonl(a.scenes) == scenes_to_jsonl(b.scenes));
  const auto c = generate_pool(40, s, 13);
  std::ostringstream sc;
  write_pool(sc, c.records);
  CHECK(sc.str() != sa.str());
  for (const auto& r : a.records) {
    REQUIRE(r.mc_passes().has_value());
    CHECK(r.mc_passes()->passes() == 5);
    CHECK(r.mc_passes()->boxes() == r.num_boxes());
  }
  CHECK_NOTHROW(validate_pool(a.records, PoolSchema{3, 5}));
}

TEST_CASE("oracle charges boxes and enforces uniqueness") {
  std::vector<SyntheticScene> scenes(4);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    scenes[i].cloud_id = "s" + std::to_string(i);
    scenes[i].objects.resize(i + 1);
  }
  Oracle oracle(std::span<const SyntheticScene>(scenes), std::nullopt);
  std::vector<std::string> ids = {"s2", "s1"};
  const auto ann = oracle.annotate(ids);
  CHECK(ann.cost == 5);
  CHECK(ann.delivered.size() == 2);
  CHECK(ann.delivered[0].boxes.size() == 3);
  CHECK(oracle.annotate({}).cost == 0);
  std::vector<std::string> again = {"s1"};
  CHECK_THROWS_AS(oracle.annotate(again), IntegrityError);
  std::vector<std::string> twice = {"s0", "s0"};
  CHECK_THROWS_AS(oracle.annotate(twice), IntegrityError);
  std::vector<std::string> unknown = {"nope"};
  CHECK_THROWS_AS(oracle.annotate(unknown), IntegrityError);
  CHECK(oracle.ledger().spent == 5);
}

TEST_CASE("oracle truncates at the budget boundary in request order") {
  std::vector<SyntheticScene> scenes(3);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    scenes[i].cloud_id = "s" + std::to_string(i);
    scenes[i].objects.resize(3 - i);  // costs 3, 2, 1
  }
  Oracle oracle(std::span<const SyntheticScene>(scenes), std::int64_t{4});
  std::vector<std::string> ids = {"s0", "s1", "s2"};
  try {
    oracle.annotate(ids);
    FAIL("expected the budget to run out");
  } catch (const BudgetExceededError& e) {
    REQUIRE(e.partial().delivered.size() == 1);
    CHECK(e.partial().delivered[0].cloud_id == "s0");
    CHECK(e.partial().truncated);
  }
  CHECK(oracle.ledger().spent == 3);
  CHECK(oracle.annotated("s0"));
  CHECK_FALSE(oracle.annotated("s1"));
}

TEST_CASE("oracle over records reads the ground-truth count") {
  std::vector<PoolRecord> recs = {PoolRecord("a", {}, std::nullopt, std::nullopt, std::int64_t{3}),
                                  PoolRecord("b", {}, std::nullopt, std::nullopt, std::int64_t{2})};
  Oracle oracle(std::span<const PoolRecord>(recs), std::nullopt);
  std::vector<std::string> ids = {"a", "b"};
  CHECK(oracle.annotate(ids).cost == 5);
  std::vector<PoolRecord> missing = {PoolRecord("a", {})};
  CHECK_THROWS_AS(Oracle(std::span<const PoolRecord>(missing), std::nullopt), DataError);
}

TEST_CASE("alignment metrics identities") {
  const auto gp = generate_pool(60, SceneSpec::defaults(3), 5);
  const ReferencePrior ref = make_reference_prior(gp.records, 3, 5.0, 128);

  const auto whole = alignment_metrics(gp.records, ref);
  CHECK(whole.at("cover_radius") == 0.0);

  std::vector<PoolRecord> balanced = {crb::test::labeled("x", {0, 1, 2}), crb::test::labeled("y", {2, 1, 0})};
  std::vector<PoolRecord> bal_pool = balanced;
  const ReferencePrior flat{3, gpdb::DensityPrior::from_pool(bal_pool, 3, 5.0, 64), {}};
  CHECK_THROWS_AS(alignment_metrics(balanced, flat), DataError);  // no passes, no embeddings

  CHECK_THROWS_AS(alignment_metrics({}, ref), DataError);

  // The density metric is the stage-3 objective of the same selection.
  StrategyConfig cfg;
  cfg.nr = 5;
  cfg.k2 = 10;
  cfg.k1 = 20;
  cfg.grid_size = 128;
  const auto out = select_batch(gp.records, cfg);
  std::vector<PoolRecord> chosen;
  for (const auto& id : out.selected_ids) {
    for (const auto& r : gp.records) {
      if (r.cloud_id() == id) chosen.push_back(r);
    }
  }
  CHECK(alignment_metrics(chosen, ref).at("density_score") == out.diagnostics.at("stage3_objective"));
}

TEST_CASE("label KL is zero for a class-balanced selection") {
  Rng rng(1);
  std::vector<BoxPrediction> boxes;
  for (int c = 0; c < 3; ++c) boxes.push_back(crb::test::make_box(c));
  std::vector<double> passes;
  for (int m = 0; m < 2; ++m) {
    for (const auto& b : boxes) passes.insert(passes.end(), b.box7.begin(), b.box7.end());
  }
  std::vector<PoolRecord> sel = {PoolRecord("x", boxes, McPasses(2, 3, passes))};
  const ReferencePrior ref = make_reference_prior(sel, 3, 5.0, 64);
  CHECK(alignment_metrics(sel, ref).at("label_kl") == 0.0);
}

TEST_CASE("saturating rand round annotates the whole pool") {
  LoopConfig cfg = small_loop(Strategy::rand);
  cfg.pool_size = 40;
  cfg.initial_labeled = 5;
  cfg.strategy.nr = 35;
  cfg.strategy.k1 = cfg.strategy.k2 = 35;
  cfg.strategy.rounds = 2;
  const auto man = run_loop(cfg);
  REQUIRE(man.rounds.size() == 1);
  CHECK(man.rounds[0].selected_ids.size() == 35);
  CHECK(man.stopped_early);
  require_invariants(man);
}

TEST_CASE("crb rounds respect the stage chain and the ledger") {
  const auto man = run_loop(small_loop(Strategy::crb, 3));
  REQUIRE(man.rounds.size() == 3);
  for (const auto& r : man.rounds) {
    CHECK(r.stage_sizes[0] == 30);
    CHECK(r.stage_sizes[1] == 20);
    CHECK(r.stage_sizes[2] == 10);
  }
  CHECK(man.ledger.spent == man.rounds.back().boxes_annotated_cumulative);
  require_invariants(man);
}

TEST_CASE("every strategy completes a loop") {
  for (Strategy s : {Strategy::rand, Strategy::entropy, Strategy::coreset, Strategy::badge, Strategy::mc_reg}) {
    const auto man = run_loop(small_loop(s, 1));
    CHECK(man.rounds.size() == 3);
    require_invariants(man);
  }
}

TEST_CASE("tight budget truncates the first round") {
  LoopConfig cfg = small_loop(Strategy::crb, 2);
  cfg.budget_boxes = 7;
  const auto man = run_loop(cfg);
  REQUIRE(man.rounds.size() == 1);
  CHECK(man.stopped_early);
  CHECK(man.rounds[0].diagnostics.at("truncated") == 1.0);
  CHECK(man.rounds[0].selected_ids.size() < 10);
  CHECK(man.ledger.spent <= 7);
  require_invariants(man);
  const auto doc = manifest_to_json(man);
  CHECK(doc["stopped_early"].get<bool>());
  CHECK(doc["budget"]["spent"].get<std::int64_t>() == man.ledger.spent);
}

TEST_CASE("held-out error does not grow as annotations accumulate") {
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    LoopConfig cfg;
    cfg.strategy.num_classes = 2;
    cfg.scene = SceneSpec::defaults(2);
    cfg.strategy.seed = seed;
    cfg.strategy.rounds = 3;
    cfg.strategy.nr = 50;
    cfg.strategy.k2 = 100;
    cfg.strategy.k1 = 150;
    cfg.pool_size = 2000;
    const auto man = run_loop(cfg);
    REQUIRE(man.metrics.size() == 3);
    double prev = man.initial_heldout_rmse;
    for (const auto& m : man.metrics) {
      CHECK(m.heldout_rmse <= prev);
      prev = m.heldout_rmse;
    }
    require_invariants(man);
  }
}

TEST_CASE("loop output is reproducible") {
  const LoopConfig cfg = small_loop(Strategy::crb, 9);
  const auto a = run_loop(cfg);
  const auto b = run_loop(cfg);
  CHECK(manifest_to_json(a).dump(2) == manifest_to_json(b).dump(2));
  CHECK(metrics_csv(a) == metrics_csv(b));
  CHECK(metrics_csv(a).find("NA") != std::string::npos);
}

TEST_CASE("strategies share pool, held-out set and initial labels") {
  const auto a = prepare_experiment(small_loop(Strategy::crb, 4));
  const auto b = prepare_experiment(small_loop(Strategy::rand, 4));
  CHECK(scenes_to_jsonl(a.scenes) == scenes_to_jsonl(b.scenes));
  CHECK(scenes_to_jsonl(a.heldout) == scenes_to_jsonl(b.heldout));
  CHECK(a.initial_labeled == b.initial_labeled);
  CHECK(a.detector.head() == b.detector.head());
}

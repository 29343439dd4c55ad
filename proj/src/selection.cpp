#include "crb/selection.hpp"

#include <algorithm>
#include <chrono>
#include <unordered_map>

#include "crb/baselines.hpp"
#include "crb/error.hpp"
#include "crb/stage_cls.hpp"

namespace crb {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

void require_field(std::span<const PoolRecord> pool, bool (*has)(const PoolRecord&),
                   const char* field, const char* strategy) {
  for (const PoolRecord& r : pool) {
    if (!has(r)) {
      throw DataError(std::string("strategy ") + strategy + " requires field '" + field +
                      "'; first record without it: '" + r.cloud_id() + "'");
    }
  }
}

std::vector<std::vector<double>> pool_embeddings_or_throw(std::span<const PoolRecord> pool,
                                                          const char* strategy) {
  std::size_t ingested = 0;
  for (const PoolRecord& r : pool) ingested += r.gradient_embedding() ? 1 : 0;
  if (ingested == 0) {
    require_field(pool, [](const PoolRecord& r) { return r.num_boxes() == 0 || r.mc_passes().has_value(); },
                  "mc_passes", strategy);
  }
  return rps::resolve_embeddings(pool).vectors;
}

void run_crb(std::span<const PoolRecord> pool, const StrategyConfig& cfg,
             const SelectionContext& ctx, SelectionOutcome& out) {
  // Stage 1: concise label sampling.
  auto t0 = Clock::now();
  const auto scores = cls::score_pool(pool, cfg.num_classes);
  const auto top = cls::rank_top_k(scores, cfg.k1);
  std::vector<PoolRecord> stage1;
  stage1.reserve(top.size());
  double mean_entropy = 0.0;
  for (std::size_t i : top) {
    stage1.push_back(pool[i]);
    out.stage1_ids.push_back(pool[i].cloud_id());
    mean_entropy += scores[i].entropy;
  }
  if (!top.empty()) mean_entropy /= static_cast<double>(top.size());
  out.stage_ms[0] = elapsed_ms(t0);

  // Stage 2: representative prototypes in gradient space.
  t0 = Clock::now();
  std::size_t ingested = 0;
  for (const PoolRecord& r : pool) ingested += r.gradient_embedding() ? 1 : 0;
  if (ingested != 0 && ingested != pool.size()) {
    throw SchemaError("pool mixes ingested gradient_embedding with records that lack one");
  }
  const rps::Embeddings emb = [&] {
    if (ingested == 0) {
      require_field(stage1, [](const PoolRecord& r) { return r.num_boxes() == 0 || r.mc_passes().has_value(); },
                    "mc_passes", "crb");
    }
    return rps::resolve_embeddings(stage1);
  }();
  const rps::DistanceMatrix dist = rps::pairwise_distances(emb.vectors);
  rps::MedoidResult medoids = rps::k_medoids(out.stage1_ids, dist, std::min(cfg.k2, stage1.size()), cfg.seed);
  for (const auto& w : medoids.warnings) out.warnings.push_back(w);
  out.stage2_ids = medoids.medoid_ids;
  std::unordered_map<std::string, std::size_t> stage1_index;
  for (std::size_t i = 0; i < stage1.size(); ++i) stage1_index.emplace(stage1[i].cloud_id(), i);
  std::vector<PoolRecord> stage2;
  stage2.reserve(out.stage2_ids.size());
  for (const auto& id : out.stage2_ids) stage2.push_back(stage1[stage1_index.at(id)]);
  out.stage_ms[1] = elapsed_ms(t0);

  // Stage 3: greedy point-density balancing against pool-wide intervals.
  t0 = Clock::now();
  const auto prior = gpdb::DensityPrior::from_pool(pool, cfg.num_classes, cfg.bandwidth, cfg.grid_size);
  gpdb::GreedyResult greedy = gpdb::greedy_balance(stage2, std::min(cfg.nr, stage2.size()), prior);
  for (const auto& w : greedy.warnings) out.warnings.push_back(w);
  out.selected_ids = greedy.selected;
  out.stage_ms[2] = elapsed_ms(t0);

  std::size_t excluded = 0;
  for (const auto& iv : prior.intervals) excluded += iv ? 0 : 1;
  out.stage_sizes = {stage1.size(), stage2.size(), out.selected_ids.size()};
  out.diagnostics["stage1_mean_entropy"] = mean_entropy;
  out.diagnostics["stage2_medoid_cost"] = medoids.total_cost;
  out.diagnostics["stage2_swaps"] = static_cast<double>(medoids.cost_trace.empty() ? 0 : medoids.cost_trace.size() - 1);
  out.diagnostics["stage2_embedding_ingested"] = emb.source == rps::EmbeddingSource::ingested ? 1.0 : 0.0;
  out.diagnostics["stage3_objective"] = greedy.final_score.total;
  out.diagnostics["stage3_excluded_classes"] = static_cast<double>(excluded);
  if (ctx.keep_trace) {
    out.medoids = std::move(medoids);
    out.greedy = std::move(greedy);
  }
}

}  // namespace

SelectionOutcome select_batch(std::span<const PoolRecord> pool, const StrategyConfig& cfg,
                              const SelectionContext& ctx) {
  cfg.validate();
  SelectionOutcome out;
  if (cfg.strategy == Strategy::crb) {
    run_crb(pool, cfg, ctx, out);
  } else {
    const auto t0 = Clock::now();
    baselines::StrategyOutput res;
    switch (cfg.strategy) {
      case Strategy::rand:
        res = baselines::rand_select(pool, cfg.nr, ctx.seed);
        break;
      case Strategy::entropy:
        res = baselines::entropy_select(pool, cfg.nr, cfg.num_classes);
        break;
      case Strategy::coreset: {
        const auto emb = pool_embeddings_or_throw(pool, "coreset");
        std::vector<std::string> ids;
        for (const PoolRecord& r : pool) ids.push_back(r.cloud_id());
        auto cs = baselines::coreset_select(emb, ids, ctx.labeled_embeddings, cfg.nr);
        if (!cs.cover_radii.empty()) out.diagnostics["coreset_final_radius"] = cs.cover_radii.back();
        res = std::move(cs.output);
        break;
      }
      case Strategy::badge:
        res = baselines::badge_select(pool, cfg.nr, ctx.seed, cfg.num_classes);
        break;
      case Strategy::mc_reg:
        res = baselines::mc_reg_select(pool, cfg.nr);
        break;
      case Strategy::crb:
        break;
    }
    out.stage_ms[0] = elapsed_ms(t0);
    out.selected_ids = std::move(res.selected_ids);
    out.warnings = std::move(res.warnings);
    const std::size_t k = out.selected_ids.size();
    out.stage_sizes = {k, k, k};
  }
  out.diagnostics["warnings"] = static_cast<double>(out.warnings.size());
  return out;
}

SelectionRound to_selection_round(const SelectionOutcome& outcome, std::size_t round_index,
                                  std::int64_t boxes_annotated_cumulative) {
  SelectionRound r;
  r.round_index = round_index;
  r.selected_ids = outcome.selected_ids;
  r.stage_sizes = outcome.stage_sizes;
  r.boxes_annotated_cumulative = boxes_annotated_cumulative;
  r.diagnostics = outcome.diagnostics;
  return r;
}

}  // namespace crb

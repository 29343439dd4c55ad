#include "crb/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "crb/error.hpp"
#include "crb/parallel.hpp"
#include "crb/rng.hpp"
#include "crb/stage_cls.hpp"
#include "crb/stage_rps.hpp"

namespace crb::baselines {

StrategyOutput rand_select(std::span<const PoolRecord> pool, std::size_t nr, std::uint64_t seed) {
  Rng rng(seed);
  StrategyOutput out;
  for (std::size_t i : sample_without_replacement(pool.size(), nr, rng)) {
    out.selected_ids.push_back(pool[i].cloud_id());
  }
  return out;
}

StrategyOutput entropy_select(std::span<const PoolRecord> pool, std::size_t nr,
                              std::size_t num_classes) {
  const auto scores = cls::score_pool(pool, num_classes);
  StrategyOutput out;
  for (std::size_t i : cls::rank_top_k(scores, nr)) {
    out.selected_ids.push_back(scores[i].cloud_id);
    out.scores[scores[i].cloud_id] = scores[i].entropy;
  }
  return out;
}

CoresetOutput coreset_select(std::span<const std::vector<double>> pool_embeddings,
                             std::span<const std::string> pool_ids,
                             std::span<const std::vector<double>> labeled_embeddings,
                             std::size_t nr) {
  const std::size_t n = pool_embeddings.size();
  if (pool_ids.size() != n) throw SchemaError("coreset: ids and embeddings differ in length");
  CoresetOutput result;
  if (n == 0) return result;
  const std::size_t dim = pool_embeddings[0].size();
  for (const auto& e : pool_embeddings) {
    if (e.size() != dim) throw SchemaError("coreset: pool embeddings differ in dimension");
  }
  for (const auto& e : labeled_embeddings) {
    if (e.size() != dim) throw SchemaError("coreset: labeled embedding dimension mismatch");
  }
  nr = std::min(nr, n);

  std::vector<std::size_t> by_id(n);
  std::iota(by_id.begin(), by_id.end(), std::size_t{0});
  std::sort(by_id.begin(), by_id.end(), [&](std::size_t a, std::size_t b) { return pool_ids[a] < pool_ids[b]; });

  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> cover(n, kInf);
  parallel_for(n, [&](std::size_t i) {
    for (const auto& l : labeled_embeddings) cover[i] = std::min(cover[i], rps::euclidean(pool_embeddings[i], l));
  }, 256);
  std::vector<char> taken(n, 0);

  auto absorb = [&](std::size_t pick) {
    taken[pick] = 1;
    parallel_for(n, [&](std::size_t i) {
      cover[i] = std::min(cover[i], rps::euclidean(pool_embeddings[i], pool_embeddings[pick]));
    }, 4096);
    double radius = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!taken[i]) radius = std::max(radius, cover[i]);
    }
    result.cover_radii.push_back(radius);
  };

  for (std::size_t step = 0; step < nr; ++step) {
    std::size_t pick = n;
    double best = -1.0;
    if (labeled_embeddings.empty() && step == 0) {
      for (std::size_t i : by_id) {
        const double norm = std::sqrt(std::inner_product(pool_embeddings[i].begin(), pool_embeddings[i].end(),
                                                         pool_embeddings[i].begin(), 0.0));
        if (norm > best) {
          best = norm;
          pick = i;
        }
      }
    } else {
      for (std::size_t i : by_id) {
        if (!taken[i] && cover[i] > best) {
          best = cover[i];
          pick = i;
        }
      }
    }
    result.output.scores[pool_ids[pick]] = best;
    result.output.selected_ids.push_back(pool_ids[pick]);
    absorb(pick);
  }
  return result;
}

std::vector<double> classification_gradient(const PoolRecord& record, std::size_t num_classes) {
  constexpr std::size_t inputs = kBoxDims + 1;
  std::vector<double> g(num_classes * inputs, 0.0);
  if (num_classes < 2) return g;
  for (const BoxPrediction& b : record.boxes()) {
    const auto y = static_cast<std::size_t>(b.class_id);
    if (y >= num_classes) throw SchemaError("record '" + record.cloud_id() + "': class_id out of range");
    const double rest = (1.0 - b.confidence) / static_cast<double>(num_classes - 1);
    for (std::size_t c = 0; c < num_classes; ++c) {
      const double p = c == y ? b.confidence : rest;
      const double logit_grad = p - (c == y ? 1.0 : 0.0);
      for (std::size_t j = 0; j < kBoxDims; ++j) g[c * inputs + j] += logit_grad * b.box7[j];
      g[c * inputs + kBoxDims] += logit_grad;
    }
  }
  return g;
}

std::vector<std::vector<double>> badge_embeddings(std::span<const PoolRecord> pool,
                                                  std::size_t num_classes) {
  std::size_t ingested = 0;
  for (const PoolRecord& r : pool) ingested += r.gradient_embedding() ? 1 : 0;
  std::vector<std::vector<double>> out(pool.size());
  if (ingested == pool.size()) {
    for (std::size_t i = 0; i < pool.size(); ++i) out[i] = *pool[i].gradient_embedding();
    return out;
  }
  if (ingested != 0) {
    throw SchemaError("pool mixes ingested gradient_embedding with records that lack one");
  }
  parallel_for(pool.size(), [&](std::size_t i) { out[i] = classification_gradient(pool[i], num_classes); });
  return out;
}

StrategyOutput kmeanspp_select(std::span<const std::vector<double>> embeddings,
                               std::span<const std::string> ids, std::size_t nr,
                               std::uint64_t seed) {
  const std::size_t n = embeddings.size();
  if (ids.size() != n) throw SchemaError("badge: ids and embeddings differ in length");
  for (const auto& e : embeddings) {
    if (!embeddings.empty() && e.size() != embeddings[0].size()) {
      throw SchemaError("badge: embeddings differ in dimension");
    }
  }
  StrategyOutput out;
  nr = std::min(nr, n);
  if (nr == 0) return out;
  Rng rng(seed);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::vector<char> taken(n, 0);

  auto take = [&](std::size_t pick, double weight) {
    taken[pick] = 1;
    out.selected_ids.push_back(ids[pick]);
    out.scores[ids[pick]] = weight;
    parallel_for(n, [&](std::size_t i) {
      const double d = rps::euclidean(embeddings[i], embeddings[pick]);
      d2[i] = std::min(d2[i], d * d);
    }, 4096);
    d2[pick] = 0.0;
  };

  take(rng.index(n), 0.0);
  while (out.selected_ids.size() < nr) {
    std::vector<double> weights(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) weights[i] = taken[i] ? 0.0 : d2[i];
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (total > 0.0) {
      const std::size_t pick = rng.discrete(weights);
      take(pick, weights[pick]);
    } else {
      // Every remaining point duplicates a pick; fall back to a uniform draw.
      std::vector<std::size_t> left;
      for (std::size_t i = 0; i < n; ++i) {
        if (!taken[i]) left.push_back(i);
      }
      take(left[rng.index(left.size())], 0.0);
    }
  }
  return out;
}

StrategyOutput badge_select(std::span<const PoolRecord> pool, std::size_t nr, std::uint64_t seed,
                            std::size_t num_classes) {
  const auto embeddings = badge_embeddings(pool, num_classes);
  std::vector<std::string> ids;
  ids.reserve(pool.size());
  for (const PoolRecord& r : pool) ids.push_back(r.cloud_id());
  return kmeanspp_select(embeddings, ids, nr, seed);
}

double mc_reg_score(const McPasses& passes) {
  const std::size_t m = passes.passes();
  const std::size_t nb = passes.boxes();
  if (nb == 0 || m < 2) return 0.0;
  double total = 0.0;
  for (std::size_t b = 0; b < nb; ++b) {
    for (std::size_t k = 0; k < kBoxDims; ++k) {
      double mean = 0.0;
      for (std::size_t p = 0; p < m; ++p) mean += passes.at(p, b, k);
      mean /= static_cast<double>(m);
      double ss = 0.0;
      for (std::size_t p = 0; p < m; ++p) {
        const double d = passes.at(p, b, k) - mean;
        ss += d * d;
      }
      total += ss / static_cast<double>(m - 1);
    }
  }
  return total / static_cast<double>(nb * kBoxDims);
}

StrategyOutput mc_reg_select(std::span<const PoolRecord> pool, std::size_t nr) {
  StrategyOutput out;
  struct Scored {
    double score;
    const std::string* id;
  };
  std::vector<Scored> scored;
  std::size_t skipped = 0;
  std::size_t single_pass = 0;
  for (const PoolRecord& r : pool) {
    if (!r.mc_passes()) {
      ++skipped;
      continue;
    }
    if (r.mc_passes()->passes() < 2) ++single_pass;
    scored.push_back({mc_reg_score(*r.mc_passes()), &r.cloud_id()});
  }
  if (skipped) {
    out.warnings.push_back(std::to_string(skipped) + " record(s) without mc_passes excluded");
  }
  if (single_pass) {
    out.warnings.push_back(std::to_string(single_pass) +
                           " record(s) with a single pass scored as zero variance");
  }
  const std::size_t k = std::min(nr, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(),
                    [](const Scored& a, const Scored& b) {
                      if (a.score != b.score) return a.score > b.score;
                      return *a.id < *b.id;
                    });
  for (std::size_t i = 0; i < k; ++i) {
    out.selected_ids.push_back(*scored[i].id);
    out.scores[*scored[i].id] = scored[i].score;
  }
  return out;
}

}  // namespace crb::baselines

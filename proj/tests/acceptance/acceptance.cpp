// Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
// if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "crb/bench.hpp"
#include "crb/harness.hpp"
#include "crb/rng.hpp"
#include "crb/stage_cls.hpp"
#include "crb/stage_gpdb.hpp"
#include "crb/stage_rps.hpp"
#include "support.hpp"

using namespace crb;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---- entropy ---------------------------------------------------------------

double direct_entropy(const std::vector<std::size_t>& counts) {
  double n = 0.0;
  for (auto c : counts) n += static_cast<double>(c);
  if (n == 0.0) return 0.0;
  double z = 0.0;
  for (auto c : counts) z += std::exp(static_cast<double>(c) / n);
  double h = 0.0;
  for (auto c : counts) {
    const double p = std::exp(static_cast<double>(c) / n) / z;
    h -= p * std::log(p);
  }
  return h;
}

Outcome entropy_oracle() {
  double worst = 0.0;
  std::size_t cases = 0;
  for (std::size_t classes = 1; classes <= 3; ++classes) {
    std::vector<std::size_t> counts(classes, 0);
    std::function<void(std::size_t, std::size_t)> walk = [&](std::size_t c, std::size_t left) {
      if (c == classes) {
        cls::LabelHistogram h;
        h.counts = counts;
        for (auto v : counts) h.n_boxes += v;
        worst = std::max(worst, std::abs(cls::label_entropy(h) - direct_entropy(counts)));
        ++cases;
        return;
      }
      for (std::size_t k = 0; k <= left; ++k) {
        counts[c] = k;
        walk(c + 1, left - k);
      }
      counts[c] = 0;
    };
    walk(0, 6);
  }
  bool uniform_exact = true;
  for (std::size_t classes = 1; classes <= 3; ++classes) {
    for (std::size_t k = 1; k <= 2; ++k) {
      cls::LabelHistogram h;
      h.counts.assign(classes, k);
      h.n_boxes = classes * k;
      uniform_exact = uniform_exact && cls::label_entropy(h) == std::log(static_cast<double>(classes));
    }
  }
  return {worst < 1e-12 && uniform_exact,
          fmt("%zu histograms, max |err| %.3g, uniform exact %s", cases, worst, uniform_exact ? "yes" : "no")};
}

// ---- KDE mass --------------------------------------------------------------

double trapezoid_mass(const std::vector<double>& samples, double h) {
  const auto [mn, mx] = std::minmax_element(samples.begin(), samples.end());
  const double lo = *mn - 10 * h, hi = *mx + 10 * h;
  const int steps = 20000;
  const double dx = (hi - lo) / steps;
  double s = 0.0;
  for (int i = 0; i <= steps; ++i) {
    const double w = (i == 0 || i == steps) ? 0.5 : 1.0;
    s += w * gpdb::kde_pdf(samples, h, lo + i * dx);
  }
  return s * dx;
}

Outcome kde_mass() {
  double worst = 0.0;
  for (std::uint64_t set = 0; set < 50; ++set) {
    Rng rng(mix_seed(0x6b6465, set));
    const std::size_t n = 5 + rng.index(60);
    std::vector<double> xs(n);
    for (double& x : xs) x = rng.lognormal(std::log(30.0), 0.8);
    for (double h : {3.0, 5.0, 7.0, 9.0}) worst = std::max(worst, std::abs(trapezoid_mass(xs, h) - 1.0));
  }
  return {worst <= 1e-3, fmt("200 (set, h) pairs, max |mass - 1| %.3g", worst)};
}

// ---- gradient --------------------------------------------------------------

Outcome gradient_check() {
  Rng rng(0x67726164);
  std::size_t accepted = 0, skipped = 0;
  double worst = 0.0;
  while (accepted < 100) {
    const PoolRecord rec =
        crb::test::random_record("r", rng, 3, 1 + rng.index(4), 2 + rng.index(4), 1.5);
    std::vector<double> w = rps::identity_head_params();
    for (double& v : w) v += 0.05 * rng.normal();

    const auto bar = rps::average_passes(*rec.mc_passes());
    bool near_kink = false;
    for (std::size_t i = 0; i < rec.num_boxes(); ++i) {
      for (std::size_t k = 0; k < kBoxDims; ++k) {
        double pred = w[k * rps::kHeadInputs + kBoxDims];
        for (std::size_t j = 0; j < kBoxDims; ++j) pred += w[k * rps::kHeadInputs + j] * rec.boxes()[i].box7[j];
        const double r = std::abs(pred - bar.box(i)[k]);
        near_kink = near_kink || (r >= 0.99 && r <= 1.01);
      }
    }
    if (near_kink) {
      ++skipped;
      continue;
    }
    const auto g = rps::surrogate_gradient(rec, w).vec;
    double diff = 0.0, norm = 0.0;
    const double step = 1e-6;
    for (std::size_t p = 0; p < w.size(); ++p) {
      auto up = w, down = w;
      up[p] += step;
      down[p] -= step;
      const double fd = (rps::surrogate_loss(rec, up) - rps::surrogate_loss(rec, down)) / (2 * step);
      diff += (fd - g[p]) * (fd - g[p]);
      norm += g[p] * g[p];
    }
    worst = std::max(worst, std::sqrt(diff / norm));
    ++accepted;
  }
  return {worst < 1e-4, fmt("100 instances (%zu skipped near the kink), max relative error %.3g", skipped, worst)};
}

// ---- k-medoids -------------------------------------------------------------

double exhaustive_cost(const rps::DistanceMatrix& d, std::size_t k) {
  const std::size_t n = d.size();
  std::vector<int> mask(n, 0);
  std::fill(mask.end() - static_cast<std::ptrdiff_t>(k), mask.end(), 1);
  double best = std::numeric_limits<double>::infinity();
  do {
    double cost = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double m = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) {
        if (mask[j]) m = std::min(m, d(i, j));
      }
      cost += m;
    }
    best = std::min(best, cost);
  } while (std::next_permutation(mask.begin(), mask.end()));
  return best;
}

std::vector<std::string> ids_for(std::size_t n) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back(crb::test::id_of(i));
  return ids;
}

Outcome medoids_oracle() {
  Rng rng(0x706d);
  std::size_t within = 0;
  double worst_ratio = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    const std::size_t n = 6 + rng.index(7);
    const std::size_t k = 1 + rng.index(3);
    std::vector<std::vector<double>> pts(n, std::vector<double>(4));
    for (auto& p : pts) {
      for (double& v : p) v = rng.normal();
    }
    const auto d = rps::pairwise_distances(pts);
    const double got = rps::k_medoids(ids_for(n), d, k).total_cost;
    const double best = exhaustive_cost(d, k);
    worst_ratio = std::max(worst_ratio, got / best);
    within += got <= 1.05 * best ? 1 : 0;
  }
  std::size_t split = 0;
  for (int inst = 0; inst < 20; ++inst) {
    std::vector<std::vector<double>> pts;
    for (int i = 0; i < 4; ++i) pts.push_back({rng.normal(0.0, 1.0), rng.normal(0.0, 1.0)});
    for (int i = 0; i < 4; ++i) pts.push_back({rng.normal(15.0, 1.0), rng.normal(-15.0, 1.0)});
    const auto res = rps::k_medoids(ids_for(8), rps::pairwise_distances(pts), 2);
    const bool ok = res.medoid_ids.size() == 2 && res.medoid_ids[0] < crb::test::id_of(4) &&
                    res.medoid_ids[1] >= crb::test::id_of(4);
    split += ok ? 1 : 0;
  }
  return {within == 20 && split == 20,
          fmt("%zu/20 within 5%% (worst ratio %.4f), 2-blob split %zu/20", within, worst_ratio, split)};
}

// ---- greedy balance --------------------------------------------------------

Outcome greedy_balance_check() {
  Rng rng(0x6772);
  std::size_t exact_pools = 0, beats = 0;
  for (int inst = 0; inst < 20; ++inst) {
    std::vector<PoolRecord> pool;
    for (int i = 0; i < 80; ++i) {
      std::vector<int> labels;
      std::vector<double> dens;
      const std::size_t nb = 1 + rng.index(4);
      for (std::size_t b = 0; b < nb; ++b) {
        labels.push_back(static_cast<int>(rng.index(3)));
        dens.push_back(rng.lognormal(std::log(30.0), 0.7));
      }
      pool.push_back(crb::test::labeled(crb::test::id_of(static_cast<std::size_t>(i)), labels, dens));
    }
    const auto prior = gpdb::DensityPrior::from_pool(pool, 3, 5.0, 256);
    const std::size_t n_cand = 5 + rng.index(4);
    const std::size_t nr = 2 + rng.index(3);
    std::vector<PoolRecord> cands;
    for (std::size_t j : sample_without_replacement(pool.size(), n_cand, rng)) cands.push_back(pool[j]);
    auto find = [&](const std::string& id) {
      return *std::find_if(cands.begin(), cands.end(), [&](const PoolRecord& r) { return r.cloud_id() == id; });
    };

    const auto res = gpdb::greedy_balance(cands, nr, prior);
    bool exact = res.steps.size() == nr;
    std::vector<PoolRecord> chosen;
    for (const auto& step : res.steps) {
      double best = std::numeric_limits<double>::infinity();
      std::string best_id;
      for (const auto& [id, obj] : step.evaluated) {
        auto trial = chosen;
        trial.push_back(find(id));
        exact = exact && gpdb::balance_score(trial, prior).total == obj;
        if (obj < best || (obj == best && id < best_id)) {
          best = obj;
          best_id = id;
        }
      }
      exact = exact && step.chosen == best_id && step.evaluated.size() == cands.size() - chosen.size();
      chosen.push_back(find(step.chosen));
    }
    exact_pools += exact ? 1 : 0;

    std::vector<double> random_scores;
    for (int t = 0; t < 200; ++t) {
      std::vector<PoolRecord> sub;
      for (std::size_t j : sample_without_replacement(cands.size(), nr, rng)) sub.push_back(cands[j]);
      random_scores.push_back(gpdb::balance_score(sub, prior).total);
    }
    std::sort(random_scores.begin(), random_scores.end());
    const double median = 0.5 * (random_scores[99] + random_scores[100]);
    beats += res.final_score.total < median ? 1 : 0;
  }
  return {exact_pools == 20 && beats >= 18,
          fmt("exact per-step argmin in %zu/20 pools, beats random median in %zu/20", exact_pools, beats)};
}

// ---- end-to-end alignment --------------------------------------------------

harness::LoopConfig alignment_config(Strategy s, std::uint64_t seed) {
  harness::LoopConfig cfg;
  cfg.strategy.strategy = s;
  cfg.strategy.num_classes = 3;
  cfg.strategy.seed = seed;
  cfg.strategy.rounds = 3;
  cfg.strategy.nr = 50;
  cfg.strategy.k2 = 100;
  cfg.strategy.k1 = 150;
  cfg.scene = harness::SceneSpec::defaults(3);
  cfg.scene.abundance = {0.8, 0.15, 0.05};
  cfg.pool_size = 2000;
  return cfg;
}

Outcome end_to_end_alignment() {
  std::size_t ok = 0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto crb_run = harness::run_loop(alignment_config(Strategy::crb, seed));
    const auto rand_run = harness::run_loop(alignment_config(Strategy::rand, seed));
    const auto ent_run = harness::run_loop(alignment_config(Strategy::entropy, seed));
    const auto& c = crb_run.metrics.back();
    const auto& r = rand_run.metrics.back();
    const auto& e = ent_run.metrics.back();
    const bool pass = c.label_kl < r.label_kl && c.label_kl < e.label_kl && c.density_score < r.density_score;
    ok += pass ? 1 : 0;
    detail += fmt("%sseed %llu: kl crb %.4f rand %.4f entropy %.4f, density crb %.3f rand %.3f", seed ? "; " : "",
                  static_cast<unsigned long long>(seed), c.label_kl, r.label_kl, e.label_kl, c.density_score,
                  r.density_score);
  }
  return {ok == 3, fmt("%zu/3 seeds; ", ok) + detail};
}

// ---- loop structure --------------------------------------------------------

Outcome loop_structure() {
  std::size_t runs = 0, rounds = 0;
  std::vector<std::string> bad;
  for (Strategy s : {Strategy::crb, Strategy::rand, Strategy::entropy, Strategy::coreset, Strategy::badge,
                     Strategy::mc_reg}) {
    for (std::uint64_t seed = 0; seed < 2; ++seed) {
      for (std::optional<std::int64_t> budget : {std::optional<std::int64_t>{}, std::optional<std::int64_t>{150}}) {
        harness::LoopConfig cfg;
        cfg.strategy.strategy = s;
        cfg.strategy.seed = seed;
        cfg.strategy.rounds = 4;
        cfg.strategy.nr = 15;
        cfg.strategy.k2 = 30;
        cfg.strategy.k1 = 45;
        cfg.pool_size = 400;
        cfg.heldout_size = 50;
        cfg.budget_boxes = budget;
        const auto man = harness::run_loop(cfg);
        ++runs;
        rounds += man.rounds.size();
        for (const auto& b : harness::check_loop_invariants(man)) bad.push_back(b);
        if (s == Strategy::crb) {
          for (const auto& r : man.rounds) {
            if (!(r.stage_sizes[0] >= r.stage_sizes[1] && r.stage_sizes[1] >= r.stage_sizes[2])) {
              bad.push_back("stage sizes not nonincreasing");
            }
          }
        }
      }
    }
  }
  return {bad.empty(), fmt("%zu runs, %zu rounds, %zu violations", runs, rounds, bad.size()) +
                           (bad.empty() ? "" : ": " + bad.front())};
}

// ---- complexity ------------------------------------------------------------

Outcome complexity_growth() {
  const std::vector<std::size_t> sizes = {2000, 4000, 8000, 16000};
  const auto crb_b = run_bench(sizes, Strategy::crb, 0);
  const auto core_b = run_bench(sizes, Strategy::coreset, 0);
  const auto rand_b = run_bench(sizes, Strategy::rand, 0);
  const double ratio = crb_b.rows.back().ms / rand_b.rows.back().ms;
  const bool pass = crb_b.slope >= 0.8 && crb_b.slope <= 1.4 && core_b.slope >= 0.8 && core_b.slope <= 1.3 &&
                    ratio >= 10.0;
  return {pass, fmt("Nr %zu; crb slope %.3f, coreset slope %.3f, rand speedup at n=%zu %.0fx", crb_b.nr, crb_b.slope,
                    core_b.slope, sizes.back(), ratio)};
}

// ---- determinism -----------------------------------------------------------

Outcome determinism() {
  std::size_t same = 0, total = 0;
  for (Strategy s : {Strategy::crb, Strategy::badge}) {
    harness::LoopConfig cfg;
    cfg.strategy.strategy = s;
    cfg.strategy.seed = 42;
    cfg.strategy.rounds = 3;
    cfg.strategy.nr = 20;
    cfg.strategy.k2 = 40;
    cfg.strategy.k1 = 60;
    cfg.pool_size = 800;
    const auto a = harness::run_loop(cfg);
    const auto b = harness::run_loop(cfg);
    total += 2;
    same += harness::manifest_to_json(a).dump(2) == harness::manifest_to_json(b).dump(2) ? 1 : 0;
    same += harness::metrics_csv(a) == harness::metrics_csv(b) ? 1 : 0;
  }
  return {same == total, fmt("%zu/%zu manifest and metrics outputs byte-identical", same, total)};
}

struct Criterion {
  const char* name;
  double limit_s;
  Outcome (*run)();
};

}  // namespace

int main() {
  const Criterion criteria[] = {
      {"entropy_oracle", 1.0, entropy_oracle},
      {"kde_mass", 10.0, kde_mass},
      {"gradient_correctness", 5.0, gradient_check},
      {"kmedoids_oracle", 30.0, medoids_oracle},
      {"greedy_balance", 60.0, greedy_balance_check},
      {"end_to_end_alignment", 300.0, end_to_end_alignment},
      {"loop_structure", std::numeric_limits<double>::infinity(), loop_structure},
      {"complexity_growth", 300.0, complexity_growth},
      {"determinism", std::numeric_limits<double>::infinity(), determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < c.limit_s;
    const bool pass = out.pass && in_time;
    failed += pass ? 0 : 1;
    std::string limit = std::isinf(c.limit_s) ? "" : fmt(", limit %.0fs", c.limit_s);
    std::printf("%s %s: %s [%.2fs%s%s]\n", pass ? "PASS" : "FAIL", c.name, out.detail.c_str(), secs, limit.c_str(),
                in_time ? "" : ", over time");
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(std::size(criteria)) - failed, std::size(criteria));
  return failed == 0 ? 0 : 1;
}

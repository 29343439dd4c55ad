// crb: command-line front end for batch selection, simulation and benchmarks.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "crb/bench.hpp"
#include "crb/config.hpp"
#include "crb/error.hpp"
#include "crb/harness.hpp"
#include "crb/parallel.hpp"
#include "crb/pool_io.hpp"
#include "crb/selection.hpp"
#include "crb/stage_cls.hpp"
#include "crb/stage_rps.hpp"

namespace fs = std::filesystem;

namespace {

void emit(const std::optional<std::string>& path, const std::string& text) {
  if (path) {
    crb::write_text_file(*path, text);
  } else {
    std::cout << text;
  }
}

void warn(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
}

struct PoolArgs {
  std::string pool;
  std::optional<std::size_t> classes;
  std::optional<std::size_t> mc_passes;
};

void add_pool_args(CLI::App* cmd, PoolArgs& a) {
  cmd->add_option("--pool", a.pool, "Pool file (JSON Lines)")->required();
  cmd->add_option("--classes", a.classes, "Number of classes (default: inferred from the pool)");
  cmd->add_option("--mc-passes", a.mc_passes, "Expected number of MC passes per record");
}

std::vector<crb::PoolRecord> load_pool(const PoolArgs& a, std::size_t& num_classes) {
  crb::PoolSchema schema;
  schema.num_classes = a.classes;
  schema.mc_passes = a.mc_passes;
  auto pool = crb::read_pool_file(a.pool, schema);
  num_classes = a.classes ? *a.classes : std::max<std::size_t>(1, crb::infer_num_classes(pool));
  return pool;
}

struct StrategyArgs {
  std::string strategy = "crb";
  crb::StrategyConfig cfg;
};

void add_strategy_args(CLI::App* cmd, StrategyArgs& a) {
  // --h is the bandwidth here, so help is --help only.
  cmd->set_help_flag("--help", "Print this help message and exit");
  cmd->add_option("--strategy", a.strategy, "crb, rand, entropy, coreset, badge or mc_reg")->capture_default_str();
  cmd->add_option("--k1", a.cfg.k1, "Stage-1 candidates")->capture_default_str();
  cmd->add_option("--k2", a.cfg.k2, "Stage-2 prototypes")->capture_default_str();
  cmd->add_option("--nr", a.cfg.nr, "Clouds to select")->capture_default_str();
  cmd->add_option("--h,--bandwidth", a.cfg.bandwidth, "KDE bandwidth")->capture_default_str();
  cmd->add_option("--grid", a.cfg.grid_size, "KDE grid points")->capture_default_str();
  cmd->add_option("--seed", a.cfg.seed, "Seed for randomized strategies")->capture_default_str();
}

int run_gen(std::size_t n, std::size_t classes, const std::optional<std::string>& spec_path, std::uint64_t seed,
            const std::string& out, std::optional<std::string> scenes_out, const crb::harness::GenOptions& opts,
            bool with_embeddings) {
  if (n == 0) throw crb::ConfigError("--n must be at least 1");
  crb::harness::SceneSpec spec = crb::harness::SceneSpec::defaults(classes);
  if (spec_path) {
    auto kv = crb::KeyValueConfig::load(*spec_path);
    if (!kv.entries().count("num_classes")) kv.set("num_classes", std::to_string(classes));
    spec = crb::scene_spec_from(kv);
  }
  crb::harness::GeneratedPool gp = crb::harness::generate_pool(n, spec, seed, opts);
  std::vector<crb::PoolRecord> records;
  if (with_embeddings) {
    const auto emb = crb::rps::resolve_embeddings(gp.records).vectors;
    for (std::size_t i = 0; i < gp.records.size(); ++i) {
      const crb::PoolRecord& r = gp.records[i];
      records.emplace_back(crb::PoolRecord(r.cloud_id(), r.boxes(), r.mc_passes(), emb[i],
                                           static_cast<std::int64_t>(gp.scenes[i].gt_box_count())));
    }
  } else {
    records = std::move(gp.records);
  }
  crb::write_pool_file(out, records);
  crb::write_text_file(scenes_out ? *scenes_out : out + ".scenes.jsonl", crb::harness::scenes_to_jsonl(gp.scenes));
  return 0;
}

int run_select(const PoolArgs& pa, StrategyArgs sa, const std::optional<std::string>& labeled_path,
               const std::optional<std::string>& out, std::size_t round_index) {
  sa.cfg.strategy = crb::parse_strategy(sa.strategy);
  sa.cfg.validate();
  std::size_t classes = 0;
  const auto pool = load_pool(pa, classes);
  sa.cfg.num_classes = classes;
  std::vector<std::vector<double>> labeled;
  if (labeled_path) {
    const auto recs = crb::read_pool_file(*labeled_path, {});
    if (!recs.empty()) labeled = crb::rps::resolve_embeddings(recs).vectors;
  }
  crb::SelectionContext ctx;
  ctx.labeled_embeddings = labeled;
  ctx.seed = sa.cfg.seed;
  const crb::SelectionOutcome outcome = crb::select_batch(pool, sa.cfg, ctx);
  warn(outcome.warnings);
  emit(out, crb::write_selection(crb::to_selection_round(outcome, round_index, 0)));
  return 0;
}

int run_loop_cmd(const std::optional<std::string>& config, const std::vector<std::string>& sets,
                 const std::string& out_dir) {
  crb::KeyValueConfig kv;
  if (config) kv = crb::KeyValueConfig::load(*config);
  for (const std::string& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw crb::ConfigError("--set expects key=value, got '" + s + "'");
    kv.set(s.substr(0, eq), s.substr(eq + 1));
  }
  const crb::harness::LoopConfig cfg = crb::loop_config_from(kv);
  const crb::harness::RunManifest man = crb::harness::run_loop(cfg);
  warn(man.warnings);
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  crb::write_text_file(dir / "manifest.json", crb::harness::manifest_to_json(man).dump(2) + "\n");
  crb::write_text_file(dir / "metrics.csv", crb::harness::metrics_csv(man));
  for (const crb::SelectionRound& r : man.rounds) {
    char name[32];
    std::snprintf(name, sizeof name, "round_%03zu.json", r.round_index);
    crb::write_text_file(dir / name, crb::write_selection(r));
  }
  if (man.stopped_early) std::cerr << "stopped early: " << man.stop_reason << '\n';
  return 0;
}

std::string entropy_csv(const std::vector<crb::PoolRecord>& pool, std::size_t classes) {
  std::ostringstream out;
  out.precision(17);
  out << "cloud_id,entropy,n_boxes\n";
  for (const auto& s : crb::cls::score_pool(pool, classes)) {
    out << s.cloud_id << ',' << s.entropy << ',' << s.n_boxes << '\n';
  }
  return out.str();
}

std::string medoid_csv(const crb::SelectionOutcome& o) {
  std::ostringstream out;
  out.precision(17);
  out << "cloud_id,medoid_id,is_medoid\n";
  const auto& m = *o.medoids;
  for (const auto& id : o.stage1_ids) {
    const std::string& med = m.medoid_ids[m.assignment.at(id)];
    out << id << ',' << med << ',' << (med == id ? 1 : 0) << '\n';
  }
  out << "# total_cost," << m.total_cost << '\n';
  return out.str();
}

std::string balance_csv(const crb::SelectionOutcome& o) {
  std::ostringstream out;
  out.precision(17);
  out << "step,chosen,class_id,status,d,d_bar,objective\n";
  const auto& g = *o.greedy;
  for (std::size_t s = 0; s < g.steps.size(); ++s) {
    const auto& st = g.steps[s];
    for (std::size_t c = 0; c < st.score.status.size(); ++c) {
      const char* status = st.score.status[c] == crb::gpdb::ClassStatus::scored   ? "scored"
                           : st.score.status[c] == crb::gpdb::ClassStatus::absent ? "absent"
                                                                                  : "excluded";
      out << s << ',' << st.chosen << ',' << c << ',' << status << ',' << st.score.per_class_kl[c] << ','
          << st.score.normalized[c] << ',' << st.objective << '\n';
    }
  }
  return out.str();
}

int run_stats(const PoolArgs& pa, StrategyArgs sa, const std::string& kind, const std::optional<std::string>& out) {
  std::size_t classes = 0;
  const auto pool = load_pool(pa, classes);
  if (kind == "entropy") {
    emit(out, entropy_csv(pool, classes));
    return 0;
  }
  if (kind != "medoids" && kind != "balance") {
    throw crb::ConfigError("--kind must be entropy, medoids or balance, got '" + kind + "'");
  }
  sa.cfg.strategy = crb::Strategy::crb;
  sa.cfg.num_classes = classes;
  crb::SelectionContext ctx;
  ctx.keep_trace = true;
  const crb::SelectionOutcome o = crb::select_batch(pool, sa.cfg, ctx);
  warn(o.warnings);
  emit(out, kind == "medoids" ? medoid_csv(o) : balance_csv(o));
  return 0;
}

int run_bench_cmd(const std::vector<std::size_t>& sizes, const std::string& strategy, std::uint64_t seed,
                  std::size_t nr, const std::optional<std::string>& out) {
  crb::BenchOptions opts;
  opts.nr = nr;
  const auto res = crb::run_bench(sizes, crb::parse_strategy(strategy), seed, opts);
  emit(out, crb::bench_csv(res));
  return 0;
}

std::size_t env_threads() {
  const char* v = std::getenv("CRB_THREADS");
  if (!v || !*v) return 1;
  try {
    const long n = std::stol(v);
    if (n < 1) throw crb::ConfigError("CRB_THREADS must be a positive integer");
    return static_cast<std::size_t>(n);
  } catch (const std::logic_error&) {
    throw crb::ConfigError(std::string("CRB_THREADS must be a positive integer, got '") + v + "'");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Batch active-learning selection for 3D detection pools"};
  app.require_subcommand(1);
  std::optional<std::size_t> threads;
  app.add_option("--threads", threads, "Worker threads (default: CRB_THREADS or 1)");

  // gen
  auto* gen = app.add_subcommand("gen", "Generate a synthetic pool and its scenes");
  std::size_t gen_n = 1000, gen_classes = 3;
  std::optional<std::string> gen_spec, gen_scenes;
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  crb::harness::GenOptions gen_opts;
  bool gen_emb = false;
  gen->add_option("--n", gen_n, "Number of point clouds")->capture_default_str();
  gen->add_option("--classes", gen_classes, "Number of classes")->capture_default_str();
  gen->add_option("--spec", gen_spec, "Scene settings file (key = value)");
  gen->add_option("--seed", gen_seed, "Seed")->capture_default_str();
  gen->add_option("--out", gen_out, "Output pool file")->required();
  gen->add_option("--scenes", gen_scenes, "Ground-truth scenes file (default: <out>.scenes.jsonl)");
  gen->add_option("--mc-passes", gen_opts.mc_passes, "MC dropout passes")->capture_default_str();
  gen->add_option("--dropout", gen_opts.dropout_rate, "Dropout rate")->capture_default_str();
  gen->add_option("--pretrain", gen_opts.initial_labeled, "Labeled scenes the detector is fit on")
      ->capture_default_str();
  gen->add_flag("--with-embeddings", gen_emb, "Store gradient embeddings and ground-truth counts in records");

  // select
  auto* sel = app.add_subcommand("select", "Select one batch from a pool file");
  PoolArgs sel_pool;
  StrategyArgs sel_strat;
  std::optional<std::string> sel_labeled, sel_out;
  std::size_t sel_round = 0;
  add_pool_args(sel, sel_pool);
  add_strategy_args(sel, sel_strat);
  sel->add_option("--labeled", sel_labeled, "Pool file of already-labeled clouds (coreset)");
  sel->add_option("--round", sel_round, "Round index written to the selection")->capture_default_str();
  sel->add_option("--out", sel_out, "Selection JSON (default: stdout)");

  // loop
  auto* loop = app.add_subcommand("loop", "Run the simulated multi-round acquisition loop");
  std::optional<std::string> loop_cfg;
  std::vector<std::string> loop_sets;
  std::string loop_out;
  loop->add_option("--config", loop_cfg, "Configuration file (key = value)");
  loop->add_option("--set", loop_sets, "Override a configuration key: key=value")->allow_extra_args(false);
  loop->add_option("--out-dir", loop_out, "Directory for manifest, metrics and round files")->required();

  // stats
  auto* stats = app.add_subcommand("stats", "Per-stage diagnostics as CSV");
  PoolArgs st_pool;
  StrategyArgs st_strat;
  std::string st_kind = "entropy";
  std::optional<std::string> st_out;
  add_pool_args(stats, st_pool);
  add_strategy_args(stats, st_strat);
  stats->add_option("--kind", st_kind, "entropy, medoids or balance")->capture_default_str();
  stats->add_option("--out", st_out, "CSV output (default: stdout)");

  // bench
  auto* bench = app.add_subcommand("bench", "Time selection against pool size");
  std::vector<std::size_t> b_sizes = {2000, 4000, 8000, 16000};
  std::string b_strategy = "crb";
  std::uint64_t b_seed = 0;
  std::size_t b_nr = 5;
  std::optional<std::string> b_out;
  bench->add_option("--sizes", b_sizes, "Pool sizes")->delimiter(',')->capture_default_str();
  bench->add_option("--strategy", b_strategy, "Strategy")->capture_default_str();
  bench->add_option("--seed", b_seed, "Seed")->capture_default_str();
  bench->add_option("--nr", b_nr, "Clouds per batch (K1 = 3 Nr, K2 = 2 Nr)")->capture_default_str();
  bench->add_option("--out", b_out, "CSV output (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (threads && *threads == 0) throw crb::ConfigError("--threads must be at least 1");
    crb::set_thread_count(threads ? *threads : env_threads());
    if (*gen) return run_gen(gen_n, gen_classes, gen_spec, gen_seed, gen_out, gen_scenes, gen_opts, gen_emb);
    if (*sel) return run_select(sel_pool, sel_strat, sel_labeled, sel_out, sel_round);
    if (*loop) return run_loop_cmd(loop_cfg, loop_sets, loop_out);
    if (*stats) return run_stats(st_pool, st_strat, st_kind, st_out);
    if (*bench) return run_bench_cmd(b_sizes, b_strategy, b_seed, b_nr, b_out);
  } catch (const crb::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const crb::DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  }
  return 4;
}

#include "crb/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>

#include "crb/parallel.hpp"
#include "crb/pool_io.hpp"
#include "crb/selection.hpp"
#include "crb/stage_rps.hpp"

namespace crb::harness {

namespace {

struct SizePrototype {
  double l, w, h;
};

// Car, pedestrian, cyclist; further classes cycle with a scale factor.
constexpr SizePrototype kPrototypes[] = {{3.9, 1.6, 1.56}, {0.8, 0.6, 1.73}, {1.76, 0.6, 1.73}};

SizePrototype prototype(std::size_t c) {
  const SizePrototype p = kPrototypes[c % 3];
  const double s = 1.0 + 0.25 * static_cast<double>(c / 3);
  return {p.l * s, p.w * s, p.h};
}

// Sensor noise per coordinate before density scaling.
constexpr Box7 kNoise = {0.25, 0.25, 0.08, 0.12, 0.06, 0.06, 0.08};
constexpr Box7 kObsCenter = {35.0, 0.0, -1.0, 2.0, 1.0, 1.6, 0.0};
constexpr Box7 kObsScale = {20.0, 20.0, 0.5, 1.5, 0.5, 0.3, 1.8};
constexpr double kMinSize = 0.05;

std::string format_id(std::string_view prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu", i);
  return std::string(prefix) + buf;
}

double label_kl_of(std::span<const PoolRecord> records, std::size_t num_classes) {
  std::vector<double> counts(num_classes, 0.0);
  double total = 0.0;
  for (const PoolRecord& r : records) {
    for (const BoxPrediction& b : r.boxes()) {
      counts[static_cast<std::size_t>(b.class_id)] += 1.0;
      total += 1.0;
    }
  }
  const double c = static_cast<double>(num_classes);
  if (total == 0.0) return std::log(c);
  double kl = 0.0;
  for (double n : counts) {
    if (n > 0.0) {
      const double q = n / total;
      kl += q * std::log(q * c);
    }
  }
  return kl;
}

}  // namespace

SceneSpec SceneSpec::defaults(std::size_t num_classes) {
  SceneSpec s;
  s.num_classes = num_classes;
  double total = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    s.abundance.push_back(std::pow(0.25, static_cast<double>(c)));
    total += s.abundance.back();
    s.density_median.push_back(60.0 * std::pow(0.55, static_cast<double>(c)));
    s.density_sigma.push_back(0.6);
  }
  for (double& a : s.abundance) a /= total;
  return s;
}

void SceneSpec::validate() const {
  if (num_classes < 1) throw ConfigError("scene: num_classes must be at least 1");
  auto check_len = [&](const std::vector<double>& v, const char* name) {
    if (v.size() != num_classes) {
      throw ConfigError(std::string("scene: ") + name + " needs " + std::to_string(num_classes) +
                        " values, got " + std::to_string(v.size()));
    }
  };
  check_len(abundance, "abundance");
  check_len(density_median, "density_median");
  check_len(density_sigma, "density_sigma");
  double total = 0.0;
  for (double a : abundance) {
    if (!(a >= 0.0) || !std::isfinite(a)) throw ConfigError("scene: abundance values must be nonnegative");
    total += a;
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw ConfigError("scene: abundance must sum to 1, sums to " + std::to_string(total));
  }
  for (double m : density_median) {
    if (!(m > 0.0) || !std::isfinite(m)) throw ConfigError("scene: density_median must be positive");
  }
  for (double s : density_sigma) {
    if (!(s >= 0.0) || !std::isfinite(s)) throw ConfigError("scene: density_sigma must be nonnegative");
  }
  if (!(objects_per_scene >= 1.0)) throw ConfigError("scene: objects_per_scene must be at least 1");
  if (!(empty_scene_rate >= 0.0 && empty_scene_rate < 1.0)) {
    throw ConfigError("scene: empty_scene_rate must be in [0, 1)");
  }
  if (!(label_accuracy > 0.0 && label_accuracy <= 1.0)) {
    throw ConfigError("scene: label_accuracy must be in (0, 1]");
  }
  if (!(density_noise >= 0.0)) throw ConfigError("scene: density_noise must be nonnegative");
  if (!(observation_noise >= 0.0)) throw ConfigError("scene: observation_noise must be nonnegative");
  if (hidden_units < 1) throw ConfigError("scene: hidden_units must be at least 1");
}

std::vector<SyntheticScene> generate_scenes(std::size_t n, const SceneSpec& spec, Rng& rng,
                                            std::string_view id_prefix) {
  spec.validate();
  std::vector<SyntheticScene> scenes(n);
  for (std::size_t i = 0; i < n; ++i) {
    SyntheticScene& scene = scenes[i];
    scene.cloud_id = format_id(id_prefix, i);
    if (rng.bernoulli(spec.empty_scene_rate)) continue;
    const std::size_t count = 1 + rng.poisson(spec.objects_per_scene - 1.0);
    for (std::size_t k = 0; k < count; ++k) {
      SyntheticObject o;
      const std::size_t c = rng.discrete(spec.abundance);
      o.class_id = static_cast<int>(c);
      const SizePrototype p = prototype(c);
      o.box7 = {rng.uniform(0.0, 70.0),
                rng.uniform(-35.0, 35.0),
                rng.normal(-1.0, 0.3),
                p.l * std::exp(rng.normal(0.0, 0.08)),
                p.w * std::exp(rng.normal(0.0, 0.08)),
                p.h * std::exp(rng.normal(0.0, 0.05)),
                rng.uniform(-std::numbers::pi, std::numbers::pi)};
      o.point_density = rng.lognormal(std::log(spec.density_median[c]), spec.density_sigma[c]);
      // Sparse objects are observed with more noise; position suffers a mild
      // range-dependent distortion the linear part of the head cannot absorb.
      const double scale = spec.observation_noise * std::sqrt(20.0 / (o.point_density + 2.0));
      for (std::size_t j = 0; j < kBoxDims; ++j) {
        o.observation[j] = o.box7[j] + scale * kNoise[j] * rng.normal();
      }
      o.observation[0] += 0.004 * o.box7[0] * o.box7[0] - 0.1 * o.box7[0];
      o.observation[1] += 0.05 * std::abs(o.box7[1]);
      o.label_draw = rng.uniform();
      o.confidence_draw = rng.uniform();
      o.density_draw = rng.normal();
      scene.objects.push_back(o);
    }
  }
  return scenes;
}

SurrogateDetector::SurrogateDetector(const SceneSpec& spec, std::uint64_t seed, double dropout_rate,
                                     std::size_t mc_passes)
    : num_classes_(spec.num_classes),
      hidden_units_(spec.hidden_units),
      mc_passes_(mc_passes),
      dropout_rate_(dropout_rate),
      density_noise_(spec.density_noise) {
  spec.validate();
  if (mc_passes < 1) throw ConfigError("detector: mc_passes must be at least 1");
  if (!(dropout_rate > 0.0 && dropout_rate < 1.0)) throw ConfigError("detector: dropout_rate must be in (0, 1)");
  Rng rng(seed);
  encoder_.resize(hidden_units_ * kBoxDims);
  encoder_bias_.resize(hidden_units_);
  const double w_scale = 1.5 / std::sqrt(static_cast<double>(kBoxDims));
  for (double& w : encoder_) w = rng.normal(0.0, w_scale);
  for (double& b : encoder_bias_) b = rng.uniform(-1.0, 1.0);
  head_.assign(kBoxDims * feature_dim(), 0.0);

  confusion_.assign(num_classes_, std::vector<double>(num_classes_, 0.0));
  for (std::size_t c = 0; c < num_classes_; ++c) {
    for (std::size_t d = 0; d < num_classes_; ++d) {
      if (num_classes_ == 1) {
        confusion_[c][d] = 1.0;
      } else {
        confusion_[c][d] = c == d ? spec.label_accuracy
                                  : (1.0 - spec.label_accuracy) / static_cast<double>(num_classes_ - 1);
      }
    }
  }
}

std::vector<double> SurrogateDetector::features(const SyntheticObject& obj) const {
  std::vector<double> f(feature_dim());
  for (std::size_t k = 0; k < kBoxDims; ++k) f[k] = (obj.observation[k] - kObsCenter[k]) / kObsScale[k];
  for (std::size_t u = 0; u < hidden_units_; ++u) {
    double a = encoder_bias_[u];
    for (std::size_t k = 0; k < kBoxDims; ++k) a += encoder_[u * kBoxDims + k] * f[k];
    f[kBoxDims + u] = std::max(a, 0.0);
  }
  f.back() = 1.0;
  return f;
}

Box7 SurrogateDetector::head_forward(std::span<const double> feats) const {
  Box7 out{};
  const std::size_t fd = feature_dim();
  for (std::size_t k = 0; k < kBoxDims; ++k) {
    double s = 0.0;
    for (std::size_t j = 0; j < fd; ++j) s += head_[k * fd + j] * feats[j];
    out[k] = s;
  }
  return out;
}

Box7 SurrogateDetector::predict(const SyntheticObject& obj) const {
  Box7 b = head_forward(features(obj));
  for (std::size_t k = 3; k < 6; ++k) b[k] = std::max(b[k], kMinSize);
  return b;
}

int SurrogateDetector::predict_class(const SyntheticObject& obj) const {
  const auto& row = confusion_[static_cast<std::size_t>(obj.class_id)];
  double acc = 0.0;
  for (std::size_t d = 0; d < row.size(); ++d) {
    acc += row[d];
    if (obj.label_draw < acc) return static_cast<int>(d);
  }
  return static_cast<int>(row.size() - 1);
}

void SurrogateDetector::fit(std::span<const SyntheticScene* const> scenes) {
  std::size_t n = 0;
  for (const SyntheticScene* s : scenes) n += s->objects.size();
  if (n == 0) return;
  const std::size_t fd = feature_dim();
  Eigen::MatrixXd phi(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(fd));
  Eigen::MatrixXd y(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(kBoxDims));
  Eigen::Index row = 0;
  for (const SyntheticScene* s : scenes) {
    for (const SyntheticObject& o : s->objects) {
      const auto f = features(o);
      for (std::size_t j = 0; j < fd; ++j) phi(row, static_cast<Eigen::Index>(j)) = f[j];
      for (std::size_t k = 0; k < kBoxDims; ++k) y(row, static_cast<Eigen::Index>(k)) = o.box7[k];
      ++row;
    }
  }
  Eigen::MatrixXd gram = phi.transpose() * phi;
  gram.diagonal().array() += ridge_ * static_cast<double>(n);
  const Eigen::MatrixXd v = gram.ldlt().solve(phi.transpose() * y);
  for (std::size_t k = 0; k < kBoxDims; ++k) {
    for (std::size_t j = 0; j < fd; ++j) {
      head_[k * fd + j] = v(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k));
    }
  }
}

PoolRecord SurrogateDetector::infer(const SyntheticScene& scene, std::uint64_t pass_seed) const {
  const std::size_t nb = scene.objects.size();
  const std::size_t fd = feature_dim();
  std::vector<BoxPrediction> boxes;
  boxes.reserve(nb);
  std::vector<std::vector<double>> feats;
  feats.reserve(nb);
  for (const SyntheticObject& o : scene.objects) {
    BoxPrediction p;
    p.class_id = predict_class(o);
    p.confidence = p.class_id == o.class_id ? 0.5 + 0.5 * o.confidence_draw : 0.2 + 0.5 * o.confidence_draw;
    feats.push_back(features(o));
    p.box7 = head_forward(feats.back());
    for (std::size_t k = 3; k < 6; ++k) p.box7[k] = std::max(p.box7[k], kMinSize);
    p.point_density = o.point_density * std::exp(density_noise_ * o.density_draw);
    boxes.push_back(p);
  }

  // Dropout acts on the hidden units only; the standardized observation and
  // the bias pass through unchanged.
  Rng rng(pass_seed);
  const double keep_scale = 1.0 / (1.0 - dropout_rate_);
  std::vector<double> values(mc_passes_ * nb * kBoxDims);
  std::vector<double> dropped(fd);
  for (std::size_t m = 0; m < mc_passes_; ++m) {
    for (std::size_t b = 0; b < nb; ++b) {
      dropped = feats[b];
      for (std::size_t u = 0; u < hidden_units_; ++u) {
        double& v = dropped[kBoxDims + u];
        v = rng.bernoulli(dropout_rate_) ? 0.0 : v * keep_scale;
      }
      const Box7 out = head_forward(dropped);
      std::copy(out.begin(), out.end(), values.begin() + static_cast<std::ptrdiff_t>((m * nb + b) * kBoxDims));
    }
  }
  return PoolRecord(scene.cloud_id, std::move(boxes), McPasses(mc_passes_, nb, std::move(values)),
                    std::nullopt, static_cast<std::int64_t>(nb));
}

double SurrogateDetector::rmse(std::span<const SyntheticScene> scenes) const {
  double ss = 0.0;
  std::size_t n = 0;
  for (const SyntheticScene& s : scenes) {
    for (const SyntheticObject& o : s.objects) {
      const Box7 p = predict(o);
      for (std::size_t k = 0; k < kBoxDims; ++k) ss += (p[k] - o.box7[k]) * (p[k] - o.box7[k]);
      n += kBoxDims;
    }
  }
  return n == 0 ? 0.0 : std::sqrt(ss / static_cast<double>(n));
}

GeneratedPool generate_pool(std::size_t n, const SceneSpec& spec, std::uint64_t seed,
                            const GenOptions& options) {
  Rng rng(mix_seed(seed, 0x706f6f6cULL));
  GeneratedPool out;
  out.scenes = generate_scenes(n, spec, rng);
  out.pretrain = generate_scenes(options.initial_labeled, spec, rng, "pretrain_");
  SurrogateDetector detector(spec, rng.next_u64(), options.dropout_rate, options.mc_passes);
  std::vector<const SyntheticScene*> fit_set;
  for (const auto& s : out.pretrain) fit_set.push_back(&s);
  detector.fit(fit_set);
  const std::uint64_t pass_base = rng.next_u64();
  std::vector<std::optional<PoolRecord>> slots(n);
  parallel_for(n, [&](std::size_t i) { slots[i].emplace(detector.infer(out.scenes[i], mix_seed(pass_base, i))); });
  out.records.reserve(n);
  for (auto& r : slots) out.records.push_back(std::move(*r));
  return out;
}

nlohmann::ordered_json scene_to_json(const SyntheticScene& scene) {
  nlohmann::ordered_json doc;
  doc["cloud_id"] = scene.cloud_id;
  auto objects = nlohmann::ordered_json::array();
  for (const SyntheticObject& o : scene.objects) {
    nlohmann::ordered_json obj;
    obj["class_id"] = o.class_id;
    obj["box7"] = o.box7;
    obj["point_density"] = o.point_density;
    objects.push_back(std::move(obj));
  }
  doc["objects"] = std::move(objects);
  return doc;
}

std::string scenes_to_jsonl(std::span<const SyntheticScene> scenes) {
  std::string out;
  for (const SyntheticScene& s : scenes) {
    out += scene_to_json(s).dump();
    out += '\n';
  }
  return out;
}

Oracle::Oracle(std::span<const SyntheticScene> scenes, std::optional<std::int64_t> budget_boxes) {
  if (budget_boxes && *budget_boxes < 0) throw ConfigError("oracle: budget must be nonnegative");
  ledger_.budget_boxes = budget_boxes;
  for (const SyntheticScene& s : scenes) {
    if (!entries_.emplace(s.cloud_id, Entry{static_cast<std::int64_t>(s.gt_box_count()), &s}).second) {
      throw IntegrityError("oracle: duplicate cloud_id '" + s.cloud_id + "'");
    }
  }
}

Oracle::Oracle(std::span<const PoolRecord> records, std::optional<std::int64_t> budget_boxes) {
  if (budget_boxes && *budget_boxes < 0) throw ConfigError("oracle: budget must be nonnegative");
  ledger_.budget_boxes = budget_boxes;
  for (const PoolRecord& r : records) {
    const auto gt = r.gt_box_count(GroundTruthKey{});
    if (!gt) throw DataError("oracle: record '" + r.cloud_id() + "' has no gt_box_count");
    if (!entries_.emplace(r.cloud_id(), Entry{*gt, nullptr}).second) {
      throw IntegrityError("oracle: duplicate cloud_id '" + r.cloud_id() + "'");
    }
  }
}

std::int64_t Oracle::cost_of(const std::string& id) const {
  const auto it = entries_.find(id);
  if (it == entries_.end()) throw IntegrityError("oracle: unknown cloud_id '" + id + "'");
  return it->second.cost;
}

void Oracle::mark_initial(std::span<const std::string> ids) {
  for (const std::string& id : ids) {
    const std::int64_t c = cost_of(id);
    if (!annotated_.insert(id).second) throw IntegrityError("oracle: '" + id + "' marked twice");
    ledger_.initial_boxes += c;
  }
}

Annotation Oracle::annotate(std::span<const std::string> ids) {
  std::unordered_set<std::string> seen;
  for (const std::string& id : ids) {
    cost_of(id);
    if (!seen.insert(id).second) throw IntegrityError("oracle: '" + id + "' requested twice in one batch");
    if (annotated_.count(id)) throw IntegrityError("oracle: '" + id + "' is already annotated");
  }
  Annotation ann;
  for (const std::string& id : ids) {
    const Entry& e = entries_.at(id);
    if (ledger_.budget_boxes && ledger_.spent + ann.cost + e.cost > *ledger_.budget_boxes) {
      ann.truncated = true;
      break;
    }
    LabeledCloud lc;
    lc.cloud_id = id;
    if (e.scene) {
      for (const SyntheticObject& o : e.scene->objects) lc.boxes.push_back({o.class_id, o.box7, o.point_density});
    }
    ann.delivered.push_back(std::move(lc));
    ann.cost += e.cost;
  }
  for (const LabeledCloud& lc : ann.delivered) annotated_.insert(lc.cloud_id);
  ledger_.spent += ann.cost;
  ledger_.per_round.push_back(ann.cost);
  if (ann.truncated) {
    throw BudgetExceededError("oracle: budget of " + std::to_string(*ledger_.budget_boxes) +
                                  " boxes reached after " + std::to_string(ann.delivered.size()) + " of " +
                                  std::to_string(ids.size()) + " clouds",
                              std::move(ann));
  }
  return ann;
}

ReferencePrior make_reference_prior(std::span<const PoolRecord> pool, std::size_t num_classes,
                                    double bandwidth, std::size_t grid_size) {
  ReferencePrior ref;
  ref.num_classes = num_classes;
  ref.density = gpdb::DensityPrior::from_pool(pool, num_classes, bandwidth, grid_size);
  ref.pool_embeddings = rps::resolve_embeddings(pool).vectors;
  return ref;
}

std::map<std::string, double> alignment_metrics(std::span<const PoolRecord> selected,
                                                const ReferencePrior& reference) {
  if (selected.empty()) throw DataError("alignment metrics need a nonempty selection");
  std::map<std::string, double> m;
  m["label_kl"] = label_kl_of(selected, reference.num_classes);

  const auto sel = rps::resolve_embeddings(selected).vectors;
  const auto& pool = reference.pool_embeddings;
  std::vector<double> nearest(pool.size(), 0.0);
  parallel_for(pool.size(), [&](std::size_t i) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& s : sel) best = std::min(best, rps::euclidean(pool[i], s));
    nearest[i] = best;
  }, 256);
  m["cover_radius"] = pool.empty() ? 0.0
                                   : std::accumulate(nearest.begin(), nearest.end(), 0.0) /
                                         static_cast<double>(pool.size());

  m["density_score"] = gpdb::balance_score(selected, reference.density).total;
  return m;
}

void LoopConfig::validate() const {
  strategy.validate();
  scene.validate();
  if (scene.num_classes != strategy.num_classes) {
    throw ConfigError("num_classes differs between strategy (" + std::to_string(strategy.num_classes) +
                      ") and scene (" + std::to_string(scene.num_classes) + ")");
  }
  if (pool_size < 1) throw ConfigError("pool_size must be at least 1");
  const std::size_t init = initial_labeled ? initial_labeled : strategy.nr;
  if (init >= pool_size) throw ConfigError("initial_labeled must be smaller than pool_size");
  if (budget_boxes && *budget_boxes < 0) throw ConfigError("budget_boxes must be nonnegative");
}

Experiment prepare_experiment(const LoopConfig& cfg) {
  cfg.validate();
  Rng rng(mix_seed(cfg.strategy.seed, 0x6c6f6f70ULL));
  std::vector<SyntheticScene> scenes = generate_scenes(cfg.pool_size, cfg.scene, rng);
  std::vector<SyntheticScene> heldout = generate_scenes(cfg.heldout_size, cfg.scene, rng, "heldout_");
  SurrogateDetector detector(cfg.scene, rng.next_u64(), cfg.strategy.dropout_rate, cfg.strategy.mc_passes);
  const std::size_t m = cfg.initial_labeled ? cfg.initial_labeled : cfg.strategy.nr;
  std::vector<std::size_t> initial = sample_without_replacement(cfg.pool_size, m, rng);
  std::sort(initial.begin(), initial.end());
  std::vector<const SyntheticScene*> fit_set;
  for (std::size_t i : initial) fit_set.push_back(&scenes[i]);
  detector.fit(fit_set);
  return Experiment{std::move(scenes), std::move(heldout), std::move(detector), std::move(initial)};
}

RunManifest run_loop(const LoopConfig& cfg) { return run_loop(cfg, prepare_experiment(cfg)); }

RunManifest run_loop(const LoopConfig& cfg, Experiment ex) {
  cfg.validate();
  const std::size_t n = ex.scenes.size();
  RunManifest man;
  man.config = cfg;

  Oracle oracle(std::span<const SyntheticScene>(ex.scenes), cfg.budget_boxes);
  std::vector<char> labeled(n, 0);
  std::vector<std::size_t> labeled_order;  // initial first, then selections in order
  for (std::size_t i : ex.initial_labeled) {
    labeled[i] = 1;
    labeled_order.push_back(i);
    man.initial_labeled.push_back(ex.scenes[i].cloud_id);
  }
  oracle.mark_initial(man.initial_labeled);
  std::unordered_map<std::string, std::size_t> index_of;
  for (std::size_t i = 0; i < n; ++i) index_of.emplace(ex.scenes[i].cloud_id, i);

  man.initial_heldout_rmse = ex.detector.rmse(ex.heldout);
  std::vector<std::size_t> selected_order;  // cumulative, acquisition order

  for (std::size_t r = 0; r < cfg.strategy.rounds; ++r) {
    std::vector<std::size_t> unlabeled;
    for (std::size_t i = 0; i < n; ++i) {
      if (!labeled[i]) unlabeled.push_back(i);
    }
    if (unlabeled.empty()) {
      man.stopped_early = true;
      man.stop_reason = "pool exhausted before round " + std::to_string(r);
      break;
    }

    // Detector outputs for every scene under this round's model.
    const std::uint64_t pass_base = mix_seed(cfg.strategy.seed, 0x70617373ULL + r);
    std::vector<std::optional<PoolRecord>> slots(n);
    parallel_for(n, [&](std::size_t i) { slots[i].emplace(ex.detector.infer(ex.scenes[i], mix_seed(pass_base, i))); });
    std::vector<PoolRecord> snapshot;
    snapshot.reserve(n);
    for (auto& s : slots) snapshot.push_back(std::move(*s));

    std::vector<PoolRecord> pool;
    pool.reserve(unlabeled.size());
    for (std::size_t i : unlabeled) pool.push_back(snapshot[i]);
    std::vector<PoolRecord> labeled_records;
    for (std::size_t i : labeled_order) labeled_records.push_back(snapshot[i]);
    std::vector<std::vector<double>> labeled_emb;
    if (cfg.strategy.strategy == Strategy::coreset && !labeled_records.empty()) {
      labeled_emb = rps::resolve_embeddings(labeled_records).vectors;
    }

    StrategyConfig scfg = cfg.strategy;
    SelectionContext ctx;
    ctx.labeled_embeddings = labeled_emb;
    ctx.seed = mix_seed(cfg.strategy.seed, 0x73656c00ULL + r);
    SelectionOutcome outcome = select_batch(pool, scfg, ctx);
    for (const auto& w : outcome.warnings) man.warnings.push_back("round " + std::to_string(r) + ": " + w);

    Annotation ann;
    try {
      ann = oracle.annotate(outcome.selected_ids);
    } catch (const BudgetExceededError& e) {
      ann = e.partial();
      man.stopped_early = true;
      man.stop_reason = e.what();
    }

    const std::size_t wanted = outcome.selected_ids.size();
    outcome.selected_ids.clear();
    for (const LabeledCloud& lc : ann.delivered) {
      const std::size_t i = index_of.at(lc.cloud_id);
      labeled[i] = 1;
      labeled_order.push_back(i);
      selected_order.push_back(i);
      outcome.selected_ids.push_back(lc.cloud_id);
    }
    outcome.stage_sizes[2] = outcome.selected_ids.size();

    std::vector<const SyntheticScene*> fit_set;
    for (std::size_t i : labeled_order) fit_set.push_back(&ex.scenes[i]);
    ex.detector.fit(fit_set);

    RoundMetrics rm;
    rm.heldout_rmse = ex.detector.rmse(ex.heldout);
    rm.spent_boxes = oracle.ledger().spent;
    rm.stage_ms = outcome.stage_ms;
    if (!selected_order.empty()) {
      std::vector<PoolRecord> cumulative;
      for (std::size_t i : selected_order) cumulative.push_back(snapshot[i]);
      const ReferencePrior ref =
          make_reference_prior(pool, cfg.strategy.num_classes, cfg.strategy.bandwidth, cfg.strategy.grid_size);
      const auto am = alignment_metrics(cumulative, ref);
      rm.label_kl = am.at("label_kl");
      rm.cover_radius = am.at("cover_radius");
      rm.density_score = am.at("density_score");
    }

    SelectionRound round = to_selection_round(outcome, r, oracle.ledger().spent);
    round.diagnostics["pool_size"] = static_cast<double>(pool.size());
    round.diagnostics["requested"] = static_cast<double>(wanted);
    round.diagnostics["truncated"] = ann.truncated ? 1.0 : 0.0;
    round.diagnostics["round_boxes"] = static_cast<double>(ann.cost);
    round.diagnostics["label_kl"] = rm.label_kl;
    round.diagnostics["cover_radius"] = rm.cover_radius;
    round.diagnostics["density_score"] = rm.density_score;
    round.diagnostics["heldout_rmse"] = rm.heldout_rmse;
    round.validate();
    man.rounds.push_back(std::move(round));
    man.metrics.push_back(rm);
    if (man.stopped_early) break;
  }
  man.ledger = oracle.ledger();
  return man;
}

std::vector<std::string> check_loop_invariants(const RunManifest& man) {
  std::vector<std::string> bad;
  std::unordered_set<std::string> seen(man.initial_labeled.begin(), man.initial_labeled.end());
  std::int64_t prev_boxes = 0;
  for (const SelectionRound& r : man.rounds) {
    const std::string tag = "round " + std::to_string(r.round_index) + ": ";
    const auto& s = r.stage_sizes;
    if (!(s[0] >= s[1] && s[1] >= s[2])) bad.push_back(tag + "stage sizes do not shrink");
    if (s[2] != r.selected_ids.size()) bad.push_back(tag + "final stage size differs from selection");
    const auto diag = [&](const char* key) {
      const auto it = r.diagnostics.find(key);
      return it == r.diagnostics.end() ? 0.0 : it->second;
    };
    const bool truncated = diag("truncated") != 0.0;
    const auto pool = static_cast<std::size_t>(diag("pool_size"));
    if (!truncated && r.selected_ids.size() != std::min(man.config.strategy.nr, pool)) {
      bad.push_back(tag + "selected " + std::to_string(r.selected_ids.size()) + " clouds, expected " +
                    std::to_string(std::min(man.config.strategy.nr, pool)));
    }
    for (const auto& id : r.selected_ids) {
      if (!seen.insert(id).second) bad.push_back(tag + "cloud '" + id + "' annotated twice");
    }
    if (r.boxes_annotated_cumulative < prev_boxes) bad.push_back(tag + "cumulative boxes decreased");
    prev_boxes = r.boxes_annotated_cumulative;
  }
  if (man.ledger.budget_boxes && man.ledger.spent > *man.ledger.budget_boxes) {
    bad.push_back("ledger spent " + std::to_string(man.ledger.spent) + " exceeds budget " +
                  std::to_string(*man.ledger.budget_boxes));
  }
  const std::int64_t per_round = std::accumulate(man.ledger.per_round.begin(), man.ledger.per_round.end(), std::int64_t{0});
  if (per_round != man.ledger.spent) bad.push_back("ledger per-round costs do not sum to spent");
  return bad;
}

nlohmann::ordered_json config_to_json(const LoopConfig& cfg) {
  nlohmann::ordered_json j;
  const StrategyConfig& s = cfg.strategy;
  j["strategy"] = std::string(to_string(s.strategy));
  j["num_classes"] = s.num_classes;
  j["k1"] = s.k1;
  j["k2"] = s.k2;
  j["nr"] = s.nr;
  j["rounds"] = s.rounds;
  j["bandwidth"] = s.bandwidth;
  j["mc_passes"] = s.mc_passes;
  j["dropout_rate"] = s.dropout_rate;
  j["grid_size"] = s.grid_size;
  j["seed"] = s.seed;
  j["pool_size"] = cfg.pool_size;
  j["heldout_size"] = cfg.heldout_size;
  j["initial_labeled"] = cfg.initial_labeled ? cfg.initial_labeled : s.nr;
  j["budget_boxes"] = cfg.budget_boxes ? nlohmann::ordered_json(*cfg.budget_boxes) : nlohmann::ordered_json();
  j["record_timings"] = cfg.record_timings;
  const SceneSpec& sc = cfg.scene;
  j["abundance"] = sc.abundance;
  j["objects_per_scene"] = sc.objects_per_scene;
  j["empty_scene_rate"] = sc.empty_scene_rate;
  j["density_median"] = sc.density_median;
  j["density_sigma"] = sc.density_sigma;
  j["label_accuracy"] = sc.label_accuracy;
  j["density_noise"] = sc.density_noise;
  j["observation_noise"] = sc.observation_noise;
  j["hidden_units"] = sc.hidden_units;
  return j;
}

nlohmann::ordered_json manifest_to_json(const RunManifest& man) {
  nlohmann::ordered_json j;
  j["config"] = config_to_json(man.config);
  j["initial_labeled"] = man.initial_labeled;
  j["initial_heldout_rmse"] = man.initial_heldout_rmse;
  auto rounds = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < man.rounds.size(); ++i) {
    nlohmann::ordered_json r = selection_to_json(man.rounds[i]);
    if (man.config.record_timings) r["stage_ms"] = man.metrics[i].stage_ms;
    rounds.push_back(std::move(r));
  }
  j["rounds"] = std::move(rounds);
  nlohmann::ordered_json budget;
  budget["budget_boxes"] =
      man.ledger.budget_boxes ? nlohmann::ordered_json(*man.ledger.budget_boxes) : nlohmann::ordered_json();
  budget["spent"] = man.ledger.spent;
  budget["initial_boxes"] = man.ledger.initial_boxes;
  budget["per_round"] = man.ledger.per_round;
  j["budget"] = std::move(budget);
  j["stopped_early"] = man.stopped_early;
  j["stop_reason"] = man.stop_reason;
  nlohmann::ordered_json fin;
  if (!man.metrics.empty()) {
    const RoundMetrics& last = man.metrics.back();
    fin["label_kl"] = last.label_kl;
    fin["cover_radius"] = last.cover_radius;
    fin["density_score"] = last.density_score;
    fin["heldout_rmse"] = last.heldout_rmse;
    fin["spent_boxes"] = last.spent_boxes;
  }
  j["final_metrics"] = std::move(fin);
  j["warnings"] = man.warnings;
  return j;
}

std::string metrics_csv(const RunManifest& man) {
  std::ostringstream out;
  out.precision(17);
  out << "round,strategy,label_kl,cover_radius,density_score,spent_boxes,stage1_ms,stage2_ms,stage3_ms\n";
  const std::string name(to_string(man.config.strategy.strategy));
  for (std::size_t i = 0; i < man.metrics.size(); ++i) {
    const RoundMetrics& m = man.metrics[i];
    out << man.rounds[i].round_index << ',' << name << ',' << m.label_kl << ',' << m.cover_radius << ','
        << m.density_score << ',' << m.spent_boxes;
    for (double t : m.stage_ms) {
      out << ',';
      if (man.config.record_timings) {
        out << t;
      } else {
        out << "NA";
      }
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace crb::harness

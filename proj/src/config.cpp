#include "crb/config.hpp"

#include <charconv>
#include <fstream>
#include <set>

#include "crb/error.hpp"

namespace crb {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

const std::set<std::string>& scene_keys() {
  static const std::set<std::string> keys = {
      "abundance",     "objects_per_scene", "empty_scene_rate", "density_median",
      "density_sigma", "label_accuracy",    "density_noise",    "observation_noise",
      "hidden_units"};
  return keys;
}

const std::set<std::string>& loop_keys() {
  static const std::set<std::string> keys = {
      "strategy",  "num_classes", "k1",           "k2",           "nr",
      "rounds",    "bandwidth",   "mc_passes",    "dropout_rate", "grid_size",
      "seed",      "pool_size",   "heldout_size", "initial_labeled", "budget_boxes",
      "record_timings"};
  return keys;
}

class Reader {
 public:
  explicit Reader(const KeyValueConfig& kv) : kv_(kv) {}

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    const auto it = kv_.entries().find(key);
    std::string where = kv_.source();
    if (it != kv_.entries().end() && it->second.line > 0) {
      where += ":" + std::to_string(it->second.line);
    } else if (it != kv_.entries().end()) {
      where = "command line";
    }
    throw ConfigError(where + ": " + key + ": " + what);
  }

  const std::string* raw(const std::string& key) const {
    const auto it = kv_.entries().find(key);
    return it == kv_.entries().end() ? nullptr : &it->second.value;
  }

  template <typename T>
  void integer(const std::string& key, T& out) const {
    const std::string* v = raw(key);
    if (!v) return;
    T parsed{};
    const auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), parsed);
    if (ec != std::errc() || ptr != v->data() + v->size()) fail(key, "expected a nonnegative integer, got '" + *v + "'");
    out = parsed;
  }

  static double to_double(const std::string& s, bool& ok) {
    std::size_t used = 0;
    ok = false;
    try {
      const double d = std::stod(s, &used);
      ok = used == s.size();
      return d;
    } catch (const std::exception&) {
      return 0.0;
    }
  }

  void real(const std::string& key, double& out) const {
    const std::string* v = raw(key);
    if (!v) return;
    bool ok = false;
    const double d = to_double(*v, ok);
    if (!ok) fail(key, "expected a number, got '" + *v + "'");
    out = d;
  }

  void list(const std::string& key, std::vector<double>& out) const {
    const std::string* v = raw(key);
    if (!v) return;
    std::vector<double> vals;
    std::size_t start = 0;
    while (start <= v->size()) {
      const auto comma = v->find(',', start);
      const std::string item = trim(std::string_view(*v).substr(start, comma == std::string::npos ? std::string::npos : comma - start));
      bool ok = false;
      const double d = to_double(item, ok);
      if (!ok) fail(key, "expected comma-separated numbers, got '" + *v + "'");
      vals.push_back(d);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    out = std::move(vals);
  }

  void boolean(const std::string& key, bool& out) const {
    const std::string* v = raw(key);
    if (!v) return;
    if (*v == "true" || *v == "1") {
      out = true;
    } else if (*v == "false" || *v == "0") {
      out = false;
    } else {
      fail(key, "expected true or false, got '" + *v + "'");
    }
  }

 private:
  const KeyValueConfig& kv_;
};

void reject_unknown(const KeyValueConfig& kv, bool allow_loop) {
  for (const auto& [key, entry] : kv.entries()) {
    if (scene_keys().count(key) || key == "num_classes") continue;
    if (allow_loop && loop_keys().count(key)) continue;
    const std::string where = entry.line ? kv.source() + ":" + std::to_string(entry.line) : "command line";
    throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

harness::SceneSpec read_scene(const Reader& rd, std::size_t num_classes) {
  harness::SceneSpec s = harness::SceneSpec::defaults(num_classes);
  rd.list("abundance", s.abundance);
  rd.real("objects_per_scene", s.objects_per_scene);
  rd.real("empty_scene_rate", s.empty_scene_rate);
  rd.list("density_median", s.density_median);
  rd.list("density_sigma", s.density_sigma);
  rd.real("label_accuracy", s.label_accuracy);
  rd.real("density_noise", s.density_noise);
  rd.real("observation_noise", s.observation_noise);
  rd.integer("hidden_units", s.hidden_units);
  return s;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::istream& in, const std::string& source) {
  KeyValueConfig kv;
  kv.source_ = source;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    const std::string body = trim(std::string_view(line).substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
    if (kv.entries_.count(key)) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
    kv.entries_[key] = Entry{value, lineno};
  }
  return kv;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse(in, path.string());
}

void KeyValueConfig::set(const std::string& key, std::string value) {
  entries_[key] = Entry{std::move(value), 0};
}

harness::LoopConfig loop_config_from(const KeyValueConfig& kv) {
  reject_unknown(kv, true);
  const Reader rd(kv);
  harness::LoopConfig cfg;
  StrategyConfig& s = cfg.strategy;
  if (const std::string* v = rd.raw("strategy")) {
    try {
      s.strategy = parse_strategy(*v);
    } catch (const ConfigError& e) {
      rd.fail("strategy", e.what());
    }
  }
  rd.integer("num_classes", s.num_classes);
  rd.integer("k1", s.k1);
  rd.integer("k2", s.k2);
  rd.integer("nr", s.nr);
  rd.integer("rounds", s.rounds);
  rd.real("bandwidth", s.bandwidth);
  rd.integer("mc_passes", s.mc_passes);
  rd.real("dropout_rate", s.dropout_rate);
  rd.integer("grid_size", s.grid_size);
  rd.integer("seed", s.seed);
  rd.integer("pool_size", cfg.pool_size);
  rd.integer("heldout_size", cfg.heldout_size);
  rd.integer("initial_labeled", cfg.initial_labeled);
  if (const std::string* v = rd.raw("budget_boxes")) {
    if (*v != "none" && *v != "unlimited") {
      std::int64_t b = 0;
      rd.integer("budget_boxes", b);
      cfg.budget_boxes = b;
    }
  }
  rd.boolean("record_timings", cfg.record_timings);
  if (s.num_classes == 0) rd.fail("num_classes", "must be at least 1");
  cfg.scene = read_scene(rd, s.num_classes);
  cfg.validate();
  return cfg;
}

harness::SceneSpec scene_spec_from(const KeyValueConfig& kv) {
  reject_unknown(kv, false);
  const Reader rd(kv);
  std::size_t num_classes = 3;
  rd.integer("num_classes", num_classes);
  if (num_classes == 0) rd.fail("num_classes", "must be at least 1");
  harness::SceneSpec s = read_scene(rd, num_classes);
  s.validate();
  return s;
}

}  // namespace crb

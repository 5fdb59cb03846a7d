#pragma once

// Config-driven runs: config parsing and validation, the simulate / verify /
// metrics / hierarchy pipeline, CSV and JSON artifacts, run manifest.

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "mflift/dynamics.hpp"
#include "mflift/metrics.hpp"
#include "mflift/scenarios.hpp"
#include "mflift/serialize.hpp"
#include "mflift/verify.hpp"

namespace mflift::experiment {

using json = nlohmann::json;

inline constexpr const char* kConfigSchema = "mflift-config/1";
inline constexpr const char* kManifestSchema = "mflift-manifest/1";
inline constexpr const char* kSummarySchema = "mflift-hierarchy-summary/1";
inline constexpr const char* kResidualsSchema = "mflift-residuals/1";
inline constexpr const char* kMartingaleSchema = "mflift-martingale/1";
inline constexpr const char* kMetricsSchema = "mflift-metrics/1";

/// Residual medians at or below this count as numerically zero when comparing
/// the random-measure and member-wise levels.
inline constexpr double kResidualFloor = 1e-12;

/// Invalid configuration; the CLI maps it to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Logging (level from MFLIFT_LOG: quiet, error, warn, info, debug)

enum class LogLevel { Quiet = 0, Error = 1, Warn = 2, Info = 3, Debug = 4 };

[[nodiscard]] inline LogLevel log_level_from_env() {
  const char* v = std::getenv("MFLIFT_LOG");
  if (v == nullptr) return LogLevel::Warn;
  const std::string s(v);
  if (s == "quiet") return LogLevel::Quiet;
  if (s == "error") return LogLevel::Error;
  if (s == "info") return LogLevel::Info;
  if (s == "debug") return LogLevel::Debug;
  return LogLevel::Warn;
}

class Logger {
 public:
  explicit Logger(LogLevel level = log_level_from_env()) : level_(level) {}

  template <typename... Args>
  void log(LogLevel at, Args&&... args) const {
    if (static_cast<int>(at) > static_cast<int>(level_)) return;
    static const char* names[] = {"", "error", "warn", "info", "debug"};
    std::lock_guard lock(mu_);
    std::cerr << "[mflift " << names[static_cast<int>(at)] << "] "
              << mflift::detail::concat(std::forward<Args>(args)...) << '\n';
  }
  template <typename... Args>
  void info(Args&&... args) const { log(LogLevel::Info, std::forward<Args>(args)...); }
  template <typename... Args>
  void debug(Args&&... args) const { log(LogLevel::Debug, std::forward<Args>(args)...); }
  template <typename... Args>
  void warn(Args&&... args) const { log(LogLevel::Warn, std::forward<Args>(args)...); }

 private:
  LogLevel level_;
  mutable std::mutex mu_;
};

// ---------------------------------------------------------------------------
// Config

struct DictionarySpec {
  int ell = 2;
  bool weighted = false;
  std::size_t size = 64;
  std::uint64_t seed = 0;
};

struct UniquenessSpec {
  std::vector<std::size_t> sizes;  // empty: probe disabled
  std::size_t pairs = 3;
  std::size_t n_steps = 100;
};

struct Thresholds {
  double martingale_pass_rate = 0.95;
  double qv_gap = 0.05;
  double rm_over_kfp = 2.0;
  double moment_mean = 0.03;
  double moment_var = 0.02;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string scenario = "mean_field_ou";
  std::map<std::string, double> params;

  std::size_t n_particles = 1000;
  double horizon = 1.0;
  std::size_t n_steps = 500;

  std::size_t n_members = 8;
  double mean_lo = 0.0, mean_hi = 0.0;
  double var_lo = 1.0, var_hi = 1.0;

  std::vector<DictionarySpec> dictionaries;
  BatterySpec battery;
  std::size_t n_outer = 12;
  UniquenessSpec uniqueness;
  Thresholds thresholds;
  std::string output_dir = "out";
  std::size_t threads = 1;
};

namespace detail {

/// 1-based line of the byte offset in text.
inline std::size_t line_of(const std::string& text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

/// Best-effort line of a dotted field path: each key is searched for, quoted,
/// after the previous one.
inline std::size_t locate(const std::string& text, const std::string& path) {
  std::size_t pos = 0;
  std::size_t found = std::string::npos;
  std::stringstream ss(path);
  std::string key;
  while (std::getline(ss, key, '.')) {
    const auto bracket = key.find('[');
    if (bracket != std::string::npos) key = key.substr(0, bracket);
    if (key.empty()) continue;
    const auto p = text.find('"' + key + '"', pos);
    if (p == std::string::npos) break;
    found = p;
    pos = p + key.size() + 2;
  }
  return found == std::string::npos ? 0 : line_of(text, found);
}

/// Reads typed fields out of one JSON object and rejects unknown keys.
class Reader {
 public:
  Reader(const json& j, std::string path, const std::string& text) : j_(j), path_(std::move(path)), text_(text) {
    if (!j_.is_object()) error("", "expected an object");
  }

  [[noreturn]] void error(const std::string& key, const std::string& msg) const {
    const std::string where = key.empty() ? path_ : (path_.empty() ? key : path_ + "." + key);
    const std::size_t line = locate(text_, where);
    throw ConfigError(mflift::detail::concat("config", line ? mflift::detail::concat(":", line) : std::string(),
                                             ": field '", where.empty() ? "<root>" : where, "': ", msg));
  }

  [[nodiscard]] bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const json& at(const char* key) {
    if (!has(key)) error(key, "missing required field");
    return j_.at(key);
  }

  [[nodiscard]] Reader object(const char* key) { return Reader(at(key), sub(key), text_); }

  double number(const char* key, std::optional<double> def = std::nullopt) {
    if (!has(key)) {
      if (def) return *def;
      error(key, "missing required field");
    }
    const auto& v = j_.at(key);
    if (!v.is_number()) error(key, "expected a number, got " + v.dump());
    const double d = v.get<double>();
    if (!std::isfinite(d)) error(key, "expected a finite number");
    return d;
  }

  std::uint64_t uint(const char* key, std::optional<std::uint64_t> def = std::nullopt) {
    if (!has(key)) {
      if (def) return *def;
      error(key, "missing required field");
    }
    const auto& v = j_.at(key);
    if (!(v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0))) {
      error(key, "expected a non-negative integer, got " + v.dump());
    }
    return v.get<std::uint64_t>();
  }

  std::size_t positive(const char* key, std::optional<std::size_t> def = std::nullopt) {
    const auto v = uint(key, def);
    if (v == 0) error(key, "must be >= 1");
    return static_cast<std::size_t>(v);
  }

  bool boolean(const char* key, std::optional<bool> def = std::nullopt) {
    if (!has(key)) {
      if (def) return *def;
      error(key, "missing required field");
    }
    const auto& v = j_.at(key);
    if (!v.is_boolean()) error(key, "expected true or false, got " + v.dump());
    return v.get<bool>();
  }

  std::string string(const char* key, std::optional<std::string> def = std::nullopt) {
    if (!has(key)) {
      if (def) return *def;
      error(key, "missing required field");
    }
    const auto& v = j_.at(key);
    if (!v.is_string()) error(key, "expected a string, got " + v.dump());
    return v.get<std::string>();
  }

  std::pair<double, double> range(const char* key, std::optional<std::pair<double, double>> def = std::nullopt) {
    if (!has(key)) {
      if (def) return *def;
      error(key, "missing required field");
    }
    const auto& v = j_.at(key);
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
      error(key, "expected [lo, hi], got " + v.dump());
    }
    const double lo = v[0].get<double>(), hi = v[1].get<double>();
    if (!(lo <= hi)) error(key, "range must satisfy lo <= hi");
    return {lo, hi};
  }

  [[nodiscard]] const json& raw() const { return j_; }
  [[nodiscard]] std::string sub(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  [[nodiscard]] const std::string& text() const { return text_; }

  /// Every key present must have been read.
  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) error(k, "unknown field");
    }
  }

 private:
  const json& j_;
  std::string path_;
  const std::string& text_;
  std::set<std::string> seen_;
};

inline const std::map<std::string, std::vector<std::string>>& scenario_params() {
  static const std::map<std::string, std::vector<std::string>> m = {
      {"mean_field_ou", {"theta", "kappa", "sigma", "init_mean", "init_var"}},
      {"zero_diffusion_transport", {"alpha", "beta", "init_mean", "init_var"}},
      {"nonsmooth_probe", {"init_point"}},
      {"zero", {"init_mean", "init_var"}},
  };
  return m;
}

}  // namespace detail

/// Parses a config document (JSON, comments allowed). A run manifest is also
/// accepted: its resolved "config" block is used.
[[nodiscard]] inline ExperimentConfig parse_config(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(mflift::detail::concat("config:", detail::line_of(text, e.byte > 0 ? e.byte - 1 : 0),
                                             ": syntax error: ", e.what()));
  }
  std::string prefix;
  if (doc.is_object() && doc.contains("config") && io::type_of(doc) == "run_manifest") {
    doc = doc.at("config");
  }
  detail::Reader root(doc, prefix, text);
  ExperimentConfig c;
  const auto schema = root.string("schema");
  if (schema != kConfigSchema) root.error("schema", "unsupported schema '" + schema + "', expected " + kConfigSchema);
  c.seed = root.uint("seed");

  {
    auto s = root.object("scenario");
    c.scenario = s.string("name");
    const auto& table = detail::scenario_params();
    const auto it = table.find(c.scenario);
    if (it == table.end()) {
      std::string names;
      for (const auto& [k, v] : table) names += (names.empty() ? "" : ", ") + k;
      s.error("name", "unknown scenario '" + c.scenario + "' (known: " + names + ")");
    }
    if (s.has("params")) {
      auto p = s.object("params");
      for (const auto& key : it->second) {
        if (p.has(key.c_str())) c.params[key] = p.number(key.c_str());
      }
      p.finish();
    }
    s.finish();
  }
  {
    auto s = root.object("sim");
    c.n_particles = s.positive("n_particles");
    c.horizon = s.number("horizon");
    if (!(c.horizon > 0.0)) s.error("horizon", "must be > 0");
    c.n_steps = s.positive("n_steps");
    if (c.n_steps < 2) s.error("n_steps", "must be >= 2");
    s.finish();
  }
  {
    auto e = root.object("ensemble");
    c.n_members = e.positive("n_members");
    auto laws = e.object("initial_laws");
    const auto kind = laws.string("kind");
    if (kind != "gaussian_family") laws.error("kind", "unknown initial law kind '" + kind + "' (known: gaussian_family)");
    std::tie(c.mean_lo, c.mean_hi) = laws.range("mean_range");
    std::tie(c.var_lo, c.var_hi) = laws.range("var_range");
    if (c.var_lo < 0.0) laws.error("var_range", "variances must be >= 0");
    laws.finish();
    e.finish();
  }
  if (root.has("dictionaries")) {
    const auto& arr = root.at("dictionaries");
    if (!arr.is_array() || arr.empty()) root.error("dictionaries", "expected a nonempty array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      detail::Reader d(arr[i], mflift::detail::concat("dictionaries[", i, "]"), text);
      DictionarySpec spec;
      spec.ell = static_cast<int>(d.uint("ell"));
      if (spec.ell != 1 && spec.ell != 2) d.error("ell", "must be 1 or 2");
      spec.weighted = d.boolean("weighted", false);
      if (spec.weighted && spec.ell != 2) d.error("weighted", "weighted dictionaries need ell = 2");
      spec.size = d.positive("size");
      spec.seed = d.uint("seed");
      d.finish();
      c.dictionaries.push_back(spec);
    }
  } else {
    c.dictionaries = {{1, false, 64, c.seed + 11}, {2, false, 64, c.seed + 12}, {2, true, 64, c.seed + 13}};
  }
  if (root.has("battery")) {
    auto b = root.object("battery");
    c.battery.n_xi = b.positive("n_xi", 5);
    c.battery.n_phi = b.positive("n_phi", 20);
    c.battery.n_F = b.uint("n_F", 20);
    c.battery.n_martingale = b.uint("n_martingale", 50);
    c.battery.n_qv = b.uint("n_qv", 10);
    std::tie(c.battery.center_lo, c.battery.center_hi) = b.range("center_range", std::pair{-1.0, 2.0});
    std::tie(c.battery.radius_lo, c.battery.radius_hi) = b.range("radius_range", std::pair{1.0, 3.0});
    if (!(c.battery.radius_lo > 0.0)) b.error("radius_range", "radii must be > 0");
    c.n_outer = b.positive("n_outer", 12);
    b.finish();
  }
  if (root.has("uniqueness")) {
    auto u = root.object("uniqueness");
    const auto& sizes = u.at("sizes");
    if (!sizes.is_array() || sizes.empty()) u.error("sizes", "expected a nonempty array of particle counts");
    for (const auto& v : sizes) {
      if (!v.is_number_unsigned() || v.get<std::size_t>() == 0) u.error("sizes", "particle counts must be >= 1");
      c.uniqueness.sizes.push_back(v.get<std::size_t>());
    }
    c.uniqueness.pairs = u.positive("pairs", 3);
    c.uniqueness.n_steps = u.positive("n_steps", 100);
    u.finish();
  }
  if (root.has("thresholds")) {
    auto t = root.object("thresholds");
    c.thresholds.martingale_pass_rate = t.number("martingale_pass_rate", 0.95);
    c.thresholds.qv_gap = t.number("qv_gap", 0.05);
    c.thresholds.rm_over_kfp = t.number("rm_over_kfp", 2.0);
    c.thresholds.moment_mean = t.number("moment_mean", 0.03);
    c.thresholds.moment_var = t.number("moment_var", 0.02);
    t.finish();
  }
  c.output_dir = root.string("output_dir", "out");
  root.finish();
  return c;
}

[[nodiscard]] inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

/// Fully resolved config; parse_config(to_json(c).dump()) reproduces c.
[[nodiscard]] inline json to_json(const ExperimentConfig& c) {
  json dicts = json::array();
  for (const auto& d : c.dictionaries) {
    dicts.push_back({{"ell", d.ell}, {"weighted", d.weighted}, {"size", d.size}, {"seed", d.seed}});
  }
  json j = {
      {"schema", kConfigSchema},
      {"seed", c.seed},
      {"scenario", {{"name", c.scenario}, {"params", c.params}}},
      {"sim", {{"n_particles", c.n_particles}, {"horizon", c.horizon}, {"n_steps", c.n_steps}}},
      {"ensemble",
       {{"n_members", c.n_members},
        {"initial_laws",
         {{"kind", "gaussian_family"}, {"mean_range", {c.mean_lo, c.mean_hi}}, {"var_range", {c.var_lo, c.var_hi}}}}}},
      {"dictionaries", dicts},
      {"battery",
       {{"n_xi", c.battery.n_xi},
        {"n_phi", c.battery.n_phi},
        {"n_F", c.battery.n_F},
        {"n_martingale", c.battery.n_martingale},
        {"n_qv", c.battery.n_qv},
        {"center_range", {c.battery.center_lo, c.battery.center_hi}},
        {"radius_range", {c.battery.radius_lo, c.battery.radius_hi}},
        {"n_outer", c.n_outer}}},
      {"thresholds",
       {{"martingale_pass_rate", c.thresholds.martingale_pass_rate},
        {"qv_gap", c.thresholds.qv_gap},
        {"rm_over_kfp", c.thresholds.rm_over_kfp},
        {"moment_mean", c.thresholds.moment_mean},
        {"moment_var", c.thresholds.moment_var}}},
      {"output_dir", c.output_dir},
  };
  if (!c.uniqueness.sizes.empty()) {
    j["uniqueness"] = {{"sizes", c.uniqueness.sizes}, {"pairs", c.uniqueness.pairs}, {"n_steps", c.uniqueness.n_steps}};
  }
  return j;
}

// ---------------------------------------------------------------------------
// Scenario and seeds

[[nodiscard]] inline ScenarioSpec make_scenario(const ExperimentConfig& c) {
  auto p = [&](const char* k, double def) {
    const auto it = c.params.find(k);
    return it == c.params.end() ? def : it->second;
  };
  try {
    if (c.scenario == "mean_field_ou") {
      return mean_field_ou(p("theta", 1.0), p("kappa", 0.5), p("sigma", 0.4), p("init_mean", 1.0), p("init_var", 0.25));
    }
    if (c.scenario == "zero_diffusion_transport") {
      return zero_diffusion_transport(p("alpha", 1.0), p("beta", 0.5), p("init_mean", 0.0), p("init_var", 1.0));
    }
    if (c.scenario == "nonsmooth_probe") return nonsmooth_probe(p("init_point", 0.0));
    if (c.scenario == "zero") return zero_coefficients(p("init_mean", 0.0), p("init_var", 1.0));
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("config: field 'scenario.params': ") + e.what());
  }
  throw ConfigError("config: field 'scenario.name': unknown scenario '" + c.scenario + "'");
}

/// Independent sub-seeds of the master seed, one per pipeline stage.
struct StageSeeds {
  std::uint64_t sim, battery, outer, uniqueness;
  explicit StageSeeds(std::uint64_t master)
      : sim(rng::derive_seed(master, 100)),
        battery(rng::derive_seed(master, 200)),
        outer(rng::derive_seed(master, 300)),
        uniqueness(rng::derive_seed(master, 400)) {}
};

[[nodiscard]] inline SimConfig sim_config(const ExperimentConfig& c) {
  return {c.n_particles, TimeGrid::uniform(c.horizon, c.n_steps), StageSeeds(c.seed).sim, 1};
}

[[nodiscard]] inline GaussianLawFamily law_family(const ExperimentConfig& c) {
  return {1, c.mean_lo, c.mean_hi, c.var_lo, c.var_hi};
}

[[nodiscard]] inline Battery make_battery(const ExperimentConfig& c, const TimeGrid& grid) {
  BatterySpec spec = c.battery;
  spec.dim = 1;
  spec.seed = StageSeeds(c.seed).battery;
  return build_battery(spec, grid);
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Each call must write
/// only to its own slot; results do not depend on scheduling.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex err_mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(err_mu);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

[[nodiscard]] inline PathMeasureEnsemble simulate(const ExperimentConfig& c, const ScenarioSpec& s,
                                                  const Logger& log) {
  const SimConfig cfg = sim_config(c);
  const auto family = law_family(c);
  std::vector<PathMeasure> members(c.n_members);
  log.info("simulating ", c.n_members, " members, N = ", c.n_particles, ", steps = ", c.n_steps);
  parallel_for(c.n_members, c.threads, [&](std::size_t i) {
    members[i] = simulate_mckv(s.coeffs, family.law(cfg.seed, i), cfg, static_cast<std::uint32_t>(i));
  });
  return PathMeasureEnsemble(std::move(members), uniform_weights(c.n_members));
}

// ---------------------------------------------------------------------------
// Verification

struct MemberQv {
  std::size_t member = 0;
  ResidualReport report;
};

struct MemberMoments {
  std::size_t member = 0;
  double mean = 0.0, var = 0.0;
  double oracle_mean = 0.0, oracle_var = 0.0;
};

struct Check {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  std::string relation;  // "<=", "<", ">=" or "==" (exact identity)
  bool pass = false;
};

struct VerifyResult {
  HierarchyReport hierarchy;
  std::vector<MemberQv> qv;
  std::vector<MemberMoments> moments;
};

[[nodiscard]] inline Moments weighted_moments(const EmpiricalMeasure& mu) {
  double m = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) m += mu.weights()[i] * mu.point(i)[0];
  double v = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double c = mu.point(i)[0] - m;
    v += mu.weights()[i] * c * c;
  }
  return {m, v};
}

[[nodiscard]] inline VerifyResult verify_ensemble(const PathMeasureEnsemble& L, const ExperimentConfig& c,
                                                  const ScenarioSpec& s, const Logger& log) {
  require(L.dim() == 1, "verify: only d = 1 ensembles are supported by the config pipeline");
  VerifyResult out;
  const auto battery = make_battery(c, L.grid());
  log.info("hierarchy check: ", L.size(), " members, ", battery.kfp.size(), " kfp tests, ", battery.rm.size(),
           " rm tests, ", battery.martingale.size(), " martingale configs");
  out.hierarchy = hierarchy_check(L, s.coeffs, battery);
  std::vector<std::vector<ResidualReport>> qv(L.size());
  parallel_for(L.size(), c.threads, [&](std::size_t j) { qv[j] = qv_gaps(L.member(j), s.coeffs, battery.qv, battery.qv_ids); });
  for (std::size_t j = 0; j < L.size(); ++j) {
    for (auto& r : qv[j]) out.qv.push_back({j, std::move(r)});
  }
  if (s.oracle_from) {
    const std::size_t last = L.grid().size() - 1;
    for (std::size_t j = 0; j < L.size(); ++j) {
      const auto m0 = weighted_moments(L.member(j).marginal_at(0));
      const auto mT = weighted_moments(L.member(j).marginal_at(last));
      const auto o = s.oracle_from(L.grid()[last], m0.mean, m0.var);
      out.moments.push_back({j, mT.mean, mT.var, o.mean, o.var});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

struct MetricRow {
  std::string metric;
  std::string dict_id;
  std::string lhs;
  std::string rhs;
  double value = 0.0;
  std::int64_t witness_index = -1;
  std::string witness;
};

struct MetricsResult {
  std::vector<MetricRow> rows;
  std::optional<UniquenessReport> uniqueness;
};

[[nodiscard]] inline std::vector<Dictionary> make_dictionaries(const ExperimentConfig& c) {
  std::vector<Dictionary> out;
  for (const auto& d : c.dictionaries) out.push_back(build_dictionary(d.ell, d.weighted, 1, d.size, d.seed));
  return out;
}

[[nodiscard]] inline MetricsResult ensemble_metrics(const PathMeasureEnsemble& L, const ExperimentConfig& c,
                                                    const ScenarioSpec& s, const Logger& log) {
  MetricsResult out;
  const auto dicts = make_dictionaries(c);
  const auto outers = build_outer_family(c.n_outer, 3, StageSeeds(c.seed).outer);
  const std::size_t last = L.grid().size() - 1;
  const RandomMeasure M0 = ensemble_marginal_at(L, 0);
  const RandomMeasure MT = ensemble_marginal_at(L, last);
  for (const auto& dict : dicts) {
    const std::string id = dict.id();
    for (std::size_t j = 1; j < L.size(); ++j) {
      const auto r = dict.key().weighted ? d_2w(MT.atom(0), MT.atom(j), dict) : d_ell(MT.atom(0), MT.atom(j), dict);
      out.rows.push_back({r.kind, id, "member0@T", mflift::detail::concat("member", j, "@T"), r.value, r.witness_index,
                          r.witness});
    }
    const auto w = ensemble_w1_report(M0, MT, dict);
    out.rows.push_back({w.kind, id, "M@0", "M@T", w.value, w.witness_index, w.witness});
    if (!dict.key().weighted) {
      for (int h : {1, 2}) {
        const auto f = frak_d_report(h, M0, MT, dict, outers);
        out.rows.push_back({f.kind, id, "M@0", "M@T", f.value, f.witness_index, f.witness});
      }
    }
  }
  if (!c.uniqueness.sizes.empty()) {
    const auto& dict = dicts.front();
    SimConfig base{1, TimeGrid::uniform(c.horizon, c.uniqueness.n_steps), 0, 1};
    log.info("uniqueness probe over N = ", c.uniqueness.sizes.size(), " sizes, ", c.uniqueness.pairs, " seed pairs");
    auto rep = uniqueness_probe(s.coeffs, s.init, base, c.uniqueness.sizes, dict, c.uniqueness.pairs,
                                StageSeeds(c.seed).uniqueness);
    for (const auto& r : rep.rows) {
      out.rows.push_back({"uniqueness_d_ell", dict.id(), mflift::detail::concat("N=", r.n_particles, ",seed=", r.seed_a),
                          mflift::detail::concat("N=", r.n_particles, ",seed=", r.seed_b), r.distance, -1,
                          mflift::detail::concat("pair ", r.pair)});
    }
    out.uniqueness = std::move(rep);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Summary and checks

[[nodiscard]] inline std::vector<Check> evaluate_checks(const VerifyResult& v, const MetricsResult* m,
                                                        const Thresholds& t) {
  std::vector<Check> out;
  const auto& h = v.hierarchy;
  out.push_back({"hierarchy_identity_mismatches", h.identities_exact ? 0.0 : 1.0, 0.0, "==", h.identities_exact});
  const double rm = h.rm.median, kfp = h.kfp.median;
  out.push_back({"rm_median_below_ratio_times_kfp_median", rm, t.rm_over_kfp * kfp, "<",
                 rm < t.rm_over_kfp * kfp || rm <= kResidualFloor});
  if (!h.martingale_rows.empty()) {
    out.push_back({"martingale_pass_rate", h.martingale_pass_rate, t.martingale_pass_rate, ">=",
                   h.martingale_pass_rate >= t.martingale_pass_rate});
  }
  if (!v.qv.empty()) {
    // gated on the expectation-level gap; the pathwise one carries the
    // sqrt(2 / n_steps) sampling error of a realized variance
    double worst = 0.0;
    for (const auto& q : v.qv) worst = std::max(worst, q.report.aggregate);
    out.push_back({"qv_aggregate_gap_max", worst, t.qv_gap, "<=", worst <= t.qv_gap});
  }
  if (!v.moments.empty()) {
    double me = 0.0, ve = 0.0;
    for (const auto& mm : v.moments) {
      me = std::max(me, std::abs(mm.mean - mm.oracle_mean));
      ve = std::max(ve, std::abs(mm.var - mm.oracle_var));
    }
    out.push_back({"moment_mean_error_max", me, t.moment_mean, "<=", me <= t.moment_mean});
    out.push_back({"moment_var_error_max", ve, t.moment_var, "<=", ve <= t.moment_var});
  }
  for (double x : {h.integrability_path_ensemble, h.integrability_curve_ensemble, h.integrability_random_curve}) {
    if (!std::isfinite(x)) out.push_back({"integrability_finite", x, 0.0, "==", false});
  }
  if (m != nullptr && m->uniqueness && m->uniqueness->gated) {
    const auto& u = *m->uniqueness;
    out.push_back({"uniqueness_medians_strictly_decreasing", u.medians.back(), u.medians.front(), "<",
                   u.strictly_decreasing.value_or(false)});
  }
  return out;
}

[[nodiscard]] inline json quantiles_json(const Quantiles& q) {
  return {{"count", q.count}, {"median", q.median}, {"q90", q.q90}, {"max", q.max}};
}

[[nodiscard]] inline json summary_json(const PathMeasureEnsemble& L, const ExperimentConfig& c, const ScenarioSpec& s,
                                       const VerifyResult& v, const MetricsResult* m, const std::vector<Check>& checks) {
  const auto& h = v.hierarchy;
  json j;
  j["schema"] = kSummarySchema;
  j["scenario"] = s.name;
  j["n_members"] = h.n_members;
  j["n_nodes"] = h.n_nodes;
  j["n_particles"] = L.member(0).size();
  j["horizon"] = L.grid().horizon();
  j["identities"] = {{"checks", h.identity_checks}, {"exact", h.identities_exact}};
  j["kfp"] = quantiles_json(h.kfp);
  j["kfp_relative"] = quantiles_json(h.kfp_relative);
  j["rm"] = quantiles_json(h.rm);
  j["rm_relative"] = quantiles_json(h.rm_relative);
  j["martingale"] = {{"configs", h.martingale_rows.size()},
                     {"pass_rate", h.martingale_pass_rate},
                     {"min_member_pass_rate", h.martingale_min_member_pass_rate}};
  {
    std::vector<double> vals, agg;
    for (const auto& q : v.qv) {
      vals.push_back(q.report.value);
      agg.push_back(q.report.aggregate);
    }
    j["qv"] = {{"relative_gap", quantiles_json(summarize(vals))}, {"aggregate_gap", quantiles_json(summarize(agg))}};
  }
  json moments = json::array();
  for (const auto& mm : v.moments) {
    moments.push_back({{"member", mm.member},
                       {"mean", mm.mean},
                       {"var", mm.var},
                       {"oracle_mean", mm.oracle_mean},
                       {"oracle_var", mm.oracle_var}});
  }
  j["moments"] = std::move(moments);
  j["integrability"] = {{"path_measure_ensemble", h.integrability_path_ensemble},
                        {"measure_path_ensemble", h.integrability_curve_ensemble},
                        {"random_measure_curve", h.integrability_random_curve}};
  if (m != nullptr && m->uniqueness) {
    const auto& u = *m->uniqueness;
    j["uniqueness"] = {{"status", u.status()}, {"sizes", u.sizes}, {"medians", u.medians}};
  } else {
    j["uniqueness"] = nullptr;
  }
  json cj = json::array();
  bool all = true;
  for (const auto& ck : checks) {
    cj.push_back({{"name", ck.name},
                  {"value", ck.value},
                  {"threshold", ck.threshold},
                  {"relation", ck.relation},
                  {"pass", ck.pass}});
    all = all && ck.pass;
  }
  j["thresholds"] = to_json(c)["thresholds"];
  j["checks"] = std::move(cj);
  j["pass"] = all;
  return j;
}

// ---------------------------------------------------------------------------
// CSV

/// Shortest round-trip decimal form.
[[nodiscard]] inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

[[nodiscard]] inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + '"';
}

[[nodiscard]] inline std::string residuals_csv(const VerifyResult& v) {
  struct Row {
    std::string test_id;
    std::int64_t member;
    const ResidualReport* r;
  };
  std::vector<Row> rows;
  for (const auto& m : v.hierarchy.kfp_rows) rows.push_back({m.report.test_id, static_cast<std::int64_t>(m.member), &m.report});
  for (const auto& r : v.hierarchy.rm_rows) rows.push_back({r.test_id, -1, &r});
  for (const auto& q : v.qv) rows.push_back({q.report.test_id, static_cast<std::int64_t>(q.member), &q.report});
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return std::tie(a.test_id, a.member) < std::tie(b.test_id, b.member);
  });
  std::string out = std::string("# schema=") + kResidualsSchema + "\n";
  out += "test_id,kind,member,value,normalizer,relative,lhs,rhs,aggregate\n";
  for (const auto& row : rows) {
    const auto& r = *row.r;
    out += csv_field(row.test_id) + "," + r.kind + "," + std::to_string(row.member) + "," + format_double(r.value) + "," +
           format_double(r.normalizer) + "," + format_double(r.relative()) + "," + format_double(r.lhs) + "," +
           format_double(r.rhs) + "," + format_double(r.aggregate) + "\n";
  }
  return out;
}

[[nodiscard]] inline std::string martingale_csv(const VerifyResult& v) {
  std::vector<const MemberMartingale*> rows;
  for (const auto& m : v.hierarchy.martingale_rows) rows.push_back(&m);
  std::stable_sort(rows.begin(), rows.end(), [](const MemberMartingale* a, const MemberMartingale* b) {
    return std::tie(a->report.id, a->member) < std::tie(b->report.id, b->member);
  });
  std::string out = std::string("# schema=") + kMartingaleSchema + "\n";
  out += "test_id,member,s,t,estimate,stderr,n_samples,pass,h\n";
  for (const auto* m : rows) {
    const auto& r = m->report;
    out += csv_field(r.id) + "," + std::to_string(m->member) + "," + format_double(r.s) + "," + format_double(r.t) + "," +
           format_double(r.estimate) + "," + format_double(r.stderr_) + "," + std::to_string(r.n_samples) + "," +
           (r.passed() ? "1" : "0") + "," + csv_field(r.h_descriptor) + "\n";
  }
  return out;
}

[[nodiscard]] inline std::string metrics_csv(std::vector<MetricRow> rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const MetricRow& a, const MetricRow& b) {
    return std::tie(a.metric, a.dict_id, a.lhs, a.rhs) < std::tie(b.metric, b.dict_id, b.lhs, b.rhs);
  });
  std::string out = std::string("# schema=") + kMetricsSchema + "\n";
  out += "metric,dict_id,lhs,rhs,value,witness_index,witness\n";
  for (const auto& r : rows) {
    out += csv_field(r.metric) + "," + csv_field(r.dict_id) + "," + csv_field(r.lhs) + "," + csv_field(r.rhs) + "," +
           format_double(r.value) + "," + (r.witness_index >= 0 ? std::to_string(r.witness_index) : std::string()) + "," +
           csv_field(r.witness) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Files and manifest

[[nodiscard]] inline std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  require(EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) == 1, "sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

class ArtifactWriter {
 public:
  explicit ArtifactWriter(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    require(!ec, "cannot create output directory ", dir_.string(), ": ", ec.message());
  }

  void write(const std::string& name, const std::string& content) {
    const auto path = dir_ / name;
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), "cannot write ", path.string());
    out << content;
    out.close();
    require(!out.fail(), "write failed: ", path.string());
    hashes_[name] = sha256_hex(content);
  }

  void manifest(const ExperimentConfig& c, const std::string& command, const json& extra = json::object()) {
    json j = {{"type", "run_manifest"}, {"schema", kManifestSchema}, {"command", command}, {"config", to_json(c)}};
    json files = json::object();
    for (const auto& [k, v] : hashes_) files[k] = {{"sha256", v}};
    j["files"] = std::move(files);
    for (const auto& [k, v] : extra.items()) j[k] = v;
    const auto path = dir_ / "run_manifest.json";
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), "cannot write ", path.string());
    out << j.dump(2) << '\n';
  }

  [[nodiscard]] const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  std::map<std::string, std::string> hashes_;
};

// ---------------------------------------------------------------------------
// Pipelines

struct RunOutcome {
  bool pass = false;
  std::vector<Check> checks;
  json summary;
  std::string residuals, martingale, metrics;
};

/// Everything `run` computes, without touching the file system.
[[nodiscard]] inline RunOutcome run_in_memory(const ExperimentConfig& c, const Logger& log = Logger()) {
  const auto scenario = make_scenario(c);
  const auto L = simulate(c, scenario, log);
  const auto v = verify_ensemble(L, c, scenario, log);
  const auto m = ensemble_metrics(L, c, scenario, log);
  RunOutcome out;
  out.checks = evaluate_checks(v, &m, c.thresholds);
  out.summary = summary_json(L, c, scenario, v, &m, out.checks);
  out.pass = out.summary["pass"].get<bool>();
  out.residuals = residuals_csv(v);
  out.martingale = martingale_csv(v);
  out.metrics = metrics_csv(m.rows);
  return out;
}

inline RunOutcome run(const ExperimentConfig& c, const Logger& log = Logger()) {
  auto out = run_in_memory(c, log);
  ArtifactWriter w(c.output_dir);
  w.write("residuals.csv", out.residuals);
  w.write("martingale.csv", out.martingale);
  w.write("metrics.csv", out.metrics);
  w.write("hierarchy_summary.json", out.summary.dump(2) + "\n");
  w.manifest(c, "run", {{"pass", out.pass}});
  for (const auto& ck : out.checks) {
    log.log(ck.pass ? LogLevel::Info : LogLevel::Warn, ck.pass ? "PASS " : "FAIL ", ck.name, ": ", ck.value, " ",
            ck.relation, " ", ck.threshold);
  }
  return out;
}

/// `simulate`: writes ensemble.json (a path_measure_ensemble document).
inline void simulate_to_dir(const ExperimentConfig& c, const Logger& log = Logger()) {
  const auto scenario = make_scenario(c);
  const auto L = simulate(c, scenario, log);
  ArtifactWriter w(c.output_dir);
  w.write("ensemble.json", io::to_json(L).dump() + "\n");
  w.manifest(c, "simulate");
}

[[nodiscard]] inline PathMeasureEnsemble load_ensemble(const std::string& path) {
  return io::path_measure_ensemble_from_json(io::read_json_file(path), path);
}

/// `verify`: residuals.csv and martingale.csv for a stored ensemble.
inline bool verify_to_dir(const ExperimentConfig& c, const PathMeasureEnsemble& L, const Logger& log = Logger()) {
  const auto scenario = make_scenario(c);
  const auto v = verify_ensemble(L, c, scenario, log);
  ArtifactWriter w(c.output_dir);
  w.write("residuals.csv", residuals_csv(v));
  w.write("martingale.csv", martingale_csv(v));
  const auto checks = evaluate_checks(v, nullptr, c.thresholds);
  const bool pass = std::all_of(checks.begin(), checks.end(), [](const Check& k) { return k.pass; });
  w.manifest(c, "verify", {{"pass", pass}});
  return pass;
}

/// `hierarchy`: hierarchy_summary.json for a stored ensemble.
[[nodiscard]] inline json hierarchy_summary(const ExperimentConfig& c, const PathMeasureEnsemble& L,
                                            const Logger& log = Logger()) {
  const auto scenario = make_scenario(c);
  const auto v = verify_ensemble(L, c, scenario, log);
  return summary_json(L, c, scenario, v, nullptr, evaluate_checks(v, nullptr, c.thresholds));
}

}  // namespace mflift::experiment

// mflift: config-driven runner. Exit codes: 0 ok, 1 runtime failure or a
// failed check, 2 invalid config or usage.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "mflift/experiment.hpp"

using namespace mflift;
namespace ex = mflift::experiment;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
};

void add_common(CLI::App* cmd, Common& c, bool needs_config = true) {
  auto* opt = cmd->add_option("--config", c.config, "experiment config (or a run_manifest.json)");
  if (needs_config) opt->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", c.out, "output directory (overrides output_dir)");
  cmd->add_option("--seed", c.seed, "master seed (overrides seed)");
  cmd->add_option("--threads", c.threads, "worker threads for per-member work")->check(CLI::PositiveNumber);
}

ex::ExperimentConfig resolve(const Common& c) {
  auto cfg = ex::load_config(c.config);
  if (!c.out.empty()) cfg.output_dir = c.out;
  if (c.seed) cfg.seed = *c.seed;
  cfg.threads = c.threads;
  return cfg;
}

struct MetricArgs {
  std::string mu, nu, metric = "d_ell", dict, out;
  int ell = 2;
  bool weighted = false;
  std::size_t dict_size = 64;
  std::uint64_t dict_seed = 0;
  std::size_t n_outer = 12;
  std::uint64_t outer_seed = 0;
};

template <typename F>
auto load(const std::string& path, F&& from_json) {
  try {
    return from_json(io::read_json_file(path), path);
  } catch (const ex::ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw Error(path + ": " + e.what());
  }
}

int run_metrics(const MetricArgs& a) {
  const auto mj = io::read_json_file(a.mu);
  const auto nj = io::read_json_file(a.nu);
  const Dictionary dict = a.dict.empty() ? build_dictionary(a.ell, a.weighted, 1, a.dict_size, a.dict_seed)
                                         : io::dictionary_from_json(io::read_json_file(a.dict), a.dict);
  MetricReport r;
  const std::string type = io::type_of(mj);
  if (type != io::type_of(nj)) {
    throw Error("metrics: inputs have different types (" + type + " vs " + io::type_of(nj) + ")");
  }
  if (type == "empirical_measure") {
    const auto mu = load(a.mu, io::empirical_measure_from_json);
    const auto nu = load(a.nu, io::empirical_measure_from_json);
    if (a.metric == "d_ell") {
      r = d_ell(mu, nu, dict);
    } else if (a.metric == "d_2w") {
      r = d_2w(mu, nu, dict);
    } else if (a.metric == "w1") {
      r = w1_truncated_report(mu, nu);
    } else {
      throw ex::ConfigError("metrics: --metric " + a.metric + " is not defined for empirical measures (d_ell, d_2w, w1)");
    }
  } else if (type == "random_measure") {
    const auto M = load(a.mu, io::random_measure_from_json);
    const auto N = load(a.nu, io::random_measure_from_json);
    if (a.metric == "ensemble_w1") {
      r = ensemble_w1_report(M, N, dict);
    } else if (a.metric == "frak_d1" || a.metric == "frak_d2") {
      const auto outers = build_outer_family(a.n_outer, 3, a.outer_seed);
      r = frak_d_report(a.metric == "frak_d1" ? 1 : 2, M, N, dict, outers);
    } else {
      throw ex::ConfigError("metrics: --metric " + a.metric +
                            " is not defined for random measures (ensemble_w1, frak_d1, frak_d2)");
    }
  } else {
    throw ex::ConfigError("metrics: unsupported input type '" + type + "' in " + a.mu);
  }
  auto j = io::to_json(r);
  j["dict_id"] = dict.id();
  if (a.out.empty()) {
    std::cout << j.dump(2) << '\n';
  } else {
    ex::ArtifactWriter w(a.out);
    w.write("metric.json", j.dump(2) + "\n");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mflift: mean-field particle simulation, metrics and hierarchy verification"};
  app.require_subcommand(1);

  Common run_c, sim_c, ver_c, hier_c;
  std::string ver_ens, hier_ens;
  MetricArgs ma;

  auto* run = app.add_subcommand("run", "simulate, verify and compare; write all artifacts");
  add_common(run, run_c);
  auto* sim = app.add_subcommand("simulate", "simulate the configured ensemble to ensemble.json");
  add_common(sim, sim_c);
  auto* ver = app.add_subcommand("verify", "residual and martingale tables for a stored ensemble");
  add_common(ver, ver_c);
  ver->add_option("--ensemble", ver_ens, "path_measure_ensemble JSON")->required()->check(CLI::ExistingFile);
  auto* hier = app.add_subcommand("hierarchy", "hierarchy summary for a stored ensemble");
  add_common(hier, hier_c);
  hier->add_option("--ensemble", hier_ens, "path_measure_ensemble JSON")->required()->check(CLI::ExistingFile);

  auto* met = app.add_subcommand("metrics", "distance between two serialized measures");
  met->add_option("--mu", ma.mu)->required()->check(CLI::ExistingFile);
  met->add_option("--nu", ma.nu)->required()->check(CLI::ExistingFile);
  met->add_option("--metric", ma.metric, "d_ell | d_2w | w1 | ensemble_w1 | frak_d1 | frak_d2");
  met->add_option("--dict", ma.dict, "dictionary JSON (default: generate from --ell/--weighted/--dict-size/--dict-seed)")
      ->check(CLI::ExistingFile);
  met->add_option("--ell", ma.ell)->check(CLI::IsMember({1, 2}));
  met->add_flag("--weighted", ma.weighted);
  met->add_option("--dict-size", ma.dict_size)->check(CLI::PositiveNumber);
  met->add_option("--dict-seed", ma.dict_seed);
  met->add_option("--n-outer", ma.n_outer)->check(CLI::PositiveNumber);
  met->add_option("--outer-seed", ma.outer_seed);
  met->add_option("--out", ma.out, "write metric.json here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const ex::Logger log;
  try {
    if (*run) {
      const auto out = ex::run(resolve(run_c), log);
      for (const auto& ck : out.checks) {
        std::cout << (ck.pass ? "PASS " : "FAIL ") << ck.name << " value=" << ex::format_double(ck.value) << ' '
                  << ck.relation << ' ' << ex::format_double(ck.threshold) << '\n';
      }
      return out.pass ? 0 : 1;
    }
    if (*sim) {
      ex::simulate_to_dir(resolve(sim_c), log);
      return 0;
    }
    if (*ver) {
      const auto cfg = resolve(ver_c);
      return ex::verify_to_dir(cfg, ex::load_ensemble(ver_ens), log) ? 0 : 1;
    }
    if (*hier) {
      const auto cfg = resolve(hier_c);
      const auto summary = ex::hierarchy_summary(cfg, ex::load_ensemble(hier_ens), log);
      ex::ArtifactWriter w(cfg.output_dir);
      w.write("hierarchy_summary.json", summary.dump(2) + "\n");
      w.manifest(cfg, "hierarchy", {{"pass", summary["pass"]}});
      return summary["pass"].get<bool>() ? 0 : 1;
    }
    if (*met) return run_metrics(ma);
  } catch (const ex::ConfigError& e) {
    std::cerr << "mflift: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "mflift: error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

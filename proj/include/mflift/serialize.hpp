#pragma once

// JSON documents for measures, ensembles, dictionaries and metric reports.
// Every document carries a "type" tag; readers validate shape and report the
// offending field.

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mflift/measures.hpp"
#include "mflift/metrics.hpp"
#include "mflift/testfn.hpp"

namespace mflift::io {

using json = nlohmann::json;

inline constexpr const char* kMeasureSchema = "mflift-measures/1";

namespace detail {

inline const json& field(const json& j, const char* key, const std::string& where) {
  require(j.is_object(), where, ": expected an object");
  const auto it = j.find(key);
  require(it != j.end(), where, ": missing field '", key, "'");
  return *it;
}

inline void expect_type(const json& j, const char* type, const std::string& where) {
  const auto& t = field(j, "type", where);
  require(t.is_string() && t.get<std::string>() == type, where, ": expected type '", type, "', got ", t.dump());
}

inline std::vector<double> numbers(const json& j, const std::string& where) {
  require(j.is_array(), where, ": expected an array of numbers");
  std::vector<double> out;
  out.reserve(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    require(j[i].is_number(), where, "[", i, "]: expected a number");
    out.push_back(j[i].get<double>());
  }
  return out;
}

inline std::size_t count(const json& j, const std::string& where) {
  require(j.is_number_unsigned() || (j.is_number_integer() && j.get<std::int64_t>() >= 0), where,
          ": expected a non-negative integer");
  return j.get<std::size_t>();
}

/// [[x_1...x_d], ...] flattened, checking every row has length d.
inline std::vector<double> rows(const json& j, std::size_t d, const std::string& where) {
  require(j.is_array(), where, ": expected an array of points");
  std::vector<double> out;
  out.reserve(j.size() * d);
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto r = numbers(j[i], mflift::detail::concat(where, "[", i, "]"));
    require(r.size() == d, where, "[", i, "]: point has ", r.size(), " coordinates, expected ", d);
    out.insert(out.end(), r.begin(), r.end());
  }
  return out;
}

inline json points(std::span<const double> flat, std::size_t d) {
  json a = json::array();
  for (std::size_t i = 0; i < flat.size() / d; ++i) a.push_back(std::vector<double>(flat.begin() + i * d, flat.begin() + (i + 1) * d));
  return a;
}

inline TimeGrid grid_from(const json& j, const std::string& where) {
  return TimeGrid(numbers(field(j, "grid", where), where + ".grid"));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Writers

[[nodiscard]] inline json to_json(const EmpiricalMeasure& mu) {
  return {{"type", "empirical_measure"},
          {"d", mu.dim()},
          {"support", detail::points(mu.coords(), mu.dim())},
          {"weights", std::vector<double>(mu.weights().begin(), mu.weights().end())}};
}

[[nodiscard]] inline json to_json(const TimeGrid& g) { return std::vector<double>(g.nodes().begin(), g.nodes().end()); }

/// paths[i][k] is the state of path i at node k.
[[nodiscard]] inline json to_json(const PathMeasure& lambda) {
  json paths = json::array();
  for (std::size_t i = 0; i < lambda.size(); ++i) {
    json p = json::array();
    for (std::size_t k = 0; k < lambda.grid().size(); ++k) {
      const auto s = lambda.state(k, i);
      p.push_back(std::vector<double>(s.begin(), s.end()));
    }
    paths.push_back(std::move(p));
  }
  return {{"type", "path_measure"},
          {"d", lambda.dim()},
          {"grid", to_json(lambda.grid())},
          {"paths", std::move(paths)},
          {"weights", std::vector<double>(lambda.weights().begin(), lambda.weights().end())}};
}

[[nodiscard]] inline json to_json(const MeasurePath& c) {
  json ms = json::array();
  for (const auto& m : c.measures()) ms.push_back(to_json(m));
  return {{"type", "measure_path"}, {"d", c.dim()}, {"grid", to_json(c.grid())}, {"measures", std::move(ms)}};
}

[[nodiscard]] inline json to_json(const RandomMeasure& M) {
  json atoms = json::array();
  for (const auto& a : M.atoms()) atoms.push_back(to_json(a));
  return {{"type", "random_measure"},
          {"d", M.dim()},
          {"atoms", std::move(atoms)},
          {"weights", std::vector<double>(M.weights().begin(), M.weights().end())}};
}

[[nodiscard]] inline json to_json(const RandomMeasureCurve& M) {
  json es = json::array();
  for (const auto& e : M.entries()) es.push_back(to_json(e));
  return {{"type", "random_measure_curve"}, {"d", M.dim()}, {"grid", to_json(M.grid())}, {"entries", std::move(es)}};
}

[[nodiscard]] inline json to_json(const MeasurePathEnsemble& L) {
  json ms = json::array();
  for (const auto& m : L.members()) ms.push_back(to_json(m));
  return {{"type", "measure_path_ensemble"},
          {"d", L.dim()},
          {"grid", to_json(L.grid())},
          {"members", std::move(ms)},
          {"weights", std::vector<double>(L.weights().begin(), L.weights().end())}};
}

[[nodiscard]] inline json to_json(const PathMeasureEnsemble& L) {
  json ms = json::array();
  for (const auto& m : L.members()) ms.push_back(to_json(m));
  return {{"type", "path_measure_ensemble"},
          {"d", L.dim()},
          {"grid", to_json(L.grid())},
          {"members", std::move(ms)},
          {"weights", std::vector<double>(L.weights().begin(), L.weights().end())}};
}

[[nodiscard]] inline json to_json(const Dictionary& dict) {
  json entries = json::array();
  for (const auto& f : dict.entries()) {
    require(f.is_bump(), "dictionary serialization: entry is not a bump");
    const auto& s = f.shape();
    json axes = json::array();
    for (std::size_t r = 0; r < s.axes.rows(); ++r) {
      std::vector<double> row(s.axes.cols());
      for (std::size_t c = 0; c < s.axes.cols(); ++c) row[c] = s.axes(r, c);
      axes.push_back(std::move(row));
    }
    const auto& cert = f.certificates();
    entries.push_back({{"center", s.center},
                       {"axes", std::move(axes)},
                       {"radii", s.radii},
                       {"amplitude", f.amplitude()},
                       {"certificates", {{"C1", *cert.c1}, {"C2", *cert.c2}, {"C2w", *cert.c2w}}}});
  }
  const auto& k = dict.key();
  return {{"type", "dictionary"},
          {"id", dict.id()},
          {"ell", k.ell},
          {"weighted", k.weighted},
          {"d", k.dim},
          {"size", k.size},
          {"seed", k.seed},
          {"governing_norm", to_string(dict.governing())},
          {"entries", std::move(entries)}};
}

[[nodiscard]] inline json to_json(const MetricReport& r) {
  json j = {{"type", "metric_report"}, {"kind", r.kind}, {"value", r.value}, {"witness", r.witness}};
  j["witness_index"] = r.witness_index >= 0 ? json(r.witness_index) : json(nullptr);
  return j;
}

// ---------------------------------------------------------------------------
// Readers

[[nodiscard]] inline EmpiricalMeasure empirical_measure_from_json(const json& j, const std::string& where = "measure") {
  detail::expect_type(j, "empirical_measure", where);
  const std::size_t d = detail::count(detail::field(j, "d", where), where + ".d");
  auto x = detail::rows(detail::field(j, "support", where), d, where + ".support");
  auto w = detail::numbers(detail::field(j, "weights", where), where + ".weights");
  return EmpiricalMeasure(d, std::move(x), std::move(w));
}

[[nodiscard]] inline PathMeasure path_measure_from_json(const json& j, const std::string& where = "path_measure") {
  detail::expect_type(j, "path_measure", where);
  const std::size_t d = detail::count(detail::field(j, "d", where), where + ".d");
  TimeGrid grid = detail::grid_from(j, where);
  const auto& paths = detail::field(j, "paths", where);
  require(paths.is_array(), where, ".paths: expected an array");
  const std::size_t n = paths.size();
  std::vector<double> states(grid.size() * n * d);
  for (std::size_t i = 0; i < n; ++i) {
    const std::string pw = mflift::detail::concat(where, ".paths[", i, "]");
    const auto flat = detail::rows(paths[i], d, pw);
    require(flat.size() == grid.size() * d, pw, ": ", flat.size() / d, " states for ", grid.size(), " nodes");
    for (std::size_t k = 0; k < grid.size(); ++k) {
      std::copy(flat.begin() + k * d, flat.begin() + (k + 1) * d, states.begin() + (k * n + i) * d);
    }
  }
  auto w = detail::numbers(detail::field(j, "weights", where), where + ".weights");
  return PathMeasure(std::move(grid), d, std::move(states), std::move(w));
}

[[nodiscard]] inline MeasurePath measure_path_from_json(const json& j, const std::string& where = "measure_path") {
  detail::expect_type(j, "measure_path", where);
  TimeGrid grid = detail::grid_from(j, where);
  const auto& ms = detail::field(j, "measures", where);
  require(ms.is_array(), where, ".measures: expected an array");
  std::vector<EmpiricalMeasure> out;
  for (std::size_t k = 0; k < ms.size(); ++k) out.push_back(empirical_measure_from_json(ms[k], mflift::detail::concat(where, ".measures[", k, "]")));
  return MeasurePath(std::move(grid), std::move(out));
}

[[nodiscard]] inline RandomMeasure random_measure_from_json(const json& j, const std::string& where = "random_measure") {
  detail::expect_type(j, "random_measure", where);
  const auto& as = detail::field(j, "atoms", where);
  require(as.is_array(), where, ".atoms: expected an array");
  std::vector<EmpiricalMeasure> atoms;
  for (std::size_t i = 0; i < as.size(); ++i) atoms.push_back(empirical_measure_from_json(as[i], mflift::detail::concat(where, ".atoms[", i, "]")));
  return RandomMeasure(std::move(atoms), detail::numbers(detail::field(j, "weights", where), where + ".weights"));
}

[[nodiscard]] inline RandomMeasureCurve random_measure_curve_from_json(const json& j,
                                                                       const std::string& where = "random_measure_curve") {
  detail::expect_type(j, "random_measure_curve", where);
  TimeGrid grid = detail::grid_from(j, where);
  const auto& es = detail::field(j, "entries", where);
  require(es.is_array(), where, ".entries: expected an array");
  std::vector<RandomMeasure> out;
  for (std::size_t k = 0; k < es.size(); ++k) out.push_back(random_measure_from_json(es[k], mflift::detail::concat(where, ".entries[", k, "]")));
  return RandomMeasureCurve(std::move(grid), std::move(out));
}

[[nodiscard]] inline MeasurePathEnsemble measure_path_ensemble_from_json(const json& j,
                                                                         const std::string& where = "ensemble") {
  detail::expect_type(j, "measure_path_ensemble", where);
  const auto& ms = detail::field(j, "members", where);
  require(ms.is_array(), where, ".members: expected an array");
  std::vector<MeasurePath> out;
  for (std::size_t i = 0; i < ms.size(); ++i) out.push_back(measure_path_from_json(ms[i], mflift::detail::concat(where, ".members[", i, "]")));
  return MeasurePathEnsemble(std::move(out), detail::numbers(detail::field(j, "weights", where), where + ".weights"));
}

[[nodiscard]] inline PathMeasureEnsemble path_measure_ensemble_from_json(const json& j,
                                                                         const std::string& where = "ensemble") {
  detail::expect_type(j, "path_measure_ensemble", where);
  const auto& ms = detail::field(j, "members", where);
  require(ms.is_array(), where, ".members: expected an array");
  std::vector<PathMeasure> out;
  for (std::size_t i = 0; i < ms.size(); ++i) out.push_back(path_measure_from_json(ms[i], mflift::detail::concat(where, ".members[", i, "]")));
  return PathMeasureEnsemble(std::move(out), detail::numbers(detail::field(j, "weights", where), where + ".weights"));
}

/// Rebuilds a dictionary from its content address and checks the stored
/// parameters against the regenerated ones.
[[nodiscard]] inline Dictionary dictionary_from_json(const json& j, const std::string& where = "dictionary") {
  detail::expect_type(j, "dictionary", where);
  const int ell = detail::field(j, "ell", where).get<int>();
  const bool weighted = detail::field(j, "weighted", where).get<bool>();
  const std::size_t d = detail::count(detail::field(j, "d", where), where + ".d");
  const std::size_t size = detail::count(detail::field(j, "size", where), where + ".size");
  const std::uint64_t seed = detail::field(j, "seed", where).get<std::uint64_t>();
  Dictionary dict = build_dictionary(ell, weighted, d, size, seed);
  if (const auto it = j.find("entries"); it != j.end()) {
    require(*it == to_json(dict)["entries"], where, ": stored entries differ from the dictionary regenerated from ",
            dict.id());
  }
  return dict;
}

// ---------------------------------------------------------------------------
// Files

[[nodiscard]] inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "cannot open ", path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return json::parse(ss.str());
  } catch (const json::parse_error& e) {
    fail(path, ": ", e.what());
  }
}

inline void write_json_file(const std::string& path, const json& j, int indent = -1) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "cannot write ", path);
  out << j.dump(indent) << '\n';
  require(static_cast<bool>(out), "write failed: ", path);
}

/// Document type tag, or "" when absent.
[[nodiscard]] inline std::string type_of(const json& j) {
  if (!j.is_object()) return "";
  const auto it = j.find("type");
  return it != j.end() && it->is_string() ? it->get<std::string>() : "";
}

}  // namespace mflift::io

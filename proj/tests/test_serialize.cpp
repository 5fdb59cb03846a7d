#include <gtest/gtest.h>

#include <string>

#include "mflift/dynamics.hpp"
#include "mflift/metrics.hpp"
#include "mflift/scenarios.hpp"
#include "mflift/serialize.hpp"

using namespace mflift;
using json = nlohmann::json;

namespace {

// text round trip, since files are what the CLI exchanges
template <typename T, typename F>
T through_text(const T& x, F&& from) {
  return from(json::parse(io::to_json(x).dump()), "x");
}

PathMeasureEnsemble small_ensemble() {
  const auto ou = mean_field_ou(1.0, 0.5, 0.4, 1.0, 0.25);
  return simulate_ensemble(ou.coeffs, GaussianLawFamily{1, 0.0, 1.0, 0.1, 0.4}, {17, TimeGrid::uniform(1.0, 9), 0, 1}, 3,
                           5);
}

std::string error_of(const json& j) {
  try {
    (void)io::empirical_measure_from_json(j, "mu");
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Serialize, EmpiricalMeasureRoundTripIsExact) {
  // awkward doubles survive the text form bit for bit
  const EmpiricalMeasure mu(2, {0.1, 1.0 / 3.0, -2e-300, 5e300, 7.0, -0.0}, {0.2, 0.3, 0.5});
  EXPECT_EQ(through_text(mu, io::empirical_measure_from_json), mu);
}

TEST(Serialize, HierarchyObjectsRoundTrip) {
  const auto L = small_ensemble();
  EXPECT_EQ(through_text(L, io::path_measure_ensemble_from_json), L);
  EXPECT_EQ(through_text(L.member(1), io::path_measure_from_json), L.member(1));
  const auto Lambda = ensemble_project(L);
  EXPECT_EQ(through_text(Lambda, io::measure_path_ensemble_from_json), Lambda);
  EXPECT_EQ(through_text(Lambda.member(0), io::measure_path_from_json), Lambda.member(0));
  const auto M = curve_from_ensemble(Lambda);
  EXPECT_EQ(through_text(M, io::random_measure_curve_from_json), M);
  EXPECT_EQ(through_text(M.at(3), io::random_measure_from_json), M.at(3));
}

TEST(Serialize, PathLayoutIsPathMajor) {
  const auto L = small_ensemble();
  const auto j = io::to_json(L.member(0));
  EXPECT_EQ(j["paths"].size(), 17u);
  EXPECT_EQ(j["paths"][4].size(), 10u);
  EXPECT_EQ(j["paths"][4][7][0].get<double>(), L.member(0).state(7, 4)[0]);
}

TEST(Serialize, DictionaryRegeneratesFromKey) {
  const auto dict = build_dictionary(2, true, 1, 32, 7);
  const auto j = io::to_json(dict);
  EXPECT_EQ(j["id"], "dict-l2w-d1-n32-s7");
  const auto back = io::dictionary_from_json(json::parse(j.dump()));
  EXPECT_EQ(back.id(), dict.id());
  EXPECT_EQ(io::to_json(back), j);

  auto tampered = j;
  tampered["entries"][3]["amplitude"] = 123.0;
  EXPECT_THROW((void)io::dictionary_from_json(tampered), Error);
}

TEST(Serialize, MetricReportWitness) {
  const auto r = d_ell(EmpiricalMeasure::dirac({0.0}), EmpiricalMeasure::dirac({1.0}), build_dictionary(1, false, 1, 8, 1));
  const auto j = io::to_json(r);
  EXPECT_EQ(j["type"], "metric_report");
  EXPECT_EQ(j["witness_index"].get<std::int64_t>(), r.witness_index);
  EXPECT_TRUE(io::to_json(w1_truncated_report(EmpiricalMeasure::dirac({0.0}), EmpiricalMeasure::dirac({1.0})))["witness_index"]
                  .is_null());
}

TEST(Serialize, ErrorsNameTheField) {
  EXPECT_NE(error_of({{"type", "path_measure"}}).find("expected type"), std::string::npos);
  const json missing = {{"type", "empirical_measure"}, {"d", 1}, {"support", {{0.0}}}};
  EXPECT_NE(error_of(missing).find("mu"), std::string::npos);
  EXPECT_NE(error_of(missing).find("weights"), std::string::npos);
  const json ragged = {{"type", "empirical_measure"}, {"d", 2}, {"support", {{0.0, 1.0}, {2.0}}}, {"weights", {0.5, 0.5}}};
  EXPECT_NE(error_of(ragged).find("mu.support[1]"), std::string::npos) << error_of(ragged);
  const json text = {{"type", "empirical_measure"}, {"d", 1}, {"support", {{"a"}}}, {"weights", {1.0}}};
  EXPECT_FALSE(error_of(text).empty());
  const json bad_weights = {{"type", "empirical_measure"}, {"d", 1}, {"support", {{0.0}}}, {"weights", {0.4}}};
  EXPECT_FALSE(error_of(bad_weights).empty());
}

TEST(Serialize, TypeTag) {
  EXPECT_EQ(io::type_of(io::to_json(EmpiricalMeasure::dirac({1.0}))), "empirical_measure");
  EXPECT_EQ(io::type_of(json::array()), "");
  EXPECT_EQ(io::type_of(json{{"type", 3}}), "");
}

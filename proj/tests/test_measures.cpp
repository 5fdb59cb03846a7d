#include <gtest/gtest.h>

#include <cmath>

#include "mflift/measures.hpp"
#include "mflift/rng.hpp"

using namespace mflift;

namespace {

ScalarFunction square() {
  return {1, [](std::span<const double> x) { return x[0] * x[0]; }};
}
ScalarFunction ident() {
  return {1, [](std::span<const double> x) { return x[0]; }};
}

PathMeasure two_paths() {
  // gamma1 = 0, gamma2(t) = t on {0, 0.5, 1}
  const auto grid = TimeGrid::uniform(1.0, 2);
  return PathMeasure(grid, 1, {0.0, 0.0, 0.0, 0.5, 0.0, 1.0}, {0.5, 0.5});
}

EmpiricalMeasure random_measure(rng::Stream& rs, std::size_t n, std::size_t d) {
  std::vector<double> x(n * d);
  for (auto& v : x) v = rs.normal();
  std::vector<double> w(n);
  double s = 0.0;
  for (auto& v : w) s += (v = rs.uniform());
  for (auto& v : w) v /= s;
  w.back() = 1.0 - compensated_sum(std::span<const double>(w).first(n - 1));
  return EmpiricalMeasure(d, std::move(x), std::move(w));
}

}  // namespace

TEST(Integrate, PointMassAtZero) { EXPECT_EQ(integrate(EmpiricalMeasure::dirac({0.0}), square()), 0.0); }

TEST(Integrate, TwoPointSymmetry) {
  const EmpiricalMeasure mu(1, {0.0, 1.0}, {0.5, 0.5});
  EXPECT_DOUBLE_EQ(integrate(mu, ident()), 0.5);
}

TEST(Integrate, ThreePointSquares) {
  // (0 + 1 + 4) / 3
  const auto mu = EmpiricalMeasure::uniform(1, {0.0, 1.0, 2.0});
  EXPECT_NEAR(integrate(mu, square()), 5.0 / 3.0, 1e-15);
}

TEST(Integrate, DimensionMismatchIsError) {
  const EmpiricalMeasure mu(2, {0.0, 1.0}, {1.0});
  EXPECT_THROW((void)integrate(mu, square()), Error);
}

TEST(Integrate, NonFiniteIntegrandIsError) {
  const auto mu = EmpiricalMeasure::dirac({0.0});
  const ScalarFunction f{1, [](std::span<const double>) { return std::nan(""); }};
  EXPECT_THROW((void)integrate(mu, f), Error);
}

TEST(Integrate, LinearInFunctionAndMixture) {
  rng::Stream rs(3, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const auto mu = random_measure(rs, 17, 1);
    const double a = rs.uniform(-2, 2);
    const double b = rs.uniform(-2, 2);
    const ScalarFunction comb{1, [a, b](std::span<const double> x) { return a * x[0] + b * x[0] * x[0]; }};
    const double lhs = integrate(mu, comb);
    const double rhs = a * integrate(mu, ident()) + b * integrate(mu, square());
    EXPECT_NEAR(lhs, rhs, 1e-12 * (1.0 + std::abs(lhs)));

    // mixture p mu + (1-p) nu as one weighted support
    const auto nu = random_measure(rs, 5, 1);
    const double p = rs.uniform();
    std::vector<double> x(mu.coords().begin(), mu.coords().end());
    x.insert(x.end(), nu.coords().begin(), nu.coords().end());
    std::vector<double> w;
    for (double v : mu.weights()) w.push_back(p * v);
    for (double v : nu.weights()) w.push_back((1 - p) * v);
    const double total = compensated_sum(w);
    for (auto& v : w) v /= total;
    const EmpiricalMeasure mix(1, x, w);
    const double m = integrate(mix, square());
    EXPECT_NEAR(m, p * integrate(mu, square()) + (1 - p) * integrate(nu, square()), 1e-12 * (1.0 + m));
  }
}

TEST(EmpiricalMeasure, Validation) {
  EXPECT_THROW(EmpiricalMeasure(1, {}, {}), Error);
  EXPECT_THROW(EmpiricalMeasure(1, {0.0, 1.0}, {0.5, 0.6}), Error);
  EXPECT_THROW(EmpiricalMeasure(1, {0.0, 1.0}, {1.5, -0.5}), Error);
  EXPECT_THROW(EmpiricalMeasure(1, {INFINITY}, {1.0}), Error);
  EXPECT_THROW(EmpiricalMeasure(2, {0.0, 1.0, 2.0}, {1.0}), Error);
  EXPECT_THROW((void)EmpiricalMeasure::from_points({{0.0}, {1.0, 2.0}}, {0.5, 0.5}), Error);
  EXPECT_NO_THROW(EmpiricalMeasure(1, {0.0, 1.0}, {0.5, 0.5 + 5e-13}));
}

TEST(EmpiricalMeasure, LargeUniformWeightsNormalize) {
  // 1/n summed naively drifts; the compensated check must still accept it.
  EXPECT_NO_THROW(EmpiricalMeasure::uniform(1, std::vector<double>(100000, 0.25)));
}

TEST(TimeGrid, Validation) {
  EXPECT_THROW(TimeGrid({0.0}), Error);
  EXPECT_THROW(TimeGrid({0.1, 1.0}), Error);
  EXPECT_THROW(TimeGrid({0.0, 0.5, 0.5}), Error);
  const auto g = TimeGrid::uniform(1.0, 1000);
  EXPECT_EQ(g.size(), 1001u);
  EXPECT_EQ(g.horizon(), 1.0);
  EXPECT_EQ(g.index_of(0.5), 500u);
  EXPECT_EQ(g.index_of(0.3), 300u);
  EXPECT_THROW((void)g.index_of(0.0005), Error);
  EXPECT_THROW((void)g.index_of(1.5), Error);
}

TEST(PathMarginal, ConstantPath) {
  const auto grid = TimeGrid::uniform(2.0, 4);
  const SamplePath p(grid, 1, std::vector<double>(5, 3.5));
  const auto lambda = PathMeasure::from_paths({p}, {1.0});
  for (std::size_t k = 0; k < grid.size(); ++k) {
    EXPECT_EQ(path_marginal(lambda, grid[k]), EmpiricalMeasure::dirac({3.5}));
  }
}

TEST(PathMarginal, TwoPathsAtOne) {
  const auto lambda = two_paths();
  EXPECT_EQ(path_marginal(lambda, 1.0), EmpiricalMeasure(1, {0.0, 1.0}, {0.5, 0.5}));
}

TEST(PathMarginal, OffGridIsError) { EXPECT_THROW((void)path_marginal(two_paths(), 0.25), Error); }

TEST(PathToCurve, ConstantPathGivesConstantCurve) {
  const auto grid = TimeGrid::uniform(1.0, 3);
  const auto lambda = PathMeasure::from_paths({SamplePath(grid, 2, std::vector<double>(8, -1.0))}, {1.0});
  const auto curve = path_to_curve(lambda);
  for (const auto& m : curve.measures()) EXPECT_EQ(m, EmpiricalMeasure::dirac({-1.0, -1.0}));
}

TEST(PathToCurve, NodeExtractionMatchesMarginal) {
  rng::Stream rs(11, 0);
  const auto grid = TimeGrid::uniform(1.0, 7);
  std::vector<SamplePath> paths;
  for (int i = 0; i < 9; ++i) {
    std::vector<double> s(grid.size() * 2);
    for (auto& v : s) v = rs.normal();
    paths.emplace_back(grid, 2, std::move(s));
  }
  const auto lambda = PathMeasure::from_paths(paths, uniform_weights(9));
  const auto curve = path_to_curve(lambda);
  for (std::size_t k = 0; k < grid.size(); ++k) EXPECT_EQ(curve.at(k), path_marginal(lambda, grid[k]));
  EXPECT_EQ(lambda.path(4).state(3)[1], lambda.state(3, 4)[1]);
}

TEST(Ensembles, SingletonAndWeights) {
  const auto lambda = two_paths();
  const PathMeasureEnsemble L({lambda}, {1.0});
  const auto Lambda = ensemble_project(L);
  ASSERT_EQ(Lambda.size(), 1u);
  EXPECT_EQ(Lambda.member(0), path_to_curve(lambda));
  const auto M = curve_from_ensemble(Lambda);
  for (std::size_t k = 0; k < M.size(); ++k) EXPECT_EQ(M.at(k).size(), 1u);

  const PathMeasureEnsemble L2({lambda, lambda}, {0.3, 0.7});
  const auto Lambda2 = ensemble_project(L2);
  EXPECT_EQ(Lambda2.weight(0), 0.3);
  EXPECT_EQ(Lambda2.weight(1), 0.7);
  const auto R = curve_eval(Lambda2, 0.5);
  EXPECT_EQ(R.weight(0), 0.3);
  EXPECT_EQ(R.weight(1), 0.7);
}

TEST(Ensembles, PushforwardOrdersAgreeExactly) {
  rng::Stream rs(5, 1);
  const auto grid = TimeGrid::uniform(1.0, 10);
  std::vector<PathMeasure> members;
  for (int m = 0; m < 4; ++m) {
    std::vector<double> s(grid.size() * 6);
    for (auto& v : s) v = rs.normal();
    members.emplace_back(grid, 1, std::move(s), uniform_weights(6));
  }
  const PathMeasureEnsemble L(members, {0.1, 0.2, 0.3, 0.4});
  const auto Lambda = ensemble_project(L);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    EXPECT_EQ(curve_eval(Lambda, grid[k]), ensemble_marginal(L, grid[k]));
  }
  EXPECT_THROW((void)curve_eval(Lambda, 0.05), Error);
}

TEST(Ensembles, Validation) {
  const auto a = two_paths();
  const PathMeasure b(TimeGrid::uniform(1.0, 4), 1, std::vector<double>(5, 0.0), {1.0});
  EXPECT_THROW(PathMeasureEnsemble({a, b}, {0.5, 0.5}), Error);
  EXPECT_THROW(PathMeasureEnsemble({a}, {0.9}), Error);
  EXPECT_THROW(RandomMeasure({EmpiricalMeasure::dirac({0.0})}, {0.5, 0.5}), Error);
}

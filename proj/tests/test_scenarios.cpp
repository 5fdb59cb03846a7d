#include <gtest/gtest.h>

#include <cmath>

#include "mflift/dynamics.hpp"
#include "mflift/rng.hpp"
#include "mflift/scenarios.hpp"

using namespace mflift;

TEST(MeanFieldOu, ReferenceMoments) {
  const auto s = mean_field_ou(1.0, 0.5, 0.4, 1.0, 0.25);
  const auto m = (*s.oracle)(1.0);
  EXPECT_NEAR(m.mean, 0.606531, 1e-6);
  EXPECT_NEAR(m.var, 0.103007, 1e-6);
  EXPECT_EQ(*s.lipschitz, 1.5);
  EXPECT_EQ(s.params.at("kappa"), 0.5);
}

TEST(MeanFieldOu, KappaEqualsThetaKeepsMean) {
  const auto s = mean_field_ou(0.7, 0.7, 0.3, 1.3, 0.2);
  for (double t : {0.0, 0.5, 2.0}) EXPECT_EQ((*s.oracle)(t).mean, 1.3);
}

TEST(MeanFieldOu, ZeroNoiseIsContraction) {
  const auto s = mean_field_ou(2.0, 0.0, 0.0, 0.0, 0.5);
  for (double t : {0.1, 1.0}) EXPECT_NEAR((*s.oracle)(t).var, 0.5 * std::exp(-4.0 * t), 1e-15);
}

TEST(MeanFieldOu, ThetaZeroUsesLimitForm) {
  const auto s = mean_field_ou(0.0, 0.2, 0.5, 1.0, 0.1);
  EXPECT_NEAR((*s.oracle)(2.0).var, 0.1 + 0.25 * 2.0, 1e-15);
  // continuity with small theta
  const auto near = mean_field_ou(1e-7, 0.2, 0.5, 1.0, 0.1);
  EXPECT_NEAR((*near.oracle)(2.0).var, (*s.oracle)(2.0).var, 1e-6);
}

TEST(MeanFieldOu, InvalidParameters) {
  EXPECT_THROW((void)mean_field_ou(-1.0, 0.0, 0.4, 0.0, 1.0), Error);
  EXPECT_THROW((void)mean_field_ou(1.0, 0.0, -0.4, 0.0, 1.0), Error);
  EXPECT_THROW((void)mean_field_ou(1.0, 0.0, 0.4, 0.0, -1.0), Error);
}

TEST(MeanFieldOu, OracleAgreesWithRk4) {
  // independent RK4 of the moment ODEs at a different step count
  const double th = 1.0, ka = 0.5, sg = 0.4;
  const auto s = mean_field_ou(th, ka, sg, 1.0, 0.25);
  double m = 1.0, v = 0.25;
  const int n = 5000;
  const double h = 1.0 / n;
  auto f = [&](double mm, double vv) { return std::pair{(ka - th) * mm, -2 * th * vv + sg * sg}; };
  for (int i = 0; i < n; ++i) {
    const auto k1 = f(m, v);
    const auto k2 = f(m + 0.5 * h * k1.first, v + 0.5 * h * k1.second);
    const auto k3 = f(m + 0.5 * h * k2.first, v + 0.5 * h * k2.second);
    const auto k4 = f(m + h * k3.first, v + h * k3.second);
    m += h / 6 * (k1.first + 2 * k2.first + 2 * k3.first + k4.first);
    v += h / 6 * (k1.second + 2 * k2.second + 2 * k3.second + k4.second);
  }
  EXPECT_NEAR((*s.oracle)(1.0).mean, m, 1e-12);
  EXPECT_NEAR((*s.oracle)(1.0).var, v, 1e-12);
}

// Lipschitz certificate in x at fixed mu, checked by random difference quotients.
TEST(MeanFieldOu, LipschitzCertificateHolds) {
  const auto s = mean_field_ou(1.0, 0.5, 0.4, 1.0, 0.25);
  rng::Stream rs(8, 0);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    std::vector<double> pts(5);
    for (auto& p : pts) p = rs.normal() * 2;
    const auto mu = EmpiricalMeasure::uniform(1, pts);
    const Vector x{rs.uniform(-10, 10)}, y{rs.uniform(-10, 10)};
    if (x[0] == y[0]) continue;
    const double t = rs.uniform();
    const double q = std::abs(s.coeffs.drift(t, x, mu)[0] - s.coeffs.drift(t, y, mu)[0]) / std::abs(x[0] - y[0]);
    worst = std::max(worst, q);
  }
  EXPECT_LE(worst, 1.01 * *s.lipschitz);
}

TEST(Transport, LinearFlow) {
  // b = -x: beta = 0
  for (double t : {0.0, 0.3, 1.7}) EXPECT_NEAR(transport_flow(1.0, 0.0, 2.0, 5.0, t), 2.0 * std::exp(-t), 1e-15);
}

TEST(Transport, SymmetricInitialMeanStaysZero) {
  const auto s = zero_diffusion_transport(1.0, 1.0, 0.0, 1.0);
  const auto init = InitialLawSampler::fixed(EmpiricalMeasure::uniform(1, {-1.5, -0.5, 0.5, 1.5}));
  const auto lambda = simulate_mckv(s.coeffs, init, {4, TimeGrid::uniform(1.0, 100), 0, 1});
  for (std::size_t k = 0; k < lambda.grid().size(); ++k) {
    const auto mu = lambda.marginal_at(k);
    EXPECT_NEAR(mu.mean()[0], 0.0, 1e-15);
    // pairwise contraction at the Euler rate (1 - dt)^k
    const double gap = lambda.state(k, 3)[0] - lambda.state(k, 0)[0];
    EXPECT_NEAR(gap, 3.0 * std::pow(1.0 - 0.01, static_cast<double>(k)), 1e-12);
    EXPECT_NEAR(gap, 3.0 * std::exp(-lambda.grid()[k]), 0.01);
  }
}

TEST(Transport, EulerConvergesToCharacteristics) {
  const double alpha = 0.6, beta = 0.9;
  const auto s = zero_diffusion_transport(alpha, beta, 0.0, 1.0);
  const auto atoms = gaussian_quantile_measure(0.4, 0.3, 11);
  const double m0 = atoms.mean()[0];
  double prev = INFINITY;
  for (std::size_t steps : {100u, 1000u}) {
    const auto lambda = simulate_mckv(s.coeffs, InitialLawSampler::fixed(atoms), {11, TimeGrid::uniform(1.0, steps), 0, 1});
    double err = 0.0;
    for (std::size_t i = 0; i < 11; ++i) {
      err = std::max(err, std::abs(lambda.state(steps, i)[0] - transport_flow(alpha, beta, atoms.point(i)[0], m0, 1.0)));
    }
    EXPECT_LT(err, prev);
    prev = err;
  }
  EXPECT_LE(prev, 2e-3);
}

TEST(Transport, OracleMoments) {
  const auto s = zero_diffusion_transport(0.5, 0.2, 1.0, 0.4);
  EXPECT_NEAR((*s.oracle)(1.0).mean, std::exp(-0.3), 1e-15);
  EXPECT_NEAR((*s.oracle)(1.0).var, 0.4 * std::exp(-1.0), 1e-15);
  EXPECT_TRUE(s.coeffs.traits().zero_diffusion);
}

TEST(NonsmoothProbe, NoCertificateAndSchemeFixedPoint) {
  const auto s = nonsmooth_probe();
  EXPECT_FALSE(s.lipschitz.has_value());
  EXPECT_FALSE(s.oracle.has_value());
  const auto lambda = simulate_mckv(s.coeffs, s.init, {1, TimeGrid::uniform(1.0, 100), 0, 1});
  for (std::size_t k = 0; k < lambda.grid().size(); ++k) EXPECT_EQ(lambda.state(k, 0)[0], 0.0);
}

TEST(NonsmoothProbe, PerturbedStartGrows) {
  // exact solution from eps > 0 is (sqrt(eps) + t/2)^2
  const auto s = nonsmooth_probe(1e-6);
  const auto lambda = simulate_mckv(s.coeffs, s.init, {1, TimeGrid::uniform(1.0, 1000), 0, 1});
  const double end = lambda.state(1000, 0)[0];
  EXPECT_GT(end, 0.2);
  EXPECT_NEAR(end, std::pow(1e-3 + 0.5, 2), 0.02);
}

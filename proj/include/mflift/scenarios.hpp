#pragma once

// Built-in coefficient families. Linear families carry closed-form moment
// oracles, checked against an RK4 integration of their moment ODEs on creation.

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>

#include "mflift/core.hpp"
#include "mflift/dynamics.hpp"
#include "mflift/testfn.hpp"

namespace mflift {

/// Mean and variance of a one-dimensional law at time t.
struct Moments {
  double mean = 0.0;
  double var = 0.0;
};

using MomentOracle = std::function<Moments(double t)>;

struct ScenarioSpec {
  std::string name;
  std::map<std::string, double> params;
  Coefficients coeffs;
  InitialLawSampler init;
  std::optional<MomentOracle> oracle;
  /// Lipschitz constant of b and sigma in x, uniform in (t, mu).
  std::optional<double> lipschitz;
  /// Moment oracle for an arbitrary initial mean and variance, when available.
  std::function<Moments(double t, double m0, double v0)> oracle_from;
};

/// Largest disagreement tolerated between an oracle and its ODE integration.
inline constexpr double kOracleCheckTolerance = 1e-8;

namespace detail {

/// RK4 on (m, v)' = f(m, v) up to `horizon`, compared with `oracle` at 20 checkpoints.
inline double oracle_ode_gap(const std::function<std::pair<double, double>(double, double)>& rhs,
                             const MomentOracle& oracle, double horizon) {
  constexpr int kSteps = 20000;
  const double h = horizon / kSteps;
  Moments start = oracle(0.0);
  double m = start.mean;
  double v = start.var;
  double gap = 0.0;
  for (int s = 1; s <= kSteps; ++s) {
    const auto [k1m, k1v] = rhs(m, v);
    const auto [k2m, k2v] = rhs(m + 0.5 * h * k1m, v + 0.5 * h * k1v);
    const auto [k3m, k3v] = rhs(m + 0.5 * h * k2m, v + 0.5 * h * k2v);
    const auto [k4m, k4v] = rhs(m + h * k3m, v + h * k3v);
    m += h / 6.0 * (k1m + 2 * k2m + 2 * k3m + k4m);
    v += h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v);
    if (s % (kSteps / 20) == 0) {
      const auto o = oracle(s * h);
      gap = std::max({gap, std::abs(o.mean - m), std::abs(o.var - v)});
    }
  }
  return gap;
}

inline Coefficients linear_mean_field(double decay, double coupling, double sigma, std::string name,
                                      std::optional<double> lipschitz) {
  CoefficientTraits tr{std::move(name), lipschitz, false, sigma == 0.0};
  return Coefficients(
      1, 1,
      [decay, coupling, sigma](double, const EmpiricalMeasure& mu) {
        const double mean = mu.mean()[0];
        return LocalCoefficients{
            [decay, coupling, mean](std::span<const double> x, std::span<double> b) {
              b[0] = -decay * x[0] + coupling * mean;
            },
            [sigma](std::span<const double>, std::span<double> s) { s[0] = sigma; }};
      },
      tr);
}

}  // namespace detail

/// dX = (-theta X + kappa E[X]) dt + sigma dB in d = 1.
[[nodiscard]] inline ScenarioSpec mean_field_ou(double theta, double kappa, double sigma, double init_mean,
                                                double init_var) {
  require(theta >= 0.0 && sigma >= 0.0, "mean_field_ou: theta and sigma must be >= 0");
  require(init_var >= 0.0, "mean_field_ou: init_var must be >= 0");
  ScenarioSpec s;
  s.name = "mean_field_ou";
  s.params = {{"theta", theta}, {"kappa", kappa}, {"sigma", sigma}, {"init_mean", init_mean}, {"init_var", init_var}};
  const double lip = theta + std::abs(kappa);
  s.lipschitz = lip;
  s.coeffs = detail::linear_mean_field(theta, kappa, sigma, "mean_field_ou", lip);
  s.init = InitialLawSampler::gaussian_1d(init_mean, init_var);
  s.oracle_from = [theta, kappa, sigma](double t, double m0, double v0) {
    Moments r;
    r.mean = m0 * std::exp((kappa - theta) * t);
    if (theta > 0.0) {
      const double e = std::exp(-2.0 * theta * t);
      r.var = v0 * e + sigma * sigma / (2.0 * theta) * (1.0 - e);
    } else {
      r.var = v0 + sigma * sigma * t;
    }
    return r;
  };
  s.oracle = [f = s.oracle_from, init_mean, init_var](double t) { return f(t, init_mean, init_var); };
  const double gap = detail::oracle_ode_gap(
      [theta, kappa, sigma](double m, double v) {
        return std::pair{(kappa - theta) * m, -2.0 * theta * v + sigma * sigma};
      },
      *s.oracle, 2.0);
  require(gap <= kOracleCheckTolerance, "mean_field_ou: oracle disagrees with its moment ODE by ", gap);
  return s;
}

/// dX = (-alpha X + beta E[X]) dt, no noise. Characteristics
/// x(t) = e^{-alpha t}(x0 - m0) + m0 e^{(beta - alpha) t}.
[[nodiscard]] inline ScenarioSpec zero_diffusion_transport(double alpha, double beta, double init_mean,
                                                           double init_var) {
  require(init_var >= 0.0, "zero_diffusion_transport: init_var must be >= 0");
  ScenarioSpec s;
  s.name = "zero_diffusion_transport";
  s.params = {{"alpha", alpha}, {"beta", beta}, {"init_mean", init_mean}, {"init_var", init_var}};
  const double lip = std::abs(alpha) + std::abs(beta);
  s.lipschitz = lip;
  s.coeffs = detail::linear_mean_field(alpha, beta, 0.0, "zero_diffusion_transport", lip);
  s.init = InitialLawSampler::gaussian_1d(init_mean, init_var);
  s.oracle_from = [alpha, beta](double t, double m0, double v0) {
    return Moments{m0 * std::exp((beta - alpha) * t), v0 * std::exp(-2.0 * alpha * t)};
  };
  s.oracle = [f = s.oracle_from, init_mean, init_var](double t) { return f(t, init_mean, init_var); };
  const double gap = detail::oracle_ode_gap(
      [alpha, beta](double m, double v) { return std::pair{(beta - alpha) * m, -2.0 * alpha * v}; },
      *s.oracle, 2.0);
  require(gap <= kOracleCheckTolerance, "zero_diffusion_transport: oracle disagrees with its moment ODE by ", gap);
  return s;
}

/// Exact characteristic flow of zero_diffusion_transport for a start point x0
/// in a law with mean m0.
[[nodiscard]] inline double transport_flow(double alpha, double beta, double x0, double m0, double t) {
  return std::exp(-alpha * t) * (x0 - m0) + m0 * std::exp((beta - alpha) * t);
}

/// b = 0, sigma = 0 in d = 1: every path is frozen, every residual vanishes.
[[nodiscard]] inline ScenarioSpec zero_coefficients(double init_mean = 0.0, double init_var = 1.0) {
  require(init_var >= 0.0, "zero_coefficients: init_var must be >= 0");
  ScenarioSpec s;
  s.name = "zero";
  s.params = {{"init_mean", init_mean}, {"init_var", init_var}};
  s.lipschitz = 0.0;
  s.coeffs = Coefficients(
      1, 1,
      [](double, const EmpiricalMeasure&) {
        return LocalCoefficients{[](std::span<const double>, std::span<double> b) { b[0] = 0.0; },
                                 [](std::span<const double>, std::span<double> sg) { sg[0] = 0.0; }};
      },
      CoefficientTraits{"zero", 0.0, true, true});
  s.init = InitialLawSampler::gaussian_1d(init_mean, init_var);
  s.oracle_from = [](double, double m0, double v0) { return Moments{m0, v0}; };
  s.oracle = [init_mean, init_var](double) { return Moments{init_mean, init_var}; };
  return s;
}

/// b(x) = sign(x) sqrt|x|, sigma = 0: no Lipschitz certificate, no oracle.
/// Started at exactly 0 the Euler scheme stays at 0 although the ODE has other solutions.
[[nodiscard]] inline ScenarioSpec nonsmooth_probe(double init_point = 0.0) {
  ScenarioSpec s;
  s.name = "nonsmooth_probe";
  s.params = {{"init_point", init_point}};
  CoefficientTraits tr{"nonsmooth_probe", std::nullopt, false, true};
  s.coeffs = Coefficients(
      1, 1,
      [](double, const EmpiricalMeasure&) {
        return LocalCoefficients{
            [](std::span<const double> x, std::span<double> b) {
              b[0] = (x[0] > 0.0 ? 1.0 : (x[0] < 0.0 ? -1.0 : 0.0)) * std::sqrt(std::abs(x[0]));
            },
            [](std::span<const double>, std::span<double> s) { s[0] = 0.0; }};
      },
      tr);
  s.init = InitialLawSampler::fixed(EmpiricalMeasure::dirac({init_point}));
  return s;
}

}  // namespace mflift

#pragma once

// Euler-Maruyama particle approximation of McKean-Vlasov SDEs: the law in the
// coefficients is replaced at each step by the empirical measure of all
// particles of the same system.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <boost/math/special_functions/erf.hpp>

#include "mflift/core.hpp"
#include "mflift/measures.hpp"
#include "mflift/rng.hpp"
#include "mflift/testfn.hpp"

namespace mflift {

struct SimConfig {
  std::size_t n_particles = 0;
  TimeGrid grid;
  std::uint64_t seed = 0;
  std::size_t brownian_dim = 1;

  void validate() const {
    require(n_particles >= 1, "SimConfig: n_particles must be >= 1");
    require(grid.size() >= 2, "SimConfig: grid needs at least 2 nodes");
    require(brownian_dim >= 1, "SimConfig: brownian_dim must be >= 1");
  }
};

/// |x| beyond this aborts a simulation.
inline constexpr double kBlowUpThreshold = 1e8;

struct GaussianLaw {
  Vector mean;
  Matrix covariance;
};

/// Initial data: a fixed weighted point cloud, used verbatim, or a Gaussian law
/// sampled with the simulation's counter-based stream.
class InitialLawSampler {
 public:
  InitialLawSampler() = default;

  [[nodiscard]] static InitialLawSampler fixed(EmpiricalMeasure mu) {
    InitialLawSampler s;
    s.law_ = std::move(mu);
    return s;
  }

  [[nodiscard]] static InitialLawSampler gaussian(Vector mean, Matrix covariance) {
    const std::size_t d = mean.size();
    require(d >= 1, "gaussian sampler: empty mean");
    require(covariance.rows() == d && covariance.cols() == d, "gaussian sampler: covariance must be ",
            d, " x ", d);
    InitialLawSampler s;
    s.law_ = GaussianLaw{std::move(mean), std::move(covariance)};
    s.chol_ = cholesky(std::get<GaussianLaw>(s.law_).covariance);
    return s;
  }

  /// One-dimensional N(mean, var).
  [[nodiscard]] static InitialLawSampler gaussian_1d(double mean, double var) {
    require(var >= 0.0, "gaussian sampler: variance must be >= 0");
    return gaussian({mean}, Matrix(1, 1, var));
  }

  [[nodiscard]] bool is_fixed() const { return std::holds_alternative<EmpiricalMeasure>(law_); }
  [[nodiscard]] const EmpiricalMeasure& fixed_measure() const { return std::get<EmpiricalMeasure>(law_); }
  [[nodiscard]] const GaussianLaw& gaussian_law() const { return std::get<GaussianLaw>(law_); }

  [[nodiscard]] std::size_t dim() const {
    return is_fixed() ? fixed_measure().dim() : gaussian_law().mean.size();
  }

  /// Initial states [particle][coord] and weights. Fixed laws ignore `n`
  /// unless it is nonzero and disagrees with the support size.
  void draw(std::size_t n, const rng::GaussianField& field, std::vector<double>& states,
            std::vector<double>& weights) const {
    if (is_fixed()) {
      const auto& mu = fixed_measure();
      require(n == 0 || n == mu.size(), "fixed initial law has ", mu.size(),
              " atoms but the simulation asks for ", n, " particles");
      states.assign(mu.coords().begin(), mu.coords().end());
      weights.assign(mu.weights().begin(), mu.weights().end());
      return;
    }
    const auto& g = gaussian_law();
    const std::size_t d = g.mean.size();
    require(n >= 1, "gaussian initial law needs n_particles >= 1");
    states.resize(n * d);
    Vector z(d);
    for (std::size_t i = 0; i < n; ++i) {
      field.fill(static_cast<std::uint32_t>(i), rng::GaussianField::kInitial, z);
      for (std::size_t r = 0; r < d; ++r) {
        double s = g.mean[r];
        for (std::size_t c = 0; c <= r; ++c) s += chol_(r, c) * z[c];
        states[i * d + r] = s;
      }
    }
    weights = uniform_weights(n);
  }

 private:
  // Lower-triangular factor; tolerates positive semidefinite input.
  static Matrix cholesky(const Matrix& a) {
    const std::size_t d = a.rows();
    Matrix l(d, d);
    for (std::size_t j = 0; j < d; ++j) {
      double s = a(j, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(j, k) * l(j, k);
      require(s >= -1e-12 * std::max(1.0, a(j, j)), "gaussian sampler: covariance is not PSD");
      l(j, j) = std::sqrt(std::max(0.0, s));
      for (std::size_t i = j + 1; i < d; ++i) {
        double t = a(i, j);
        for (std::size_t k = 0; k < j; ++k) t -= l(i, k) * l(j, k);
        l(i, j) = l(j, j) > 0.0 ? t / l(j, j) : 0.0;
      }
    }
    return l;
  }

  std::variant<EmpiricalMeasure, GaussianLaw> law_;
  Matrix chol_;
};

/// n deterministic atoms at the mid-quantiles of N(mean, var), equally weighted.
[[nodiscard]] inline EmpiricalMeasure gaussian_quantile_measure(double mean, double var, std::size_t n) {
  require(n >= 1 && var >= 0.0, "gaussian_quantile_measure: bad parameters");
  std::vector<double> x(n);
  const double sd = std::sqrt(var);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    x[i] = mean + sd * std::sqrt(2.0) * boost::math::erf_inv(2.0 * p - 1.0);
  }
  return EmpiricalMeasure::uniform(1, std::move(x));
}

/// Simulates one interacting particle system. `member` selects the noise stream,
/// so member i of an ensemble can be reproduced on its own.
[[nodiscard]] inline PathMeasure simulate_mckv(const Coefficients& coeffs, const InitialLawSampler& init,
                                               const SimConfig& cfg, std::uint32_t member = 0) {
  cfg.validate();
  const std::size_t d = coeffs.dim();
  const std::size_t m = coeffs.noise_dim();
  require(init.dim() == d, "simulate_mckv: initial law lives in R^", init.dim(), ", coefficients in R^", d);
  require(cfg.brownian_dim == m, "simulate_mckv: brownian_dim ", cfg.brownian_dim,
          " does not match the coefficients' noise dimension ", m);
  const rng::GaussianField field(cfg.seed, member);
  std::vector<double> x;
  std::vector<double> weights;
  init.draw(init.is_fixed() ? 0 : cfg.n_particles, field, x, weights);
  const std::size_t n = weights.size();
  const std::size_t n_nodes = cfg.grid.size();

  std::vector<double> states(n_nodes * n * d);
  std::copy(x.begin(), x.end(), states.begin());
  Vector b(d);
  Vector sig(d * m);
  Vector z(m);
  for (std::size_t k = 0; k + 1 < n_nodes; ++k) {
    const double t = cfg.grid[k];
    const double dt = cfg.grid.step(k);
    const double sqdt = std::sqrt(dt);
    const std::span<const double> cur(states.data() + k * n * d, n * d);
    const EmpiricalMeasure mu(d, std::vector<double>(cur.begin(), cur.end()), weights);
    const auto local = coeffs.freeze(t, mu);
    double* next = states.data() + (k + 1) * n * d;
    for (std::size_t i = 0; i < n; ++i) {
      const auto xi = cur.subspan(i * d, d);
      local.drift(xi, b);
      local.diffusion(xi, sig);
      field.fill(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(k), z);
      double r2 = 0.0;
      for (std::size_t r = 0; r < d; ++r) {
        double noise = 0.0;
        for (std::size_t c = 0; c < m; ++c) noise += sig[r * m + c] * z[c];
        const double v = xi[r] + b[r] * dt + noise * sqdt;
        next[i * d + r] = v;
        r2 += v * v;
      }
      if (!(std::sqrt(r2) <= kBlowUpThreshold)) {
        fail("simulate_mckv: blow-up of particle ", i, " at step ", k + 1, " (t = ", cfg.grid[k + 1],
             ", |x| = ", std::sqrt(r2), ")");
      }
    }
  }
  return PathMeasure(cfg.grid, d, std::move(states), std::move(weights));
}

/// Seeded family of Gaussian initial laws N(m I-direction, v I) with m, v uniform in ranges.
struct GaussianLawFamily {
  std::size_t dim = 1;
  double mean_lo = 0.0;
  double mean_hi = 0.0;
  double var_lo = 1.0;
  double var_hi = 1.0;

  /// Law i of the family; depends only on (seed, i).
  [[nodiscard]] InitialLawSampler law(std::uint64_t seed, std::size_t i) const {
    require(var_lo >= 0.0 && var_hi >= var_lo && mean_hi >= mean_lo, "GaussianLawFamily: bad ranges");
    rng::Stream rs(seed, 0x1A40000u + static_cast<std::uint32_t>(i));
    Vector mean(dim);
    for (auto& v : mean) v = rs.uniform(mean_lo, mean_hi);
    const double var = rs.uniform(var_lo, var_hi);
    Matrix cov(dim, dim);
    for (std::size_t r = 0; r < dim; ++r) cov(r, r) = var;
    return InitialLawSampler::gaussian(std::move(mean), std::move(cov));
  }
};

/// Calls `sink(i, PathMeasure)` for each member in index order, holding one
/// member in memory at a time.
inline void for_each_member(const Coefficients& coeffs, const GaussianLawFamily& family,
                            const SimConfig& cfg, std::size_t n_members,
                            const std::function<void(std::size_t, PathMeasure&&)>& sink) {
  require(n_members >= 1, "ensemble: n_members must be >= 1");
  for (std::size_t i = 0; i < n_members; ++i) {
    sink(i, simulate_mckv(coeffs, family.law(cfg.seed, i), cfg, static_cast<std::uint32_t>(i)));
  }
}

/// One simulated member per atom of M0, weights inherited; atoms are used verbatim
/// as initial particle clouds.
[[nodiscard]] inline PathMeasureEnsemble simulate_ensemble(const Coefficients& coeffs, const RandomMeasure& M0,
                                                           const SimConfig& per_law_cfg) {
  std::vector<PathMeasure> members;
  members.reserve(M0.size());
  for (std::size_t i = 0; i < M0.size(); ++i) {
    members.push_back(simulate_mckv(coeffs, InitialLawSampler::fixed(M0.atom(i)), per_law_cfg,
                                    static_cast<std::uint32_t>(i)));
  }
  return PathMeasureEnsemble(std::move(members), std::vector<double>(M0.weights().begin(), M0.weights().end()));
}

/// n_members laws drawn from `family`, equally weighted. The master seed keys both
/// the law parameters and the per-member noise streams.
[[nodiscard]] inline PathMeasureEnsemble simulate_ensemble(const Coefficients& coeffs,
                                                           const GaussianLawFamily& family,
                                                           const SimConfig& per_law_cfg,
                                                           std::size_t n_members, std::uint64_t seed) {
  SimConfig cfg = per_law_cfg;
  cfg.seed = seed;
  std::vector<PathMeasure> members;
  members.reserve(n_members);
  for_each_member(coeffs, family, cfg, n_members,
                  [&](std::size_t, PathMeasure&& p) { members.push_back(std::move(p)); });
  return PathMeasureEnsemble(std::move(members), uniform_weights(n_members));
}

// ---------------------------------------------------------------------------
// Integrability functional
//   int_0^T int int ( |b|/(1+|x|) + |a|/(1+|x|^2) ) dmu_t(x) dP(mu) dt

namespace detail {

[[nodiscard]] inline double integrability_density(const Coefficients& coeffs, double t,
                                                  const EmpiricalMeasure& mu) {
  const auto f = evaluate_field(coeffs, t, mu);
  double s = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double r = norm2(mu.point(i));
    const double v = norm2(f.b(i)) / (1.0 + r) + norm2(f.a(i)) / (1.0 + r * r);
    s += mu.weight(i) * v;
  }
  require(std::isfinite(s), "integrability functional: non-finite integrand at t = ", t);
  return s;
}

template <typename NodeValue>
[[nodiscard]] double integrate_over_grid(const TimeGrid& grid, NodeValue&& value_at) {
  std::vector<double> vals(grid.size());
  for (std::size_t k = 0; k < grid.size(); ++k) vals[k] = value_at(k);
  return trapezoid(grid.nodes(), vals);
}

}  // namespace detail

[[nodiscard]] inline double integrability_functional(const MeasurePath& curve, const Coefficients& coeffs) {
  return detail::integrate_over_grid(curve.grid(), [&](std::size_t k) {
    return detail::integrability_density(coeffs, curve.grid()[k], curve.at(k));
  });
}

[[nodiscard]] inline double integrability_functional(const PathMeasure& lambda, const Coefficients& coeffs) {
  return detail::integrate_over_grid(lambda.grid(), [&](std::size_t k) {
    return detail::integrability_density(coeffs, lambda.grid()[k], lambda.marginal_at(k));
  });
}

[[nodiscard]] inline double integrability_functional(const RandomMeasureCurve& M, const Coefficients& coeffs) {
  return detail::integrate_over_grid(M.grid(), [&](std::size_t k) {
    const auto& R = M.at(k);
    double s = 0.0;
    for (std::size_t j = 0; j < R.size(); ++j) {
      s += R.weight(j) * detail::integrability_density(coeffs, M.grid()[k], R.atom(j));
    }
    return s;
  });
}

[[nodiscard]] inline double integrability_functional(const MeasurePathEnsemble& Lambda,
                                                     const Coefficients& coeffs) {
  return detail::integrate_over_grid(Lambda.grid(), [&](std::size_t k) {
    double s = 0.0;
    for (std::size_t j = 0; j < Lambda.size(); ++j) {
      s += Lambda.weight(j) * detail::integrability_density(coeffs, Lambda.grid()[k], Lambda.member(j).at(k));
    }
    return s;
  });
}

[[nodiscard]] inline double integrability_functional(const PathMeasureEnsemble& frakL,
                                                     const Coefficients& coeffs) {
  return detail::integrate_over_grid(frakL.grid(), [&](std::size_t k) {
    double s = 0.0;
    for (std::size_t j = 0; j < frakL.size(); ++j) {
      s += frakL.weight(j) * detail::integrability_density(coeffs, frakL.grid()[k], frakL.member(j).marginal_at(k));
    }
    return s;
  });
}

}  // namespace mflift

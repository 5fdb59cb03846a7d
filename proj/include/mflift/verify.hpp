#pragma once

// Residual and statistical checks: weak KFP residuals, the random-measure
// equation, martingale increments, quadratic variation, end-to-end hierarchy
// consistency and the uniqueness probe.
//
// Time integrals use the composite trapezoid rule on the data's grid. Terms
// carrying xi' use the exact cell average (xi(t_{k+1}) - xi(t_k)) / dt in place
// of point values of xi', so that stationary data give residuals at round-off.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mflift/core.hpp"
#include "mflift/dynamics.hpp"
#include "mflift/measures.hpp"
#include "mflift/metrics.hpp"
#include "mflift/rng.hpp"
#include "mflift/testfn.hpp"

namespace mflift {

struct ResidualReport {
  std::string kind;
  std::string test_id;
  /// |lhs + rhs| for weak-form residuals; mean relative pathwise gap for qv.
  double value = 0.0;
  double normalizer = 1.0;
  double lhs = 0.0;
  double rhs = 0.0;
  /// qv only: |mean realized - mean predicted| / mean predicted.
  double aggregate = std::numeric_limits<double>::quiet_NaN();

  [[nodiscard]] double relative() const { return value / normalizer; }
};

struct KfpTest {
  std::string id;
  TimeTestFunction xi;
  TestFunction phi;
};

struct RmTest {
  std::string id;
  TimeTestFunction xi;
  CylinderFunction F;
};

namespace detail {

/// <phi, mu_k> and <L phi, mu_k> at every node, for a list of test functions.
struct WeakSeries {
  std::vector<double> mass;
  std::vector<double> gen;
};

template <typename NodeMeasure>
std::vector<WeakSeries> weak_series(const TimeGrid& grid, NodeMeasure&& at, const Coefficients& coeffs,
                                    const std::vector<const TestFunction*>& phis) {
  std::vector<WeakSeries> out(phis.size());
  for (auto& s : out) {
    s.mass.resize(grid.size());
    s.gen.resize(grid.size());
  }
  for (std::size_t k = 0; k < grid.size(); ++k) {
    decltype(auto) mu = at(k);
    require(mu.dim() == coeffs.dim(), "residual: measure lives in R^", mu.dim(), ", coefficients in R^",
            coeffs.dim());
    const auto field = evaluate_field(coeffs, grid[k], mu);
    for (std::size_t p = 0; p < phis.size(); ++p) {
      require(phis[p]->dim() == mu.dim(), "residual: test function dimension mismatch");
      double m = 0.0;
      double g = 0.0;
      for (std::size_t i = 0; i < mu.size(); ++i) {
        double v = 0.0;
        const double l = generator(*phis[p], mu.point(i), field.b(i), field.a(i), &v);
        m += mu.weight(i) * v;
        g += mu.weight(i) * l;
      }
      require(std::isfinite(m) && std::isfinite(g), "residual: non-finite value at t = ", grid[k]);
      out[p].mass[k] = m;
      out[p].gen[k] = g;
    }
  }
  return out;
}

/// (int xi' f dt, int xi g dt) on the grid.
inline std::pair<double, double> weak_sides(const TimeGrid& grid, const TimeTestFunction& xi,
                                            std::span<const double> f, std::span<const double> g) {
  // sum_k (xi_{k+1} - xi_k)(f_k + f_{k+1}) / 2, summed by parts so that a
  // constant f gives exactly zero when xi vanishes at both ends
  const std::size_t n = grid.size() - 1;
  std::vector<double> xs(grid.size());
  for (std::size_t k = 0; k <= n; ++k) xs[k] = xi(grid[k]);
  double lhs = 0.5 * (xs[n] * (f[n] + f[n - 1]) - xs[0] * (f[0] + f[1]));
  double rhs = 0.0;
  for (std::size_t k = 1; k < n; ++k) lhs -= 0.5 * xs[k] * (f[k + 1] - f[k - 1]);
  for (std::size_t k = 0; k < n; ++k) rhs += 0.5 * grid.step(k) * (xs[k] * g[k] + xs[k + 1] * g[k + 1]);
  return {lhs, rhs};
}

inline bool same_bump(const TestFunction& a, const TestFunction& b) {
  return a.is_bump() && b.is_bump() && a.amplitude() == b.amplitude() && a.shape() == b.shape();
}

inline ResidualReport weak_report(std::string kind, std::string id, double lhs, double rhs) {
  ResidualReport r;
  r.kind = std::move(kind);
  r.test_id = std::move(id);
  r.lhs = lhs;
  r.rhs = rhs;
  r.value = std::abs(lhs + rhs);
  r.normalizer = std::abs(lhs) + std::abs(rhs) + 1.0;
  return r;
}

template <typename NodeMeasure>
std::vector<ResidualReport> kfp_residuals_impl(const TimeGrid& grid, NodeMeasure&& at,
                                               const Coefficients& coeffs, const std::vector<KfpTest>& tests) {
  std::vector<const TestFunction*> phis;
  for (const auto& t : tests) phis.push_back(&t.phi);
  const auto series = weak_series(grid, at, coeffs, phis);
  std::vector<ResidualReport> out;
  out.reserve(tests.size());
  for (std::size_t p = 0; p < tests.size(); ++p) {
    const auto [lhs, rhs] = weak_sides(grid, tests[p].xi, series[p].mass, series[p].gen);
    out.push_back(weak_report("kfp", tests[p].id, lhs, rhs));
  }
  return out;
}

}  // namespace detail

/// Weak KFP residual for each (xi, phi) test on one measure curve.
[[nodiscard]] inline std::vector<ResidualReport> kfp_residuals(const MeasurePath& curve, const Coefficients& coeffs,
                                                               const std::vector<KfpTest>& tests) {
  return detail::kfp_residuals_impl(
      curve.grid(), [&](std::size_t k) -> const EmpiricalMeasure& { return curve.at(k); }, coeffs, tests);
}

/// Same as above on E(lambda), without materialising the curve.
[[nodiscard]] inline std::vector<ResidualReport> kfp_residuals(const PathMeasure& lambda, const Coefficients& coeffs,
                                                               const std::vector<KfpTest>& tests) {
  return detail::kfp_residuals_impl(
      lambda.grid(), [&](std::size_t k) { return lambda.marginal_at(k); }, coeffs, tests);
}

/// |int xi' <phi, mu_t> dt + int xi <L phi, mu_t> dt|.
[[nodiscard]] inline ResidualReport kfp_residual(const MeasurePath& curve, const Coefficients& coeffs,
                                                 const TimeTestFunction& xi, const TestFunction& phi) {
  return kfp_residuals(curve, coeffs, {KfpTest{"kfp", xi, phi}}).front();
}

/// Residual of the random-measure equation for each (xi, F) test:
/// |int xi' E_M[F] dt + int xi E_M[int K F dmu] dt|.
[[nodiscard]] inline std::vector<ResidualReport> rm_equation_residuals(const RandomMeasureCurve& M,
                                                                       const Coefficients& coeffs,
                                                                       const std::vector<RmTest>& tests) {
  const TimeGrid& grid = M.grid();
  // distinct inner functions of all tests in one list; slot[p][i] indexes it
  std::vector<const TestFunction*> phis;
  std::vector<std::vector<std::size_t>> slot(tests.size());
  for (std::size_t p = 0; p < tests.size(); ++p) {
    for (const auto& f : tests[p].F.inner()) {
      std::size_t q = 0;
      while (q < phis.size() && !(phis[q] == &f || detail::same_bump(*phis[q], f))) ++q;
      if (q == phis.size()) phis.push_back(&f);
      slot[p].push_back(q);
    }
  }
  std::vector<std::vector<double>> f_val(tests.size(), std::vector<double>(grid.size(), 0.0));
  std::vector<std::vector<double>> kf_val(tests.size(), std::vector<double>(grid.size(), 0.0));
  const std::size_t n_atoms = M.at(0).size();
  for (std::size_t k = 1; k < grid.size(); ++k) {
    require(M.at(k).size() == n_atoms, "rm_equation_residual: atom count changes along the curve");
  }
  for (std::size_t j = 0; j < n_atoms; ++j) {
    const auto series = detail::weak_series(
        grid, [&](std::size_t k) -> const EmpiricalMeasure& { return M.at(k).atom(j); }, coeffs, phis);
    for (std::size_t k = 0; k < grid.size(); ++k) {
      const double w = M.at(k).weight(j);
      for (std::size_t p = 0; p < tests.size(); ++p) {
        const auto& F = tests[p].F;
        Vector y(F.arity());
        for (std::size_t i = 0; i < F.arity(); ++i) y[i] = series[slot[p][i]].mass[k];
        const Vector dpsi = F.outer().gradient(y);
        double kf = 0.0;
        for (std::size_t i = 0; i < F.arity(); ++i) kf += dpsi[i] * series[slot[p][i]].gen[k];
        f_val[p][k] += w * F.outer()(y);
        kf_val[p][k] += w * kf;
      }
    }
  }
  std::vector<ResidualReport> out;
  out.reserve(tests.size());
  for (std::size_t p = 0; p < tests.size(); ++p) {
    const auto [lhs, rhs] = detail::weak_sides(grid, tests[p].xi, f_val[p], kf_val[p]);
    out.push_back(detail::weak_report("rm", tests[p].id, lhs, rhs));
  }
  return out;
}

[[nodiscard]] inline ResidualReport rm_equation_residual(const RandomMeasureCurve& M, const Coefficients& coeffs,
                                                         const TimeTestFunction& xi, const CylinderFunction& F) {
  return rm_equation_residuals(M, coeffs, {RmTest{"rm", xi, F}}).front();
}

// ---------------------------------------------------------------------------
// Martingale increments

/// 1 / (1 + exp(-scale (direction . x(node) - center))).
struct LogisticFactor {
  std::size_t node = 0;
  Vector direction;
  double center = 0.0;
  double scale = 1.0;
};

/// H(gamma) = product of logistic factors of path states; values in [0, 1].
/// An empty product is H = 1.
struct PathFunctional {
  std::vector<LogisticFactor> factors;

  [[nodiscard]] std::size_t latest_node() const {
    std::size_t m = 0;
    for (const auto& f : factors) m = std::max(m, f.node);
    return m;
  }

  [[nodiscard]] double operator()(const PathMeasure& lambda, std::size_t path) const {
    double h = 1.0;
    for (const auto& f : factors) {
      const auto x = lambda.state(f.node, path);
      require(f.direction.size() == x.size(), "PathFunctional: direction has wrong dimension");
      h *= 1.0 / (1.0 + std::exp(-f.scale * (dot(f.direction, x) - f.center)));
    }
    return h;
  }

  [[nodiscard]] std::string describe() const {
    if (factors.empty()) return "1";
    std::string s;
    for (const auto& f : factors) {
      if (!s.empty()) s += "*";
      s += detail::concat("logistic(node=", f.node, ",c=", f.center, ",k=", f.scale, ")");
    }
    return s;
  }
};

struct MartingaleConfig {
  std::string id;
  TimeTestFunction xi;
  TestFunction phi;
  std::size_t s_node = 0;
  std::size_t t_node = 1;
  PathFunctional H;
};

/// Absolute slack added to 3 stderr, so exactly vanishing increments with
/// round-off noise still pass.
inline constexpr double kMartingaleFloor = 1e-12;

struct MartingaleTestReport {
  std::string id;
  double estimate = 0.0;
  double stderr_ = 0.0;
  std::size_t n_samples = 0;
  double s = 0.0;
  double t = 0.0;
  std::string h_descriptor;

  [[nodiscard]] bool passed(double n_sigma = 3.0) const {
    return std::abs(estimate) <= n_sigma * stderr_ + kMartingaleFloor;
  }
};

/// Weighted mean and standard error of H (X_t - X_s) over the paths of lambda,
/// for every config; one sweep over the grid serves all configs.
[[nodiscard]] inline std::vector<MartingaleTestReport> martingale_battery(
    const PathMeasure& lambda, const Coefficients& coeffs, const std::vector<MartingaleConfig>& configs) {
  const TimeGrid& grid = lambda.grid();
  const std::size_t n = lambda.size();
  for (const auto& c : configs) {
    require(c.s_node < c.t_node, "martingale test ", c.id, ": need s < t (got nodes ", c.s_node, ", ",
            c.t_node, ")");
    require(c.t_node < grid.size(), "martingale test ", c.id, ": t beyond the grid");
    require(c.H.latest_node() <= c.s_node, "martingale test ", c.id, ": H reads node ", c.H.latest_node(),
            " after s (node ", c.s_node, ")");
    require(c.phi.dim() == lambda.dim(), "martingale test ", c.id, ": dimension mismatch");
  }
  std::size_t first = grid.size();
  std::size_t last = 0;
  for (const auto& c : configs) {
    first = std::min(first, c.s_node);
    last = std::max(last, c.t_node);
  }
  std::vector<std::vector<double>> incr(configs.size(), std::vector<double>(n, 0.0));
  for (std::size_t k = first; k <= last && !configs.empty(); ++k) {
    const auto mu = lambda.marginal_at(k);
    const auto field = evaluate_field(coeffs, grid[k], mu);
    const double dt_prev = k > 0 ? grid.step(k - 1) : 0.0;
    const double dt_next = k + 1 < grid.size() ? grid.step(k) : 0.0;
    for (std::size_t c = 0; c < configs.size(); ++c) {
      const auto& cfg = configs[c];
      if (k < cfg.s_node || k > cfg.t_node) continue;
      const double xk = cfg.xi(grid[k]);
      double a = 0.0;   // weight of phi(x_k) in int xi' phi
      double cl = 0.0;  // weight of L phi(x_k) in int xi L phi
      if (k > cfg.s_node) {
        a += 0.5 * (xk - cfg.xi(grid[k - 1]));
        cl += 0.5 * dt_prev * xk;
      }
      if (k < cfg.t_node) {
        a += 0.5 * (cfg.xi(grid[k + 1]) - xk);
        cl += 0.5 * dt_next * xk;
      }
      double endpoint = 0.0;
      if (k == cfg.t_node) endpoint = xk;
      if (k == cfg.s_node) endpoint = -xk;
      auto& inc = incr[c];
      for (std::size_t i = 0; i < n; ++i) {
        double v = 0.0;
        const double l = generator(cfg.phi, mu.point(i), field.b(i), field.a(i), &v);
        inc[i] += endpoint * v - a * v - cl * l;
      }
    }
  }
  std::vector<MartingaleTestReport> out;
  out.reserve(configs.size());
  const auto w = lambda.weights();
  double w2 = 0.0;
  for (double x : w) w2 += x * x;
  for (std::size_t c = 0; c < configs.size(); ++c) {
    const auto& cfg = configs[c];
    std::vector<double> y(n);
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = cfg.H(lambda, i) * incr[c][i];
      mean += w[i] * y[i];
    }
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += w[i] * w[i] * (y[i] - mean) * (y[i] - mean);
    // unbiased for equal weights: s^2 / n
    const double correction = w2 < 1.0 ? 1.0 / (1.0 - w2) : 0.0;
    MartingaleTestReport r;
    r.id = cfg.id;
    r.estimate = mean;
    r.stderr_ = std::sqrt(var * correction);
    r.n_samples = n;
    r.s = grid[cfg.s_node];
    r.t = grid[cfg.t_node];
    r.h_descriptor = cfg.H.describe();
    out.push_back(std::move(r));
  }
  return out;
}

[[nodiscard]] inline MartingaleTestReport martingale_increment(const PathMeasure& lambda, const Coefficients& coeffs,
                                                               const TimeTestFunction& xi, const TestFunction& phi,
                                                               double s, double t, const PathFunctional& H) {
  require(s < t, "martingale_increment: need s < t (got ", s, ", ", t, ")");
  MartingaleConfig c{"martingale", xi, phi, lambda.grid().index_of(s), lambda.grid().index_of(t), H};
  return martingale_battery(lambda, coeffs, {c}).front();
}

// ---------------------------------------------------------------------------
// Quadratic variation

/// For each f: pathwise |sum_k (dX^f_k)^2 - int grad f^T a grad f dt|, averaged
/// over paths and divided by the path-averaged prediction.
[[nodiscard]] inline std::vector<ResidualReport> qv_gaps(const PathMeasure& lambda, const Coefficients& coeffs,
                                                         const std::vector<TestFunction>& fs,
                                                         const std::vector<std::string>& ids = {}) {
  const TimeGrid& grid = lambda.grid();
  const std::size_t n = lambda.size();
  const std::size_t d = lambda.dim();
  const std::size_t nf = fs.size();
  std::vector<double> prev_f(nf * n), prev_l(nf * n), prev_q(nf * n);
  std::vector<double> realized(nf * n, 0.0), predicted(nf * n, 0.0);
  Vector g(d);
  Matrix h(d, d);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const auto mu = lambda.marginal_at(k);
    const auto field = evaluate_field(coeffs, grid[k], mu);
    const double dt = k > 0 ? grid.step(k - 1) : 0.0;
    for (std::size_t p = 0; p < nf; ++p) {
      require(fs[p].dim() == d, "qv_gap: dimension mismatch");
      for (std::size_t i = 0; i < n; ++i) {
        const auto x = mu.point(i);
        const double v = fs[p].evaluate(x, g, h.data());
        double l = 0.0;
        double q = 0.0;
        const auto b = field.b(i);
        const auto a = field.a(i);
        for (std::size_t r = 0; r < d; ++r) {
          l += b[r] * g[r];
          for (std::size_t c = 0; c < d; ++c) {
            l += 0.5 * a[r * d + c] * h(r, c);
            q += g[r] * a[r * d + c] * g[c];
          }
        }
        const std::size_t idx = p * n + i;
        if (k > 0) {
          const double dx = v - prev_f[idx] - 0.5 * dt * (prev_l[idx] + l);
          realized[idx] += dx * dx;
          predicted[idx] += 0.5 * dt * (prev_q[idx] + q);
        }
        prev_f[idx] = v;
        prev_l[idx] = l;
        prev_q[idx] = q;
      }
    }
  }
  const auto w = lambda.weights();
  std::vector<ResidualReport> out;
  for (std::size_t p = 0; p < nf; ++p) {
    double gap = 0.0;
    double pred = 0.0;
    double real = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t idx = p * n + i;
      gap += w[i] * std::abs(realized[idx] - predicted[idx]);
      pred += w[i] * predicted[idx];
      real += w[i] * realized[idx];
    }
    ResidualReport r;
    r.kind = "qv";
    r.test_id = p < ids.size() ? ids[p] : detail::concat("qv", p);
    r.lhs = real;
    r.rhs = pred;
    r.normalizer = pred;
    r.value = pred > 0.0 ? gap / pred : gap;
    r.aggregate = pred > 0.0 ? std::abs(real - pred) / pred : std::abs(real - pred);
    out.push_back(std::move(r));
  }
  return out;
}

[[nodiscard]] inline ResidualReport qv_gap(const PathMeasure& lambda, const Coefficients& coeffs,
                                           const TestFunction& f) {
  return qv_gaps(lambda, coeffs, {f}).front();
}

// ---------------------------------------------------------------------------
// Test batteries

struct BatterySpec {
  std::size_t dim = 1;
  std::size_t n_xi = 5;
  std::size_t n_phi = 20;
  std::size_t n_F = 20;
  std::size_t n_martingale = 50;
  std::size_t n_qv = 10;
  std::uint64_t seed = 0;
  /// Range of probe centres (each coordinate) and of logistic thresholds in H.
  double center_lo = -1.0;
  double center_hi = 2.0;
  double radius_lo = 1.0;
  double radius_hi = 3.0;
};

struct Battery {
  std::vector<KfpTest> kfp;
  std::vector<RmTest> rm;
  std::vector<MartingaleConfig> martingale;
  std::vector<TestFunction> qv;
  std::vector<std::string> qv_ids;
};

/// Seeded test battery on a grid: kfp pairs (xi_{j mod n_xi}, phi_j), cylinder
/// tests with arity 1..3, martingale configs with random s < t and H reading up
/// to 3 nodes <= s, and qv bumps.
[[nodiscard]] inline Battery build_battery(const BatterySpec& spec, const TimeGrid& grid) {
  require(spec.n_xi >= 1, "battery: n_xi must be >= 1");
  require(spec.n_phi >= 1, "battery: n_phi must be >= 1");
  const double T = grid.horizon();
  const auto xis = build_time_family(T, spec.n_xi, rng::derive_seed(spec.seed, 1));
  const auto phis = build_probe_family(spec.dim, spec.n_phi, rng::derive_seed(spec.seed, 2), spec.center_lo,
                                       spec.center_hi, spec.radius_lo, spec.radius_hi);
  Battery b;
  for (std::size_t j = 0; j < spec.n_phi; ++j) {
    b.kfp.push_back({detail::concat("kfp", j < 10 ? "0" : "", j), xis[j % xis.size()], phis[j]});
  }
  const auto outers = build_outer_family(2 * std::max<std::size_t>(spec.n_F, 1), 3, rng::derive_seed(spec.seed, 3));
  rng::Stream rs(rng::derive_seed(spec.seed, 4), 0xBA77u);
  for (std::size_t j = 0; j < spec.n_F; ++j) {
    const auto& psi = outers[2 * j];  // h = 2 admissible variant
    std::vector<TestFunction> inner;
    for (std::size_t q = 0; q < psi.arity(); ++q) inner.push_back(phis[rs.index(phis.size())]);
    b.rm.push_back({detail::concat("rm", j < 10 ? "0" : "", j), xis[j % xis.size()], CylinderFunction(inner, psi)});
  }
  require(grid.size() >= 3 || spec.n_martingale == 0, "battery: martingale tests need at least 3 nodes");
  const std::size_t last = grid.size() - 1;
  for (std::size_t j = 0; j < spec.n_martingale; ++j) {
    MartingaleConfig c{detail::concat("mart", j < 10 ? "0" : "", j), xis[rs.index(xis.size())],
                       phis[rs.index(phis.size())], 0, 1, {}};
    std::size_t s = rs.index(last);
    std::size_t t = rs.index(last);
    if (s > t) std::swap(s, t);
    c.s_node = s;
    c.t_node = t + 1;
    const std::size_t n_factors = rs.index(4);
    for (std::size_t q = 0; q < n_factors; ++q) {
      LogisticFactor f;
      f.node = rs.index(c.s_node + 1);
      const double sign = rs.uniform() < 0.5 ? -1.0 : 1.0;
      f.direction.assign(spec.dim, 0.0);
      f.direction[rs.index(spec.dim)] = sign;
      f.center = sign * rs.uniform(spec.center_lo, spec.center_hi);
      f.scale = rs.uniform(0.5, 3.0);
      c.H.factors.push_back(std::move(f));
    }
    b.martingale.push_back(std::move(c));
  }
  b.qv = build_probe_family(spec.dim, spec.n_qv, rng::derive_seed(spec.seed, 5), spec.center_lo, spec.center_hi,
                            spec.radius_lo, spec.radius_hi);
  for (std::size_t j = 0; j < spec.n_qv; ++j) b.qv_ids.push_back(detail::concat("qv", j < 10 ? "0" : "", j));
  return b;
}

// ---------------------------------------------------------------------------
// Hierarchy check

struct Quantiles {
  std::size_t count = 0;
  double median = 0.0;
  double q90 = 0.0;
  double max = 0.0;
};

[[nodiscard]] inline Quantiles summarize(const std::vector<double>& v) {
  if (v.empty()) return {};
  return {v.size(), mflift::median(v), quantile(v, 0.9), *std::max_element(v.begin(), v.end())};
}

struct MemberResidual {
  std::size_t member = 0;
  ResidualReport report;
};

struct MemberMartingale {
  std::size_t member = 0;
  MartingaleTestReport report;
};

struct HierarchyReport {
  std::size_t n_members = 0;
  std::size_t n_nodes = 0;
  std::size_t identity_checks = 0;
  bool identities_exact = false;

  std::vector<MemberResidual> kfp_rows;
  std::vector<ResidualReport> rm_rows;
  std::vector<MemberMartingale> martingale_rows;

  Quantiles kfp;
  Quantiles kfp_relative;
  Quantiles rm;
  Quantiles rm_relative;
  double martingale_pass_rate = 1.0;
  double martingale_min_member_pass_rate = 1.0;

  double integrability_path_ensemble = 0.0;
  double integrability_curve_ensemble = 0.0;
  double integrability_random_curve = 0.0;
};

/// Builds Lambda = E# frakL and M = (e_t)# Lambda, checks (E_t)# frakL = M_t atom
/// for atom at every node (failure throws), then runs the battery at every level.
[[nodiscard]] inline HierarchyReport hierarchy_check(const PathMeasureEnsemble& frakL, const Coefficients& coeffs,
                                                     const Battery& battery) {
  HierarchyReport rep;
  rep.n_members = frakL.size();
  rep.n_nodes = frakL.grid().size();
  const MeasurePathEnsemble Lambda = ensemble_project(frakL);
  const RandomMeasureCurve M = curve_from_ensemble(Lambda);
  for (std::size_t k = 0; k < rep.n_nodes; ++k) {
    const RandomMeasure direct = ensemble_marginal_at(frakL, k);
    if (!(direct == M.at(k)) || !(direct == curve_eval_at(Lambda, k))) {
      fail("hierarchy: (E_t)# frakL and (e_t)# (E# frakL) differ at node ", k, " (t = ", frakL.grid()[k], ")");
    }
    for (std::size_t j = 0; j < frakL.size(); ++j) {
      if (!(Lambda.member(j).at(k) == path_marginal(frakL.member(j), frakL.grid()[k]))) {
        fail("hierarchy: E(lambda) and E_t(lambda) differ for member ", j, " at node ", k);
      }
    }
    rep.identity_checks += 2 + frakL.size();
  }
  rep.identities_exact = true;

  std::vector<double> kfp_vals, kfp_rel;
  std::vector<double> member_rates;
  std::size_t passed = 0;
  std::size_t total = 0;
  for (std::size_t j = 0; j < frakL.size(); ++j) {
    for (auto& r : kfp_residuals(Lambda.member(j), coeffs, battery.kfp)) {
      kfp_vals.push_back(r.value);
      kfp_rel.push_back(r.relative());
      rep.kfp_rows.push_back({j, std::move(r)});
    }
    std::size_t member_passed = 0;
    const auto mart = martingale_battery(frakL.member(j), coeffs, battery.martingale);
    for (const auto& r : mart) {
      member_passed += r.passed() ? 1 : 0;
      rep.martingale_rows.push_back({j, r});
    }
    passed += member_passed;
    total += mart.size();
    if (!mart.empty()) member_rates.push_back(static_cast<double>(member_passed) / static_cast<double>(mart.size()));
  }
  rep.rm_rows = rm_equation_residuals(M, coeffs, battery.rm);
  std::vector<double> rm_vals, rm_rel;
  for (const auto& r : rep.rm_rows) {
    rm_vals.push_back(r.value);
    rm_rel.push_back(r.relative());
  }
  rep.kfp = summarize(kfp_vals);
  rep.kfp_relative = summarize(kfp_rel);
  rep.rm = summarize(rm_vals);
  rep.rm_relative = summarize(rm_rel);
  if (total > 0) {
    rep.martingale_pass_rate = static_cast<double>(passed) / static_cast<double>(total);
    rep.martingale_min_member_pass_rate = *std::min_element(member_rates.begin(), member_rates.end());
  }
  rep.integrability_path_ensemble = integrability_functional(frakL, coeffs);
  rep.integrability_curve_ensemble = integrability_functional(Lambda, coeffs);
  rep.integrability_random_curve = integrability_functional(M, coeffs);
  for (double v : {rep.integrability_path_ensemble, rep.integrability_curve_ensemble, rep.integrability_random_curve}) {
    require(std::isfinite(v), "hierarchy: integrability functional is not finite");
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Uniqueness probe

struct UniquenessRow {
  std::size_t n_particles = 0;
  std::size_t pair = 0;
  std::uint64_t seed_a = 0;
  std::uint64_t seed_b = 0;
  double distance = 0.0;
};

struct UniquenessReport {
  /// False when the coefficients carry no Lipschitz certificate; the table is
  /// still produced but carries no verdict.
  bool gated = false;
  std::vector<UniquenessRow> rows;
  std::vector<std::size_t> sizes;
  std::vector<double> medians;
  std::optional<bool> strictly_decreasing;

  [[nodiscard]] std::string status() const {
    if (!gated) return "ungated";
    return *strictly_decreasing ? "pass" : "fail";
  }
};

/// For each N, d_ell at the final node between two runs with independent seeds,
/// for `n_pairs` seed pairs derived from `seed`.
[[nodiscard]] inline UniquenessReport uniqueness_probe(const Coefficients& coeffs, const InitialLawSampler& init,
                                                       const SimConfig& base, const std::vector<std::size_t>& sizes,
                                                       const Dictionary& dict, std::size_t n_pairs,
                                                       std::uint64_t seed) {
  require(!sizes.empty() && n_pairs >= 1, "uniqueness_probe: need sizes and at least one seed pair");
  UniquenessReport rep;
  rep.gated = coeffs.traits().lipschitz.has_value();
  rep.sizes = sizes;
  const std::size_t last = base.grid.size() - 1;
  for (std::size_t si = 0; si < sizes.size(); ++si) {
    std::vector<double> dists;
    for (std::size_t p = 0; p < n_pairs; ++p) {
      SimConfig a = base;
      SimConfig b = base;
      a.n_particles = b.n_particles = sizes[si];
      a.seed = rng::derive_seed(seed, 2 * p);
      b.seed = rng::derive_seed(seed, 2 * p + 1);
      const auto mu = simulate_mckv(coeffs, init, a).marginal_at(last);
      const auto nu = simulate_mckv(coeffs, init, b).marginal_at(last);
      const double dist = d_ell(mu, nu, dict).value;
      dists.push_back(dist);
      rep.rows.push_back({sizes[si], p, a.seed, b.seed, dist});
    }
    rep.medians.push_back(mflift::median(dists));
  }
  if (rep.gated) {
    bool dec = true;
    for (std::size_t i = 0; i + 1 < rep.medians.size(); ++i) dec = dec && rep.medians[i + 1] < rep.medians[i];
    rep.strictly_decreasing = dec;
  }
  return rep;
}

}  // namespace mflift

#include <gtest/gtest.h>

#include <cmath>

#include "mflift/rng.hpp"
#include "mflift/scenarios.hpp"
#include "mflift/testfn.hpp"

using namespace mflift;

namespace {

double frob(std::span<const double> v) { return norm2(v); }

// Random point near the bump (inside an enlarged support ball) or far away.
Vector probe_point(const TestFunction& f, rng::Stream& rs) {
  const std::size_t d = f.dim();
  Vector x(d);
  if (rs.uniform() < 0.8 && f.is_bump()) {
    const auto& s = f.shape();
    const double r = *std::max_element(s.radii.begin(), s.radii.end());
    for (std::size_t i = 0; i < d; ++i) x[i] = s.center[i] + rs.uniform(-1.1, 1.1) * r;
  } else {
    for (auto& v : x) v = rs.uniform(-8.0, 8.0);
  }
  return x;
}

/// Central differences of f (gradient) and of the analytic gradient (Hessian).
void finite_differences(const TestFunction& f, const Vector& x, Vector& g, Matrix& h) {
  const std::size_t d = f.dim();
  const double eps = 1e-5;
  g.assign(d, 0.0);
  h = Matrix(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    Vector xp = x, xm = x;
    xp[i] += eps;
    xm[i] -= eps;
    g[i] = (f(xp) - f(xm)) / (2 * eps);
    const Vector gp = f.gradient(xp);
    const Vector gm = f.gradient(xm);
    for (std::size_t j = 0; j < d; ++j) h(j, i) = (gp[j] - gm[j]) / (2 * eps);
  }
}

TestFunction linear_fn() {
  return TestFunction::custom(
      1, [](std::span<const double> x) { return x[0]; },
      [](std::span<const double>, std::span<double> g) { g[0] = 1.0; },
      [](std::span<const double>, std::span<double> h) { h[0] = 0.0; });
}

Coefficients constant_1d(double b, double sigma) { return Coefficients::constant({b}, Matrix(1, 1, sigma)); }

/// A nonlinear, measure-dependent field in d = 2 with 2 noise components.
Coefficients rotating_field() {
  return Coefficients(2, 2, [](double t, const EmpiricalMeasure& mu) {
    const Vector m = mu.mean();
    return LocalCoefficients{
        [t, m](std::span<const double> x, std::span<double> b) {
          b[0] = -x[1] + 0.3 * std::sin(m[0] + t);
          b[1] = x[0] - 0.5 * x[1] + 0.2 * m[1];
        },
        [m](std::span<const double> x, std::span<double> s) {
          s[0] = 0.4 + 0.1 * std::cos(x[0]);
          s[1] = 0.1 * m[0];
          s[2] = 0.05 * x[1];
          s[3] = 0.3;
        }};
  });
}

EmpiricalMeasure random_cloud(rng::Stream& rs, std::size_t n, std::size_t d) {
  std::vector<double> x(n * d);
  for (auto& v : x) v = rs.normal() * 1.2 + 0.3;
  return EmpiricalMeasure::uniform(d, std::move(x));
}

}  // namespace

TEST(Dictionary, SingleEntryNormalized) {
  const auto dict = build_dictionary(2, false, 1, 1, 42);
  ASSERT_EQ(dict.size(), 1u);
  EXPECT_LE(*dict[0].certificates().c2, 1.0 + 1e-12);
  rng::Stream rs(1, 1);
  for (int i = 0; i < 10000; ++i) {
    const Vector x{rs.uniform(-8, 8)};
    const auto h = dict[0].hessian(x);
    EXPECT_LE(std::abs(dict[0](x)), 1.0);
    EXPECT_LE(frob(dict[0].gradient(x)), 1.0);
    EXPECT_LE(h.frobenius(), 1.0);
  }
}

TEST(Dictionary, DeterministicInSeed) {
  for (std::size_t d : {1u, 3u}) {
    const auto a = build_dictionary(1, false, d, 16, 7);
    const auto b = build_dictionary(1, false, d, 16, 7);
    const auto c = build_dictionary(1, false, d, 16, 8);
    bool differs = false;
    for (std::size_t k = 0; k < a.size(); ++k) {
      EXPECT_EQ(a[k].shape(), b[k].shape());
      EXPECT_EQ(a[k].amplitude(), b[k].amplitude());
      differs = differs || !(a[k].shape() == c[k].shape());
    }
    EXPECT_TRUE(differs);
  }
}

TEST(Dictionary, Errors) {
  EXPECT_THROW((void)build_dictionary(2, false, 1, 0, 1), Error);
  EXPECT_THROW((void)build_dictionary(1, true, 1, 4, 1), Error);
  EXPECT_THROW((void)build_dictionary(3, false, 1, 4, 1), Error);
}

TEST(Dictionary, IdIsContentAddress) {
  EXPECT_EQ(build_dictionary(2, true, 2, 32, 9).id(), "dict-l2w-d2-n32-s9");
  EXPECT_EQ(build_dictionary(1, false, 1, 8, 0).id(), "dict-l1-d1-n8-s0");
}

// Dense-probe validation of every certificate on every entry, in several
// dimensions, for plain and weighted dictionaries.
TEST(Dictionary, CertificatesBoundProbedNorms) {
  struct Case {
    int ell;
    bool weighted;
    std::size_t d;
  };
  for (const auto& c : {Case{1, false, 1}, Case{2, false, 1}, Case{2, true, 1}, Case{2, false, 2},
                        Case{2, true, 2}, Case{1, false, 3}}) {
    const auto dict = build_dictionary(c.ell, c.weighted, c.d, 24, 100 + c.d);
    rng::Stream rs(200 + c.d, 3);
    for (std::size_t k = 0; k < dict.size(); ++k) {
      const auto& f = dict[k];
      const auto& cert = f.certificates();
      EXPECT_LE(*cert.get(dict.governing()), 1.0 + 1e-12);
      double sup0 = 0, sup1 = 0, sup2 = 0, w1 = 0, w2 = 0;
      for (int i = 0; i < 10000; ++i) {
        const Vector x = probe_point(f, rs);
        const double r = norm2(x);
        const double g = frob(f.gradient(x));
        const double h = f.hessian(x).frobenius();
        sup0 = std::max(sup0, std::abs(f(x)));
        sup1 = std::max(sup1, g);
        sup2 = std::max(sup2, h);
        w1 = std::max(w1, (1 + r) * g);
        w2 = std::max(w2, (1 + r * r) * h);
      }
      EXPECT_LE(std::max(sup0, sup1), *cert.c1) << "entry " << k;
      EXPECT_LE(std::max({sup0, sup1, sup2}), *cert.c2) << "entry " << k;
      EXPECT_LE(sup0 + w1 + w2, *cert.c2w) << "entry " << k;
      EXPECT_LE(w1, *cert.c2w);
      EXPECT_LE(w2, *cert.c2w);
      // support radius: value vanishes outside
      Vector far(c.d, 0.0);
      far[0] = f.support_radius() + 1e-9;
      EXPECT_EQ(f(far), 0.0);
    }
  }
}

TEST(TestFunction, DerivativesMatchFiniteDifferences) {
  for (std::size_t d : {1u, 2u, 3u}) {
    const auto dict = build_dictionary(2, false, d, 20, 55 + d);
    rng::Stream rs(77 + d, 0);
    for (std::size_t k = 0; k < dict.size(); ++k) {
      const auto& f = dict[k];
      const double scale = *f.certificates().c2;
      for (int i = 0; i < 100; ++i) {
        const Vector x = probe_point(f, rs);
        Vector g_fd;
        Matrix h_fd;
        finite_differences(f, x, g_fd, h_fd);
        const Vector g = f.gradient(x);
        const Matrix h = f.hessian(x);
        for (std::size_t a = 0; a < d; ++a) {
          EXPECT_NEAR(g[a], g_fd[a], 1e-6 * std::max(std::abs(g[a]), scale));
          for (std::size_t b = 0; b < d; ++b) {
            EXPECT_NEAR(h(a, b), h_fd(a, b), 1e-6 * std::max(std::abs(h(a, b)), scale));
            EXPECT_LE(std::abs(h(a, b) - h(b, a)), 1e-10);
          }
        }
      }
    }
  }
}

TEST(TimeTestFunction, VanishesAtEndpointsAndDerivative) {
  const auto family = build_time_family(2.5, 8, 3);
  for (const auto& xi : family) {
    EXPECT_EQ(xi(0.0), 0.0);
    EXPECT_EQ(xi(2.5), 0.0);
    double peak = 0.0;
    for (int i = 0; i <= 1000; ++i) {
      const double t = 2.5 * i / 1000.0;
      peak = std::max(peak, std::abs(xi(t)));
      const double h = 1e-6;
      if (t > h && t < 2.5 - h) {
        const double fd = (xi(t + h) - xi(t - h)) / (2 * h);
        EXPECT_NEAR(xi.derivative(t), fd, 1e-6 * std::max(1.0, std::abs(fd)));
      }
    }
    EXPECT_NEAR(peak, 1.0, 1e-3);
  }
}

TEST(OuterFunction, GradientsAndSeminorms) {
  const auto family = build_outer_family(12, 3, 5);
  rng::Stream rs(9, 2);
  bool some_h2 = false;
  for (std::size_t p = 0; p < family.size(); ++p) {
    const auto& psi = family[p];
    EXPECT_TRUE(psi.certificates().admissible(1));
    if (p % 2 == 0) {
      EXPECT_TRUE(psi.certificates().admissible(2));
    }
    some_h2 = some_h2 || psi.certificates().admissible(2);
    const std::size_t k = psi.arity();
    double s0 = 0, s1 = 0, s2 = 0;
    for (int i = 0; i < 3000; ++i) {
      Vector y(k);
      for (auto& v : y) v = rs.uniform(-3, 4);
      const Vector g = psi.gradient(y);
      double l1 = 0.0, l2 = 0.0;
      for (std::size_t a = 0; a < k; ++a) {
        Vector yp = y, ym = y;
        const double h = 1e-6;
        yp[a] += h;
        ym[a] -= h;
        const double fd = (psi(yp) - psi(ym)) / (2 * h);
        EXPECT_NEAR(g[a], fd, 1e-6 * std::max(1.0, std::abs(fd)));
        const Vector gp = psi.gradient(yp), gm = psi.gradient(ym);
        for (std::size_t b = 0; b < k; ++b) l2 += std::abs((gp[b] - gm[b]) / (2 * h));
        l1 += std::abs(g[a]);
      }
      s0 = std::max(s0, std::abs(psi(y)));
      s1 = std::max(s1, l1);
      s2 = std::max(s2, l2);
    }
    EXPECT_LE(s0, psi.certificates().c0);
    EXPECT_LE(s1, psi.certificates().c1);
    EXPECT_LE(s2, psi.certificates().c2 * (1 + 1e-6));
  }
  EXPECT_TRUE(some_h2);
}

TEST(ApplyL, ZeroCoefficients) {
  const auto dict = build_dictionary(2, false, 1, 8, 1);
  const auto mu = EmpiricalMeasure::uniform(1, {0.0, 1.0});
  const auto zero = Coefficients::zero(1);
  for (const auto& f : dict.entries()) EXPECT_EQ(apply_L(f, zero, 0.3, Vector{0.2}, mu), 0.0);
}

TEST(ApplyL, PureDriftOnLinearFunction) {
  const auto mu = EmpiricalMeasure::dirac({0.0});
  EXPECT_EQ(apply_L(linear_fn(), constant_1d(1.0, 0.0), 0.0, Vector{0.7}, mu), 1.0);
}

TEST(ApplyL, SecondDerivativeTerm) {
  // phi = A rho((x-c)^2/r^2) has phi''(c) = -8 A / r^2; a = 2 gives 1/2 * 2 * phi''(c).
  const double A = 0.37, r = 1.3, c = 0.4;
  const auto phi = TestFunction::radial_bump({c}, r, A);
  const auto mu = EmpiricalMeasure::dirac({0.0});
  EXPECT_NEAR(apply_L(phi, constant_1d(0.0, std::sqrt(2.0)), 0.0, Vector{c}, mu), -8.0 * A / (r * r), 1e-14);
}

TEST(ApplyL, NonFiniteCoefficientIsError) {
  const Coefficients bad(1, 1, [](double, const EmpiricalMeasure&) {
    return LocalCoefficients{[](std::span<const double>, std::span<double> b) { b[0] = NAN; },
                             [](std::span<const double>, std::span<double> s) { s[0] = 0.0; }};
  });
  EXPECT_THROW((void)apply_L(linear_fn(), bad, 0.0, Vector{0.0}, EmpiricalMeasure::dirac({0.0})), Error);
}

TEST(ApplyK, IdentityOuterEqualsApplyL) {
  const auto dict = build_dictionary(2, false, 2, 10, 3);
  const auto coeffs = rotating_field();
  rng::Stream rs(4, 4);
  for (const auto& f : dict.entries()) {
    const auto mu = random_cloud(rs, 15, 2);
    const Vector x{rs.normal(), rs.normal()};
    const double t = rs.uniform();
    EXPECT_EQ(apply_K(CylinderFunction::linear(f), coeffs, t, x, mu), apply_L(f, coeffs, t, x, mu));
  }
}

TEST(ApplyK, ConstantOuterVanishes) {
  const auto dict = build_dictionary(2, false, 1, 3, 3);
  const CylinderFunction F(dict.entries(), OuterFunction::constant(3, 2.0));
  const auto mu = EmpiricalMeasure::uniform(1, {0.0, 0.5});
  EXPECT_EQ(apply_K(F, mean_field_ou(1, 0.5, 0.4, 1, 0.25).coeffs, 0.0, Vector{0.2}, mu), 0.0);
}

TEST(ApplyK, ProductOuterHandExpansion) {
  const auto dict = build_dictionary(2, false, 1, 2, 8);
  const OuterFunction prod(
      2, [](std::span<const double> y) { return y[0] * y[1]; },
      [](std::span<const double> y, std::span<double> g) {
        g[0] = y[1];
        g[1] = y[0];
      });
  const CylinderFunction F(dict.entries(), prod);
  const auto coeffs = mean_field_ou(1, 0.5, 0.4, 1, 0.25).coeffs;
  rng::Stream rs(6, 6);
  for (int trial = 0; trial < 20; ++trial) {
    const auto mu = random_cloud(rs, 12, 1);
    const Vector x{rs.normal()};
    const double direct = integrate(mu, dict[1]) * apply_L(dict[0], coeffs, 0.1, x, mu) +
                          integrate(mu, dict[0]) * apply_L(dict[1], coeffs, 0.1, x, mu);
    EXPECT_NEAR(apply_K(F, coeffs, 0.1, x, mu), direct, 1e-15 * (1 + std::abs(direct)));
  }
}

TEST(Leibniz, TrivialCases) {
  const auto dict = build_dictionary(2, false, 1, 4, 2);
  const auto coeffs = mean_field_ou(1, 0.5, 0.4, 1, 0.25).coeffs;
  const auto mu = EmpiricalMeasure::uniform(1, {-0.5, 0.1, 0.9});
  const auto F = CylinderFunction::linear(dict[0]);
  const CylinderFunction one({dict[1]}, OuterFunction::constant(1, 1.0));
  EXPECT_EQ(leibniz_gap(F, one, coeffs, 0.2, Vector{0.3}, mu), 0.0);
  EXPECT_LE(leibniz_gap(F, F, coeffs, 0.2, Vector{0.3}, mu), 1e-16);
}

TEST(Leibniz, RandomTuples) {
  const auto dict = build_dictionary(2, false, 2, 16, 21);
  const auto outers = build_outer_family(12, 3, 22);
  const auto coeffs = rotating_field();
  rng::Stream rs(23, 0);
  auto random_F = [&]() {
    const auto& psi = outers[rs.index(outers.size())];
    std::vector<TestFunction> inner;
    for (std::size_t q = 0; q < psi.arity(); ++q) inner.push_back(dict[rs.index(dict.size())]);
    return CylinderFunction(inner, psi);
  };
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto F = random_F();
    const auto G = random_F();
    const auto mu = random_cloud(rs, 8, 2);
    const Vector x{rs.normal(), rs.normal()};
    const double t = rs.uniform();
    const double scale =
        1 + std::abs(F(mu) * apply_K(G, coeffs, t, x, mu)) + std::abs(G(mu) * apply_K(F, coeffs, t, x, mu));
    worst = std::max(worst, leibniz_gap(F, G, coeffs, t, x, mu) / scale);
  }
  EXPECT_LE(worst, 1e-10);
}

TEST(Coefficients, DiffusionMatrixIsSymmetricPsd) {
  const auto coeffs = rotating_field();
  rng::Stream rs(1, 9);
  const auto mu = random_cloud(rs, 10, 2);
  for (int i = 0; i < 100; ++i) {
    const Vector x{rs.normal() * 3, rs.normal() * 3};
    const auto a = coeffs.diffusion_matrix(rs.uniform(), x, mu);
    EXPECT_EQ(a(0, 1), a(1, 0));
    EXPECT_GE(a(0, 0), 0.0);
    EXPECT_GE(a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0), -1e-14);
  }
}

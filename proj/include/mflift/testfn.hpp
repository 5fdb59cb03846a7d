#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "mflift/core.hpp"
#include "mflift/measures.hpp"
#include "mflift/rng.hpp"

namespace mflift {

// ---------------------------------------------------------------------------
// Norms and certificates

enum class NormKind { C1, C2, C2w };

[[nodiscard]] inline std::string to_string(NormKind k) {
  switch (k) {
    case NormKind::C1: return "C1";
    case NormKind::C2: return "C2";
    case NormKind::C2w: return "C2w";
  }
  return "?";
}

[[nodiscard]] inline NormKind norm_kind_from_string(const std::string& s) {
  if (s == "C1") return NormKind::C1;
  if (s == "C2") return NormKind::C2;
  if (s == "C2w") return NormKind::C2w;
  fail("unknown norm kind '", s, "'");
}

/// Certified upper bounds on
///   C1  = max(|f|_inf, |grad f|_inf)
///   C2  = max(|f|_inf, |grad f|_inf, |hess f|_inf)            (Frobenius on tensors)
///   C2w = |f|_inf + |(1+|x|) grad f|_inf + |(1+|x|^2) hess f|_inf
struct NormCertificates {
  std::optional<double> c1;
  std::optional<double> c2;
  std::optional<double> c2w;

  [[nodiscard]] std::optional<double> get(NormKind k) const {
    switch (k) {
      case NormKind::C1: return c1;
      case NormKind::C2: return c2;
      case NormKind::C2w: return c2w;
    }
    return std::nullopt;
  }
};

/// Multiplier applied to every grid-maximised bound.
inline constexpr double kCertificateSafety = 1.05;
/// An entry is admissible for a norm if its certificate is at most 1 + this.
inline constexpr double kAdmissibleSlack = 1e-12;

// ---------------------------------------------------------------------------
// Bump profile rho(q) = (1 - q)^4 on q < 1, zero beyond. C^3 across q = 1.

namespace bump_profile {

[[nodiscard]] inline double value(double q) { return q < 1.0 ? std::pow(1.0 - q, 4) : 0.0; }
[[nodiscard]] inline double d1(double q) { return q < 1.0 ? -4.0 * std::pow(1.0 - q, 3) : 0.0; }
[[nodiscard]] inline double d2(double q) { return q < 1.0 ? 12.0 * (1.0 - q) * (1.0 - q) : 0.0; }

}  // namespace bump_profile

/// Geometry of an anisotropic bump x -> rho((x-c)^T P (x-c)) with
/// P = sum_i r_i^{-2} a_i a_i^T for orthonormal axes a_i.
struct BumpShape {
  Vector center;
  Matrix axes;  // row i is the unit axis a_i
  Vector radii;

  [[nodiscard]] std::size_t dim() const { return center.size(); }

  [[nodiscard]] Matrix precision() const {
    const std::size_t d = dim();
    Matrix p(d, d);
    for (std::size_t k = 0; k < d; ++k) {
      const double inv = 1.0 / (radii[k] * radii[k]);
      for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) p(i, j) += inv * axes(k, i) * axes(k, j);
      }
    }
    return p;
  }

  [[nodiscard]] bool isotropic() const {
    return std::all_of(radii.begin(), radii.end(), [&](double r) { return r == radii.front(); });
  }

  bool operator==(const BumpShape&) const = default;
};

namespace detail {

struct UnitBumpBounds {
  double grad = 0.0;      // sup |grad f|
  double hess = 0.0;      // sup |hess f|
  double grad_w = 0.0;    // sup (1+|x|) |grad f|
  double hess_w = 0.0;    // sup (1+|x|^2) |hess f|
};

/// Radial majorants of the derivative norms of the unit-amplitude bump,
/// maximised on a dense grid in q = (x-c)^T P (x-c) in [0, 1].
[[nodiscard]] inline UnitBumpBounds unit_bump_bounds(const BumpShape& s) {
  const std::size_t d = s.dim();
  const double r_min = *std::min_element(s.radii.begin(), s.radii.end());
  const double r_max = *std::max_element(s.radii.begin(), s.radii.end());
  const double lam_max = 1.0 / (r_min * r_min);
  double p_frob2 = 0.0;
  for (double r : s.radii) p_frob2 += 1.0 / std::pow(r, 4);
  const double p_frob = std::sqrt(p_frob2);
  const double c_norm = norm2(s.center);
  const bool iso = s.isotropic();

  constexpr int kGrid = 20000;
  UnitBumpBounds b;
  for (int n = 0; n <= kGrid; ++n) {
    const double q = static_cast<double>(n) / kGrid;
    const double r1 = bump_profile::d1(q);
    const double r2 = bump_profile::d2(q);
    const double grad = 2.0 * std::abs(r1) * std::sqrt(lam_max * q);
    double hess = 0.0;
    if (iso) {
      // radial eigenvalue (4 rho'' q + 2 rho') / r^2, tangential 2 rho' / r^2
      const double radial = 4.0 * r2 * q + 2.0 * r1;
      const double tangential = 2.0 * r1;
      hess = std::sqrt(radial * radial + static_cast<double>(d - 1) * tangential * tangential) *
             lam_max;
    } else {
      hess = 4.0 * r2 * lam_max * q + 2.0 * std::abs(r1) * p_frob;
    }
    const double x_norm = c_norm + std::sqrt(q) * r_max;
    b.grad = std::max(b.grad, grad);
    b.hess = std::max(b.hess, hess);
    b.grad_w = std::max(b.grad_w, (1.0 + x_norm) * grad);
    b.hess_w = std::max(b.hess_w, (1.0 + x_norm * x_norm) * hess);
  }
  return b;
}

[[nodiscard]] inline NormCertificates unit_bump_certificates(const BumpShape& s) {
  const auto b = unit_bump_bounds(s);
  NormCertificates c;
  c.c1 = std::max(1.0, kCertificateSafety * b.grad);
  c.c2 = std::max(*c.c1, kCertificateSafety * b.hess);
  c.c2w = 1.0 + kCertificateSafety * (b.grad_w + b.hess_w);
  return c;
}

}  // namespace detail

/// A C^2 test function on R^d with analytic gradient and Hessian.
///
/// Bumps carry norm certificates; custom functions (used for locally linear or
/// quadratic probes) carry only what the caller supplies.
class TestFunction {
 public:
  using EvalFn = std::function<double(std::span<const double>)>;
  using GradFn = std::function<void(std::span<const double>, std::span<double>)>;
  using HessFn = std::function<void(std::span<const double>, std::span<double>)>;

  /// amplitude * rho((x-c)^T P (x-c)).
  [[nodiscard]] static TestFunction bump(BumpShape shape, double amplitude) {
    require(!shape.center.empty(), "bump: empty center");
    const std::size_t d = shape.dim();
    require(shape.radii.size() == d && shape.axes.rows() == d && shape.axes.cols() == d,
            "bump: inconsistent shape dimensions");
    for (double r : shape.radii) require(r > 0.0 && std::isfinite(r), "bump: radius must be > 0");
    TestFunction f;
    f.dim_ = d;
    const auto unit = detail::unit_bump_certificates(shape);
    const double a = std::abs(amplitude);
    f.certs_ = {*unit.c1 * a, *unit.c2 * a, *unit.c2w * a};
    f.support_radius_ =
        norm2(shape.center) + *std::max_element(shape.radii.begin(), shape.radii.end());
    Bump b{std::move(shape), {}, amplitude};
    b.precision = b.shape.precision();
    f.impl_ = std::move(b);
    return f;
  }

  /// Isotropic bump of radius r at c.
  [[nodiscard]] static TestFunction radial_bump(Vector center, double radius, double amplitude) {
    const std::size_t d = center.size();
    return bump({std::move(center), Matrix::identity(d), Vector(d, radius)}, amplitude);
  }

  [[nodiscard]] static TestFunction custom(std::size_t dim, EvalFn eval, GradFn grad, HessFn hess,
                                           double support_radius = INFINITY,
                                           NormCertificates certs = {}) {
    require(dim >= 1, "custom test function: dimension must be >= 1");
    TestFunction f;
    f.dim_ = dim;
    f.support_radius_ = support_radius;
    f.certs_ = certs;
    f.impl_ = Custom{std::move(eval), std::move(grad), std::move(hess)};
    return f;
  }

  [[nodiscard]] std::size_t dim() const noexcept { return dim_; }
  [[nodiscard]] const NormCertificates& certificates() const noexcept { return certs_; }
  [[nodiscard]] double support_radius() const noexcept { return support_radius_; }
  [[nodiscard]] bool is_bump() const noexcept { return std::holds_alternative<Bump>(impl_); }
  [[nodiscard]] const BumpShape& shape() const { return std::get<Bump>(impl_).shape; }
  [[nodiscard]] double amplitude() const { return std::get<Bump>(impl_).amplitude; }

  /// Returns f(x); fills grad (length d) and hess (d*d row-major) when non-empty.
  double evaluate(std::span<const double> x, std::span<double> grad, std::span<double> hess) const {
    if (const auto* b = std::get_if<Bump>(&impl_)) return eval_bump(*b, x, grad, hess);
    const auto& c = std::get<Custom>(impl_);
    if (!grad.empty()) c.grad(x, grad);
    if (!hess.empty()) c.hess(x, hess);
    return c.eval(x);
  }

  [[nodiscard]] double operator()(std::span<const double> x) const { return evaluate(x, {}, {}); }

  [[nodiscard]] Vector gradient(std::span<const double> x) const {
    Vector g(dim_);
    evaluate(x, g, {});
    return g;
  }

  [[nodiscard]] Matrix hessian(std::span<const double> x) const {
    Matrix h(dim_, dim_);
    Vector g(dim_);
    evaluate(x, g, h.data());
    return h;
  }

 private:
  TestFunction() = default;

  struct Bump {
    BumpShape shape;
    Matrix precision;
    double amplitude = 1.0;
  };
  struct Custom {
    EvalFn eval;
    GradFn grad;
    HessFn hess;
  };

  static double eval_bump(const Bump& b, std::span<const double> x, std::span<double> grad,
                          std::span<double> hess) {
    const std::size_t d = b.shape.dim();
    if (d == 1) {
      const double u = x[0] - b.shape.center[0];
      const double p = b.precision(0, 0);
      const double q = p * u * u;
      if (q >= 1.0) {
        if (!grad.empty()) grad[0] = 0.0;
        if (!hess.empty()) hess[0] = 0.0;
        return 0.0;
      }
      const double om = 1.0 - q;
      const double om2 = om * om;
      if (!grad.empty()) grad[0] = b.amplitude * (-4.0 * om2 * om) * 2.0 * p * u;
      if (!hess.empty()) {
        const double g = 2.0 * p * u;
        hess[0] = b.amplitude * (12.0 * om2 * g * g - 8.0 * om2 * om * p);
      }
      return b.amplitude * om2 * om2;
    }
    // general d: g = 2 P (x - c), q = (x-c)^T P (x-c)
    double buf_u[16];
    double buf_g[16];
    std::vector<double> heap_u, heap_g;
    double* u = buf_u;
    double* g = buf_g;
    if (d > 16) {
      heap_u.resize(d);
      heap_g.resize(d);
      u = heap_u.data();
      g = heap_g.data();
    }
    for (std::size_t i = 0; i < d; ++i) u[i] = x[i] - b.shape.center[i];
    double q = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += b.precision(i, j) * u[j];
      g[i] = 2.0 * s;
      q += u[i] * s;
    }
    if (q >= 1.0) {
      std::fill(grad.begin(), grad.end(), 0.0);
      std::fill(hess.begin(), hess.end(), 0.0);
      return 0.0;
    }
    const double r1 = bump_profile::d1(q);
    const double r2 = bump_profile::d2(q);
    if (!grad.empty()) {
      for (std::size_t i = 0; i < d; ++i) grad[i] = b.amplitude * r1 * g[i];
    }
    if (!hess.empty()) {
      for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
          hess[i * d + j] = b.amplitude * (r2 * g[i] * g[j] + 2.0 * r1 * b.precision(i, j));
        }
      }
    }
    return b.amplitude * bump_profile::value(q);
  }

  std::size_t dim_ = 0;
  NormCertificates certs_;
  double support_radius_ = INFINITY;
  std::variant<Bump, Custom> impl_{Custom{}};
};

// ---------------------------------------------------------------------------
// Dictionaries

struct DictionaryKey {
  int ell = 2;
  bool weighted = false;
  std::size_t dim = 1;
  std::size_t size = 0;
  std::uint64_t seed = 0;

  [[nodiscard]] std::string id() const {
    return detail::concat("dict-l", ell, weighted ? "w" : "", "-d", dim, "-n", size, "-s", seed);
  }
  [[nodiscard]] NormKind governing() const {
    if (weighted) return NormKind::C2w;
    return ell == 1 ? NormKind::C1 : NormKind::C2;
  }
  bool operator==(const DictionaryKey&) const = default;
};

/// Ordered family of test functions; position k is coordinate k of the embedding.
class Dictionary {
 public:
  Dictionary(DictionaryKey key, std::vector<TestFunction> entries)
      : key_(key), entries_(std::move(entries)) {
    require(!entries_.empty(), "Dictionary: needs at least one entry");
    for (std::size_t k = 0; k < entries_.size(); ++k) {
      require(entries_[k].dim() == entries_.front().dim(), "Dictionary: entries have mixed dimensions");
      const auto c = entries_[k].certificates().get(governing());
      require(c.has_value() && *c <= 1.0 + kAdmissibleSlack, "Dictionary: entry ", k,
              " violates its governing ", to_string(governing()), " certificate");
    }
  }

  [[nodiscard]] const DictionaryKey& key() const noexcept { return key_; }
  [[nodiscard]] std::string id() const { return key_.id(); }
  [[nodiscard]] NormKind governing() const { return key_.governing(); }
  [[nodiscard]] std::size_t dim() const { return entries_.front().dim(); }
  [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
  [[nodiscard]] const TestFunction& operator[](std::size_t k) const { return entries_.at(k); }
  [[nodiscard]] const std::vector<TestFunction>& entries() const noexcept { return entries_; }

  /// Indices of entries whose certificate for `norm` is at most 1.
  [[nodiscard]] std::vector<std::size_t> admissible(NormKind norm) const {
    std::vector<std::size_t> idx;
    for (std::size_t k = 0; k < entries_.size(); ++k) {
      const auto c = entries_[k].certificates().get(norm);
      if (c && *c <= 1.0 + kAdmissibleSlack) idx.push_back(k);
    }
    return idx;
  }

 private:
  DictionaryKey key_;
  std::vector<TestFunction> entries_;
};

/// Range of bump centres (each coordinate) and radii used by build_dictionary.
inline constexpr double kDictionaryCenterRange = 3.0;
inline constexpr double kDictionaryRadiusMin = 0.25;
inline constexpr double kDictionaryRadiusMax = 4.0;

namespace detail {

/// Random orthonormal basis by Gram-Schmidt on a Gaussian matrix.
[[nodiscard]] inline Matrix random_rotation(std::size_t d, rng::Stream& rs) {
  Matrix q(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    for (;;) {
      Vector v(d);
      for (auto& x : v) x = rs.normal();
      for (std::size_t k = 0; k < i; ++k) {
        double p = 0.0;
        for (std::size_t j = 0; j < d; ++j) p += v[j] * q(k, j);
        for (std::size_t j = 0; j < d; ++j) v[j] -= p * q(k, j);
      }
      const double n = norm2(v);
      if (n < 1e-6) continue;
      for (std::size_t j = 0; j < d; ++j) q(i, j) = v[j] / n;
      break;
    }
  }
  return q;
}

}  // namespace detail

/// Seeded dictionary of polynomial bumps, each rescaled so that its governing
/// certificate (C1 for ell = 1, C2 for ell = 2, C2w when weighted) equals 1.
[[nodiscard]] inline Dictionary build_dictionary(int ell, bool weighted, std::size_t dim,
                                                 std::size_t size, std::uint64_t seed) {
  require(size >= 1, "build_dictionary: size must be >= 1");
  require(dim >= 1, "build_dictionary: dimension must be >= 1");
  require(ell == 1 || ell == 2, "build_dictionary: ell must be 1 or 2, got ", ell);
  require(!weighted || ell == 2, "build_dictionary: the weighted norm is defined for ell = 2 only");
  const DictionaryKey key{ell, weighted, dim, size, seed};
  rng::Stream rs(seed, 0xD1C7u);
  std::vector<TestFunction> entries;
  entries.reserve(size);
  const double log_lo = std::log(kDictionaryRadiusMin);
  const double log_hi = std::log(kDictionaryRadiusMax);
  for (std::size_t k = 0; k < size; ++k) {
    BumpShape shape;
    shape.center.resize(dim);
    for (auto& c : shape.center) c = rs.uniform(-kDictionaryCenterRange, kDictionaryCenterRange);
    const double base = std::exp(rs.uniform(log_lo, log_hi));
    shape.radii.assign(dim, base);
    if (dim == 1) {
      shape.axes = Matrix::identity(1);
    } else {
      for (auto& r : shape.radii) r = base * std::exp(rs.uniform(-0.5, 0.5));
      shape.axes = detail::random_rotation(dim, rs);
    }
    const auto unit = detail::unit_bump_certificates(shape);
    const double amplitude = 1.0 / *unit.get(key.governing());
    entries.push_back(TestFunction::bump(std::move(shape), amplitude));
  }
  return Dictionary(key, std::move(entries));
}

/// Isotropic bumps with centres uniform in [center_lo, center_hi]^d and radii
/// log-uniform in [radius_lo, radius_hi], scaled to unit C^2 certificate. Used
/// for test batteries, where entries should overlap the bulk of the particles.
[[nodiscard]] inline std::vector<TestFunction> build_probe_family(std::size_t dim, std::size_t count,
                                                                  std::uint64_t seed, double center_lo,
                                                                  double center_hi, double radius_lo,
                                                                  double radius_hi) {
  require(dim >= 1, "build_probe_family: dimension must be >= 1");
  require(center_hi >= center_lo && radius_lo > 0.0 && radius_hi >= radius_lo,
          "build_probe_family: bad ranges");
  rng::Stream rs(seed, 0x9B0Eu);
  std::vector<TestFunction> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    Vector c(dim);
    for (auto& x : c) x = rs.uniform(center_lo, center_hi);
    const double r = std::exp(rs.uniform(std::log(radius_lo), std::log(radius_hi)));
    BumpShape shape{std::move(c), Matrix::identity(dim), Vector(dim, r)};
    const double amplitude = 1.0 / *detail::unit_bump_certificates(shape).c2;
    out.push_back(TestFunction::bump(std::move(shape), amplitude));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Time test functions: xi(t) = s * tau^2 (1 - tau)^2 p(tau), tau = t / T.

class TimeTestFunction {
 public:
  TimeTestFunction(double horizon, std::vector<double> poly) : horizon_(horizon), poly_(std::move(poly)) {
    require(horizon_ > 0.0, "TimeTestFunction: horizon must be positive");
    require(!poly_.empty(), "TimeTestFunction: empty polynomial");
    double peak = 0.0;
    constexpr int kGrid = 4000;
    for (int n = 0; n <= kGrid; ++n) {
      const double tau = static_cast<double>(n) / kGrid;
      peak = std::max(peak, std::abs(envelope(tau) * poly_at(tau)));
    }
    require(peak > 1e-8, "TimeTestFunction: degenerate polynomial");
    scale_ = 1.0 / peak;
  }

  [[nodiscard]] double operator()(double t) const {
    const double tau = t / horizon_;
    return scale_ * envelope(tau) * poly_at(tau);
  }

  [[nodiscard]] double derivative(double t) const {
    const double tau = t / horizon_;
    const double env_d = 2.0 * tau * (1.0 - tau) * (1.0 - 2.0 * tau);
    return scale_ * (env_d * poly_at(tau) + envelope(tau) * poly_d(tau)) / horizon_;
  }

  [[nodiscard]] double horizon() const noexcept { return horizon_; }
  [[nodiscard]] const std::vector<double>& coefficients() const noexcept { return poly_; }

 private:
  static double envelope(double tau) { return tau * tau * (1.0 - tau) * (1.0 - tau); }
  double poly_at(double tau) const {
    double s = 0.0;
    for (std::size_t i = poly_.size(); i-- > 0;) s = s * tau + poly_[i];
    return s;
  }
  double poly_d(double tau) const {
    double s = 0.0;
    for (std::size_t i = poly_.size(); i-- > 1;) s = s * tau + static_cast<double>(i) * poly_[i];
    return s;
  }

  double horizon_;
  std::vector<double> poly_;
  double scale_ = 1.0;
};

/// Seeded family of quadratic-modulated time test functions on [0, T].
[[nodiscard]] inline std::vector<TimeTestFunction> build_time_family(double horizon,
                                                                     std::size_t count,
                                                                     std::uint64_t seed) {
  rng::Stream rs(seed, 0x71DEu);
  std::vector<TimeTestFunction> out;
  out.reserve(count);
  while (out.size() < count) {
    std::vector<double> p{rs.uniform(-1.0, 1.0), rs.uniform(-2.0, 2.0), rs.uniform(-2.0, 2.0)};
    if (std::abs(p[0]) + std::abs(p[1]) + std::abs(p[2]) < 0.2) continue;
    out.emplace_back(horizon, std::move(p));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Outer functions Psi : R^k -> R

/// Certified seminorms [Psi]_{C^j} = sup_y sum_{i_1..i_j} |d_{i_1}..d_{i_j} Psi(y)|, j = 0, 1, 2.
struct SeminormCertificates {
  double c0 = INFINITY;
  double c1 = INFINITY;
  double c2 = INFINITY;

  /// True if [Psi]_{C^j} <= 1 for every j <= h.
  [[nodiscard]] bool admissible(int h) const {
    const double lim = 1.0 + kAdmissibleSlack;
    if (c0 > lim) return false;
    if (h >= 1 && c1 > lim) return false;
    if (h >= 2 && c2 > lim) return false;
    return true;
  }
};

class OuterFunction {
 public:
  using EvalFn = std::function<double(std::span<const double>)>;
  using GradFn = std::function<void(std::span<const double>, std::span<double>)>;

  OuterFunction(std::size_t arity, EvalFn eval, GradFn grad, SeminormCertificates certs = {},
                std::string label = "custom")
      : arity_(arity), eval_(std::move(eval)), grad_(std::move(grad)), certs_(certs),
        label_(std::move(label)) {
    require(arity_ >= 1, "OuterFunction: arity must be >= 1");
  }

  /// Psi(y) = sum_i c_i y_i + c0.
  [[nodiscard]] static OuterFunction linear(Vector coeffs, double offset = 0.0) {
    const std::size_t k = coeffs.size();
    auto c = std::make_shared<const Vector>(std::move(coeffs));
    return OuterFunction(
        k, [c, offset](std::span<const double> y) { return dot(*c, y) + offset; },
        [c](std::span<const double>, std::span<double> g) { std::copy(c->begin(), c->end(), g.begin()); },
        {}, "linear");
  }

  [[nodiscard]] static OuterFunction identity() { return linear({1.0}); }

  [[nodiscard]] static OuterFunction constant(std::size_t arity, double value) {
    return OuterFunction(
        arity, [value](std::span<const double>) { return value; },
        [](std::span<const double>, std::span<double> g) { std::fill(g.begin(), g.end(), 0.0); },
        {std::abs(value), 0.0, 0.0}, "constant");
  }

  /// (a * b)(y_a, y_b) = a(y_a) b(y_b); arity is the sum of both arities.
  [[nodiscard]] static OuterFunction product(OuterFunction a, OuterFunction b) {
    const std::size_t ka = a.arity();
    const std::size_t kb = b.arity();
    auto pa = std::make_shared<const OuterFunction>(std::move(a));
    auto pb = std::make_shared<const OuterFunction>(std::move(b));
    return OuterFunction(
        ka + kb,
        [pa, pb, ka](std::span<const double> y) {
          return (*pa)(y.first(ka)) * (*pb)(y.subspan(ka));
        },
        [pa, pb, ka](std::span<const double> y, std::span<double> g) {
          const double va = (*pa)(y.first(ka));
          const double vb = (*pb)(y.subspan(ka));
          pa->gradient(y.first(ka), g.first(ka));
          pb->gradient(y.subspan(ka), g.subspan(ka));
          for (std::size_t i = 0; i < ka; ++i) g[i] *= vb;
          for (std::size_t i = ka; i < g.size(); ++i) g[i] *= va;
        },
        {}, "product");
  }

  /// amplitude * rho(|y - c|^2 / r^2) on R^k with certified seminorms.
  [[nodiscard]] static OuterFunction bump(Vector center, double radius, double amplitude) {
    const std::size_t k = center.size();
    require(k >= 1 && radius > 0.0, "OuterFunction::bump: bad parameters");
    // sum_i |d_i Psi| <= 2 |rho'| sqrt(k q) / r;  sum_ij |d_ij Psi| <= (4 rho'' q + 2 |rho'|) k / r^2
    double g1 = 0.0;
    double g2 = 0.0;
    constexpr int kGrid = 20000;
    for (int n = 0; n <= kGrid; ++n) {
      const double q = static_cast<double>(n) / kGrid;
      g1 = std::max(g1, 2.0 * std::abs(bump_profile::d1(q)) * std::sqrt(static_cast<double>(k) * q) / radius);
      g2 = std::max(g2, (4.0 * bump_profile::d2(q) * q + 2.0 * std::abs(bump_profile::d1(q))) *
                            static_cast<double>(k) / (radius * radius));
    }
    const double a = std::abs(amplitude);
    const SeminormCertificates certs{a, a * kCertificateSafety * g1, a * kCertificateSafety * g2};
    auto c = std::make_shared<const Vector>(std::move(center));
    const double inv_r2 = 1.0 / (radius * radius);
    return OuterFunction(
        k,
        [c, inv_r2, amplitude](std::span<const double> y) {
          double q = 0.0;
          for (std::size_t i = 0; i < y.size(); ++i) q += (y[i] - (*c)[i]) * (y[i] - (*c)[i]);
          return amplitude * bump_profile::value(q * inv_r2);
        },
        [c, inv_r2, amplitude](std::span<const double> y, std::span<double> g) {
          double q = 0.0;
          for (std::size_t i = 0; i < y.size(); ++i) q += (y[i] - (*c)[i]) * (y[i] - (*c)[i]);
          const double r1 = bump_profile::d1(q * inv_r2);
          for (std::size_t i = 0; i < y.size(); ++i) g[i] = amplitude * r1 * 2.0 * inv_r2 * (y[i] - (*c)[i]);
        },
        certs, "bump");
  }

  [[nodiscard]] std::size_t arity() const noexcept { return arity_; }
  [[nodiscard]] const SeminormCertificates& certificates() const noexcept { return certs_; }
  [[nodiscard]] const std::string& label() const noexcept { return label_; }

  [[nodiscard]] double operator()(std::span<const double> y) const { return eval_(y); }
  void gradient(std::span<const double> y, std::span<double> g) const { grad_(y, g); }
  [[nodiscard]] Vector gradient(std::span<const double> y) const {
    Vector g(arity_);
    grad_(y, g);
    return g;
  }

 private:
  std::size_t arity_;
  EvalFn eval_;
  GradFn grad_;
  SeminormCertificates certs_;
  std::string label_;
};

/// Seeded outer family: bumps on R^k, k in {1, .., max_arity}. Even positions
/// are scaled so that [Psi]_{C^j} <= 1 for j <= 2, odd positions only for
/// j <= 1, so both orders h = 1, 2 have admissible members.
[[nodiscard]] inline std::vector<OuterFunction> build_outer_family(std::size_t count,
                                                                   std::size_t max_arity,
                                                                   std::uint64_t seed) {
  require(max_arity >= 1, "build_outer_family: max_arity must be >= 1");
  rng::Stream rs(seed, 0x0E7Eu);
  std::vector<OuterFunction> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    const std::size_t k = 1 + n % max_arity;
    Vector c(k);
    for (auto& x : c) x = rs.uniform(-0.25, 0.75);
    const double r = std::exp(rs.uniform(std::log(0.3), std::log(3.0)));
    const auto unit = OuterFunction::bump(c, r, 1.0).certificates();
    const double peak = n % 2 == 0 ? std::max({unit.c0, unit.c1, unit.c2}) : std::max(unit.c0, unit.c1);
    const double amplitude = 1.0 / peak;
    out.push_back(OuterFunction::bump(std::move(c), r, amplitude));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cylinder functions F(mu) = Psi(L_Phi(mu))

class CylinderFunction {
 public:
  CylinderFunction(std::vector<TestFunction> inner, OuterFunction outer)
      : inner_(std::move(inner)), outer_(std::move(outer)) {
    require(!inner_.empty(), "CylinderFunction: needs at least one inner function");
    require(inner_.size() == outer_.arity(), "CylinderFunction: ", inner_.size(),
            " inner functions for an outer function of arity ", outer_.arity());
    for (const auto& f : inner_) {
      require(f.dim() == inner_.front().dim(), "CylinderFunction: inner functions have mixed dimensions");
    }
  }

  /// Psi(y) = y with a single inner function.
  [[nodiscard]] static CylinderFunction linear(TestFunction phi) {
    return CylinderFunction({std::move(phi)}, OuterFunction::identity());
  }

  /// FG as a cylinder function: concatenated inner lists, product outer function.
  [[nodiscard]] static CylinderFunction product(const CylinderFunction& f, const CylinderFunction& g) {
    std::vector<TestFunction> inner = f.inner_;
    inner.insert(inner.end(), g.inner_.begin(), g.inner_.end());
    return CylinderFunction(std::move(inner), OuterFunction::product(f.outer_, g.outer_));
  }

  [[nodiscard]] std::size_t arity() const noexcept { return inner_.size(); }
  [[nodiscard]] std::size_t dim() const { return inner_.front().dim(); }
  [[nodiscard]] const std::vector<TestFunction>& inner() const noexcept { return inner_; }
  [[nodiscard]] const OuterFunction& outer() const noexcept { return outer_; }

  /// L_Phi(mu) = (int phi_1 dmu, ..., int phi_k dmu).
  [[nodiscard]] Vector embed(const EmpiricalMeasure& mu) const {
    Vector y(inner_.size());
    for (std::size_t i = 0; i < inner_.size(); ++i) y[i] = integrate(mu, inner_[i]);
    return y;
  }

  [[nodiscard]] double operator()(const EmpiricalMeasure& mu) const { return outer_(embed(mu)); }

 private:
  std::vector<TestFunction> inner_;
  OuterFunction outer_;
};

// ---------------------------------------------------------------------------
// Coefficients b(t, x, mu), sigma(t, x, mu), a = sigma sigma^T

/// Coefficients frozen at a given (t, mu): plain functions of x.
struct LocalCoefficients {
  std::function<void(std::span<const double> x, std::span<double> b)> drift;
  /// d x m block, row-major.
  std::function<void(std::span<const double> x, std::span<double> sigma)> diffusion;
};

struct CoefficientTraits {
  std::string name = "custom";
  /// |b(t,x,mu) - b(t,y,mu)| + |sigma(t,x,mu) - sigma(t,y,mu)| <= L |x - y|.
  std::optional<double> lipschitz;
  bool bounded = false;
  bool zero_diffusion = false;
};

class Coefficients {
 public:
  /// Produces the local coefficients for one (t, mu); called once per time node,
  /// so measure statistics (means, moments) belong here rather than in the
  /// per-point closures.
  using Freezer = std::function<LocalCoefficients(double t, const EmpiricalMeasure& mu)>;

  Coefficients() = default;

  Coefficients(std::size_t dim, std::size_t noise_dim, Freezer freezer, CoefficientTraits traits = {})
      : dim_(dim), noise_dim_(noise_dim), freezer_(std::move(freezer)), traits_(std::move(traits)) {
    require(dim_ >= 1 && noise_dim_ >= 1, "Coefficients: dimensions must be >= 1");
  }

  [[nodiscard]] static Coefficients zero(std::size_t dim, std::size_t noise_dim = 1) {
    CoefficientTraits tr{"zero", 0.0, true, true};
    return Coefficients(
        dim, noise_dim,
        [](double, const EmpiricalMeasure&) {
          return LocalCoefficients{
              [](std::span<const double>, std::span<double> b) { std::fill(b.begin(), b.end(), 0.0); },
              [](std::span<const double>, std::span<double> s) { std::fill(s.begin(), s.end(), 0.0); }};
        },
        tr);
  }

  /// Constant drift vector and constant d x m diffusion block.
  [[nodiscard]] static Coefficients constant(Vector drift, Matrix sigma) {
    const std::size_t d = drift.size();
    require(sigma.rows() == d, "Coefficients::constant: sigma must have ", d, " rows");
    const std::size_t m = sigma.cols();
    const bool zero_sigma =
        std::all_of(sigma.data().begin(), sigma.data().end(), [](double v) { return v == 0.0; });
    CoefficientTraits tr{"constant", 0.0, true, zero_sigma};
    auto b = std::make_shared<const Vector>(std::move(drift));
    auto s = std::make_shared<const Matrix>(std::move(sigma));
    return Coefficients(
        d, m,
        [b, s](double, const EmpiricalMeasure&) {
          return LocalCoefficients{
              [b](std::span<const double>, std::span<double> out) { std::copy(b->begin(), b->end(), out.begin()); },
              [s](std::span<const double>, std::span<double> out) {
                std::copy(s->data().begin(), s->data().end(), out.begin());
              }};
        },
        tr);
  }

  [[nodiscard]] std::size_t dim() const noexcept { return dim_; }
  [[nodiscard]] std::size_t noise_dim() const noexcept { return noise_dim_; }
  [[nodiscard]] const CoefficientTraits& traits() const noexcept { return traits_; }

  [[nodiscard]] LocalCoefficients freeze(double t, const EmpiricalMeasure& mu) const {
    require(freezer_ != nullptr, "Coefficients: empty coefficient set");
    require(mu.dim() == dim_, "Coefficients: measure lives in R^", mu.dim(), ", coefficients in R^", dim_);
    return freezer_(t, mu);
  }

  [[nodiscard]] Vector drift(double t, std::span<const double> x, const EmpiricalMeasure& mu) const {
    Vector b(dim_);
    freeze(t, mu).drift(x, b);
    return b;
  }

  [[nodiscard]] Matrix sigma(double t, std::span<const double> x, const EmpiricalMeasure& mu) const {
    Matrix s(dim_, noise_dim_);
    freeze(t, mu).diffusion(x, s.data());
    return s;
  }

  /// a = sigma sigma^T, symmetric positive semidefinite by construction.
  [[nodiscard]] Matrix diffusion_matrix(double t, std::span<const double> x,
                                        const EmpiricalMeasure& mu) const {
    const Matrix s = sigma(t, x, mu);
    Matrix a(dim_, dim_);
    outer_self(s.data(), dim_, noise_dim_, a.data());
    return a;
  }

 private:
  std::size_t dim_ = 0;
  std::size_t noise_dim_ = 0;
  Freezer freezer_;
  CoefficientTraits traits_;
};

/// b and a = sigma sigma^T evaluated on every support point of one measure.
struct CoefficientField {
  std::size_t dim = 0;
  std::vector<double> drift;      // [point][d]
  std::vector<double> diffusion;  // [point][d][d]

  [[nodiscard]] std::span<const double> b(std::size_t i) const { return {drift.data() + i * dim, dim}; }
  [[nodiscard]] std::span<const double> a(std::size_t i) const {
    return {diffusion.data() + i * dim * dim, dim * dim};
  }
};

/// Evaluates the coefficients at (t, x_i, mu) for every support point x_i of mu,
/// or of `points` when given (points share mu's dimension).
[[nodiscard]] inline CoefficientField evaluate_field(const Coefficients& coeffs, double t,
                                                     const EmpiricalMeasure& mu,
                                                     std::span<const double> points = {}) {
  const std::size_t d = coeffs.dim();
  const std::size_t m = coeffs.noise_dim();
  const auto local = coeffs.freeze(t, mu);
  const std::span<const double> xs = points.empty() ? mu.coords() : points;
  const std::size_t n = xs.size() / d;
  CoefficientField f;
  f.dim = d;
  f.drift.resize(n * d);
  f.diffusion.resize(n * d * d);
  std::vector<double> sig(d * m);
  for (std::size_t i = 0; i < n; ++i) {
    const auto x = xs.subspan(i * d, d);
    const std::span<double> b(f.drift.data() + i * d, d);
    local.drift(x, b);
    local.diffusion(x, sig);
    outer_self(sig, d, m, std::span<double>(f.diffusion.data() + i * d * d, d * d));
    for (double v : b) require(std::isfinite(v), "non-finite drift at t = ", t, ", point ", i);
    for (double v : sig) require(std::isfinite(v), "non-finite diffusion at t = ", t, ", point ", i);
  }
  return f;
}

/// L_{b,a} phi(x) = b . grad phi + 1/2 a : hess phi, for given b, a at x.
[[nodiscard]] inline double generator(const TestFunction& phi, std::span<const double> x,
                                      std::span<const double> b, std::span<const double> a,
                                      double* value_out = nullptr) {
  const std::size_t d = phi.dim();
  double g_buf[16];
  double h_buf[256];
  std::vector<double> g_heap, h_heap;
  std::span<double> g(g_buf, d);
  std::span<double> h(h_buf, d * d);
  if (d > 16) {
    g_heap.resize(d);
    h_heap.resize(d * d);
    g = g_heap;
    h = h_heap;
  }
  const double v = phi.evaluate(x, g, h);
  if (value_out) *value_out = v;
  double out = 0.0;
  for (std::size_t i = 0; i < d; ++i) out += b[i] * g[i];
  double tr = 0.0;
  for (std::size_t i = 0; i < d * d; ++i) tr += a[i] * h[i];
  return out + 0.5 * tr;
}

/// L_{b,a} phi(t, x, mu).
[[nodiscard]] inline double apply_L(const TestFunction& phi, const Coefficients& coeffs, double t,
                                    std::span<const double> x, const EmpiricalMeasure& mu) {
  require(phi.dim() == coeffs.dim() && x.size() == coeffs.dim(), "apply_L: dimension mismatch");
  const auto f = evaluate_field(coeffs, t, mu, x);
  return generator(phi, x, f.b(0), f.a(0));
}

/// K_{b,a} F(x, mu) = sum_i d_i Psi(L_Phi(mu)) L_{b,a} phi_i(t, x, mu).
[[nodiscard]] inline double apply_K(const CylinderFunction& F, const Coefficients& coeffs, double t,
                                    std::span<const double> x, const EmpiricalMeasure& mu) {
  require(F.dim() == coeffs.dim() && x.size() == coeffs.dim(), "apply_K: dimension mismatch");
  const Vector y = F.embed(mu);
  const Vector dpsi = F.outer().gradient(y);
  const auto f = evaluate_field(coeffs, t, mu, x);
  double s = 0.0;
  for (std::size_t i = 0; i < F.arity(); ++i) s += dpsi[i] * generator(F.inner()[i], x, f.b(0), f.a(0));
  return s;
}

/// |K(FG) - F K G - G K F| at (t, x, mu).
[[nodiscard]] inline double leibniz_gap(const CylinderFunction& F, const CylinderFunction& G,
                                        const Coefficients& coeffs, double t,
                                        std::span<const double> x, const EmpiricalMeasure& mu) {
  const auto FG = CylinderFunction::product(F, G);
  const double lhs = apply_K(FG, coeffs, t, x, mu);
  const double rhs = F(mu) * apply_K(G, coeffs, t, x, mu) + G(mu) * apply_K(F, coeffs, t, x, mu);
  return std::abs(lhs - rhs);
}

}  // namespace mflift

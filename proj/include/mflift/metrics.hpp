#pragma once

// Dictionary-dual integral metrics (certified lower bounds of the true suprema),
// exact truncated W1, the embedding iota, and metrics on random measures.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mflift/core.hpp"
#include "mflift/lp.hpp"
#include "mflift/measures.hpp"
#include "mflift/testfn.hpp"

namespace mflift {

struct MetricReport {
  double value = 0.0;
  std::string kind;
  /// Index of the maximising dictionary entry / outer function, or -1.
  std::int64_t witness_index = -1;
  /// Free-form witness: argmax description or transport plan summary.
  std::string witness;
};

struct EmbeddedPoint {
  Vector coords;
  std::string dict_id;
};

/// iota(mu)_k = int phi_k dmu for k < m.
[[nodiscard]] inline EmbeddedPoint iota_embed(const EmpiricalMeasure& mu, const Dictionary& dict,
                                              std::size_t m) {
  require(m <= dict.size(), "iota_embed: truncation level ", m, " exceeds dictionary size ", dict.size());
  require(mu.dim() == dict.dim(), "iota_embed: measure lives in R^", mu.dim(), ", dictionary in R^",
          dict.dim());
  EmbeddedPoint p{Vector(m), dict.id()};
  for (std::size_t k = 0; k < m; ++k) p.coords[k] = integrate(mu, dict[k]);
  return p;
}

[[nodiscard]] inline EmbeddedPoint iota_embed(const EmpiricalMeasure& mu, const Dictionary& dict) {
  return iota_embed(mu, dict, dict.size());
}

namespace detail {

inline NormKind ell_norm(int ell) {
  require(ell == 1 || ell == 2, "ell must be 1 or 2, got ", ell);
  return ell == 1 ? NormKind::C1 : NormKind::C2;
}

/// max over `admissible` of |x_k - y_k|, first maximiser as witness.
inline MetricReport sup_gap(std::span<const double> x, std::span<const double> y,
                            const std::vector<std::size_t>& admissible, std::string kind) {
  MetricReport r;
  r.kind = std::move(kind);
  for (std::size_t k : admissible) {
    const double g = std::abs(x[k] - y[k]);
    if (g > r.value || r.witness_index < 0) {
      r.value = g;
      r.witness_index = static_cast<std::int64_t>(k);
    }
  }
  r.witness = detail::concat("entry ", r.witness_index, " of ", admissible.size(), " admissible");
  return r;
}

inline std::vector<std::size_t> nonempty_admissible(const Dictionary& dict, NormKind norm) {
  auto idx = dict.admissible(norm);
  require(!idx.empty(), "dictionary ", dict.id(), " has no entry admissible for ", to_string(norm));
  return idx;
}

}  // namespace detail

/// max over C^ell-admissible entries of |int phi dmu - int phi dnu|. A lower
/// bound of D_ell. `ell` defaults to the dictionary's own ell.
[[nodiscard]] inline MetricReport d_ell(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu,
                                        const Dictionary& dict, std::optional<int> ell = {}) {
  const int l = ell.value_or(dict.key().ell);
  const auto adm = detail::nonempty_admissible(dict, detail::ell_norm(l));
  const auto x = iota_embed(mu, dict);
  const auto y = iota_embed(nu, dict);
  return detail::sup_gap(x.coords, y.coords, adm, detail::concat("d_ell", l));
}

/// As d_ell with the weighted C^2 certificate governing admissibility.
[[nodiscard]] inline MetricReport d_2w(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu,
                                       const Dictionary& dict) {
  const auto adm = detail::nonempty_admissible(dict, NormKind::C2w);
  const auto x = iota_embed(mu, dict);
  const auto y = iota_embed(nu, dict);
  return detail::sup_gap(x.coords, y.coords, adm, "d_2w");
}

/// Exact W1 for the cost min(|x - y|, 1).
[[nodiscard]] inline MetricReport w1_truncated_report(const EmpiricalMeasure& mu,
                                                      const EmpiricalMeasure& nu) {
  require(mu.dim() == nu.dim(), "w1_truncated: dimension mismatch (", mu.dim(), " vs ", nu.dim(), ")");
  const std::size_t d = mu.dim();
  std::vector<double> cost(mu.size() * nu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const auto x = mu.point(i);
    for (std::size_t j = 0; j < nu.size(); ++j) {
      const auto y = nu.point(j);
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += (x[k] - y[k]) * (x[k] - y[k]);
      cost[i * nu.size() + j] = std::min(std::sqrt(s), 1.0);
    }
  }
  const auto res = lp::solve_transport(mu.weights(), nu.weights(), cost);
  MetricReport r;
  r.value = std::max(0.0, res.cost);
  r.kind = "w1_truncated";
  r.witness = detail::concat("plan with ", res.plan.size(), " cells, ", res.pivots, " pivots");
  return r;
}

[[nodiscard]] inline double w1_truncated(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
  return w1_truncated_report(mu, nu).value;
}

/// Exact W1 between random measures with ground metric d_ell (dictionary's own ell).
[[nodiscard]] inline MetricReport ensemble_w1_report(const RandomMeasure& M, const RandomMeasure& N,
                                                     const Dictionary& dict) {
  const auto adm = detail::nonempty_admissible(dict, detail::ell_norm(dict.key().ell));
  std::vector<EmbeddedPoint> xm, xn;
  xm.reserve(M.size());
  xn.reserve(N.size());
  for (const auto& a : M.atoms()) xm.push_back(iota_embed(a, dict));
  for (const auto& a : N.atoms()) xn.push_back(iota_embed(a, dict));
  std::vector<double> cost(M.size() * N.size());
  for (std::size_t i = 0; i < M.size(); ++i) {
    for (std::size_t j = 0; j < N.size(); ++j) {
      cost[i * N.size() + j] = detail::sup_gap(xm[i].coords, xn[j].coords, adm, "").value;
    }
  }
  const auto res = lp::solve_transport(M.weights(), N.weights(), cost);
  MetricReport r;
  r.value = std::max(0.0, res.cost);
  r.kind = "ensemble_w1";
  r.witness = detail::concat("plan with ", res.plan.size(), " cells, ", res.pivots, " pivots");
  return r;
}

[[nodiscard]] inline double ensemble_w1(const RandomMeasure& M, const RandomMeasure& N,
                                        const Dictionary& dict) {
  return ensemble_w1_report(M, N, dict).value;
}

/// Number of leading dictionary entries used to form inner tuples in frak_d.
inline constexpr std::size_t kFrakInnerLimit = 12;

/// max over outer Psi admissible at order h and inner tuples drawn from the first
/// `inner_limit` dictionary entries of |int Psi(L_Phi(mu)) d(M - N)(mu)|.
[[nodiscard]] inline MetricReport frak_d_report(int h, const RandomMeasure& M, const RandomMeasure& N,
                                                const Dictionary& dict,
                                                const std::vector<OuterFunction>& outer_family,
                                                std::size_t inner_limit = kFrakInnerLimit) {
  require(h == 1 || h == 2, "frak_d: h must be 1 or 2, got ", h);
  require(M.dim() == dict.dim() && N.dim() == dict.dim(), "frak_d: dimension mismatch");
  std::vector<std::size_t> family;
  for (std::size_t p = 0; p < outer_family.size(); ++p) {
    if (outer_family[p].certificates().admissible(h)) family.push_back(p);
  }
  require(!family.empty(), "frak_d: no outer function is admissible at order ", h);
  const auto inner = dict.admissible(dict.governing());
  const std::size_t n_inner = std::min(inner_limit, inner.size());
  require(n_inner >= 1, "frak_d: no admissible inner functions");

  auto embed = [&](const RandomMeasure& R) {
    std::vector<Vector> ys;
    for (const auto& a : R.atoms()) {
      Vector y(n_inner);
      for (std::size_t k = 0; k < n_inner; ++k) y[k] = integrate(a, dict[inner[k]]);
      ys.push_back(std::move(y));
    }
    return ys;
  };
  const auto ym = embed(M);
  const auto yn = embed(N);

  MetricReport r;
  r.kind = detail::concat("frak_d", h);
  std::vector<std::size_t> tuple;
  Vector arg;
  std::string best_tuple;
  for (std::size_t p : family) {
    const auto& psi = outer_family[p];
    const std::size_t k = psi.arity();
    tuple.assign(k, 0);
    arg.resize(k);
    for (;;) {
      double sm = 0.0, sn = 0.0;
      for (std::size_t j = 0; j < M.size(); ++j) {
        for (std::size_t q = 0; q < k; ++q) arg[q] = ym[j][tuple[q]];
        sm += M.weight(j) * psi(arg);
      }
      for (std::size_t j = 0; j < N.size(); ++j) {
        for (std::size_t q = 0; q < k; ++q) arg[q] = yn[j][tuple[q]];
        sn += N.weight(j) * psi(arg);
      }
      const double g = std::abs(sm - sn);
      if (g > r.value || r.witness_index < 0) {
        r.value = g;
        r.witness_index = static_cast<std::int64_t>(p);
        best_tuple.clear();
        for (std::size_t q = 0; q < k; ++q) best_tuple += detail::concat(q ? "," : "", inner[tuple[q]]);
      }
      // next tuple (odometer)
      std::size_t q = 0;
      while (q < k && ++tuple[q] == n_inner) tuple[q++] = 0;
      if (q == k) break;
    }
  }
  r.witness = detail::concat("outer ", r.witness_index, " inner (", best_tuple, ")");
  return r;
}

[[nodiscard]] inline double frak_d(int h, const RandomMeasure& M, const RandomMeasure& N,
                                   const Dictionary& dict, const std::vector<OuterFunction>& outer_family,
                                   std::size_t inner_limit = kFrakInnerLimit) {
  return frak_d_report(h, M, N, dict, outer_family, inner_limit).value;
}

}  // namespace mflift

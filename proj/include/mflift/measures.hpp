#pragma once

// Finitely supported stand-ins for the five measure levels:
//   EmpiricalMeasure      mu       in P(R^d)
//   PathMeasure           lambda   in P(C_T(R^d))
//   MeasurePath           (mu_t)   in C_T(P(R^d))
//   MeasurePathEnsemble   Lambda   in P(C_T(P(R^d)))
//   PathMeasureEnsemble   frakL    in P(P(C_T(R^d)))
// plus RandomMeasure / RandomMeasureCurve for M_t in P(P(R^d)), and the
// pushforward maps E, E_t and e_t between them. Everything is immutable once
// constructed; the maps copy coordinates verbatim, so hierarchy identities
// hold with exact floating-point equality.

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "mflift/core.hpp"

namespace mflift {

/// Strictly increasing time nodes 0 = t_0 < ... < t_K = T.
class TimeGrid {
 public:
  /// Relative tolerance used when matching a requested time to a node.
  static constexpr double kNodeTolerance = 1e-9;

  TimeGrid() = default;

  explicit TimeGrid(std::vector<double> nodes) : nodes_(std::move(nodes)) {
    require(nodes_.size() >= 2, "TimeGrid: need at least 2 nodes, got ", nodes_.size());
    require(nodes_.front() == 0.0, "TimeGrid: first node must be 0, got ", nodes_.front());
    for (std::size_t k = 0; k + 1 < nodes_.size(); ++k) {
      require(std::isfinite(nodes_[k + 1]) && nodes_[k + 1] > nodes_[k],
              "TimeGrid: nodes not strictly increasing at index ", k + 1);
    }
  }

  /// n_steps equal steps on [0, horizon]; the last node is exactly `horizon`.
  [[nodiscard]] static TimeGrid uniform(double horizon, std::size_t n_steps) {
    require(horizon > 0.0 && std::isfinite(horizon), "TimeGrid: horizon must be positive");
    require(n_steps >= 1, "TimeGrid: need at least one step");
    std::vector<double> nodes(n_steps + 1);
    for (std::size_t k = 0; k <= n_steps; ++k) {
      nodes[k] = horizon * static_cast<double>(k) / static_cast<double>(n_steps);
    }
    nodes.back() = horizon;
    return TimeGrid(std::move(nodes));
  }

  [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }
  [[nodiscard]] double horizon() const { return nodes_.back(); }
  [[nodiscard]] double operator[](std::size_t k) const { return nodes_[k]; }
  [[nodiscard]] std::span<const double> nodes() const noexcept { return nodes_; }
  [[nodiscard]] double step(std::size_t k) const { return nodes_[k + 1] - nodes_[k]; }

  /// Index of the node equal to t; off-grid times are an error (no interpolation).
  [[nodiscard]] std::size_t index_of(double t) const {
    const double tol = kNodeTolerance * std::max(1.0, horizon());
    const auto it = std::lower_bound(nodes_.begin(), nodes_.end(), t - tol);
    require(it != nodes_.end() && std::abs(*it - t) <= tol, "time ", t,
            " is not a grid node (grid has ", nodes_.size(), " nodes on [0, ", horizon(), "])");
    return static_cast<std::size_t>(it - nodes_.begin());
  }

  bool operator==(const TimeGrid&) const = default;

 private:
  std::vector<double> nodes_;
};

/// A scalar function on R^d with an explicit domain dimension.
struct ScalarFunction {
  std::size_t dim = 0;
  std::function<double(std::span<const double>)> eval;

  [[nodiscard]] double operator()(std::span<const double> x) const { return eval(x); }
};

/// Weighted point cloud, the particle representation of a probability measure.
class EmpiricalMeasure {
 public:
  EmpiricalMeasure() = default;

  /// `coords` holds size() points of dimension `dim`, row-major.
  EmpiricalMeasure(std::size_t dim, std::vector<double> coords, std::vector<double> weights)
      : dim_(dim), coords_(std::move(coords)), weights_(std::move(weights)) {
    require(dim_ >= 1, "EmpiricalMeasure: dimension must be >= 1");
    require(!weights_.empty(), "EmpiricalMeasure: support must be nonempty");
    require(coords_.size() == weights_.size() * dim_, "EmpiricalMeasure: ", coords_.size(),
            " coordinates do not match ", weights_.size(), " points of dimension ", dim_);
    for (std::size_t i = 0; i < coords_.size(); ++i) {
      require(std::isfinite(coords_[i]), "EmpiricalMeasure: non-finite coordinate in point ",
              i / dim_);
    }
    validate_weights(weights_, "EmpiricalMeasure");
  }

  /// Equal weights on the given points.
  [[nodiscard]] static EmpiricalMeasure uniform(std::size_t dim, std::vector<double> coords) {
    require(dim >= 1 && !coords.empty() && coords.size() % dim == 0,
            "EmpiricalMeasure::uniform: bad coordinate count");
    const std::size_t n = coords.size() / dim;
    return EmpiricalMeasure(dim, std::move(coords), uniform_weights(n));
  }

  [[nodiscard]] static EmpiricalMeasure dirac(std::vector<double> point) {
    const std::size_t d = point.size();
    return EmpiricalMeasure(d, std::move(point), {1.0});
  }

  [[nodiscard]] static EmpiricalMeasure from_points(const std::vector<Vector>& points,
                                                    std::vector<double> weights) {
    require(!points.empty(), "EmpiricalMeasure: support must be nonempty");
    const std::size_t d = points.front().size();
    std::vector<double> coords;
    coords.reserve(points.size() * d);
    for (const auto& p : points) {
      require(p.size() == d, "EmpiricalMeasure: points have mixed dimensions");
      coords.insert(coords.end(), p.begin(), p.end());
    }
    return EmpiricalMeasure(d, std::move(coords), std::move(weights));
  }

  [[nodiscard]] std::size_t dim() const noexcept { return dim_; }
  [[nodiscard]] std::size_t size() const noexcept { return weights_.size(); }
  [[nodiscard]] std::span<const double> point(std::size_t i) const {
    return {coords_.data() + i * dim_, dim_};
  }
  [[nodiscard]] double weight(std::size_t i) const { return weights_[i]; }
  [[nodiscard]] std::span<const double> weights() const noexcept { return weights_; }
  [[nodiscard]] std::span<const double> coords() const noexcept { return coords_; }

  /// Weighted mean vector.
  [[nodiscard]] Vector mean() const {
    Vector m(dim_, 0.0);
    for (std::size_t i = 0; i < size(); ++i) {
      for (std::size_t j = 0; j < dim_; ++j) m[j] += weights_[i] * coords_[i * dim_ + j];
    }
    return m;
  }

  bool operator==(const EmpiricalMeasure&) const = default;

 private:
  std::size_t dim_ = 0;
  std::vector<double> coords_;
  std::vector<double> weights_;
};

/// Returns sum_i w_i f(x_i). The callable must expose `dim()` or be a ScalarFunction.
template <typename F>
[[nodiscard]] double integrate(const EmpiricalMeasure& mu, const F& f) {
  std::size_t fdim = 0;
  if constexpr (requires { f.dim(); }) {
    fdim = f.dim();
  } else {
    fdim = f.dim;
  }
  require(fdim == mu.dim(), "integrate: function is defined on R^", fdim,
          " but the measure lives in R^", mu.dim());
  double s = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double v = f(mu.point(i));
    require(std::isfinite(v), "integrate: non-finite integrand at support point ", i);
    s += mu.weight(i) * v;
  }
  return s;
}

/// One continuous curve sampled on a grid.
class SamplePath {
 public:
  SamplePath(TimeGrid grid, std::size_t dim, std::vector<double> states)
      : grid_(std::move(grid)), dim_(dim), states_(std::move(states)) {
    require(dim_ >= 1, "SamplePath: dimension must be >= 1");
    require(states_.size() == grid_.size() * dim_, "SamplePath: ", states_.size() / dim_,
            " states for ", grid_.size(), " grid nodes");
    for (double v : states_) require(std::isfinite(v), "SamplePath: non-finite state");
  }

  [[nodiscard]] const TimeGrid& grid() const noexcept { return grid_; }
  [[nodiscard]] std::size_t dim() const noexcept { return dim_; }
  [[nodiscard]] std::span<const double> state(std::size_t k) const {
    return {states_.data() + k * dim_, dim_};
  }

 private:
  TimeGrid grid_;
  std::size_t dim_;
  std::vector<double> states_;
};

/// Weighted set of sample paths on one shared grid. States are stored node-major so
/// that each time marginal is a contiguous block.
class PathMeasure {
 public:
  PathMeasure() = default;

  /// `states` is laid out as [node][path][coordinate].
  PathMeasure(TimeGrid grid, std::size_t dim, std::vector<double> states,
              std::vector<double> weights)
      : grid_(std::move(grid)), dim_(dim), states_(std::move(states)), weights_(std::move(weights)) {
    require(dim_ >= 1, "PathMeasure: dimension must be >= 1");
    require(!weights_.empty(), "PathMeasure: needs at least one path");
    require(states_.size() == grid_.size() * weights_.size() * dim_,
            "PathMeasure: state buffer has wrong size");
    for (double v : states_) require(std::isfinite(v), "PathMeasure: non-finite state");
    validate_weights(weights_, "PathMeasure");
  }

  [[nodiscard]] static PathMeasure from_paths(const std::vector<SamplePath>& paths,
                                              std::vector<double> weights) {
    require(!paths.empty(), "PathMeasure: needs at least one path");
    require(paths.size() == weights.size(), "PathMeasure: ", paths.size(), " paths but ",
            weights.size(), " weights");
    const TimeGrid& grid = paths.front().grid();
    const std::size_t d = paths.front().dim();
    std::vector<double> states(grid.size() * paths.size() * d);
    for (std::size_t i = 0; i < paths.size(); ++i) {
      require(paths[i].grid() == grid, "PathMeasure: paths must share one grid");
      require(paths[i].dim() == d, "PathMeasure: paths have mixed dimensions");
      for (std::size_t k = 0; k < grid.size(); ++k) {
        const auto s = paths[i].state(k);
        std::copy(s.begin(), s.end(), states.begin() + (k * paths.size() + i) * d);
      }
    }
    return PathMeasure(grid, d, std::move(states), std::move(weights));
  }

  [[nodiscard]] const TimeGrid& grid() const noexcept { return grid_; }
  [[nodiscard]] std::size_t dim() const noexcept { return dim_; }
  [[nodiscard]] std::size_t size() const noexcept { return weights_.size(); }
  [[nodiscard]] std::span<const double> weights() const noexcept { return weights_; }
  [[nodiscard]] double weight(std::size_t i) const { return weights_[i]; }

  [[nodiscard]] std::span<const double> state(std::size_t node, std::size_t path) const {
    return {states_.data() + (node * size() + path) * dim_, dim_};
  }
  /// All path states at one node, [path][coordinate].
  [[nodiscard]] std::span<const double> node_block(std::size_t node) const {
    return {states_.data() + node * size() * dim_, size() * dim_};
  }

  [[nodiscard]] SamplePath path(std::size_t i) const {
    std::vector<double> s(grid_.size() * dim_);
    for (std::size_t k = 0; k < grid_.size(); ++k) {
      const auto x = state(k, i);
      std::copy(x.begin(), x.end(), s.begin() + k * dim_);
    }
    return SamplePath(grid_, dim_, std::move(s));
  }

  /// (e_{t_k})# lambda at node index k.
  [[nodiscard]] EmpiricalMeasure marginal_at(std::size_t node) const {
    const auto block = node_block(node);
    return EmpiricalMeasure(dim_, std::vector<double>(block.begin(), block.end()), weights_);
  }

  bool operator==(const PathMeasure&) const = default;

 private:
  TimeGrid grid_;
  std::size_t dim_ = 0;
  std::vector<double> states_;
  std::vector<double> weights_;
};

/// A curve of probability measures sampled at grid nodes.
class MeasurePath {
 public:
  MeasurePath() = default;

  MeasurePath(TimeGrid grid, std::vector<EmpiricalMeasure> measures)
      : grid_(std::move(grid)), measures_(std::move(measures)) {
    require(measures_.size() == grid_.size(), "MeasurePath: ", measures_.size(),
            " measures for ", grid_.size(), " grid nodes");
    for (const auto& m : measures_) {
      require(m.dim() == measures_.front().dim(), "MeasurePath: entries have mixed dimensions");
    }
  }

  [[nodiscard]] const TimeGrid& grid() const noexcept { return grid_; }
  [[nodiscard]] std::size_t dim() const { return measures_.front().dim(); }
  [[nodiscard]] std::size_t size() const noexcept { return measures_.size(); }
  [[nodiscard]] const EmpiricalMeasure& at(std::size_t node) const { return measures_.at(node); }
  [[nodiscard]] const std::vector<EmpiricalMeasure>& measures() const noexcept {
    return measures_;
  }

  bool operator==(const MeasurePath&) const = default;

 private:
  TimeGrid grid_;
  std::vector<EmpiricalMeasure> measures_;
};

/// Finitely supported random measure: a weighted set of empirical measures.
class RandomMeasure {
 public:
  RandomMeasure() = default;

  RandomMeasure(std::vector<EmpiricalMeasure> atoms, std::vector<double> weights)
      : atoms_(std::move(atoms)), weights_(std::move(weights)) {
    require(!atoms_.empty(), "RandomMeasure: needs at least one atom");
    require(atoms_.size() == weights_.size(), "RandomMeasure: ", atoms_.size(), " atoms but ",
            weights_.size(), " weights");
    for (const auto& a : atoms_) {
      require(a.dim() == atoms_.front().dim(), "RandomMeasure: atoms have mixed dimensions");
    }
    validate_weights(weights_, "RandomMeasure");
  }

  [[nodiscard]] std::size_t dim() const { return atoms_.front().dim(); }
  [[nodiscard]] std::size_t size() const noexcept { return atoms_.size(); }
  [[nodiscard]] const EmpiricalMeasure& atom(std::size_t i) const { return atoms_.at(i); }
  [[nodiscard]] const std::vector<EmpiricalMeasure>& atoms() const noexcept { return atoms_; }
  [[nodiscard]] std::span<const double> weights() const noexcept { return weights_; }
  [[nodiscard]] double weight(std::size_t i) const { return weights_[i]; }

  bool operator==(const RandomMeasure&) const = default;

 private:
  std::vector<EmpiricalMeasure> atoms_;
  std::vector<double> weights_;
};

/// t -> M_t on grid nodes.
class RandomMeasureCurve {
 public:
  RandomMeasureCurve() = default;

  RandomMeasureCurve(TimeGrid grid, std::vector<RandomMeasure> entries)
      : grid_(std::move(grid)), entries_(std::move(entries)) {
    require(entries_.size() == grid_.size(), "RandomMeasureCurve: ", entries_.size(),
            " entries for ", grid_.size(), " grid nodes");
    for (const auto& e : entries_) {
      require(e.dim() == entries_.front().dim(), "RandomMeasureCurve: mixed dimensions");
    }
  }

  [[nodiscard]] const TimeGrid& grid() const noexcept { return grid_; }
  [[nodiscard]] std::size_t dim() const { return entries_.front().dim(); }
  [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
  [[nodiscard]] const RandomMeasure& at(std::size_t node) const { return entries_.at(node); }
  [[nodiscard]] const std::vector<RandomMeasure>& entries() const noexcept { return entries_; }

  bool operator==(const RandomMeasureCurve&) const = default;

 private:
  TimeGrid grid_;
  std::vector<RandomMeasure> entries_;
};

namespace detail {

template <typename Member>
void validate_ensemble(const TimeGrid& grid, const std::vector<Member>& members,
                       std::span<const double> weights, const char* what) {
  require(!members.empty(), what, ": needs at least one member");
  require(members.size() == weights.size(), what, ": ", members.size(), " members but ",
          weights.size(), " weights");
  for (const auto& m : members) {
    require(m.grid() == grid, what, ": members must share one grid");
    require(m.dim() == members.front().dim(), what, ": members have mixed dimensions");
  }
  validate_weights(weights, what);
}

}  // namespace detail

/// Weighted set of measure curves (Lambda).
class MeasurePathEnsemble {
 public:
  MeasurePathEnsemble() = default;

  MeasurePathEnsemble(std::vector<MeasurePath> members, std::vector<double> weights)
      : members_(std::move(members)), weights_(std::move(weights)) {
    require(!members_.empty(), "MeasurePathEnsemble: needs at least one member");
    grid_ = members_.front().grid();
    detail::validate_ensemble(grid_, members_, weights_, "MeasurePathEnsemble");
  }

  [[nodiscard]] const TimeGrid& grid() const noexcept { return grid_; }
  [[nodiscard]] std::size_t dim() const { return members_.front().dim(); }
  [[nodiscard]] std::size_t size() const noexcept { return members_.size(); }
  [[nodiscard]] const MeasurePath& member(std::size_t i) const { return members_.at(i); }
  [[nodiscard]] const std::vector<MeasurePath>& members() const noexcept { return members_; }
  [[nodiscard]] std::span<const double> weights() const noexcept { return weights_; }
  [[nodiscard]] double weight(std::size_t i) const { return weights_[i]; }

  bool operator==(const MeasurePathEnsemble&) const = default;

 private:
  TimeGrid grid_;
  std::vector<MeasurePath> members_;
  std::vector<double> weights_;
};

/// Weighted set of path measures (frakL).
class PathMeasureEnsemble {
 public:
  PathMeasureEnsemble() = default;

  PathMeasureEnsemble(std::vector<PathMeasure> members, std::vector<double> weights)
      : members_(std::move(members)), weights_(std::move(weights)) {
    require(!members_.empty(), "PathMeasureEnsemble: needs at least one member");
    grid_ = members_.front().grid();
    detail::validate_ensemble(grid_, members_, weights_, "PathMeasureEnsemble");
  }

  [[nodiscard]] const TimeGrid& grid() const noexcept { return grid_; }
  [[nodiscard]] std::size_t dim() const { return members_.front().dim(); }
  [[nodiscard]] std::size_t size() const noexcept { return members_.size(); }
  [[nodiscard]] const PathMeasure& member(std::size_t i) const { return members_.at(i); }
  [[nodiscard]] const std::vector<PathMeasure>& members() const noexcept { return members_; }
  [[nodiscard]] std::span<const double> weights() const noexcept { return weights_; }
  [[nodiscard]] double weight(std::size_t i) const { return weights_[i]; }

  bool operator==(const PathMeasureEnsemble&) const = default;

 private:
  TimeGrid grid_;
  std::vector<PathMeasure> members_;
  std::vector<double> weights_;
};

// ---------------------------------------------------------------------------
// Pushforward maps

/// E_t(lambda) = (e_t)# lambda. t must be a grid node.
[[nodiscard]] inline EmpiricalMeasure path_marginal(const PathMeasure& lambda, double t) {
  return lambda.marginal_at(lambda.grid().index_of(t));
}

/// E(lambda) = (E_t(lambda))_t.
[[nodiscard]] inline MeasurePath path_to_curve(const PathMeasure& lambda) {
  std::vector<EmpiricalMeasure> measures;
  measures.reserve(lambda.grid().size());
  for (std::size_t k = 0; k < lambda.grid().size(); ++k) measures.push_back(lambda.marginal_at(k));
  return MeasurePath(lambda.grid(), std::move(measures));
}

/// Lambda = E# frakL.
[[nodiscard]] inline MeasurePathEnsemble ensemble_project(const PathMeasureEnsemble& frakL) {
  std::vector<MeasurePath> members;
  members.reserve(frakL.size());
  for (const auto& lambda : frakL.members()) members.push_back(path_to_curve(lambda));
  return MeasurePathEnsemble(std::move(members),
                             std::vector<double>(frakL.weights().begin(), frakL.weights().end()));
}

/// (e_t)# Lambda at node index k.
[[nodiscard]] inline RandomMeasure curve_eval_at(const MeasurePathEnsemble& Lambda,
                                                 std::size_t node) {
  std::vector<EmpiricalMeasure> atoms;
  atoms.reserve(Lambda.size());
  for (const auto& m : Lambda.members()) atoms.push_back(m.at(node));
  return RandomMeasure(std::move(atoms),
                       std::vector<double>(Lambda.weights().begin(), Lambda.weights().end()));
}

[[nodiscard]] inline RandomMeasure curve_eval(const MeasurePathEnsemble& Lambda, double t) {
  return curve_eval_at(Lambda, Lambda.grid().index_of(t));
}

/// M_t = (e_t)# Lambda for every node.
[[nodiscard]] inline RandomMeasureCurve curve_from_ensemble(const MeasurePathEnsemble& Lambda) {
  std::vector<RandomMeasure> entries;
  entries.reserve(Lambda.grid().size());
  for (std::size_t k = 0; k < Lambda.grid().size(); ++k) entries.push_back(curve_eval_at(Lambda, k));
  return RandomMeasureCurve(Lambda.grid(), std::move(entries));
}

/// (E_t)# frakL at node index k, evaluated member-wise without building Lambda.
[[nodiscard]] inline RandomMeasure ensemble_marginal_at(const PathMeasureEnsemble& frakL,
                                                        std::size_t node) {
  std::vector<EmpiricalMeasure> atoms;
  atoms.reserve(frakL.size());
  for (const auto& lambda : frakL.members()) atoms.push_back(lambda.marginal_at(node));
  return RandomMeasure(std::move(atoms),
                       std::vector<double>(frakL.weights().begin(), frakL.weights().end()));
}

[[nodiscard]] inline RandomMeasure ensemble_marginal(const PathMeasureEnsemble& frakL, double t) {
  return ensemble_marginal_at(frakL, frakL.grid().index_of(t));
}

}  // namespace mflift

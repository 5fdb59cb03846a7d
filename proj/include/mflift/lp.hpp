#pragma once

// Exact solver for the balanced transportation problem
//   min sum_ij c_ij x_ij  s.t.  sum_j x_ij = a_i,  sum_i x_ij = b_j,  x >= 0
// by the transportation simplex (u-v potentials on a spanning-tree basis).

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "mflift/core.hpp"

namespace mflift::lp {

struct PlanEntry {
  std::size_t row = 0;
  std::size_t col = 0;
  double mass = 0.0;
};

struct TransportResult {
  double cost = 0.0;
  std::vector<PlanEntry> plan;  // basic cells carrying positive mass
  std::size_t pivots = 0;
};

inline constexpr double kOptimalityTolerance = 1e-9;
/// Largest number of cost cells accepted (dense pricing is O(rows * cols) per pivot).
inline constexpr std::size_t kMaxCells = 4'000'000;

namespace detail {

class TransportSimplex {
 public:
  TransportSimplex(std::span<const double> supply, std::span<const double> demand,
                   std::span<const double> cost)
      : m_(supply.size()), n_(demand.size()), cost_(cost), flow_(m_ * n_, 0.0),
        basic_(m_ * n_, 0), u_(m_), v_(n_), adj_(m_ + n_) {
    northwest_corner(supply, demand);
  }

  TransportResult solve() {
    const std::size_t max_pivots = 50 * (m_ + n_) * (m_ + n_) + 1000;
    std::size_t degenerate_run = 0;
    TransportResult out;
    for (;;) {
      compute_potentials();
      const bool bland = degenerate_run > m_ + n_;
      std::size_t enter = npos;
      double best = -kOptimalityTolerance;
      for (std::size_t c = 0; c < m_ * n_; ++c) {
        if (basic_[c]) continue;
        const double r = cost_[c] - u_[c / n_] - v_[c % n_];
        if (r < best) {
          best = r;
          enter = c;
          if (bland) break;
        }
      }
      if (enter == npos) break;
      require(out.pivots < max_pivots, "transport LP: no convergence after ", out.pivots, " pivots");
      const double theta = pivot(enter);
      degenerate_run = theta > 0.0 ? 0 : degenerate_run + 1;
      ++out.pivots;
    }
    double total = 0.0;
    for (std::size_t c = 0; c < m_ * n_; ++c) {
      if (basic_[c] && flow_[c] > 0.0) {
        total += flow_[c] * cost_[c];
        out.plan.push_back({c / n_, c % n_, flow_[c]});
      }
    }
    out.cost = total;
    return out;
  }

 private:
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

  void add_basic(std::size_t c) {
    basic_[c] = 1;
    adj_[c / n_].push_back(c);
    adj_[m_ + c % n_].push_back(c);
  }

  void remove_basic(std::size_t c) {
    basic_[c] = 0;
    auto drop = [c](std::vector<std::size_t>& v) {
      for (std::size_t k = 0; k < v.size(); ++k) {
        if (v[k] == c) {
          v[k] = v.back();
          v.pop_back();
          return;
        }
      }
    };
    drop(adj_[c / n_]);
    drop(adj_[m_ + c % n_]);
  }

  // Produces exactly m + n - 1 basic cells, some possibly at zero flow.
  void northwest_corner(std::span<const double> supply, std::span<const double> demand) {
    std::vector<double> a(supply.begin(), supply.end());
    std::vector<double> b(demand.begin(), demand.end());
    std::size_t i = 0;
    std::size_t j = 0;
    for (;;) {
      const std::size_t c = i * n_ + j;
      const double x = std::max(0.0, std::min(a[i], b[j]));
      flow_[c] = x;
      add_basic(c);
      a[i] -= x;
      b[j] -= x;
      if (i == m_ - 1 && j == n_ - 1) break;
      if (i == m_ - 1) {
        ++j;
      } else if (j == n_ - 1) {
        ++i;
      } else if (a[i] < b[j]) {
        ++i;
      } else {
        ++j;
      }
    }
  }

  // Node ids: rows 0..m-1, columns m..m+n-1.
  void compute_potentials() {
    std::vector<char> seen(m_ + n_, 0);
    std::vector<std::size_t> stack{0};
    u_[0] = 0.0;
    seen[0] = 1;
    while (!stack.empty()) {
      const std::size_t node = stack.back();
      stack.pop_back();
      for (std::size_t c : adj_[node]) {
        const std::size_t i = c / n_;
        const std::size_t j = c % n_;
        if (node < m_) {
          if (!seen[m_ + j]) {
            v_[j] = cost_[c] - u_[i];
            seen[m_ + j] = 1;
            stack.push_back(m_ + j);
          }
        } else if (!seen[i]) {
          u_[i] = cost_[c] - v_[j];
          seen[i] = 1;
          stack.push_back(i);
        }
      }
    }
  }

  // Brings cell `enter` into the basis; returns the step length.
  double pivot(std::size_t enter) {
    const std::size_t src = enter / n_;
    const std::size_t dst = m_ + enter % n_;
    // tree path from the entering row to the entering column
    std::vector<std::size_t> parent_cell(m_ + n_, npos);
    std::vector<char> seen(m_ + n_, 0);
    std::vector<std::size_t> queue{src};
    seen[src] = 1;
    for (std::size_t head = 0; head < queue.size() && !seen[dst]; ++head) {
      const std::size_t node = queue[head];
      for (std::size_t c : adj_[node]) {
        const std::size_t other = node < m_ ? m_ + c % n_ : c / n_;
        if (seen[other]) continue;
        seen[other] = 1;
        parent_cell[other] = c;
        queue.push_back(other);
      }
    }
    require(seen[dst], "transport LP: basis is not a spanning tree");
    // cells on the path from dst back to src; the cycle is enter(+), then alternating -, +, ...
    std::vector<std::size_t> path;
    for (std::size_t node = dst; node != src;) {
      const std::size_t c = parent_cell[node];
      path.push_back(c);
      node = node < m_ ? m_ + c % n_ : c / n_;
    }
    double theta = std::numeric_limits<double>::infinity();
    std::size_t leave = npos;
    for (std::size_t k = 0; k < path.size(); k += 2) {
      const std::size_t c = path[k];
      if (flow_[c] < theta || (flow_[c] == theta && c < leave)) {
        theta = flow_[c];
        leave = c;
      }
    }
    for (std::size_t k = 0; k < path.size(); ++k) {
      const std::size_t c = path[k];
      flow_[c] = k % 2 == 0 ? std::max(0.0, flow_[c] - theta) : flow_[c] + theta;
    }
    flow_[enter] = theta;
    flow_[leave] = 0.0;
    add_basic(enter);
    remove_basic(leave);
    return theta;
  }

  std::size_t m_;
  std::size_t n_;
  std::span<const double> cost_;
  std::vector<double> flow_;
  std::vector<char> basic_;
  std::vector<double> u_;
  std::vector<double> v_;
  std::vector<std::vector<std::size_t>> adj_;
};

}  // namespace detail

/// Solves the balanced transportation problem; `cost` is rows x cols, row-major.
[[nodiscard]] inline TransportResult solve_transport(std::span<const double> supply,
                                                     std::span<const double> demand,
                                                     std::span<const double> cost) {
  require(!supply.empty() && !demand.empty(), "transport LP: empty marginal");
  require(supply.size() * demand.size() <= kMaxCells, "transport LP: ", supply.size(), " x ",
          demand.size(), " problem exceeds the exact-solver limit of ", kMaxCells, " cells");
  require(cost.size() == supply.size() * demand.size(), "transport LP: cost matrix has ",
          cost.size(), " entries, expected ", supply.size() * demand.size());
  for (double c : cost) require(std::isfinite(c), "transport LP: non-finite cost");
  const double sa = compensated_sum(supply);
  const double sb = compensated_sum(demand);
  require(std::abs(sa - sb) <= 1e-9 * std::max(1.0, std::abs(sa)),
          "transport LP: unbalanced marginals (", sa, " vs ", sb, ")");
  for (double a : supply) require(a >= 0.0, "transport LP: negative supply");
  for (double b : demand) require(b >= 0.0, "transport LP: negative demand");
  return detail::TransportSimplex(supply, demand, cost).solve();
}

}  // namespace mflift::lp

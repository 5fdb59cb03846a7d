#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mflift {

using Vector = std::vector<double>;

/// Error raised for every contract violation in the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename... Args>
[[nodiscard]] std::string concat(Args&&... args) {
  std::ostringstream oss;
  oss.precision(17);
  (oss << ... << std::forward<Args>(args));
  return oss.str();
}

}  // namespace detail

template <typename... Args>
[[noreturn]] void fail(Args&&... args) {
  throw Error(detail::concat(std::forward<Args>(args)...));
}

template <typename... Args>
void require(bool condition, Args&&... args) {
  if (!condition) fail(std::forward<Args>(args)...);
}

/// Neumaier-compensated sum; weight normalisation checks run at 1e-12 on
/// vectors with 10^4+ entries, where a naive sum drifts past the tolerance.
[[nodiscard]] inline double compensated_sum(std::span<const double> values) {
  double sum = 0.0;
  double comp = 0.0;
  for (double v : values) {
    const double t = sum + v;
    if (std::abs(sum) >= std::abs(v)) {
      comp += (sum - t) + v;
    } else {
      comp += (v - t) + sum;
    }
    sum = t;
  }
  return sum + comp;
}

inline constexpr double kWeightTolerance = 1e-12;

/// Checks that a weight vector is a probability vector.
inline void validate_weights(std::span<const double> weights, const char* what) {
  require(!weights.empty(), what, ": empty weight vector");
  for (std::size_t i = 0; i < weights.size(); ++i) {
    require(std::isfinite(weights[i]) && weights[i] >= 0.0, what, ": weight ", i,
            " is negative or non-finite (", weights[i], ")");
  }
  const double total = compensated_sum(weights);
  require(std::abs(total - 1.0) <= kWeightTolerance, what, ": weights sum to ", total,
          ", expected 1");
}

[[nodiscard]] inline Vector uniform_weights(std::size_t n) {
  return Vector(n, 1.0 / static_cast<double>(n));
}

[[nodiscard]] inline double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

[[nodiscard]] inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Dense row-major matrix, sized for the small d x d and d x m blocks used here.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  [[nodiscard]] static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
  [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
  [[nodiscard]] std::span<double> data() noexcept { return data_; }
  [[nodiscard]] std::span<const double> data() const noexcept { return data_; }

  [[nodiscard]] double frobenius() const { return norm2(data_); }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Writes s * s^T for a d x m row-major block into a d x d row-major buffer.
inline void outer_self(std::span<const double> sigma, std::size_t d, std::size_t m,
                       std::span<double> out) {
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < m; ++k) s += sigma[i * m + k] * sigma[j * m + k];
      out[i * d + j] = s;
      out[j * d + i] = s;
    }
  }
}

/// Composite trapezoid rule on a (possibly non-uniform) node set.
[[nodiscard]] inline double trapezoid(std::span<const double> nodes,
                                      std::span<const double> values) {
  double s = 0.0;
  for (std::size_t k = 0; k + 1 < nodes.size(); ++k) {
    s += 0.5 * (nodes[k + 1] - nodes[k]) * (values[k] + values[k + 1]);
  }
  return s;
}

/// Median of a copy of the input; the mean of the two central values for even sizes.
[[nodiscard]] inline double median(std::vector<double> values) {
  require(!values.empty(), "median of empty sample");
  const std::size_t n = values.size();
  std::sort(values.begin(), values.end());
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

/// Linear-interpolated empirical quantile, q in [0, 1].
[[nodiscard]] inline double quantile(std::vector<double> values, double q) {
  require(!values.empty(), "quantile of empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

}  // namespace mflift

// Distances between two Gaussian clouds as one of them is shifted: the dual
// metrics over a bump dictionary next to the truncated W1 they are bounded by.

#include <cstdio>

#include "mflift/dynamics.hpp"
#include "mflift/metrics.hpp"

using namespace mflift;

int main() {
  const auto d1 = build_dictionary(1, false, 1, 64, 7);
  const auto d2 = build_dictionary(2, false, 1, 64, 7);
  const auto d2w = build_dictionary(2, true, 1, 64, 7);
  const auto mu = gaussian_quantile_measure(0.0, 1.0, 200);

  std::printf("%6s %12s %12s %12s %12s\n", "shift", "d_ell1", "d_ell2", "d_2w", "w1_trunc");
  for (double shift : {0.0, 0.05, 0.1, 0.25, 0.5, 1.0, 2.0, 4.0}) {
    const auto nu = gaussian_quantile_measure(shift, 1.0, 200);
    std::printf("%6.2f %12.5e %12.5e %12.5e %12.5e\n", shift, d_ell(mu, nu, d1).value, d_ell(mu, nu, d2).value,
                d_2w(mu, nu, d2w).value, w1_truncated(mu, nu));
  }

  // the same at the level of random measures
  const auto outers = build_outer_family(12, 3, 8);
  std::vector<EmpiricalMeasure> a, b;
  for (int i = 0; i < 3; ++i) {
    a.push_back(gaussian_quantile_measure(0.3 * i, 0.5, 40));
    b.push_back(gaussian_quantile_measure(0.3 * i + 0.2, 0.5, 40));
  }
  const RandomMeasure M(a, uniform_weights(3)), N(b, uniform_weights(3));
  std::printf("\nensemble_w1 %.5e  frak_d(1) %.5e  frak_d(2) %.5e\n", ensemble_w1(M, N, d1), frak_d(1, M, N, d2, outers),
              frak_d(2, M, N, d2, outers));
}

#pragma once

// Test-side oracle for significance testing: a two-sided permutation test on
// the difference of means. Kept independent of the library's Welch
// implementation on purpose.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "rrl/rng.hpp"

namespace testsupport {

inline double permutation_test(std::span<const double> a, std::span<const double> b,
                               int n_perms, std::uint64_t seed) {
  const std::size_t na = a.size();
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());

  const auto mean_diff = [&](const std::vector<double>& xs) {
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < na; ++i) ma += xs[i];
    for (std::size_t i = na; i < xs.size(); ++i) mb += xs[i];
    return ma / static_cast<double>(na) - mb / static_cast<double>(xs.size() - na);
  };

  const double observed = std::abs(mean_diff(pooled));
  rrl::Rng rng(seed);
  int at_least_as_extreme = 0;
  std::vector<double> shuffled = pooled;
  for (int p = 0; p < n_perms; ++p) {
    for (std::size_t i = shuffled.size() - 1; i > 0; --i) {
      const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<int>(i + 1)));
      std::swap(shuffled[i], shuffled[j]);
    }
    if (std::abs(mean_diff(shuffled)) >= observed - 1e-15) ++at_least_as_extreme;
  }
  return static_cast<double>(at_least_as_extreme + 1) / static_cast<double>(n_perms + 1);
}

}  // namespace testsupport

#pragma once

#include "pkck/common.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace pkck {

double mean_of(const std::vector<double>& xs);
// Sample standard deviation (n-1 denominator); 0 for n < 2.
double sample_std(const std::vector<double>& xs);
// Population standard deviation (n denominator).
double population_std(const std::vector<double>& xs);

// Nearest-rank quantile (q in [0,1]) over a copy of xs.
double quantile_nearest_rank(std::vector<double> xs, double q);

struct BandwidthPolicy {
  enum class Kind { Silverman, Fixed } kind = Kind::Silverman;
  double fixed_value = 0.0;
  static BandwidthPolicy silverman() { return {}; }
  static BandwidthPolicy fixed(double h) { return {Kind::Fixed, h}; }
};

double silverman_bandwidth(const std::vector<double>& xs);

struct KdeResult {
  std::vector<std::pair<double, double>> grid;  // (x, density)
  double bandwidth = 0.0;
};

// Gaussian-kernel KDE evaluated on a uniform grid spanning the sample range
// plus 4 bandwidths on each side; the trapezoidal integral is ~1.
KdeResult gaussian_kde(const std::vector<double>& samples, const BandwidthPolicy& policy,
                       int grid_points = 512);

double trapezoid_integral(const std::vector<std::pair<double, double>>& grid);

struct BootstrapInterval {
  double estimate = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

// Percentile bootstrap (2.5/97.5) of the mean; deterministic under seed.
BootstrapInterval bootstrap_mean(const std::vector<double>& xs, int resamples, std::uint64_t seed);

// Generic percentile bootstrap over index resamples: `statistic` receives the
// resampled index multiset and returns the statistic value.
template <typename F>
BootstrapInterval bootstrap_indices(std::size_t n, int resamples, std::uint64_t seed, F&& statistic) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  BootstrapInterval out;
  out.estimate = statistic(idx);
  if (n == 0 || resamples <= 0) return out;
  Rng rng(seed);
  std::vector<double> stats(static_cast<std::size_t>(resamples));
  std::vector<std::size_t> draw(n);
  for (int r = 0; r < resamples; ++r) {
    for (std::size_t i = 0; i < n; ++i) draw[i] = static_cast<std::size_t>(rng.next_u64() % n);
    stats[static_cast<std::size_t>(r)] = statistic(draw);
  }
  std::vector<double> sorted = stats;
  out.lo = quantile_nearest_rank(sorted, 0.025);
  out.hi = quantile_nearest_rank(sorted, 0.975);
  return out;
}

}  // namespace pkck

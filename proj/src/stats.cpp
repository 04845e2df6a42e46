#include "pkck/stats.hpp"

#include <algorithm>
#include <cmath>

namespace pkck {

double mean_of(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

namespace {
double sq_dev_sum(const std::vector<double>& xs, double mu) {
  double s = 0.0;
  for (double x : xs) s += (x - mu) * (x - mu);
  return s;
}
}  // namespace

double sample_std(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  return std::sqrt(sq_dev_sum(xs, mean_of(xs)) / static_cast<double>(xs.size() - 1));
}

double population_std(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  return std::sqrt(sq_dev_sum(xs, mean_of(xs)) / static_cast<double>(xs.size()));
}

double quantile_nearest_rank(std::vector<double> xs, double q) {
  if (xs.empty()) throw ValidationError("quantile of empty sample");
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  std::size_t rank = static_cast<std::size_t>(std::ceil(q * n));
  if (rank == 0) rank = 1;
  if (rank > xs.size()) rank = xs.size();
  return xs[rank - 1];
}

double silverman_bandwidth(const std::vector<double>& xs) {
  const double sigma = sample_std(xs);
  const double iqr =
      quantile_nearest_rank(xs, 0.75) - quantile_nearest_rank(xs, 0.25);
  double spread = sigma;
  if (iqr > 0.0) spread = std::min(sigma > 0.0 ? sigma : iqr / 1.34, iqr / 1.34);
  const double n = static_cast<double>(xs.size());
  double h = 0.9 * spread * std::pow(n, -0.2);
  if (h <= 0.0) {
    // Degenerate (point-mass) sample: fall back to a narrow kernel so the
    // density still integrates to one.
    double scale = 0.0;
    for (double x : xs) scale = std::max(scale, std::abs(x));
    h = 1e-3 * (scale + 1.0);
  }
  return h;
}

KdeResult gaussian_kde(const std::vector<double>& samples, const BandwidthPolicy& policy,
                       int grid_points) {
  if (samples.empty()) throw ValidationError("kde over empty sample");
  if (grid_points < 2) throw ValidationError("kde grid needs at least 2 points");

  double h = policy.kind == BandwidthPolicy::Kind::Fixed ? policy.fixed_value
                                                         : silverman_bandwidth(samples);
  if (h <= 0.0) throw ValidationError("kde bandwidth must be positive");

  const auto [mn_it, mx_it] = std::minmax_element(samples.begin(), samples.end());
  const double lo = *mn_it - 4.0 * h;
  const double hi = *mx_it + 4.0 * h;
  const double dx = (hi - lo) / static_cast<double>(grid_points - 1);
  const double norm = 1.0 / (static_cast<double>(samples.size()) * h * std::sqrt(2.0 * M_PI));

  KdeResult out;
  out.bandwidth = h;
  out.grid.resize(static_cast<std::size_t>(grid_points));
  for (int i = 0; i < grid_points; ++i) {
    const double x = lo + dx * i;
    double density = 0.0;
    for (double s : samples) {
      const double z = (x - s) / h;
      density += std::exp(-0.5 * z * z);
    }
    out.grid[static_cast<std::size_t>(i)] = {x, density * norm};
  }
  return out;
}

double trapezoid_integral(const std::vector<std::pair<double, double>>& grid) {
  double total = 0.0;
  for (std::size_t i = 1; i < grid.size(); ++i) {
    const double dx = grid[i].first - grid[i - 1].first;
    total += 0.5 * dx * (grid[i].second + grid[i - 1].second);
  }
  return total;
}

BootstrapInterval bootstrap_mean(const std::vector<double>& xs, int resamples, std::uint64_t seed) {
  return bootstrap_indices(xs.size(), resamples, seed, [&](const std::vector<std::size_t>& idx) {
    double s = 0.0;
    for (std::size_t i : idx) s += xs[i];
    return idx.empty() ? 0.0 : s / static_cast<double>(idx.size());
  });
}

}  // namespace pkck

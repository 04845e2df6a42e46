#pragma once

#include "pkck/subspace.hpp"

#include <string>
#include <vector>

namespace pkck {

// Bivariate Gaussian law for the planted (c_i, p_i) contributions.
struct ContributionLaw {
  double mean_c = 1.5;
  double mean_p = 1.5;
  double std_c = 0.5;
  double std_p = 0.5;
  double rho = 0.0;  // correlation in [-1, 1]

  // Presets shaped like the interaction taxonomy: supportive draws the two
  // contributions positively correlated, conflicting anti-correlated,
  // complementary independent.
  static ContributionLaw supportive() { return {1.5, 1.5, 0.5, 0.5, 0.8}; }
  static ContributionLaw conflicting() { return {1.5, 1.5, 0.6, 0.6, -0.8}; }
  static ContributionLaw complementary() { return {1.5, 1.5, 0.6, 0.6, 0.0}; }
  static ContributionLaw from_name(const std::string& name);
};

struct PlantedConfig {
  int d = 16;  // must be >= 3 so noise fits in the orthogonal complement
  int num_samples = 1000;
  ContributionLaw contribution_law;
  double noise_scale = 0.0;  // ||xi|| relative to the in-span signal norm
  std::uint64_t seed = 1;
};

struct PlantedSample {
  Vector h;
  double c_true = 0.0;
  double p_true = 0.0;
  double xi_norm = 0.0;
};

struct PlantedData {
  std::vector<PlantedSample> samples;
  Vector u_ck;
  Vector u_pk;
  PlantedConfig config;

  Matrix hidden_matrix() const;  // N x d
};

PlantedData plant(const PlantedConfig& config);

struct WitnessResult {
  std::pair<double, double> pair_1;
  std::pair<double, double> pair_2;
  double reading_1 = 0.0;
  double reading_2 = 0.0;
  double gap() const { return std::abs(reading_1 - reading_2); }
};

// Executable form of the rank-1 non-identifiability construction: the second
// contribution pair (c + delta, p - (a/b) delta) produces the same probe
// reading through the actual rank-1 probe.
WitnessResult nonidentifiability_witness(const Vector& v, double c, double p, double delta,
                                         const Vector& u_ck, const Vector& u_pk);

struct RecoveryReport {
  double mean_abs_error_c = 0.0;
  double mean_abs_error_p = 0.0;
  double alignment_c = 0.0;  // |<u_c, u_CK>|
  double alignment_p = 0.0;  // |<u_p, u_PK>|
  // Secondary diagnostic: signed recovery errors, same aggregation.
  double mean_signed_error_c = 0.0;
  double mean_signed_error_p = 0.0;
};

RecoveryReport recover_contributions(const ProjectionSubspace& P,
                                     const PlantedData& data);

// (rank, EV_rank) pairs for plotting.
std::vector<std::pair<int, double>> rank_sweep(const Matrix& H, const std::vector<int>& ranks,
                                               bool centered = false);

// Planted datasets persist in the shared hidden-matrix format
// (JSON header line + base64 little-endian float64 row-major payload).
void save_hidden_matrix(const Matrix& H, const std::filesystem::path& path);
Matrix load_hidden_matrix(const std::filesystem::path& path);

}  // namespace pkck

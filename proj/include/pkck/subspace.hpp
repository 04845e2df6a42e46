#pragma once

#include "pkck/common.hpp"
#include "pkck/stats.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace pkck {

enum class KnowledgeAxis { CK, PK };

const char* to_string(KnowledgeAxis axis);
KnowledgeAxis axis_from_string(const std::string& s);

struct SubspaceProvenance {
  std::string model_id;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string loss_trace_summary;
  bool label_conflict = false;
};

// Rank-1 or rank-2 orthonormal basis at one model layer. For rank 2 the
// columns carry CK/PK labels.
class ProjectionSubspace {
public:
  ProjectionSubspace() = default;
  static ProjectionSubspace rank1(Vector u, int layer);
  static ProjectionSubspace rank2(Vector u_c, Vector u_p, int layer);

  int rank() const { return static_cast<int>(basis_.cols()); }
  Eigen::Index dim() const { return basis_.rows(); }
  int layer() const { return layer_; }
  const Matrix& basis() const { return basis_; }
  Vector column(int i) const { return basis_.col(i); }

  bool labeled() const { return !labels_.empty(); }
  const std::map<int, KnowledgeAxis>& labels() const { return labels_; }
  Vector direction(KnowledgeAxis axis) const;

  SubspaceProvenance& provenance() { return provenance_; }
  const SubspaceProvenance& provenance() const { return provenance_; }

  // Unit norms and pairwise orthogonality within 1e-6; rank-2 requires both
  // labels exactly once.
  void validate() const;

private:
  Matrix basis_;  // d x rank, columns are the basis vectors
  int layer_ = 0;
  std::map<int, KnowledgeAxis> labels_;
  SubspaceProvenance provenance_;
};

struct Component {
  double scalar = 0.0;
  Vector direction;
  std::optional<KnowledgeAxis> label;
};

struct Decomposition {
  Vector residual;
  std::vector<Component> components;  // per basis column, in column order
  const Component& by_axis(KnowledgeAxis axis) const;
};

// h = residual + sum scalar_k * direction_k, residual orthogonal to the span.
Decomposition decompose(const ProjectionSubspace& P, const Vector& h);

struct StepAttribution {
  int step = 0;
  double c_raw = 0.0;   // |<u_c, h>|
  double p_raw = 0.0;   // |<u_p, h>|
  double alpha_c = 0.0;
  double alpha_p = 0.0;
  double delta = 0.0;   // alpha_p - alpha_c
  bool degenerate = false;
};

inline constexpr double kDegeneracyFloor = 1e-9;

// Normalized PK/CK scores from absolute projections; (0.5, 0.5) with the
// degenerate flag when both raw magnitudes vanish.
StepAttribution attribution(const ProjectionSubspace& P, const Vector& h, int step = 0);

// <v, h> for a unit probe vector v.
double rank1_probe(const Vector& v, const Vector& h);

struct SpectrumReport {
  std::vector<double> singular_values;  // descending, length min(N, d)
  std::map<int, double> ev;             // rank -> cumulative explained variance
  bool centered = false;
  int num_samples = 0;
};

// Cumulative explained variance of the top-r singular directions of H
// (rows = samples). `ev` covers every rank 1..min(N, d); max_rank is
// validated against that range for callers that slice the curve.
SpectrumReport explained_variance(const Matrix& H, int max_rank, bool centered = false);

struct ComponentDistribution {
  std::vector<double> samples;
  std::vector<std::pair<double, double>> kde_grid;
  double bandwidth = 0.0;
  double mean = 0.0;
  double std_dev = 0.0;
  double location_t = 0.0;  // one-sample t statistic for mean == 0
};

ComponentDistribution component_distribution(const ProjectionSubspace& P, const Matrix& H,
                                             const BandwidthPolicy& policy = BandwidthPolicy::silverman());

// Gram-Schmidt in the given order; the first vector keeps its direction.
// Throws with the Gram determinant when the inputs are near-dependent.
std::vector<Vector> orthonormalize(const std::vector<Vector>& vectors);

// Artifact IO. The envelope stores the basis twice: base64 little-endian
// float32 for interoperability and plain JSON arrays at full precision so a
// round trip reproduces the basis bit-exactly.
void save_subspace(const ProjectionSubspace& P, const std::filesystem::path& path);
ProjectionSubspace load_subspace(const std::filesystem::path& path);

}  // namespace pkck

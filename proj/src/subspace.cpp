#include "pkck/subspace.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>

namespace pkck {

using nlohmann::json;

const char* to_string(KnowledgeAxis axis) { return axis == KnowledgeAxis::CK ? "CK" : "PK"; }

KnowledgeAxis axis_from_string(const std::string& s) {
  if (s == "CK" || s == "ck") return KnowledgeAxis::CK;
  if (s == "PK" || s == "pk") return KnowledgeAxis::PK;
  throw ValidationError("unknown knowledge axis: " + s);
}

ProjectionSubspace ProjectionSubspace::rank1(Vector u, int layer) {
  ProjectionSubspace P;
  P.basis_.resize(u.size(), 1);
  P.basis_.col(0) = u;
  P.layer_ = layer;
  P.validate();
  return P;
}

ProjectionSubspace ProjectionSubspace::rank2(Vector u_c, Vector u_p, int layer) {
  if (u_c.size() != u_p.size()) throw ValidationError("basis vectors differ in dimension");
  ProjectionSubspace P;
  P.basis_.resize(u_c.size(), 2);
  P.basis_.col(0) = u_c;
  P.basis_.col(1) = u_p;
  P.labels_ = {{0, KnowledgeAxis::CK}, {1, KnowledgeAxis::PK}};
  P.layer_ = layer;
  P.validate();
  return P;
}

Vector ProjectionSubspace::direction(KnowledgeAxis axis) const {
  for (const auto& [col, label] : labels_) {
    if (label == axis) return basis_.col(col);
  }
  throw ValidationError(std::string("subspace has no direction labeled ") + to_string(axis));
}

void ProjectionSubspace::validate() const {
  if (basis_.cols() < 1 || basis_.cols() > 2) throw ValidationError("subspace rank must be 1 or 2");
  constexpr double tol = 1e-6;
  for (int i = 0; i < basis_.cols(); ++i) {
    if (std::abs(basis_.col(i).norm() - 1.0) > tol) {
      throw ValidationError("basis column is not unit norm");
    }
    for (int j = i + 1; j < basis_.cols(); ++j) {
      if (std::abs(basis_.col(i).dot(basis_.col(j))) > tol) {
        throw ValidationError("basis columns are not orthogonal");
      }
    }
  }
  if (basis_.cols() == 2) {
    if (labels_.size() != 2) throw ValidationError("rank-2 subspace must label both columns");
    bool has_ck = false, has_pk = false;
    for (const auto& [col, label] : labels_) {
      (label == KnowledgeAxis::CK ? has_ck : has_pk) = true;
      if (col < 0 || col > 1) throw ValidationError("label refers to a missing column");
    }
    if (!has_ck || !has_pk) throw ValidationError("rank-2 subspace needs one CK and one PK label");
  }
}

const Component& Decomposition::by_axis(KnowledgeAxis axis) const {
  for (const auto& c : components) {
    if (c.label && *c.label == axis) return c;
  }
  throw ValidationError("decomposition has no component for requested axis");
}

Decomposition decompose(const ProjectionSubspace& P, const Vector& h) {
  if (h.size() != P.dim()) throw ValidationError("decompose: dimension mismatch");
  Decomposition out;
  out.residual = h;
  for (int i = 0; i < P.rank(); ++i) {
    Component c;
    c.direction = P.column(i);
    c.scalar = c.direction.dot(h);
    const auto it = P.labels().find(i);
    if (it != P.labels().end()) c.label = it->second;
    out.residual -= c.scalar * c.direction;
    out.components.push_back(std::move(c));
  }
  return out;
}

StepAttribution attribution(const ProjectionSubspace& P, const Vector& h, int step) {
  if (P.rank() != 2) throw ValidationError("attribution requires a rank-2 subspace");
  if (h.size() != P.dim()) throw ValidationError("attribution: dimension mismatch");
  StepAttribution a;
  a.step = step;
  a.c_raw = std::abs(P.direction(KnowledgeAxis::CK).dot(h));
  a.p_raw = std::abs(P.direction(KnowledgeAxis::PK).dot(h));
  const double total = a.c_raw + a.p_raw;
  if (total > kDegeneracyFloor) {
    a.alpha_c = a.c_raw / total;
    a.alpha_p = a.p_raw / total;
  } else {
    a.alpha_c = 0.5;
    a.alpha_p = 0.5;
    a.degenerate = true;
  }
  a.delta = a.alpha_p - a.alpha_c;
  return a;
}

double rank1_probe(const Vector& v, const Vector& h) {
  if (v.size() != h.size()) throw ValidationError("rank1_probe: dimension mismatch");
  if (std::abs(v.norm() - 1.0) > 1e-6) throw ValidationError("rank1_probe: probe vector must be unit norm");
  return v.dot(h);
}

SpectrumReport explained_variance(const Matrix& H, int max_rank, bool centered) {
  const int n = static_cast<int>(H.rows());
  const int d = static_cast<int>(H.cols());
  if (n < 2) throw ValidationError("explained_variance needs at least 2 samples");
  const int full = std::min(n, d);
  if (max_rank < 1) throw ValidationError("max_rank must be >= 1");

  Matrix M = H;
  if (centered) {
    const Eigen::RowVectorXd mu = H.colwise().mean();
    M.rowwise() -= mu;
  }
  Eigen::BDCSVD<Matrix> svd(M);
  const Vector sv = svd.singularValues();

  SpectrumReport report;
  report.centered = centered;
  report.num_samples = n;
  report.singular_values.assign(sv.data(), sv.data() + sv.size());

  double total = 0.0;
  for (double s : report.singular_values) total += s * s;
  // `running` accumulates in the same order as `total`, so EV at full rank
  // is exactly 1.
  double running = 0.0;
  for (int r = 1; r <= full; ++r) {
    const double s = report.singular_values[static_cast<std::size_t>(r - 1)];
    running += s * s;
    report.ev[r] = total > 0.0 ? running / total : 1.0;
  }
  return report;
}

ComponentDistribution component_distribution(const ProjectionSubspace& P, const Matrix& H,
                                             const BandwidthPolicy& policy) {
  if (P.rank() != 1) throw ValidationError("component_distribution requires a rank-1 subspace");
  if (H.cols() != P.dim()) throw ValidationError("component_distribution: dimension mismatch");
  if (H.rows() < 5) throw ValidationError("component_distribution needs at least 5 samples");

  ComponentDistribution out;
  const Vector u = P.column(0);
  out.samples.resize(static_cast<std::size_t>(H.rows()));
  for (Eigen::Index i = 0; i < H.rows(); ++i) {
    out.samples[static_cast<std::size_t>(i)] = u.dot(H.row(i));
  }
  const KdeResult kde = gaussian_kde(out.samples, policy);
  out.kde_grid = kde.grid;
  out.bandwidth = kde.bandwidth;
  out.mean = mean_of(out.samples);
  out.std_dev = sample_std(out.samples);
  const double n = static_cast<double>(out.samples.size());
  if (out.std_dev > 0.0) {
    out.location_t = out.mean / (out.std_dev / std::sqrt(n));
  } else {
    out.location_t = out.mean == 0.0 ? 0.0 : std::copysign(1e30, out.mean);
  }
  return out;
}

std::vector<Vector> orthonormalize(const std::vector<Vector>& vectors) {
  if (vectors.empty()) throw ValidationError("orthonormalize: empty input");
  const Eigen::Index d = vectors.front().size();
  const auto k = static_cast<Eigen::Index>(vectors.size());

  Matrix V(d, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    if (vectors[static_cast<std::size_t>(i)].size() != d) {
      throw ValidationError("orthonormalize: mixed dimensions");
    }
    V.col(i) = vectors[static_cast<std::size_t>(i)];
  }
  const Matrix gram = V.transpose() * V;
  const double gram_det = gram.determinant();
  if (!(gram_det > 1e-12)) {
    throw ValidationError("orthonormalize: near-dependent input (Gram determinant " +
                          std::to_string(gram_det) + ")");
  }

  std::vector<Vector> basis;
  basis.reserve(static_cast<std::size_t>(k));
  for (Eigen::Index i = 0; i < k; ++i) {
    Vector v = V.col(i);
    for (const Vector& b : basis) v -= b.dot(v) * b;
    const double norm = v.norm();
    if (norm <= 1e-12) throw ValidationError("orthonormalize: vector collapsed during projection");
    basis.push_back(v / norm);
  }
  return basis;
}

namespace {

json vector_to_plain(const Vector& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

Vector vector_from_plain(const json& arr) {
  Vector v(static_cast<Eigen::Index>(arr.size()));
  Eigen::Index i = 0;
  for (const auto& x : arr) v(i++) = x.get<double>();
  return v;
}

constexpr int kArtifactVersion = 1;

}  // namespace

void save_subspace(const ProjectionSubspace& P, const std::filesystem::path& path) {
  P.validate();
  json j;
  j["format"] = "pkck-subspace";
  j["version"] = kArtifactVersion;
  j["model_id"] = P.provenance().model_id;
  j["layer"] = P.layer();
  j["rank"] = P.rank();
  j["d"] = static_cast<int>(P.dim());
  if (P.labeled()) {
    json labels;
    for (const auto& [col, axis] : P.labels()) labels[std::to_string(col)] = to_string(axis);
    j["direction_labels"] = labels;
  }
  json prov;
  prov["seeds"] = P.provenance().seed;
  prov["config_hash"] = P.provenance().config_hash;
  prov["loss_trace_summary"] = P.provenance().loss_trace_summary;
  prov["label_conflict"] = P.provenance().label_conflict;
  j["provenance"] = prov;

  json basis_plain = json::array();
  json basis_b64 = json::array();
  for (int c = 0; c < P.rank(); ++c) {
    const Vector col = P.column(c);
    basis_plain.push_back(vector_to_plain(col));
    std::vector<float> f32(static_cast<std::size_t>(col.size()));
    for (Eigen::Index i = 0; i < col.size(); ++i) f32[static_cast<std::size_t>(i)] = static_cast<float>(col(i));
    basis_b64.push_back(base64_encode_f32(f32));
  }
  j["basis"] = basis_plain;
  j["basis_b64_f32"] = basis_b64;
  atomic_write_file(path, j.dump() + "\n");
}

ProjectionSubspace load_subspace(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw FormatError(std::string("subspace artifact is corrupted: ") + e.what());
  }
  if (j.value("format", std::string()) != "pkck-subspace") {
    throw FormatError("not a subspace artifact: " + path.string());
  }
  if (j.value("version", -1) != kArtifactVersion) {
    throw FormatError("unsupported subspace artifact version");
  }
  const int rank = j.at("rank").get<int>();
  const int d = j.at("d").get<int>();
  const int layer = j.at("layer").get<int>();

  std::vector<Vector> cols;
  if (j.contains("basis")) {
    for (const auto& arr : j.at("basis")) cols.push_back(vector_from_plain(arr));
  } else if (j.contains("basis_b64_f32")) {
    for (const auto& text : j.at("basis_b64_f32")) {
      const auto f32 = base64_decode_f32(text.get<std::string>());
      Vector v(static_cast<Eigen::Index>(f32.size()));
      for (std::size_t i = 0; i < f32.size(); ++i) v(static_cast<Eigen::Index>(i)) = f32[i];
      cols.push_back(std::move(v));
    }
  } else {
    throw FormatError("subspace artifact carries no basis payload");
  }
  if (static_cast<int>(cols.size()) != rank) throw FormatError("basis payload does not match rank");
  for (const auto& c : cols) {
    if (c.size() != d) throw FormatError("basis vector length does not match d");
  }

  ProjectionSubspace P;
  if (rank == 1) {
    P = ProjectionSubspace::rank1(cols[0], layer);
  } else if (rank == 2) {
    if (!j.contains("direction_labels")) {
      throw FormatError("rank-2 subspace artifact is missing direction_labels");
    }
    std::map<int, KnowledgeAxis> labels;
    for (const auto& [key, value] : j.at("direction_labels").items()) {
      labels[std::stoi(key)] = axis_from_string(value.get<std::string>());
    }
    if (labels.size() != 2 || !labels.count(0) || !labels.count(1)) {
      throw FormatError("rank-2 subspace artifact needs labels for both columns");
    }
    const Vector u_c = labels.at(0) == KnowledgeAxis::CK ? cols[0] : cols[1];
    const Vector u_p = labels.at(0) == KnowledgeAxis::CK ? cols[1] : cols[0];
    if (labels.at(0) == labels.at(1)) throw FormatError("rank-2 labels must differ");
    P = ProjectionSubspace::rank2(u_c, u_p, layer);
  } else {
    throw FormatError("unsupported subspace rank");
  }

  const auto& prov = j.at("provenance");
  P.provenance().model_id = j.value("model_id", std::string());
  P.provenance().seed = prov.value("seeds", std::uint64_t{0});
  P.provenance().config_hash = prov.value("config_hash", std::string());
  P.provenance().loss_trace_summary = prov.value("loss_trace_summary", std::string());
  P.provenance().label_conflict = prov.value("label_conflict", false);
  return P;
}

}  // namespace pkck

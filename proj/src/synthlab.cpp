#include "pkck/synthlab.hpp"

#include <nlohmann/json.hpp>

#include <cmath>

namespace pkck {

using nlohmann::json;

ContributionLaw ContributionLaw::from_name(const std::string& name) {
  if (name == "supportive") return supportive();
  if (name == "conflicting") return conflicting();
  if (name == "complementary") return complementary();
  throw ValidationError("unknown contribution law preset: " + name);
}

Matrix PlantedData::hidden_matrix() const {
  Matrix H(static_cast<Eigen::Index>(samples.size()), config.d);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    H.row(static_cast<Eigen::Index>(i)) = samples[i].h;
  }
  return H;
}

PlantedData plant(const PlantedConfig& config) {
  if (config.d < 3) throw ValidationError("plant: d must be >= 3");
  if (config.num_samples < 1) throw ValidationError("plant: num_samples must be >= 1");
  if (config.noise_scale < 0.0) throw ValidationError("plant: noise_scale must be >= 0");
  if (std::abs(config.contribution_law.rho) > 1.0) throw ValidationError("plant: |rho| must be <= 1");

  Rng rng(config.seed);
  const std::vector<Vector> axes = orthonormalize(
      {rng.normal_vector(config.d), rng.normal_vector(config.d)});

  PlantedData data;
  data.config = config;
  data.u_ck = axes[0];
  data.u_pk = axes[1];
  data.samples.reserve(static_cast<std::size_t>(config.num_samples));

  const ContributionLaw& law = config.contribution_law;
  const double rho_c = std::sqrt(std::max(0.0, 1.0 - law.rho * law.rho));
  for (int i = 0; i < config.num_samples; ++i) {
    const double z1 = rng.normal();
    const double z2 = rng.normal();
    PlantedSample s;
    s.c_true = law.mean_c + law.std_c * z1;
    s.p_true = law.mean_p + law.std_p * (law.rho * z1 + rho_c * z2);

    const Vector signal = s.c_true * data.u_ck + s.p_true * data.u_pk;
    Vector xi = Vector::Zero(config.d);
    if (config.noise_scale > 0.0) {
      xi = rng.normal_vector(config.d);
      xi -= data.u_ck.dot(xi) * data.u_ck;
      xi -= data.u_pk.dot(xi) * data.u_pk;
      const double n = xi.norm();
      if (n > 0.0) xi *= config.noise_scale * signal.norm() / n;
    }
    s.xi_norm = xi.norm();
    s.h = signal + xi;
    data.samples.push_back(std::move(s));
  }
  return data;
}

WitnessResult nonidentifiability_witness(const Vector& v, double c, double p, double delta,
                                         const Vector& u_ck, const Vector& u_pk) {
  if (std::abs(v.norm() - 1.0) > 1e-6) throw ValidationError("witness: probe must be unit norm");
  if (delta == 0.0) throw ValidationError("witness: delta must be nonzero");
  const double a = v.dot(u_ck);
  const double b = v.dot(u_pk);
  if (std::abs(b) <= 1e-9) throw ValidationError("witness: probe is orthogonal to the PK axis");

  WitnessResult w;
  w.pair_1 = {c, p};
  w.pair_2 = {c + delta, p - (a / b) * delta};
  const Vector h1 = c * u_ck + p * u_pk;
  const Vector h2 = w.pair_2.first * u_ck + w.pair_2.second * u_pk;
  w.reading_1 = rank1_probe(v, h1);
  w.reading_2 = rank1_probe(v, h2);
  return w;
}

RecoveryReport recover_contributions(const ProjectionSubspace& P, const PlantedData& data) {
  if (P.rank() != 2) throw ValidationError("recover_contributions requires a rank-2 subspace");
  RecoveryReport report;
  const Vector u_c = P.direction(KnowledgeAxis::CK);
  const Vector u_p = P.direction(KnowledgeAxis::PK);
  report.alignment_c = std::abs(u_c.dot(data.u_ck));
  report.alignment_p = std::abs(u_p.dot(data.u_pk));

  double abs_c = 0.0, abs_p = 0.0, signed_c = 0.0, signed_p = 0.0;
  for (const auto& s : data.samples) {
    const double c_rec = std::abs(u_c.dot(s.h));
    const double p_rec = std::abs(u_p.dot(s.h));
    abs_c += std::abs(c_rec - std::abs(s.c_true));
    abs_p += std::abs(p_rec - std::abs(s.p_true));
    signed_c += u_c.dot(s.h) - s.c_true;
    signed_p += u_p.dot(s.h) - s.p_true;
  }
  const double n = static_cast<double>(data.samples.size());
  report.mean_abs_error_c = abs_c / n;
  report.mean_abs_error_p = abs_p / n;
  report.mean_signed_error_c = signed_c / n;
  report.mean_signed_error_p = signed_p / n;
  return report;
}

std::vector<std::pair<int, double>> rank_sweep(const Matrix& H, const std::vector<int>& ranks,
                                               bool centered) {
  int max_rank = 1;
  for (int r : ranks) max_rank = std::max(max_rank, r);
  const SpectrumReport report = explained_variance(H, max_rank, centered);
  std::vector<std::pair<int, double>> curve;
  curve.reserve(ranks.size());
  for (int r : ranks) {
    const auto it = report.ev.find(r);
    if (it == report.ev.end()) throw ValidationError("rank_sweep: rank exceeds spectrum size");
    curve.emplace_back(r, it->second);
  }
  return curve;
}

void save_hidden_matrix(const Matrix& H, const std::filesystem::path& path) {
  json header;
  header["format"] = "pkck-hidden-matrix";
  header["version"] = 1;
  header["rows"] = static_cast<int>(H.rows());
  header["cols"] = static_cast<int>(H.cols());
  std::vector<double> payload(static_cast<std::size_t>(H.rows() * H.cols()));
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < H.rows(); ++i) {
    for (Eigen::Index j = 0; j < H.cols(); ++j) payload[k++] = H(i, j);
  }
  header["data_b64_f64"] = base64_encode_f64(payload);
  atomic_write_file(path, header.dump() + "\n");
}

Matrix load_hidden_matrix(const std::filesystem::path& path) {
  const json j = json::parse(read_file(path));
  if (j.value("format", std::string()) != "pkck-hidden-matrix") {
    throw FormatError("not a hidden-matrix file: " + path.string());
  }
  const int rows = j.at("rows").get<int>();
  const int cols = j.at("cols").get<int>();
  const auto payload = base64_decode_f64(j.at("data_b64_f64").get<std::string>());
  if (static_cast<int>(payload.size()) != rows * cols) {
    throw FormatError("hidden-matrix payload size mismatch");
  }
  Matrix H(rows, cols);
  std::size_t k = 0;
  for (int i = 0; i < rows; ++i) {
    for (int j2 = 0; j2 < cols; ++j2) H(i, j2) = payload[k++];
  }
  return H;
}

}  // namespace pkck

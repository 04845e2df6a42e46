#include "pkck/toy_model.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <sstream>

namespace pkck::toy {

using nlohmann::json;

int Vocab::add(const std::string& word) {
  const auto it = index_.find(word);
  if (it != index_.end()) return it->second;
  const int id = static_cast<int>(words_.size());
  words_.push_back(word);
  index_.emplace(word, id);
  return id;
}

int Vocab::id(const std::string& word) const {
  const auto it = index_.find(word);
  if (it == index_.end()) throw BackendError("unknown token: \"" + word + "\"");
  return it->second;
}

bool Vocab::contains(const std::string& word) const { return index_.count(word) > 0; }

const std::string& Vocab::word(int id) const {
  if (id < 0 || id >= size()) throw BackendError("token id out of range");
  return words_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::encode(const std::string& text) const {
  std::vector<int> ids;
  std::istringstream ss(text);
  std::string w;
  while (ss >> w) ids.push_back(id(w));
  return ids;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i > 0) out += ' ';
    out += word(ids[i]);
  }
  return out;
}

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluC1 = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC2 = 0.044715;

double gelu(double x) {
  const double u = kGeluC1 * (x + kGeluC2 * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_grad(double x) {
  const double u = kGeluC1 * (x + kGeluC2 * x * x * x);
  const double t = std::tanh(u);
  const double du = kGeluC1 * (1.0 + 3.0 * kGeluC2 * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

// Row-wise layernorm. Returns y and stores per-row mean / reciprocal std.
Matrix layernorm(const Matrix& x, const Eigen::Map<const Vector>& g,
                 const Eigen::Map<const Vector>& b, Vector& mean, Vector& rstd) {
  const Eigen::Index T = x.rows(), d = x.cols();
  mean.resize(T);
  rstd.resize(T);
  Matrix y(T, d);
  for (Eigen::Index i = 0; i < T; ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    const double rs = 1.0 / std::sqrt(var + kLnEps);
    mean(i) = mu;
    rstd(i) = rs;
    y.row(i) =
        ((((x.row(i).array() - mu) * rs) * g.transpose().array()) + b.transpose().array()).matrix();
  }
  return y;
}

// dy -> dx; accumulates dg/db when provided.
Matrix layernorm_backward(const Matrix& dy, const Matrix& x, const Eigen::Map<const Vector>& g,
                          const Vector& mean, const Vector& rstd, Vector* dg, Vector* db) {
  const Eigen::Index T = x.rows(), d = x.cols();
  Matrix dx(T, d);
  for (Eigen::Index i = 0; i < T; ++i) {
    const Eigen::ArrayXd xhat = (x.row(i).transpose().array() - mean(i)) * rstd(i);
    const Eigen::ArrayXd dyr = dy.row(i).transpose().array();
    if (dg) dg->array() += dyr * xhat;
    if (db) db->array() += dyr;
    const Eigen::ArrayXd dxhat = dyr * g.array();
    const double m1 = dxhat.mean();
    const double m2 = (dxhat * xhat).mean();
    dx.row(i) = ((dxhat - m1 - xhat * m2) * rstd(i)).matrix().transpose();
  }
  return dx;
}

Vector softmax_stable(const Vector& z) {
  const double m = z.maxCoeff();
  Vector e = (z.array() - m).exp();
  return e / e.sum();
}

}  // namespace

Vector ToyForward::probs_at(int position) const {
  if (position < 0 || position >= logits.rows()) throw BackendError("logits position out of range");
  return softmax_stable(logits.row(position).transpose());
}

double entropy_nats(const Vector& probs) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    const double p = probs(i);
    if (p > 0.0) h -= p * std::log(p);
  }
  return std::max(0.0, h);
}

ToyModel::ToyModel(ToyArch arch, Vocab vocab, std::uint64_t seed)
    : arch_(arch), vocab_(std::move(vocab)), init_seed_(seed) {
  if (arch_.layers < 1 || arch_.d < 2 || arch_.heads < 1 || arch_.d % arch_.heads != 0) {
    throw ValidationError("toy arch: need layers >= 1, d >= 2, d divisible by heads");
  }
  if (vocab_.size() < 2) throw ValidationError("toy vocab too small");
  build_layout();
  init_params(seed);
}

void ToyModel::build_layout() {
  const Eigen::Index d = arch_.d, d4 = 4 * arch_.d, V = vocab_.size(), C = arch_.context_len;
  Eigen::Index off = 0;
  auto take = [&off](Eigen::Index n) {
    const Eigen::Index at = off;
    off += n;
    return at;
  };
  off_emb_ = take(V * d);
  off_pos_ = take(C * d);
  layer_off_.resize(static_cast<std::size_t>(arch_.layers));
  for (auto& lo : layer_off_) {
    lo.wq = take(d * d);
    lo.wk = take(d * d);
    lo.wv = take(d * d);
    lo.wo = take(d * d);
    lo.w1 = take(d * d4);
    lo.b1 = take(d4);
    lo.w2 = take(d4 * d);
    lo.b2 = take(d);
    lo.ln1_g = take(d);
    lo.ln1_b = take(d);
    lo.ln2_g = take(d);
    lo.ln2_b = take(d);
  }
  off_lnf_g_ = take(d);
  off_lnf_b_ = take(d);
  total_ = off;
  theta_.setZero(total_);
}

void ToyModel::init_params(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0xA11C0DE));
  const double base_std = 0.02;
  const double resid_std = base_std / std::sqrt(2.0 * arch_.layers);
  auto fill = [&rng](Eigen::Map<Matrix> m, double std_dev) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = std_dev * rng.normal();
    }
  };
  const Eigen::Index d = arch_.d, d4 = 4 * arch_.d;
  fill(mat(theta_, off_emb_, vocab_.size(), d), base_std);
  fill(mat(theta_, off_pos_, arch_.context_len, d), base_std);
  for (const auto& lo : layer_off_) {
    fill(mat(theta_, lo.wq, d, d), base_std);
    fill(mat(theta_, lo.wk, d, d), base_std);
    fill(mat(theta_, lo.wv, d, d), base_std);
    fill(mat(theta_, lo.wo, d, d), resid_std);
    fill(mat(theta_, lo.w1, d, d4), base_std);
    fill(mat(theta_, lo.w2, d4, d), resid_std);
    vec(theta_, lo.ln1_g, d).setOnes();
    vec(theta_, lo.ln2_g, d).setOnes();
  }
  vec(theta_, off_lnf_g_, d).setOnes();
}

Eigen::Map<const Matrix> ToyModel::mat(Eigen::Index off, Eigen::Index rows, Eigen::Index cols) const {
  return {theta_.data() + off, rows, cols};
}
Eigen::Map<const Vector> ToyModel::vec(Eigen::Index off, Eigen::Index n) const {
  return {theta_.data() + off, n};
}
Eigen::Map<Matrix> ToyModel::mat(Vector& buf, Eigen::Index off, Eigen::Index rows, Eigen::Index cols) const {
  return {buf.data() + off, rows, cols};
}
Eigen::Map<Vector> ToyModel::vec(Vector& buf, Eigen::Index off, Eigen::Index n) const {
  return {buf.data() + off, n};
}

ToyForward ToyModel::forward(const std::vector<int>& tokens, const PatchSpec* patch) const {
  const auto T = static_cast<Eigen::Index>(tokens.size());
  if (T < 1) throw BackendError("forward over empty token sequence");
  if (T > arch_.context_len) throw BackendError("prompt exceeds context window");
  if (patch) {
    if (patch->layer < 1 || patch->layer > arch_.layers) throw BackendError("patch layer out of range");
    if (patch->position < 0 || patch->position >= T) throw BackendError("patch position out of range");
    if (patch->value.size() != arch_.d) throw BackendError("patch vector has wrong dimension");
    if (!patch->value.allFinite()) throw BackendError("patch vector is not finite");
  }

  const Eigen::Index d = arch_.d, d4 = 4 * arch_.d;
  const int H = arch_.heads;
  const Eigen::Index dh = d / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  ToyForward tape;
  tape.tokens = tokens;
  const auto emb = mat(off_emb_, vocab_.size(), d);
  const auto pos = mat(off_pos_, arch_.context_len, d);

  Matrix x(T, d);
  for (Eigen::Index i = 0; i < T; ++i) {
    const int tok = tokens[static_cast<std::size_t>(i)];
    if (tok < 0 || tok >= vocab_.size()) throw BackendError("token id out of range");
    x.row(i) = emb.row(tok) + pos.row(i);
  }
  tape.x0 = x;

  tape.layers.resize(static_cast<std::size_t>(arch_.layers));
  for (int l = 0; l < arch_.layers; ++l) {
    auto& t = tape.layers[static_cast<std::size_t>(l)];
    const auto& lo = layer_off_[static_cast<std::size_t>(l)];
    t.x_in = x;
    t.a_in = layernorm(x, vec(lo.ln1_g, d), vec(lo.ln1_b, d), t.ln1_mean, t.ln1_rstd);
    t.q = t.a_in * mat(lo.wq, d, d);
    t.k = t.a_in * mat(lo.wk, d, d);
    t.v = t.a_in * mat(lo.wv, d, d);
    t.att_concat.resize(T, d);
    t.attn.resize(static_cast<std::size_t>(H));
    for (int h = 0; h < H; ++h) {
      const auto qh = t.q.middleCols(h * dh, dh);
      const auto kh = t.k.middleCols(h * dh, dh);
      const auto vh = t.v.middleCols(h * dh, dh);
      Matrix s = qh * kh.transpose() * scale;
      Matrix& probs = t.attn[static_cast<std::size_t>(h)];
      probs.setZero(T, T);
      for (Eigen::Index i = 0; i < T; ++i) {
        const double m = s.row(i).head(i + 1).maxCoeff();
        double z = 0.0;
        for (Eigen::Index j = 0; j <= i; ++j) {
          const double e = std::exp(s(i, j) - m);
          probs(i, j) = e;
          z += e;
        }
        probs.row(i).head(i + 1) /= z;
      }
      t.att_concat.middleCols(h * dh, dh) = probs * vh;
    }
    t.x_mid = t.x_in + t.att_concat * mat(lo.wo, d, d);
    t.m_in = layernorm(t.x_mid, vec(lo.ln2_g, d), vec(lo.ln2_b, d), t.ln2_mean, t.ln2_rstd);
    t.m_pre = (t.m_in * mat(lo.w1, d, d4)).rowwise() + vec(lo.b1, d4).transpose();
    t.m_act = t.m_pre.unaryExpr([](double v) { return gelu(v); });
    t.x_out = t.x_mid + ((t.m_act * mat(lo.w2, d4, d)).rowwise() + vec(lo.b2, d).transpose());
    if (patch && patch->layer == l + 1) {
      t.x_out.row(patch->position) = patch->value.transpose();
    }
    x = t.x_out;
  }

  tape.f = layernorm(x, vec(off_lnf_g_, d), vec(off_lnf_b_, d), tape.lnf_mean, tape.lnf_rstd);
  tape.logits = tape.f * mat(off_emb_, vocab_.size(), d).transpose();
  return tape;
}

Matrix ToyModel::backward(const ToyForward& tape, const Matrix& dlogits, Vector* grad_flat,
                          int stop_after_layer) const {
  const Eigen::Index T = tape.logits.rows();
  const Eigen::Index d = arch_.d, d4 = 4 * arch_.d;
  const int H = arch_.heads;
  const Eigen::Index dh = d / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  const auto emb = mat(off_emb_, vocab_.size(), d);

  Matrix df = dlogits * emb;  // T x d
  if (grad_flat) {
    mat(*grad_flat, off_emb_, vocab_.size(), d).noalias() += dlogits.transpose() * tape.f;
  }

  Vector dlnf_g, dlnf_b;
  Vector* pg = nullptr;
  Vector* pb = nullptr;
  Matrix dx;
  {
    const Matrix& x_last = tape.layers.back().x_out;
    if (grad_flat) {
      dlnf_g.setZero(d);
      dlnf_b.setZero(d);
      pg = &dlnf_g;
      pb = &dlnf_b;
    }
    dx = layernorm_backward(df, x_last, vec(off_lnf_g_, d), tape.lnf_mean, tape.lnf_rstd, pg, pb);
    if (grad_flat) {
      vec(*grad_flat, off_lnf_g_, d) += dlnf_g;
      vec(*grad_flat, off_lnf_b_, d) += dlnf_b;
    }
  }

  for (int l = arch_.layers - 1; l >= 0; --l) {
    if (stop_after_layer == l + 1) return dx;
    const auto& t = tape.layers[static_cast<std::size_t>(l)];
    const auto& lo = layer_off_[static_cast<std::size_t>(l)];

    // MLP branch: x_out = x_mid + gelu(m_in W1 + b1) W2 + b2
    const Matrix& dxout = dx;
    Matrix dm_act = dxout * mat(lo.w2, d4, d).transpose();
    if (grad_flat) {
      mat(*grad_flat, lo.w2, d4, d).noalias() += t.m_act.transpose() * dxout;
      vec(*grad_flat, lo.b2, d) += dxout.colwise().sum().transpose();
    }
    Matrix dm_pre = dm_act.cwiseProduct(t.m_pre.unaryExpr([](double v) { return gelu_grad(v); }));
    Matrix dm_in = dm_pre * mat(lo.w1, d, d4).transpose();
    if (grad_flat) {
      mat(*grad_flat, lo.w1, d, d4).noalias() += t.m_in.transpose() * dm_pre;
      vec(*grad_flat, lo.b1, d4) += dm_pre.colwise().sum().transpose();
    }
    Vector dln2_g, dln2_b;
    Vector* pg2 = nullptr;
    Vector* pb2 = nullptr;
    if (grad_flat) {
      dln2_g.setZero(d);
      dln2_b.setZero(d);
      pg2 = &dln2_g;
      pb2 = &dln2_b;
    }
    Matrix dx_mid = dxout + layernorm_backward(dm_in, t.x_mid, vec(lo.ln2_g, d), t.ln2_mean,
                                               t.ln2_rstd, pg2, pb2);
    if (grad_flat) {
      vec(*grad_flat, lo.ln2_g, d) += dln2_g;
      vec(*grad_flat, lo.ln2_b, d) += dln2_b;
    }

    // Attention branch: x_mid = x_in + att_concat Wo
    Matrix datt_concat = dx_mid * mat(lo.wo, d, d).transpose();
    if (grad_flat) {
      mat(*grad_flat, lo.wo, d, d).noalias() += t.att_concat.transpose() * dx_mid;
    }
    Matrix dq(T, d), dk(T, d), dv(T, d);
    for (int h = 0; h < H; ++h) {
      const auto qh = t.q.middleCols(h * dh, dh);
      const auto kh = t.k.middleCols(h * dh, dh);
      const auto vh = t.v.middleCols(h * dh, dh);
      const Matrix& probs = t.attn[static_cast<std::size_t>(h)];
      const auto doh = datt_concat.middleCols(h * dh, dh);
      Matrix dprobs = doh * vh.transpose();
      dv.middleCols(h * dh, dh).noalias() = probs.transpose() * doh;
      Matrix ds(T, T);
      for (Eigen::Index i = 0; i < T; ++i) {
        const double row_dot = dprobs.row(i).cwiseProduct(probs.row(i)).sum();
        ds.row(i) = probs.row(i).cwiseProduct((dprobs.row(i).array() - row_dot).matrix());
      }
      dq.middleCols(h * dh, dh).noalias() = ds * kh * scale;
      dk.middleCols(h * dh, dh).noalias() = ds.transpose() * qh * scale;
    }
    Matrix da_in = dq * mat(lo.wq, d, d).transpose() + dk * mat(lo.wk, d, d).transpose() +
                   dv * mat(lo.wv, d, d).transpose();
    if (grad_flat) {
      mat(*grad_flat, lo.wq, d, d).noalias() += t.a_in.transpose() * dq;
      mat(*grad_flat, lo.wk, d, d).noalias() += t.a_in.transpose() * dk;
      mat(*grad_flat, lo.wv, d, d).noalias() += t.a_in.transpose() * dv;
    }
    Vector dln1_g, dln1_b;
    Vector* pg1 = nullptr;
    Vector* pb1 = nullptr;
    if (grad_flat) {
      dln1_g.setZero(d);
      dln1_b.setZero(d);
      pg1 = &dln1_g;
      pb1 = &dln1_b;
    }
    dx = dx_mid +
         layernorm_backward(da_in, t.x_in, vec(lo.ln1_g, d), t.ln1_mean, t.ln1_rstd, pg1, pb1);
    if (grad_flat) {
      vec(*grad_flat, lo.ln1_g, d) += dln1_g;
      vec(*grad_flat, lo.ln1_b, d) += dln1_b;
    }
  }

  if (grad_flat) {
    auto demb = mat(*grad_flat, off_emb_, vocab_.size(), d);
    auto dpos = mat(*grad_flat, off_pos_, arch_.context_len, d);
    for (Eigen::Index i = 0; i < T; ++i) {
      demb.row(tape.tokens[static_cast<std::size_t>(i)]) += dx.row(i);
      dpos.row(i) += dx.row(i);
    }
  }
  return dx;
}

std::pair<double, int> ToyModel::loss_and_param_grad(const std::vector<int>& tokens,
                                                     const std::vector<std::uint8_t>& predict_mask,
                                                     Vector& grad_flat, double scale) const {
  if (grad_flat.size() != total_) throw ValidationError("gradient buffer has wrong size");
  if (predict_mask.size() != tokens.size()) throw ValidationError("predict mask length mismatch");
  const ToyForward tape = forward(tokens);
  const auto T = static_cast<Eigen::Index>(tokens.size());

  Matrix dlogits = Matrix::Zero(T, vocab_.size());
  double loss = 0.0;
  int count = 0;
  for (Eigen::Index i = 0; i + 1 < T; ++i) {
    if (!predict_mask[static_cast<std::size_t>(i)]) continue;
    const int target = tokens[static_cast<std::size_t>(i + 1)];
    const Vector p = tape.probs_at(static_cast<int>(i));
    loss += -std::log(std::max(p(target), 1e-300)) * scale;
    dlogits.row(i) = p.transpose() * scale;
    dlogits(i, target) -= scale;
    ++count;
  }
  if (count > 0) backward(tape, dlogits, &grad_flat, 0);
  return {loss, count};
}

ToyModel::PatchedNll ToyModel::nll_and_patch_grad(const std::vector<int>& tokens, int layer,
                                                  int position, const Vector& replacement,
                                                  int target_id, bool want_grad) const {
  if (target_id < 0 || target_id >= vocab_.size()) throw BackendError("target token out of range");
  PatchSpec patch{layer, position, replacement};
  const ToyForward tape = forward(tokens, &patch);
  const auto last = static_cast<int>(tokens.size()) - 1;
  const Vector p = tape.probs_at(last);

  PatchedNll out;
  out.nll = -std::log(std::max(p(target_id), 1e-300));
  if (want_grad) {
    Matrix dlogits = Matrix::Zero(tape.logits.rows(), vocab_.size());
    dlogits.row(last) = p.transpose();
    dlogits(last, target_id) -= 1.0;
    const Matrix dx = backward(tape, dlogits, nullptr, layer);
    out.grad_replacement = dx.row(position).transpose();
  }
  return out;
}

void ToyModel::save(const std::filesystem::path& path) const {
  json j;
  j["format"] = "pkck-toy-model";
  j["version"] = 1;
  j["arch"] = {{"layers", arch_.layers},
               {"d", arch_.d},
               {"heads", arch_.heads},
               {"context_len", arch_.context_len}};
  j["seed"] = init_seed_;
  j["vocab"] = vocab_.words();
  std::vector<double> payload(theta_.data(), theta_.data() + theta_.size());
  j["theta_b64_f64"] = base64_encode_f64(payload);
  atomic_write_file(path, j.dump() + "\n");
}

ToyModel ToyModel::load(const std::filesystem::path& path) {
  const json j = json::parse(read_file(path));
  if (j.value("format", std::string()) != "pkck-toy-model") {
    throw FormatError("not a toy model file: " + path.string());
  }
  ToyArch arch;
  arch.layers = j.at("arch").at("layers").get<int>();
  arch.d = j.at("arch").at("d").get<int>();
  arch.heads = j.at("arch").at("heads").get<int>();
  arch.context_len = j.at("arch").at("context_len").get<int>();
  Vocab vocab;
  for (const auto& w : j.at("vocab")) vocab.add(w.get<std::string>());
  ToyModel model(arch, vocab, j.value("seed", std::uint64_t{0}));
  const auto payload = base64_decode_f64(j.at("theta_b64_f64").get<std::string>());
  if (static_cast<Eigen::Index>(payload.size()) != model.num_params()) {
    throw FormatError("toy model payload size mismatch");
  }
  for (std::size_t i = 0; i < payload.size(); ++i) {
    model.params()(static_cast<Eigen::Index>(i)) = payload[i];
  }
  return model;
}

}  // namespace pkck::toy

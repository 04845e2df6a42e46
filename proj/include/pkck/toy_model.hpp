#pragma once

#include "pkck/common.hpp"

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

namespace pkck::toy {

// Whitespace-delimited word vocabulary.
class Vocab {
public:
  int add(const std::string& word);
  int id(const std::string& word) const;  // throws BackendError on unknown words
  bool contains(const std::string& word) const;
  const std::string& word(int id) const;
  int size() const { return static_cast<int>(words_.size()); }

  std::vector<int> encode(const std::string& text) const;
  std::string decode(const std::vector<int>& ids) const;

  const std::vector<std::string>& words() const { return words_; }

private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

struct ToyArch {
  int layers = 4;
  int d = 128;
  int heads = 4;
  int context_len = 128;
};

struct PatchSpec {
  int layer = 0;     // 1-based; the post-block residual of this layer is replaced
  int position = 0;  // sequence position whose row is overwritten
  Vector value;
};

// Forward tape: every intermediate needed by the backward pass.
struct ToyForward {
  std::vector<int> tokens;
  Matrix x0;
  struct LayerTape {
    Matrix x_in, a_in;
    Vector ln1_mean, ln1_rstd;
    Matrix q, k, v;
    std::vector<Matrix> attn;  // per-head softmax probabilities
    Matrix att_concat;
    Matrix x_mid, m_in;
    Vector ln2_mean, ln2_rstd;
    Matrix m_pre, m_act;
    Matrix x_out;  // post-block residual stream (patched value if patched here)
  };
  std::vector<LayerTape> layers;
  Matrix f;  // final layernorm output
  Vector lnf_mean, lnf_rstd;
  Matrix logits;  // T x V

  Vector probs_at(int position) const;  // softmax of the logits row
};

double entropy_nats(const Vector& probs);

// Pre-LN causal transformer with learned positional embeddings and a
// weight-tied unembedding, parameterized by one flat vector so optimizers
// and serialization stay trivial.
class ToyModel {
public:
  ToyModel(ToyArch arch, Vocab vocab, std::uint64_t seed);

  const ToyArch& arch() const { return arch_; }
  const Vocab& vocab() const { return vocab_; }
  std::uint64_t init_seed() const { return init_seed_; }

  Vector& params() { return theta_; }
  const Vector& params() const { return theta_; }
  Eigen::Index num_params() const { return theta_.size(); }

  ToyForward forward(const std::vector<int>& tokens, const PatchSpec* patch = nullptr) const;

  // Cross-entropy over positions i with predict_mask[i] set (predicting
  // tokens[i+1]); gradients are scaled by `scale` and accumulated into
  // grad_flat. Returns the scaled loss contribution and the mask count.
  std::pair<double, int> loss_and_param_grad(const std::vector<int>& tokens,
                                             const std::vector<std::uint8_t>& predict_mask,
                                             Vector& grad_flat, double scale) const;

  struct PatchedNll {
    double nll = 0.0;
    Vector grad_replacement;
  };
  // -log p(target | patched forward) at the last position, with the gradient
  // with respect to the replacement vector.
  PatchedNll nll_and_patch_grad(const std::vector<int>& tokens, int layer, int position,
                                const Vector& replacement, int target_id,
                                bool want_grad = true) const;

  void save(const std::filesystem::path& path) const;
  static ToyModel load(const std::filesystem::path& path);

private:
  struct LayerOffsets {
    Eigen::Index wq, wk, wv, wo, w1, b1, w2, b2, ln1_g, ln1_b, ln2_g, ln2_b;
  };

  void build_layout();
  void init_params(std::uint64_t seed);

  Eigen::Map<const Matrix> mat(Eigen::Index off, Eigen::Index rows, Eigen::Index cols) const;
  Eigen::Map<const Vector> vec(Eigen::Index off, Eigen::Index n) const;
  Eigen::Map<Matrix> mat(Vector& buf, Eigen::Index off, Eigen::Index rows, Eigen::Index cols) const;
  Eigen::Map<Vector> vec(Vector& buf, Eigen::Index off, Eigen::Index n) const;

  // Backprop from dlogits; accumulates parameter gradients when grad_flat is
  // non-null and returns the gradient of the layer-`stop_after_layer`
  // post-block residual when stop_after_layer >= 1.
  Matrix backward(const ToyForward& tape, const Matrix& dlogits, Vector* grad_flat,
                  int stop_after_layer) const;

  ToyArch arch_;
  Vocab vocab_;
  std::uint64_t init_seed_ = 0;
  Vector theta_;
  Eigen::Index off_emb_ = 0, off_pos_ = 0, off_lnf_g_ = 0, off_lnf_b_ = 0, total_ = 0;
  std::vector<LayerOffsets> layer_off_;
};

}  // namespace pkck::toy

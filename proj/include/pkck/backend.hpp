#pragma once

#include "pkck/common.hpp"

#include <map>
#include <memory>
#include <string>
#include <vector>

namespace pkck {

struct ModelInfo {
  std::string backend_kind;  // "toy" | "external"
  std::string model_id;
  int num_layers = 0;  // L, layers are 1-based [1, L]
  int hidden_dim = 0;  // d
  int vocab_size = 0;
  int context_len = 0;
  std::uint64_t seed = 0;
};

struct HiddenVector {
  Vector values;
  int layer = 0;
  int position = 0;
  int step = -1;  // generation step index; -1 for prompt captures
};

enum class StopReason { Eos, MaxTokens };

const char* to_string(StopReason r);

struct GenerationResult {
  std::vector<std::string> tokens;
  std::map<int, std::vector<HiddenVector>> per_step_hidden;  // layer -> per-step
  std::vector<double> per_step_entropy;                      // nats
  StopReason stop_reason = StopReason::MaxTokens;

  std::string text() const;  // tokens joined by single spaces
};

struct DecodeConfig {
  enum class Kind { Greedy, Temperature } kind = Kind::Greedy;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  static DecodeConfig greedy() { return {}; }
  bool operator==(const DecodeConfig&) const = default;
};

inline constexpr int kLastPromptToken = -1;

struct NextTokenDistribution {
  Vector probs;  // full distribution when the backend is local; may be empty remotely
  std::vector<std::pair<std::string, double>> topk;
  double target_prob = 0.0;
  std::string argmax_token;
};

struct ForwardFromLayerResult {
  double nll = 0.0;
  Vector grad_hidden;
};

// Uniform model access. Implementations serialize their forward passes so
// concurrent callers each observe an unmodified model.
class Backend {
public:
  virtual ~Backend() = default;

  virtual ModelInfo info() const = 0;

  // Autoregressive generation with hidden capture at the newly generated
  // position for each requested layer; the stream entropy is the entropy of
  // the model's next-token distribution at every step.
  virtual GenerationResult generate(const std::string& prompt, int max_tokens,
                                    const std::vector<int>& capture_layers,
                                    const DecodeConfig& decode) = 0;

  virtual std::vector<HiddenVector> capture(const std::string& prompt,
                                            const std::vector<int>& layers, int position) = 0;

  // Forward pass with the post-block residual at (layer, position)
  // overwritten before downstream layers run.
  virtual NextTokenDistribution patched_forward(const std::string& prompt, int layer, int position,
                                                const Vector& replacement,
                                                const std::string& target_token = std::string(),
                                                int topk = 5) = 0;

  // -log p(target) at the last position when downstream layers run from the
  // given hidden state patched in at (layer, position) during the prompt's
  // forward pass, plus the gradient of that NLL w.r.t. the supplied vector.
  virtual ForwardFromLayerResult forward_from_layer(const std::string& prompt, int layer,
                                                    int position, const Vector& hidden,
                                                    const std::string& target_token) = 0;

  // Unpatched next-token distribution. Default: an identity self-patch, which
  // keeps remote adapters on the four-op wire protocol.
  virtual NextTokenDistribution next_token(const std::string& prompt,
                                           const std::string& target_token = std::string(),
                                           int topk = 5);
};

}  // namespace pkck

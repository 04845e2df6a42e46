#pragma once

#include "pkck/backend.hpp"
#include "pkck/toy_corpus.hpp"
#include "pkck/toy_model.hpp"

#include <mutex>

namespace pkck::toy {

struct ToyTrainConfig {
  int max_steps = 2500;
  double lr = 1.5e-3;
  std::uint64_t seed = 1;
  int batch_size = 16;
  double recall_target = 0.90;
  int eval_every = 50;
  int min_steps = 100;
  double demo_fraction = 0.8;  // share of QA examples used as intent demos
  int fact_repeat = 3;
  double clip_norm = 1.0;
};

struct ToyTrainReport {
  int steps_run = 0;
  double final_recall = 0.0;
  double chance_recall = 0.0;  // 1 / num_objects
  int heldout_probes = 0;
  std::vector<double> step_loss;
};

struct RecallError : BackendError {
  RecallError(const std::string& msg, double recall) : BackendError(msg), achieved_recall(recall) {}
  double achieved_recall = 0.0;
};

// Trains the toy causal transformer on the fact stream plus intent-following
// demos until parametric recall on held-out no-context probes reaches the
// target. Deterministic under (corpus, arch, config).
ToyModel toy_train(const ToyCorpus& corpus, const ToyArch& arch, const ToyTrainConfig& config,
                   ToyTrainReport* report = nullptr);

// Recall of "subject relation ?" probes with no context under the parametric
// intent; used both for the training gate and the chance-level baseline.
double parametric_recall(const ToyModel& model, const ToyCorpus& corpus,
                         const std::vector<int>& qa_indices);

class ToyBackend : public Backend {
public:
  ToyBackend(ToyModel model, std::string model_id);

  ModelInfo info() const override;
  GenerationResult generate(const std::string& prompt, int max_tokens,
                            const std::vector<int>& capture_layers,
                            const DecodeConfig& decode) override;
  std::vector<HiddenVector> capture(const std::string& prompt, const std::vector<int>& layers,
                                    int position) override;
  NextTokenDistribution patched_forward(const std::string& prompt, int layer, int position,
                                        const Vector& replacement, const std::string& target_token,
                                        int topk) override;
  ForwardFromLayerResult forward_from_layer(const std::string& prompt, int layer, int position,
                                            const Vector& hidden,
                                            const std::string& target_token) override;
  NextTokenDistribution next_token(const std::string& prompt, const std::string& target_token,
                                   int topk) override;

  const ToyModel& model() const { return model_; }

private:
  std::vector<int> encode_prompt(const std::string& prompt) const;
  int resolve_position(int position, std::size_t prompt_len) const;
  int first_token_id(const std::string& text) const;

  ToyModel model_;
  std::string model_id_;
  int eos_id_ = 0;
  mutable std::mutex mutex_;
};

}  // namespace pkck::toy

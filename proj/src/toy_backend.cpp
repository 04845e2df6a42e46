#include "pkck/toy_backend.hpp"

#include "pkck/prompts.hpp"

#include <algorithm>
#include <cmath>

namespace pkck {

const char* to_string(StopReason r) { return r == StopReason::Eos ? "eos" : "max_tokens"; }

std::string GenerationResult::text() const {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out += ' ';
    out += tokens[i];
  }
  return out;
}

NextTokenDistribution Backend::next_token(const std::string& prompt,
                                          const std::string& target_token, int topk) {
  const auto captured = capture(prompt, {1}, kLastPromptToken);
  return patched_forward(prompt, 1, kLastPromptToken, captured.at(0).values, target_token, topk);
}

}  // namespace pkck

namespace pkck::toy {

namespace {

struct TrainingSequence {
  std::vector<int> tokens;
  std::vector<std::uint8_t> predict_mask;
};

TrainingSequence fact_sequence(const Vocab& vocab, const ToyFact& fact) {
  TrainingSequence seq;
  seq.tokens = vocab.encode(fact.text);
  seq.predict_mask.assign(seq.tokens.size(), 1);
  seq.predict_mask.back() = 0;  // nothing to predict after the final token
  return seq;
}

QAExample no_context_variant(const QAExample& ex) {
  QAExample out = ex;
  out.context = kNoContextMarker;
  out.context_relevant = Relevance::Irrelevant;
  return out;
}

TrainingSequence demo_sequence(const Vocab& vocab, const QAExample& ex, Intent intent,
                               const std::string& answer, const PromptTemplate& tpl) {
  TrainingSequence seq;
  const std::string prompt = render_prompt(ex, intent, tpl);
  seq.tokens = vocab.encode(prompt);
  const std::size_t prompt_len = seq.tokens.size();
  const auto answer_ids = vocab.encode(answer);
  seq.tokens.insert(seq.tokens.end(), answer_ids.begin(), answer_ids.end());
  seq.tokens.push_back(vocab.id("<eos>"));
  seq.predict_mask.assign(seq.tokens.size(), 0);
  // Train only the answer span (and the stop token); context statements may
  // contradict the fact stream and must not leak into the LM loss.
  for (std::size_t i = prompt_len - 1; i + 1 < seq.tokens.size(); ++i) seq.predict_mask[i] = 1;
  return seq;
}

std::vector<TrainingSequence> build_demos(const ToyCorpus& corpus, const std::vector<int>& qa_ids,
                                          const PromptTemplate& tpl) {
  std::vector<TrainingSequence> demos;
  demos.reserve(qa_ids.size() * 5);
  for (int idx : qa_ids) {
    const QAExample& ex = corpus.qa[static_cast<std::size_t>(idx)];
    const ToyQAMeta& meta = corpus.qa_meta[static_cast<std::size_t>(idx)];
    const QAExample bare = no_context_variant(ex);
    demos.push_back(demo_sequence(corpus.vocab, ex, Intent::Parametric, meta.pk_object, tpl));
    demos.push_back(demo_sequence(corpus.vocab, ex, Intent::Contextual, meta.ctx_object, tpl));
    demos.push_back(demo_sequence(corpus.vocab, ex, Intent::Both, meta.intended_final, tpl));
    demos.push_back(demo_sequence(corpus.vocab, bare, Intent::Parametric, meta.pk_object, tpl));
    demos.push_back(demo_sequence(corpus.vocab, bare, Intent::Both, meta.pk_object, tpl));
  }
  return demos;
}

}  // namespace

double parametric_recall(const ToyModel& model, const ToyCorpus& corpus,
                         const std::vector<int>& qa_indices) {
  if (qa_indices.empty()) throw ValidationError("parametric_recall: empty probe set");
  const PromptTemplate tpl = builtin_template("toy");
  int hits = 0;
  for (int idx : qa_indices) {
    const QAExample bare = no_context_variant(corpus.qa[static_cast<std::size_t>(idx)]);
    const std::string prompt = render_prompt(bare, Intent::Parametric, tpl);
    const auto tokens = corpus.vocab.encode(prompt);
    const ToyForward tape = model.forward(tokens);
    const Vector probs = tape.probs_at(static_cast<int>(tokens.size()) - 1);
    Eigen::Index argmax = 0;
    probs.maxCoeff(&argmax);
    const int want = corpus.vocab.id(corpus.qa_meta[static_cast<std::size_t>(idx)].pk_object);
    if (static_cast<int>(argmax) == want) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(qa_indices.size());
}

ToyModel toy_train(const ToyCorpus& corpus, const ToyArch& arch, const ToyTrainConfig& config,
                   ToyTrainReport* report) {
  if (corpus.qa.empty() || corpus.facts.empty()) throw ValidationError("toy_train: empty corpus");
  if (config.batch_size < 1 || config.lr <= 0.0 || config.max_steps < 1) {
    throw ValidationError("toy_train: invalid training config");
  }

  const PromptTemplate tpl = builtin_template("toy");
  Rng rng(mix_seed(config.seed, 0x7EA1));

  // Deterministic demo/heldout split over QA examples.
  std::vector<int> qa_ids(corpus.qa.size());
  for (std::size_t i = 0; i < qa_ids.size(); ++i) qa_ids[i] = static_cast<int>(i);
  rng.shuffle(qa_ids);
  const auto n_demo = static_cast<std::size_t>(config.demo_fraction * static_cast<double>(qa_ids.size()));
  std::vector<int> demo_ids(qa_ids.begin(), qa_ids.begin() + static_cast<std::ptrdiff_t>(n_demo));
  std::vector<int> heldout_ids(qa_ids.begin() + static_cast<std::ptrdiff_t>(n_demo), qa_ids.end());
  if (heldout_ids.empty()) heldout_ids = demo_ids;  // degenerate split, probe on demos
  std::sort(demo_ids.begin(), demo_ids.end());
  std::sort(heldout_ids.begin(), heldout_ids.end());

  std::vector<TrainingSequence> pool;
  for (int rep = 0; rep < config.fact_repeat; ++rep) {
    for (const auto& fact : corpus.facts) pool.push_back(fact_sequence(corpus.vocab, fact));
  }
  for (auto& demo : build_demos(corpus, demo_ids, tpl)) pool.push_back(std::move(demo));

  ToyModel model(arch, corpus.vocab, config.seed);
  Vector grad = Vector::Zero(model.num_params());
  Vector m = Vector::Zero(model.num_params());
  Vector v = Vector::Zero(model.num_params());
  const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

  std::vector<std::size_t> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  if (report) {
    report->heldout_probes = static_cast<int>(heldout_ids.size());
    report->chance_recall = 1.0 / static_cast<double>(corpus.num_objects);
  }

  double recall = 0.0;
  int step = 0;
  std::size_t cursor = 0;
  Rng epoch_rng(mix_seed(config.seed, 0x5871FF1E));
  epoch_rng.shuffle(order);
  while (step < config.max_steps) {
    ++step;
    grad.setZero();
    int batch_tokens = 0;
    std::vector<std::size_t> batch;
    for (int b = 0; b < config.batch_size; ++b) {
      if (cursor == order.size()) {
        cursor = 0;
        epoch_rng.shuffle(order);
      }
      const std::size_t idx = order[cursor++];
      batch.push_back(idx);
      for (std::size_t i = 0; i + 1 < pool[idx].tokens.size(); ++i) {
        if (pool[idx].predict_mask[i]) ++batch_tokens;
      }
    }
    if (batch_tokens == 0) continue;
    const double scale = 1.0 / static_cast<double>(batch_tokens);
    double loss = 0.0;
    for (std::size_t idx : batch) {
      loss += model.loss_and_param_grad(pool[idx].tokens, pool[idx].predict_mask, grad, scale).first;
    }
    if (report) report->step_loss.push_back(loss);

    const double gnorm = grad.norm();
    if (!std::isfinite(gnorm)) throw BackendError("toy_train: non-finite gradient");
    if (config.clip_norm > 0.0 && gnorm > config.clip_norm) grad *= config.clip_norm / gnorm;

    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v.array().matrix() + (1.0 - beta2) * grad.cwiseProduct(grad);
    const double bc1 = 1.0 - std::pow(beta1, step);
    const double bc2 = 1.0 - std::pow(beta2, step);
    model.params().array() -=
        config.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + adam_eps);

    if (step >= config.min_steps && step % config.eval_every == 0) {
      recall = parametric_recall(model, corpus, heldout_ids);
      if (recall >= config.recall_target) break;
    }
  }

  if (recall < config.recall_target) {
    recall = parametric_recall(model, corpus, heldout_ids);
  }
  if (report) {
    report->steps_run = step;
    report->final_recall = recall;
  }
  if (recall < config.recall_target) {
    throw RecallError("toy_train: recall target " + std::to_string(config.recall_target) +
                          " not reached within " + std::to_string(config.max_steps) +
                          " steps (achieved " + std::to_string(recall) + ")",
                      recall);
  }
  return model;
}

ToyBackend::ToyBackend(ToyModel model, std::string model_id)
    : model_(std::move(model)), model_id_(std::move(model_id)) {
  eos_id_ = model_.vocab().id("<eos>");
}

ModelInfo ToyBackend::info() const {
  ModelInfo info;
  info.backend_kind = "toy";
  info.model_id = model_id_;
  info.num_layers = model_.arch().layers;
  info.hidden_dim = model_.arch().d;
  info.vocab_size = model_.vocab().size();
  info.context_len = model_.arch().context_len;
  info.seed = model_.init_seed();
  return info;
}

std::vector<int> ToyBackend::encode_prompt(const std::string& prompt) const {
  auto ids = model_.vocab().encode(prompt);
  if (ids.empty()) throw BackendError("empty prompt");
  if (static_cast<int>(ids.size()) > model_.arch().context_len) {
    throw BackendError("prompt exceeds context window");
  }
  return ids;
}

int ToyBackend::resolve_position(int position, std::size_t prompt_len) const {
  const int last = static_cast<int>(prompt_len) - 1;
  const int pos = position == kLastPromptToken ? last : position;
  if (pos < 0 || pos > last) throw BackendError("position out of range");
  return pos;
}

int ToyBackend::first_token_id(const std::string& text) const {
  const auto ids = model_.vocab().encode(text);
  if (ids.empty()) throw BackendError("empty target token");
  return ids.front();
}

GenerationResult ToyBackend::generate(const std::string& prompt, int max_tokens,
                                      const std::vector<int>& capture_layers,
                                      const DecodeConfig& decode) {
  std::lock_guard<std::mutex> lock(mutex_);
  if (max_tokens < 0) throw BackendError("max_tokens must be >= 0");
  for (int l : capture_layers) {
    if (l < 1 || l > model_.arch().layers) throw BackendError("unknown capture layer");
  }

  auto ids = encode_prompt(prompt);
  const std::size_t prompt_len = ids.size();
  const int room = model_.arch().context_len - static_cast<int>(prompt_len);
  const int budget = std::min(max_tokens, room);

  GenerationResult result;
  Rng rng(decode.seed);
  result.stop_reason = StopReason::MaxTokens;
  for (int step = 0; step < budget; ++step) {
    const ToyForward tape = model_.forward(ids);
    const Vector probs = tape.probs_at(static_cast<int>(ids.size()) - 1);
    int next = 0;
    if (decode.kind == DecodeConfig::Kind::Greedy) {
      Eigen::Index arg = 0;
      probs.maxCoeff(&arg);
      next = static_cast<int>(arg);
    } else {
      if (decode.temperature <= 0.0) throw BackendError("temperature must be > 0");
      Eigen::ArrayXd logp = probs.array().max(1e-300).log() / decode.temperature;
      logp -= logp.maxCoeff();
      Eigen::ArrayXd q = logp.exp();
      q /= q.sum();
      double u = rng.uniform();
      next = static_cast<int>(q.size()) - 1;
      double acc = 0.0;
      for (Eigen::Index i = 0; i < q.size(); ++i) {
        acc += q(i);
        if (u < acc) {
          next = static_cast<int>(i);
          break;
        }
      }
    }
    result.per_step_entropy.push_back(entropy_nats(probs));
    if (next == eos_id_) {
      result.per_step_entropy.pop_back();  // the stop decision is not a generated step
      result.stop_reason = StopReason::Eos;
      break;
    }
    ids.push_back(next);
    result.tokens.push_back(model_.vocab().word(next));
  }

  if (!capture_layers.empty() && !result.tokens.empty()) {
    const ToyForward tape = model_.forward(ids);
    for (int layer : capture_layers) {
      auto& slot = result.per_step_hidden[layer];
      for (std::size_t s = 0; s < result.tokens.size(); ++s) {
        HiddenVector h;
        h.layer = layer;
        h.position = static_cast<int>(prompt_len + s);
        h.step = static_cast<int>(s);
        h.values = tape.layers[static_cast<std::size_t>(layer - 1)].x_out.row(h.position).transpose();
        slot.push_back(std::move(h));
      }
    }
  } else if (!capture_layers.empty()) {
    for (int layer : capture_layers) result.per_step_hidden[layer] = {};
  }
  return result;
}

std::vector<HiddenVector> ToyBackend::capture(const std::string& prompt,
                                              const std::vector<int>& layers, int position) {
  std::lock_guard<std::mutex> lock(mutex_);
  const auto ids = encode_prompt(prompt);
  const int pos = resolve_position(position, ids.size());
  const ToyForward tape = model_.forward(ids);
  std::vector<HiddenVector> out;
  for (int layer : layers) {
    if (layer < 1 || layer > model_.arch().layers) throw BackendError("unknown layer");
    HiddenVector h;
    h.layer = layer;
    h.position = pos;
    h.values = tape.layers[static_cast<std::size_t>(layer - 1)].x_out.row(pos).transpose();
    out.push_back(std::move(h));
  }
  return out;
}

NextTokenDistribution ToyBackend::patched_forward(const std::string& prompt, int layer,
                                                  int position, const Vector& replacement,
                                                  const std::string& target_token, int topk) {
  std::lock_guard<std::mutex> lock(mutex_);
  const auto ids = encode_prompt(prompt);
  if (replacement.size() != model_.arch().d) throw BackendError("replacement dimension mismatch");
  const PatchSpec patch{layer, resolve_position(position, ids.size()), replacement};
  const ToyForward tape = model_.forward(ids, &patch);
  const Vector probs = tape.probs_at(static_cast<int>(ids.size()) - 1);

  NextTokenDistribution out;
  out.probs = probs;
  std::vector<int> order(static_cast<std::size_t>(probs.size()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (probs(a) != probs(b)) return probs(a) > probs(b);
    return a < b;
  });
  const int k = std::min<int>(topk, static_cast<int>(order.size()));
  for (int i = 0; i < k; ++i) {
    out.topk.emplace_back(model_.vocab().word(order[static_cast<std::size_t>(i)]),
                          probs(order[static_cast<std::size_t>(i)]));
  }
  out.argmax_token = model_.vocab().word(order[0]);
  if (!target_token.empty()) out.target_prob = probs(first_token_id(target_token));
  return out;
}

ForwardFromLayerResult ToyBackend::forward_from_layer(const std::string& prompt, int layer,
                                                      int position, const Vector& hidden,
                                                      const std::string& target_token) {
  std::lock_guard<std::mutex> lock(mutex_);
  const auto ids = encode_prompt(prompt);
  if (hidden.size() != model_.arch().d) throw BackendError("hidden dimension mismatch");
  if (!hidden.allFinite()) throw BackendError("hidden state is not finite");
  const int pos = resolve_position(position, ids.size());
  const auto res =
      model_.nll_and_patch_grad(ids, layer, pos, hidden, first_token_id(target_token), true);
  return {res.nll, res.grad_replacement};
}

NextTokenDistribution ToyBackend::next_token(const std::string& prompt,
                                             const std::string& target_token, int topk) {
  std::lock_guard<std::mutex> lock(mutex_);
  const auto ids = encode_prompt(prompt);
  const ToyForward tape = model_.forward(ids);
  const Vector probs = tape.probs_at(static_cast<int>(ids.size()) - 1);
  NextTokenDistribution out;
  out.probs = probs;
  std::vector<int> order(static_cast<std::size_t>(probs.size()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (probs(a) != probs(b)) return probs(a) > probs(b);
    return a < b;
  });
  const int k = std::min<int>(topk, static_cast<int>(order.size()));
  for (int i = 0; i < k; ++i) {
    out.topk.emplace_back(model_.vocab().word(order[static_cast<std::size_t>(i)]),
                          probs(order[static_cast<std::size_t>(i)]));
  }
  out.argmax_token = model_.vocab().word(order[0]);
  if (!target_token.empty()) out.target_prob = probs(first_token_id(target_token));
  return out;
}

}  // namespace pkck::toy

#include "pkck/patchscope.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <sstream>

namespace pkck {

using nlohmann::json;

const char* to_string(PatchDirection d) {
  switch (d) {
    case PatchDirection::CToP: return "c_to_p";
    case PatchDirection::PToC: return "p_to_c";
    case PatchDirection::BToP: return "b_to_p";
    case PatchDirection::BToC: return "b_to_c";
  }
  return "?";
}

PatchDirection patch_direction_from_string(const std::string& s) {
  if (s == "c_to_p") return PatchDirection::CToP;
  if (s == "p_to_c") return PatchDirection::PToC;
  if (s == "b_to_p") return PatchDirection::BToP;
  if (s == "b_to_c") return PatchDirection::BToC;
  throw ValidationError("unknown patch direction: " + s);
}

LocalizationConfig localization_config_for(const std::string& family) {
  LocalizationConfig cfg;
  if (family == "llama") {
    cfg = {0.60, 0.65, 0.3, 0.05, 500, 24};
  } else if (family == "gemma") {
    cfg = {0.85, 0.75, 0.3, 0.05, 200, 10};
  } else if (family == "mistral") {
    cfg = {0.65, 0.75, 0.3, 0.05, 500, 10};
  } else if (family == "toy") {
    cfg = {0.50, 0.50, 0.20, 0.05, 64, 8};
  } else {
    throw ValidationError("unknown localization family: " + family);
  }
  return cfg;
}

namespace {

std::string first_word(const std::string& text) {
  std::istringstream ss(text);
  std::string w;
  ss >> w;
  return w;
}

std::string canonical_answer(const AnswerSet& set) {
  if (set.canonical.empty()) throw ValidationError("answer set has no canonical member");
  return *set.canonical.begin();
}

struct DirectionSpec {
  Intent source_intent;
  Intent target_intent;
  // which stored answers the pair needs
  const std::optional<AnswerSet>& (*source_answer)(const QAExample&);
  const std::optional<AnswerSet>& (*target_answer)(const QAExample&);
};

const std::optional<AnswerSet>& param_answer(const QAExample& ex) { return ex.parametric_answer; }
const std::optional<AnswerSet>& ctx_answer(const QAExample& ex) { return ex.contextual_answer; }
const std::optional<AnswerSet>& final_answer(const QAExample& ex) { return ex.final_answer; }

DirectionSpec spec_for(PatchDirection d) {
  switch (d) {
    case PatchDirection::CToP:
      return {Intent::Contextual, Intent::Parametric, &ctx_answer, &param_answer};
    case PatchDirection::PToC:
      return {Intent::Parametric, Intent::Contextual, &param_answer, &ctx_answer};
    case PatchDirection::BToP:
      return {Intent::Both, Intent::Parametric, &final_answer, &param_answer};
    case PatchDirection::BToC:
      return {Intent::Both, Intent::Contextual, &final_answer, &ctx_answer};
  }
  throw ValidationError("bad patch direction");
}

}  // namespace

std::vector<PatchingPair> build_patching_dataset(const std::vector<QAExample>& examples,
                                                 PatchDirection direction,
                                                 const PromptTemplate& tpl,
                                                 PatchingDatasetStats* stats) {
  const DirectionSpec spec = spec_for(direction);
  std::vector<PatchingPair> pairs;
  int skipped = 0;
  for (const auto& ex : examples) {
    const auto& src = spec.source_answer(ex);
    const auto& tgt = spec.target_answer(ex);
    if (!src || !tgt || src->empty() || tgt->empty()) {
      ++skipped;
      continue;
    }
    PatchingPair pair;
    pair.example_id = ex.id;
    pair.direction = direction;
    pair.source_prompt = render_prompt(ex, spec.source_intent, tpl);
    pair.target_prompt = render_prompt(ex, spec.target_intent, tpl);
    pair.source_expected = canonical_answer(*src);
    pair.target_expected = canonical_answer(*tgt);
    pairs.push_back(std::move(pair));
  }
  if (stats) {
    stats->built = static_cast<int>(pairs.size());
    stats->skipped = skipped;
  }
  if (pairs.empty()) throw EmptyResultError("build_patching_dataset: no usable pairs");
  return pairs;
}

double threshold_for(PatchDirection direction, const LocalizationConfig& cfg) {
  // The rank-1 pair thresholds follow the source-intent answer; the joint
  // directions take the threshold of the answer they try to induce in the
  // patched target (parametric for b->p, contextual for b->c).
  switch (direction) {
    case PatchDirection::CToP: return cfg.tau_c;
    case PatchDirection::PToC: return cfg.tau_p;
    case PatchDirection::BToP: return cfg.tau_p;
    case PatchDirection::BToC: return cfg.tau_c;
  }
  throw ValidationError("bad patch direction");
}

bool layer_passes(const LayerStats& stats, PatchDirection direction,
                  const LocalizationConfig& cfg) {
  const double tau = threshold_for(direction, cfg);
  if (stats.mean_patched_source < tau) return false;
  if (stats.mean_patched_source - stats.mean_patched_target < cfg.margin) return false;
  if (stats.mean_baseline_source > tau - cfg.eps) return false;
  return true;
}

LayerSet localize_layers(Backend& backend, const std::vector<PatchingPair>& pairs,
                         const LocalizationConfig& config, std::map<int, LayerStats>* all_stats) {
  if (pairs.empty()) throw ValidationError("localize_layers: no pairs");
  if (config.num_samples < 1) throw ValidationError("localize_layers: num_samples must be >= 1");
  const PatchDirection direction = pairs.front().direction;
  for (const auto& p : pairs) {
    if (p.direction != direction) throw ValidationError("localize_layers: mixed directions");
  }

  // Seeded uniform subsample, original order preserved.
  std::vector<std::size_t> use(pairs.size());
  for (std::size_t i = 0; i < use.size(); ++i) use[i] = i;
  if (static_cast<int>(pairs.size()) > config.num_samples) {
    Rng rng(config.sample_seed);
    rng.shuffle(use);
    use.resize(static_cast<std::size_t>(config.num_samples));
    std::sort(use.begin(), use.end());
  }

  const int L = backend.info().num_layers;
  std::vector<int> layers(static_cast<std::size_t>(L));
  for (int l = 1; l <= L; ++l) layers[static_cast<std::size_t>(l - 1)] = l;

  std::map<int, LayerStats> stats;
  for (int l : layers) stats[l] = LayerStats{};

  for (std::size_t idx : use) {
    const PatchingPair& pair = pairs[idx];
    const auto captured = backend.capture(pair.source_prompt, layers, config.position);
    const double baseline =
        backend.next_token(pair.target_prompt, pair.source_expected, 1).target_prob;
    for (int l : layers) {
      const Vector& source_state = captured[static_cast<std::size_t>(l - 1)].values;
      const double p_source = backend
                                  .patched_forward(pair.target_prompt, l, config.position,
                                                   source_state, pair.source_expected, 1)
                                  .target_prob;
      const double p_target = backend
                                  .patched_forward(pair.target_prompt, l, config.position,
                                                   source_state, pair.target_expected, 1)
                                  .target_prob;
      auto& s = stats[l];
      s.mean_patched_source += p_source;
      s.mean_patched_target += p_target;
      s.mean_baseline_source += baseline;
    }
  }
  const double n = static_cast<double>(use.size());
  for (auto& [l, s] : stats) {
    s.mean_patched_source /= n;
    s.mean_patched_target /= n;
    s.mean_baseline_source /= n;
  }

  LayerSet set;
  set.direction = direction;
  for (const auto& [l, s] : stats) {
    set.per_layer_score[l] = s.mean_patched_source;
    if (layer_passes(s, direction, config)) set.layers.push_back(l);
  }
  std::sort(set.layers.begin(), set.layers.end());
  if (all_stats) *all_stats = stats;
  return set;
}

double patching_accuracy(Backend& backend, const std::vector<PatchingPair>& pairs, int layer) {
  if (pairs.empty()) throw ValidationError("patching_accuracy: empty pairs");
  if (layer < 1 || layer > backend.info().num_layers) {
    throw ValidationError("patching_accuracy: layer out of range");
  }
  int hits = 0;
  for (const auto& pair : pairs) {
    const auto captured = backend.capture(pair.source_prompt, {layer}, kLastPromptToken);
    const auto dist = backend.patched_forward(pair.target_prompt, layer, kLastPromptToken,
                                              captured.at(0).values, pair.source_expected, 1);
    if (dist.argmax_token == first_word(pair.source_expected)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

double unpatched_accuracy(Backend& backend, const std::vector<PatchingPair>& pairs) {
  if (pairs.empty()) throw ValidationError("unpatched_accuracy: empty pairs");
  int hits = 0;
  for (const auto& pair : pairs) {
    const auto dist = backend.next_token(pair.target_prompt, pair.source_expected, 1);
    if (dist.argmax_token == first_word(pair.source_expected)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

TrainingLayerChoice select_training_layer(const LayerSet& set_bc, const LayerSet& set_bp,
                                          Backend& backend, const ValidationPairs& validation) {
  if (set_bc.layers.empty() && set_bp.layers.empty()) {
    throw EmptyResultError("select_training_layer: both layer sets are empty");
  }
  std::vector<int> pool;
  std::set_intersection(set_bc.layers.begin(), set_bc.layers.end(), set_bp.layers.begin(),
                        set_bp.layers.end(), std::back_inserter(pool));
  TrainingLayerChoice choice;
  if (pool.empty()) {
    choice.used_union_fallback = true;
    std::set_union(set_bc.layers.begin(), set_bc.layers.end(), set_bp.layers.begin(),
                   set_bp.layers.end(), std::back_inserter(pool));
  }

  double best = -1.0;
  for (int l : pool) {
    double score = 0.0;
    int parts = 0;
    if (!validation.b_to_c.empty()) {
      score += patching_accuracy(backend, validation.b_to_c, l);
      ++parts;
    }
    if (!validation.b_to_p.empty()) {
      score += patching_accuracy(backend, validation.b_to_p, l);
      ++parts;
    }
    if (parts > 0) score /= parts;
    choice.pool_scores[l] = score;
    if (score > best) {  // ties keep the earlier (smaller) layer
      best = score;
      choice.layer = l;
    }
  }
  return choice;
}

void save_layer_set(const LayerSet& set, const LocalizationConfig& config,
                    const std::string& model_id, const std::string& dataset_hash,
                    const std::filesystem::path& path) {
  json j;
  j["format"] = "pkck-layer-set";
  j["version"] = 1;
  j["direction"] = to_string(set.direction);
  j["layers"] = set.layers;
  json scores;
  for (const auto& [l, s] : set.per_layer_score) scores[std::to_string(l)] = s;
  j["per_layer_score"] = scores;
  j["warning_empty_intersection"] = set.warning_empty_intersection;
  json cfg;
  cfg["tau_c"] = config.tau_c;
  cfg["tau_p"] = config.tau_p;
  cfg["margin"] = config.margin;
  cfg["eps"] = config.eps;
  cfg["num_samples"] = config.num_samples;
  cfg["batch_size"] = config.batch_size;
  cfg["position"] = config.position;
  cfg["sample_seed"] = config.sample_seed;
  j["config"] = cfg;
  j["model_id"] = model_id;
  j["dataset_hash"] = dataset_hash;
  atomic_write_file(path, j.dump() + "\n");
}

LayerSet load_layer_set(const std::filesystem::path& path) {
  const json j = json::parse(read_file(path));
  if (j.value("format", std::string()) != "pkck-layer-set") {
    throw FormatError("not a layer-set artifact: " + path.string());
  }
  LayerSet set;
  set.direction = patch_direction_from_string(j.at("direction").get<std::string>());
  set.layers = j.at("layers").get<std::vector<int>>();
  for (const auto& [key, value] : j.at("per_layer_score").items()) {
    set.per_layer_score[std::stoi(key)] = value.get<double>();
  }
  set.warning_empty_intersection = j.value("warning_empty_intersection", false);
  return set;
}

}  // namespace pkck

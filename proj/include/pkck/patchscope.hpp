#pragma once

#include "pkck/backend.hpp"
#include "pkck/prompts.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace pkck {

enum class PatchDirection { CToP, PToC, BToP, BToC };

const char* to_string(PatchDirection d);
PatchDirection patch_direction_from_string(const std::string& s);

struct PatchingPair {
  std::string source_prompt;    // rendered with the source intent
  std::string target_prompt;    // rendered with the target intent
  std::string source_expected;  // canonical answer the patch should induce
  std::string target_expected;  // canonical answer of the unpatched target
  std::string example_id;
  PatchDirection direction = PatchDirection::BToP;
};

struct LocalizationConfig {
  double tau_c = 0.60;
  double tau_p = 0.65;
  double margin = 0.3;
  double eps = 0.05;
  int num_samples = 500;
  int batch_size = 24;
  int position = kLastPromptToken;  // patch-position policy
  std::uint64_t sample_seed = 17;   // seeded uniform subsampling of pairs
};

// Published patching hyperparameters per model family ("llama", "gemma",
// "mistral") plus desk-scale defaults for the toy bed ("toy").
LocalizationConfig localization_config_for(const std::string& family);

struct LayerSet {
  std::vector<int> layers;  // sorted ascending
  std::map<int, double> per_layer_score;  // mean patched source-answer probability
  PatchDirection direction = PatchDirection::BToP;
  bool warning_empty_intersection = false;
};

struct PatchingDatasetStats {
  int built = 0;
  int skipped = 0;
};

// Builds directional pairs from probed examples. Pairs whose required
// answers are missing are skipped and counted.
std::vector<PatchingPair> build_patching_dataset(const std::vector<QAExample>& examples,
                                                 PatchDirection direction,
                                                 const PromptTemplate& tpl,
                                                 PatchingDatasetStats* stats = nullptr);

// Per-layer statistics collected by the localization sweep.
struct LayerStats {
  double mean_patched_source = 0.0;    // mean patched prob of source_expected
  double mean_patched_target = 0.0;    // mean patched prob of target_expected
  double mean_baseline_source = 0.0;   // unpatched prob of source_expected
};

// Gate applied to fixed per-layer statistics: threshold on the patched
// source-answer probability (tau_c when the direction induces the contextual
// answer, tau_p when parametric), a margin over the competing answer, and a
// baseline at least eps below the threshold.
bool layer_passes(const LayerStats& stats, PatchDirection direction, const LocalizationConfig& cfg);
double threshold_for(PatchDirection direction, const LocalizationConfig& cfg);

LayerSet localize_layers(Backend& backend, const std::vector<PatchingPair>& pairs,
                         const LocalizationConfig& config,
                         std::map<int, LayerStats>* all_stats = nullptr);

// Fraction of pairs whose patched greedy next token equals the (first token
// of the) source-expected answer.
double patching_accuracy(Backend& backend, const std::vector<PatchingPair>& pairs, int layer);
// Same statistic without patching; the no-op baseline.
double unpatched_accuracy(Backend& backend, const std::vector<PatchingPair>& pairs);

struct ValidationPairs {
  std::vector<PatchingPair> b_to_c;
  std::vector<PatchingPair> b_to_p;
};

struct TrainingLayerChoice {
  int layer = 0;
  bool used_union_fallback = false;
  std::map<int, double> pool_scores;  // mean of both directions' accuracy
};

TrainingLayerChoice select_training_layer(const LayerSet& set_bc, const LayerSet& set_bp,
                                          Backend& backend, const ValidationPairs& validation);

void save_layer_set(const LayerSet& set, const LocalizationConfig& config,
                    const std::string& model_id, const std::string& dataset_hash,
                    const std::filesystem::path& path);
LayerSet load_layer_set(const std::filesystem::path& path);

}  // namespace pkck

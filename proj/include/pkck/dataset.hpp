#pragma once

#include "pkck/answers.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace pkck {

// Marker accepted as an explicitly empty context.
inline constexpr const char* kNoContextMarker = "<none>";

struct QAExample {
  std::string id;
  std::string question;
  std::string context;
  std::vector<std::string> options;
  std::optional<AnswerSet> parametric_answer;  // a(q, phi)
  std::optional<AnswerSet> contextual_answer;  // a(q, c)
  std::optional<AnswerSet> final_answer;       // a
  Relevance context_relevant = Relevance::Unknown;
  std::optional<InteractionLabel> interaction;
  bool interaction_fallback = false;
};

struct LoadIssue {
  int line = 0;
  std::string message;
};

struct LoadResult {
  std::vector<QAExample> examples;
  std::vector<LoadIssue> issues;  // one entry per rejected record
};

// JSONL, UTF-8, one record per line; optional fields omitted, not nulled.
// Every line either parses into `examples` (order preserved) or produces a
// line-numbered issue. An unreadable file throws.
LoadResult load_dataset(const std::filesystem::path& path, const std::string& schema = "qa-v1");

std::string to_jsonl_line(const QAExample& ex);
void save_dataset(const std::filesystem::path& path, const std::vector<QAExample>& examples);

}  // namespace pkck

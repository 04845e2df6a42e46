#pragma once

#include <set>
#include <string>
#include <vector>

namespace pkck {

enum class Intent { Parametric, Contextual, Both };

const char* to_string(Intent intent);
Intent intent_from_string(const std::string& s);

enum class InteractionLabel { Supportive, Complementary, Conflicting, Irrelevant, Suppression };

const char* to_string(InteractionLabel label);
InteractionLabel interaction_from_string(const std::string& s);

enum class Relevance { Relevant, Irrelevant, Unknown };

const char* to_string(Relevance r);
Relevance relevance_from_string(const std::string& s);

// Canonical form: lower-cased, trimmed, trailing punctuation removed,
// internal whitespace collapsed. Idempotent.
std::string normalize_answer(const std::string& text);

struct AnswerSet {
  std::vector<std::string> raw;
  std::set<std::string> canonical;

  static AnswerSet from_raw(std::vector<std::string> raw_answers);
  static AnswerSet from_text(const std::string& answer);
  bool empty() const { return canonical.empty(); }
};

bool operator==(const AnswerSet& a, const AnswerSet& b);

struct Classification {
  InteractionLabel label;
  // Set when no taxonomy predicate matched and the result fell back to
  // Suppression (kept five-way on purpose).
  bool fallback = false;
};

// Decision order: Irrelevant (flag + final == parametric), Supportive,
// Suppression, Complementary (union, strict containment of both sources),
// Conflicting (exclusive alignment), else Suppression with fallback flag.
// A single-string final answer is split on "and"/"," connectives before the
// union test so string-valued generations can express set unions.
Classification classify_interaction(const AnswerSet& a_param, const AnswerSet& a_ctx,
                                    const AnswerSet& a_final, Relevance context_relevant);

}  // namespace pkck

#pragma once

#include "pkck/dataset.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace pkck {

enum class PromptMode { AnswerOnly, Nle, Cot };

const char* to_string(PromptMode mode);
PromptMode prompt_mode_from_string(const std::string& s);

enum class PromptField { Context, Instruction, Query, Options };

struct PromptTemplate {
  std::string system_preamble;
  std::map<Intent, std::string> instruction_by_intent;
  std::vector<PromptField> layout{PromptField::Context, PromptField::Instruction,
                                  PromptField::Query, PromptField::Options};
  // One of: "llama3", "gemma2", "mistral", "toy".
  std::string chat_markup = "llama3";

  // Mode-dependent pieces appended to the system preamble / prompt tail.
  std::string answer_only_suffix;
  std::string nle_suffix;
  std::string cot_tail;
};

// Built-in templates keyed by chat-markup identifier.
PromptTemplate builtin_template(const std::string& markup_id);

PromptTemplate load_template(const std::filesystem::path& path);
void save_template(const std::filesystem::path& path, const PromptTemplate& tpl);

// Deterministic; the three intents differ only in the instruction line.
std::string render_prompt(const QAExample& example, Intent intent, const PromptTemplate& tpl,
                          PromptMode mode = PromptMode::AnswerOnly);

}  // namespace pkck

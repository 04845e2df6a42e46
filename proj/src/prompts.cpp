#include "pkck/prompts.hpp"

#include "pkck/common.hpp"

#include <nlohmann/json.hpp>

#include <sstream>

namespace pkck {

using nlohmann::json;

const char* to_string(PromptMode mode) {
  switch (mode) {
    case PromptMode::AnswerOnly: return "answer_only";
    case PromptMode::Nle: return "nle";
    case PromptMode::Cot: return "cot";
  }
  return "?";
}

PromptMode prompt_mode_from_string(const std::string& s) {
  if (s == "answer_only" || s == "standard") return PromptMode::AnswerOnly;
  if (s == "nle") return PromptMode::Nle;
  if (s == "cot") return PromptMode::Cot;
  throw ValidationError("unknown prompt mode: " + s);
}

namespace {

const char* field_name(PromptField f) {
  switch (f) {
    case PromptField::Context: return "context";
    case PromptField::Instruction: return "instruction";
    case PromptField::Query: return "query";
    case PromptField::Options: return "options";
  }
  return "?";
}

PromptField field_from_name(const std::string& s) {
  if (s == "context") return PromptField::Context;
  if (s == "instruction") return PromptField::Instruction;
  if (s == "query") return PromptField::Query;
  if (s == "options") return PromptField::Options;
  throw ValidationError("unknown prompt field: " + s);
}

constexpr const char* kSystemBase = "Answer the following query considering the provided context.";
constexpr const char* kAnswerOnlySuffix = " Answer with only one word.";
constexpr const char* kNleSuffix =
    " Generate your final answer with only one word. If you are unable to answer the query, "
    "generate your final answer as \"Unknown\". Also, generate an explanation to determine your "
    "final answer. Return your output in JSON format: {\"explanation\": \"your explanation "
    "here\", \"answer\": \"your final response here\"}. Only include the JSON object in your "
    "response.";
constexpr const char* kCotTail = "Give your answer by analyzing step by step.";

PromptTemplate chat_template(const std::string& markup) {
  PromptTemplate tpl;
  tpl.chat_markup = markup;
  tpl.system_preamble = kSystemBase;
  tpl.answer_only_suffix = kAnswerOnlySuffix;
  tpl.nle_suffix = kNleSuffix;
  tpl.cot_tail = kCotTail;
  tpl.instruction_by_intent = {
      {Intent::Parametric, "Ignore the context in answering the query."},
      {Intent::Contextual, "Only consider the context in answering the query."},
      {Intent::Both, "Consider the context in answering the query."},
  };
  return tpl;
}

PromptTemplate toy_template() {
  PromptTemplate tpl;
  tpl.chat_markup = "toy";
  tpl.system_preamble = "";
  tpl.answer_only_suffix = "";
  tpl.nle_suffix = "";
  tpl.cot_tail = "";
  tpl.instruction_by_intent = {
      {Intent::Parametric, "<wp>"},
      {Intent::Contextual, "<wc>"},
      {Intent::Both, "<wb>"},
  };
  return tpl;
}

std::string options_block(const std::vector<std::string>& options) {
  std::ostringstream out;
  for (std::size_t i = 0; i < options.size(); ++i) {
    if (i > 0) out << '\n';
    out << static_cast<char>('A' + i) << ". " << options[i];
  }
  return out.str();
}

std::string user_block(const QAExample& ex, const std::string& instruction,
                       const PromptTemplate& tpl) {
  std::ostringstream out;
  bool first = true;
  auto line = [&](const std::string& text) {
    if (text.empty()) return;
    if (!first) out << '\n';
    first = false;
    out << text;
  };
  for (PromptField f : tpl.layout) {
    switch (f) {
      case PromptField::Context: line("Context: " + ex.context); break;
      case PromptField::Instruction: line("Instruction: " + instruction); break;
      case PromptField::Query: line("Query: " + ex.question); break;
      case PromptField::Options:
        if (!ex.options.empty()) line(options_block(ex.options));
        break;
    }
  }
  return out.str();
}

std::string render_toy(const QAExample& ex, const std::string& instruction,
                       const PromptTemplate& tpl, PromptMode mode) {
  std::ostringstream out;
  out << "<bos>";
  for (PromptField f : tpl.layout) {
    switch (f) {
      case PromptField::Context:
        if (ex.context == kNoContextMarker) {
          out << " <noctx>";
        } else {
          out << " <ctx> " << ex.context;
        }
        break;
      case PromptField::Instruction: out << ' ' << instruction; break;
      case PromptField::Query: out << " <q> " << ex.question; break;
      case PromptField::Options: break;  // toy prompts carry no option list
    }
  }
  if (mode == PromptMode::Cot && !tpl.cot_tail.empty()) out << ' ' << tpl.cot_tail;
  out << " <a>";
  return out.str();
}

}  // namespace

PromptTemplate builtin_template(const std::string& markup_id) {
  if (markup_id == "toy") return toy_template();
  if (markup_id == "llama3" || markup_id == "gemma2" || markup_id == "mistral") {
    return chat_template(markup_id);
  }
  throw ValidationError("unknown template/markup id: " + markup_id);
}

PromptTemplate load_template(const std::filesystem::path& path) {
  const json j = json::parse(read_file(path));
  PromptTemplate tpl = builtin_template(j.value("chat_markup", std::string("llama3")));
  if (j.contains("system_preamble")) tpl.system_preamble = j.at("system_preamble").get<std::string>();
  if (j.contains("instruction_by_intent")) {
    tpl.instruction_by_intent.clear();
    for (const auto& [key, value] : j.at("instruction_by_intent").items()) {
      tpl.instruction_by_intent[intent_from_string(key)] = value.get<std::string>();
    }
  }
  if (j.contains("layout")) {
    tpl.layout.clear();
    for (const auto& f : j.at("layout")) tpl.layout.push_back(field_from_name(f.get<std::string>()));
  }
  if (j.contains("answer_only_suffix")) tpl.answer_only_suffix = j.at("answer_only_suffix").get<std::string>();
  if (j.contains("nle_suffix")) tpl.nle_suffix = j.at("nle_suffix").get<std::string>();
  if (j.contains("cot_tail")) tpl.cot_tail = j.at("cot_tail").get<std::string>();
  return tpl;
}

void save_template(const std::filesystem::path& path, const PromptTemplate& tpl) {
  json j;
  j["chat_markup"] = tpl.chat_markup;
  j["system_preamble"] = tpl.system_preamble;
  json instr;
  for (const auto& [intent, text] : tpl.instruction_by_intent) instr[to_string(intent)] = text;
  j["instruction_by_intent"] = instr;
  json layout = json::array();
  for (PromptField f : tpl.layout) layout.push_back(field_name(f));
  j["layout"] = layout;
  j["answer_only_suffix"] = tpl.answer_only_suffix;
  j["nle_suffix"] = tpl.nle_suffix;
  j["cot_tail"] = tpl.cot_tail;
  atomic_write_file(path, j.dump(2) + "\n");
}

std::string render_prompt(const QAExample& example, Intent intent, const PromptTemplate& tpl,
                          PromptMode mode) {
  const auto it = tpl.instruction_by_intent.find(intent);
  if (it == tpl.instruction_by_intent.end()) {
    throw ValidationError(std::string("template has no instruction for intent ") + to_string(intent));
  }
  if (tpl.chat_markup == "toy") return render_toy(example, it->second, tpl, mode);

  std::string system = tpl.system_preamble;
  system += (mode == PromptMode::AnswerOnly) ? tpl.answer_only_suffix : tpl.nle_suffix;
  const std::string user = user_block(example, it->second, tpl);

  std::ostringstream out;
  if (tpl.chat_markup == "llama3") {
    out << "<|begin_of_text|><|start_header_id|>system<|end_header_id|>\n"
        << system << "<|eot_id|><|start_header_id|>user<|end_header_id|>\n"
        << user << "<|eot_id|><|start_header_id|>assistant<|end_header_id|>";
    if (mode == PromptMode::Cot) out << '\n' << tpl.cot_tail;
  } else if (tpl.chat_markup == "gemma2") {
    out << "<bos><start_of_turn>user\n" << system << "\n\n" << user
        << "<end_of_turn>\n<start_of_turn>model\n";
    if (mode == PromptMode::Cot) out << tpl.cot_tail;
  } else if (tpl.chat_markup == "mistral") {
    out << "<s>[INST] " << system << "\n\n" << user << " [/INST]";
    if (mode == PromptMode::Cot) out << '\n' << tpl.cot_tail;
  } else {
    throw ValidationError("unknown chat markup: " + tpl.chat_markup);
  }
  return out.str();
}

}  // namespace pkck

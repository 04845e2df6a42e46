#include "pkck/dataset.hpp"

#include "pkck/common.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace pkck {

using nlohmann::json;

namespace {

AnswerSet answer_set_from_json(const json& j) {
  if (j.is_string()) return AnswerSet::from_text(j.get<std::string>());
  if (j.is_array()) {
    std::vector<std::string> raw;
    for (const auto& item : j) raw.push_back(item.get<std::string>());
    return AnswerSet::from_raw(std::move(raw));
  }
  if (j.is_object() && j.contains("raw")) {
    std::vector<std::string> raw;
    for (const auto& item : j.at("raw")) raw.push_back(item.get<std::string>());
    return AnswerSet::from_raw(std::move(raw));
  }
  throw FormatError("answer set must be a string, array, or {raw: [...]}");
}

json answer_set_to_json(const AnswerSet& a) {
  json j;
  j["raw"] = a.raw;
  j["canonical"] = std::vector<std::string>(a.canonical.begin(), a.canonical.end());
  return j;
}

QAExample parse_record(const json& j) {
  QAExample ex;
  for (const char* field : {"id", "question", "context"}) {
    if (!j.contains(field)) throw FormatError(std::string("missing required field \"") + field + "\"");
  }
  ex.id = j.at("id").get<std::string>();
  ex.question = j.at("question").get<std::string>();
  ex.context = j.at("context").get<std::string>();
  if (j.contains("options")) {
    for (const auto& o : j.at("options")) ex.options.push_back(o.get<std::string>());
  }
  if (j.contains("parametric_answer")) ex.parametric_answer = answer_set_from_json(j.at("parametric_answer"));
  if (j.contains("contextual_answer")) ex.contextual_answer = answer_set_from_json(j.at("contextual_answer"));
  if (j.contains("final_answer")) ex.final_answer = answer_set_from_json(j.at("final_answer"));
  if (j.contains("context_relevant")) {
    ex.context_relevant = relevance_from_string(j.at("context_relevant").get<std::string>());
  }
  if (j.contains("interaction")) {
    ex.interaction = interaction_from_string(j.at("interaction").get<std::string>());
  }
  if (j.contains("interaction_fallback")) ex.interaction_fallback = j.at("interaction_fallback").get<bool>();

  if (ex.id.empty()) throw FormatError("field \"id\" is empty");
  if (ex.question.empty()) throw FormatError("field \"question\" is empty");
  if (ex.context.empty()) {
    throw FormatError("field \"context\" is empty; an absent context must use the no-context marker");
  }
  if (ex.context == kNoContextMarker && ex.context_relevant != Relevance::Irrelevant) {
    throw FormatError("no-context marker requires context_relevant=irrelevant");
  }
  return ex;
}

}  // namespace

LoadResult load_dataset(const std::filesystem::path& path, const std::string& schema) {
  if (schema != "qa-v1") throw ValidationError("unknown dataset schema: " + schema);
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open dataset file: " + path.string());

  LoadResult result;
  std::set<std::string> seen_ids;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      QAExample ex = parse_record(j);
      if (!seen_ids.insert(ex.id).second) throw FormatError("duplicate id \"" + ex.id + "\"");
      result.examples.push_back(std::move(ex));
    } catch (const std::exception& e) {
      result.issues.push_back({line_no, e.what()});
    }
  }
  return result;
}

std::string to_jsonl_line(const QAExample& ex) {
  json j;
  j["id"] = ex.id;
  j["question"] = ex.question;
  j["context"] = ex.context;
  if (!ex.options.empty()) j["options"] = ex.options;
  if (ex.parametric_answer) j["parametric_answer"] = answer_set_to_json(*ex.parametric_answer);
  if (ex.contextual_answer) j["contextual_answer"] = answer_set_to_json(*ex.contextual_answer);
  if (ex.final_answer) j["final_answer"] = answer_set_to_json(*ex.final_answer);
  if (ex.context_relevant != Relevance::Unknown) j["context_relevant"] = to_string(ex.context_relevant);
  if (ex.interaction) j["interaction"] = to_string(*ex.interaction);
  if (ex.interaction_fallback) j["interaction_fallback"] = true;
  return j.dump();
}

void save_dataset(const std::filesystem::path& path, const std::vector<QAExample>& examples) {
  std::ostringstream out;
  for (const auto& ex : examples) out << to_jsonl_line(ex) << '\n';
  atomic_write_file(path, out.str());
}

}  // namespace pkck

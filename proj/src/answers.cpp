#include "pkck/answers.hpp"

#include "pkck/common.hpp"

#include <algorithm>
#include <cctype>

namespace pkck {

const char* to_string(Intent intent) {
  switch (intent) {
    case Intent::Parametric: return "parametric";
    case Intent::Contextual: return "contextual";
    case Intent::Both: return "both";
  }
  return "?";
}

Intent intent_from_string(const std::string& s) {
  if (s == "parametric" || s == "wp") return Intent::Parametric;
  if (s == "contextual" || s == "wc") return Intent::Contextual;
  if (s == "both" || s == "wb") return Intent::Both;
  throw ValidationError("unknown intent: " + s);
}

const char* to_string(InteractionLabel label) {
  switch (label) {
    case InteractionLabel::Supportive: return "supportive";
    case InteractionLabel::Complementary: return "complementary";
    case InteractionLabel::Conflicting: return "conflicting";
    case InteractionLabel::Irrelevant: return "irrelevant";
    case InteractionLabel::Suppression: return "suppression";
  }
  return "?";
}

InteractionLabel interaction_from_string(const std::string& s) {
  std::string t;
  t.reserve(s.size());
  for (char c : s) t.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (t == "supportive") return InteractionLabel::Supportive;
  if (t == "complementary") return InteractionLabel::Complementary;
  if (t == "conflicting") return InteractionLabel::Conflicting;
  if (t == "irrelevant") return InteractionLabel::Irrelevant;
  if (t == "suppression") return InteractionLabel::Suppression;
  throw ValidationError("unknown interaction label: " + s);
}

const char* to_string(Relevance r) {
  switch (r) {
    case Relevance::Relevant: return "relevant";
    case Relevance::Irrelevant: return "irrelevant";
    case Relevance::Unknown: return "unknown";
  }
  return "?";
}

Relevance relevance_from_string(const std::string& s) {
  if (s == "relevant") return Relevance::Relevant;
  if (s == "irrelevant") return Relevance::Irrelevant;
  if (s == "unknown") return Relevance::Unknown;
  throw ValidationError("unknown relevance flag: " + s);
}

namespace {
bool is_terminal_punct(char c) {
  return c == '.' || c == '!' || c == '?' || c == ',' || c == ';' || c == ':';
}
}  // namespace

std::string normalize_answer(const std::string& text) {
  std::string s = text;
  auto trim = [](std::string& t) {
    std::size_t b = 0;
    while (b < t.size() && std::isspace(static_cast<unsigned char>(t[b]))) ++b;
    std::size_t e = t.size();
    while (e > b && std::isspace(static_cast<unsigned char>(t[e - 1]))) --e;
    t = t.substr(b, e - b);
  };
  trim(s);
  while (!s.empty() && is_terminal_punct(s.back())) {
    s.pop_back();
    trim(s);
  }
  std::string out;
  out.reserve(s.size());
  bool in_space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      in_space = true;
      continue;
    }
    if (in_space && !out.empty()) out.push_back(' ');
    in_space = false;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

AnswerSet AnswerSet::from_raw(std::vector<std::string> raw_answers) {
  AnswerSet a;
  a.raw = std::move(raw_answers);
  for (const auto& r : a.raw) {
    const std::string c = normalize_answer(r);
    if (!c.empty()) a.canonical.insert(c);
  }
  return a;
}

AnswerSet AnswerSet::from_text(const std::string& answer) { return from_raw({answer}); }

bool operator==(const AnswerSet& a, const AnswerSet& b) { return a.canonical == b.canonical; }

namespace {

// Connective-split view of a single-string answer, e.g.
// "paris and london" -> {"paris", "london"}. Members stay canonical.
std::set<std::string> split_on_connectives(const std::string& canonical) {
  std::vector<std::string> pieces;
  std::string current;
  std::size_t i = 0;
  auto flush = [&]() {
    const std::string c = normalize_answer(current);
    if (!c.empty()) pieces.push_back(c);
    current.clear();
  };
  while (i < canonical.size()) {
    if (canonical[i] == ',') {
      flush();
      ++i;
      continue;
    }
    if (canonical.compare(i, 5, " and ") == 0) {
      flush();
      i += 5;
      continue;
    }
    current.push_back(canonical[i]);
    ++i;
  }
  flush();
  return {pieces.begin(), pieces.end()};
}

bool equals_union(const AnswerSet& final_set, const std::set<std::string>& want) {
  if (final_set.canonical == want) return true;
  if (final_set.canonical.size() == 1) {
    return split_on_connectives(*final_set.canonical.begin()) == want;
  }
  return false;
}

}  // namespace

Classification classify_interaction(const AnswerSet& a_param, const AnswerSet& a_ctx,
                                    const AnswerSet& a_final, Relevance context_relevant) {
  if (a_param.empty() || a_ctx.empty() || a_final.empty()) {
    throw ValidationError("classify_interaction: empty answer set");
  }
  if (context_relevant == Relevance::Unknown) {
    throw ValidationError("classify_interaction: context relevance unresolved");
  }

  if (context_relevant == Relevance::Irrelevant && a_final == a_param) {
    return {InteractionLabel::Irrelevant, false};
  }
  if (a_param == a_ctx && a_param == a_final) {
    return {InteractionLabel::Supportive, false};
  }
  if (a_param == a_ctx && !(a_param == a_final)) {
    return {InteractionLabel::Suppression, false};
  }
  if (!(a_param == a_ctx)) {
    std::set<std::string> unioned = a_param.canonical;
    unioned.insert(a_ctx.canonical.begin(), a_ctx.canonical.end());
    const bool strictly_bigger =
        unioned.size() > a_param.canonical.size() && unioned.size() > a_ctx.canonical.size();
    if (strictly_bigger && equals_union(a_final, unioned)) {
      return {InteractionLabel::Complementary, false};
    }
    const bool matches_ctx = a_final == a_ctx;
    const bool matches_param = a_final == a_param;
    if (matches_ctx != matches_param) {
      return {InteractionLabel::Conflicting, false};
    }
  }
  return {InteractionLabel::Suppression, true};
}

}  // namespace pkck

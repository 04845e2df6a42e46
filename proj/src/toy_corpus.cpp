#include "pkck/toy_corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace pkck::toy {

std::string entity_word(int i) { return "e" + std::to_string(i); }
std::string relation_word(int i) { return "r" + std::to_string(i); }
std::string object_word(int i) { return "o" + std::to_string(i); }

namespace {

const std::vector<std::string>& special_words() {
  static const std::vector<std::string> words = {
      "<pad>", "<bos>", "<eos>", "<unk>", "<noctx>", "<ctx>", "<q>", "<a>",
      "<sep>", "<pair>", "<wp>", "<wc>", "<wb>", "?", "and"};
  return words;
}

std::vector<InteractionLabel> allocate_labels(const ToyCorpusConfig& cfg, int n, Rng& rng) {
  const double supportive =
      1.0 - cfg.conflict_fraction - cfg.complementary_fraction - cfg.irrelevant_fraction;
  struct Slot {
    InteractionLabel label;
    double fraction;
    int count;
    double remainder;
  };
  std::vector<Slot> slots = {
      {InteractionLabel::Conflicting, cfg.conflict_fraction, 0, 0.0},
      {InteractionLabel::Complementary, cfg.complementary_fraction, 0, 0.0},
      {InteractionLabel::Irrelevant, cfg.irrelevant_fraction, 0, 0.0},
      {InteractionLabel::Supportive, supportive, 0, 0.0},
  };
  int assigned = 0;
  for (auto& s : slots) {
    const double exact = s.fraction * n;
    s.count = static_cast<int>(std::floor(exact));
    s.remainder = exact - s.count;
    assigned += s.count;
  }
  // largest remainder gets the leftover slots; ties by declaration order
  while (assigned < n) {
    auto best = std::max_element(slots.begin(), slots.end(), [](const Slot& a, const Slot& b) {
      return a.remainder < b.remainder;
    });
    best->count += 1;
    best->remainder = -1.0;
    ++assigned;
  }
  std::vector<InteractionLabel> labels;
  labels.reserve(static_cast<std::size_t>(n));
  for (const auto& s : slots) {
    for (int i = 0; i < s.count; ++i) labels.push_back(s.label);
  }
  rng.shuffle(labels);
  return labels;
}

}  // namespace

ToyCorpus toy_corpus(const ToyCorpusConfig& cfg) {
  if (cfg.num_entities < 4 || cfg.num_relations < 1 || cfg.facts_per_entity < 1) {
    throw ValidationError("toy_corpus: need >= 4 entities and >= 1 relation/fact per entity");
  }
  if (cfg.facts_per_entity > cfg.num_relations) {
    throw ValidationError("toy_corpus: facts_per_entity exceeds num_relations");
  }
  const double frac_sum =
      cfg.conflict_fraction + cfg.complementary_fraction + cfg.irrelevant_fraction;
  if (cfg.conflict_fraction < 0 || cfg.complementary_fraction < 0 || cfg.irrelevant_fraction < 0 ||
      frac_sum > 1.0 + 1e-12) {
    throw ValidationError("toy_corpus: interaction fractions must be >= 0 and sum to <= 1");
  }

  ToyCorpus corpus;
  corpus.config = cfg;
  corpus.num_objects = std::max(4, cfg.num_entities / 2);

  for (const auto& w : special_words()) corpus.vocab.add(w);
  for (int i = 0; i < cfg.num_entities; ++i) corpus.vocab.add(entity_word(i));
  for (int i = 0; i < cfg.num_relations; ++i) corpus.vocab.add(relation_word(i));
  for (int i = 0; i < corpus.num_objects; ++i) corpus.vocab.add(object_word(i));

  Rng rng(mix_seed(cfg.seed, 0xC0FFEE));

  // Facts: each entity gets facts_per_entity distinct relations.
  for (int e = 0; e < cfg.num_entities; ++e) {
    std::vector<int> rel_ids(static_cast<std::size_t>(cfg.num_relations));
    for (int r = 0; r < cfg.num_relations; ++r) rel_ids[static_cast<std::size_t>(r)] = r;
    rng.shuffle(rel_ids);
    for (int k = 0; k < cfg.facts_per_entity; ++k) {
      ToyFact fact;
      fact.subject = e;
      fact.relation = rel_ids[static_cast<std::size_t>(k)];
      fact.object = rng.uniform_int(0, corpus.num_objects - 1);
      fact.text = "<bos> " + entity_word(fact.subject) + ' ' + relation_word(fact.relation) + ' ' +
                  object_word(fact.object) + " <eos>";
      corpus.facts.push_back(std::move(fact));
    }
  }

  const int n = static_cast<int>(corpus.facts.size());
  const auto labels = allocate_labels(cfg, n, rng);

  auto other_fact_statement = [&](int avoid_subject) {
    for (;;) {
      const auto& f = corpus.facts[static_cast<std::size_t>(rng.uniform_int(0, n - 1))];
      if (f.subject != avoid_subject) {
        return std::make_pair(entity_word(f.subject) + ' ' + relation_word(f.relation) + ' ' +
                                  object_word(f.object),
                              object_word(f.object));
      }
    }
  };
  auto other_object = [&](int avoid) {
    for (;;) {
      const int o = rng.uniform_int(0, corpus.num_objects - 1);
      if (o != avoid) return o;
    }
  };

  for (int i = 0; i < n; ++i) {
    const ToyFact& fact = corpus.facts[static_cast<std::size_t>(i)];
    const InteractionLabel label = labels[static_cast<std::size_t>(i)];
    const std::string pk = object_word(fact.object);

    QAExample ex;
    ToyQAMeta meta;
    char idbuf[16];
    std::snprintf(idbuf, sizeof(idbuf), "toy-%05d", i);
    ex.id = idbuf;
    meta.id = ex.id;
    meta.fact_index = i;
    meta.label = label;
    meta.pk_object = pk;

    ex.question = entity_word(fact.subject) + ' ' + relation_word(fact.relation) + " ?";
    ex.context_relevant = Relevance::Relevant;

    const auto [filler, filler_obj] = other_fact_statement(fact.subject);
    switch (label) {
      case InteractionLabel::Supportive: {
        ex.context = entity_word(fact.subject) + ' ' + relation_word(fact.relation) + ' ' + pk +
                     " <sep> " + filler;
        meta.ctx_object = pk;
        meta.intended_final = pk;
        break;
      }
      case InteractionLabel::Conflicting: {
        const std::string alt = object_word(other_object(fact.object));
        ex.context = entity_word(fact.subject) + ' ' + relation_word(fact.relation) + ' ' + alt +
                     " <sep> " + filler;
        meta.ctx_object = alt;
        meta.intended_final = alt;
        break;
      }
      case InteractionLabel::Complementary: {
        const std::string extra = object_word(other_object(fact.object));
        ex.context = entity_word(fact.subject) + ' ' + relation_word(fact.relation) + ' ' + extra +
                     " <sep> " + filler;
        ex.question = entity_word(fact.subject) + ' ' + relation_word(fact.relation) + " <pair> ?";
        meta.ctx_object = extra;
        meta.intended_final = pk + " and " + extra;
        break;
      }
      case InteractionLabel::Irrelevant: {
        const auto [other1, obj1] = other_fact_statement(fact.subject);
        const auto [other2, obj2] = other_fact_statement(fact.subject);
        ex.context = other1 + " <sep> " + other2;
        ex.context_relevant = Relevance::Irrelevant;
        meta.ctx_object = obj1;  // the copy-from-context behavior targets the lead statement
        meta.intended_final = pk;
        break;
      }
      case InteractionLabel::Suppression:
        throw ValidationError("toy_corpus does not construct suppression examples");
    }

    ex.parametric_answer = AnswerSet::from_text(pk);
    ex.contextual_answer = AnswerSet::from_text(meta.ctx_object);
    ex.final_answer = AnswerSet::from_text(meta.intended_final);
    ex.interaction = label;
    corpus.qa.push_back(std::move(ex));
    corpus.qa_meta.push_back(std::move(meta));
  }
  return corpus;
}

}  // namespace pkck::toy

#pragma once

#include "pkck/dataset.hpp"
#include "pkck/toy_model.hpp"

#include <string>
#include <vector>

namespace pkck::toy {

struct ToyCorpusConfig {
  int num_entities = 48;
  int num_relations = 4;
  int facts_per_entity = 2;
  double conflict_fraction = 0.4;
  double complementary_fraction = 0.2;
  double irrelevant_fraction = 0.1;
  // remainder is supportive
  std::uint64_t seed = 1;
};

struct ToyFact {
  int subject = 0;
  int relation = 0;
  int object = 0;
  std::string text;  // "<bos> s r o <eos>"
};

// Ground-truth metadata the QA generator knows by construction.
struct ToyQAMeta {
  std::string id;
  int fact_index = 0;
  InteractionLabel label = InteractionLabel::Supportive;
  std::string pk_object;       // a(q, phi)
  std::string ctx_object;      // a(q, c); for irrelevant: the leading statement's object
  std::string intended_final;  // the behavior the wb intent is trained toward
};

struct ToyCorpus {
  ToyCorpusConfig config;
  Vocab vocab;
  int num_objects = 0;
  std::vector<ToyFact> facts;
  std::vector<QAExample> qa;      // ground-truth answers + labels attached
  std::vector<ToyQAMeta> qa_meta;  // parallel to qa
};

// Deterministic under seed. Contexts carry the relevant statement first and
// one unrelated true statement after a "<sep>"; complementary questions carry
// the "<pair>" marker and expect "pk and ctx" under the joint intent.
ToyCorpus toy_corpus(const ToyCorpusConfig& config);

std::string entity_word(int i);
std::string relation_word(int i);
std::string object_word(int i);

}  // namespace pkck::toy

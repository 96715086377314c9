#pragma once

#include <set>
#include <string>
#include <vector>

#include "kgi/util.hpp"

namespace kgi::dataset {

// A slot-filling instance: head entity + relation, with gold answers and
// page-level provenance. Passage-level provenance is optional; it is present
// when the data carries a "passage_id" next to "wikipedia_id".
struct SlotQuery {
  std::string id;
  std::string head_entity;
  std::string relation;
  std::vector<std::string> gold_answers;
  std::set<std::string> gold_pages;
  std::set<std::string> gold_passages;

  std::string query_text() const { return head_entity + " [SEP] " + relation; }
};

// Gold JSONL, one instance per line:
//   {"id", "input", "output":[{"answer", "provenance":[{"wikipedia_id", "passage_id"?}]}]}
// "input" is "<head> [SEP] <relation>". Instances must have at least one
// answer and one provenance page; `require_gold=false` relaxes that for
// prediction-only inputs.
std::vector<SlotQuery> load_queries(const std::string& path, bool require_gold = true);
void write_queries(const std::string& path, const std::vector<SlotQuery>& queries);

}  // namespace kgi::dataset

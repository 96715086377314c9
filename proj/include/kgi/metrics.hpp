#pragma once

#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kgi/dataset.hpp"

namespace kgi::metrics {

// A system output for one query: the generated filler plus ranked page-level
// provenance (deduplicated, order preserved). `score` is the decoder
// log-probability; it is diagnostic only and not part of the wire format.
struct Prediction {
  std::string query_id;
  std::string answer;
  std::vector<std::string> provenance;
  double score = 0.0;
};

struct ScoreReport {
  double r_precision = 0.0;
  double recall_at_5 = 0.0;
  double accuracy = 0.0;
  double f1 = 0.0;
  double kilt_ac = 0.0;
  double kilt_f1 = 0.0;
  std::size_t n = 0;
};

// Lowercase, strip punctuation, drop the articles a/an/the, collapse
// whitespace. The usual QA answer normalization.
std::string normalize_answer(std::string_view text);

// Bag-of-tokens F1 against each gold, best taken. Two empty strings match
// exactly and score 1; empty vs non-empty scores 0.
double token_f1(std::string_view pred, std::span<const std::string> golds);

double accuracy(std::string_view pred, std::span<const std::string> golds);

// Precision of the top-R provenance pages, R = |gold_pages|.
double r_precision(std::span<const std::string> provenance, const std::set<std::string>& gold_pages);

double recall_at_5(std::span<const std::string> provenance, const std::set<std::string>& gold_pages);

// Answer credit gated on fully correct provenance.
double kilt_gate(double answer_score, double rprec);

ScoreReport score_dataset(std::span<const dataset::SlotQuery> golds,
                          std::span<const Prediction> preds);

std::string render_report_table(const ScoreReport& report, std::string_view method);
std::string report_to_json(const ScoreReport& report, std::string_view method);

// Prediction JSONL: {"id", "output":[{"answer", "provenance":[{"wikipedia_id"}]}]}.
void write_predictions(const std::string& path, std::span<const Prediction> preds);
std::vector<Prediction> load_predictions(const std::string& path);

}  // namespace kgi::metrics

#pragma once

#include <array>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kgi/corpus.hpp"
#include "kgi/util.hpp"

namespace kgi::gen {

// Reserved end-of-sequence token. The corpus tokenizer only emits
// alphanumeric tokens, so this can never collide with real text.
inline constexpr const char* kEosToken = "<eos>";

// Copy-scorer weights, one per feature:
//   [0] ln(1 + count of token in passage)
//   [1] ln(1 + count of token in query)
//   [2] 1 if (previous token, token) is a bigram of the passage
//   [3] 1 if token is EOS
//   [4] bias
struct GeneratorParams {
  std::array<double, 5> theta{};
};

// token -> probability; sums to 1 and always contains the EOS token.
using TokenDistribution = std::map<std::string, double>;

// Softmax over retrieval scores; used identically for dense inner products
// and raw BM25 scores.
std::vector<double> retrieval_weights(std::span<const double> scores);

// Candidate tokens and their feature rows for one decoding step of one
// (query, passage) pair. Candidates are the passage tokens, the query
// tokens, and EOS; only the bigram feature depends on the prefix.
struct CandidateTable {
  std::vector<std::string> tokens;  // sorted, EOS included
  std::vector<std::array<double, 5>> features;
};

class GenerationContext {
 public:
  GenerationContext(std::string_view query, const corpus::Passage& passage);

  // prev is the last prefix token, or nullptr at the first step.
  CandidateTable step_table(const std::string* prev) const;

  const std::vector<std::string>& candidates() const { return candidates_; }
  bool is_candidate(const std::string& token) const;

 private:
  std::map<std::string, double> passage_counts_;
  std::map<std::string, double> query_counts_;
  std::set<std::string> bigrams_;  // "prev\x1fnext"
  std::vector<std::string> candidates_;
};

std::vector<double> softmax_logits(const GeneratorParams& params, const CandidateTable& table);

TokenDistribution next_token_dist(const GeneratorParams& params, std::string_view query,
                                  const corpus::Passage& passage,
                                  std::span<const std::string> prefix);

// p(w) = sum_z weight_z * p_z(w) over the union of supports.
TokenDistribution marginal_next_token(std::span<const double> weights,
                                      std::span<const TokenDistribution> dists);

struct DecodeResult {
  std::vector<std::string> tokens;  // EOS not included
  double log_prob = 0.0;
};

// Beam search over the marginal next-token distribution. Hypotheses end at
// EOS or at max_len; the best finished hypothesis by summed log marginal
// probability wins, ties broken lexicographically on the token sequence.
DecodeResult beam_search(const GeneratorParams& params, std::string_view query,
                         std::span<const corpus::Passage* const> passages,
                         std::span<const double> weights, std::size_t beam_size,
                         std::size_t max_len);

// Generator weights in the encoder container format, section tag "GEN".
void save_generator(const std::string& path, const GeneratorParams& params);
GeneratorParams load_generator(const std::string& path);

}  // namespace kgi::gen

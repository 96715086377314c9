#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kgi/corpus.hpp"

namespace kgi::lexical {

struct Bm25Params {
  double k1 = 0.9;
  double b = 0.4;
};

struct SearchHit {
  std::string passage_id;
  double score = 0.0;
};

// Inverted index with BM25 scoring:
//   idf(t)    = ln(1 + (N - df + 0.5) / (df + 0.5))
//   score(q,p) = sum_{t in q} idf(t) * tf * (k1+1) / (tf + k1*(1-b+b*len/avg_len))
// Repeated query tokens contribute once per occurrence. Immutable after
// build; concurrent searches are safe.
class LexicalIndex {
 public:
  static LexicalIndex build(std::span<const corpus::Passage> passages, Bm25Params params = {});

  // Top-k passages by descending score, ties by ascending passage_id.
  // Zero-score passages are never returned.
  std::vector<SearchHit> search(std::string_view query, std::size_t k) const;

  std::size_t size() const { return lengths_.size(); }
  double avg_len() const { return avg_len_; }
  const Bm25Params& params() const { return params_; }

  void save(const std::string& path) const;
  static LexicalIndex load(const std::string& path);

 private:
  struct Posting {
    std::uint32_t passage = 0;  // index into ids_
    std::uint32_t tf = 0;
  };

  Bm25Params params_;
  double avg_len_ = 0.0;
  std::vector<std::string> ids_;       // passage ids in build order
  std::vector<std::uint32_t> lengths_; // token counts, same order
  std::unordered_map<std::string, std::vector<Posting>> postings_;
};

}  // namespace kgi::lexical

#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "kgi/util.hpp"

namespace kgi::corpus {

// A source document: an ordered list of paragraph texts under one title.
struct Document {
  std::string document_id;
  std::string title;
  std::vector<std::string> paragraphs;
};

// A paragraph-aligned chunk of a document. `paragraph_range` is the inclusive
// pair of paragraph ordinals covered; `truncated` is set only when a single
// over-long paragraph was cut to the token budget.
struct Passage {
  std::string passage_id;
  std::string document_id;
  std::string title;
  std::string text;
  std::pair<std::size_t, std::size_t> paragraph_range{0, 0};
  bool truncated = false;
};

// Lowercased tokens split on maximal runs of non-alphanumeric bytes.
// Multibyte UTF-8 sequences act as separators; that is acceptable for this
// corpus and keeps the tokenizer deterministic.
std::vector<std::string> tokenize(std::string_view text);

std::size_t count_tokens(std::string_view text);

// Greedy left-to-right packing of consecutive paragraphs into passages whose
// combined token count stays within `max_passage_tokens`. A single paragraph
// over the budget becomes its own truncated passage. Titles are carried on
// the passage but never counted against the budget.
std::vector<Passage> segment_document(const Document& doc, std::size_t max_passage_tokens);

class DocumentStore {
 public:
  void add(Document doc);

  const Document* find(std::string_view document_id) const;
  const std::vector<Document>& documents() const { return docs_; }
  std::size_t size() const { return docs_.size(); }

 private:
  std::vector<Document> docs_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

// Parses corpus JSONL, one {"id","title","paragraphs"} object per line.
// Reports malformed records with their line number; duplicate ids are errors.
DocumentStore ingest(std::istream& in);
DocumentStore load_corpus(const std::string& path);

std::vector<Passage> segment_all(const DocumentStore& store, std::size_t max_passage_tokens);

class PassageStore {
 public:
  PassageStore() = default;
  explicit PassageStore(std::vector<Passage> passages);

  const Passage* find(std::string_view passage_id) const;
  const Passage& require(std::string_view passage_id) const;
  const std::vector<Passage>& passages() const { return passages_; }
  std::size_t size() const { return passages_.size(); }

 private:
  std::vector<Passage> passages_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

// Passages JSONL: {"pid","doc_id","title","text","range":[a,b],"truncated"}.
void write_passages(const std::string& path, const std::vector<Passage>& passages);
PassageStore load_passages(const std::string& path);

}  // namespace kgi::corpus

#include "kgi/corpus.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace kgi::corpus {

namespace {

inline bool is_token_char(unsigned char c) { return std::isalnum(c) != 0; }

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (unsigned char c : text) {
    if (is_token_char(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

std::size_t count_tokens(std::string_view text) {
  std::size_t n = 0;
  bool in_token = false;
  for (unsigned char c : text) {
    if (is_token_char(c)) {
      if (!in_token) ++n;
      in_token = true;
    } else {
      in_token = false;
    }
  }
  return n;
}

namespace {

// Byte offset just past the end of the first `max_tokens` tokens.
std::size_t truncation_offset(std::string_view text, std::size_t max_tokens) {
  std::size_t n = 0;
  bool in_token = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (is_token_char(static_cast<unsigned char>(text[i]))) {
      if (!in_token) ++n;
      in_token = true;
    } else {
      if (in_token && n == max_tokens) return i;
      in_token = false;
    }
  }
  return text.size();
}

std::string make_passage_id(const std::string& document_id, std::size_t ordinal) {
  return document_id + "-p" + std::to_string(ordinal);
}

}  // namespace

std::vector<Passage> segment_document(const Document& doc, std::size_t max_passage_tokens) {
  if (max_passage_tokens < 1) throw ConfigError("max_passage_tokens must be >= 1");
  if (doc.paragraphs.empty())
    throw DataError("document '" + doc.document_id + "' has no paragraphs");

  std::vector<Passage> out;
  std::size_t start = 0;  // first paragraph of the open passage
  std::size_t used = 0;   // tokens accumulated in the open passage
  bool open = false;
  std::string text;

  auto flush = [&](std::size_t end_inclusive) {
    Passage p;
    p.passage_id = make_passage_id(doc.document_id, out.size());
    p.document_id = doc.document_id;
    p.title = doc.title;
    p.text = std::move(text);
    p.paragraph_range = {start, end_inclusive};
    out.push_back(std::move(p));
    text.clear();
    used = 0;
    open = false;
  };

  for (std::size_t i = 0; i < doc.paragraphs.size(); ++i) {
    const std::string& para = doc.paragraphs[i];
    std::size_t n = count_tokens(para);

    if (n > max_passage_tokens) {
      if (open) flush(i - 1);
      start = i;
      text = para.substr(0, truncation_offset(para, max_passage_tokens));
      flush(i);
      out.back().truncated = true;
      continue;
    }
    if (open && used + n > max_passage_tokens) flush(i - 1);
    if (!open) {
      start = i;
      open = true;
    }
    if (!text.empty()) text.push_back('\n');
    text += para;
    used += n;
  }
  if (open) flush(doc.paragraphs.size() - 1);
  return out;
}

void DocumentStore::add(Document doc) {
  auto [it, inserted] = by_id_.emplace(doc.document_id, docs_.size());
  if (!inserted) throw DataError("duplicate document id '" + doc.document_id + "'");
  docs_.push_back(std::move(doc));
}

const Document* DocumentStore::find(std::string_view document_id) const {
  auto it = by_id_.find(std::string(document_id));
  return it == by_id_.end() ? nullptr : &docs_[it->second];
}

DocumentStore ingest(std::istream& in) {
  DocumentStore store;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError("corpus line " + std::to_string(lineno) + ": invalid JSON: " + e.what());
    }
    Document doc;
    try {
      doc.document_id = j.at("id").get<std::string>();
      doc.title = j.value("title", std::string{});
      doc.paragraphs = j.at("paragraphs").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError("corpus line " + std::to_string(lineno) + ": " + e.what());
    }
    if (doc.paragraphs.empty())
      throw DataError("corpus line " + std::to_string(lineno) + ": empty paragraphs list");
    for (const auto& p : doc.paragraphs) {
      if (p.empty())
        throw DataError("corpus line " + std::to_string(lineno) + ": empty paragraph string");
    }
    store.add(std::move(doc));
  }
  return store;
}

DocumentStore load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus file: " + path);
  return ingest(in);
}

std::vector<Passage> segment_all(const DocumentStore& store, std::size_t max_passage_tokens) {
  std::vector<Passage> all;
  for (const auto& doc : store.documents()) {
    auto ps = segment_document(doc, max_passage_tokens);
    for (auto& p : ps) all.push_back(std::move(p));
  }
  return all;
}

PassageStore::PassageStore(std::vector<Passage> passages) : passages_(std::move(passages)) {
  for (std::size_t i = 0; i < passages_.size(); ++i) {
    auto [it, inserted] = by_id_.emplace(passages_[i].passage_id, i);
    if (!inserted) throw DataError("duplicate passage id '" + passages_[i].passage_id + "'");
  }
}

const Passage* PassageStore::find(std::string_view passage_id) const {
  auto it = by_id_.find(std::string(passage_id));
  return it == by_id_.end() ? nullptr : &passages_[it->second];
}

const Passage& PassageStore::require(std::string_view passage_id) const {
  const Passage* p = find(passage_id);
  if (!p) throw DataError("unknown passage id '" + std::string(passage_id) + "'");
  return *p;
}

void write_passages(const std::string& path, const std::vector<Passage>& passages) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write passages file: " + path);
  for (const auto& p : passages) {
    nlohmann::json j;
    j["pid"] = p.passage_id;
    j["doc_id"] = p.document_id;
    j["title"] = p.title;
    j["text"] = p.text;
    j["range"] = {p.paragraph_range.first, p.paragraph_range.second};
    j["truncated"] = p.truncated;
    out << j.dump() << '\n';
  }
}

PassageStore load_passages(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open passages file: " + path);
  std::vector<Passage> passages;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      Passage p;
      p.passage_id = j.at("pid").get<std::string>();
      p.document_id = j.at("doc_id").get<std::string>();
      p.title = j.value("title", std::string{});
      p.text = j.at("text").get<std::string>();
      auto r = j.at("range");
      p.paragraph_range = {r.at(0).get<std::size_t>(), r.at(1).get<std::size_t>()};
      p.truncated = j.value("truncated", false);
      passages.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("passages line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return PassageStore(std::move(passages));
}

}  // namespace kgi::corpus

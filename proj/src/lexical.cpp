#include "kgi/lexical.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

namespace kgi::lexical {

namespace {
constexpr std::string_view kMagic = "KGILEX1";
}

LexicalIndex LexicalIndex::build(std::span<const corpus::Passage> passages, Bm25Params params) {
  if (passages.empty()) throw DataError("cannot build BM25 index over zero passages");
  if (params.k1 < 0.0) throw ConfigError("BM25 k1 must be >= 0");
  if (params.b < 0.0 || params.b > 1.0) throw ConfigError("BM25 b must be in [0,1]");

  LexicalIndex idx;
  idx.params_ = params;
  idx.ids_.reserve(passages.size());
  idx.lengths_.reserve(passages.size());

  std::uint64_t total_len = 0;
  for (std::uint32_t i = 0; i < passages.size(); ++i) {
    const auto& p = passages[i];
    auto tokens = corpus::tokenize(p.text);
    std::map<std::string, std::uint32_t> tf;
    for (auto& t : tokens) ++tf[t];
    for (auto& [term, freq] : tf) {
      idx.postings_[term].push_back({i, freq});
    }
    idx.ids_.push_back(p.passage_id);
    idx.lengths_.push_back(static_cast<std::uint32_t>(tokens.size()));
    total_len += tokens.size();
  }
  idx.avg_len_ = static_cast<double>(total_len) / static_cast<double>(passages.size());
  return idx;
}

std::vector<SearchHit> LexicalIndex::search(std::string_view query, std::size_t k) const {
  std::vector<SearchHit> out;
  if (k == 0) return out;

  auto qtokens = corpus::tokenize(query);
  const double n = static_cast<double>(lengths_.size());
  const double k1 = params_.k1;
  const double b = params_.b;

  std::unordered_map<std::uint32_t, double> scores;
  for (const auto& t : qtokens) {
    auto it = postings_.find(t);
    if (it == postings_.end()) continue;
    const auto& plist = it->second;
    double df = static_cast<double>(plist.size());
    double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
    for (const auto& post : plist) {
      double tf = static_cast<double>(post.tf);
      double len = static_cast<double>(lengths_[post.passage]);
      double denom = tf + k1 * (1.0 - b + b * len / (avg_len_ > 0.0 ? avg_len_ : 1.0));
      scores[post.passage] += idf * tf * (k1 + 1.0) / denom;
    }
  }

  std::vector<std::pair<std::uint32_t, double>> ranked(scores.begin(), scores.end());
  std::sort(ranked.begin(), ranked.end(), [this](const auto& a, const auto& b2) {
    if (a.second != b2.second) return a.second > b2.second;
    return ids_[a.first] < ids_[b2.first];
  });
  if (ranked.size() > k) ranked.resize(k);
  out.reserve(ranked.size());
  for (const auto& [idx, score] : ranked) out.push_back({ids_[idx], score});
  return out;
}

void LexicalIndex::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write index file: " + path);
  os.write(kMagic.data(), static_cast<std::streamsize>(kMagic.size()));
  bio::write_pod<double>(os, params_.k1);
  bio::write_pod<double>(os, params_.b);
  bio::write_pod<double>(os, avg_len_);
  bio::write_pod<std::uint64_t>(os, ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    bio::write_string(os, ids_[i]);
    bio::write_pod<std::uint32_t>(os, lengths_[i]);
  }
  // term dictionary in sorted order so the file is reproducible
  std::vector<const std::string*> terms;
  terms.reserve(postings_.size());
  for (const auto& [term, _] : postings_) terms.push_back(&term);
  std::sort(terms.begin(), terms.end(), [](const auto* a, const auto* b) { return *a < *b; });
  bio::write_pod<std::uint64_t>(os, terms.size());
  for (const auto* term : terms) {
    bio::write_string(os, *term);
    const auto& plist = postings_.at(*term);
    bio::write_pod<std::uint64_t>(os, plist.size());
    for (const auto& p : plist) {
      bio::write_pod<std::uint32_t>(os, p.passage);
      bio::write_pod<std::uint32_t>(os, p.tf);
    }
  }
}

LexicalIndex LexicalIndex::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open index file: " + path);
  bio::expect_magic(is, kMagic, path);
  LexicalIndex idx;
  idx.params_.k1 = bio::read_pod<double>(is);
  idx.params_.b = bio::read_pod<double>(is);
  idx.avg_len_ = bio::read_pod<double>(is);
  auto n = bio::read_pod<std::uint64_t>(is);
  idx.ids_.reserve(n);
  idx.lengths_.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    idx.ids_.push_back(bio::read_string(is));
    idx.lengths_.push_back(bio::read_pod<std::uint32_t>(is));
  }
  auto nterms = bio::read_pod<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < nterms; ++i) {
    std::string term = bio::read_string(is);
    auto nposts = bio::read_pod<std::uint64_t>(is);
    std::vector<Posting> plist;
    plist.reserve(nposts);
    for (std::uint64_t j = 0; j < nposts; ++j) {
      Posting p;
      p.passage = bio::read_pod<std::uint32_t>(is);
      p.tf = bio::read_pod<std::uint32_t>(is);
      plist.push_back(p);
    }
    idx.postings_.emplace(std::move(term), std::move(plist));
  }
  return idx;
}

}  // namespace kgi::lexical

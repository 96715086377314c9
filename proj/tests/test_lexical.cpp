#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <map>

#include "doctest.h"
#include "kgi/lexical.hpp"
#include "kgi/util.hpp"

using namespace kgi;
using corpus::Passage;

namespace {

Passage make_passage(std::string pid, std::string text, std::string doc = "d") {
  Passage p;
  p.passage_id = std::move(pid);
  p.document_id = std::move(doc);
  p.text = std::move(text);
  return p;
}

std::vector<Passage> abc_corpus() {
  return {make_passage("p1", "a b a"), make_passage("p2", "b c"), make_passage("p3", "c d")};
}

// Independent scorer used as the brute-force oracle: recomputes df/tf/lengths
// from scratch and applies the scoring formula directly.
std::map<std::string, double> oracle_scores(const std::vector<Passage>& passages,
                                            const std::string& query, double k1, double b) {
  std::size_t n = passages.size();
  double total_len = 0.0;
  std::vector<std::map<std::string, int>> tfs(n);
  std::vector<double> lens(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto toks = corpus::tokenize(passages[i].text);
    lens[i] = static_cast<double>(toks.size());
    total_len += lens[i];
    for (const auto& t : toks) ++tfs[i][t];
  }
  double avg = total_len / static_cast<double>(n);
  std::map<std::string, double> out;
  for (const auto& qt : corpus::tokenize(query)) {
    double df = 0.0;
    for (const auto& tf : tfs) df += tf.count(qt) ? 1.0 : 0.0;
    if (df == 0.0) continue;
    double idf = std::log(1.0 + (static_cast<double>(n) - df + 0.5) / (df + 0.5));
    for (std::size_t i = 0; i < n; ++i) {
      auto it = tfs[i].find(qt);
      if (it == tfs[i].end()) continue;
      double tf = it->second;
      out[passages[i].passage_id] +=
          idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * lens[i] / avg));
    }
  }
  return out;
}

}  // namespace

TEST_CASE("bm25 score matches the hand-computed fixture") {
  auto passages = abc_corpus();
  auto idx = lexical::LexicalIndex::build(passages, {0.9, 0.4});
  auto hits = idx.search("a", 3);
  REQUIRE(hits.size() == 1);
  CHECK(hits[0].passage_id == "p1");

  // idf = ln(1 + (3 - 1 + 0.5)/(1 + 0.5)), tf = 2, len = 3, avg = 7/3
  double idf = std::log(1.0 + 2.5 / 1.5);
  double expected = idf * 2.0 * 1.9 / (2.0 + 0.9 * (0.6 + 0.4 * 3.0 / (7.0 / 3.0)));
  CHECK(hits[0].score == doctest::Approx(expected).epsilon(1e-12));
  CHECK(hits[0].score == doctest::Approx(1.241).epsilon(5e-4));
}

TEST_CASE("absent query terms contribute nothing") {
  auto idx = lexical::LexicalIndex::build(abc_corpus(), {0.9, 0.4});
  auto plain = idx.search("a", 3);
  auto padded = idx.search("a zzz", 3);
  REQUIRE(plain.size() == padded.size());
  for (std::size_t i = 0; i < plain.size(); ++i) {
    CHECK(plain[i].passage_id == padded[i].passage_id);
    CHECK(plain[i].score == doctest::Approx(padded[i].score).epsilon(1e-12));
  }
}

TEST_CASE("identical passages score identically and tie by id") {
  std::vector<Passage> passages{make_passage("pb", "x y"), make_passage("pa", "x y"),
                                make_passage("pc", "x y")};
  auto idx = lexical::LexicalIndex::build(passages, {0.9, 0.4});
  auto hits = idx.search("x", 10);
  REQUIRE(hits.size() == 3);
  CHECK(hits[0].passage_id == "pa");
  CHECK(hits[1].passage_id == "pb");
  CHECK(hits[2].passage_id == "pc");
  CHECK(hits[0].score == doctest::Approx(hits[2].score).epsilon(1e-12));
}

TEST_CASE("search caps at the match count and drops zero scores") {
  auto idx = lexical::LexicalIndex::build(abc_corpus(), {0.9, 0.4});
  CHECK(idx.search("a", 10).size() == 1);
  CHECK(idx.search("zzz", 5).empty());
  CHECK(idx.search("", 5).empty());
  CHECK(idx.search("c", 1).size() == 1);
}

TEST_CASE("build rejects an empty passage list and bad parameters") {
  CHECK_THROWS_AS(lexical::LexicalIndex::build({}, {0.9, 0.4}), DataError);
  auto passages = abc_corpus();
  CHECK_THROWS_AS(lexical::LexicalIndex::build(passages, {-1.0, 0.4}), ConfigError);
  CHECK_THROWS_AS(lexical::LexicalIndex::build(passages, {0.9, 1.5}), ConfigError);
}

TEST_CASE("fuzzed corpora: prefix property, monotone scores, oracle equivalence") {
  Rng rng(411);
  const char* vocab[] = {"ash", "bur", "cor", "dim", "eel", "fog", "gut", "hex",
                         "ivy", "jot", "kin", "lug", "mop", "nub", "oak", "pry"};
  for (int trial = 0; trial < 25; ++trial) {
    std::size_t n = 2 + rng.below(60);
    std::vector<Passage> passages;
    for (std::size_t i = 0; i < n; ++i) {
      std::string text;
      std::size_t len = 1 + rng.below(12);
      for (std::size_t w = 0; w < len; ++w) {
        if (!text.empty()) text.push_back(' ');
        text += vocab[rng.below(std::size(vocab))];
      }
      passages.push_back(make_passage("p" + std::to_string(100 + i), text));
    }
    auto idx = lexical::LexicalIndex::build(passages, {0.9, 0.4});

    for (int q = 0; q < 8; ++q) {
      std::string query;
      std::size_t qlen = 1 + rng.below(3);
      for (std::size_t w = 0; w < qlen; ++w) {
        if (!query.empty()) query.push_back(' ');
        query += vocab[rng.below(std::size(vocab))];
      }

      auto full = idx.search(query, n);
      for (std::size_t i = 0; i + 1 < full.size(); ++i) {
        CHECK(full[i].score >= full[i + 1].score);
        CHECK(full[i].score > 0.0);
      }

      std::size_t k = 1 + rng.below(6);
      auto top_k = idx.search(query, k);
      auto top_k1 = idx.search(query, k + 1);
      REQUIRE(top_k.size() <= top_k1.size());
      for (std::size_t i = 0; i < top_k.size(); ++i) {
        CHECK(top_k[i].passage_id == top_k1[i].passage_id);
      }

      auto expected = oracle_scores(passages, query, 0.9, 0.4);
      REQUIRE(full.size() == expected.size());
      for (const auto& hit : full) {
        REQUIRE(expected.count(hit.passage_id) == 1);
        CHECK(hit.score == doctest::Approx(expected[hit.passage_id]).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("index serialization round trip") {
  auto passages = abc_corpus();
  auto idx = lexical::LexicalIndex::build(passages, {1.2, 0.75});
  std::string path = "test_bm25_roundtrip.idx";
  idx.save(path);
  auto loaded = lexical::LexicalIndex::load(path);
  CHECK(loaded.size() == idx.size());
  CHECK(loaded.params().k1 == doctest::Approx(1.2));
  auto a = idx.search("a b c", 3);
  auto b = loaded.search("a b c", 3);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].passage_id == b[i].passage_id);
    CHECK(a[i].score == doctest::Approx(b[i].score).epsilon(1e-15));
  }
  std::remove(path.c_str());
}

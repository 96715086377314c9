#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sstream>

#include "doctest.h"
#include "kgi/corpus.hpp"
#include "kgi/util.hpp"

using namespace kgi;
using corpus::Document;

namespace {

std::string words(std::size_t n, const std::string& stem = "w") {
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    if (!out.empty()) out.push_back(' ');
    out += stem + std::to_string(i);
  }
  return out;
}

}  // namespace

TEST_CASE("tokenize lowercases and splits on non-alphanumeric runs") {
  CHECK(corpus::tokenize("Barack Obama (1961)") ==
        std::vector<std::string>{"barack", "obama", "1961"});
  CHECK(corpus::tokenize("") == std::vector<std::string>{});
  CHECK(corpus::tokenize("a-b a") == std::vector<std::string>{"a", "b", "a"});
  CHECK(corpus::tokenize("--;;--") == std::vector<std::string>{});
  CHECK(corpus::count_tokens("a-b a") == 3);
}

TEST_CASE("segment combines short paragraphs") {
  Document doc{"d1", "T", {words(40), words(50)}};
  auto ps = corpus::segment_document(doc, 100);
  REQUIRE(ps.size() == 1);
  CHECK(ps[0].paragraph_range == std::pair<std::size_t, std::size_t>{0, 1});
  CHECK(ps[0].truncated == false);
  CHECK(corpus::count_tokens(ps[0].text) == 90);
  CHECK(ps[0].text == doc.paragraphs[0] + "\n" + doc.paragraphs[1]);
}

TEST_CASE("segment truncates an over-long paragraph") {
  Document doc{"d1", "T", {words(130)}};
  auto ps = corpus::segment_document(doc, 100);
  REQUIRE(ps.size() == 1);
  CHECK(ps[0].truncated == true);
  CHECK(corpus::count_tokens(ps[0].text) == 100);
  CHECK(ps[0].paragraph_range == std::pair<std::size_t, std::size_t>{0, 0});
}

TEST_CASE("segment splits when the budget would overflow") {
  Document doc{"d1", "T", {words(60), words(60)}};
  auto ps = corpus::segment_document(doc, 100);
  REQUIRE(ps.size() == 2);
  CHECK(ps[0].paragraph_range == std::pair<std::size_t, std::size_t>{0, 0});
  CHECK(ps[1].paragraph_range == std::pair<std::size_t, std::size_t>{1, 1});
  CHECK_FALSE(ps[0].truncated);
  CHECK_FALSE(ps[1].truncated);
}

TEST_CASE("segment rejects documents without paragraphs") {
  Document doc{"d1", "T", {}};
  CHECK_THROWS_AS(corpus::segment_document(doc, 100), DataError);
}

TEST_CASE("titles are carried but not counted") {
  Document doc{"d1", words(500, "title"), {words(100)}};
  auto ps = corpus::segment_document(doc, 100);
  REQUIRE(ps.size() == 1);
  CHECK_FALSE(ps[0].truncated);
  CHECK(ps[0].title == doc.title);
}

TEST_CASE("ingest parses json lines and rejects bad records") {
  SUBCASE("well-formed") {
    std::istringstream in(
        R"({"id":"a","title":"A","paragraphs":["x y","z"]})"
        "\n"
        R"({"id":"b","title":"B","paragraphs":["q"]})"
        "\n");
    auto store = corpus::ingest(in);
    CHECK(store.size() == 2);
    REQUIRE(store.find("a") != nullptr);
    CHECK(store.find("a")->paragraphs.size() == 2);
    CHECK(store.find("missing") == nullptr);
  }
  SUBCASE("duplicate id") {
    std::istringstream in(
        R"({"id":"a","title":"A","paragraphs":["x"]})"
        "\n"
        R"({"id":"a","title":"A2","paragraphs":["y"]})"
        "\n");
    CHECK_THROWS_AS(corpus::ingest(in), DataError);
  }
  SUBCASE("missing paragraphs names the line") {
    std::istringstream in(
        R"({"id":"a","title":"A","paragraphs":["x"]})"
        "\n"
        R"({"id":"b","title":"B"})"
        "\n");
    CHECK_THROWS_WITH_AS(corpus::ingest(in), doctest::Contains("line 2"), DataError);
  }
  SUBCASE("invalid json names the line") {
    std::istringstream in("{nope\n");
    CHECK_THROWS_WITH_AS(corpus::ingest(in), doctest::Contains("line 1"), DataError);
  }
}

TEST_CASE("fuzzed documents keep coverage, budget, and determinism") {
  Rng rng(991);
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t max_tokens = 1 + rng.below(40);
    std::size_t n_paras = 1 + rng.below(12);
    Document doc;
    doc.document_id = "doc" + std::to_string(trial);
    doc.title = "t";
    for (std::size_t i = 0; i < n_paras; ++i) {
      std::size_t n = rng.below(2 * max_tokens + 2);
      doc.paragraphs.push_back(n == 0 ? std::string("...") : words(n, "p" + std::to_string(i) + "x"));
    }

    auto ps = corpus::segment_document(doc, max_tokens);
    auto ps2 = corpus::segment_document(doc, max_tokens);

    // determinism: byte-identical output
    REQUIRE(ps.size() == ps2.size());
    for (std::size_t i = 0; i < ps.size(); ++i) {
      CHECK(ps[i].text == ps2[i].text);
      CHECK(ps[i].passage_id == ps2[i].passage_id);
    }

    // coverage: ranges tile 0..P-1 exactly
    std::size_t next = 0;
    for (const auto& p : ps) {
      REQUIRE(p.paragraph_range.first == next);
      REQUIRE(p.paragraph_range.second >= p.paragraph_range.first);
      next = p.paragraph_range.second + 1;
    }
    CHECK(next == doc.paragraphs.size());

    // budget, and truncation only for single over-long paragraphs
    for (const auto& p : ps) {
      CHECK(corpus::count_tokens(p.text) <= max_tokens);
      bool single = p.paragraph_range.first == p.paragraph_range.second;
      bool over = single &&
                  corpus::count_tokens(doc.paragraphs[p.paragraph_range.first]) > max_tokens;
      CHECK(p.truncated == over);
    }
  }
}

TEST_CASE("passage jsonl round trip") {
  Document doc{"d9", "Title Here", {words(8), words(30), words(7)}};
  auto ps = corpus::segment_document(doc, 20);
  std::string path = "test_passages_roundtrip.jsonl";
  corpus::write_passages(path, ps);
  auto store = corpus::load_passages(path);
  REQUIRE(store.size() == ps.size());
  for (const auto& p : ps) {
    const auto* got = store.find(p.passage_id);
    REQUIRE(got != nullptr);
    CHECK(got->text == p.text);
    CHECK(got->document_id == p.document_id);
    CHECK(got->paragraph_range == p.paragraph_range);
    CHECK(got->truncated == p.truncated);
  }
  std::remove(path.c_str());
}

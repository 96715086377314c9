#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>

#include "doctest.h"
#include "kgi/metrics.hpp"
#include "kgi/util.hpp"

using namespace kgi;
using dataset::SlotQuery;
using metrics::Prediction;

TEST_CASE("normalize_answer") {
  CHECK(metrics::normalize_answer("The Beatles!") == "beatles");
  CHECK(metrics::normalize_answer("a  b") == "b");
  CHECK(metrics::normalize_answer("1961") == "1961");
  CHECK(metrics::normalize_answer("An  Apple a Day") == "apple day");
  CHECK(metrics::normalize_answer("") == "");
  CHECK(metrics::normalize_answer("!!!") == "");
}

TEST_CASE("token_f1") {
  std::vector<std::string> gold_obama{"obama"};
  CHECK(metrics::token_f1("barack obama", gold_obama) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(metrics::token_f1("barack obama", gold_obama) == doctest::Approx(0.6667).epsilon(1e-3));

  std::vector<std::string> golds{"alpha beta", "gamma"};
  CHECK(metrics::token_f1("alpha beta", golds) == 1.0);
  CHECK(metrics::token_f1("delta", golds) == 0.0);
  CHECK(metrics::token_f1("", std::vector<std::string>{""}) == 1.0);
  CHECK(metrics::token_f1("", golds) == 0.0);
  CHECK(metrics::token_f1("x", std::vector<std::string>{""}) == 0.0);
}

TEST_CASE("accuracy") {
  std::vector<std::string> golds{"Barack Obama"};
  CHECK(metrics::accuracy("barack obama", golds) == 1.0);
  CHECK(metrics::accuracy("BARACK OBAMA!", golds) == 1.0);
  CHECK(metrics::accuracy("michelle obama", golds) == 0.0);
}

TEST_CASE("r_precision") {
  CHECK(metrics::r_precision(std::vector<std::string>{"A", "B"}, {"A"}) == 1.0);
  CHECK(metrics::r_precision(std::vector<std::string>{"A", "C", "B"}, {"A", "B"}) == 0.5);
  CHECK(metrics::r_precision(std::vector<std::string>{}, {"A"}) == 0.0);
}

TEST_CASE("recall_at_5") {
  CHECK(metrics::recall_at_5(std::vector<std::string>{"x", "y", "z", "w", "A"}, {"A"}) == 1.0);
  CHECK(metrics::recall_at_5(std::vector<std::string>{"A", "x", "y", "z", "w", "B"}, {"A", "B"}) ==
        0.5);
  CHECK(metrics::recall_at_5(std::vector<std::string>{"x", "y", "z", "w", "v", "A"}, {"A"}) == 0.0);
}

TEST_CASE("kilt_gate") {
  CHECK(metrics::kilt_gate(1.0, 1.0) == 1.0);
  CHECK(metrics::kilt_gate(1.0, 0.5) == 0.0);
  CHECK(metrics::kilt_gate(0.6667, 1.0) == doctest::Approx(0.6667));
}

namespace {

SlotQuery gold(std::string id, std::vector<std::string> answers, std::set<std::string> pages) {
  SlotQuery q;
  q.id = std::move(id);
  q.head_entity = "h";
  q.relation = "r";
  q.gold_answers = std::move(answers);
  q.gold_pages = std::move(pages);
  return q;
}

Prediction pred(std::string id, std::string answer, std::vector<std::string> prov) {
  Prediction p;
  p.query_id = std::move(id);
  p.answer = std::move(answer);
  p.provenance = std::move(prov);
  return p;
}

}  // namespace

TEST_CASE("score_dataset on the six-instance hand-scored fixture") {
  std::vector<SlotQuery> golds{
      gold("q1", {"Barack Obama"}, {"P1"}),
      gold("q2", {"Obama"}, {"P1", "P2"}),
      gold("q3", {"Paris"}, {"P4"}),
      gold("q4", {"1961", "the year 1961"}, {"P5"}),
      gold("q5", {"New York City"}, {"P7"}),
      gold("q6", {"Berlin"}, {"P8"}),
  };
  std::vector<Prediction> preds{
      pred("q1", "barack obama", {"P1", "P9"}),
      pred("q2", "barack obama", {"P1", "P3", "P2"}),
      pred("q3", "", {"P4"}),
      pred("q4", "The 1961!", {"P6", "P5"}),
      pred("q5", "york city", {}),
      pred("q6", "berlin", {"P8"}),
  };
  // per instance (acc, f1, rprec, r@5):
  //   q1: 1, 1, 1, 1
  //   q2: 0, 2/3 (P=1/2, R=1), 1/2 (top-2 holds one of two golds), 1
  //   q3: 0, 0, 1, 1
  //   q4: 1 ("the 1961!" normalizes to "1961"), 1, 0 (top-1 is P6), 1
  //   q5: 0, 4/5 (P=1, R=2/3), 0, 0
  //   q6: 1, 1, 1, 1
  // gates pass only for q1 and q6.
  auto rep = metrics::score_dataset(golds, preds);
  CHECK(rep.n == 6);
  CHECK(rep.accuracy == doctest::Approx(3.0 / 6.0).epsilon(1e-12));
  CHECK(rep.f1 == doctest::Approx(67.0 / 90.0).epsilon(1e-12));
  CHECK(rep.r_precision == doctest::Approx(7.0 / 12.0).epsilon(1e-12));
  CHECK(rep.recall_at_5 == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
  CHECK(rep.kilt_ac == doctest::Approx(2.0 / 6.0).epsilon(1e-12));
  CHECK(rep.kilt_f1 == doctest::Approx(2.0 / 6.0).epsilon(1e-12));

  CHECK(rep.kilt_ac <= rep.accuracy);
  CHECK(rep.kilt_f1 <= rep.f1);
  CHECK(rep.accuracy <= rep.f1);
}

TEST_CASE("perfect predictions score 1 everywhere") {
  std::vector<SlotQuery> golds{gold("a", {"x y"}, {"P1"}), gold("b", {"z"}, {"P2"})};
  std::vector<Prediction> preds{pred("a", "x y", {"P1"}), pred("b", "z", {"P2"})};
  auto rep = metrics::score_dataset(golds, preds);
  CHECK(rep.accuracy == 1.0);
  CHECK(rep.f1 == 1.0);
  CHECK(rep.r_precision == 1.0);
  CHECK(rep.recall_at_5 == 1.0);
  CHECK(rep.kilt_ac == 1.0);
  CHECK(rep.kilt_f1 == 1.0);
}

TEST_CASE("empty answers with perfect provenance") {
  std::vector<SlotQuery> golds{gold("a", {"x"}, {"P1"})};
  std::vector<Prediction> preds{pred("a", "", {"P1"})};
  auto rep = metrics::score_dataset(golds, preds);
  CHECK(rep.accuracy == 0.0);
  CHECK(rep.r_precision == 1.0);
}

TEST_CASE("missing and duplicate predictions are errors") {
  std::vector<SlotQuery> golds{gold("a", {"x"}, {"P1"}), gold("b", {"y"}, {"P2"})};
  std::vector<Prediction> one{pred("a", "x", {"P1"})};
  CHECK_THROWS_WITH_AS(metrics::score_dataset(golds, one), doctest::Contains("b"), DataError);
  std::vector<Prediction> dup{pred("a", "x", {"P1"}), pred("a", "x", {"P1"}),
                              pred("b", "y", {"P2"})};
  CHECK_THROWS_AS(metrics::score_dataset(golds, dup), DataError);
}

TEST_CASE("fuzzed predictions satisfy the gating inequalities") {
  Rng rng(2024);
  const char* answers[] = {"alpha", "beta gamma", "delta", "", "epsilon zeta"};
  const char* pages[] = {"P1", "P2", "P3", "P4", "P5"};
  for (int trial = 0; trial < 60; ++trial) {
    std::size_t n = 1 + rng.below(12);
    std::vector<SlotQuery> golds;
    std::vector<Prediction> preds;
    double rprec_perfect = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::set<std::string> gp;
      std::size_t npages = 1 + rng.below(3);
      while (gp.size() < npages) gp.insert(pages[rng.below(std::size(pages))]);
      golds.push_back(gold("q" + std::to_string(i),
                           {answers[rng.below(std::size(answers))],
                            answers[rng.below(std::size(answers))]},
                           gp));
      std::vector<std::string> prov;
      for (const char* p : pages) {
        if (rng.below(2) == 0) prov.push_back(p);
      }
      preds.push_back(
          pred("q" + std::to_string(i), answers[rng.below(std::size(answers))], prov));
      if (metrics::r_precision(preds.back().provenance, golds.back().gold_pages) == 1.0)
        rprec_perfect += 1.0;
    }
    auto rep = metrics::score_dataset(golds, preds);
    CHECK(rep.kilt_ac <= rep.accuracy + 1e-12);
    CHECK(rep.kilt_f1 <= rep.f1 + 1e-12);
    CHECK(rep.accuracy <= rep.f1 + 1e-12);
    CHECK(rep.kilt_ac <= rprec_perfect / static_cast<double>(n) + 1e-12);

    // aggregation is order independent
    std::vector<SlotQuery> golds_rev(golds.rbegin(), golds.rend());
    std::vector<Prediction> preds_shuffled(preds);
    rng.shuffle(preds_shuffled);
    auto rep2 = metrics::score_dataset(golds_rev, preds_shuffled);
    CHECK(rep.accuracy == doctest::Approx(rep2.accuracy).epsilon(1e-12));
    CHECK(rep.f1 == doctest::Approx(rep2.f1).epsilon(1e-12));
    CHECK(rep.kilt_f1 == doctest::Approx(rep2.kilt_f1).epsilon(1e-12));
  }
}

TEST_CASE("prediction jsonl round trip") {
  std::vector<Prediction> preds{pred("a", "x y", {"P1", "P2"}), pred("b", "", {})};
  std::string path = "test_preds_roundtrip.jsonl";
  metrics::write_predictions(path, preds);
  auto loaded = metrics::load_predictions(path);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].query_id == "a");
  CHECK(loaded[0].answer == "x y");
  CHECK(loaded[0].provenance == std::vector<std::string>{"P1", "P2"});
  CHECK(loaded[1].answer == "");
  CHECK(loaded[1].provenance.empty());
  std::remove(path.c_str());
}

TEST_CASE("report rendering carries the six columns") {
  metrics::ScoreReport rep;
  rep.r_precision = 0.5;
  rep.recall_at_5 = 0.25;
  rep.accuracy = 1.0;
  rep.f1 = 0.75;
  rep.kilt_ac = 0.5;
  rep.kilt_f1 = 0.375;
  rep.n = 4;
  auto table = metrics::render_report_table(rep, "dense");
  CHECK(table.find("R-Prec") != std::string::npos);
  CHECK(table.find("Recall@5") != std::string::npos);
  CHECK(table.find("KILT-F1") != std::string::npos);
  CHECK(table.find("50.00%") != std::string::npos);
  CHECK(table.find("dense") != std::string::npos);
  auto json = metrics::report_to_json(rep, "dense");
  CHECK(json.find("\"accuracy\": 1.0") != std::string::npos);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <optional>

#include "doctest.h"
#include "kgi/generator.hpp"
#include "kgi/util.hpp"

using namespace kgi;
using corpus::Passage;
using gen::GeneratorParams;
using gen::TokenDistribution;

namespace {

Passage make_passage(std::string pid, std::string text) {
  Passage p;
  p.passage_id = std::move(pid);
  p.document_id = "d";
  p.text = std::move(text);
  return p;
}

double dist_sum(const TokenDistribution& d) {
  double s = 0.0;
  for (const auto& [_, p] : d) s += p;
  return s;
}

struct TinyInstance {
  GeneratorParams params;
  std::string query;
  std::vector<Passage> passages;
  std::vector<double> weights;
};

std::vector<const Passage*> pointers(const std::vector<Passage>& ps) {
  std::vector<const Passage*> out;
  for (const auto& p : ps) out.push_back(&p);
  return out;
}

// Exhaustive decoding oracle: enumerates every sequence that ends at EOS or
// at max_len and keeps the best by (log prob, lexicographic tokens).
struct OracleBest {
  std::vector<std::string> tokens;
  double log_prob = -std::numeric_limits<double>::infinity();
  bool set = false;
};

void oracle_extend(const TinyInstance& inst, std::vector<std::string>& prefix, double logp,
                   std::size_t max_len, OracleBest& best) {
  auto consider = [&](const std::vector<std::string>& tokens, double lp) {
    if (!best.set || lp > best.log_prob ||
        (lp == best.log_prob && tokens < best.tokens)) {
      best.tokens = tokens;
      best.log_prob = lp;
      best.set = true;
    }
  };

  std::vector<TokenDistribution> dists;
  for (const auto& p : inst.passages) {
    dists.push_back(gen::next_token_dist(inst.params, inst.query, p, prefix));
  }
  auto marginal = gen::marginal_next_token(inst.weights, dists);

  for (const auto& [tok, prob] : marginal) {
    if (prob <= 0.0) continue;
    double lp = logp + std::log(prob);
    if (tok == gen::kEosToken) {
      consider(prefix, lp);
      continue;
    }
    prefix.push_back(tok);
    if (prefix.size() >= max_len) {
      consider(prefix, lp);
    } else {
      oracle_extend(inst, prefix, lp, max_len, best);
    }
    prefix.pop_back();
  }
}

OracleBest oracle_decode(const TinyInstance& inst, std::size_t max_len) {
  OracleBest best;
  std::vector<std::string> prefix;
  oracle_extend(inst, prefix, 0.0, max_len, best);
  return best;
}

TinyInstance random_instance(Rng& rng) {
  static const char* vocab[] = {"ana", "bor", "cle", "dix", "eva"};
  TinyInstance inst;
  std::size_t nwords = 1 + rng.below(5);  // candidate vocabulary <= 5 words + EOS
  std::vector<std::string> words(vocab, vocab + nwords);

  std::size_t npass = 1 + rng.below(3);
  for (std::size_t i = 0; i < npass; ++i) {
    std::string text;
    std::size_t len = 1 + rng.below(6);
    for (std::size_t w = 0; w < len; ++w) {
      if (!text.empty()) text.push_back(' ');
      text += words[rng.below(words.size())];
    }
    inst.passages.push_back(make_passage("p" + std::to_string(i), text));
  }
  std::size_t qlen = rng.below(3);
  for (std::size_t w = 0; w < qlen; ++w) {
    if (!inst.query.empty()) inst.query.push_back(' ');
    inst.query += words[rng.below(words.size())];
  }
  for (auto& t : inst.params.theta) t = rng.gaussian() * 1.2;
  std::vector<double> raw(npass);
  for (auto& s : raw) s = rng.gaussian();
  inst.weights = gen::retrieval_weights(raw);
  return inst;
}

}  // namespace

TEST_CASE("retrieval weights") {
  auto w = gen::retrieval_weights(std::vector<double>{1.0, 2.0});
  CHECK(w[0] == doctest::Approx(0.26894).epsilon(1e-5));
  CHECK(w[1] == doctest::Approx(0.73106).epsilon(1e-5));

  auto u = gen::retrieval_weights(std::vector<double>{3.0, 3.0, 3.0});
  for (double v : u) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  auto s = gen::retrieval_weights(std::vector<double>{0.0, 100.0});
  CHECK(s[1] == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(gen::retrieval_weights(std::vector<double>{}), DataError);
  CHECK_THROWS_AS(gen::retrieval_weights(std::vector<double>{std::nan("")}), DataError);
}

TEST_CASE("weights are scale-invariant before normalization") {
  std::vector<double> raw{0.5, 1.5, -0.25};
  auto a = gen::retrieval_weights(raw);
  for (double& v : raw) v += 123.0;  // softmax shift invariance
  auto b = gen::retrieval_weights(raw);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
}

TEST_CASE("next_token_dist with zero weights is uniform over candidates") {
  GeneratorParams theta;  // zeros
  auto p = make_passage("p", "alpha beta gamma");
  auto d = gen::next_token_dist(theta, "delta", p, {});
  // candidates: alpha beta gamma delta <eos>
  CHECK(d.size() == 5);
  for (const auto& [_, prob] : d) CHECK(prob == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(dist_sum(d) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(d.count(gen::kEosToken) == 1);
}

TEST_CASE("next_token_dist matches the hand softmax of passage counts") {
  GeneratorParams theta;
  theta.theta = {1.0, 0.0, 0.0, 0.0, 0.0};
  auto p = make_passage("p", "paris is the capital");
  auto d = gen::next_token_dist(theta, "france capital", p, {});
  // logits: ln 2 for the four passage tokens, 0 for france and eos;
  // softmax denominator 4*2 + 1 + 1 = 10
  CHECK(d.at("paris") == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(d.at("is") == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(d.at("the") == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(d.at("capital") == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(d.at("france") == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(d.at(gen::kEosToken) == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("bigram feature fires only on passage bigrams") {
  GeneratorParams theta;
  theta.theta = {0.0, 0.0, 3.0, 0.0, 0.0};
  auto p = make_passage("p", "north dakota state");
  std::vector<std::string> prefix{"north"};
  auto d = gen::next_token_dist(theta, "", p, prefix);
  CHECK(d.at("dakota") > d.at("state"));
  CHECK(d.at("state") == doctest::Approx(d.at("north")).epsilon(1e-12));
}

TEST_CASE("marginal_next_token mixes distributions") {
  TokenDistribution d1{{"x", 1.0}};
  TokenDistribution d2{{"x", 0.2}, {"y", 0.8}};
  std::vector<TokenDistribution> dists{d1, d2};

  SUBCASE("identity mixture") {
    auto m = gen::marginal_next_token(std::vector<double>{1.0}, std::vector<TokenDistribution>{d2});
    CHECK(m.at("x") == doctest::Approx(0.2));
    CHECK(m.at("y") == doctest::Approx(0.8));
  }
  SUBCASE("hand mixture") {
    auto m = gen::marginal_next_token(std::vector<double>{0.25, 0.75}, dists);
    CHECK(m.at("x") == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(m.at("y") == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(dist_sum(m) == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("mismatched sizes rejected") {
    CHECK_THROWS_AS(gen::marginal_next_token(std::vector<double>{1.0}, dists), DataError);
  }
}

TEST_CASE("beam search equals greedy when each step has a majority token") {
  GeneratorParams theta;
  theta.theta = {4.0, -8.0, 2.0, 2.5, 0.0};
  auto p = make_passage("p", "tokyo tokyo tokyo");
  std::vector<Passage> ps{p};
  std::vector<double> w{1.0};
  auto result = gen::beam_search(theta, "capital japan", pointers(ps), w, 4, 3);
  // "tokyo" has passage count 3 and dominates step one; afterwards EOS wins
  REQUIRE(result.tokens.size() >= 1);
  CHECK(result.tokens[0] == "tokyo");
}

TEST_CASE("beam size one reproduces greedy decoding") {
  Rng rng(555);
  for (int trial = 0; trial < 100; ++trial) {
    auto inst = random_instance(rng);
    std::size_t max_len = 1 + rng.below(4);
    auto beam = gen::beam_search(inst.params, inst.query, pointers(inst.passages), inst.weights, 1,
                                 max_len);

    // independent greedy roll-out
    std::vector<std::string> prefix;
    double lp = 0.0;
    for (std::size_t step = 0; step < max_len; ++step) {
      std::vector<TokenDistribution> dists;
      for (const auto& p : inst.passages)
        dists.push_back(gen::next_token_dist(inst.params, inst.query, p, prefix));
      auto marginal = gen::marginal_next_token(inst.weights, dists);
      std::string best;
      double best_p = -1.0;
      for (const auto& [tok, prob] : marginal) {
        if (prob > best_p) {
          best_p = prob;
          best = tok;
        }
      }
      lp += std::log(best_p);
      if (best == gen::kEosToken) break;
      prefix.push_back(best);
    }
    CHECK(beam.tokens == prefix);
    CHECK(beam.log_prob == doctest::Approx(lp).epsilon(1e-12));
  }
}

TEST_CASE("beam search matches exhaustive enumeration on tiny instances") {
  Rng rng(808017);
  int checked = 0;
  for (int trial = 0; trial < 300; ++trial) {
    auto inst = random_instance(rng);
    std::size_t max_len = 1 + rng.below(4);
    auto beam = gen::beam_search(inst.params, inst.query, pointers(inst.passages), inst.weights, 8,
                                 max_len);
    auto oracle = oracle_decode(inst, max_len);
    REQUIRE(oracle.set);
    CHECK(beam.tokens == oracle.tokens);
    CHECK(beam.log_prob == doctest::Approx(oracle.log_prob).epsilon(1e-12));
    ++checked;
  }
  CHECK(checked == 300);
}

TEST_CASE("wider beams never lose log probability") {
  Rng rng(11);
  for (int trial = 0; trial < 60; ++trial) {
    auto inst = random_instance(rng);
    std::size_t max_len = 1 + rng.below(4);
    double prev = -std::numeric_limits<double>::infinity();
    for (std::size_t beam : {1u, 2u, 4u, 8u}) {
      auto r = gen::beam_search(inst.params, inst.query, pointers(inst.passages), inst.weights,
                                beam, max_len);
      CHECK(r.log_prob >= prev - 1e-12);
      prev = r.log_prob;
    }
  }
}

TEST_CASE("reported log prob equals the recomputed factorization") {
  Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    auto inst = random_instance(rng);
    std::size_t max_len = 1 + rng.below(4);
    auto r = gen::beam_search(inst.params, inst.query, pointers(inst.passages), inst.weights, 4,
                              max_len);

    std::vector<std::string> prefix;
    double lp = 0.0;
    auto step_prob = [&](const std::string& tok) {
      std::vector<TokenDistribution> dists;
      for (const auto& p : inst.passages)
        dists.push_back(gen::next_token_dist(inst.params, inst.query, p, prefix));
      auto marginal = gen::marginal_next_token(inst.weights, dists);
      return marginal.at(tok);
    };
    for (const auto& tok : r.tokens) {
      lp += std::log(step_prob(tok));
      prefix.push_back(tok);
    }
    if (r.tokens.size() < max_len) lp += std::log(step_prob(gen::kEosToken));
    CHECK(r.log_prob == doctest::Approx(lp).epsilon(1e-12));
  }
}

TEST_CASE("every produced distribution is normalized and carries EOS") {
  Rng rng(31337);
  for (int trial = 0; trial < 80; ++trial) {
    auto inst = random_instance(rng);
    std::vector<std::string> prefix;
    if (rng.below(2) == 0) prefix.push_back("ana");
    std::vector<TokenDistribution> dists;
    for (const auto& p : inst.passages) {
      auto d = gen::next_token_dist(inst.params, inst.query, p, prefix);
      CHECK(dist_sum(d) == doctest::Approx(1.0).epsilon(1e-9));
      CHECK(d.count(gen::kEosToken) == 1);
      for (const auto& [_, prob] : d) CHECK(prob >= 0.0);
      dists.push_back(std::move(d));
    }
    auto m = gen::marginal_next_token(inst.weights, dists);
    CHECK(dist_sum(m) == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("generator parameter container round trip") {
  GeneratorParams p;
  p.theta = {0.5, -1.25, 3.0, 0.0625, -7.5};
  std::string path = "test_gen_roundtrip.bin";
  gen::save_generator(path, p);
  auto loaded = gen::load_generator(path);
  CHECK(loaded.theta == p.theta);
  std::remove(path.c_str());
}

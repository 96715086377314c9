#include "kgi/generator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace kgi::gen {

namespace {
constexpr std::string_view kMagic = "KGIENC1";
constexpr std::string_view kTag = "GEN";
constexpr char kBigramSep = '\x1f';
}  // namespace

std::vector<double> retrieval_weights(std::span<const double> scores) {
  if (scores.empty()) throw DataError("retrieval_weights requires at least one score");
  for (double s : scores) {
    if (!std::isfinite(s)) throw DataError("retrieval_weights requires finite scores");
  }
  return softmax(scores);
}

GenerationContext::GenerationContext(std::string_view query, const corpus::Passage& passage) {
  auto ptoks = corpus::tokenize(passage.text);
  for (const auto& t : ptoks) passage_counts_[t] += 1.0;
  for (std::size_t i = 0; i + 1 < ptoks.size(); ++i) {
    bigrams_.insert(ptoks[i] + kBigramSep + ptoks[i + 1]);
  }
  for (const auto& t : corpus::tokenize(query)) query_counts_[t] += 1.0;

  std::set<std::string> cands;
  for (const auto& [t, _] : passage_counts_) cands.insert(t);
  for (const auto& [t, _] : query_counts_) cands.insert(t);
  cands.insert(kEosToken);
  candidates_.assign(cands.begin(), cands.end());
}

bool GenerationContext::is_candidate(const std::string& token) const {
  return std::binary_search(candidates_.begin(), candidates_.end(), token);
}

CandidateTable GenerationContext::step_table(const std::string* prev) const {
  CandidateTable table;
  table.tokens = candidates_;
  table.features.reserve(candidates_.size());
  for (const auto& tok : candidates_) {
    std::array<double, 5> f{};
    auto pit = passage_counts_.find(tok);
    f[0] = std::log(1.0 + (pit == passage_counts_.end() ? 0.0 : pit->second));
    auto qit = query_counts_.find(tok);
    f[1] = std::log(1.0 + (qit == query_counts_.end() ? 0.0 : qit->second));
    f[2] = prev != nullptr && bigrams_.count(*prev + kBigramSep + tok) ? 1.0 : 0.0;
    f[3] = tok == kEosToken ? 1.0 : 0.0;
    f[4] = 1.0;
    table.features.push_back(f);
  }
  return table;
}

std::vector<double> softmax_logits(const GeneratorParams& params, const CandidateTable& table) {
  std::vector<double> logits(table.tokens.size());
  for (std::size_t i = 0; i < table.tokens.size(); ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < params.theta.size(); ++k) {
      s += params.theta[k] * table.features[i][k];
    }
    logits[i] = s;
  }
  return softmax(logits);
}

TokenDistribution next_token_dist(const GeneratorParams& params, std::string_view query,
                                  const corpus::Passage& passage,
                                  std::span<const std::string> prefix) {
  GenerationContext ctx(query, passage);
  const std::string* prev = prefix.empty() ? nullptr : &prefix.back();
  auto table = ctx.step_table(prev);
  auto probs = softmax_logits(params, table);
  TokenDistribution dist;
  for (std::size_t i = 0; i < table.tokens.size(); ++i) dist[table.tokens[i]] = probs[i];
  return dist;
}

TokenDistribution marginal_next_token(std::span<const double> weights,
                                      std::span<const TokenDistribution> dists) {
  if (weights.size() != dists.size() || dists.empty())
    throw DataError("marginal_next_token requires matching, non-empty weights and distributions");
  TokenDistribution out;
  for (std::size_t z = 0; z < dists.size(); ++z) {
    for (const auto& [tok, p] : dists[z]) {
      out[tok] += weights[z] * p;
    }
  }
  return out;
}

namespace {

struct Hypothesis {
  std::vector<std::string> tokens;
  double log_prob = 0.0;
  bool ended_by_eos = false;
};

bool better(const Hypothesis& a, const Hypothesis& b) {
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  if (a.tokens != b.tokens) return a.tokens < b.tokens;
  return a.ended_by_eos && !b.ended_by_eos;
}

}  // namespace

DecodeResult beam_search(const GeneratorParams& params, std::string_view query,
                         std::span<const corpus::Passage* const> passages,
                         std::span<const double> weights, std::size_t beam_size,
                         std::size_t max_len) {
  if (beam_size < 1) throw ConfigError("beam_size must be >= 1");
  if (max_len < 1) throw ConfigError("max_len must be >= 1");
  if (passages.empty() || weights.size() != passages.size())
    throw DataError("beam_search requires matching, non-empty passages and weights");

  std::vector<GenerationContext> contexts;
  contexts.reserve(passages.size());
  for (const auto* p : passages) contexts.emplace_back(query, *p);

  std::vector<Hypothesis> active{{{}, 0.0, false}};
  std::vector<Hypothesis> finished;
  std::vector<TokenDistribution> dists(contexts.size());

  for (std::size_t step = 1; step <= max_len && !active.empty(); ++step) {
    // expansions of every live hypothesis; ended and continuing candidates
    // compete inside the same beam cut, so beam_size 1 is exactly greedy
    std::vector<Hypothesis> expanded;
    for (const auto& hyp : active) {
      const std::string* prev = hyp.tokens.empty() ? nullptr : &hyp.tokens.back();
      for (std::size_t z = 0; z < contexts.size(); ++z) {
        auto table = contexts[z].step_table(prev);
        auto probs = softmax_logits(params, table);
        TokenDistribution d;
        for (std::size_t i = 0; i < table.tokens.size(); ++i) d[table.tokens[i]] = probs[i];
        dists[z] = std::move(d);
      }
      auto marginal = marginal_next_token(weights, dists);
      for (const auto& [tok, p] : marginal) {
        if (p <= 0.0) continue;
        Hypothesis next;
        next.tokens = hyp.tokens;
        next.log_prob = hyp.log_prob + std::log(p);
        if (tok == kEosToken) {
          next.ended_by_eos = true;
        } else {
          next.tokens.push_back(tok);
        }
        expanded.push_back(std::move(next));
      }
    }
    std::sort(expanded.begin(), expanded.end(), better);
    if (expanded.size() > beam_size) expanded.resize(beam_size);
    active.clear();
    for (auto& e : expanded) {
      if (e.ended_by_eos || e.tokens.size() >= max_len) {
        finished.push_back(std::move(e));
      } else {
        active.push_back(std::move(e));
      }
    }
  }

  if (finished.empty()) throw DataError("beam search produced no finished hypothesis");
  const Hypothesis* best = &finished.front();
  for (const auto& h : finished) {
    if (better(h, *best)) best = &h;
  }
  return {best->tokens, best->log_prob};
}

void save_generator(const std::string& path, const GeneratorParams& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write generator file: " + path);
  os.write(kMagic.data(), static_cast<std::streamsize>(kMagic.size()));
  bio::write_string(os, kTag);
  bio::write_pod<std::uint64_t>(os, params.theta.size());
  for (double v : params.theta) bio::write_pod<double>(os, v);
}

GeneratorParams load_generator(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open generator file: " + path);
  bio::expect_magic(is, kMagic, path);
  std::string tag = bio::read_string(is);
  if (tag != kTag) throw DataError("expected GEN section in " + path + ", got " + tag);
  auto n = bio::read_pod<std::uint64_t>(is);
  GeneratorParams p;
  if (n != p.theta.size()) throw DataError("generator file has wrong parameter count: " + path);
  for (auto& v : p.theta) v = bio::read_pod<double>(is);
  return p;
}

}  // namespace kgi::gen

#include "kgi/retriever.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "kgi/metrics.hpp"
#include "kgi/optim.hpp"

namespace kgi::retriever {

namespace {
constexpr std::string_view kEncoderMagic = "KGIENC1";
constexpr std::string_view kEncoderTag = "ENC";
}  // namespace

std::vector<FeatureEntry> featurize(std::string_view text, std::size_t hash_dim) {
  auto tokens = corpus::tokenize(text);
  std::map<std::uint32_t, double> counts;
  for (const auto& t : tokens) {
    counts[static_cast<std::uint32_t>(fnv1a64(t) % hash_dim)] += 1.0;
  }
  double sq = 0.0;
  for (const auto& [_, c] : counts) sq += c * c;
  std::vector<FeatureEntry> out;
  out.reserve(counts.size());
  if (sq > 0.0) {
    double inv = 1.0 / std::sqrt(sq);
    for (const auto& [bucket, c] : counts) out.push_back({bucket, c * inv});
  }
  return out;
}

EncoderParams EncoderParams::init(std::size_t hash_dim, std::size_t embed_dim, std::uint64_t seed) {
  EncoderParams p;
  p.hash_dim = hash_dim;
  p.embed_dim = embed_dim;
  p.w_query = Matrix(embed_dim, hash_dim);
  p.w_passage = Matrix(embed_dim, hash_dim);
  Rng rng(seed);
  for (double& v : p.w_query.data) v = rng.uniform(-0.01, 0.01);
  for (double& v : p.w_passage.data) v = rng.uniform(-0.01, 0.01);
  return p;
}

std::string passage_input(const corpus::Passage& p) { return p.title + " " + p.text; }

std::vector<double> encode_with(const Matrix& w, std::size_t hash_dim, std::string_view text) {
  auto features = featurize(text, hash_dim);
  std::vector<double> v(w.rows, 0.0);
  for (const auto& f : features) {
    for (std::size_t r = 0; r < w.rows; ++r) {
      v[r] += w.at(r, f.bucket) * f.weight;
    }
  }
  return v;
}

std::vector<double> encode(const EncoderParams& params, Side side, std::string_view text) {
  const Matrix& w = side == Side::kQuery ? params.w_query : params.w_passage;
  return encode_with(w, params.hash_dim, text);
}

std::vector<double> encode_passage(const EncoderParams& params, const corpus::Passage& p) {
  return encode(params, Side::kPassage, passage_input(p));
}

void write_triples(const std::string& path, std::span<const TrainingTriple> triples) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write triples file: " + path);
  for (const auto& t : triples) {
    out << t.query_text << '\t' << t.positive_id << '\t' << t.negative_id << '\n';
  }
}

std::vector<TrainingTriple> load_triples(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open triples file: " + path);
  std::vector<TrainingTriple> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto t1 = line.find('\t');
    auto t2 = line.rfind('\t');
    if (t1 == std::string::npos || t2 == t1)
      throw DataError("triples line " + std::to_string(lineno) + ": expected three TAB fields");
    out.push_back({line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1), line.substr(t2 + 1)});
  }
  return out;
}

namespace {

bool ranges_overlap(const std::pair<std::size_t, std::size_t>& a,
                    const std::pair<std::size_t, std::size_t>& b) {
  return !(a.second < b.first || b.second < a.first);
}

std::vector<std::string> whitespace_tokens(const std::string& s) {
  std::istringstream iss(s);
  std::vector<std::string> toks;
  std::string t;
  while (iss >> t) toks.push_back(std::move(t));
  return toks;
}

bool contains_run(const std::vector<std::string>& haystack, const std::vector<std::string>& needle) {
  if (needle.empty()) return true;
  if (needle.size() > haystack.size()) return false;
  for (std::size_t i = 0; i + needle.size() <= haystack.size(); ++i) {
    bool match = true;
    for (std::size_t j = 0; j < needle.size(); ++j) {
      if (haystack[i + j] != needle[j]) {
        match = false;
        break;
      }
    }
    if (match) return true;
  }
  return false;
}

}  // namespace

std::optional<std::string> mine_hard_negative(const dataset::SlotQuery& query,
                                              const lexical::LexicalIndex& index,
                                              const corpus::PassageStore& passages,
                                              std::size_t pool_size) {
  auto hits = index.search(query.query_text(), pool_size);

  std::vector<std::vector<std::string>> answer_tokens;
  answer_tokens.reserve(query.gold_answers.size());
  for (const auto& a : query.gold_answers) {
    answer_tokens.push_back(whitespace_tokens(metrics::normalize_answer(a)));
  }

  for (const auto& hit : hits) {
    const corpus::Passage* cand = passages.find(hit.passage_id);
    if (!cand) continue;

    bool excluded = false;
    if (!query.gold_passages.empty()) {
      for (const auto& gold_pid : query.gold_passages) {
        const corpus::Passage* gold = passages.find(gold_pid);
        if (gold && gold->document_id == cand->document_id &&
            ranges_overlap(gold->paragraph_range, cand->paragraph_range)) {
          excluded = true;
          break;
        }
      }
    } else if (query.gold_pages.count(cand->document_id)) {
      excluded = true;
    }
    if (excluded) continue;

    auto text_tokens = whitespace_tokens(metrics::normalize_answer(cand->text));
    for (const auto& ans : answer_tokens) {
      if (contains_run(text_tokens, ans)) {
        excluded = true;
        break;
      }
    }
    if (excluded) continue;

    return hit.passage_id;
  }
  return std::nullopt;
}

namespace {

// Rank-one update g += outer(delta, phi) restricted to phi's buckets.
void accumulate_outer(Matrix& g, std::span<const double> delta,
                      const std::vector<FeatureEntry>& phi) {
  for (const auto& f : phi) {
    for (std::size_t r = 0; r < g.rows; ++r) {
      g.at(r, f.bucket) += delta[r] * f.weight;
    }
  }
}

}  // namespace

double batch_loss_into(const EncoderParams& params, std::span<const TripleBatchItem> batch,
                       Matrix& grad_query, Matrix& grad_passage) {
  const std::size_t b = batch.size();
  if (b < 2) throw DataError("in-batch loss requires a batch of at least 2");
  const std::size_t d = params.embed_dim;

  grad_query.zero();
  grad_passage.zero();

  std::vector<std::vector<FeatureEntry>> qphi(b), pphi(2 * b);
  std::vector<std::vector<double>> q(b), p(2 * b);
  for (std::size_t i = 0; i < b; ++i) {
    qphi[i] = featurize(batch[i].query_text, params.hash_dim);
    pphi[i] = featurize(passage_input(*batch[i].positive), params.hash_dim);
    pphi[b + i] = featurize(passage_input(*batch[i].negative), params.hash_dim);
  }
  auto matvec = [&](const Matrix& w, const std::vector<FeatureEntry>& phi) {
    std::vector<double> v(d, 0.0);
    for (const auto& f : phi) {
      for (std::size_t r = 0; r < d; ++r) v[r] += w.at(r, f.bucket) * f.weight;
    }
    return v;
  };
  for (std::size_t i = 0; i < b; ++i) q[i] = matvec(params.w_query, qphi[i]);
  for (std::size_t j = 0; j < 2 * b; ++j) p[j] = matvec(params.w_passage, pphi[j]);

  double loss = 0.0;
  std::vector<double> row(2 * b);
  std::vector<double> dq(d), dp_acc;
  std::vector<std::vector<double>> dp(2 * b, std::vector<double>(d, 0.0));

  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < 2 * b; ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < d; ++r) s += q[i][r] * p[j][r];
      row[j] = s;
    }
    double lse = log_sum_exp(row);
    loss += (lse - row[i]) / static_cast<double>(b);

    std::fill(dq.begin(), dq.end(), 0.0);
    for (std::size_t j = 0; j < 2 * b; ++j) {
      double prob = std::exp(row[j] - lse);
      double ds = (prob - (j == i ? 1.0 : 0.0)) / static_cast<double>(b);
      for (std::size_t r = 0; r < d; ++r) {
        dq[r] += ds * p[j][r];
        dp[j][r] += ds * q[i][r];
      }
    }
    accumulate_outer(grad_query, dq, qphi[i]);
  }
  for (std::size_t j = 0; j < 2 * b; ++j) {
    accumulate_outer(grad_passage, dp[j], pphi[j]);
  }
  return loss;
}

BatchLoss batch_loss(const EncoderParams& params, std::span<const TripleBatchItem> batch) {
  BatchLoss out;
  out.grad_query = Matrix(params.embed_dim, params.hash_dim);
  out.grad_passage = Matrix(params.embed_dim, params.hash_dim);
  out.loss = batch_loss_into(params, batch, out.grad_query, out.grad_passage);
  return out;
}

Schedule parse_schedule(std::string_view name) {
  if (name == "linear") return Schedule::kLinear;
  if (name == "triangular") return Schedule::kTriangular;
  throw ConfigError("unknown learning schedule '" + std::string(name) + "'");
}

std::string_view schedule_name(Schedule s) {
  return s == Schedule::kLinear ? "linear" : "triangular";
}

double lr_at(const TrainConfig& config, std::size_t step_instances, std::size_t total_instances) {
  if (total_instances == 0) throw ConfigError("schedule requires a positive instance total");
  double t = static_cast<double>(step_instances);
  double total = static_cast<double>(total_instances);
  double base = config.learn_rate;
  if (config.schedule == Schedule::kLinear) {
    return base * (1.0 - t / total);
  }
  double warmup = static_cast<double>(config.warmup_instances);
  if (t < warmup) return base * t / warmup;
  if (total <= warmup) return 0.0;
  return base * (total - t) / (total - warmup);
}

void write_train_log(const std::string& path, std::span<const TrainLogEntry> log) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write train log: " + path);
  for (const auto& e : log) {
    out << "{\"step\": " << e.step << ", \"loss\": " << e.loss << ", \"lr\": " << e.lr << "}\n";
  }
}

DprTrainResult train_dpr(const TrainConfig& config, std::span<const TrainingTriple> triples,
                         const corpus::PassageStore& passages, const EncoderParams& initial) {
  if (triples.empty()) throw DataError("no training triples");
  if (config.batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (config.batch_size > triples.size())
    throw DataError("batch_size exceeds the number of training triples");

  std::vector<TripleBatchItem> items;
  items.reserve(triples.size());
  for (const auto& t : triples) {
    items.push_back({t.query_text, &passages.require(t.positive_id), &passages.require(t.negative_id)});
  }

  DprTrainResult result;
  result.params = initial;
  if (config.epochs == 0) return result;

  Matrix grad_q(initial.embed_dim, initial.hash_dim);
  Matrix grad_p(initial.embed_dim, initial.hash_dim);
  optim::Adam adam({grad_q.data.size(), grad_p.data.size()},
                   {config.adam_beta1, config.adam_beta2, config.adam_epsilon, config.weight_decay});

  Rng rng(config.seed);
  std::vector<std::size_t> order(items.size());
  const std::size_t total = config.epochs * items.size();
  std::size_t consumed = 0;
  std::size_t step = 0;

  std::vector<TripleBatchItem> batch;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    for (std::size_t off = 0; off < order.size(); off += config.batch_size) {
      std::size_t end = std::min(off + config.batch_size, order.size());
      if (end - off < 2) {
        consumed += end - off;
        continue;
      }
      batch.clear();
      for (std::size_t i = off; i < end; ++i) batch.push_back(items[order[i]]);

      double lr = lr_at(config, consumed, total);
      double loss = batch_loss_into(result.params, batch, grad_q, grad_p);

      std::array<std::span<double>, 2> grads = {std::span<double>(grad_q.data),
                                                std::span<double>(grad_p.data)};
      optim::clip_global_norm(grads, config.max_grad_norm);
      std::array<std::span<double>, 2> params = {std::span<double>(result.params.w_query.data),
                                                 std::span<double>(result.params.w_passage.data)};
      std::array<std::span<const double>, 2> cgrads = {
          std::span<const double>(grad_q.data), std::span<const double>(grad_p.data)};
      adam.step(lr, params, cgrads);

      consumed += end - off;
      ++step;
      result.log.push_back({step, loss, lr});
    }
  }
  return result;
}

void save_encoder(const std::string& path, const EncoderParams& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write encoder file: " + path);
  os.write(kEncoderMagic.data(), static_cast<std::streamsize>(kEncoderMagic.size()));
  bio::write_string(os, kEncoderTag);
  bio::write_pod<std::uint64_t>(os, params.hash_dim);
  bio::write_pod<std::uint64_t>(os, params.embed_dim);
  bio::write_doubles(os, params.w_query.data);
  bio::write_doubles(os, params.w_passage.data);
}

EncoderParams load_encoder(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open encoder file: " + path);
  bio::expect_magic(is, kEncoderMagic, path);
  std::string tag = bio::read_string(is);
  if (tag != kEncoderTag) throw DataError("expected ENC section in " + path + ", got " + tag);
  EncoderParams p;
  p.hash_dim = bio::read_pod<std::uint64_t>(is);
  p.embed_dim = bio::read_pod<std::uint64_t>(is);
  p.w_query = Matrix(p.embed_dim, p.hash_dim);
  p.w_passage = Matrix(p.embed_dim, p.hash_dim);
  p.w_query.data = bio::read_doubles(is);
  p.w_passage.data = bio::read_doubles(is);
  if (p.w_query.data.size() != p.embed_dim * p.hash_dim ||
      p.w_passage.data.size() != p.embed_dim * p.hash_dim)
    throw DataError("encoder file has inconsistent dimensions: " + path);
  return p;
}

}  // namespace kgi::retriever

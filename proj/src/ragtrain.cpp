#include "kgi/ragtrain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "kgi/optim.hpp"

namespace kgi::ragtrain {

namespace {
constexpr std::string_view kCheckpointMagic = "KGICKPT1";
}

double sequence_nll_into(const gen::GeneratorParams& theta, const Matrix& w_query,
                         std::size_t hash_dim, std::string_view query_text,
                         std::span<const RetrievedPassage> retrieved,
                         std::span<const std::string> target,
                         std::array<double, 5>* grad_theta, Matrix* grad_wq) {
  if (retrieved.empty()) throw DataError("sequence_nll requires at least one retrieved passage");
  if (target.empty() || target.back() != gen::kEosToken)
    throw DataError("sequence_nll target must be non-empty and end with EOS");

  const std::size_t z_count = retrieved.size();
  const std::size_t t_count = target.size();

  // weights from the current query embedding against the frozen vectors
  auto qphi = retriever::featurize(query_text, hash_dim);
  std::vector<double> q(w_query.rows, 0.0);
  for (const auto& f : qphi) {
    for (std::size_t r = 0; r < w_query.rows; ++r) q[r] += w_query.at(r, f.bucket) * f.weight;
  }
  std::vector<double> scores(z_count);
  for (std::size_t z = 0; z < z_count; ++z) {
    double s = 0.0;
    auto fv = retrieved[z].frozen_vector;
    for (std::size_t r = 0; r < q.size() && r < fv.size(); ++r) s += q[r] * fv[r];
    scores[z] = s;
  }
  std::vector<double> w = softmax(scores);

  std::vector<gen::GenerationContext> contexts;
  contexts.reserve(z_count);
  for (const auto& rp : retrieved) contexts.emplace_back(query_text, *rp.passage);

  // structural coverage check first so the diagnostic names the exact token
  for (std::size_t t = 0; t < t_count; ++t) {
    bool covered = false;
    for (const auto& ctx : contexts) {
      if (ctx.is_candidate(target[t])) {
        covered = true;
        break;
      }
    }
    if (!covered) throw TargetNotGenerable(target[t], t);
  }

  double loss = 0.0;
  std::vector<double> dloss_dw(z_count, 0.0);

  for (std::size_t t = 0; t < t_count; ++t) {
    const std::string* prev = t == 0 ? nullptr : &target[t - 1];
    double mix = 0.0;
    std::vector<double> pz(z_count, 0.0);
    std::vector<gen::CandidateTable> tables(z_count);
    std::vector<std::vector<double>> probs(z_count);

    for (std::size_t z = 0; z < z_count; ++z) {
      tables[z] = contexts[z].step_table(prev);
      probs[z] = gen::softmax_logits(theta, tables[z]);
      const auto& toks = tables[z].tokens;
      auto it = std::lower_bound(toks.begin(), toks.end(), target[t]);
      if (it != toks.end() && *it == target[t]) {
        pz[z] = probs[z][static_cast<std::size_t>(it - toks.begin())];
      }
      mix += w[z] * pz[z];
    }
    loss -= std::log(mix);

    if (grad_theta != nullptr) {
      for (std::size_t z = 0; z < z_count; ++z) {
        if (pz[z] == 0.0) continue;
        // d(-log mix)/dtheta through p_z(target):
        //   p_z(target) * (phi(target) - E_p[phi]) scaled by -w_z/mix
        double coeff = -w[z] * pz[z] / mix;
        std::array<double, 5> expected{};
        const auto& table = tables[z];
        for (std::size_t i = 0; i < table.tokens.size(); ++i) {
          for (std::size_t k = 0; k < 5; ++k) expected[k] += probs[z][i] * table.features[i][k];
        }
        auto it = std::lower_bound(table.tokens.begin(), table.tokens.end(), target[t]);
        std::size_t ti = static_cast<std::size_t>(it - table.tokens.begin());
        for (std::size_t k = 0; k < 5; ++k) {
          (*grad_theta)[k] += coeff * (table.features[ti][k] - expected[k]);
        }
      }
    }
    for (std::size_t z = 0; z < z_count; ++z) dloss_dw[z] -= pz[z] / mix;
  }

  if (grad_wq != nullptr) {
    // back through the weight softmax into the query embedding
    double inner = 0.0;
    for (std::size_t z = 0; z < z_count; ++z) inner += w[z] * dloss_dw[z];
    std::vector<double> dq(q.size(), 0.0);
    for (std::size_t z = 0; z < z_count; ++z) {
      double ds = w[z] * (dloss_dw[z] - inner);
      auto fv = retrieved[z].frozen_vector;
      for (std::size_t r = 0; r < dq.size() && r < fv.size(); ++r) dq[r] += ds * fv[r];
    }
    for (const auto& f : qphi) {
      for (std::size_t r = 0; r < grad_wq->rows; ++r) {
        grad_wq->at(r, f.bucket) += dq[r] * f.weight;
      }
    }
  }
  return loss;
}

SequenceNll sequence_nll(const gen::GeneratorParams& theta, const Matrix& w_query,
                         std::size_t hash_dim, std::string_view query_text,
                         std::span<const RetrievedPassage> retrieved,
                         std::span<const std::string> target) {
  SequenceNll out;
  out.grad_wq = Matrix(w_query.rows, w_query.cols);
  out.loss = sequence_nll_into(theta, w_query, hash_dim, query_text, retrieved, target,
                               &out.grad_theta, &out.grad_wq);
  return out;
}

std::vector<std::string> render_target(const dataset::SlotQuery& query) {
  std::vector<std::string> target;
  if (!query.gold_answers.empty()) target = corpus::tokenize(query.gold_answers.front());
  target.push_back(gen::kEosToken);
  return target;
}

namespace {

std::vector<RetrievedPassage> retrieve(const ann::HnswIndex& index,
                                       const corpus::PassageStore& passages,
                                       std::span<const double> q, const RagTrainOptions& options) {
  std::vector<RetrievedPassage> out;
  if (options.exact_retrieval) {
    std::vector<ann::ScoredIndex> all;
    all.reserve(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) {
      auto v = index.vector_of(i);
      double s = 0.0;
      for (std::size_t r = 0; r < q.size(); ++r) s += q[r] * v[r];
      all.push_back({i, s});
    }
    std::sort(all.begin(), all.end(), [&index](const auto& a, const auto& b) {
      if (a.score != b.score) return a.score > b.score;
      return index.passage_id(a.index) < index.passage_id(b.index);
    });
    if (all.size() > options.n_retrieve) all.resize(options.n_retrieve);
    for (const auto& s : all) {
      out.push_back({&passages.require(index.passage_id(s.index)), index.vector_of(s.index)});
    }
    return out;
  }
  auto hits = index.search(q, options.n_retrieve, options.ef_search);
  for (const auto& h : hits) {
    out.push_back({&passages.require(h.passage_id), index.vector_of(h.index)});
  }
  return out;
}

}  // namespace

RagTrainResult train_rag(const retriever::TrainConfig& config, const RagTrainOptions& options,
                         std::span<const dataset::SlotQuery> dataset, const ann::HnswIndex& index,
                         const corpus::PassageStore& passages,
                         const retriever::EncoderParams& initial_encoder,
                         const gen::GeneratorParams& initial_theta) {
  if (dataset.empty()) throw DataError("train_rag requires a non-empty dataset");

  std::size_t n = dataset.size();
  if (options.max_train_instances > 0) n = std::min(n, options.max_train_instances);

  RagTrainResult result;
  result.theta = initial_theta;
  result.encoder = initial_encoder;
  if (config.epochs == 0) return result;

  std::vector<std::vector<std::string>> targets(n);
  for (std::size_t i = 0; i < n; ++i) targets[i] = render_target(dataset[i]);

  Matrix grad_wq(initial_encoder.embed_dim, initial_encoder.hash_dim);
  std::array<double, 5> grad_theta{};
  optim::Adam adam({result.theta.theta.size(), grad_wq.data.size()},
                   {config.adam_beta1, config.adam_beta2, config.adam_epsilon, config.weight_decay});

  Rng rng(config.seed);
  std::vector<std::size_t> order(n);
  const std::size_t total = config.epochs * n;
  std::size_t consumed = 0;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);

    for (std::size_t off = 0; off < n; off += config.batch_size) {
      std::size_t end = std::min(off + config.batch_size, n);
      double lr = lr_at(config, consumed, total);

      grad_wq.zero();
      grad_theta.fill(0.0);
      double loss_sum = 0.0;
      std::size_t used = 0;

      for (std::size_t i = off; i < end; ++i) {
        const auto& query = dataset[order[i]];
        auto q = retriever::encode_with(result.encoder.w_query, result.encoder.hash_dim,
                                        query.query_text());
        auto retrieved = retrieve(index, passages, q, options);
        if (retrieved.empty()) {
          ++result.skipped;
          continue;
        }
        try {
          loss_sum += sequence_nll_into(result.theta, result.encoder.w_query,
                                        result.encoder.hash_dim, query.query_text(), retrieved,
                                        targets[order[i]], &grad_theta, &grad_wq);
          ++used;
        } catch (const TargetNotGenerable&) {
          ++result.skipped;
        }
      }
      consumed += end - off;
      if (used == 0) continue;

      double inv = 1.0 / static_cast<double>(used);
      for (double& v : grad_theta) v *= inv;
      for (double& v : grad_wq.data) v *= inv;

      std::array<std::span<double>, 2> grads = {std::span<double>(grad_theta),
                                                std::span<double>(grad_wq.data)};
      optim::clip_global_norm(grads, config.max_grad_norm);
      std::array<std::span<double>, 2> params = {std::span<double>(result.theta.theta),
                                                 std::span<double>(result.encoder.w_query.data)};
      std::array<std::span<const double>, 2> cgrads = {
          std::span<const double>(grad_theta), std::span<const double>(grad_wq.data)};
      adam.step(lr, params, cgrads);

      ++step;
      result.log.push_back({step, loss_sum * inv, lr});
    }
  }
  return result;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write checkpoint file: " + path);
  os.write(kCheckpointMagic.data(), static_cast<std::streamsize>(kCheckpointMagic.size()));
  bio::write_pod<std::uint64_t>(os, ckpt.config_hash);
  bio::write_pod<std::uint64_t>(os, ckpt.index_fingerprint);
  bio::write_pod<std::uint64_t>(os, ckpt.theta.theta.size());
  for (double v : ckpt.theta.theta) bio::write_pod<double>(os, v);
  bio::write_pod<std::uint64_t>(os, ckpt.encoder.hash_dim);
  bio::write_pod<std::uint64_t>(os, ckpt.encoder.embed_dim);
  bio::write_doubles(os, ckpt.encoder.w_query.data);
  bio::write_doubles(os, ckpt.encoder.w_passage.data);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint file: " + path);
  bio::expect_magic(is, kCheckpointMagic, path);
  Checkpoint ckpt;
  ckpt.config_hash = bio::read_pod<std::uint64_t>(is);
  ckpt.index_fingerprint = bio::read_pod<std::uint64_t>(is);
  auto tn = bio::read_pod<std::uint64_t>(is);
  if (tn != ckpt.theta.theta.size())
    throw DataError("checkpoint has wrong generator parameter count: " + path);
  for (auto& v : ckpt.theta.theta) v = bio::read_pod<double>(is);
  ckpt.encoder.hash_dim = bio::read_pod<std::uint64_t>(is);
  ckpt.encoder.embed_dim = bio::read_pod<std::uint64_t>(is);
  ckpt.encoder.w_query = Matrix(ckpt.encoder.embed_dim, ckpt.encoder.hash_dim);
  ckpt.encoder.w_passage = Matrix(ckpt.encoder.embed_dim, ckpt.encoder.hash_dim);
  ckpt.encoder.w_query.data = bio::read_doubles(is);
  ckpt.encoder.w_passage.data = bio::read_doubles(is);
  if (ckpt.encoder.w_query.data.size() != ckpt.encoder.embed_dim * ckpt.encoder.hash_dim ||
      ckpt.encoder.w_passage.data.size() != ckpt.encoder.embed_dim * ckpt.encoder.hash_dim)
    throw DataError("checkpoint has inconsistent encoder dimensions: " + path);
  return ckpt;
}

}  // namespace kgi::ragtrain

#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kgi/corpus.hpp"
#include "kgi/dataset.hpp"
#include "kgi/lexical.hpp"
#include "kgi/util.hpp"

namespace kgi::retriever {

enum class Side { kQuery, kPassage };

struct FeatureEntry {
  std::uint32_t bucket = 0;
  double weight = 0.0;
};

// L2-normalized hashed token-count vector. Buckets are fnv1a64(token) mod
// hash_dim; collisions simply add. Entries come back sorted by bucket.
std::vector<FeatureEntry> featurize(std::string_view text, std::size_t hash_dim);

// Linear dual encoder over hashed bag-of-words features. Both maps share the
// feature dimension (hash_dim) and the output dimension (embed_dim).
struct EncoderParams {
  std::size_t hash_dim = 32768;
  std::size_t embed_dim = 128;
  Matrix w_query;    // embed_dim x hash_dim
  Matrix w_passage;  // embed_dim x hash_dim

  // Entries uniform in [-0.01, 0.01], drawn from `seed`.
  static EncoderParams init(std::size_t hash_dim, std::size_t embed_dim, std::uint64_t seed);
};

// The passage side encodes title + " " + text.
std::string passage_input(const corpus::Passage& p);

std::vector<double> encode_with(const Matrix& w, std::size_t hash_dim, std::string_view text);
std::vector<double> encode(const EncoderParams& params, Side side, std::string_view text);
std::vector<double> encode_passage(const EncoderParams& params, const corpus::Passage& p);

struct TrainingTriple {
  std::string query_text;
  std::string positive_id;
  std::string negative_id;
};

// Triples TSV: query_text TAB positive_pid TAB negative_pid.
void write_triples(const std::string& path, std::span<const TrainingTriple> triples);
std::vector<TrainingTriple> load_triples(const std::string& path);

// BM25-search the query text, then drop candidates that overlap gold
// provenance (by passage range when gold passages are known, else by page)
// or that contain a normalized gold answer as a contiguous token run.
// Returns the highest-ranked survivor.
std::optional<std::string> mine_hard_negative(const dataset::SlotQuery& query,
                                              const lexical::LexicalIndex& index,
                                              const corpus::PassageStore& passages,
                                              std::size_t pool_size);

struct TripleBatchItem {
  std::string query_text;
  const corpus::Passage* positive = nullptr;
  const corpus::Passage* negative = nullptr;
};

// In-batch negative log-likelihood over the 2B candidates (B positives
// followed by B hard negatives); query i is scored against all of them and
// its positive sits at column i. Gradients are exact.
double batch_loss_into(const EncoderParams& params, std::span<const TripleBatchItem> batch,
                       Matrix& grad_query, Matrix& grad_passage);

struct BatchLoss {
  double loss = 0.0;
  Matrix grad_query;
  Matrix grad_passage;
};
BatchLoss batch_loss(const EncoderParams& params, std::span<const TripleBatchItem> batch);

enum class Schedule { kLinear, kTriangular };

Schedule parse_schedule(std::string_view name);
std::string_view schedule_name(Schedule s);

struct TrainConfig {
  double learn_rate = 5e-5;
  std::size_t batch_size = 128;
  std::size_t epochs = 2;
  std::size_t warmup_instances = 0;
  Schedule schedule = Schedule::kLinear;
  double max_grad_norm = 1.0;
  double weight_decay = 0.0;
  double adam_epsilon = 1e-8;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  std::uint64_t seed = 13;
};

// Learning rate after `step_instances` of `total_instances` have been
// consumed. Linear decays base -> 0; triangular ramps 0 -> base over the
// warmup instances and then decays to 0.
double lr_at(const TrainConfig& config, std::size_t step_instances, std::size_t total_instances);

struct TrainLogEntry {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
};

void write_train_log(const std::string& path, std::span<const TrainLogEntry> log);

struct DprTrainResult {
  EncoderParams params;
  std::vector<TrainLogEntry> log;
};

// Adam with global-norm clipping over seed-shuffled batches. A trailing
// chunk of size 1 cannot form an in-batch softmax and is skipped.
DprTrainResult train_dpr(const TrainConfig& config, std::span<const TrainingTriple> triples,
                         const corpus::PassageStore& passages, const EncoderParams& initial);

// Encoder container: "KGIENC1" + section tag.
void save_encoder(const std::string& path, const EncoderParams& params);
EncoderParams load_encoder(const std::string& path);

}  // namespace kgi::retriever

#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "kgi/annindex.hpp"
#include "kgi/dataset.hpp"
#include "kgi/generator.hpp"
#include "kgi/retriever.hpp"

namespace kgi::ragtrain {

// Raised when a target token is outside every retrieved passage's candidate
// set: the mixture probability is exactly zero, so the loss is infinite.
// Training catches this and skips the instance.
class TargetNotGenerable : public DataError {
 public:
  TargetNotGenerable(std::string token, std::size_t step)
      : DataError("target token '" + token + "' at step " + std::to_string(step) +
                  " is not generable from any retrieved passage"),
        token_(std::move(token)),
        step_(step) {}

  const std::string& token() const { return token_; }
  std::size_t step() const { return step_; }

 private:
  std::string token_;
  std::size_t step_;
};

struct RetrievedPassage {
  const corpus::Passage* passage = nullptr;
  std::span<const double> frozen_vector;  // dequantized stored vector
};

// Negative log-likelihood of `target` under the mixture of per-passage
// copy-generator distributions, weighted by softmaxed inner products between
// the current query embedding and the frozen passage vectors:
//   loss = -sum_t log(sum_z w_z * p_z(target_t | query, passage_z, target_<t))
// Gradients flow into theta through the per-passage distributions and into
// w_query through the softmax weights only; the retrieved set is fixed.
// `target` must be non-empty and end with the EOS token.
double sequence_nll_into(const gen::GeneratorParams& theta, const Matrix& w_query,
                         std::size_t hash_dim, std::string_view query_text,
                         std::span<const RetrievedPassage> retrieved,
                         std::span<const std::string> target,
                         std::array<double, 5>* grad_theta, Matrix* grad_wq);

struct SequenceNll {
  double loss = 0.0;
  std::array<double, 5> grad_theta{};
  Matrix grad_wq;
};

SequenceNll sequence_nll(const gen::GeneratorParams& theta, const Matrix& w_query,
                         std::size_t hash_dim, std::string_view query_text,
                         std::span<const RetrievedPassage> retrieved,
                         std::span<const std::string> target);

struct RagTrainOptions {
  std::size_t n_retrieve = 20;
  std::size_t ef_search = 128;
  bool exact_retrieval = false;    // brute force instead of the graph, for debugging
  std::size_t max_train_instances = 0;  // 0 keeps the whole dataset
};

struct RagTrainResult {
  gen::GeneratorParams theta;
  retriever::EncoderParams encoder;  // w_query fine-tuned, w_passage untouched
  std::vector<retriever::TrainLogEntry> log;
  std::size_t skipped = 0;
};

// Joint fine-tuning of the generator weights and the query encoder against
// the target tail entity. Retrieval is re-run with the current query encoder
// every step; passage vectors and the passage encoder stay frozen.
RagTrainResult train_rag(const retriever::TrainConfig& config, const RagTrainOptions& options,
                         std::span<const dataset::SlotQuery> dataset, const ann::HnswIndex& index,
                         const corpus::PassageStore& passages,
                         const retriever::EncoderParams& initial_encoder,
                         const gen::GeneratorParams& initial_theta);

// Target rendering: the first gold answer tokenized, plus EOS.
std::vector<std::string> render_target(const dataset::SlotQuery& query);

// Checkpoint bundling generator weights, both encoder matrices, and the
// fingerprints tying it to its config and ANN index ("KGICKPT1").
struct Checkpoint {
  gen::GeneratorParams theta;
  retriever::EncoderParams encoder;
  std::uint64_t index_fingerprint = 0;
  std::uint64_t config_hash = 0;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace kgi::ragtrain

#pragma once

#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kgi/annindex.hpp"
#include "kgi/dataset.hpp"
#include "kgi/generator.hpp"
#include "kgi/lexical.hpp"
#include "kgi/metrics.hpp"
#include "kgi/ragtrain.hpp"
#include "kgi/retriever.hpp"

namespace kgi::pipeline {

enum class RetrieverMode { kDense, kBm25 };

RetrieverMode parse_retriever_mode(std::string_view name);
std::string_view retriever_mode_name(RetrieverMode mode);

// One configuration drives the whole stage DAG. Relative paths are resolved
// against the directory of the config file.
struct PipelineConfig {
  // inputs
  std::string corpus_path;
  std::string train_path;
  std::string dev_path;
  std::string output_dir;

  // artifacts (all default to files under output_dir)
  std::string passages_path;
  std::string bm25_index_path;
  std::string triples_path;
  std::string encoder_path;
  std::string vectors_path;
  std::string ann_index_path;
  std::string checkpoint_path;
  std::string predictions_path;
  std::string report_json_path;
  std::string report_txt_path;
  std::string dpr_log_path;
  std::string rag_log_path;

  // parameters
  std::size_t max_passage_tokens = 100;
  lexical::Bm25Params bm25;
  std::size_t mine_pool_size = 50;
  std::size_t hash_dim = 32768;
  std::size_t embed_dim = 128;
  retriever::TrainConfig dpr;
  retriever::TrainConfig rag;
  std::size_t rag_max_train_instances = 0;
  bool rag_exact_retrieval = false;
  ann::BuildParams ann;
  std::size_t ef_search = 128;
  std::size_t beam = 4;
  std::size_t max_len = 16;
  std::size_t n_retrieve = 20;
  RetrieverMode retriever_mode = RetrieverMode::kDense;

  // configured (unresolved) spelling of each resolved path, for artifact
  // metadata that must not depend on where the run happens to live
  std::map<std::string, std::string> display_paths;

  std::string display_path(const std::string& resolved) const;
};

// Minimal TOML-style file: [section] headers, key = value lines, "#"
// comments, quoted strings, numbers, booleans. Overrides are section.key
// pairs applied on top before validation; unknown keys are errors.
PipelineConfig load_config(const std::string& path,
                           const std::vector<std::pair<std::string, std::string>>& overrides = {});

enum class Stage {
  kSegment,
  kIndexBm25,
  kMine,
  kTrainDpr,
  kEncode,
  kBuildAnn,
  kTrainRag,
  kPredict,
  kEvaluate,
};

Stage parse_stage(std::string_view name);
std::string_view stage_name(Stage stage);

// Hash of the parameters a stage consumes; recorded in artifact metadata and
// checked when downstream stages consume the artifact.
std::uint64_t config_hash(const PipelineConfig& config, Stage stage);

// Runs one stage, writing its artifact files plus a ".meta.json" sidecar
// recording the config hash and input fingerprints. Returns a short human
// summary (for `evaluate`, the report table).
std::string run_stage(const PipelineConfig& config, Stage stage);

// Loads the trained artifacts once and serves predictions.
class Predictor {
 public:
  explicit Predictor(const PipelineConfig& config);
  ~Predictor();
  Predictor(const Predictor&) = delete;
  Predictor& operator=(const Predictor&) = delete;

  metrics::Prediction predict_one(const dataset::SlotQuery& query) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// End-to-end decoding for a batch of queries: retrieve, weight, beam-search,
// emit answer plus page-deduplicated provenance.
std::vector<metrics::Prediction> predict(const PipelineConfig& config,
                                         std::span<const dataset::SlotQuery> queries);

struct InfoboxRow {
  std::string relation;
  std::string filler;
  std::string page;  // top provenance page, empty when nothing was retrieved
};

struct Infobox {
  std::string entity;
  std::vector<InfoboxRow> rows;
};

Infobox fill_infobox(const PipelineConfig& config, const std::string& entity,
                     std::span<const std::string> relations);

std::string render_infobox_text(const Infobox& box);
std::string render_infobox_json(const Infobox& box);

}  // namespace kgi::pipeline

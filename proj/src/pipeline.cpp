#include "kgi/pipeline.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;

namespace kgi::pipeline {

RetrieverMode parse_retriever_mode(std::string_view name) {
  if (name == "dense") return RetrieverMode::kDense;
  if (name == "bm25") return RetrieverMode::kBm25;
  throw ConfigError("unknown retriever mode '" + std::string(name) + "' (expected dense or bm25)");
}

std::string_view retriever_mode_name(RetrieverMode mode) {
  return mode == RetrieverMode::kDense ? "dense" : "bm25";
}

std::string PipelineConfig::display_path(const std::string& resolved) const {
  auto it = display_paths.find(resolved);
  return it != display_paths.end() ? it->second : resolved;
}

namespace {

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

std::map<std::string, std::string> parse_toml_lite(std::istream& in, const std::string& path) {
  std::map<std::string, std::string> out;
  std::string section;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    if (s[0] == '[') {
      auto close = s.find(']');
      if (close == std::string::npos)
        throw ConfigError(path + " line " + std::to_string(lineno) + ": unterminated section header");
      section = trim(s.substr(1, close - 1));
      continue;
    }
    auto eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + " line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(s.substr(0, eq));
    std::string value = trim(s.substr(eq + 1));
    if (!value.empty() && value[0] == '"') {
      auto close = value.find('"', 1);
      if (close == std::string::npos)
        throw ConfigError(path + " line " + std::to_string(lineno) + ": unterminated string");
      value = value.substr(1, close - 1);
    } else {
      auto hash = value.find('#');
      if (hash != std::string::npos) value = trim(value.substr(0, hash));
    }
    if (key.empty() || value.empty())
      throw ConfigError(path + " line " + std::to_string(lineno) + ": empty key or value");
    std::string full = section.empty() ? key : section + "." + key;
    if (!out.emplace(full, value).second)
      throw ConfigError(path + " line " + std::to_string(lineno) + ": duplicate key " + full);
  }
  return out;
}

class ConfigMap {
 public:
  explicit ConfigMap(std::map<std::string, std::string> kv) : kv_(std::move(kv)) {}

  std::string get_string(const std::string& key, const std::string& def) {
    auto v = raw(key);
    return v ? *v : def;
  }

  double get_double(const std::string& key, double def) {
    auto v = raw(key);
    if (!v) return def;
    try {
      std::size_t pos = 0;
      double d = std::stod(*v, &pos);
      if (pos != v->size()) throw std::invalid_argument("trailing characters");
      return d;
    } catch (const std::exception&) {
      throw ConfigError("config key " + key + ": '" + *v + "' is not a number");
    }
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t def) {
    auto v = raw(key);
    if (!v) return def;
    try {
      std::size_t pos = 0;
      auto u = std::stoull(*v, &pos);
      if (pos != v->size()) throw std::invalid_argument("trailing characters");
      return u;
    } catch (const std::exception&) {
      throw ConfigError("config key " + key + ": '" + *v + "' is not a non-negative integer");
    }
  }

  std::size_t get_size(const std::string& key, std::size_t def) {
    return static_cast<std::size_t>(get_u64(key, def));
  }

  bool get_bool(const std::string& key, bool def) {
    auto v = raw(key);
    if (!v) return def;
    if (*v == "true") return true;
    if (*v == "false") return false;
    throw ConfigError("config key " + key + ": '" + *v + "' is not true/false");
  }

  void finish() const {
    for (const auto& [k, _] : kv_) {
      if (!used_.count(k)) throw ConfigError("unknown config key '" + k + "'");
    }
  }

 private:
  std::optional<std::string> raw(const std::string& key) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return std::nullopt;
    used_.insert(key);
    return it->second;
  }

  std::map<std::string, std::string> kv_;
  std::set<std::string> used_;
};

retriever::TrainConfig read_train_config(ConfigMap& cm, const std::string& section,
                                         const retriever::TrainConfig& defaults) {
  retriever::TrainConfig t = defaults;
  t.learn_rate = cm.get_double(section + ".learn_rate", defaults.learn_rate);
  t.batch_size = cm.get_size(section + ".batch_size", defaults.batch_size);
  t.epochs = cm.get_size(section + ".epochs", defaults.epochs);
  t.warmup_instances = cm.get_size(section + ".warmup_instances", defaults.warmup_instances);
  t.schedule = retriever::parse_schedule(cm.get_string(
      section + ".learning_schedule", std::string(retriever::schedule_name(defaults.schedule))));
  t.max_grad_norm = cm.get_double(section + ".max_grad_norm", defaults.max_grad_norm);
  t.weight_decay = cm.get_double(section + ".weight_decay", defaults.weight_decay);
  t.adam_epsilon = cm.get_double(section + ".adam_epsilon", defaults.adam_epsilon);
  t.adam_beta1 = cm.get_double(section + ".adam_beta1", defaults.adam_beta1);
  t.adam_beta2 = cm.get_double(section + ".adam_beta2", defaults.adam_beta2);
  t.seed = cm.get_u64(section + ".seed", defaults.seed);
  if (t.learn_rate <= 0.0) throw ConfigError(section + ".learn_rate must be > 0");
  if (t.batch_size < 2) throw ConfigError(section + ".batch_size must be >= 2");
  if (t.max_grad_norm <= 0.0) throw ConfigError(section + ".max_grad_norm must be > 0");
  return t;
}

}  // namespace

PipelineConfig load_config(const std::string& path,
                           const std::vector<std::pair<std::string, std::string>>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  auto kv = parse_toml_lite(in, path);
  for (const auto& [k, v] : overrides) kv[k] = v;
  ConfigMap cm(std::move(kv));

  PipelineConfig c;
  fs::path base = fs::path(path).parent_path();

  auto resolve = [&](const std::string& configured) {
    fs::path p(configured);
    std::string resolved =
        p.is_absolute() ? p.lexically_normal().string() : (base / p).lexically_normal().string();
    c.display_paths[resolved] = configured;
    return resolved;
  };

  c.corpus_path = resolve(cm.get_string("paths.corpus", "corpus.jsonl"));
  c.train_path = resolve(cm.get_string("paths.train", "train.jsonl"));
  c.dev_path = resolve(cm.get_string("paths.dev", "dev.jsonl"));
  std::string out_cfg = cm.get_string("paths.output_dir", "out");
  c.output_dir = resolve(out_cfg);

  auto artifact = [&](const std::string& key, const std::string& filename) {
    return resolve(cm.get_string(key, out_cfg + "/" + filename));
  };
  c.passages_path = artifact("paths.passages", "passages.jsonl");
  c.bm25_index_path = artifact("paths.bm25_index", "bm25.idx");
  c.triples_path = artifact("paths.triples", "triples.tsv");
  c.encoder_path = artifact("paths.encoder", "encoder.bin");
  c.vectors_path = artifact("paths.vectors", "vectors.bin");
  c.ann_index_path = artifact("paths.ann_index", "ann.idx");
  c.checkpoint_path = artifact("paths.checkpoint", "checkpoint.bin");
  c.predictions_path = artifact("paths.predictions", "predictions.jsonl");
  c.report_json_path = artifact("paths.report_json", "report.json");
  c.report_txt_path = artifact("paths.report_txt", "report.txt");
  c.dpr_log_path = artifact("paths.dpr_log", "dpr_log.jsonl");
  c.rag_log_path = artifact("paths.rag_log", "rag_log.jsonl");

  c.max_passage_tokens = cm.get_size("corpus.max_passage_tokens", 100);
  if (c.max_passage_tokens < 1) throw ConfigError("corpus.max_passage_tokens must be >= 1");

  c.bm25.k1 = cm.get_double("bm25.k1", 0.9);
  c.bm25.b = cm.get_double("bm25.b", 0.4);
  if (c.bm25.k1 < 0.0) throw ConfigError("bm25.k1 must be >= 0");
  if (c.bm25.b < 0.0 || c.bm25.b > 1.0) throw ConfigError("bm25.b must be in [0,1]");

  c.mine_pool_size = cm.get_size("mine.pool_size", 50);
  if (c.mine_pool_size < 1) throw ConfigError("mine.pool_size must be >= 1");

  c.hash_dim = cm.get_size("encoder.hash_dim", 32768);
  c.embed_dim = cm.get_size("encoder.embed_dim", 128);
  if (c.hash_dim < 2) throw ConfigError("encoder.hash_dim must be >= 2");
  if (c.embed_dim < 1) throw ConfigError("encoder.embed_dim must be >= 1");

  retriever::TrainConfig dpr_defaults;  // 5e-5 / 128 / 2 / linear, per-table defaults
  c.dpr = read_train_config(cm, "dpr", dpr_defaults);

  retriever::TrainConfig rag_defaults;
  rag_defaults.learn_rate = 3e-5;
  rag_defaults.epochs = 1;
  rag_defaults.warmup_instances = 10000;
  rag_defaults.schedule = retriever::Schedule::kTriangular;
  rag_defaults.seed = 29;
  c.rag = read_train_config(cm, "rag", rag_defaults);
  c.rag_max_train_instances = cm.get_size("rag.max_train_instances", 0);
  c.rag_exact_retrieval = cm.get_bool("rag.exact_retrieval", false);

  c.ann.m = cm.get_size("ann.hnsw_m", 16);
  c.ann.ef_construction = cm.get_size("ann.ef_construction", 200);
  c.ann.seed = cm.get_u64("ann.seed", 17);
  c.ef_search = cm.get_size("ann.ef_search", 128);
  if (c.ann.m < 2) throw ConfigError("ann.hnsw_m must be >= 2");
  if (c.ann.ef_construction < 1) throw ConfigError("ann.ef_construction must be >= 1");
  if (c.ef_search < 1) throw ConfigError("ann.ef_search must be >= 1");

  c.beam = cm.get_size("decode.beam", 4);
  c.max_len = cm.get_size("decode.max_len", 16);
  c.n_retrieve = cm.get_size("decode.n_retrieve", 20);
  c.retriever_mode = parse_retriever_mode(cm.get_string("decode.retriever", "dense"));
  if (c.beam < 1) throw ConfigError("decode.beam must be >= 1");
  if (c.max_len < 1) throw ConfigError("decode.max_len must be >= 1");
  if (c.n_retrieve < 1) throw ConfigError("decode.n_retrieve must be >= 1");

  cm.finish();
  return c;
}

Stage parse_stage(std::string_view name) {
  if (name == "segment") return Stage::kSegment;
  if (name == "index-bm25") return Stage::kIndexBm25;
  if (name == "mine") return Stage::kMine;
  if (name == "train-dpr") return Stage::kTrainDpr;
  if (name == "encode") return Stage::kEncode;
  if (name == "build-ann") return Stage::kBuildAnn;
  if (name == "train-rag") return Stage::kTrainRag;
  if (name == "predict") return Stage::kPredict;
  if (name == "evaluate") return Stage::kEvaluate;
  throw ConfigError("unknown stage '" + std::string(name) + "'");
}

std::string_view stage_name(Stage stage) {
  switch (stage) {
    case Stage::kSegment: return "segment";
    case Stage::kIndexBm25: return "index-bm25";
    case Stage::kMine: return "mine";
    case Stage::kTrainDpr: return "train-dpr";
    case Stage::kEncode: return "encode";
    case Stage::kBuildAnn: return "build-ann";
    case Stage::kTrainRag: return "train-rag";
    case Stage::kPredict: return "predict";
    case Stage::kEvaluate: return "evaluate";
  }
  throw ConfigError("invalid stage");
}

namespace {

void hash_train_config(std::ostringstream& os, const retriever::TrainConfig& t) {
  os << t.learn_rate << ';' << t.batch_size << ';' << t.epochs << ';' << t.warmup_instances << ';'
     << retriever::schedule_name(t.schedule) << ';' << t.max_grad_norm << ';' << t.weight_decay
     << ';' << t.adam_epsilon << ';' << t.adam_beta1 << ';' << t.adam_beta2 << ';' << t.seed;
}

}  // namespace

std::uint64_t config_hash(const PipelineConfig& c, Stage stage) {
  std::ostringstream os;
  os.precision(17);
  os << stage_name(stage) << ';';
  switch (stage) {
    case Stage::kSegment:
      os << c.max_passage_tokens;
      break;
    case Stage::kIndexBm25:
      os << c.bm25.k1 << ';' << c.bm25.b;
      break;
    case Stage::kMine:
      os << c.bm25.k1 << ';' << c.bm25.b << ';' << c.mine_pool_size;
      break;
    case Stage::kTrainDpr:
      os << c.hash_dim << ';' << c.embed_dim << ';';
      hash_train_config(os, c.dpr);
      break;
    case Stage::kEncode:
      os << c.hash_dim << ';' << c.embed_dim;
      break;
    case Stage::kBuildAnn:
      os << c.ann.m << ';' << c.ann.ef_construction << ';' << c.ann.seed;
      break;
    case Stage::kTrainRag:
      os << c.hash_dim << ';' << c.embed_dim << ';' << c.n_retrieve << ';' << c.ef_search << ';'
         << c.rag_exact_retrieval << ';' << c.rag_max_train_instances << ';';
      hash_train_config(os, c.rag);
      break;
    case Stage::kPredict:
      os << retriever_mode_name(c.retriever_mode) << ';' << c.beam << ';' << c.max_len << ';'
         << c.n_retrieve << ';' << c.ef_search;
      break;
    case Stage::kEvaluate:
      break;
  }
  return fnv1a64(os.str());
}

namespace {

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_meta(const PipelineConfig& c, const std::string& artifact, Stage stage,
                const std::vector<std::string>& inputs) {
  nlohmann::json j;
  j["stage"] = std::string(stage_name(stage));
  j["config_hash"] = hex64(config_hash(c, stage));
  nlohmann::json jin = nlohmann::json::object();
  for (const auto& in : inputs) {
    jin[c.display_path(in)] = hex64(fingerprint_file(in));
  }
  j["inputs"] = jin;
  nlohmann::json jout = nlohmann::json::object();
  jout[c.display_path(artifact)] = hex64(fingerprint_file(artifact));
  j["outputs"] = jout;
  std::ofstream os(artifact + ".meta.json");
  if (!os) throw DataError("cannot write metadata for " + artifact);
  os << j.dump(2) << '\n';
}

std::string resolve_display(const PipelineConfig& c, const std::string& display) {
  for (const auto& [resolved, configured] : c.display_paths) {
    if (configured == display) return resolved;
  }
  return display;
}

void require_input_file(const std::string& path, const std::string& what) {
  if (!fs::exists(path)) {
    throw MissingArtifactError(what + " not found: " + path);
  }
}

// An artifact is usable when it exists, carries metadata, was produced by the
// expected stage under the current configuration, and neither it nor its
// recorded inputs changed since.
void require_artifact(const PipelineConfig& c, const std::string& path, Stage producer) {
  std::string meta_path = path + ".meta.json";
  if (!fs::exists(path) || !fs::exists(meta_path)) {
    throw MissingArtifactError("missing artifact " + c.display_path(path) + "; run stage '" +
                               std::string(stage_name(producer)) + "' first");
  }
  nlohmann::json meta;
  try {
    std::ifstream is(meta_path);
    is >> meta;
  } catch (const std::exception& e) {
    throw DataError("unreadable metadata " + meta_path + ": " + e.what());
  }
  if (meta.value("stage", std::string{}) != stage_name(producer)) {
    throw DataError("artifact " + c.display_path(path) + " was not produced by stage '" +
                    std::string(stage_name(producer)) + "'");
  }
  if (meta.value("config_hash", std::string{}) != hex64(config_hash(c, producer))) {
    throw DataError("artifact " + c.display_path(path) +
                    " was built under a different configuration; re-run stage '" +
                    std::string(stage_name(producer)) + "'");
  }
  const auto outputs = meta.value("outputs", nlohmann::json::object());
  for (const auto& [display, fp] : outputs.items()) {
    std::string resolved = resolve_display(c, display);
    if (!fs::exists(resolved) || hex64(fingerprint_file(resolved)) != fp.get<std::string>()) {
      throw DataError("artifact " + display + " changed since stage '" +
                      std::string(stage_name(producer)) + "' wrote it; re-run that stage");
    }
  }
  const auto inputs = meta.value("inputs", nlohmann::json::object());
  for (const auto& [display, fp] : inputs.items()) {
    std::string resolved = resolve_display(c, display);
    if (!fs::exists(resolved) || hex64(fingerprint_file(resolved)) != fp.get<std::string>()) {
      throw DataError("input " + display + " changed after stage '" +
                      std::string(stage_name(producer)) + "' ran; re-run stage '" +
                      std::string(stage_name(producer)) + "'");
    }
  }
}

constexpr std::string_view kVectorsMagic = "KGIVEC1";

void write_vectors(const std::string& path, const std::vector<std::string>& ids,
                   const std::vector<std::vector<double>>& vectors, std::size_t dim) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write vectors file: " + path);
  os.write(kVectorsMagic.data(), static_cast<std::streamsize>(kVectorsMagic.size()));
  bio::write_pod<std::uint64_t>(os, ids.size());
  bio::write_pod<std::uint64_t>(os, dim);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    bio::write_string(os, ids[i]);
    bio::write_raw(os, vectors[i].data(), dim * sizeof(double));
  }
}

void load_vectors(const std::string& path, std::vector<std::string>& ids,
                  std::vector<std::vector<double>>& vectors) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open vectors file: " + path);
  bio::expect_magic(is, kVectorsMagic, path);
  auto n = bio::read_pod<std::uint64_t>(is);
  auto dim = bio::read_pod<std::uint64_t>(is);
  ids.clear();
  vectors.assign(n, std::vector<double>(dim));
  for (std::uint64_t i = 0; i < n; ++i) {
    ids.push_back(bio::read_string(is));
    bio::read_raw(is, vectors[i].data(), dim * sizeof(double));
  }
}

// Positive passage choice: the best BM25-ranked gold passage when passage
// provenance is known, else the best-ranked passage from a gold page, else
// the first stored passage of the first gold page.
std::optional<std::string> choose_positive(
    const dataset::SlotQuery& q, const std::vector<lexical::SearchHit>& ranked,
    const corpus::PassageStore& store,
    const std::map<std::string, std::vector<std::string>>& page_passages) {
  if (!q.gold_passages.empty()) {
    for (const auto& h : ranked) {
      if (q.gold_passages.count(h.passage_id)) return h.passage_id;
    }
    for (const auto& pid : q.gold_passages) {
      if (store.find(pid) != nullptr) return pid;
    }
  }
  for (const auto& h : ranked) {
    const auto* p = store.find(h.passage_id);
    if (p != nullptr && q.gold_pages.count(p->document_id)) return h.passage_id;
  }
  for (const auto& page : q.gold_pages) {
    auto it = page_passages.find(page);
    if (it != page_passages.end() && !it->second.empty()) return it->second.front();
  }
  return std::nullopt;
}

}  // namespace

struct Predictor::Impl {
  PipelineConfig config;
  corpus::PassageStore store;
  ragtrain::Checkpoint ckpt;
  std::optional<ann::HnswIndex> index;
  std::optional<lexical::LexicalIndex> bm25;
};

Predictor::Predictor(const PipelineConfig& config) : impl_(new Impl{config, {}, {}, {}, {}}) {
  require_artifact(config, config.passages_path, Stage::kSegment);
  require_artifact(config, config.checkpoint_path, Stage::kTrainRag);
  impl_->store = corpus::load_passages(config.passages_path);
  impl_->ckpt = ragtrain::load_checkpoint(config.checkpoint_path);
  if (config.retriever_mode == RetrieverMode::kDense) {
    require_artifact(config, config.ann_index_path, Stage::kBuildAnn);
    impl_->index = ann::HnswIndex::load(config.ann_index_path);
    if (impl_->index->fingerprint() != impl_->ckpt.index_fingerprint) {
      throw DataError("checkpoint/index fingerprint mismatch; re-run stage 'train-rag'");
    }
  } else {
    require_artifact(config, config.bm25_index_path, Stage::kIndexBm25);
    impl_->bm25 = lexical::LexicalIndex::load(config.bm25_index_path);
  }
}

Predictor::~Predictor() = default;

metrics::Prediction Predictor::predict_one(const dataset::SlotQuery& query) const {
  const auto& c = impl_->config;
  std::string query_text = query.query_text();

  std::vector<const corpus::Passage*> passages;
  std::vector<double> scores;

  if (c.retriever_mode == RetrieverMode::kDense) {
    auto qvec = retriever::encode_with(impl_->ckpt.encoder.w_query, impl_->ckpt.encoder.hash_dim,
                                       query_text);
    auto hits = impl_->index->search(qvec, c.n_retrieve, c.ef_search);
    for (const auto& h : hits) {
      passages.push_back(&impl_->store.require(h.passage_id));
      scores.push_back(h.score);
    }
  } else {
    auto hits = impl_->bm25->search(query_text, c.n_retrieve);
    for (const auto& h : hits) {
      passages.push_back(&impl_->store.require(h.passage_id));
      scores.push_back(h.score);
    }
  }

  metrics::Prediction pred;
  pred.query_id = query.id;
  if (passages.empty()) {
    pred.score = -std::numeric_limits<double>::infinity();
    return pred;
  }

  auto weights = gen::retrieval_weights(scores);
  auto decoded = gen::beam_search(impl_->ckpt.theta, query_text, passages, weights, c.beam, c.max_len);

  std::string answer;
  for (const auto& t : decoded.tokens) {
    if (!answer.empty()) answer.push_back(' ');
    answer += t;
  }
  pred.answer = answer;
  pred.score = decoded.log_prob;
  for (const auto* p : passages) {
    if (std::find(pred.provenance.begin(), pred.provenance.end(), p->document_id) ==
        pred.provenance.end()) {
      pred.provenance.push_back(p->document_id);
    }
  }
  return pred;
}

std::vector<metrics::Prediction> predict(const PipelineConfig& config,
                                         std::span<const dataset::SlotQuery> queries) {
  Predictor predictor(config);
  std::vector<metrics::Prediction> preds;
  preds.reserve(queries.size());
  for (const auto& q : queries) preds.push_back(predictor.predict_one(q));
  return preds;
}

std::string run_stage(const PipelineConfig& c, Stage stage) {
  fs::create_directories(c.output_dir);
  std::ostringstream summary;

  switch (stage) {
    case Stage::kSegment: {
      require_input_file(c.corpus_path, "corpus file");
      auto store = corpus::load_corpus(c.corpus_path);
      auto passages = corpus::segment_all(store, c.max_passage_tokens);
      corpus::write_passages(c.passages_path, passages);
      write_meta(c, c.passages_path, stage, {c.corpus_path});
      summary << "segmented " << store.size() << " documents into " << passages.size()
              << " passages";
      break;
    }
    case Stage::kIndexBm25: {
      require_artifact(c, c.passages_path, Stage::kSegment);
      auto store = corpus::load_passages(c.passages_path);
      auto index = lexical::LexicalIndex::build(store.passages(), c.bm25);
      index.save(c.bm25_index_path);
      write_meta(c, c.bm25_index_path, stage, {c.passages_path});
      summary << "indexed " << index.size() << " passages (k1=" << c.bm25.k1 << ", b=" << c.bm25.b
              << ")";
      break;
    }
    case Stage::kMine: {
      require_input_file(c.train_path, "training queries file");
      require_artifact(c, c.passages_path, Stage::kSegment);
      require_artifact(c, c.bm25_index_path, Stage::kIndexBm25);
      auto store = corpus::load_passages(c.passages_path);
      auto index = lexical::LexicalIndex::load(c.bm25_index_path);
      auto queries = dataset::load_queries(c.train_path);

      std::map<std::string, std::vector<std::string>> page_passages;
      for (const auto& p : store.passages()) page_passages[p.document_id].push_back(p.passage_id);

      std::vector<retriever::TrainingTriple> triples;
      std::size_t no_negative = 0, no_positive = 0;
      for (const auto& q : queries) {
        auto negative = retriever::mine_hard_negative(q, index, store, c.mine_pool_size);
        if (!negative) {
          ++no_negative;
          continue;
        }
        auto ranked = index.search(q.query_text(), store.size());
        auto positive = choose_positive(q, ranked, store, page_passages);
        if (!positive) {
          ++no_positive;
          continue;
        }
        triples.push_back({q.query_text(), *positive, *negative});
      }
      retriever::write_triples(c.triples_path, triples);
      write_meta(c, c.triples_path, stage, {c.train_path, c.passages_path, c.bm25_index_path});
      summary << "mined " << triples.size() << " triples from " << queries.size() << " queries ("
              << no_negative << " without a usable negative, " << no_positive
              << " without a positive)";
      break;
    }
    case Stage::kTrainDpr: {
      require_artifact(c, c.passages_path, Stage::kSegment);
      require_artifact(c, c.triples_path, Stage::kMine);
      auto store = corpus::load_passages(c.passages_path);
      auto triples = retriever::load_triples(c.triples_path);
      auto initial = retriever::EncoderParams::init(c.hash_dim, c.embed_dim, c.dpr.seed);
      auto result = retriever::train_dpr(c.dpr, triples, store, initial);
      retriever::save_encoder(c.encoder_path, result.params);
      retriever::write_train_log(c.dpr_log_path, result.log);
      write_meta(c, c.encoder_path, stage, {c.triples_path, c.passages_path});
      summary << "trained encoders for " << result.log.size() << " steps";
      if (!result.log.empty()) summary << "; final batch loss " << result.log.back().loss;
      break;
    }
    case Stage::kEncode: {
      require_artifact(c, c.passages_path, Stage::kSegment);
      require_artifact(c, c.encoder_path, Stage::kTrainDpr);
      auto store = corpus::load_passages(c.passages_path);
      auto params = retriever::load_encoder(c.encoder_path);
      auto vectors = ann::encode_corpus(params, store.passages());
      std::vector<std::string> ids;
      ids.reserve(store.size());
      for (const auto& p : store.passages()) ids.push_back(p.passage_id);
      write_vectors(c.vectors_path, ids, vectors, params.embed_dim);
      write_meta(c, c.vectors_path, stage, {c.passages_path, c.encoder_path});
      summary << "encoded " << vectors.size() << " passages (d=" << params.embed_dim << ")";
      break;
    }
    case Stage::kBuildAnn: {
      require_artifact(c, c.vectors_path, Stage::kEncode);
      std::vector<std::string> ids;
      std::vector<std::vector<double>> vectors;
      load_vectors(c.vectors_path, ids, vectors);
      auto index = ann::HnswIndex::build(vectors, std::move(ids), c.ann);
      index.save(c.ann_index_path);
      write_meta(c, c.ann_index_path, stage, {c.vectors_path});
      summary << "built HNSW index over " << index.size() << " vectors (M=" << c.ann.m
              << ", efc=" << c.ann.ef_construction << ")";
      break;
    }
    case Stage::kTrainRag: {
      require_input_file(c.train_path, "training queries file");
      require_artifact(c, c.passages_path, Stage::kSegment);
      require_artifact(c, c.encoder_path, Stage::kTrainDpr);
      require_artifact(c, c.ann_index_path, Stage::kBuildAnn);
      auto store = corpus::load_passages(c.passages_path);
      auto encoder = retriever::load_encoder(c.encoder_path);
      auto index = ann::HnswIndex::load(c.ann_index_path);
      auto queries = dataset::load_queries(c.train_path);

      ragtrain::RagTrainOptions options;
      options.n_retrieve = c.n_retrieve;
      options.ef_search = c.ef_search;
      options.exact_retrieval = c.rag_exact_retrieval;
      options.max_train_instances = c.rag_max_train_instances;

      auto result =
          ragtrain::train_rag(c.rag, options, queries, index, store, encoder, gen::GeneratorParams{});

      ragtrain::Checkpoint ckpt;
      ckpt.theta = result.theta;
      ckpt.encoder = std::move(result.encoder);
      ckpt.index_fingerprint = index.fingerprint();
      ckpt.config_hash = config_hash(c, stage);
      ragtrain::save_checkpoint(c.checkpoint_path, ckpt);
      retriever::write_train_log(c.rag_log_path, result.log);
      write_meta(c, c.checkpoint_path, stage,
                 {c.train_path, c.passages_path, c.encoder_path, c.ann_index_path});
      summary << "fine-tuned generator and query encoder for " << result.log.size() << " steps ("
              << result.skipped << " instances skipped)";
      break;
    }
    case Stage::kPredict: {
      require_input_file(c.dev_path, "query file");
      auto queries = dataset::load_queries(c.dev_path, /*require_gold=*/false);
      auto preds = predict(c, queries);
      metrics::write_predictions(c.predictions_path, preds);
      std::vector<std::string> inputs{c.dev_path, c.passages_path, c.checkpoint_path};
      inputs.push_back(c.retriever_mode == RetrieverMode::kDense ? c.ann_index_path
                                                                 : c.bm25_index_path);
      write_meta(c, c.predictions_path, stage, inputs);
      summary << "predicted " << preds.size() << " queries in "
              << retriever_mode_name(c.retriever_mode) << " mode";
      break;
    }
    case Stage::kEvaluate: {
      require_input_file(c.dev_path, "gold query file");
      require_artifact(c, c.predictions_path, Stage::kPredict);
      auto golds = dataset::load_queries(c.dev_path);
      auto preds = metrics::load_predictions(c.predictions_path);
      auto report = metrics::score_dataset(golds, preds);
      std::string table = metrics::render_report_table(report, retriever_mode_name(c.retriever_mode));
      {
        std::ofstream os(c.report_txt_path);
        if (!os) throw DataError("cannot write report: " + c.report_txt_path);
        os << table;
      }
      {
        std::ofstream os(c.report_json_path);
        if (!os) throw DataError("cannot write report: " + c.report_json_path);
        os << metrics::report_to_json(report, retriever_mode_name(c.retriever_mode)) << '\n';
      }
      write_meta(c, c.report_json_path, stage, {c.predictions_path, c.dev_path});
      summary << table;
      break;
    }
  }
  return summary.str();
}

Infobox fill_infobox(const PipelineConfig& config, const std::string& entity,
                     std::span<const std::string> relations) {
  if (relations.empty()) throw ConfigError("infobox requires at least one relation");
  Predictor predictor(config);
  Infobox box;
  box.entity = entity;
  std::size_t i = 0;
  for (const auto& relation : relations) {
    dataset::SlotQuery q;
    q.id = "infobox-" + std::to_string(i++);
    q.head_entity = entity;
    q.relation = relation;
    auto pred = predictor.predict_one(q);
    InfoboxRow row;
    row.relation = relation;
    row.filler = pred.answer;
    row.page = pred.provenance.empty() ? std::string{} : pred.provenance.front();
    box.rows.push_back(std::move(row));
  }
  return box;
}

std::string render_infobox_text(const Infobox& box) {
  std::size_t w_rel = 8, w_fill = 6;
  for (const auto& r : box.rows) {
    w_rel = std::max(w_rel, r.relation.size());
    w_fill = std::max(w_fill, r.filler.size());
  }
  std::ostringstream os;
  os << "entity: " << box.entity << '\n';
  auto pad = [&os](const std::string& s, std::size_t w) {
    os << s;
    for (std::size_t i = s.size(); i < w + 2; ++i) os << ' ';
  };
  pad("relation", w_rel);
  pad("filler", w_fill);
  os << "page\n";
  for (const auto& r : box.rows) {
    pad(r.relation, w_rel);
    pad(r.filler, w_fill);
    os << r.page << '\n';
  }
  return os.str();
}

std::string render_infobox_json(const Infobox& box) {
  nlohmann::json j;
  j["entity"] = box.entity;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : box.rows) {
    nlohmann::json row;
    row["relation"] = r.relation;
    row["filler"] = r.filler;
    row["page"] = r.page;
    rows.push_back(row);
  }
  j["rows"] = rows;
  return j.dump(2);
}

}  // namespace kgi::pipeline

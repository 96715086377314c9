#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "kgi/pipeline.hpp"

namespace {

struct Overrides {
  std::string bm25_k1, bm25_b;
  std::string hnsw_m, ef_construction, ef_search;
  std::string beam, max_len, n_retrieve, retriever;
  std::string max_train_instances;

  std::vector<std::pair<std::string, std::string>> collect() const {
    std::vector<std::pair<std::string, std::string>> out;
    auto add = [&out](const char* key, const std::string& v) {
      if (!v.empty()) out.emplace_back(key, v);
    };
    add("bm25.k1", bm25_k1);
    add("bm25.b", bm25_b);
    add("ann.hnsw_m", hnsw_m);
    add("ann.ef_construction", ef_construction);
    add("ann.ef_search", ef_search);
    add("decode.beam", beam);
    add("decode.max_len", max_len);
    add("decode.n_retrieve", n_retrieve);
    add("decode.retriever", retriever);
    add("rag.max_train_instances", max_train_instances);
    return out;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kgi - zero-shot slot filling: segment, index, train, predict, evaluate"};
  app.require_subcommand(1);

  std::string config_path = "kgi.toml";
  Overrides ov;
  app.add_option("-c,--config", config_path, "pipeline configuration file");
  app.add_option("--bm25-k1", ov.bm25_k1, "BM25 k1 override");
  app.add_option("--bm25-b", ov.bm25_b, "BM25 b override");
  app.add_option("--hnsw-m", ov.hnsw_m, "HNSW max neighbors per node");
  app.add_option("--ef-construction", ov.ef_construction, "HNSW construction beam");
  app.add_option("--ef-search", ov.ef_search, "HNSW search beam");
  app.add_option("--beam", ov.beam, "decoder beam size");
  app.add_option("--max-len", ov.max_len, "decoder maximum length");
  app.add_option("--n-retrieve", ov.n_retrieve, "passages retrieved per query");
  app.add_option("--retriever", ov.retriever, "retriever mode: dense or bm25");
  app.add_option("--max-train-instances", ov.max_train_instances,
                 "cap on RAG training instances (0 = all)");

  const char* stages[] = {"segment", "index-bm25", "mine",    "train-dpr", "encode",
                          "build-ann", "train-rag",  "predict", "evaluate"};
  const char* descriptions[] = {
      "segment corpus documents into passages",
      "build the BM25 index over passages",
      "mine hard negatives into training triples",
      "train the dual encoders on mined triples",
      "embed all passages with the trained passage encoder",
      "quantize vectors and build the HNSW index",
      "fine-tune the generator and query encoder",
      "decode answers for the dev queries",
      "score predictions against the gold data",
  };
  for (std::size_t i = 0; i < std::size(stages); ++i) {
    auto* sub = app.add_subcommand(stages[i], descriptions[i]);
    sub->fallthrough();
  }

  auto* infobox = app.add_subcommand("infobox", "fill an infobox for one entity");
  infobox->fallthrough();
  std::string entity;
  std::vector<std::string> relations;
  bool as_json = false;
  infobox->add_option("--entity", entity, "head entity")->required();
  infobox->add_option("--relation", relations, "relation to fill (repeatable)");
  infobox->add_flag("--json", as_json, "emit JSON instead of the text table");

  CLI11_PARSE(app, argc, argv);

  try {
    auto config = kgi::pipeline::load_config(config_path, ov.collect());
    if (infobox->parsed()) {
      auto box = kgi::pipeline::fill_infobox(config, entity, relations);
      std::cout << (as_json ? kgi::pipeline::render_infobox_json(box) + "\n"
                            : kgi::pipeline::render_infobox_text(box));
      return 0;
    }
    for (const char* name : stages) {
      if (app.get_subcommand(name)->parsed()) {
        std::string summary = kgi::pipeline::run_stage(config, kgi::pipeline::parse_stage(name));
        std::cout << name << ": " << summary << '\n';
        return 0;
      }
    }
    std::cerr << "no subcommand\n";
    return 1;
  } catch (const kgi::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const kgi::MissingArtifactError& e) {
    std::cerr << "missing prerequisite: " << e.what() << '\n';
    return 3;
  } catch (const kgi::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

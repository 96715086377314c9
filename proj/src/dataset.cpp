#include "kgi/dataset.hpp"

#include <fstream>

#include "json.hpp"

namespace kgi::dataset {

namespace {

constexpr std::string_view kSep = " [SEP] ";

}  // namespace

std::vector<SlotQuery> load_queries(const std::string& path, bool require_gold) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open query file: " + path);

  std::vector<SlotQuery> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    SlotQuery q;
    try {
      auto j = nlohmann::json::parse(line);
      q.id = j.at("id").get<std::string>();
      std::string input = j.at("input").get<std::string>();
      auto pos = input.find(kSep);
      if (pos == std::string::npos)
        throw DataError("input lacks ' [SEP] ' separator");
      q.head_entity = input.substr(0, pos);
      q.relation = input.substr(pos + kSep.size());
      for (const auto& o : j.value("output", nlohmann::json::array())) {
        if (o.contains("answer")) q.gold_answers.push_back(o.at("answer").get<std::string>());
        for (const auto& prov : o.value("provenance", nlohmann::json::array())) {
          if (prov.contains("wikipedia_id"))
            q.gold_pages.insert(prov.at("wikipedia_id").get<std::string>());
          if (prov.contains("passage_id"))
            q.gold_passages.insert(prov.at("passage_id").get<std::string>());
        }
      }
    } catch (const nlohmann::json::exception& e) {
      throw DataError("query file " + path + " line " + std::to_string(lineno) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("query file " + path + " line " + std::to_string(lineno) + ": " + e.what());
    }
    if (require_gold) {
      if (q.gold_answers.empty())
        throw DataError("query file " + path + " line " + std::to_string(lineno) + ": no gold answers");
      if (q.gold_pages.empty())
        throw DataError("query file " + path + " line " + std::to_string(lineno) + ": no gold pages");
    }
    out.push_back(std::move(q));
  }
  return out;
}

void write_queries(const std::string& path, const std::vector<SlotQuery>& queries) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write query file: " + path);
  for (const auto& q : queries) {
    nlohmann::json j;
    j["id"] = q.id;
    j["input"] = q.query_text();
    nlohmann::json output = nlohmann::json::array();
    nlohmann::json prov = nlohmann::json::array();
    for (const auto& page : q.gold_pages) {
      nlohmann::json p;
      p["wikipedia_id"] = page;
      prov.push_back(p);
    }
    for (const auto& pid : q.gold_passages) {
      // attach passage ids to matching page entries when derivable, else add
      bool attached = false;
      for (auto& p : prov) {
        std::string page = p["wikipedia_id"].get<std::string>();
        if (pid.rfind(page + "-p", 0) == 0 && !p.contains("passage_id")) {
          p["passage_id"] = pid;
          attached = true;
          break;
        }
      }
      if (!attached) {
        nlohmann::json p;
        p["passage_id"] = pid;
        prov.push_back(p);
      }
    }
    bool first = true;
    for (const auto& a : q.gold_answers) {
      nlohmann::json o;
      o["answer"] = a;
      if (first) {
        o["provenance"] = prov;
        first = false;
      }
      output.push_back(o);
    }
    if (output.empty()) {
      nlohmann::json o;
      o["provenance"] = prov;
      output.push_back(o);
    }
    j["output"] = output;
    out << j.dump() << '\n';
  }
}

}  // namespace kgi::dataset

#include "kgi/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

#include "json.hpp"

namespace kgi::metrics {

std::string normalize_answer(std::string_view text) {
  std::string stripped;
  stripped.reserve(text.size());
  for (unsigned char c : text) {
    if (std::ispunct(c)) continue;
    stripped.push_back(static_cast<char>(std::tolower(c)));
  }
  std::istringstream iss(stripped);
  std::string tok;
  std::string out;
  while (iss >> tok) {
    if (tok == "a" || tok == "an" || tok == "the") continue;
    if (!out.empty()) out.push_back(' ');
    out += tok;
  }
  return out;
}

namespace {

std::vector<std::string> normalized_tokens(std::string_view text) {
  std::istringstream iss(normalize_answer(text));
  std::vector<std::string> toks;
  std::string t;
  while (iss >> t) toks.push_back(std::move(t));
  return toks;
}

double f1_single(std::span<const std::string> pred_toks, std::span<const std::string> gold_toks) {
  if (pred_toks.empty() && gold_toks.empty()) return 1.0;
  if (pred_toks.empty() || gold_toks.empty()) return 0.0;
  std::map<std::string, std::size_t> counts;
  for (const auto& t : gold_toks) ++counts[t];
  std::size_t same = 0;
  for (const auto& t : pred_toks) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++same;
    }
  }
  if (same == 0) return 0.0;
  double p = static_cast<double>(same) / static_cast<double>(pred_toks.size());
  double r = static_cast<double>(same) / static_cast<double>(gold_toks.size());
  return 2.0 * p * r / (p + r);
}

}  // namespace

double token_f1(std::string_view pred, std::span<const std::string> golds) {
  auto pred_toks = normalized_tokens(pred);
  double best = 0.0;
  for (const auto& g : golds) {
    best = std::max(best, f1_single(pred_toks, normalized_tokens(g)));
  }
  return best;
}

double accuracy(std::string_view pred, std::span<const std::string> golds) {
  std::string np = normalize_answer(pred);
  for (const auto& g : golds) {
    if (np == normalize_answer(g)) return 1.0;
  }
  return 0.0;
}

double r_precision(std::span<const std::string> provenance, const std::set<std::string>& gold_pages) {
  std::size_t r = gold_pages.size();
  if (r == 0) return 1.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < provenance.size() && i < r; ++i) {
    if (gold_pages.count(provenance[i])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(r);
}

double recall_at_5(std::span<const std::string> provenance, const std::set<std::string>& gold_pages) {
  if (gold_pages.empty()) return 1.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < provenance.size() && i < 5; ++i) {
    if (gold_pages.count(provenance[i])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(gold_pages.size());
}

double kilt_gate(double answer_score, double rprec) {
  return rprec == 1.0 ? answer_score : 0.0;
}

ScoreReport score_dataset(std::span<const dataset::SlotQuery> golds,
                          std::span<const Prediction> preds) {
  std::unordered_map<std::string, const Prediction*> by_id;
  for (const auto& p : preds) {
    auto [it, inserted] = by_id.emplace(p.query_id, &p);
    if (!inserted) throw DataError("duplicate prediction for id '" + p.query_id + "'");
  }
  std::vector<std::string> missing;
  for (const auto& g : golds) {
    if (!by_id.count(g.id)) missing.push_back(g.id);
  }
  if (!missing.empty()) {
    std::string msg = "missing predictions for ids:";
    for (const auto& id : missing) msg += " " + id;
    throw DataError(msg);
  }

  ScoreReport rep;
  rep.n = golds.size();
  for (const auto& g : golds) {
    const Prediction& p = *by_id.at(g.id);
    double acc = accuracy(p.answer, g.gold_answers);
    double f1 = token_f1(p.answer, g.gold_answers);
    double rp = r_precision(p.provenance, g.gold_pages);
    double r5 = recall_at_5(p.provenance, g.gold_pages);
    rep.accuracy += acc;
    rep.f1 += f1;
    rep.r_precision += rp;
    rep.recall_at_5 += r5;
    rep.kilt_ac += kilt_gate(acc, rp);
    rep.kilt_f1 += kilt_gate(f1, rp);
  }
  if (rep.n > 0) {
    double n = static_cast<double>(rep.n);
    rep.accuracy /= n;
    rep.f1 /= n;
    rep.r_precision /= n;
    rep.recall_at_5 /= n;
    rep.kilt_ac /= n;
    rep.kilt_f1 /= n;
  }
  return rep;
}

namespace {

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f%%", v * 100.0);
  return buf;
}

}  // namespace

std::string render_report_table(const ScoreReport& report, std::string_view method) {
  std::ostringstream os;
  auto row = [&os](std::string_view a, std::string_view b, std::string_view c, std::string_view d,
                   std::string_view e, std::string_view f, std::string_view g) {
    os << a;
    for (std::size_t i = a.size(); i < 12; ++i) os << ' ';
    auto col = [&os](std::string_view s) {
      for (std::size_t i = s.size(); i < 10; ++i) os << ' ';
      os << s;
    };
    col(b);
    col(c);
    col(d);
    col(e);
    col(f);
    col(g);
    os << '\n';
  };
  row("Method", "R-Prec", "Recall@5", "Accuracy", "F1", "KILT-AC", "KILT-F1");
  row(method, pct(report.r_precision), pct(report.recall_at_5), pct(report.accuracy),
      pct(report.f1), pct(report.kilt_ac), pct(report.kilt_f1));
  return os.str();
}

std::string report_to_json(const ScoreReport& report, std::string_view method) {
  nlohmann::json j;
  j["method"] = std::string(method);
  j["n"] = report.n;
  j["r_precision"] = report.r_precision;
  j["recall_at_5"] = report.recall_at_5;
  j["accuracy"] = report.accuracy;
  j["f1"] = report.f1;
  j["kilt_ac"] = report.kilt_ac;
  j["kilt_f1"] = report.kilt_f1;
  return j.dump(2);
}

void write_predictions(const std::string& path, std::span<const Prediction> preds) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write predictions file: " + path);
  for (const auto& p : preds) {
    nlohmann::json j;
    j["id"] = p.query_id;
    nlohmann::json prov = nlohmann::json::array();
    for (const auto& page : p.provenance) {
      nlohmann::json e;
      e["wikipedia_id"] = page;
      prov.push_back(e);
    }
    nlohmann::json o;
    o["answer"] = p.answer;
    o["provenance"] = prov;
    j["output"] = nlohmann::json::array({o});
    out << j.dump() << '\n';
  }
}

std::vector<Prediction> load_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open predictions file: " + path);
  std::vector<Prediction> preds;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      Prediction p;
      p.query_id = j.at("id").get<std::string>();
      auto output = j.at("output");
      if (!output.empty()) {
        p.answer = output.at(0).value("answer", std::string{});
        for (const auto& prov : output.at(0).value("provenance", nlohmann::json::array())) {
          if (prov.contains("wikipedia_id")) {
            std::string page = prov.at("wikipedia_id").get<std::string>();
            if (std::find(p.provenance.begin(), p.provenance.end(), page) == p.provenance.end())
              p.provenance.push_back(page);
          }
        }
      }
      preds.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("predictions line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return preds;
}

}  // namespace kgi::metrics

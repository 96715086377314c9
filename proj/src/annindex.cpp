#include "kgi/annindex.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>
#include <sstream>
#include <thread>

namespace kgi::ann {

namespace {
constexpr std::string_view kMagic = "KGIANN1";
}

QuantizedVector quantize(std::span<const double> v) {
  QuantizedVector qv;
  qv.codes.resize(v.size());
  if (v.empty()) return qv;
  double lo = v[0], hi = v[0];
  for (double x : v) {
    if (!std::isfinite(x)) throw DataError("cannot quantize non-finite value");
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  qv.offset = lo;
  qv.scale = (hi - lo) / 255.0;
  if (qv.scale == 0.0) return qv;  // constant vector, all codes zero
  for (std::size_t i = 0; i < v.size(); ++i) {
    double c = std::round((v[i] - qv.offset) / qv.scale);
    qv.codes[i] = static_cast<std::uint8_t>(std::clamp(c, 0.0, 255.0));
  }
  return qv;
}

std::vector<double> dequantize(const QuantizedVector& qv) {
  std::vector<double> v(qv.codes.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = qv.offset + static_cast<double>(qv.codes[i]) * qv.scale;
  }
  return v;
}

std::vector<ScoredIndex> brute_force(const std::vector<std::vector<double>>& vectors,
                                     std::span<const double> query, std::size_t k) {
  std::vector<ScoredIndex> all;
  all.reserve(vectors.size());
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    double s = 0.0;
    for (std::size_t r = 0; r < query.size() && r < vectors[i].size(); ++r) {
      s += query[r] * vectors[i][r];
    }
    all.push_back({i, s});
  }
  std::sort(all.begin(), all.end(), [](const ScoredIndex& a, const ScoredIndex& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.index < b.index;
  });
  if (all.size() > k) all.resize(k);
  return all;
}

std::vector<std::vector<double>> encode_corpus(const retriever::EncoderParams& params,
                                               std::span<const corpus::Passage> passages,
                                               unsigned threads) {
  std::vector<std::vector<double>> out(passages.size());
  if (passages.empty()) return out;
  unsigned n = threads > 0 ? threads : std::max(1u, std::thread::hardware_concurrency());
  n = std::min<unsigned>(n, static_cast<unsigned>(passages.size()));
  if (n <= 1) {
    for (std::size_t i = 0; i < passages.size(); ++i) {
      out[i] = retriever::encode_passage(params, passages[i]);
    }
    return out;
  }
  std::vector<std::thread> pool;
  std::size_t chunk = (passages.size() + n - 1) / n;
  for (unsigned t = 0; t < n; ++t) {
    std::size_t lo = t * chunk;
    std::size_t hi = std::min(lo + chunk, passages.size());
    if (lo >= hi) break;
    pool.emplace_back([&, lo, hi]() {
      for (std::size_t i = lo; i < hi; ++i) {
        out[i] = retriever::encode_passage(params, passages[i]);
      }
    });
  }
  for (auto& th : pool) th.join();
  return out;
}

double HnswIndex::dot(std::span<const double> q, std::size_t node) const {
  const double* v = deq_.data() + node * dim_;
  double s = 0.0;
  for (std::size_t r = 0; r < dim_; ++r) s += q[r] * v[r];
  return s;
}

std::uint32_t HnswIndex::greedy_descend(std::span<const double> q, std::uint32_t start,
                                        int layer) const {
  std::uint32_t cur = start;
  double cur_dist = -dot(q, cur);
  bool improved = true;
  while (improved) {
    improved = false;
    for (std::uint32_t nb : links_[cur][layer]) {
      double d = -dot(q, nb);
      if (d < cur_dist || (d == cur_dist && nb < cur)) {
        cur = nb;
        cur_dist = d;
        improved = true;
      }
    }
  }
  return cur;
}

std::vector<HnswIndex::Scored> HnswIndex::search_layer(std::span<const double> q,
                                                       std::span<const std::uint32_t> entries,
                                                       std::size_t ef, int layer) const {
  std::vector<char> visited(ids_.size(), 0);
  // frontier ordered closest-first, result set farthest-first
  std::priority_queue<Scored, std::vector<Scored>, std::greater<Scored>> frontier;
  std::priority_queue<Scored> result;

  for (std::uint32_t entry : entries) {
    if (visited[entry]) continue;
    visited[entry] = 1;
    Scored e{-dot(q, entry), entry};
    frontier.push(e);
    result.push(e);
    if (result.size() > ef) result.pop();
  }

  while (!frontier.empty()) {
    Scored c = frontier.top();
    if (result.size() >= ef && c.dist > result.top().dist) break;
    frontier.pop();
    for (std::uint32_t nb : links_[c.node][layer]) {
      if (visited[nb]) continue;
      visited[nb] = 1;
      Scored s{-dot(q, nb), nb};
      if (result.size() < ef || s.dist < result.top().dist) {
        frontier.push(s);
        result.push(s);
        if (result.size() > ef) result.pop();
      }
    }
  }
  std::vector<Scored> out;
  out.reserve(result.size());
  while (!result.empty()) {
    out.push_back(result.top());
    result.pop();
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::uint32_t> HnswIndex::select_neighbors(std::uint32_t node,
                                                       const std::vector<Scored>& candidates,
                                                       std::size_t m) const {
  std::vector<std::uint32_t> chosen;
  std::vector<std::uint32_t> pruned;
  for (const Scored& c : candidates) {
    if (chosen.size() >= m) break;
    if (c.node == node) continue;
    std::span<const double> cv{deq_.data() + c.node * dim_, dim_};
    bool keep = true;
    for (std::uint32_t r : chosen) {
      // candidate closer to an already-selected neighbor than to the node:
      // redundant edge, skip it
      if (-dot(cv, r) < c.dist) {
        keep = false;
        break;
      }
    }
    if (keep) {
      chosen.push_back(c.node);
    } else {
      pruned.push_back(c.node);
    }
  }
  // refill with the closest pruned candidates to keep the graph dense
  for (std::size_t i = 0; i < pruned.size() && chosen.size() < m; ++i) {
    chosen.push_back(pruned[i]);
  }
  return chosen;
}

void HnswIndex::shrink(std::uint32_t node, int layer, std::size_t cap) {
  auto& list = links_[node][layer];
  std::span<const double> v{deq_.data() + node * dim_, dim_};
  std::vector<Scored> cands;
  cands.reserve(list.size());
  for (std::uint32_t nb : list) cands.push_back({-dot(v, nb), nb});
  std::sort(cands.begin(), cands.end());
  list = select_neighbors(node, cands, cap);
}

HnswIndex HnswIndex::build(const std::vector<std::vector<double>>& vectors,
                           std::vector<std::string> passage_ids, BuildParams bp) {
  if (vectors.empty()) throw DataError("cannot build ANN index over zero vectors");
  if (bp.m < 2) throw ConfigError("HNSW M must be >= 2");
  if (passage_ids.size() != vectors.size())
    throw DataError("ANN build: id count does not match vector count");

  HnswIndex idx;
  idx.dim_ = vectors[0].size();
  idx.m_ = bp.m;
  idx.ef_construction_ = bp.ef_construction;
  idx.seed_ = bp.seed;
  idx.ids_ = std::move(passage_ids);
  idx.quantized_.reserve(vectors.size());
  idx.deq_.resize(vectors.size() * idx.dim_);
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    if (vectors[i].size() != idx.dim_)
      throw DataError("ANN build: vector dimension mismatch at index " + std::to_string(i));
    idx.quantized_.push_back(quantize(vectors[i]));
    auto dq = dequantize(idx.quantized_.back());
    std::copy(dq.begin(), dq.end(), idx.deq_.begin() + static_cast<std::ptrdiff_t>(i * idx.dim_));
  }

  Rng rng(bp.seed);
  const double mult = 1.0 / std::log(static_cast<double>(bp.m));
  idx.links_.resize(vectors.size());

  // scratch for candidate extension, reused across inserts
  std::vector<std::uint32_t> stamp(vectors.size(), 0);
  std::uint32_t epoch = 0;

  for (std::uint32_t i = 0; i < vectors.size(); ++i) {
    double u = 1.0 - rng.uniform01();  // (0, 1]
    int level = static_cast<int>(std::floor(-std::log(u) * mult));
    idx.links_[i].resize(static_cast<std::size_t>(level) + 1);

    if (idx.max_level_ < 0) {
      idx.entry_ = i;
      idx.max_level_ = level;
      continue;
    }

    std::span<const double> v{idx.deq_.data() + i * idx.dim_, idx.dim_};
    std::uint32_t cur = idx.entry_;
    for (int l = idx.max_level_; l > level; --l) cur = idx.greedy_descend(v, cur, l);

    std::vector<std::uint32_t> entries{cur};
    for (int l = std::min(level, idx.max_level_); l >= 0; --l) {
      auto candidates = idx.search_layer(v, entries, idx.ef_construction_, l);

      // extend with the candidates' own neighborhoods before selection
      auto extended = candidates;
      ++epoch;
      for (const auto& c : candidates) stamp[c.node] = epoch;
      stamp[i] = epoch;
      for (const auto& c : candidates) {
        for (std::uint32_t nb : idx.links_[c.node][l]) {
          if (stamp[nb] == epoch) continue;
          stamp[nb] = epoch;
          extended.push_back({-idx.dot(v, nb), nb});
        }
      }
      std::sort(extended.begin(), extended.end());

      // layer 0 fills the new node's list to the 2M cap for denser fan-out
      std::size_t cap = l == 0 ? 2 * idx.m_ : idx.m_;
      auto neighbors = idx.select_neighbors(i, extended, cap);
      idx.links_[i][l] = neighbors;
      for (std::uint32_t nb : neighbors) {
        idx.links_[nb][l].push_back(i);
        if (idx.links_[nb][l].size() > cap) idx.shrink(nb, l, cap);
      }
      // the whole candidate set seeds the next layer down
      entries.clear();
      for (const auto& c : candidates) entries.push_back(c.node);
    }
    if (level > idx.max_level_) {
      idx.max_level_ = level;
      idx.entry_ = i;
    }
  }
  return idx;
}

std::vector<Hit> HnswIndex::search(std::span<const double> query, std::size_t k,
                                   std::size_t ef_search) const {
  std::vector<Hit> out;
  if (k == 0 || ids_.empty()) return out;
  if (query.size() != dim_) throw DataError("ANN search: query dimension mismatch");

  std::size_t ef = std::max(ef_search, k);
  // run the beam through every layer, carrying the candidate set down; on
  // low-structure data this recovers noticeably more of the true top-k than
  // a single greedy entry point
  std::vector<std::uint32_t> entries{entry_};
  for (int l = max_level_; l >= 1; --l) {
    auto found_upper = search_layer(query, entries, ef, l);
    entries.clear();
    for (const auto& s : found_upper) entries.push_back(s.node);
  }
  auto found = search_layer(query, entries, ef, 0);

  std::sort(found.begin(), found.end(), [this](const Scored& a, const Scored& b) {
    if (a.dist != b.dist) return a.dist < b.dist;
    return ids_[a.node] < ids_[b.node];
  });
  if (found.size() > k) found.resize(k);
  out.reserve(found.size());
  for (const auto& s : found) out.push_back({ids_[s.node], -s.dist, s.node});
  return out;
}

void HnswIndex::check_structure() const {
  for (std::size_t i = 0; i < links_.size(); ++i) {
    int level = static_cast<int>(links_[i].size()) - 1;
    if (level < 0) throw DataError("node without layer membership");
    if (level > max_level_) throw DataError("node level above index max level");
    for (int l = 0; l <= level; ++l) {
      std::size_t cap = l == 0 ? 2 * m_ : m_;
      if (links_[i][l].size() > cap) throw DataError("neighbor list over capacity");
      for (std::uint32_t nb : links_[i][l]) {
        if (nb >= links_.size()) throw DataError("edge to invalid node");
        if (static_cast<int>(links_[nb].size()) - 1 < l)
          throw DataError("edge endpoint missing from layer");
      }
    }
  }
  if (entry_ >= links_.size()) throw DataError("invalid entry point");
  if (static_cast<int>(links_[entry_].size()) - 1 != max_level_)
    throw DataError("entry point not on the top layer");
}

void HnswIndex::serialize(std::ostream& os) const {
  os.write(kMagic.data(), static_cast<std::streamsize>(kMagic.size()));
  bio::write_pod<std::uint64_t>(os, dim_);
  bio::write_pod<std::uint64_t>(os, ids_.size());
  bio::write_pod<std::uint64_t>(os, m_);
  bio::write_pod<std::uint64_t>(os, ef_construction_);
  bio::write_pod<std::uint64_t>(os, seed_);
  bio::write_pod<std::uint32_t>(os, entry_);
  bio::write_pod<std::int32_t>(os, max_level_);
  for (const auto& id : ids_) bio::write_string(os, id);
  for (const auto& qv : quantized_) {
    bio::write_pod<double>(os, qv.offset);
    bio::write_pod<double>(os, qv.scale);
    bio::write_raw(os, qv.codes.data(), qv.codes.size());
  }
  for (const auto& node : links_) {
    bio::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(node.size()));
    for (const auto& layer : node) {
      bio::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(layer.size()));
      for (std::uint32_t nb : layer) bio::write_pod<std::uint32_t>(os, nb);
    }
  }
}

void HnswIndex::save(const std::string& path) const {
  std::ostringstream buf(std::ios::binary);
  serialize(buf);
  std::string bytes = buf.str();
  fingerprint_ = fnv1a64(bytes);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write ANN index file: " + path);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::uint64_t HnswIndex::fingerprint() const {
  if (fingerprint_ == 0) {
    std::ostringstream buf(std::ios::binary);
    serialize(buf);
    fingerprint_ = fnv1a64(buf.str());
  }
  return fingerprint_;
}

HnswIndex HnswIndex::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open ANN index file: " + path);
  std::ostringstream buf(std::ios::binary);
  buf << is.rdbuf();
  std::string bytes = buf.str();

  std::istringstream in(bytes, std::ios::binary);
  bio::expect_magic(in, kMagic, path);
  HnswIndex idx;
  idx.dim_ = bio::read_pod<std::uint64_t>(in);
  auto n = bio::read_pod<std::uint64_t>(in);
  idx.m_ = bio::read_pod<std::uint64_t>(in);
  idx.ef_construction_ = bio::read_pod<std::uint64_t>(in);
  idx.seed_ = bio::read_pod<std::uint64_t>(in);
  idx.entry_ = bio::read_pod<std::uint32_t>(in);
  idx.max_level_ = bio::read_pod<std::int32_t>(in);
  idx.ids_.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) idx.ids_.push_back(bio::read_string(in));
  idx.quantized_.resize(n);
  idx.deq_.resize(n * idx.dim_);
  for (std::uint64_t i = 0; i < n; ++i) {
    auto& qv = idx.quantized_[i];
    qv.offset = bio::read_pod<double>(in);
    qv.scale = bio::read_pod<double>(in);
    qv.codes.resize(idx.dim_);
    bio::read_raw(in, qv.codes.data(), idx.dim_);
    auto dq = dequantize(qv);
    std::copy(dq.begin(), dq.end(), idx.deq_.begin() + static_cast<std::ptrdiff_t>(i * idx.dim_));
  }
  idx.links_.resize(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    auto layers = bio::read_pod<std::uint32_t>(in);
    idx.links_[i].resize(layers);
    for (std::uint32_t l = 0; l < layers; ++l) {
      auto cnt = bio::read_pod<std::uint32_t>(in);
      idx.links_[i][l].resize(cnt);
      for (std::uint32_t j = 0; j < cnt; ++j) idx.links_[i][l][j] = bio::read_pod<std::uint32_t>(in);
    }
  }
  idx.fingerprint_ = fnv1a64(bytes);
  return idx;
}

}  // namespace kgi::ann

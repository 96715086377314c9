#pragma once

#include <span>
#include <string>
#include <vector>

#include "kgi/corpus.hpp"
#include "kgi/retriever.hpp"
#include "kgi/util.hpp"

namespace kgi::ann {

// 8-bit scalar quantization with per-vector affine range:
// dequantized value = offset + code * scale.
struct QuantizedVector {
  std::vector<std::uint8_t> codes;
  double scale = 0.0;
  double offset = 0.0;
};

QuantizedVector quantize(std::span<const double> v);
std::vector<double> dequantize(const QuantizedVector& qv);

struct Hit {
  std::string passage_id;
  double score = 0.0;
  std::size_t index = 0;  // position of the vector inside the index
};

struct ScoredIndex {
  std::size_t index = 0;
  double score = 0.0;
};

// Exact top-k by inner product; ties by ascending index. The oracle against
// which graph search recall is measured.
std::vector<ScoredIndex> brute_force(const std::vector<std::vector<double>>& vectors,
                                     std::span<const double> query, std::size_t k);

// One passage-side embedding per input passage, in input order. Chunked
// across threads; output placement is by index so the result is identical
// to a sequential run.
std::vector<std::vector<double>> encode_corpus(const retriever::EncoderParams& params,
                                               std::span<const corpus::Passage> passages,
                                               unsigned threads = 0);

struct BuildParams {
  std::size_t m = 16;
  std::size_t ef_construction = 200;
  std::uint64_t seed = 17;
};

// Hierarchical navigable small world graph over quantized vectors, searched
// by inner product on the dequantized values. Queries are never quantized.
// Immutable after build; concurrent searches are safe.
class HnswIndex {
 public:
  static HnswIndex build(const std::vector<std::vector<double>>& vectors,
                         std::vector<std::string> passage_ids, BuildParams bp = {});

  // Top-k by descending inner product, ties by ascending passage_id.
  // k greater than the index size returns everything ranked.
  std::vector<Hit> search(std::span<const double> query, std::size_t k,
                          std::size_t ef_search) const;

  std::size_t size() const { return ids_.size(); }
  std::size_t dim() const { return dim_; }
  std::size_t m() const { return m_; }
  int max_level() const { return max_level_; }

  const std::string& passage_id(std::size_t i) const { return ids_[i]; }
  // Dequantized stored vector; these are the frozen passage vectors that
  // downstream training scores against.
  std::span<const double> vector_of(std::size_t i) const {
    return {deq_.data() + i * dim_, dim_};
  }

  void save(const std::string& path) const;
  static HnswIndex load(const std::string& path);

  // FNV-1a over the serialized bytes; stable across save/load.
  std::uint64_t fingerprint() const;

  // Throws DataError when a structural invariant is violated. Test hook.
  void check_structure() const;

 private:
  double dot(std::span<const double> q, std::size_t node) const;

  struct Scored {
    double dist;  // negated inner product
    std::uint32_t node;
    bool operator<(const Scored& o) const {
      return dist != o.dist ? dist < o.dist : node < o.node;
    }
    bool operator>(const Scored& o) const { return o < *this; }
  };

  std::uint32_t greedy_descend(std::span<const double> q, std::uint32_t start, int layer) const;
  std::vector<Scored> search_layer(std::span<const double> q,
                                   std::span<const std::uint32_t> entries, std::size_t ef,
                                   int layer) const;
  std::vector<std::uint32_t> select_neighbors(std::uint32_t node,
                                              const std::vector<Scored>& candidates,
                                              std::size_t m) const;
  void shrink(std::uint32_t node, int layer, std::size_t cap);
  void serialize(std::ostream& os) const;

  std::size_t dim_ = 0;
  std::size_t m_ = 16;
  std::size_t ef_construction_ = 200;
  std::uint64_t seed_ = 0;
  std::vector<QuantizedVector> quantized_;
  std::vector<double> deq_;  // size() * dim_ dequantized cache
  std::vector<std::string> ids_;
  std::vector<std::vector<std::vector<std::uint32_t>>> links_;  // node -> layer -> neighbors
  std::uint32_t entry_ = 0;
  int max_level_ = -1;
  mutable std::uint64_t fingerprint_ = 0;
};

}  // namespace kgi::ann

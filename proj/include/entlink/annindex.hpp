#pragma once

#include "entlink/common.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace entlink {

struct RankedHit {
  std::string id;
  double score = 0.0;  // cosine distance

  bool operator==(const RankedHit&) const = default;
};

/// Orders hits ascending by score, ties by ascending id.
bool hit_before(const RankedHit& a, const RankedHit& b);

/// Exact top-n by cosine distance.
std::vector<RankedHit> brute_force_knn(const std::vector<std::string>& ids, const std::vector<DenseVector>& items,
                                       const DenseVector& query, std::size_t n);

struct ForestConfig {
  std::size_t trees = 16;
  std::size_t leaf_capacity = 16;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Random-projection forest over unit-normalized copies of the items.
/// Each internal node holds the hyperplane equidistant from two sampled
/// items; items with positive margin go right.
class RpForest {
 public:
  struct Node {
    bool leaf = false;
    DenseVector normal;  // unit length
    double offset = 0.0;
    std::uint32_t left = 0;
    std::uint32_t right = 0;
    std::vector<std::uint32_t> items;
  };
  struct Tree {
    std::uint32_t root = 0;
    std::vector<Node> nodes;
  };

  RpForest() = default;
  static RpForest build(std::vector<std::string> ids, std::vector<DenseVector> items, const ForestConfig& config);

  /// Top-n by exact cosine distance over candidates gathered best-first in
  /// each tree until it has contributed ceil(search_k / trees) items.
  /// search_k = 0 selects n * trees * 4.
  std::vector<RankedHit> query(const DenseVector& q, std::size_t n, std::size_t search_k = 0) const;
  /// Candidate item indices before re-ranking, sorted ascending.
  std::vector<std::uint32_t> candidates(const DenseVector& q, std::size_t search_k) const;
  /// Leaf a vector routes to in tree `t` (node index).
  std::uint32_t route(std::size_t t, const DenseVector& v) const;

  bool empty() const { return ids_.empty(); }
  std::size_t size() const { return ids_.size(); }
  std::size_t dim() const { return dim_; }
  const ForestConfig& config() const { return config_; }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::vector<DenseVector>& items() const { return items_; }
  const std::vector<Tree>& trees() const { return trees_; }
  /// Splits that fell back to a random normal, or to index parity.
  std::size_t fallback_splits() const { return fallback_splits_; }

  std::string serialize() const;
  static RpForest deserialize(std::string_view bytes, std::optional<std::size_t> expected_dim = std::nullopt);

 private:
  ForestConfig config_;
  std::size_t dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<DenseVector> items_;
  std::vector<DenseVector> unit_;
  std::vector<Tree> trees_;
  std::size_t fallback_splits_ = 0;
};

constexpr std::uint32_t kForestFormatVersion = 1;

// Index file, little-endian:
//   "RPFOREST" | u32 version | u32 dim | u32 trees | u32 leaf_capacity | u64 seed | u64 n_items
//   n_items x ( u32 id length | id bytes | dim x f64 )
//   trees x ( u32 n_nodes | u32 root | n_nodes x node )
//     node = u8 0 (internal) | dim x f64 normal | f64 offset | u32 left | u32 right
//          | u8 1 (leaf) | u32 count | count x u32 item index
//   u64 FNV-1a of every preceding byte
void save_forest(const RpForest& forest, const std::string& path);
RpForest load_forest(const std::string& path, std::optional<std::size_t> expected_dim = std::nullopt);

}  // namespace entlink

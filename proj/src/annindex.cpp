#include "entlink/annindex.hpp"

#include "entlink/binio.hpp"
#include "entlink/neural.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <unordered_set>

namespace entlink {

bool hit_before(const RankedHit& a, const RankedHit& b) {
  if (a.score != b.score) return a.score < b.score;
  return a.id < b.id;
}

namespace {

std::vector<RankedHit> top_n(std::vector<RankedHit> hits, std::size_t n) {
  if (n < hits.size()) {
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(n), hits.end(), hit_before);
    hits.resize(n);
  } else {
    std::sort(hits.begin(), hits.end(), hit_before);
  }
  return hits;
}

DenseVector unit_copy(const DenseVector& v) {
  const double norm = v.norm();
  return norm > 0.0 ? DenseVector(v / norm) : v;
}

}  // namespace

std::vector<RankedHit> brute_force_knn(const std::vector<std::string>& ids, const std::vector<DenseVector>& items,
                                       const DenseVector& query, std::size_t n) {
  if (ids.size() != items.size()) throw ValidationError("brute force: ids and items differ in length");
  if (n == 0) return {};
  std::vector<RankedHit> hits;
  hits.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) hits.push_back({ids[i], score(query, items[i])});
  return top_n(std::move(hits), n);
}

void ForestConfig::validate() const {
  if (trees == 0) throw ValidationError("forest needs at least one tree");
  if (leaf_capacity == 0) throw ValidationError("leaf capacity must be positive");
  if (trees > std::numeric_limits<std::uint32_t>::max()) throw ValidationError("too many trees");
}

// ---------------------------------------------------------------------------
// Build

namespace {

constexpr int kSplitAttempts = 8;

struct TreeBuilder {
  const std::vector<DenseVector>& unit;
  std::size_t dim;
  std::size_t leaf_capacity;
  Rng rng;
  RpForest::Tree tree;
  std::size_t fallbacks = 0;

  std::uint32_t add_leaf(std::vector<std::uint32_t> items) {
    RpForest::Node node;
    node.leaf = true;
    node.items = std::move(items);
    tree.nodes.push_back(std::move(node));
    return static_cast<std::uint32_t>(tree.nodes.size() - 1);
  }

  static void partition(const std::vector<std::uint32_t>& items, const std::vector<double>& margins,
                        std::vector<std::uint32_t>& left, std::vector<std::uint32_t>& right) {
    left.clear();
    right.clear();
    for (std::size_t i = 0; i < items.size(); ++i) (margins[i] > 0.0 ? right : left).push_back(items[i]);
  }

  std::uint32_t build(std::vector<std::uint32_t> items) {
    if (items.size() <= leaf_capacity) return add_leaf(std::move(items));

    DenseVector normal;
    double offset = 0.0;
    std::vector<double> margins(items.size());
    std::vector<std::uint32_t> left;
    std::vector<std::uint32_t> right;
    bool ok = false;

    for (int attempt = 0; attempt < kSplitAttempts && !ok; ++attempt) {
      const std::size_t a = rng.index(items.size());
      std::size_t b = rng.index(items.size() - 1);
      if (b >= a) ++b;
      const DenseVector& p = unit[items[a]];
      const DenseVector& q = unit[items[b]];
      DenseVector diff = p - q;
      const double norm = diff.norm();
      if (!(norm > 0.0)) continue;
      normal = diff / norm;
      offset = normal.dot(p + q) / 2.0;
      for (std::size_t i = 0; i < items.size(); ++i) margins[i] = normal.dot(unit[items[i]]) - offset;
      partition(items, margins, left, right);
      ok = !left.empty() && !right.empty();
    }

    if (!ok) {
      ++fallbacks;
      normal.resize(static_cast<Eigen::Index>(dim));
      for (Eigen::Index i = 0; i < normal.size(); ++i) normal[i] = rng.normal();
      const double norm = normal.norm();
      if (norm > 0.0) normal /= norm;
      std::vector<double> proj(items.size());
      for (std::size_t i = 0; i < items.size(); ++i) proj[i] = normal.dot(unit[items[i]]);
      std::vector<double> sorted = proj;
      const auto mid = sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2);
      std::nth_element(sorted.begin(), mid, sorted.end());
      offset = *mid;
      for (std::size_t i = 0; i < items.size(); ++i) margins[i] = proj[i] - offset;
      partition(items, margins, left, right);
      if (left.empty() || right.empty()) {
        // All projections coincide: split by position.
        left.clear();
        right.clear();
        for (std::size_t i = 0; i < items.size(); ++i) (i % 2 == 0 ? left : right).push_back(items[i]);
      }
    }

    const auto self = static_cast<std::uint32_t>(tree.nodes.size());
    RpForest::Node node;
    node.normal = std::move(normal);
    node.offset = offset;
    tree.nodes.push_back(std::move(node));
    items.clear();
    items.shrink_to_fit();
    const std::uint32_t l = build(std::move(left));
    const std::uint32_t r = build(std::move(right));
    tree.nodes[self].left = l;
    tree.nodes[self].right = r;
    return self;
  }
};

}  // namespace

RpForest RpForest::build(std::vector<std::string> ids, std::vector<DenseVector> items, const ForestConfig& config) {
  config.validate();
  if (items.empty()) throw ValidationError("cannot build a forest over zero items");
  if (ids.size() != items.size()) throw ValidationError("forest ids and items differ in length");
  if (items.size() > std::numeric_limits<std::uint32_t>::max()) throw ValidationError("too many items for one forest");
  const auto dim = static_cast<std::size_t>(items.front().size());
  if (dim == 0) throw ValidationError("forest items must have positive dimension");
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (static_cast<std::size_t>(items[i].size()) != dim) {
      throw ValidationError("forest item '" + ids[i] + "' has dimension " + std::to_string(items[i].size()) +
                            ", expected " + std::to_string(dim));
    }
    if (!items[i].allFinite()) throw ValidationError("forest item '" + ids[i] + "' is not finite");
  }
  {
    std::unordered_set<std::string> seen;
    for (const auto& id : ids)
      if (!seen.insert(id).second) throw ValidationError("duplicate forest item id '" + id + "'");
  }

  RpForest f;
  f.config_ = config;
  f.dim_ = dim;
  f.ids_ = std::move(ids);
  f.items_ = std::move(items);
  f.unit_.reserve(f.items_.size());
  for (const auto& v : f.items_) f.unit_.push_back(unit_copy(v));

  std::vector<std::uint32_t> all(f.items_.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<std::uint32_t>(i);
  const Rng root(config.seed);
  f.trees_.resize(config.trees);
  std::vector<std::size_t> fallbacks(config.trees, 0);
  parallel_for(config.trees, [&](std::size_t t) {
    TreeBuilder b{f.unit_, dim, config.leaf_capacity, root.fork(t), {}, 0};
    b.tree.root = b.build(all);
    f.trees_[t] = std::move(b.tree);
    fallbacks[t] = b.fallbacks;
  });
  for (auto n : fallbacks) f.fallback_splits_ += n;
  return f;
}

// ---------------------------------------------------------------------------
// Query

std::uint32_t RpForest::route(std::size_t t, const DenseVector& v) const {
  if (t >= trees_.size()) throw ValidationError("tree index out of range");
  const DenseVector u = unit_copy(v);
  const auto& tree = trees_[t];
  std::uint32_t at = tree.root;
  while (!tree.nodes[at].leaf) {
    const auto& node = tree.nodes[at];
    at = node.normal.dot(u) - node.offset > 0.0 ? node.right : node.left;
  }
  return at;
}

std::vector<std::uint32_t> RpForest::candidates(const DenseVector& q, std::size_t search_k) const {
  if (empty()) throw ValidationError("query on an empty forest");
  if (static_cast<std::size_t>(q.size()) != dim_) {
    throw ValidationError("query has dimension " + std::to_string(q.size()) + ", forest expects " +
                          std::to_string(dim_));
  }
  const DenseVector u = unit_copy(q);
  const std::size_t per_tree = std::max<std::size_t>(1, (search_k + trees_.size() - 1) / trees_.size());
  std::vector<char> taken(items_.size(), 0);
  std::vector<std::uint32_t> out;

  using Entry = std::pair<double, std::uint32_t>;  // (priority, node), larger first
  for (const auto& tree : trees_) {
    std::priority_queue<Entry> frontier;
    frontier.push({std::numeric_limits<double>::infinity(), tree.root});
    std::size_t collected = 0;
    while (!frontier.empty() && collected < per_tree) {
      const auto [priority, at] = frontier.top();
      frontier.pop();
      const auto& node = tree.nodes[at];
      if (node.leaf) {
        collected += node.items.size();
        for (auto item : node.items) {
          if (!taken[item]) {
            taken[item] = 1;
            out.push_back(item);
          }
        }
        continue;
      }
      const double margin = node.normal.dot(u) - node.offset;
      frontier.push({std::min(priority, margin), node.right});
      frontier.push({std::min(priority, -margin), node.left});
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<RankedHit> RpForest::query(const DenseVector& q, std::size_t n, std::size_t search_k) const {
  if (search_k == 0) search_k = n * trees_.size() * 4;
  const auto cand = candidates(q, search_k);
  if (n == 0) return {};
  std::vector<RankedHit> hits;
  hits.reserve(cand.size());
  for (auto i : cand) hits.push_back({ids_[i], score(q, items_[i])});
  return top_n(std::move(hits), n);
}

// ---------------------------------------------------------------------------
// Serialization

namespace {
constexpr std::string_view kForestMagic = "RPFOREST";
}

std::string RpForest::serialize() const {
  if (empty()) throw ValidationError("cannot serialize an empty forest");
  binio::Writer w;
  w.bytes(kForestMagic);
  w.u32(kForestFormatVersion);
  w.u32(static_cast<std::uint32_t>(dim_));
  w.u32(static_cast<std::uint32_t>(trees_.size()));
  w.u32(static_cast<std::uint32_t>(config_.leaf_capacity));
  w.u64(config_.seed);
  w.u64(items_.size());
  for (std::size_t i = 0; i < items_.size(); ++i) {
    w.str(ids_[i]);
    w.vec(items_[i]);
  }
  for (const auto& tree : trees_) {
    w.u32(static_cast<std::uint32_t>(tree.nodes.size()));
    w.u32(tree.root);
    for (const auto& node : tree.nodes) {
      if (node.leaf) {
        w.u8(1);
        w.u32(static_cast<std::uint32_t>(node.items.size()));
        for (auto item : node.items) w.u32(item);
      } else {
        w.u8(0);
        w.vec(node.normal);
        w.f64(node.offset);
        w.u32(node.left);
        w.u32(node.right);
      }
    }
  }
  w.u64(fnv1a64(w.data()));
  return w.take();
}

RpForest RpForest::deserialize(std::string_view bytes, std::optional<std::size_t> expected_dim) {
  binio::Reader rd(bytes, "forest index");
  if (rd.bytes(kForestMagic.size()) != kForestMagic) throw FormatError("forest index: bad magic");
  const auto version = rd.u32();
  if (version != kForestFormatVersion) {
    throw FormatError("forest index: format version " + std::to_string(version) + " does not match supported version " +
                      std::to_string(kForestFormatVersion));
  }
  if (bytes.size() < 8 + 8) throw FormatError("forest index: truncated");
  const std::string_view body = bytes.substr(0, bytes.size() - 8);
  binio::Reader tail(bytes.substr(bytes.size() - 8), "forest index");
  if (tail.u64() != fnv1a64(body)) throw FormatError("forest index: checksum mismatch (truncated or corrupted file)");
  binio::Reader in(body, "forest index");
  in.bytes(kForestMagic.size() + 4);

  RpForest f;
  f.dim_ = in.u32();
  f.config_.trees = in.u32();
  f.config_.leaf_capacity = in.u32();
  f.config_.seed = in.u64();
  const auto n_items = in.u64();
  if (f.dim_ == 0 || f.config_.trees == 0 || f.config_.leaf_capacity == 0 || n_items == 0)
    throw FormatError("forest index: header has a zero field");
  if (expected_dim && *expected_dim != f.dim_) {
    throw FormatError("forest index: dimension " + std::to_string(f.dim_) + " does not match expected " +
                      std::to_string(*expected_dim));
  }
  if (n_items > in.remaining() / (4 + 8 * f.dim_)) throw FormatError("forest index: item count exceeds file size");
  for (std::uint64_t i = 0; i < n_items; ++i) {
    f.ids_.push_back(in.str());
    f.items_.push_back(in.vec(f.dim_));
    f.unit_.push_back(unit_copy(f.items_.back()));
  }
  for (std::size_t t = 0; t < f.config_.trees; ++t) {
    Tree tree;
    const auto n_nodes = in.u32();
    tree.root = in.u32();
    if (n_nodes == 0 || tree.root >= n_nodes) throw FormatError("forest index: bad tree header");
    for (std::uint32_t k = 0; k < n_nodes; ++k) {
      Node node;
      const auto kind = in.u8();
      if (kind == 1) {
        node.leaf = true;
        const auto count = in.u32();
        in.need(static_cast<std::size_t>(count) * 4);
        for (std::uint32_t c = 0; c < count; ++c) {
          const auto item = in.u32();
          if (item >= n_items) throw FormatError("forest index: leaf item out of range");
          node.items.push_back(item);
        }
      } else if (kind == 0) {
        node.normal = in.vec(f.dim_);
        node.offset = in.f64();
        node.left = in.u32();
        node.right = in.u32();
        if (node.left >= n_nodes || node.right >= n_nodes) throw FormatError("forest index: child out of range");
      } else {
        throw FormatError("forest index: unknown node kind " + std::to_string(kind));
      }
      tree.nodes.push_back(std::move(node));
    }
    f.trees_.push_back(std::move(tree));
  }
  if (!in.done()) throw FormatError("forest index: " + std::to_string(in.remaining()) + " unexpected bytes");
  return f;
}

void save_forest(const RpForest& forest, const std::string& path) { write_file(path, forest.serialize()); }

RpForest load_forest(const std::string& path, std::optional<std::size_t> expected_dim) {
  return RpForest::deserialize(read_file(path), expected_dim);
}

}  // namespace entlink

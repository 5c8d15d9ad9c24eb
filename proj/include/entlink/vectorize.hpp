#pragma once

#include "entlink/common.hpp"
#include "entlink/corpus.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace entlink {

/// Maps text to a fixed-dimension vector. Implementations must be
/// deterministic and total (the empty string included).
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual std::size_t dim() const = 0;
  virtual DenseVector encode(std::string_view text) const = 0;
  virtual nlohmann::json config() const = 0;
};

/// Signed feature hashing of padded character 3-grams and lowercased word
/// unigrams, L2-normalized when nonzero.
///
/// Text is ASCII-lowercased, whitespace runs collapse to one space, and the
/// result is padded with one space on each side. Every 3-byte window of the
/// padded text yields feature "c:<window>"; every alphanumeric token yields
/// "w:<token>". A feature hashes to h = splitmix64(fnv1a64(feature) ^
/// splitmix64(seed)); it adds sign(h) to bucket h % dim, where the sign is
/// negative when the top bit of h is set.
class HashingEncoder final : public TextEncoder {
 public:
  explicit HashingEncoder(std::size_t dim = 256, std::uint64_t seed = 0);

  std::size_t dim() const override { return dim_; }
  std::uint64_t seed() const { return seed_; }
  DenseVector encode(std::string_view text) const override;
  nlohmann::json config() const override;

  static std::vector<std::string> features(std::string_view text);

 private:
  std::size_t dim_;
  std::uint64_t seed_;
  std::uint64_t seed_mix_;
};

DenseVector encode_text_baseline(const HashingEncoder& encoder, std::string_view text);

std::shared_ptr<const TextEncoder> encoder_from_config(const nlohmann::json& config);

// ---------------------------------------------------------------------------

using TupleLookup = std::function<const TupleRecord*(std::string_view relation, std::string_view key)>;

/// Counters for recoverable data problems met while vectorizing.
struct VectorizeDiagnostics {
  std::size_t dangling_keys = 0;
};

struct NumericStats {
  double mean = 0.0;
  double std = 1.0;
};

struct BlockLayout {
  std::string column;
  std::size_t offset = 0;
  std::size_t dim = 0;
};

/// Fitted statistics for one relation.
struct RelationFit {
  RelationSchema schema;
  std::map<std::string, NumericStats> numeric;
  std::map<std::string, std::vector<std::string>> vocabulary;  // sorted; UNK slot follows
};

struct FitInput {
  const RelationSchema* schema = nullptr;
  std::vector<const TupleRecord*> tuples;
};

/// Frozen vectorizer for one primary relation and the relations its foreign
/// keys reach. Layout of a tuple vector at depth d:
///   attribute blocks (schema order) | fk blocks, each the target's vector at
///   depth d-1 (only when d >= 1) | one presence bit per attribute and fk.
/// Depth-0 vectors therefore carry no fk blocks, which bounds self-reference.
class VectorizerModel {
 public:
  VectorizerModel(std::shared_ptr<const TextEncoder> encoder, std::size_t fk_depth,
                  std::string primary, std::map<std::string, RelationFit> fits);

  const std::string& primary() const { return primary_; }
  std::size_t fk_depth() const { return fk_depth_; }
  const TextEncoder& encoder() const { return *encoder_; }
  const RelationFit& fit(std::string_view relation) const;

  std::size_t tuple_dim() const { return dim_at(primary_, fk_depth_); }
  std::size_t mention_dim() const { return 2 * encoder_->dim(); }
  std::size_t dim_at(std::string_view relation, std::size_t depth) const;
  std::size_t attribute_dim(std::string_view relation, std::size_t attr) const;
  /// Block layout of the primary relation's tuple vector.
  std::vector<BlockLayout> layout() const;

  DenseVector vectorize_attribute(std::string_view relation, std::size_t attr,
                                  const std::optional<Scalar>& value) const;
  DenseVector embed_foreign_key(std::string_view relation, std::size_t fk,
                                const std::vector<std::string>& keys, const TupleLookup& lookup,
                                std::size_t depth, VectorizeDiagnostics* diag = nullptr) const;
  DenseVector vectorize_tuple(const TupleRecord& tuple, const TupleLookup& lookup,
                              VectorizeDiagnostics* diag = nullptr) const;
  DenseVector vectorize_tuple_at(const TupleRecord& tuple, std::size_t depth, const TupleLookup& lookup,
                                 VectorizeDiagnostics* diag = nullptr) const;
  DenseVector vectorize_mention(const TextMention& mention) const;

  nlohmann::json to_json() const;
  static VectorizerModel from_json(const nlohmann::json& j);

 private:
  std::shared_ptr<const TextEncoder> encoder_;
  std::size_t fk_depth_;
  std::string primary_;
  std::map<std::string, RelationFit> fits_;
};

/// Fits the primary relation and every relation reachable through foreign
/// keys; `related` supplies the non-primary relations.
VectorizerModel fit_vectorizer(const FitInput& primary, const std::vector<FitInput>& related,
                               std::shared_ptr<const TextEncoder> encoder, std::size_t fk_depth = 1);

VectorizerModel fit_vectorizer(const std::vector<TupleRecord>& tuples, const RelationSchema& schema,
                               std::shared_ptr<const TextEncoder> encoder, std::size_t fk_depth = 1);

// ---------------------------------------------------------------------------
// Keyed vector file:
//   "ENTLVEC1" | u32 version=1 | u64 source fingerprint | u64 count
//   count x ( u32 key length | key bytes | u32 dim | dim x f64 )
// All integers and reals little-endian. The file must end after the last record.

struct KeyedVectors {
  std::uint64_t source_fingerprint = 0;
  std::vector<std::string> keys;
  std::vector<DenseVector> vectors;
};

std::string encode_vector_file(const KeyedVectors& kv);
KeyedVectors decode_vector_file(std::string_view bytes);
void save_vectors(const KeyedVectors& kv, const std::string& path);
KeyedVectors load_vectors(const std::string& path);

}  // namespace entlink

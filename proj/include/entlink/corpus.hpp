#pragma once

#include "entlink/common.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

namespace entlink {

enum class AttributeKind { Text, Numeric, Categorical };

std::string_view to_string(AttributeKind kind);
AttributeKind attribute_kind_from_string(std::string_view s);

struct Attribute {
  std::string name;
  AttributeKind kind = AttributeKind::Text;
  // Synthesized by a loader rather than read from the source (e.g. the
  // WebNLG `name` column built from the subject id). Excluded from stats.
  bool derived = false;
};

struct ForeignKey {
  std::string name;
  std::string target_relation;
};

struct RelationSchema {
  std::string name;
  std::vector<Attribute> attributes;
  std::vector<ForeignKey> foreign_keys;
  // Name-like attribute for the exact-match strategy; empty means "first
  // text attribute".
  std::string name_attribute;

  std::optional<std::size_t> attribute_index(std::string_view attr) const;
  std::optional<std::size_t> foreign_key_index(std::string_view fk) const;
  /// Unique column names; fk targets must be in `declared` (when non-empty).
  void validate(const std::vector<std::string>& declared = {}) const;
};

using Scalar = std::variant<double, std::string>;

struct TupleRecord {
  std::string relation;
  std::string key;
  std::vector<std::optional<Scalar>> values;       // one per schema attribute
  std::vector<std::vector<std::string>> fk_values;  // one list per foreign key
};

struct Span {
  std::size_t start = 0;
  std::size_t end = 0;
};

struct TextMention {
  std::string id;
  Span span;
  std::string mention_text;
  std::string sentence_text;
  std::optional<std::string> entity_category;
};

struct GoldLink {
  std::string tuple_key;
  std::string mention_id;
};

/// A schema plus its tuples, indexed by primary key.
class Relation {
 public:
  Relation() = default;
  Relation(RelationSchema schema, std::vector<TupleRecord> tuples);

  const RelationSchema& schema() const { return schema_; }
  const std::vector<TupleRecord>& tuples() const { return tuples_; }
  const TupleRecord* find(std::string_view key) const;

 private:
  RelationSchema schema_;
  std::vector<TupleRecord> tuples_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Immutable after construction; safe to share across threads.
class Corpus {
 public:
  Corpus() = default;
  Corpus(std::vector<Relation> relations, std::vector<TextMention> mentions,
         std::vector<GoldLink> links);

  const std::vector<Relation>& relations() const { return relations_; }
  const Relation* relation(std::string_view name) const;
  const std::vector<TextMention>& mentions() const { return mentions_; }
  const TextMention* mention(std::string_view id) const;
  const std::vector<GoldLink>& links() const { return links_; }

  const TupleRecord* find_tuple(std::string_view relation, std::string_view key) const;
  /// Relation a mention belongs to (its category, or the only relation).
  std::string relation_of(const TextMention& m) const;

  /// Mentions whose relation is `relation`, in corpus order.
  std::vector<const TextMention*> mentions_of(std::string_view relation) const;
  /// Gold links whose mention belongs to `relation`.
  std::vector<GoldLink> links_of(std::string_view relation) const;
  /// Tuple keys of `relation` with at least one gold link, sorted.
  std::vector<std::string> linked_entities(std::string_view relation) const;

  /// Foreign-key values that do not resolve to a tuple (flagged at load time).
  std::size_t dangling_foreign_keys() const { return dangling_fk_; }

 private:
  void validate();

  std::vector<Relation> relations_;
  std::vector<TextMention> mentions_;
  std::vector<GoldLink> links_;
  std::unordered_map<std::string, std::size_t> mention_index_;
  std::size_t dangling_fk_ = 0;
};

nlohmann::json corpus_to_json(const Corpus& corpus);
Corpus corpus_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// WebNLG-style XML

struct Triple {
  std::string subject;
  std::string predicate;
  std::string object;
};

/// One <entry>. Tuples are aligned to an entry-local schema whose attributes
/// are the entry's predicates; predicates whose object is a subject elsewhere
/// in the entry become foreign keys.
struct WebnlgEntry {
  std::string eid;
  std::string category;
  std::string size;
  std::vector<Triple> triples;
  std::string primary_subject;
  RelationSchema schema;
  std::vector<TupleRecord> tuples;
  std::vector<TextMention> mentions;
  std::vector<GoldLink> links;
};

class RejectedEntryError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

WebnlgEntry parse_webnlg_entry(std::string_view xml_text);

struct WebnlgDocument {
  std::vector<WebnlgEntry> entries;
  std::vector<std::string> rejected;  // "eid: reason"
};

/// Parses a benchmark file (any root containing <entry> elements).
WebnlgDocument parse_webnlg_document(std::string_view xml_text);

/// Merges entries into one relation per category. Tuples with the same
/// subject are merged (first value wins per attribute, fk lists are unioned).
class CorpusBuilder {
 public:
  void add(const WebnlgEntry& entry);
  void add(const WebnlgDocument& doc);
  Corpus build() const;

 private:
  struct Cell {
    std::vector<std::string> values;
  };
  struct PendingTuple {
    std::string key;
    std::map<std::string, Cell> cells;  // predicate -> values
  };
  struct PendingRelation {
    std::vector<std::string> predicates;  // first-appearance order
    std::map<std::string, bool> is_fk;
    std::vector<PendingTuple> tuples;
    std::unordered_map<std::string, std::size_t> index;
  };
  std::vector<std::string> category_order_;
  std::map<std::string, PendingRelation> relations_;
  std::vector<TextMention> mentions_;
  std::vector<GoldLink> links_;
  std::set<std::string> mention_ids_;
};

/// Column typing used by loaders without declared types.
AttributeKind infer_attribute_kind(const std::vector<std::string>& non_null_values);

// ---------------------------------------------------------------------------
// Delimited text

/// Splits delimited text into rows of cells; double quotes quote a cell.
std::vector<std::vector<std::string>> parse_delimited(std::string_view text, char delimiter);

/// Header: key column, then attributes in schema order, then foreign keys.
/// Empty cells are NULL; fk cells hold '|'-separated keys.
std::vector<TupleRecord> load_relation_table(const RelationSchema& schema, std::string_view rows,
                                             char delimiter = ',');

/// Header: id, start, end, mention_text, sentence_text, category.
std::vector<TextMention> load_mentions(std::string_view rows, char delimiter = '\t');
/// Header: tuple_key, mention_id.
std::vector<GoldLink> load_gold_links(std::string_view rows, char delimiter = '\t');

RelationSchema schema_from_json(const nlohmann::json& j);
nlohmann::json schema_to_json(const RelationSchema& schema);

// ---------------------------------------------------------------------------
// Splits

enum class Split { Train, Test, Unseen };
std::string_view to_string(Split s);

struct SplitSpec {
  std::uint64_t seed = 0;
  double unseen_fraction = 0.20;
  double test_fraction_of_seen = 0.20;

  void validate() const;
};

struct EntitySplits {
  std::vector<std::string> train;
  std::vector<std::string> test;
  std::vector<std::string> unseen;
};

/// Partitions entities: round(unseen_fraction * n) unseen, the rest split
/// into train/test by test_fraction_of_seen. Deterministic per seed.
EntitySplits make_splits(std::vector<std::string> entity_keys, const SplitSpec& spec);

/// Per-category splits, each category split independently.
struct SplitManifest {
  SplitSpec spec;
  std::map<std::string, EntitySplits> categories;

  std::optional<Split> split_of(std::string_view category, std::string_view key) const;
};

SplitManifest make_stratified_splits(const Corpus& corpus, const SplitSpec& spec);
nlohmann::json splits_to_json(const SplitManifest& manifest);
SplitManifest splits_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Stats

struct CategoryStats {
  std::string category;
  std::size_t instances = 0;
  std::size_t tuples = 0;
  std::size_t sentences = 0;
  double sentences_per_instance = 0.0;
  std::size_t columns = 0;
  double avg_tuple_density = 0.0;
};

std::vector<CategoryStats> corpus_stats(const Corpus& corpus);
/// Non-NULL share of one tuple's source columns (attributes and foreign keys).
double tuple_density(const RelationSchema& schema, const TupleRecord& tuple);

}  // namespace entlink

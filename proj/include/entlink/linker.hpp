#pragma once

#include "entlink/annindex.hpp"
#include "entlink/corpus.hpp"
#include "entlink/neural.hpp"
#include "entlink/vectorize.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace entlink {

enum class Strategy { Exact, Semantic };
enum class Direction { TupleToMentions, MentionToTuples };

std::string_view to_string(Strategy s);
std::string_view to_string(Direction d);
Strategy strategy_from_string(std::string_view s);

/// Score carried by candidates of strategies that do not score.
constexpr double kSentinelScore = 1.0;

struct MatchCandidate {
  std::string tuple_key;
  std::string mention_id;
  double score = kSentinelScore;
  Strategy strategy = Strategy::Exact;
};

struct RankedCounterpart {
  std::string id;
  double score = 0.0;
  std::size_t rank = 0;  // dense, from 1
  Strategy strategy = Strategy::Semantic;

  bool operator==(const RankedCounterpart&) const = default;
};

struct LinkResult {
  Direction direction = Direction::TupleToMentions;
  std::string anchor;
  std::vector<RankedCounterpart> ranked;  // ascending score, then id

  bool operator==(const LinkResult&) const = default;
};

/// Name-like attribute used for exact matching: the schema's declared one,
/// else its first text attribute. Empty when there is none.
std::string name_attribute_of(const RelationSchema& schema);

/// Emits (tuple, mention) when the full token sequence of the tuple's name
/// occurs contiguously, case-folded, in the mention's sentence. Scores carry
/// the sentinel.
std::vector<MatchCandidate> bootstrap_exact_match(const Relation& relation,
                                                  const std::vector<const TextMention*>& mentions,
                                                  std::vector<std::string>* warnings = nullptr);

/// True when `needle` tokens appear as a contiguous run inside `haystack` tokens.
bool contains_token_run(const std::vector<std::string>& haystack, const std::vector<std::string>& needle);

/// Groups by anchor, sorts ascending by score then counterpart id, assigns
/// dense ranks. Results are ordered by anchor id.
std::vector<LinkResult> rank_candidates(const std::vector<MatchCandidate>& candidates,
                                        Direction direction = Direction::TupleToMentions);

/// Dense ranks over hits already sorted by hit_before.
LinkResult dense_rank(std::string anchor, Direction direction, const std::vector<RankedHit>& hits, Strategy strategy);

/// Embeds the anchor's raw vector through its side's network and queries a
/// forest built over the opposite side's joint embeddings.
LinkResult semantic_link(const EmbedderPair& pair, const RpForest& forest, std::string anchor,
                         const DenseVector& anchor_raw, Direction direction, std::size_t n, std::size_t search_k = 0);

/// Writes "anchor\tcounterpart\tscore\trank\tstrategy" lines with a header.
std::string link_results_to_tsv(const std::vector<LinkResult>& results);

// ---------------------------------------------------------------------------
// Evaluation

constexpr std::array<std::size_t, 3> kPrecisionKs{1, 5, 10};

struct PrecisionCell {
  std::size_t anchors = 0;   // anchors with at least one gold counterpart
  std::size_t excluded = 0;  // anchors without gold
  std::array<std::size_t, 3> hits{};

  double precision(std::size_t k_index) const {
    return anchors == 0 ? 0.0 : static_cast<double>(hits[k_index]) / static_cast<double>(anchors);
  }
  void add(const PrecisionCell& other);
};

/// P@k: share of anchors whose first k results contain a gold counterpart.
/// gold holds (anchor, counterpart) pairs.
PrecisionCell evaluate_precision(const std::vector<LinkResult>& results,
                                 const std::set<std::pair<std::string, std::string>>& gold);

struct DirectionEval {
  std::map<Split, PrecisionCell> splits;
  std::size_t excluded = 0;  // anchors outside every split
};

struct TrainingRecord {
  std::size_t batches = 0;
  double first_loss = 0.0;
  double last_loss = 0.0;
  std::size_t entities_seen = 0;
};

struct CategoryEval {
  std::string category;
  std::string match_source;  // "gold" or "bootstrap"
  std::size_t tuples = 0;
  std::size_t mentions = 0;
  DirectionEval tuple_to_mentions;
  DirectionEval mention_to_tuples;
  TrainingRecord training;
};

struct EvalReport {
  std::vector<CategoryEval> categories;  // sorted by name

  /// Micro-averaged cells over all categories.
  DirectionEval overall(Direction d) const;
};

nlohmann::json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);
/// Rows are categories; columns P@1/P@5/P@10 for test, train and unseen, in
/// the primary (tuple to mentions) direction.
std::string report_to_table(const EvalReport& report);
enum class ReportFormat { Json, Table };
std::string emit_report(const EvalReport& report, ReportFormat format);

// ---------------------------------------------------------------------------
// Pipeline

struct PipelineConfig {
  std::size_t encoder_dim = 256;
  std::uint64_t encoder_seed = 0;
  std::size_t fk_depth = 1;
  NetworkShape shape;
  double margin = 1.0;
  AdamConfig adam;
  SamplerConfig sampler{.entities_per_batch = 16, .links_per_entity = 2, .distractors_per_batch = 0};
  std::size_t batches = 2000;
  std::uint64_t train_seed = 0;
  ForestConfig forest;
  std::size_t top_n = 10;
  std::size_t search_k = 0;  // 0 = top_n * trees * 4
  Strategy strategy = Strategy::Semantic;

  void validate() const;
};

nlohmann::json pipeline_config_to_json(const PipelineConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j, PipelineConfig base = {});
/// Settings from the original description of the method.
PipelineConfig paper_profile();

/// One category's slice of the corpus with its split.
struct CategoryView {
  const Corpus* corpus = nullptr;
  const Relation* relation = nullptr;
  std::vector<const TextMention*> mentions;
  std::vector<GoldLink> matches;  // gold links, or bootstrap candidates when there are none
  std::string match_source;
  EntitySplits splits;

  std::string name() const { return relation->schema().name; }
  std::optional<Split> split_of(const std::string& entity) const;
  TupleLookup lookup() const;
};

/// Matches a category trains on: its gold links, else bootstrap candidates.
std::vector<GoldLink> category_matches(const Corpus& corpus, const std::string& category, std::string* source = nullptr,
                                       std::vector<std::string>* warnings = nullptr);

/// Splits entities that have matches, per category. Categories without any
/// match are left out.
SplitManifest make_match_splits(const Corpus& corpus, const SplitSpec& spec,
                                std::vector<std::string>* warnings = nullptr);

CategoryView category_view(const Corpus& corpus, const SplitManifest& splits, const std::string& category,
                           std::vector<std::string>* warnings = nullptr);

/// Fits on the category's tuples except those of unseen entities.
VectorizerModel fit_category_vectorizer(const CategoryView& view, const PipelineConfig& config);
KeyedVectors raw_tuple_vectors(const VectorizerModel& model, const CategoryView& view,
                               VectorizeDiagnostics* diag = nullptr);
KeyedVectors raw_mention_vectors(const VectorizerModel& model, const CategoryView& view);

struct TrainedCategory {
  EmbedderPair pair;
  AdamState adam;
  TrainSummary summary;
  std::string log;  // "step lr loss" lines
};

/// Trains on matches of train-split entities; test-split items act as
/// non-anchor contrast. Unseen entities never enter a batch.
TrainedCategory train_category(const CategoryView& view, const KeyedVectors& raw_tuples,
                               const KeyedVectors& raw_mentions, const PipelineConfig& config);

/// Joint-space embeddings, row-parallel.
KeyedVectors embed_keyed(const DenseNet& net, const KeyedVectors& raw);
RpForest build_keyed_forest(const KeyedVectors& joint, const ForestConfig& config);

struct CategoryLinks {
  std::vector<LinkResult> tuple_to_mentions;
  std::vector<LinkResult> mention_to_tuples;
};

/// Links every tuple and mention of the category. `raw_*` are the inputs the
/// networks embed; forests index the joint embeddings of the opposite side.
CategoryLinks link_category(const CategoryView& view, const EmbedderPair& pair, const KeyedVectors& raw_tuples,
                            const KeyedVectors& raw_mentions, const RpForest& tuple_forest,
                            const RpForest& mention_forest, const PipelineConfig& config);
/// Exact-strategy links from bootstrap candidates.
CategoryLinks exact_links(const CategoryView& view);

CategoryEval evaluate_category(const CategoryView& view, const CategoryLinks& links);

struct CategoryArtifacts {
  std::string category;
  VectorizerModel vectorizer;
  KeyedVectors raw_tuples;
  KeyedVectors raw_mentions;
  TrainedCategory trained;
  KeyedVectors joint_tuples;
  KeyedVectors joint_mentions;
  RpForest tuple_forest;
  RpForest mention_forest;
  CategoryLinks links;
};

struct StageTimer {
  std::function<void(const std::string& category, const std::string& stage, double seconds)> record;
};

struct RetrainResult {
  std::vector<CategoryArtifacts> categories;
  EvalReport report;
};

/// Vectorize, obtain matches, train, embed, index and evaluate every
/// category. Unseen entities are embedded and evaluated without training.
RetrainResult retrain_cycle(const Corpus& corpus, const SplitManifest& splits, const PipelineConfig& config,
                            const StageTimer* timer = nullptr, std::vector<std::string>* warnings = nullptr);

}  // namespace entlink

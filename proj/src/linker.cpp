#include "entlink/linker.hpp"

#include "entlink/detail/parallel.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <map>
#include <sstream>
#include <unordered_map>

namespace entlink {

using json = nlohmann::json;

std::string_view to_string(Strategy s) { return s == Strategy::Exact ? "exact" : "semantic"; }

std::string_view to_string(Direction d) {
  return d == Direction::TupleToMentions ? "tuple_to_mentions" : "mention_to_tuples";
}

Strategy strategy_from_string(std::string_view s) {
  if (s == "exact") return Strategy::Exact;
  if (s == "semantic") return Strategy::Semantic;
  throw ValidationError("unknown strategy '" + std::string(s) + "' (expected exact or semantic)");
}

// ---------------------------------------------------------------------------
// Exact matching

std::string name_attribute_of(const RelationSchema& schema) {
  if (!schema.name_attribute.empty()) return schema.name_attribute;
  for (const auto& a : schema.attributes) {
    if (a.kind == AttributeKind::Text) return a.name;
  }
  return {};
}

bool contains_token_run(const std::vector<std::string>& haystack, const std::vector<std::string>& needle) {
  if (needle.empty() || needle.size() > haystack.size()) return false;
  return std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end()) != haystack.end();
}

std::vector<MatchCandidate> bootstrap_exact_match(const Relation& relation,
                                                  const std::vector<const TextMention*>& mentions,
                                                  std::vector<std::string>* warnings) {
  const auto& schema = relation.schema();
  const auto name_attr = name_attribute_of(schema);
  const auto idx = name_attr.empty() ? std::nullopt : schema.attribute_index(name_attr);
  if (!idx) {
    if (warnings) warnings->push_back("relation " + schema.name + " has no text attribute; exact matching skipped");
    return {};
  }

  // First token -> (tuple key, name tokens).
  std::unordered_map<std::string, std::vector<std::pair<const std::string*, std::vector<std::string>>>> by_first;
  for (const auto& t : relation.tuples()) {
    const auto& v = t.values[*idx];
    if (!v) continue;
    std::string text;
    if (const auto* s = std::get_if<std::string>(&*v)) {
      text = *s;
    } else {
      text = json(std::get<double>(*v)).dump();
    }
    auto tokens = word_tokens(text);
    if (tokens.empty()) continue;
    by_first[tokens.front()].emplace_back(&t.key, std::move(tokens));
  }

  std::vector<MatchCandidate> out;
  for (const auto* m : mentions) {
    const auto hay = word_tokens(m->sentence_text);
    std::set<std::string> matched;
    for (std::size_t i = 0; i < hay.size(); ++i) {
      auto it = by_first.find(hay[i]);
      if (it == by_first.end()) continue;
      for (const auto& [key, tokens] : it->second) {
        if (i + tokens.size() > hay.size()) continue;
        if (std::equal(tokens.begin(), tokens.end(), hay.begin() + static_cast<std::ptrdiff_t>(i))) {
          matched.insert(*key);
        }
      }
    }
    for (const auto& key : matched) out.push_back({key, m->id, kSentinelScore, Strategy::Exact});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ranking

namespace {

struct Scored {
  std::string id;
  double score;
  Strategy strategy;
};

void assign_dense_ranks(std::vector<RankedCounterpart>& ranked) {
  std::size_t rank = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (i == 0 || ranked[i].score != ranked[i - 1].score) ++rank;
    ranked[i].rank = rank;
  }
}

}  // namespace

std::vector<LinkResult> rank_candidates(const std::vector<MatchCandidate>& candidates, Direction direction) {
  std::map<std::string, std::vector<Scored>> groups;
  for (const auto& c : candidates) {
    if (direction == Direction::TupleToMentions) {
      groups[c.tuple_key].push_back({c.mention_id, c.score, c.strategy});
    } else {
      groups[c.mention_id].push_back({c.tuple_key, c.score, c.strategy});
    }
  }
  std::vector<LinkResult> out;
  out.reserve(groups.size());
  for (auto& [anchor, items] : groups) {
    std::sort(items.begin(), items.end(), [](const Scored& a, const Scored& b) {
      return a.score != b.score ? a.score < b.score : a.id < b.id;
    });
    LinkResult r;
    r.direction = direction;
    r.anchor = anchor;
    for (auto& s : items) r.ranked.push_back({std::move(s.id), s.score, 0, s.strategy});
    assign_dense_ranks(r.ranked);
    out.push_back(std::move(r));
  }
  return out;
}

LinkResult dense_rank(std::string anchor, Direction direction, const std::vector<RankedHit>& hits, Strategy strategy) {
  LinkResult r;
  r.direction = direction;
  r.anchor = std::move(anchor);
  r.ranked.reserve(hits.size());
  for (const auto& h : hits) r.ranked.push_back({h.id, h.score, 0, strategy});
  assign_dense_ranks(r.ranked);
  return r;
}

LinkResult semantic_link(const EmbedderPair& pair, const RpForest& forest, std::string anchor,
                         const DenseVector& anchor_raw, Direction direction, std::size_t n, std::size_t search_k) {
  const auto& net = direction == Direction::TupleToMentions ? pair.net_r : pair.net_t;
  if (static_cast<std::size_t>(anchor_raw.size()) != net.input_dim()) {
    throw ValidationError("anchor '" + anchor + "' has dimension " + std::to_string(anchor_raw.size()) +
                          ", the network expects " + std::to_string(net.input_dim()));
  }
  const auto q = forward_embed(net, anchor_raw);
  return dense_rank(std::move(anchor), direction, forest.query(q, n, search_k), Strategy::Semantic);
}

namespace {

std::string format_real(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

}  // namespace

std::string link_results_to_tsv(const std::vector<LinkResult>& results) {
  std::string out = "anchor\tcounterpart\tscore\trank\tstrategy\n";
  for (const auto& r : results) {
    for (const auto& c : r.ranked) {
      out += r.anchor;
      out += '\t';
      out += c.id;
      out += '\t';
      out += format_real(c.score);
      out += '\t';
      out += std::to_string(c.rank);
      out += '\t';
      out += to_string(c.strategy);
      out += '\n';
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

void PrecisionCell::add(const PrecisionCell& other) {
  anchors += other.anchors;
  excluded += other.excluded;
  for (std::size_t i = 0; i < hits.size(); ++i) hits[i] += other.hits[i];
}

PrecisionCell evaluate_precision(const std::vector<LinkResult>& results,
                                 const std::set<std::pair<std::string, std::string>>& gold) {
  PrecisionCell cell;
  for (const auto& r : results) {
    auto lo = gold.lower_bound({r.anchor, std::string()});
    if (lo == gold.end() || lo->first != r.anchor) {
      ++cell.excluded;
      continue;
    }
    ++cell.anchors;
    std::size_t first_hit = r.ranked.size();
    for (std::size_t i = 0; i < r.ranked.size(); ++i) {
      if (gold.count({r.anchor, r.ranked[i].id})) {
        first_hit = i;
        break;
      }
    }
    for (std::size_t k = 0; k < kPrecisionKs.size(); ++k) {
      if (first_hit < kPrecisionKs[k]) ++cell.hits[k];
    }
  }
  return cell;
}

DirectionEval EvalReport::overall(Direction d) const {
  DirectionEval out;
  for (auto s : {Split::Train, Split::Test, Split::Unseen}) out.splits[s] = {};
  for (const auto& c : categories) {
    const auto& de = d == Direction::TupleToMentions ? c.tuple_to_mentions : c.mention_to_tuples;
    out.excluded += de.excluded;
    for (const auto& [s, cell] : de.splits) out.splits[s].add(cell);
  }
  return out;
}

namespace {

constexpr Split kReportSplits[] = {Split::Test, Split::Train, Split::Unseen};

Split split_from_string(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  if (s == "unseen") return Split::Unseen;
  throw ValidationError("unknown split '" + std::string(s) + "'");
}

json cell_to_json(const PrecisionCell& c) {
  json p = json::object();
  for (std::size_t k = 0; k < kPrecisionKs.size(); ++k) p["p@" + std::to_string(kPrecisionKs[k])] = c.precision(k);
  return {{"anchors", c.anchors}, {"excluded", c.excluded}, {"hits", c.hits}, {"precision", p}};
}

PrecisionCell cell_from_json(const json& j) {
  PrecisionCell c;
  c.anchors = j.at("anchors").get<std::size_t>();
  c.excluded = j.at("excluded").get<std::size_t>();
  const auto hits = j.at("hits").get<std::vector<std::size_t>>();
  if (hits.size() != c.hits.size()) throw ValidationError("report cell needs " + std::to_string(c.hits.size()) + " hit counts");
  std::size_t prev = 0;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    if (hits[i] < prev || hits[i] > c.anchors) throw ValidationError("report cell hit counts are inconsistent");
    c.hits[i] = prev = hits[i];
  }
  return c;
}

json direction_to_json(const DirectionEval& d) {
  json out = json::object();
  for (auto s : {Split::Train, Split::Test, Split::Unseen}) {
    auto it = d.splits.find(s);
    out[std::string(to_string(s))] = cell_to_json(it == d.splits.end() ? PrecisionCell{} : it->second);
  }
  out["excluded_without_split"] = d.excluded;
  return out;
}

DirectionEval direction_from_json(const json& j) {
  DirectionEval d;
  for (const auto& [k, v] : j.items()) {
    if (k == "excluded_without_split") d.excluded = v.get<std::size_t>();
    else d.splits[split_from_string(k)] = cell_from_json(v);
  }
  return d;
}

}  // namespace

json report_to_json(const EvalReport& report) {
  json cats = json::array();
  for (const auto& c : report.categories) {
    cats.push_back({{"category", c.category},
                    {"match_source", c.match_source},
                    {"tuples", c.tuples},
                    {"mentions", c.mentions},
                    {"training",
                     {{"batches", c.training.batches},
                      {"first_loss", c.training.first_loss},
                      {"last_loss", c.training.last_loss},
                      {"entities_seen", c.training.entities_seen}}},
                    {"tuple_to_mentions", direction_to_json(c.tuple_to_mentions)},
                    {"mention_to_tuples", direction_to_json(c.mention_to_tuples)}});
  }
  return {{"format", "entlink-report"},
          {"version", 1},
          {"ks", kPrecisionKs},
          {"categories", cats},
          {"overall",
           {{"tuple_to_mentions", direction_to_json(report.overall(Direction::TupleToMentions))},
            {"mention_to_tuples", direction_to_json(report.overall(Direction::MentionToTuples))}}}};
}

EvalReport report_from_json(const json& j) {
  try {
    if (j.value("format", std::string()) != "entlink-report" || j.value("version", 0) != 1) {
      throw ValidationError("not an entlink-report v1 document");
    }
    EvalReport r;
    for (const auto& jc : j.at("categories")) {
      CategoryEval c;
      c.category = jc.at("category").get<std::string>();
      c.match_source = jc.at("match_source").get<std::string>();
      c.tuples = jc.at("tuples").get<std::size_t>();
      c.mentions = jc.at("mentions").get<std::size_t>();
      const auto& t = jc.at("training");
      c.training = {t.at("batches").get<std::size_t>(), t.at("first_loss").get<double>(),
                    t.at("last_loss").get<double>(), t.at("entities_seen").get<std::size_t>()};
      c.tuple_to_mentions = direction_from_json(jc.at("tuple_to_mentions"));
      c.mention_to_tuples = direction_from_json(jc.at("mention_to_tuples"));
      r.categories.push_back(std::move(c));
    }
    return r;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed report: ") + e.what());
  }
}

std::string report_to_table(const EvalReport& report) {
  std::size_t width = 8;
  for (const auto& c : report.categories) width = std::max(width, c.category.size());
  constexpr int cell_width = 11;
  std::ostringstream out;
  out << std::string("category") << std::string(width - 8, ' ');
  for (auto s : kReportSplits) {
    for (auto k : kPrecisionKs) {
      const auto head = std::string(to_string(s)) + ":P@" + std::to_string(k);
      out << std::string(cell_width - std::min<std::size_t>(cell_width - 1, head.size()), ' ') << head;
    }
  }
  out << '\n';
  for (const auto& c : report.categories) {
    out << c.category << std::string(width - c.category.size(), ' ');
    for (auto s : kReportSplits) {
      auto it = c.tuple_to_mentions.splits.find(s);
      for (std::size_t k = 0; k < kPrecisionKs.size(); ++k) {
        std::string v = "-";
        if (it != c.tuple_to_mentions.splits.end() && it->second.anchors > 0) {
          char buf[32];
          std::snprintf(buf, sizeof buf, "%.2f", it->second.precision(k));
          v = buf;
        }
        out << std::string(cell_width - v.size(), ' ') << v;
      }
    }
    out << '\n';
  }
  return out.str();
}

std::string emit_report(const EvalReport& report, ReportFormat format) {
  if (format == ReportFormat::Table) return report_to_table(report);
  return report_to_json(report).dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Configuration

void PipelineConfig::validate() const {
  auto fail = [](const std::string& m) { throw ValidationError("config: " + m); };
  if (encoder_dim == 0) fail("encoder.dim must be positive");
  if (fk_depth > 4) fail("vectorizer.fk_depth must be at most 4");
  if (shape.joint_dim == 0) fail("network.joint_dim must be positive");
  for (auto h : shape.relational_hidden) if (h == 0) fail("network.relational_hidden entries must be positive");
  for (auto h : shape.text_hidden) if (h == 0) fail("network.text_hidden entries must be positive");
  if (!(shape.keep_prob > 0.0 && shape.keep_prob <= 1.0)) fail("network.keep_prob must lie in (0, 1]");
  if (!(margin > 0.0) || !std::isfinite(margin)) fail("training.margin must be positive");
  if (!(adam.learning_rate > 0.0) || !std::isfinite(adam.learning_rate)) fail("training.learning_rate must be positive");
  if (!(adam.decay_rate > 0.0 && adam.decay_rate <= 1.0)) fail("training.decay_rate must lie in (0, 1]");
  if (adam.decay_steps == 0) fail("training.decay_steps must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    fail("training.beta1 and beta2 must lie in [0, 1)");
  }
  if (!(adam.epsilon > 0.0)) fail("training.epsilon must be positive");
  if (batches == 0) fail("training.batches must be positive");
  if (sampler.entities_per_batch == 0) fail("training.entities_per_batch must be positive");
  if (sampler.links_per_entity == 0) fail("training.links_per_entity must be positive");
  if (top_n == 0) fail("index.top_n must be positive");
  try {
    forest.validate();
  } catch (const ValidationError& e) {
    fail(std::string("index: ") + e.what());
  }
}

json pipeline_config_to_json(const PipelineConfig& c) {
  return {{"encoder", {{"dim", c.encoder_dim}, {"seed", c.encoder_seed}}},
          {"vectorizer", {{"fk_depth", c.fk_depth}}},
          {"network",
           {{"relational_hidden", c.shape.relational_hidden},
            {"text_hidden", c.shape.text_hidden},
            {"joint_dim", c.shape.joint_dim},
            {"keep_prob", c.shape.keep_prob}}},
          {"training",
           {{"margin", c.margin},
            {"learning_rate", c.adam.learning_rate},
            {"decay_rate", c.adam.decay_rate},
            {"decay_steps", c.adam.decay_steps},
            {"beta1", c.adam.beta1},
            {"beta2", c.adam.beta2},
            {"epsilon", c.adam.epsilon},
            {"batches", c.batches},
            {"seed", c.train_seed},
            {"entities_per_batch", c.sampler.entities_per_batch},
            {"links_per_entity", c.sampler.links_per_entity},
            {"distractors_per_batch", c.sampler.distractors_per_batch}}},
          {"index",
           {{"trees", c.forest.trees},
            {"leaf_capacity", c.forest.leaf_capacity},
            {"seed", c.forest.seed},
            {"top_n", c.top_n},
            {"search_k", c.search_k}}},
          {"strategy", std::string(to_string(c.strategy))}};
}

namespace {

using Setter = std::function<void(const json&)>;

void apply_section(const json& obj, const std::string& path, const std::map<std::string, Setter>& setters) {
  if (!obj.is_object()) throw ValidationError("config: '" + path + "' must be an object");
  for (const auto& [k, v] : obj.items()) {
    auto it = setters.find(k);
    if (it == setters.end()) throw ValidationError("config: unknown key '" + path + "." + k + "'");
    it->second(v);
  }
}

template <class T>
Setter set(T& target) {
  return [&target](const json& v) { target = v.get<T>(); };
}

}  // namespace

PipelineConfig pipeline_config_from_json(const json& j, PipelineConfig c) {
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  try {
    for (const auto& [section, body] : j.items()) {
      if (section == "encoder") {
        apply_section(body, section, {{"dim", set(c.encoder_dim)}, {"seed", set(c.encoder_seed)}});
      } else if (section == "vectorizer") {
        apply_section(body, section, {{"fk_depth", set(c.fk_depth)}});
      } else if (section == "network") {
        apply_section(body, section,
                      {{"relational_hidden", set(c.shape.relational_hidden)},
                       {"text_hidden", set(c.shape.text_hidden)},
                       {"joint_dim", set(c.shape.joint_dim)},
                       {"keep_prob", set(c.shape.keep_prob)}});
      } else if (section == "training") {
        apply_section(body, section,
                      {{"margin", set(c.margin)},
                       {"learning_rate", set(c.adam.learning_rate)},
                       {"decay_rate", set(c.adam.decay_rate)},
                       {"decay_steps", set(c.adam.decay_steps)},
                       {"beta1", set(c.adam.beta1)},
                       {"beta2", set(c.adam.beta2)},
                       {"epsilon", set(c.adam.epsilon)},
                       {"batches", set(c.batches)},
                       {"seed", set(c.train_seed)},
                       {"entities_per_batch", set(c.sampler.entities_per_batch)},
                       {"links_per_entity", set(c.sampler.links_per_entity)},
                       {"distractors_per_batch", set(c.sampler.distractors_per_batch)}});
      } else if (section == "index") {
        apply_section(body, section,
                      {{"trees", set(c.forest.trees)},
                       {"leaf_capacity", set(c.forest.leaf_capacity)},
                       {"seed", set(c.forest.seed)},
                       {"top_n", set(c.top_n)},
                       {"search_k", set(c.search_k)}});
      } else if (section == "strategy") {
        c.strategy = strategy_from_string(body.get<std::string>());
      } else {
        throw ValidationError("config: unknown section '" + section + "'");
      }
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

PipelineConfig paper_profile() {
  PipelineConfig c;
  c.shape.relational_hidden = {512};
  c.shape.text_hidden = {};
  c.shape.joint_dim = 256;
  c.shape.keep_prob = 0.75;
  c.margin = 0.001;
  c.adam.learning_rate = 1e-5;
  c.adam.decay_rate = 0.9;
  c.adam.decay_steps = 1000;
  c.forest.trees = 200;
  c.top_n = 10;
  return c;
}

// ---------------------------------------------------------------------------
// Pipeline stages

std::vector<GoldLink> category_matches(const Corpus& corpus, const std::string& category, std::string* source,
                                       std::vector<std::string>* warnings) {
  const auto* rel = corpus.relation(category);
  if (!rel) throw ValidationError("unknown category '" + category + "'");
  auto gold = corpus.links_of(category);
  if (!gold.empty()) {
    if (source) *source = "gold";
    return gold;
  }
  if (source) *source = "bootstrap";
  std::vector<GoldLink> out;
  for (const auto& c : bootstrap_exact_match(*rel, corpus.mentions_of(category), warnings)) {
    out.push_back({c.tuple_key, c.mention_id});
  }
  return out;
}

SplitManifest make_match_splits(const Corpus& corpus, const SplitSpec& spec, std::vector<std::string>* warnings) {
  spec.validate();
  SplitManifest out;
  out.spec = spec;
  for (const auto& r : corpus.relations()) {
    const auto& name = r.schema().name;
    if (corpus.mentions_of(name).empty()) continue;
    std::set<std::string> entities;
    for (const auto& m : category_matches(corpus, name, nullptr, warnings)) entities.insert(m.tuple_key);
    if (entities.empty()) {
      if (warnings) warnings->push_back("category " + name + " has no matches and was not split");
      continue;
    }
    SplitSpec local = spec;
    local.seed = splitmix64(spec.seed ^ fnv1a64(name));
    try {
      out.categories[name] = make_splits({entities.begin(), entities.end()}, local);
    } catch (const ValidationError& e) {
      throw ValidationError("category " + name + ": " + e.what());
    }
  }
  return out;
}

std::optional<Split> CategoryView::split_of(const std::string& entity) const {
  auto has = [&](const std::vector<std::string>& v) { return std::binary_search(v.begin(), v.end(), entity); };
  if (has(splits.train)) return Split::Train;
  if (has(splits.test)) return Split::Test;
  if (has(splits.unseen)) return Split::Unseen;
  return std::nullopt;
}

TupleLookup CategoryView::lookup() const {
  const Corpus* c = corpus;
  return [c](std::string_view rel, std::string_view key) { return c->find_tuple(rel, key); };
}

CategoryView category_view(const Corpus& corpus, const SplitManifest& splits, const std::string& category,
                           std::vector<std::string>* warnings) {
  CategoryView v;
  v.corpus = &corpus;
  v.relation = corpus.relation(category);
  if (!v.relation) throw ValidationError("unknown category '" + category + "'");
  v.mentions = corpus.mentions_of(category);
  v.matches = category_matches(corpus, category, &v.match_source, warnings);
  if (v.matches.empty()) {
    throw ValidationError("category " + category +
                          " has no matches to train on: supply gold links (tuple_key, mention_id) or make sure "
                          "tuple names appear verbatim in the sentences");
  }
  auto it = splits.categories.find(category);
  if (it == splits.categories.end()) {
    throw ValidationError("category " + category + " is missing from the splits; rerun ingest");
  }
  v.splits = it->second;
  for (auto* list : {&v.splits.train, &v.splits.test, &v.splits.unseen}) {
    std::sort(list->begin(), list->end());
    for (const auto& k : *list) {
      if (!v.relation->find(k)) {
        throw ValidationError("splits name tuple '" + k + "' that category " + category + " does not have; rerun ingest");
      }
    }
  }
  return v;
}

VectorizerModel fit_category_vectorizer(const CategoryView& view, const PipelineConfig& config) {
  const auto& schema = view.relation->schema();
  FitInput primary{&schema, {}};
  for (const auto& t : view.relation->tuples()) {
    if (view.split_of(t.key) != Split::Unseen) primary.tuples.push_back(&t);
  }
  // Relations reachable through foreign keys, breadth first.
  std::vector<FitInput> related;
  std::set<std::string> visited{schema.name};
  std::vector<const RelationSchema*> frontier{&schema};
  while (!frontier.empty()) {
    std::vector<const RelationSchema*> next;
    for (const auto* s : frontier) {
      for (const auto& fk : s->foreign_keys) {
        if (!visited.insert(fk.target_relation).second) continue;
        const auto* target = view.corpus->relation(fk.target_relation);
        if (!target) throw ValidationError("foreign key " + fk.name + " targets unknown relation " + fk.target_relation);
        FitInput in{&target->schema(), {}};
        for (const auto& t : target->tuples()) in.tuples.push_back(&t);
        related.push_back(std::move(in));
        next.push_back(&target->schema());
      }
    }
    frontier = std::move(next);
  }
  auto encoder = std::make_shared<HashingEncoder>(config.encoder_dim, config.encoder_seed);
  return fit_vectorizer(primary, related, encoder, config.fk_depth);
}

KeyedVectors raw_tuple_vectors(const VectorizerModel& model, const CategoryView& view, VectorizeDiagnostics* diag) {
  const auto& tuples = view.relation->tuples();
  KeyedVectors kv;
  kv.keys.reserve(tuples.size());
  for (const auto& t : tuples) kv.keys.push_back(t.key);
  kv.vectors.resize(tuples.size());
  std::vector<VectorizeDiagnostics> local(tuples.size());
  const auto lookup = view.lookup();
  parallel_for(tuples.size(), [&](std::size_t i) { kv.vectors[i] = model.vectorize_tuple(tuples[i], lookup, &local[i]); });
  if (diag) {
    for (const auto& d : local) diag->dangling_keys += d.dangling_keys;
  }
  return kv;
}

KeyedVectors raw_mention_vectors(const VectorizerModel& model, const CategoryView& view) {
  KeyedVectors kv;
  for (const auto* m : view.mentions) kv.keys.push_back(m->id);
  kv.vectors.resize(view.mentions.size());
  parallel_for(view.mentions.size(), [&](std::size_t i) { kv.vectors[i] = model.vectorize_mention(*view.mentions[i]); });
  return kv;
}

namespace {

std::unordered_map<std::string, std::size_t> key_index(const KeyedVectors& kv) {
  std::unordered_map<std::string, std::size_t> out;
  for (std::size_t i = 0; i < kv.keys.size(); ++i) out.emplace(kv.keys[i], i);
  return out;
}

}  // namespace

TrainedCategory train_category(const CategoryView& view, const KeyedVectors& raw_tuples,
                               const KeyedVectors& raw_mentions, const PipelineConfig& config) {
  config.validate();
  if (raw_tuples.vectors.empty() || raw_mentions.vectors.empty()) {
    throw ValidationError("category " + view.name() + " needs tuple and mention vectors to train");
  }
  std::vector<GoldLink> trainable, distractors;
  for (const auto& l : view.matches) {
    const auto s = view.split_of(l.tuple_key);
    if (s == Split::Train) trainable.push_back(l);
    else if (s == Split::Test) distractors.push_back(l);
  }
  if (trainable.empty()) {
    throw ValidationError("category " + view.name() + " has no matches for train-split entities");
  }
  std::set<std::pair<std::string, std::string>> gold;
  for (const auto& l : trainable) gold.insert({l.tuple_key, l.mention_id});

  const auto tuple_idx = key_index(raw_tuples);
  const auto mention_idx = key_index(raw_mentions);
  auto tuple_vec = [&](const std::string& k) -> const DenseVector& {
    auto it = tuple_idx.find(k);
    if (it == tuple_idx.end()) throw ValidationError("no vector for tuple '" + k + "'");
    return raw_tuples.vectors[it->second];
  };
  auto mention_vec = [&](const std::string& k) -> const DenseVector& {
    auto it = mention_idx.find(k);
    if (it == mention_idx.end()) throw ValidationError("no vector for mention '" + k + "'");
    return raw_mentions.vectors[it->second];
  };

  TrainedCategory out{make_embedder_pair(static_cast<std::size_t>(raw_tuples.vectors.front().size()),
                                         static_cast<std::size_t>(raw_mentions.vectors.front().size()), config.shape,
                                         config.margin, config.train_seed),
                      {},
                      {},
                      {}};
  out.adam = AdamState::for_pair(out.pair, config.adam);
  BatchSampler sampler(std::move(trainable), std::move(distractors), config.sampler,
                       splitmix64(config.train_seed ^ 0x73616d706c6572ULL));
  std::ostringstream log;
  TrainOptions options;
  options.batches = config.batches;
  options.seed = config.train_seed;
  options.log = &log;
  out.summary = train_pair(
      out.pair, out.adam, sampler,
      [&](const SampledBatch& ids) { return assemble_batch(ids, tuple_vec, mention_vec, gold); }, options);
  out.log = log.str();
  return out;
}

KeyedVectors embed_keyed(const DenseNet& net, const KeyedVectors& raw) {
  KeyedVectors out;
  out.source_fingerprint = raw.source_fingerprint;
  out.keys = raw.keys;
  out.vectors.resize(raw.vectors.size());
  for (std::size_t i = 0; i < raw.vectors.size(); ++i) {
    if (static_cast<std::size_t>(raw.vectors[i].size()) != net.input_dim()) {
      throw ValidationError("vector '" + raw.keys[i] + "' has dimension " + std::to_string(raw.vectors[i].size()) +
                            ", the network expects " + std::to_string(net.input_dim()));
    }
  }
  parallel_for(raw.vectors.size(), [&](std::size_t i) { out.vectors[i] = forward_embed(net, raw.vectors[i]); });
  return out;
}

RpForest build_keyed_forest(const KeyedVectors& joint, const ForestConfig& config) {
  return RpForest::build(joint.keys, joint.vectors, config);
}

CategoryLinks link_category(const CategoryView& view, const EmbedderPair& pair, const KeyedVectors& raw_tuples,
                            const KeyedVectors& raw_mentions, const RpForest& tuple_forest,
                            const RpForest& mention_forest, const PipelineConfig& config) {
  (void)view;
  CategoryLinks out;
  out.tuple_to_mentions.resize(raw_tuples.keys.size());
  out.mention_to_tuples.resize(raw_mentions.keys.size());
  parallel_for(raw_tuples.keys.size(), [&](std::size_t i) {
    out.tuple_to_mentions[i] = semantic_link(pair, mention_forest, raw_tuples.keys[i], raw_tuples.vectors[i],
                                             Direction::TupleToMentions, config.top_n, config.search_k);
  });
  parallel_for(raw_mentions.keys.size(), [&](std::size_t i) {
    out.mention_to_tuples[i] = semantic_link(pair, tuple_forest, raw_mentions.keys[i], raw_mentions.vectors[i],
                                             Direction::MentionToTuples, config.top_n, config.search_k);
  });
  return out;
}

CategoryLinks exact_links(const CategoryView& view) {
  const auto candidates = bootstrap_exact_match(*view.relation, view.mentions);
  return {rank_candidates(candidates, Direction::TupleToMentions),
          rank_candidates(candidates, Direction::MentionToTuples)};
}

CategoryEval evaluate_category(const CategoryView& view, const CategoryLinks& links) {
  CategoryEval ev;
  ev.category = view.name();
  ev.match_source = view.match_source;
  ev.tuples = view.relation->tuples().size();
  ev.mentions = view.mentions.size();

  std::set<std::pair<std::string, std::string>> t2m, m2t;
  std::map<std::string, std::string> mention_entity;
  for (const auto& l : view.matches) {
    t2m.insert({l.tuple_key, l.mention_id});
    m2t.insert({l.mention_id, l.tuple_key});
    mention_entity.emplace(l.mention_id, l.tuple_key);
  }

  auto evaluate = [&](const std::vector<LinkResult>& results, const std::vector<std::string>& anchors, Direction d,
                      const std::set<std::pair<std::string, std::string>>& gold, auto split_of_anchor) {
    std::map<std::string, const LinkResult*> by_anchor;
    for (const auto& r : results) by_anchor[r.anchor] = &r;
    std::map<Split, std::vector<LinkResult>> grouped;
    DirectionEval de;
    for (auto s : {Split::Train, Split::Test, Split::Unseen}) grouped[s];
    for (const auto& a : anchors) {
      const auto s = split_of_anchor(a);
      if (!s) {
        ++de.excluded;
        continue;
      }
      auto it = by_anchor.find(a);
      if (it != by_anchor.end()) {
        grouped[*s].push_back(*it->second);
      } else {
        LinkResult empty;
        empty.direction = d;
        empty.anchor = a;
        grouped[*s].push_back(std::move(empty));
      }
    }
    for (const auto& [s, rs] : grouped) de.splits[s] = evaluate_precision(rs, gold);
    return de;
  };

  std::vector<std::string> tuple_keys, mention_ids;
  for (const auto& t : view.relation->tuples()) tuple_keys.push_back(t.key);
  for (const auto* m : view.mentions) mention_ids.push_back(m->id);

  ev.tuple_to_mentions = evaluate(links.tuple_to_mentions, tuple_keys, Direction::TupleToMentions, t2m,
                                  [&](const std::string& k) { return view.split_of(k); });
  ev.mention_to_tuples = evaluate(links.mention_to_tuples, mention_ids, Direction::MentionToTuples, m2t,
                                  [&](const std::string& id) -> std::optional<Split> {
                                    auto it = mention_entity.find(id);
                                    if (it == mention_entity.end()) return std::nullopt;
                                    return view.split_of(it->second);
                                  });
  return ev;
}

RetrainResult retrain_cycle(const Corpus& corpus, const SplitManifest& splits, const PipelineConfig& config,
                            const StageTimer* timer, std::vector<std::string>* warnings) {
  config.validate();
  std::vector<std::string> categories;
  for (const auto& r : corpus.relations()) {
    if (!corpus.mentions_of(r.schema().name).empty()) categories.push_back(r.schema().name);
  }
  if (categories.empty()) throw ValidationError("corpus has no mentions to link");
  std::sort(categories.begin(), categories.end());

  RetrainResult result;
  for (const auto& category : categories) {
    auto clock = std::chrono::steady_clock::now();
    auto lap = [&](const char* stage) {
      const auto now = std::chrono::steady_clock::now();
      if (timer && timer->record) timer->record(category, stage, std::chrono::duration<double>(now - clock).count());
      clock = now;
    };

    const auto view = category_view(corpus, splits, category, warnings);
    VectorizeDiagnostics diag;
    auto vectorizer = fit_category_vectorizer(view, config);
    auto raw_tuples = raw_tuple_vectors(vectorizer, view, &diag);
    auto raw_mentions = raw_mention_vectors(vectorizer, view);
    if (diag.dangling_keys > 0 && warnings) {
      warnings->push_back("category " + category + ": " + std::to_string(diag.dangling_keys) +
                          " dangling foreign keys treated as absent");
    }
    lap("vectorize");

    auto trained = train_category(view, raw_tuples, raw_mentions, config);
    lap("train");

    auto joint_tuples = embed_keyed(trained.pair.net_r, raw_tuples);
    auto joint_mentions = embed_keyed(trained.pair.net_t, raw_mentions);
    lap("embed");

    auto tuple_forest = build_keyed_forest(joint_tuples, config.forest);
    auto mention_forest = build_keyed_forest(joint_mentions, config.forest);
    lap("index");

    auto links = config.strategy == Strategy::Exact
                     ? exact_links(view)
                     : link_category(view, trained.pair, raw_tuples, raw_mentions, tuple_forest, mention_forest, config);
    lap("link");

    auto eval = evaluate_category(view, links);
    eval.training = {trained.summary.steps, trained.summary.first_loss, trained.summary.last_loss,
                     trained.summary.entities_seen.size()};
    result.report.categories.push_back(std::move(eval));
    lap("evaluate");

    result.categories.push_back({category, std::move(vectorizer), std::move(raw_tuples), std::move(raw_mentions),
                                 std::move(trained), std::move(joint_tuples), std::move(joint_mentions),
                                 std::move(tuple_forest), std::move(mention_forest), std::move(links)});
  }
  return result;
}

}  // namespace entlink

#include "entlink/linker.hpp"
#include "entlink/synth.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <algorithm>
#include <sstream>

using namespace entlink;
using entlink::testing::random_unit;

namespace {

Relation company_relation() {
  RelationSchema s;
  s.name = "Company";
  s.attributes = {{"name", AttributeKind::Text, false}, {"employees", AttributeKind::Numeric, false}};
  s.name_attribute = "name";
  std::vector<TupleRecord> tuples;
  for (auto [key, name] : std::vector<std::pair<std::string, std::string>>{
           {"ibm", "IBM"}, {"hp", "HP"}, {"hpinc", "HP Inc."}, {"bigblue", "Big Blue"}}) {
    tuples.push_back({"Company", key, {Scalar(name), Scalar(10.0)}, {}});
  }
  return Relation(s, tuples);
}

TextMention mention(std::string id, std::string text, std::string sentence) {
  TextMention m;
  m.id = std::move(id);
  m.mention_text = std::move(text);
  m.sentence_text = std::move(sentence);
  m.span = {0, m.sentence_text.size()};
  m.entity_category = "Company";
  return m;
}

std::vector<std::size_t> oracle_dense_ranks(const std::vector<double>& sorted_scores) {
  std::vector<double> distinct = sorted_scores;
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  std::vector<std::size_t> ranks;
  for (double s : sorted_scores) {
    ranks.push_back(static_cast<std::size_t>(std::lower_bound(distinct.begin(), distinct.end(), s) - distinct.begin()) + 1);
  }
  return ranks;
}

PipelineConfig small_config() {
  PipelineConfig c;
  c.encoder_dim = 64;
  c.shape.relational_hidden = {32};
  c.shape.joint_dim = 16;
  c.batches = 60;
  c.margin = 0.1;
  c.adam.learning_rate = 1e-3;
  c.forest.trees = 4;
  c.forest.leaf_capacity = 8;
  return c;
}

}  // namespace

TEST_CASE("dense rank of the documented example") {
  std::vector<MatchCandidate> c{{"a", "m3", 0.3, Strategy::Semantic},
                                {"a", "m2", 0.1, Strategy::Semantic},
                                {"a", "m1", 0.1, Strategy::Semantic}};
  const auto r = rank_candidates(c);
  REQUIRE(r.size() == 1);
  CHECK(r[0].anchor == "a");
  REQUIRE(r[0].ranked.size() == 3);
  CHECK(r[0].ranked[0].id == "m1");
  CHECK(r[0].ranked[1].id == "m2");
  CHECK(r[0].ranked[2].id == "m3");
  CHECK(r[0].ranked[0].rank == 1);
  CHECK(r[0].ranked[1].rank == 1);
  CHECK(r[0].ranked[2].rank == 2);
}

TEST_CASE("dense rank agrees with a sort-based oracle") {
  Rng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng.index(25);
    const bool all_equal = trial % 10 == 0;
    std::vector<MatchCandidate> c;
    for (std::size_t i = 0; i < n; ++i) {
      const double s = all_equal ? 0.42 : static_cast<double>(rng.index(6)) / 5.0;
      c.push_back({"anchor", "m" + std::to_string(rng.index(1000)) + "_" + std::to_string(i), s, Strategy::Semantic});
    }
    const auto r = rank_candidates(c);
    REQUIRE(r.size() == 1);
    auto sorted = c;
    std::sort(sorted.begin(), sorted.end(), [](const auto& x, const auto& y) {
      return x.score != y.score ? x.score < y.score : x.mention_id < y.mention_id;
    });
    std::vector<double> scores;
    for (const auto& s : sorted) scores.push_back(s.score);
    const auto want = oracle_dense_ranks(scores);
    REQUIRE(r[0].ranked.size() == n);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(r[0].ranked[i].id == sorted[i].mention_id);
      CHECK(r[0].ranked[i].rank == want[i]);
      if (all_equal) CHECK(r[0].ranked[i].rank == 1);
    }
  }
}

TEST_CASE("rank_candidates groups by anchor in either direction") {
  std::vector<MatchCandidate> c{{"t2", "m1", 0.5, Strategy::Semantic},
                                {"t1", "m1", 0.2, Strategy::Semantic},
                                {"t1", "m2", 0.1, Strategy::Semantic}};
  const auto fwd = rank_candidates(c, Direction::TupleToMentions);
  REQUIRE(fwd.size() == 2);
  CHECK(fwd[0].anchor == "t1");
  CHECK(fwd[0].ranked[0].id == "m2");
  CHECK(fwd[1].anchor == "t2");
  const auto back = rank_candidates(c, Direction::MentionToTuples);
  REQUIRE(back.size() == 2);
  CHECK(back[0].anchor == "m1");
  CHECK(back[0].direction == Direction::MentionToTuples);
  CHECK(back[0].ranked[0].id == "t1");
  CHECK(back[0].ranked[1].id == "t2");
  CHECK(back[0].ranked[1].rank == 2);
  CHECK(rank_candidates({}).empty());
}

TEST_CASE("contiguous token containment") {
  const auto hay = word_tokens("Shares of HP Inc. rose");
  CHECK(contains_token_run(hay, word_tokens("HP")));
  CHECK(contains_token_run(hay, word_tokens("hp inc")));
  CHECK_FALSE(contains_token_run(hay, word_tokens("HP rose")));
  CHECK_FALSE(contains_token_run(word_tokens("HP said"), word_tokens("HP Inc.")));
  CHECK_FALSE(contains_token_run(hay, {}));
  CHECK_FALSE(contains_token_run(word_tokens("HPX"), word_tokens("HP")));
}

TEST_CASE("bootstrap exact match") {
  const auto rel = company_relation();
  const auto m1 = mention("m1", "IBM", "IBM reported strong earnings.");
  const auto m2 = mention("m2", "Big Blue", "Analysts at big blue were upbeat.");
  const auto m3 = mention("m3", "HP", "HP Inc. said revenue grew.");
  const auto m4 = mention("m4", "HP", "HP said nothing.");
  const std::vector<const TextMention*> ms{&m1, &m2, &m3, &m4};
  std::vector<std::string> warnings;
  const auto c = bootstrap_exact_match(rel, ms, &warnings);
  CHECK(warnings.empty());
  std::set<std::pair<std::string, std::string>> got;
  for (const auto& x : c) {
    got.insert({x.tuple_key, x.mention_id});
    CHECK(x.score == kSentinelScore);
    CHECK(x.strategy == Strategy::Exact);
  }
  const std::set<std::pair<std::string, std::string>> want{
      {"ibm", "m1"}, {"bigblue", "m2"}, {"hp", "m3"}, {"hpinc", "m3"}, {"hp", "m4"}};
  CHECK(got == want);
}

TEST_CASE("bootstrap without a text attribute warns and returns nothing") {
  RelationSchema s;
  s.name = "Numbers";
  s.attributes = {{"value", AttributeKind::Numeric, false}};
  const Relation rel(s, {{"Numbers", "n1", {Scalar(3.0)}, {}}});
  const auto m = mention("m", "3", "3 is a number");
  std::vector<std::string> warnings;
  CHECK(bootstrap_exact_match(rel, {&m}, &warnings).empty());
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("Numbers") != std::string::npos);
}

TEST_CASE("name attribute resolution") {
  RelationSchema s;
  s.name = "R";
  s.attributes = {{"x", AttributeKind::Numeric, false}, {"title", AttributeKind::Text, false},
                  {"label", AttributeKind::Text, false}};
  CHECK(name_attribute_of(s) == "title");
  s.name_attribute = "label";
  CHECK(name_attribute_of(s) == "label");
  s.attributes = {{"x", AttributeKind::Numeric, false}};
  s.name_attribute.clear();
  CHECK(name_attribute_of(s).empty());
}

TEST_CASE("precision at k") {
  auto ranked_list = [](const std::string& anchor, std::size_t gold_pos) {
    LinkResult r;
    r.anchor = anchor;
    for (std::size_t i = 0; i < 10; ++i) {
      r.ranked.push_back({i + 1 == gold_pos ? "gold" : "x" + std::to_string(i), 0.1 * i, i + 1, Strategy::Semantic});
    }
    return r;
  };
  const std::set<std::pair<std::string, std::string>> gold{{"a", "gold"}, {"b", "gold"}};

  auto top = evaluate_precision({ranked_list("a", 1)}, gold);
  CHECK(top.anchors == 1);
  CHECK(top.precision(0) == 1.0);
  CHECK(top.precision(1) == 1.0);
  CHECK(top.precision(2) == 1.0);

  auto seventh = evaluate_precision({ranked_list("a", 7)}, gold);
  CHECK(seventh.precision(0) == 0.0);
  CHECK(seventh.precision(1) == 0.0);
  CHECK(seventh.precision(2) == 1.0);

  auto mixed = evaluate_precision({ranked_list("a", 1), ranked_list("b", 11), ranked_list("c", 1)}, gold);
  CHECK(mixed.anchors == 2);
  CHECK(mixed.excluded == 1);
  CHECK(mixed.precision(0) == 0.5);
  CHECK(mixed.precision(2) == 0.5);

  const auto none = evaluate_precision({}, gold);
  CHECK(none.anchors == 0);
  CHECK(none.precision(0) == 0.0);
}

TEST_CASE("precision is monotone in k on random rankings") {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<LinkResult> results;
    std::set<std::pair<std::string, std::string>> gold;
    for (int a = 0; a < 8; ++a) {
      LinkResult r;
      r.anchor = "a" + std::to_string(a);
      for (std::size_t i = 0; i < 10; ++i) {
        r.ranked.push_back({"c" + std::to_string(rng.index(30)), 0.0, 1, Strategy::Semantic});
      }
      gold.insert({r.anchor, "c" + std::to_string(rng.index(30))});
      results.push_back(r);
    }
    const auto cell = evaluate_precision(results, gold);
    CHECK(cell.precision(0) <= cell.precision(1));
    CHECK(cell.precision(1) <= cell.precision(2));
  }
}

TEST_CASE("report table and json") {
  EvalReport report;
  CategoryEval c;
  c.category = "Building";
  c.match_source = "gold";
  for (auto s : {Split::Train, Split::Test, Split::Unseen}) {
    PrecisionCell cell;
    cell.anchors = 4;
    cell.hits = {4, 4, 4};
    c.tuple_to_mentions.splits[s] = cell;
    c.mention_to_tuples.splits[s] = cell;
  }
  report.categories.push_back(c);

  const auto table = emit_report(report, ReportFormat::Table);
  std::istringstream lines(table);
  std::vector<std::string> rows;
  for (std::string line; std::getline(lines, line);) {
    if (!trim(line).empty()) rows.push_back(line);
  }
  REQUIRE(rows.size() == 2);
  std::istringstream row(rows[1]);
  std::vector<std::string> cells;
  for (std::string tok; row >> tok;) cells.push_back(tok);
  REQUIRE(cells.size() == 10);
  CHECK(cells[0] == "Building");
  for (std::size_t i = 1; i < 10; ++i) CHECK(cells[i] == "1.00");
  CHECK(rows[0].find("test") < rows[0].find("train"));
  CHECK(rows[0].find("train") < rows[0].find("unseen"));

  const auto j = nlohmann::json::parse(emit_report(report, ReportFormat::Json));
  const auto back = report_from_json(j);
  CHECK(report_to_json(back) == j);

  const EvalReport empty;
  const auto empty_table = emit_report(empty, ReportFormat::Table);
  std::istringstream el(empty_table);
  std::size_t nonblank = 0;
  for (std::string line; std::getline(el, line);) nonblank += !trim(line).empty();
  CHECK(nonblank == 1);
  const auto ej = nlohmann::json::parse(emit_report(empty, ReportFormat::Json));
  CHECK(ej.at("categories").empty());
  CHECK(report_to_json(report_from_json(ej)) == ej);
}

TEST_CASE("report json round trip with random cells") {
  Rng rng(23);
  EvalReport report;
  for (int k = 0; k < 3; ++k) {
    CategoryEval c;
    c.category = "Cat" + std::to_string(k);
    c.match_source = k == 1 ? "bootstrap" : "gold";
    c.tuples = rng.index(100);
    c.mentions = rng.index(100);
    c.training = {rng.index(50), rng.uniform(), rng.uniform() / 3.0, rng.index(9)};
    for (auto s : {Split::Train, Split::Test, Split::Unseen}) {
      PrecisionCell cell;
      cell.anchors = rng.index(20);
      cell.excluded = rng.index(3);
      std::size_t h = 0;
      for (auto& x : cell.hits) x = h = std::min(cell.anchors, h + rng.index(4));
      c.tuple_to_mentions.splits[s] = cell;
      c.mention_to_tuples.splits[s] = cell;
    }
    report.categories.push_back(c);
  }
  const auto text = emit_report(report, ReportFormat::Json);
  const auto back = report_from_json(nlohmann::json::parse(text));
  CHECK(emit_report(back, ReportFormat::Json) == text);
  CHECK(emit_report(back, ReportFormat::Table) == emit_report(report, ReportFormat::Table));
  CHECK_THROWS_AS(report_from_json(nlohmann::json::parse("{\"version\": 99}")), ValidationError);
}

TEST_CASE("semantic link on a single-leaf forest matches brute force") {
  Rng rng(3);
  NetworkShape shape;
  shape.relational_hidden = {8};
  shape.joint_dim = 6;
  const auto pair = make_embedder_pair(5, 7, shape, 0.1, 11);
  std::vector<std::string> ids;
  std::vector<DenseVector> joint;
  for (int i = 0; i < 40; ++i) {
    ids.push_back("m" + std::to_string(i));
    joint.push_back(forward_embed(pair.net_t, random_unit(rng, 7)));
  }
  ForestConfig fc;
  fc.trees = 1;
  fc.leaf_capacity = 64;
  const auto forest = RpForest::build(ids, joint, fc);
  for (int q = 0; q < 10; ++q) {
    const DenseVector raw = random_unit(rng, 5);
    const auto link = semantic_link(pair, forest, "t", raw, Direction::TupleToMentions, 10);
    const auto want = brute_force_knn(ids, joint, forward_embed(pair.net_r, raw), 10);
    REQUIRE(link.ranked.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i) {
      CHECK(link.ranked[i].id == want[i].id);
      CHECK(link.ranked[i].score == want[i].score);
      CHECK(link.ranked[i].strategy == Strategy::Semantic);
    }
    CHECK(link.ranked.front().rank == 1);
  }
  CHECK_THROWS_AS(semantic_link(pair, forest, "t", random_unit(rng, 7), Direction::TupleToMentions, 3),
                  ValidationError);
}

TEST_CASE("link export is tab separated") {
  LinkResult r;
  r.anchor = "t1";
  r.ranked = {{"m1", 0.25, 1, Strategy::Semantic}, {"m2", 0.5, 2, Strategy::Semantic}};
  const auto tsv = link_results_to_tsv({r});
  std::istringstream in(tsv);
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  CHECK(header == "anchor\tcounterpart\tscore\trank\tstrategy");
  const auto cells = parse_delimited(first, '\t');
  REQUIRE(cells.size() == 1);
  CHECK(cells[0] == std::vector<std::string>{"t1", "m1", "0.25", "1", "semantic"});
}

TEST_CASE("pipeline config json") {
  const auto paper = paper_profile();
  CHECK(paper.margin == 0.001);
  CHECK(paper.shape.keep_prob == 0.75);
  CHECK(paper.adam.learning_rate == 1e-5);
  CHECK(paper.adam.decay_rate == 0.9);
  CHECK(paper.adam.decay_steps == 1000);
  CHECK(paper.forest.trees == 200);
  CHECK(paper.top_n == 10);
  CHECK(paper.shape.relational_hidden == std::vector<std::size_t>{512});
  CHECK(paper.shape.joint_dim == 256);

  const auto j = pipeline_config_to_json(small_config());
  const auto back = pipeline_config_from_json(j);
  CHECK(pipeline_config_to_json(back) == j);
  auto partial = nlohmann::json::parse(R"({"training": {"margin": 0.2}})");
  CHECK(pipeline_config_from_json(partial).margin == 0.2);
  CHECK(pipeline_config_from_json(partial).batches == PipelineConfig{}.batches);
  CHECK_THROWS_AS(pipeline_config_from_json(nlohmann::json::parse(R"({"training": {"margn": 1}})")),
                  ValidationError);
  CHECK_THROWS_AS(pipeline_config_from_json(nlohmann::json::parse(R"({"index": {"trees": 0}})")),
                  ValidationError);
}

TEST_CASE("synthetic corpus shape") {
  SynthConfig sc;
  sc.entities_per_category = 12;
  sc.mentions_per_entity = 4;
  sc.lexicalizations_per_entry = 3;
  const auto corpus = synth_corpus(sc);
  REQUIRE(corpus.relations().size() == 1);
  CHECK(corpus.linked_entities("Building").size() == 12);
  CHECK(corpus.mentions().size() == 48);
  CHECK(corpus.links().size() == 48);
  CHECK(synth_webnlg_xml(sc) == synth_webnlg_xml(sc));
  // Every mention sentence names its entity.
  for (const auto& l : corpus.links()) {
    const auto* m = corpus.mention(l.mention_id);
    REQUIRE(m != nullptr);
    CHECK(contains_token_run(word_tokens(m->sentence_text), word_tokens(m->mention_text)));
  }
}

TEST_CASE("retrain cycle keeps unseen entities out of training and is deterministic") {
  SynthConfig sc;
  sc.entities_per_category = 15;
  sc.mentions_per_entity = 4;
  const auto corpus = synth_corpus(sc);
  const auto splits = make_match_splits(corpus, SplitSpec{});
  const auto config = small_config();

  std::vector<std::string> stages;
  StageTimer timer{[&](const std::string&, const std::string& stage, double s) {
    CHECK(s >= 0.0);
    stages.push_back(stage);
  }};
  const auto a = retrain_cycle(corpus, splits, config, &timer);
  const auto b = retrain_cycle(corpus, splits, config);
  CHECK(emit_report(a.report, ReportFormat::Json) == emit_report(b.report, ReportFormat::Json));
  CHECK(std::find(stages.begin(), stages.end(), "train") != stages.end());

  REQUIRE(a.categories.size() == 1);
  const auto& art = a.categories[0];
  const auto& es = splits.categories.at("Building");
  for (const auto& u : es.unseen) CHECK(art.trained.summary.entities_seen.count(u) == 0);
  for (const auto& t : es.train) CHECK(art.trained.summary.entities_seen.count(t) == 1);
  CHECK(art.trained.summary.steps == config.batches);

  const auto& cat = a.report.categories.at(0);
  CHECK(cat.match_source == "gold");
  CHECK(cat.tuple_to_mentions.splits.at(Split::Train).anchors == es.train.size());
  CHECK(cat.tuple_to_mentions.splits.at(Split::Unseen).anchors == es.unseen.size());
  std::size_t mentions = 0;
  for (auto s : {Split::Train, Split::Test, Split::Unseen}) {
    const auto& cell = cat.tuple_to_mentions.splits.at(s);
    CHECK(cell.precision(0) <= cell.precision(1));
    CHECK(cell.precision(1) <= cell.precision(2));
    mentions += cat.mention_to_tuples.splits.at(s).anchors;
  }
  CHECK(mentions == corpus.mentions().size());
  CHECK(art.joint_mentions.keys.size() == corpus.mentions().size());
  CHECK(art.tuple_forest.size() == corpus.relations()[0].tuples().size());
}

TEST_CASE("exact strategy links evaluate against gold") {
  SynthConfig sc;
  sc.entities_per_category = 10;
  sc.mentions_per_entity = 3;
  const auto corpus = synth_corpus(sc);
  const auto splits = make_match_splits(corpus, SplitSpec{});
  const auto view = category_view(corpus, splits, "Building");
  const auto links = exact_links(view);
  CHECK(!links.tuple_to_mentions.empty());
  for (const auto& r : links.tuple_to_mentions) {
    for (const auto& c : r.ranked) {
      CHECK(c.rank == 1);
      CHECK(c.strategy == Strategy::Exact);
    }
  }
  const auto eval = evaluate_category(view, links);
  CHECK(eval.tuple_to_mentions.splits.at(Split::Train).precision(2) == 1.0);
}

TEST_CASE("no matches at all aborts with guidance") {
  std::vector<Relation> rels{company_relation()};
  std::vector<TextMention> ms{mention("m1", "Acme", "Acme hired staff."), mention("m2", "Zeta", "Zeta grew.")};
  const Corpus corpus(rels, ms, {});
  const auto splits = make_match_splits(corpus, SplitSpec{});
  CHECK(splits.categories.empty());
  try {
    retrain_cycle(corpus, splits, small_config());
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    const std::string what = e.what();
    CHECK(what.find("Company") != std::string::npos);
    CHECK(what.find("gold") != std::string::npos);
  }
}

TEST_CASE("bootstrap matches stand in for missing gold") {
  SynthConfig sc;
  sc.entities_per_category = 10;
  sc.mentions_per_entity = 3;
  const auto gold_corpus = synth_corpus(sc);
  std::vector<Relation> rels = gold_corpus.relations();
  const Corpus corpus(rels, gold_corpus.mentions(), {});
  const auto splits = make_match_splits(corpus, SplitSpec{});
  REQUIRE(splits.categories.count("Building") == 1);
  const auto view = category_view(corpus, splits, "Building");
  CHECK(view.match_source == "bootstrap");
  CHECK(view.matches.size() >= gold_corpus.links().size());
}

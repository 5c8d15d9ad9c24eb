#include "entlink/stages.hpp"

#include <charconv>
#include <chrono>
#include <cstdio>
#include <ostream>
#include <sstream>

namespace entlink {

namespace {

using json = nlohmann::json;

constexpr const char* kCorpus = "corpus.json";
constexpr const char* kSplits = "splits.json";

std::string art(const std::string& category, const std::string& name) {
  return Workdir::category_artifact(category, name);
}

json section(const PipelineConfig& c, std::initializer_list<const char*> keys) {
  const auto full = pipeline_config_to_json(c);
  json out = json::object();
  for (const char* k : keys) out[k] = full.at(k);
  return out;
}

std::uint64_t splits_settings(const ProjectConfig& c) {
  return settings_hash({{"seed", c.splits.seed},
                        {"unseen_fraction", c.splits.unseen_fraction},
                        {"test_fraction_of_seen", c.splits.test_fraction_of_seen}});
}
std::uint64_t fit_settings(const PipelineConfig& c) { return settings_hash(section(c, {"encoder", "vectorizer"})); }
std::uint64_t train_settings(const PipelineConfig& c) { return settings_hash(section(c, {"network", "training"})); }
std::uint64_t index_settings(const PipelineConfig& c) {
  return settings_hash({{"trees", c.forest.trees}, {"leaf_capacity", c.forest.leaf_capacity}, {"seed", c.forest.seed}});
}

json parse_json(const std::string& bytes, const std::string& what) {
  try {
    return json::parse(bytes);
  } catch (const json::parse_error& e) {
    throw ParseError(what + ": " + e.what(), e.byte);
  }
}

struct Ingested {
  Corpus corpus;
  SplitManifest splits;
  std::vector<std::string> categories;
};

Ingested load_ingested(StageContext& ctx) {
  Ingested in;
  in.corpus = corpus_from_json(parse_json(ctx.workdir.read(kCorpus, "ingest"), kCorpus));
  in.splits = splits_from_json(parse_json(ctx.workdir.read(kSplits, "ingest", splits_settings(ctx.config)), kSplits));
  for (const auto& r : in.corpus.relations()) {
    if (!in.corpus.mentions_of(r.schema().name).empty()) in.categories.push_back(r.schema().name);
  }
  std::sort(in.categories.begin(), in.categories.end());
  if (in.categories.empty()) throw ValidationError("corpus has no mentions to link");
  return in;
}

class Stopwatch {
 public:
  Stopwatch(StageContext& ctx, std::string stage) : ctx_(ctx), stage_(std::move(stage)) {}
  void lap(const std::string& category) {
    const auto now = std::chrono::steady_clock::now();
    ctx_.workdir.record_timing(stage_ + "/" + category, std::chrono::duration<double>(now - lap_).count());
    lap_ = now;
  }
  void done() {
    ctx_.workdir.record_timing(stage_,
                               std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count());
  }

 private:
  StageContext& ctx_;
  std::string stage_;
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
  std::chrono::steady_clock::time_point lap_ = start_;
};

VectorizerModel load_vectorizer(StageContext& ctx, const std::string& category) {
  const auto name = art(category, "vectorizer.json");
  return VectorizerModel::from_json(parse_json(ctx.workdir.read(name, "fit", fit_settings(ctx.config.pipeline)), name));
}

KeyedVectors load_vectors(StageContext& ctx, const std::string& category, const std::string& file,
                          const std::string& stage, std::optional<std::uint64_t> settings = std::nullopt) {
  return decode_vector_file(ctx.workdir.read(art(category, file), stage, settings));
}

Checkpoint load_model(StageContext& ctx, const std::string& category) {
  return decode_checkpoint(ctx.workdir.read(art(category, "model.ckpt"), "train", train_settings(ctx.config.pipeline)));
}

std::vector<LinkResult> parse_link_tsv(const std::string& text, Direction direction, const std::string& what) {
  std::vector<LinkResult> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 || line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      f.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (f.size() != 5) throw ParseError(what + ": line " + std::to_string(lineno) + " does not have 5 fields");
    RankedCounterpart c;
    c.id = f[1];
    const auto s = std::from_chars(f[2].data(), f[2].data() + f[2].size(), c.score);
    const auto r = std::from_chars(f[3].data(), f[3].data() + f[3].size(), c.rank);
    if (s.ec != std::errc() || r.ec != std::errc()) {
      throw ParseError(what + ": line " + std::to_string(lineno) + " has a bad score or rank");
    }
    c.strategy = strategy_from_string(f[4]);
    if (out.empty() || out.back().anchor != f[0]) out.push_back({direction, f[0], {}});
    out.back().ranked.push_back(std::move(c));
  }
  return out;
}

const LinkResult* find_anchor(const std::vector<LinkResult>& results, const std::string& anchor) {
  for (const auto& r : results) {
    if (r.anchor == anchor) return &r;
  }
  return nullptr;
}

}  // namespace

void stage_ingest(StageContext& ctx) {
  Stopwatch sw(ctx, "ingest");
  const auto corpus = load_corpus_sources(ctx.config.corpus, &ctx.warnings);
  const auto splits = make_match_splits(corpus, ctx.config.splits, &ctx.warnings);
  ctx.workdir.write(kCorpus, corpus_to_json(corpus).dump() + "\n", "ingest", {});
  ctx.workdir.write(kSplits, splits_to_json(splits).dump(2) + "\n", "ingest", {kCorpus}, splits_settings(ctx.config));
  ctx.out << "ingested " << corpus.relations().size() << " relations, " << corpus.mentions().size() << " mentions, "
          << corpus.links().size() << " gold links\n";
  for (const auto& [category, s] : splits.categories) {
    ctx.out << "  " << category << ": train " << s.train.size() << ", test " << s.test.size() << ", unseen "
            << s.unseen.size() << "\n";
  }
  sw.done();
}

void stage_fit(StageContext& ctx) {
  Stopwatch sw(ctx, "fit");
  const auto in = load_ingested(ctx);
  for (const auto& category : in.categories) {
    const auto view = category_view(in.corpus, in.splits, category, &ctx.warnings);
    const auto model = fit_category_vectorizer(view, ctx.config.pipeline);
    ctx.workdir.write(art(category, "vectorizer.json"), model.to_json().dump(2) + "\n", "fit", {kCorpus, kSplits},
                      fit_settings(ctx.config.pipeline));
    ctx.out << category << ": vectorizer fitted\n";
    sw.lap(category);
  }
  sw.done();
}

void stage_embed_tuples(StageContext& ctx) {
  Stopwatch sw(ctx, "embed-tuples");
  const auto in = load_ingested(ctx);
  for (const auto& category : in.categories) {
    const auto view = category_view(in.corpus, in.splits, category, &ctx.warnings);
    const auto model = load_vectorizer(ctx, category);
    VectorizeDiagnostics diag;
    const auto kv = raw_tuple_vectors(model, view, &diag);
    if (diag.dangling_keys > 0) {
      ctx.warnings.push_back("category " + category + ": " + std::to_string(diag.dangling_keys) +
                             " dangling foreign keys treated as absent");
    }
    ctx.workdir.write(art(category, "tuples.vec"), encode_vector_file(kv), "embed-tuples",
                      {kCorpus, art(category, "vectorizer.json")});
    ctx.out << category << ": " << kv.keys.size() << " tuple vectors\n";
    sw.lap(category);
  }
  sw.done();
}

void stage_embed_mentions(StageContext& ctx) {
  Stopwatch sw(ctx, "embed-mentions");
  const auto in = load_ingested(ctx);
  for (const auto& category : in.categories) {
    const auto view = category_view(in.corpus, in.splits, category, &ctx.warnings);
    const auto model = load_vectorizer(ctx, category);
    const auto kv = raw_mention_vectors(model, view);
    ctx.workdir.write(art(category, "mentions.vec"), encode_vector_file(kv), "embed-mentions",
                      {kCorpus, art(category, "vectorizer.json")});
    ctx.out << category << ": " << kv.keys.size() << " mention vectors\n";
    sw.lap(category);
  }
  sw.done();
}

void stage_train(StageContext& ctx) {
  Stopwatch sw(ctx, "train");
  const auto in = load_ingested(ctx);
  for (const auto& category : in.categories) {
    const auto view = category_view(in.corpus, in.splits, category, &ctx.warnings);
    const auto raw_t = load_vectors(ctx, category, "tuples.vec", "embed-tuples");
    const auto raw_m = load_vectors(ctx, category, "mentions.vec", "embed-mentions");
    auto trained = train_category(view, raw_t, raw_m, ctx.config.pipeline);
    const auto& s = trained.summary;
    const json extra = {{"category", category},
                        {"training",
                         {{"batches", s.steps},
                          {"first_loss", s.first_loss},
                          {"last_loss", s.last_loss},
                          {"entities_seen", s.entities_seen}}}};
    const std::vector<std::string> inputs{kSplits, art(category, "tuples.vec"), art(category, "mentions.vec")};
    const auto settings = train_settings(ctx.config.pipeline);
    ctx.workdir.write(art(category, "model.ckpt"), encode_checkpoint(trained.pair, &trained.adam, extra), "train",
                      inputs, settings);
    ctx.workdir.write(art(category, "train.log"), trained.log, "train", inputs, settings);
    ctx.out << category << ": " << s.steps << " batches, loss " << s.first_loss << " -> " << s.last_loss << "\n";
    sw.lap(category);
  }
  sw.done();
}

void stage_build_index(StageContext& ctx) {
  Stopwatch sw(ctx, "build-index");
  const auto in = load_ingested(ctx);
  const auto settings = index_settings(ctx.config.pipeline);
  for (const auto& category : in.categories) {
    const auto model = load_model(ctx, category);
    const auto raw_t = load_vectors(ctx, category, "tuples.vec", "embed-tuples");
    const auto raw_m = load_vectors(ctx, category, "mentions.vec", "embed-mentions");
    const auto joint_t = embed_keyed(model.pair.net_r, raw_t);
    const auto joint_m = embed_keyed(model.pair.net_t, raw_m);
    const auto ckpt = art(category, "model.ckpt");
    const auto tvec = art(category, "tuples.vec");
    const auto mvec = art(category, "mentions.vec");
    ctx.workdir.write(art(category, "tuples.joint.vec"), encode_vector_file(joint_t), "build-index", {ckpt, tvec});
    ctx.workdir.write(art(category, "mentions.joint.vec"), encode_vector_file(joint_m), "build-index", {ckpt, mvec});
    const auto tf = build_keyed_forest(joint_t, ctx.config.pipeline.forest);
    const auto mf = build_keyed_forest(joint_m, ctx.config.pipeline.forest);
    ctx.workdir.write(art(category, "tuples.idx"), tf.serialize(), "build-index", {art(category, "tuples.joint.vec")},
                      settings);
    ctx.workdir.write(art(category, "mentions.idx"), mf.serialize(), "build-index",
                      {art(category, "mentions.joint.vec")}, settings);
    ctx.out << category << ": indexed " << joint_t.keys.size() << " tuples, " << joint_m.keys.size()
            << " mentions\n";
    sw.lap(category);
  }
  sw.done();
}

void stage_link(StageContext& ctx, const LinkRequest& request) {
  Stopwatch sw(ctx, "link");
  const auto in = load_ingested(ctx);
  const auto strategy = request.strategy.value_or(ctx.config.pipeline.strategy);
  if (request.category &&
      std::find(in.categories.begin(), in.categories.end(), *request.category) == in.categories.end()) {
    throw ValidationError("unknown category '" + *request.category + "'");
  }
  if (request.anchor && !request.category && in.categories.size() > 1) {
    throw ValidationError("--anchor needs --category when the corpus has several categories");
  }
  bool anchor_found = false;
  for (const auto& category : in.categories) {
    if (request.category && *request.category != category) continue;
    const auto view = category_view(in.corpus, in.splits, category, &ctx.warnings);
    CategoryLinks links;
    std::vector<std::string> inputs{kCorpus, kSplits};
    if (strategy == Strategy::Exact) {
      links = exact_links(view);
    } else {
      const auto model = load_model(ctx, category);
      const auto raw_t = load_vectors(ctx, category, "tuples.vec", "embed-tuples");
      const auto raw_m = load_vectors(ctx, category, "mentions.vec", "embed-mentions");
      const auto settings = index_settings(ctx.config.pipeline);
      const auto dim = ctx.config.pipeline.shape.joint_dim;
      const auto tf = RpForest::deserialize(ctx.workdir.read(art(category, "tuples.idx"), "build-index", settings), dim);
      const auto mf =
          RpForest::deserialize(ctx.workdir.read(art(category, "mentions.idx"), "build-index", settings), dim);
      links = link_category(view, model.pair, raw_t, raw_m, tf, mf, ctx.config.pipeline);
      for (const char* f : {"model.ckpt", "tuples.vec", "mentions.vec", "tuples.idx", "mentions.idx"}) {
        inputs.push_back(art(category, f));
      }
    }
    ctx.workdir.write(art(category, "links.tuple_to_mentions.tsv"), link_results_to_tsv(links.tuple_to_mentions),
                      "link", inputs);
    ctx.workdir.write(art(category, "links.mention_to_tuples.tsv"), link_results_to_tsv(links.mention_to_tuples),
                      "link", inputs);
    if (request.anchor) {
      const auto& results =
          request.direction == Direction::TupleToMentions ? links.tuple_to_mentions : links.mention_to_tuples;
      if (const auto* r = find_anchor(results, *request.anchor)) {
        anchor_found = true;
        ctx.out << link_results_to_tsv({*r});
      }
    } else {
      ctx.out << category << ": linked " << links.tuple_to_mentions.size() << " tuples, "
              << links.mention_to_tuples.size() << " mentions (" << to_string(strategy) << ")\n";
    }
    sw.lap(category);
  }
  if (request.anchor && !anchor_found) {
    throw ValidationError("anchor '" + *request.anchor + "' has no " + std::string(to_string(request.direction)) +
                          " links");
  }
  sw.done();
}

void stage_eval(StageContext& ctx, ReportFormat format) {
  Stopwatch sw(ctx, "eval");
  const auto in = load_ingested(ctx);
  EvalReport report;
  std::vector<std::string> inputs{kCorpus, kSplits};
  for (const auto& category : in.categories) {
    const auto view = category_view(in.corpus, in.splits, category, &ctx.warnings);
    CategoryLinks links;
    const auto t2m = art(category, "links.tuple_to_mentions.tsv");
    const auto m2t = art(category, "links.mention_to_tuples.tsv");
    links.tuple_to_mentions = parse_link_tsv(ctx.workdir.read(t2m, "link"), Direction::TupleToMentions, t2m);
    links.mention_to_tuples = parse_link_tsv(ctx.workdir.read(m2t, "link"), Direction::MentionToTuples, m2t);
    inputs.push_back(t2m);
    inputs.push_back(m2t);
    auto eval = evaluate_category(view, links);
    const auto ckpt = art(category, "model.ckpt");
    if (ctx.workdir.has(ckpt)) {
      const auto header = load_model(ctx, category).header;
      const auto t = header.at("extra").value("training", json::object());
      if (!t.empty()) {
        eval.training = {t.at("batches").get<std::size_t>(), t.at("first_loss").get<double>(),
                         t.at("last_loss").get<double>(), t.at("entities_seen").size()};
      }
      inputs.push_back(ckpt);
    }
    report.categories.push_back(std::move(eval));
    sw.lap(category);
  }
  ctx.workdir.write("report.json", report_to_json(report).dump(2) + "\n", "eval", inputs);
  ctx.workdir.write("report.txt", report_to_table(report), "eval", inputs);
  ctx.out << emit_report(report, format);
  sw.done();
}

std::string stats_table(const std::vector<CategoryStats>& stats) {
  std::size_t width = 8;
  for (const auto& s : stats) width = std::max(width, s.category.size());
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s %9s %7s %9s %10s %7s %7s\n", static_cast<int>(width), "category", "instances",
                "tuples", "sentences", "sent/inst", "columns", "density");
  out += buf;
  for (const auto& s : stats) {
    std::snprintf(buf, sizeof buf, "%-*s %9zu %7zu %9zu %10.2f %7zu %7.2f\n", static_cast<int>(width),
                  s.category.c_str(), s.instances, s.tuples, s.sentences, s.sentences_per_instance, s.columns,
                  s.avg_tuple_density);
    out += buf;
  }
  return out;
}

void stage_stats(StageContext& ctx, const Corpus& corpus) { ctx.out << stats_table(corpus_stats(corpus)); }

void stage_pipeline(StageContext& ctx, ReportFormat format) {
  Stopwatch sw(ctx, "pipeline");
  stage_ingest(ctx);
  stage_fit(ctx);
  stage_embed_tuples(ctx);
  stage_embed_mentions(ctx);
  stage_train(ctx);
  stage_build_index(ctx);
  stage_link(ctx);
  stage_eval(ctx, format);
  sw.done();
}

}  // namespace entlink

// entlink: staged entity linking over a workdir.
#include "entlink/stages.hpp"
#include "entlink/synth.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace entlink;

namespace {

struct GlobalOptions {
  std::string workdir;
  std::string config;
  std::vector<std::string> corpus;
  std::string profile;
};

struct Overrides {
  std::optional<std::size_t> top_n;
};

ProjectConfig resolve_config(const GlobalOptions& g, const Overrides& o) {
  nlohmann::json j = nlohmann::json::object();
  fs::path base;
  if (!g.config.empty()) {
    try {
      j = nlohmann::json::parse(read_file(g.config));
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError("config " + g.config + ": " + e.what(), e.byte);
    }
    base = fs::path(g.config).parent_path();
  }
  if (!g.profile.empty()) j["profile"] = g.profile;
  auto c = project_config_from_json(j, base);
  if (!g.corpus.empty()) c.corpus = g.corpus;
  if (!g.workdir.empty()) c.workdir = g.workdir;
  if (c.workdir.empty()) c.workdir = "entlink-work";
  if (o.top_n) c.pipeline.top_n = *o.top_n;
  c.pipeline.validate();
  return c;
}

ReportFormat format_from_string(const std::string& s) {
  if (s == "json") return ReportFormat::Json;
  if (s == "table") return ReportFormat::Table;
  throw ValidationError("unknown format '" + s + "' (expected table or json)");
}

Direction direction_from_string(const std::string& s) {
  if (s == to_string(Direction::TupleToMentions)) return Direction::TupleToMentions;
  if (s == to_string(Direction::MentionToTuples)) return Direction::MentionToTuples;
  throw ValidationError("unknown direction '" + s + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Link text mentions to relational tuples through a trained joint embedding."};
  app.require_subcommand(1);
  GlobalOptions g;
  Overrides o;
  app.add_option("-w,--workdir", g.workdir, "Artifact directory (default: entlink-work)");
  app.add_option("-c,--config", g.config, "Project config JSON")->check(CLI::ExistingFile);
  app.add_option("--corpus", g.corpus, "WebNLG XML files or directories, or a corpus JSON");
  app.add_option("--profile", g.profile, "Default settings: desk or paper")->check(CLI::IsMember({"desk", "paper"}));

  SynthConfig synth;
  std::string synth_out = "synth.xml";
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic WebNLG-style benchmark with known links");
  synth_cmd->add_option("-o,--out", synth_out, "Output XML path");
  synth_cmd->add_option("--categories", synth.categories, "Category names")->delimiter(',');
  synth_cmd->add_option("--entities", synth.entities_per_category, "Entities per category");
  synth_cmd->add_option("--mentions", synth.mentions_per_entity, "Mentions per entity");
  synth_cmd->add_option("--seed", synth.seed, "Generator seed");

  auto* ingest = app.add_subcommand("ingest", "Parse the corpus and split entities");
  auto* fit = app.add_subcommand("fit", "Fit the per-category vectorizers");
  auto* embed_t = app.add_subcommand("embed-tuples", "Vectorize tuples");
  auto* embed_m = app.add_subcommand("embed-mentions", "Vectorize mentions");
  auto* train = app.add_subcommand("train", "Train the joint embedding");
  auto* index = app.add_subcommand("build-index", "Embed both sides and build the forests");

  std::string strategy, direction = "tuple_to_mentions", category, anchor;
  auto* link = app.add_subcommand("link", "Rank counterparts for every tuple and mention");
  link->add_option("--strategy", strategy, "semantic or exact")->check(CLI::IsMember({"semantic", "exact"}));
  link->add_option("--category", category, "Only this category");
  link->add_option("--anchor", anchor, "Print the ranking of one tuple key or mention id");
  link->add_option("--direction", direction, "tuple_to_mentions or mention_to_tuples")
      ->check(CLI::IsMember({"tuple_to_mentions", "mention_to_tuples"}));
  link->add_option("--top-n", o.top_n, "Counterparts per anchor");

  std::string format = "table";
  auto* eval = app.add_subcommand("eval", "Precision@k report per category and split");
  eval->add_option("--format", format, "table or json")->check(CLI::IsMember({"table", "json"}));
  auto* stats = app.add_subcommand("stats", "Corpus statistics per category");
  auto* pipeline = app.add_subcommand("pipeline", "Run every stage in order");
  pipeline->add_option("--format", format, "table or json")->check(CLI::IsMember({"table", "json"}));
  auto* show = app.add_subcommand("config", "Print the effective configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth_cmd->parsed()) {
      write_file(synth_out, synth_webnlg_xml(synth));
      std::cout << "wrote " << synth_out << "\n";
      return 0;
    }
    const auto config = resolve_config(g, o);
    if (show->parsed()) {
      std::cout << project_config_to_json(config).dump(2) << "\n";
      return 0;
    }
    if (stats->parsed()) {
      std::vector<std::string> warnings;
      Workdir wd(config.workdir);
      StageContext ctx{wd, config, std::cout, {}};
      if (!config.corpus.empty()) {
        stage_stats(ctx, load_corpus_sources(config.corpus, &warnings));
      } else {
        stage_stats(ctx, corpus_from_json(nlohmann::json::parse(wd.read("corpus.json", "ingest"))));
      }
      for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
      return 0;
    }

    WorkdirLock lock(config.workdir);
    Workdir wd(config.workdir);
    StageContext ctx{wd, config, std::cout, {}};
    if (ingest->parsed()) stage_ingest(ctx);
    else if (fit->parsed()) stage_fit(ctx);
    else if (embed_t->parsed()) stage_embed_tuples(ctx);
    else if (embed_m->parsed()) stage_embed_mentions(ctx);
    else if (train->parsed()) stage_train(ctx);
    else if (index->parsed()) stage_build_index(ctx);
    else if (link->parsed()) {
      LinkRequest req;
      if (!strategy.empty()) req.strategy = strategy_from_string(strategy);
      if (!category.empty()) req.category = category;
      if (!anchor.empty()) req.anchor = anchor;
      req.direction = direction_from_string(direction);
      stage_link(ctx, req);
    } else if (eval->parsed()) stage_eval(ctx, format_from_string(format));
    else if (pipeline->parsed()) stage_pipeline(ctx, format_from_string(format));
    for (const auto& w : ctx.warnings) std::cerr << "warning: " << w << "\n";
    return 0;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

#pragma once

#include "entlink/workdir.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace entlink {

/// Shared state of one command run against a workdir.
struct StageContext {
  Workdir& workdir;
  const ProjectConfig& config;
  std::ostream& out;
  std::vector<std::string> warnings;
};

/// Reads the corpus sources, writes corpus.json and splits.json.
void stage_ingest(StageContext& ctx);
/// Fits one vectorizer per category.
void stage_fit(StageContext& ctx);
/// Raw tuple vectors per category.
void stage_embed_tuples(StageContext& ctx);
/// Raw mention vectors per category.
void stage_embed_mentions(StageContext& ctx);
/// Trains the network pair per category; writes model.ckpt and train.log.
void stage_train(StageContext& ctx);
/// Joint embeddings of both sides and one forest per side.
void stage_build_index(StageContext& ctx);

struct LinkRequest {
  std::optional<Strategy> strategy;  // defaults to the configured one
  std::optional<std::string> category;
  std::optional<std::string> anchor;  // print only this anchor's ranking
  Direction direction = Direction::TupleToMentions;
};
/// Writes link tables for both directions per category.
void stage_link(StageContext& ctx, const LinkRequest& request = {});
/// Writes report.json and report.txt; prints the report in `format`.
void stage_eval(StageContext& ctx, ReportFormat format = ReportFormat::Table);
/// Prints per-category corpus statistics.
void stage_stats(StageContext& ctx, const Corpus& corpus);
/// Every stage in order.
void stage_pipeline(StageContext& ctx, ReportFormat format = ReportFormat::Table);

std::string stats_table(const std::vector<CategoryStats>& stats);

}  // namespace entlink

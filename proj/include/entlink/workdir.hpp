#pragma once

#include "entlink/corpus.hpp"
#include "entlink/linker.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace entlink {

/// Everything a workdir run needs: where the data is, how to split it and
/// the pipeline settings.
struct ProjectConfig {
  std::vector<std::string> corpus;  // WebNLG XML files or directories, or one corpus JSON
  std::string workdir;
  std::string profile = "desk";  // "desk" or "paper"
  SplitSpec splits;
  PipelineConfig pipeline;
};

PipelineConfig profile_defaults(const std::string& profile);
/// Relative corpus paths resolve against `base_dir`.
ProjectConfig project_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
nlohmann::json project_config_to_json(const ProjectConfig& c);
ProjectConfig load_project_config(const std::filesystem::path& path);

/// Reads every source into one corpus. A single `.json` file is taken as a
/// saved corpus; anything else as WebNLG XML (directories are walked for
/// `*.xml` in sorted order).
Corpus load_corpus_sources(const std::vector<std::string>& sources, std::vector<std::string>* warnings = nullptr);

/// Raised when an artifact no longer matches what it was derived from.
class StaleArtifactError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Exclusive advisory lock on `<workdir>/.lock`, released on destruction or
/// process exit.
class WorkdirLock {
 public:
  explicit WorkdirLock(const std::filesystem::path& workdir);
  ~WorkdirLock();
  WorkdirLock(const WorkdirLock&) = delete;
  WorkdirLock& operator=(const WorkdirLock&) = delete;

 private:
  int fd_ = -1;
};

/// Artifact store with a manifest recording, for every artifact, its content
/// hash, the stage that wrote it, and the hashes of the artifacts and
/// settings it was derived from.
///
/// Layout:
///   corpus.json splits.json report.json report.txt manifest.json timings.json
///   <category>/vectorizer.json tuples.vec mentions.vec model.ckpt train.log
///   <category>/tuples.joint.vec mentions.joint.vec tuples.idx mentions.idx
///   <category>/links.tuple_to_mentions.tsv links.mention_to_tuples.tsv
class Workdir {
 public:
  explicit Workdir(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path path(const std::string& artifact) const { return root_ / artifact; }
  static std::string category_artifact(const std::string& category, const std::string& name);

  /// Writes bytes atomically (temp file then rename) and records them.
  void write(const std::string& artifact, std::string_view bytes, const std::string& stage,
             const std::vector<std::string>& inputs, std::uint64_t settings_hash = 0);
  /// Reads an artifact after checking it is present, unmodified, derived
  /// from the current versions of its inputs and, when given, produced with
  /// the same settings. Errors name the stage to rerun.
  std::string read(const std::string& artifact, const std::string& producing_stage,
                   std::optional<std::uint64_t> settings_hash = std::nullopt) const;
  bool has(const std::string& artifact) const;

  void record_timing(const std::string& stage, double seconds);
  void save_manifest() const;

 private:
  struct Entry {
    std::string stage;
    std::uint64_t hash = 0;
    std::uint64_t settings = 0;
    std::map<std::string, std::uint64_t> inputs;
  };
  std::filesystem::path root_;
  std::map<std::string, Entry> manifest_;
  nlohmann::json timings_;
};

std::uint64_t settings_hash(const nlohmann::json& j);

}  // namespace entlink

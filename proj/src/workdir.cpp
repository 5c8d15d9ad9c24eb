#include "entlink/workdir.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>

namespace entlink {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

PipelineConfig profile_defaults(const std::string& profile) {
  if (profile == "desk") return PipelineConfig{};
  if (profile == "paper") return paper_profile();
  throw ValidationError("unknown profile '" + profile + "' (expected desk or paper)");
}

ProjectConfig project_config_from_json(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw ValidationError("project config must be a JSON object");
  ProjectConfig c;
  try {
    c.profile = j.value("profile", std::string("desk"));
    json pipeline = json::object();
    for (const auto& [k, v] : j.items()) {
      if (k == "profile") continue;
      if (k == "corpus") {
        std::vector<std::string> paths = v.is_string() ? std::vector<std::string>{v.get<std::string>()}
                                                        : v.get<std::vector<std::string>>();
        for (auto& p : paths) {
          if (!base_dir.empty() && fs::path(p).is_relative()) p = (base_dir / p).lexically_normal().string();
        }
        c.corpus = std::move(paths);
      } else if (k == "workdir") {
        auto p = fs::path(v.get<std::string>());
        if (!base_dir.empty() && p.is_relative()) p = (base_dir / p).lexically_normal();
        c.workdir = p.string();
      } else if (k == "splits") {
        for (const auto& [sk, sv] : v.items()) {
          if (sk == "seed") c.splits.seed = sv.get<std::uint64_t>();
          else if (sk == "unseen_fraction") c.splits.unseen_fraction = sv.get<double>();
          else if (sk == "test_fraction_of_seen") c.splits.test_fraction_of_seen = sv.get<double>();
          else throw ValidationError("config: unknown key 'splits." + sk + "'");
        }
      } else {
        pipeline[k] = v;
      }
    }
    c.pipeline = pipeline_config_from_json(pipeline, profile_defaults(c.profile));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  c.splits.validate();
  return c;
}

json project_config_to_json(const ProjectConfig& c) {
  json j = pipeline_config_to_json(c.pipeline);
  j["profile"] = c.profile;
  j["corpus"] = c.corpus;
  j["workdir"] = c.workdir;
  j["splits"] = {{"seed", c.splits.seed},
                 {"unseen_fraction", c.splits.unseen_fraction},
                 {"test_fraction_of_seen", c.splits.test_fraction_of_seen}};
  return j;
}

ProjectConfig load_project_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path.string()));
  } catch (const json::parse_error& e) {
    throw ParseError("config " + path.string() + ": " + e.what(), e.byte);
  }
  return project_config_from_json(j, path.parent_path());
}

Corpus load_corpus_sources(const std::vector<std::string>& sources, std::vector<std::string>* warnings) {
  if (sources.empty()) throw ValidationError("no corpus given; pass --corpus or set \"corpus\" in the config");
  if (sources.size() == 1 && fs::path(sources[0]).extension() == ".json") {
    try {
      return corpus_from_json(json::parse(read_file(sources[0])));
    } catch (const json::parse_error& e) {
      throw ParseError(sources[0] + ": " + e.what(), e.byte);
    } catch (const json::exception& e) {
      throw ValidationError(sources[0] + ": " + e.what());
    }
  }
  std::vector<fs::path> files;
  for (const auto& s : sources) {
    const fs::path p(s);
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::recursive_directory_iterator(p)) {
        if (e.is_regular_file() && e.path().extension() == ".xml") found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else if (fs::exists(p)) {
      files.push_back(p);
    } else {
      throw ValidationError("corpus source not found: " + s);
    }
  }
  if (files.empty()) throw ValidationError("no .xml files under the given corpus paths");
  CorpusBuilder builder;
  for (const auto& f : files) {
    WebnlgDocument doc;
    try {
      doc = parse_webnlg_document(read_file(f.string()));
    } catch (const ParseError& e) {
      throw ParseError(f.string() + ": " + e.what());
    }
    if (warnings) {
      for (const auto& r : doc.rejected) warnings->push_back(f.filename().string() + ": rejected entry " + r);
    }
    builder.add(doc);
  }
  return builder.build();
}

// ---------------------------------------------------------------------------
// Lock

WorkdirLock::WorkdirLock(const fs::path& workdir) {
  fs::create_directories(workdir);
  const auto path = (workdir / ".lock").string();
  fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) throw Error("cannot open " + path + ": " + std::strerror(errno));
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw Error("workdir " + workdir.string() + " is in use by another entlink process");
  }
}

WorkdirLock::~WorkdirLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

// ---------------------------------------------------------------------------
// Workdir

std::uint64_t settings_hash(const json& j) { return fnv1a64(j.dump()); }

namespace {

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t unhex(const std::string& s) {
  std::size_t used = 0;
  const auto v = std::stoull(s, &used, 16);
  if (used != s.size()) throw std::invalid_argument(s);
  return v;
}

void write_atomic(const fs::path& path, std::string_view bytes) {
  fs::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  write_file(tmp, bytes);
  fs::rename(tmp, path);
}

}  // namespace

Workdir::Workdir(fs::path root) : root_(std::move(root)) {
  fs::create_directories(root_);
  const auto mpath = root_ / "manifest.json";
  if (fs::exists(mpath)) {
    try {
      const auto j = json::parse(read_file(mpath.string()));
      if (j.value("format", std::string()) != "entlink-manifest" || j.value("version", 0) != 1) {
        throw FormatError("not an entlink-manifest v1 document");
      }
      for (const auto& [name, e] : j.at("artifacts").items()) {
        Entry entry;
        entry.stage = e.at("stage").get<std::string>();
        entry.hash = unhex(e.at("hash").get<std::string>());
        entry.settings = unhex(e.at("settings").get<std::string>());
        for (const auto& [in, h] : e.at("inputs").items()) entry.inputs[in] = unhex(h.get<std::string>());
        manifest_[name] = std::move(entry);
      }
    } catch (const json::exception& e) {
      throw FormatError(mpath.string() + " is unreadable (" + e.what() + "); remove the workdir and rerun");
    } catch (const std::invalid_argument&) {
      throw FormatError(mpath.string() + " holds a malformed hash; remove the workdir and rerun");
    }
  }
  const auto tpath = root_ / "timings.json";
  timings_ = json::object();
  if (fs::exists(tpath)) {
    try {
      timings_ = json::parse(read_file(tpath.string()));
    } catch (const json::exception&) {
      timings_ = json::object();
    }
  }
}

std::string Workdir::category_artifact(const std::string& category, const std::string& name) {
  std::string dir;
  for (char c : category) {
    dir += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
  }
  if (dir.empty()) dir = "_";
  return dir + "/" + name;
}

bool Workdir::has(const std::string& artifact) const {
  return manifest_.count(artifact) && fs::exists(path(artifact));
}

void Workdir::write(const std::string& artifact, std::string_view bytes, const std::string& stage,
                    const std::vector<std::string>& inputs, std::uint64_t settings) {
  Entry e;
  e.stage = stage;
  e.hash = fnv1a64(bytes);
  e.settings = settings;
  for (const auto& in : inputs) {
    auto it = manifest_.find(in);
    if (it == manifest_.end()) throw Error("internal: input " + in + " of " + artifact + " is not recorded");
    e.inputs[in] = it->second.hash;
  }
  write_atomic(path(artifact), bytes);
  manifest_[artifact] = std::move(e);
  save_manifest();
}

std::string Workdir::read(const std::string& artifact, const std::string& producing_stage,
                          std::optional<std::uint64_t> settings) const {
  if (!has(artifact)) {
    throw StaleArtifactError("missing " + artifact + " in " + root_.string() + "; run `entlink " + producing_stage +
                             "` first");
  }
  auto bytes = read_file(path(artifact).string());
  const auto& e = manifest_.at(artifact);
  if (e.hash != fnv1a64(bytes)) {
    throw StaleArtifactError(artifact + " was modified after `" + e.stage + "` wrote it; rerun `entlink " +
                             producing_stage + "`");
  }
  if (settings && *settings != e.settings) {
    throw StaleArtifactError(artifact + " was produced with different settings; rerun `entlink " + producing_stage +
                             "`");
  }
  for (const auto& [in, h] : e.inputs) {
    auto it = manifest_.find(in);
    if (it == manifest_.end() || it->second.hash != h) {
      throw StaleArtifactError(artifact + " is stale: " + in + " changed since `" + e.stage +
                               "` ran; rerun `entlink " + producing_stage + "`");
    }
  }
  return bytes;
}

void Workdir::record_timing(const std::string& stage, double seconds) {
  timings_[stage] = seconds;
  write_atomic(root_ / "timings.json", timings_.dump(2) + "\n");
}

void Workdir::save_manifest() const {
  json arts = json::object();
  for (const auto& [name, e] : manifest_) {
    json inputs = json::object();
    for (const auto& [in, h] : e.inputs) inputs[in] = hex(h);
    arts[name] = {{"stage", e.stage}, {"hash", hex(e.hash)}, {"settings", hex(e.settings)}, {"inputs", inputs}};
  }
  const json j = {{"format", "entlink-manifest"}, {"version", 1}, {"artifacts", arts}};
  write_atomic(root_ / "manifest.json", j.dump(2) + "\n");
}

}  // namespace entlink

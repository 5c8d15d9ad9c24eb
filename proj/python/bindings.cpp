#include "entlink/stages.hpp"
#include "entlink/synth.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <sstream>

namespace py = pybind11;
using namespace entlink;

namespace {

py::object to_python(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

nlohmann::json from_python(const py::object& o) {
  if (o.is_none()) return nlohmann::json::object();
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

ProjectConfig project_config(const py::object& config, const std::vector<std::string>& corpus,
                             const std::string& workdir) {
  auto c = project_config_from_json(from_python(config));
  if (!corpus.empty()) c.corpus = corpus;
  if (!workdir.empty()) c.workdir = workdir;
  if (c.workdir.empty()) throw ValidationError("workdir is required");
  return c;
}

py::dict stats_row(const CategoryStats& s) {
  py::dict d;
  d["category"] = s.category;
  d["instances"] = s.instances;
  d["tuples"] = s.tuples;
  d["sentences"] = s.sentences;
  d["sentences_per_instance"] = s.sentences_per_instance;
  d["columns"] = s.columns;
  d["density"] = s.avg_tuple_density;
  return d;
}

}  // namespace

PYBIND11_MODULE(_entlink, m) {
  m.doc() = "Entity linking between text mentions and relational tuples";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());

  m.def(
      "synth_xml",
      [](std::vector<std::string> categories, std::size_t entities, std::size_t mentions, std::uint64_t seed) {
        SynthConfig c;
        c.categories = std::move(categories);
        c.entities_per_category = entities;
        c.mentions_per_entity = mentions;
        c.seed = seed;
        return synth_webnlg_xml(c);
      },
      py::arg("categories") = std::vector<std::string>{"Building"}, py::arg("entities") = 30,
      py::arg("mentions") = 10, py::arg("seed") = 0, "WebNLG-style XML with known links.");

  m.def(
      "corpus_stats",
      [](const std::vector<std::string>& sources) {
        py::list out;
        for (const auto& s : corpus_stats(load_corpus_sources(sources))) out.append(stats_row(s));
        return out;
      },
      py::arg("sources"), "Per-category statistics of WebNLG XML files or directories.");

  m.def(
      "dense_rank",
      [](const std::vector<double>& scores) {
        std::vector<RankedHit> hits;
        for (std::size_t i = 0; i < scores.size(); ++i) hits.push_back({std::to_string(i), scores[i]});
        std::stable_sort(hits.begin(), hits.end(),
                         [](const RankedHit& a, const RankedHit& b) { return a.score < b.score; });
        const auto r = dense_rank("q", Direction::TupleToMentions, hits, Strategy::Semantic);
        std::vector<std::size_t> ranks(scores.size());
        for (const auto& c : r.ranked) ranks[std::stoul(c.id)] = c.rank;
        return ranks;
      },
      py::arg("scores"), "Dense rank of each score, ascending, ties shared.");

  py::class_<HashingEncoder>(m, "HashingEncoder")
      .def(py::init<std::size_t, std::uint64_t>(), py::arg("dim") = 256, py::arg("seed") = 0)
      .def_property_readonly("dim", &HashingEncoder::dim)
      .def("encode", [](const HashingEncoder& e, const std::string& text) { return e.encode(text); });

  py::class_<RpForest>(m, "RpForest")
      .def_static(
          "build",
          [](std::vector<std::string> ids, const Matrix& items, std::size_t trees, std::size_t leaf_capacity,
             std::uint64_t seed) {
            if (static_cast<std::size_t>(items.rows()) != ids.size()) {
              throw ValidationError("one row per id is required");
            }
            std::vector<DenseVector> rows;
            for (Eigen::Index i = 0; i < items.rows(); ++i) rows.emplace_back(items.row(i).transpose());
            return RpForest::build(std::move(ids), std::move(rows), ForestConfig{trees, leaf_capacity, seed});
          },
          py::arg("ids"), py::arg("items"), py::arg("trees") = 16, py::arg("leaf_capacity") = 16, py::arg("seed") = 0)
      .def(
          "query",
          [](const RpForest& f, const DenseVector& q, std::size_t n, std::size_t search_k) {
            std::vector<std::pair<std::string, double>> out;
            for (auto& h : f.query(q, n, search_k)) out.emplace_back(std::move(h.id), h.score);
            return out;
          },
          py::arg("query"), py::arg("n") = 10, py::arg("search_k") = 0)
      .def("__len__", &RpForest::size)
      .def_property_readonly("dim", &RpForest::dim)
      .def("serialize", [](const RpForest& f) { return py::bytes(f.serialize()); })
      .def_static("deserialize", [](const py::bytes& b) { return RpForest::deserialize(std::string(b)); });

  m.def(
      "run_pipeline",
      [](const py::object& config, const std::vector<std::string>& corpus, const std::string& workdir) {
        const auto c = project_config(config, corpus, workdir);
        WorkdirLock lock(c.workdir);
        Workdir wd(c.workdir);
        std::ostringstream log;
        StageContext ctx{wd, c, log, {}};
        {
          py::gil_scoped_release release;
          stage_pipeline(ctx, ReportFormat::Json);
        }
        return to_python(nlohmann::json::parse(read_file(wd.path("report.json").string())));
      },
      py::arg("config") = py::none(), py::arg("corpus") = std::vector<std::string>{}, py::arg("workdir") = "",
      "Runs every stage into `workdir` and returns the evaluation report.");

  m.def(
      "report_table",
      [](const py::object& report) { return report_to_table(report_from_json(from_python(report))); },
      py::arg("report"), "Fixed-width table of a report.");

  m.def(
      "default_config", [](const std::string& profile) { return to_python(pipeline_config_to_json(profile_defaults(profile))); },
      py::arg("profile") = "desk");
}

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "gnnrag/analysis.hpp"
#include "gnnrag/error.hpp"
#include "gnnrag/eval.hpp"
#include "gnnrag/io.hpp"
#include "gnnrag/pipeline.hpp"
#include "gnnrag/prompt.hpp"
#include "gnnrag/retriever.hpp"

namespace py = pybind11;
using namespace gnnrag;

namespace {

// nlohmann::json -> Python objects through the json module keeps the binding small.
py::object to_python(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

PipelineConfig make_config(const std::optional<std::filesystem::path>& config_file,
                           const std::map<std::string, std::string>& settings,
                           const std::optional<std::filesystem::path>& out, std::optional<std::uint64_t> seed,
                           std::optional<int> jobs) {
  PipelineConfig c = config_file ? load_config(*config_file) : PipelineConfig{};
  for (const auto& [k, v] : settings) c.set(k, v);
  if (out) c.out = *out;
  if (seed) c.seed = *seed;
  if (jobs) c.jobs = *jobs;
  return c;
}

py::dict eval_dict(const EvalReport& r) {
  py::dict slices;
  for (const auto& s : r.slices) slices[py::str(s.name)] = to_python(to_json(s));
  py::list rows;
  for (const auto& row : r.rows) rows.append(to_python(to_json(row)));
  py::dict d;
  d["slices"] = slices;
  d["rows"] = rows;
  return d;
}

}  // namespace

PYBIND11_MODULE(_gnnrag, m) {
  m.doc() = "GNN-RAG core bindings";

  static py::exception<Error> base(m, "Error");
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<ServiceError>(m, "ServiceError", base.ptr());

  m.def("normalize_answer", &normalize_answer);
  m.def("hit", [](const std::string& generation, const GoldAliases& gold) { return hit(generation, gold); });
  m.def("h1", [](const std::vector<std::string>& p, const GoldAliases& gold) { return h1(p, gold); });
  m.def("f1", [](const std::vector<std::string>& p, const GoldAliases& gold) { return f1(p, gold); });
  m.def("median", &median);
  m.def("count_tokens", [](const std::string& text) { return count_tokens(text); });
  m.def("parse_answers", [](const std::string& text) { return parse_answers(text); });
  m.def("build_prompt",
        [](const std::string& paths_text, const std::string& question, const std::string& tmpl) {
          return build_prompt(paths_text, question, prompt_template_from_string(tmpl)).rendered;
        },
        py::arg("paths_text"), py::arg("question"), py::arg("template") = "A");
  m.def("select_candidates",
        [](const std::vector<double>& probs, double threshold) {
          Eigen::VectorXd p = Eigen::Map<const Eigen::VectorXd>(probs.data(), static_cast<Eigen::Index>(probs.size()));
          return select_candidates(p, threshold);
        },
        py::arg("probabilities"), py::arg("threshold") = 0.95);

  py::class_<KnowledgeGraph>(m, "KnowledgeGraph")
      .def(py::init([](std::vector<std::string> entities, std::vector<std::string> relations,
                       const std::vector<std::tuple<std::string, std::string, std::string>>& triples) {
             std::unordered_map<std::string, EntityId> e;
             std::unordered_map<std::string, RelationId> r;
             for (std::size_t i = 0; i < entities.size(); ++i) e.emplace(entities[i], static_cast<EntityId>(i));
             for (std::size_t i = 0; i < relations.size(); ++i) r.emplace(relations[i], static_cast<RelationId>(i));
             std::vector<Triple> ts;
             for (const auto& [h, rel, t] : triples) {
               if (!e.count(h) || !e.count(t) || !r.count(rel)) throw VocabularyError(h + " " + rel + " " + t);
               ts.push_back({e.at(h), r.at(rel), e.at(t)});
             }
             return KnowledgeGraph(std::move(entities), std::move(relations), std::move(ts));
           }),
           py::arg("entities"), py::arg("relations"), py::arg("triples"))
      .def_property_readonly("num_entities", &KnowledgeGraph::num_entities)
      .def_property_readonly("num_triples", [](const KnowledgeGraph& kg) { return kg.forward_triples().size(); })
      .def("entity_id", [](const KnowledgeGraph& kg, const std::string& s) { return kg.entity_id(s); })
      .def("shortest_paths",
           [](const KnowledgeGraph& kg, const std::vector<std::string>& sources, const std::string& target,
              std::size_t cap) {
             std::vector<EntityId> seeds, all(kg.num_entities());
             for (const auto& s : sources) seeds.push_back(kg.entity_id(s));
             for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<EntityId>(i);
             const auto sg = induce_subgraph(kg, all, seeds);
             std::vector<std::string> out;
             for (const auto& p : shortest_paths(sg, seeds, kg.entity_id(target), cap)) out.push_back(verbalize(p, kg));
             return out;
           },
           py::arg("sources"), py::arg("target"), py::arg("cap") = 10,
           "Verbalized shortest paths over the whole graph.");
  m.def("load_kg", [](const std::filesystem::path& dir) {
    return load_kg(dir / "triples.tsv", dir / "entities.txt", dir / "relations.txt");
  });

  m.def("theorem_campaign",
        [](std::size_t instances, std::uint64_t seed, int jobs) {
          return to_python(to_json(theorem_campaign(instances, seed, jobs)));
        },
        py::arg("instances") = 100, py::arg("seed") = 0, py::arg("jobs") = 1);

  py::class_<Pipeline>(m, "Pipeline")
      .def(py::init([](std::optional<std::filesystem::path> config, std::map<std::string, std::string> settings,
                       std::optional<std::filesystem::path> out, std::optional<std::uint64_t> seed,
                       std::optional<int> jobs) { return Pipeline(make_config(config, settings, out, seed, jobs)); }),
           py::arg("config") = py::none(), py::arg("settings") = std::map<std::string, std::string>{},
           py::arg("out") = py::none(), py::arg("seed") = py::none(), py::arg("jobs") = py::none())
      .def_property_readonly("config_hash", &Pipeline::config_hash)
      .def_property_readonly("config", [](const Pipeline& p) { return to_python(p.config().to_json()); })
      .def("synth",
           [](Pipeline& p) {
             const auto d = p.cmd_synth();
             return d.questions.size();
           },
           py::call_guard<py::gil_scoped_release>())
      .def("subgraph", &Pipeline::cmd_subgraph, py::call_guard<py::gil_scoped_release>())
      .def("train",
           [](Pipeline& p, bool secondary) {
             TrainSummary s;
             {
               py::gil_scoped_release release;
               s = p.cmd_train(secondary);
             }
             py::dict d;
             d["best_epoch"] = s.best_epoch;
             d["last_epoch"] = s.last_epoch;
             d["best_val_h1"] = s.best_val_h1;
             d["checkpoint"] = s.checkpoint.string();
             return d;
           },
           py::arg("secondary") = false)
      .def("retrieve",
           [](Pipeline& p, const std::string& mode) {
             std::vector<RetrievalResult> rs;
             {
               py::gil_scoped_release release;
               rs = p.cmd_retrieve(retrieval_mode_from_string(mode));
             }
             py::list out;
             for (const auto& r : rs) out.append(to_python(to_json(r, p.kg())));
             return out;
           },
           py::arg("mode") = "gnn")
      .def("answer",
           [](Pipeline& p, const std::string& mode) {
             std::vector<AnswerRecord> rs;
             {
               py::gil_scoped_release release;
               rs = p.cmd_answer(retrieval_mode_from_string(mode));
             }
             py::list out;
             for (const auto& a : rs) {
               py::dict d;
               d["id"] = a.id;
               d["response"] = a.response;
               d["answers"] = a.answers;
               d["llm_calls"] = a.llm_calls;
               out.append(d);
             }
             return out;
           },
           py::arg("mode") = "gnn")
      .def("eval",
           [](Pipeline& p, const std::string& mode) {
             EvalReport r;
             {
               py::gil_scoped_release release;
               r = p.cmd_eval(retrieval_mode_from_string(mode));
             }
             return eval_dict(r);
           },
           py::arg("mode") = "gnn")
      .def("theorem", [](Pipeline& p) { return to_python(to_json(p.cmd_theorem())); })
      .def("gnn_hits_at_1", &Pipeline::gnn_hits_at_1, py::arg("split") = "test", py::arg("secondary") = false);
}

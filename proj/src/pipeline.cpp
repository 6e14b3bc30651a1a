#include "gnnrag/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <functional>
#include <mutex>

#include <CLI11.hpp>

#include "gnnrag/error.hpp"
#include "gnnrag/io.hpp"
#include "gnnrag/parallel.hpp"
#include "gnnrag/prompt.hpp"

namespace gnnrag {

namespace fs = std::filesystem;

std::string_view to_string(RetrievalMode m) {
  switch (m) {
    case RetrievalMode::Gnn: return "gnn";
    case RetrievalMode::Llm: return "llm";
    case RetrievalMode::Ra: return "ra";
    case RetrievalMode::Ensemble: return "ensemble";
  }
  return "gnn";
}

RetrievalMode retrieval_mode_from_string(std::string_view s) {
  for (auto m : {RetrievalMode::Gnn, RetrievalMode::Llm, RetrievalMode::Ra, RetrievalMode::Ensemble}) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("unknown retrieval mode '" + std::string(s) + "' (expected gnn, llm, ra or ensemble)");
}

namespace {

std::ostream* g_log = nullptr;
std::mutex g_log_mutex;

void log(const std::string& msg) {
  if (!g_log) return;
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  localtime_r(&now, &tm);
  char stamp[16];
  std::strftime(stamp, sizeof stamp, "%H:%M:%S", &tm);
  std::lock_guard lock(g_log_mutex);
  *g_log << '[' << stamp << "] " << msg << '\n' << std::flush;
}

template <typename T>
T parse_number(std::string_view key, std::string_view v) {
  T out{};
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("bad value '" + std::string(v) + "' for " + std::string(key));
  }
  return out;
}

double parse_double(std::string_view key, std::string_view v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(std::string(v), &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError("bad value '" + std::string(v) + "' for " + std::string(key));
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("bad value '" + std::string(v) + "' for " + std::string(key) + " (expected true or false)");
}

using Setter = std::function<void(PipelineConfig&, std::string_view, std::string_view)>;

const std::map<std::string, Setter, std::less<>>& setters() {
  using C = PipelineConfig;
  static const std::map<std::string, Setter, std::less<>> table = [] {
    std::map<std::string, Setter, std::less<>> t;
    auto str = [&](const char* key, std::string C::*m) {
      t[key] = [m](C& c, std::string_view, std::string_view v) { c.*m = std::string(v); };
    };
    str("data.triples", &C::triples);
    str("data.entities", &C::entities);
    str("data.relations", &C::relations);
    str("data.train", &C::train);
    str("data.dev", &C::dev);
    str("data.test", &C::test);
    str("data.relation_paths", &C::relation_paths);
    str("data.embeddings", &C::embeddings);
    str("data.embeddings_b", &C::embeddings_b);
    str("data.split", &C::split);
    t["data.dir"] = [](C& c, std::string_view, std::string_view v) { c.data_dir = fs::path(v); };

    t["subgraph.m"] = [](C& c, auto k, auto v) { c.subgraph.m = parse_number<std::size_t>(k, v); };
    t["subgraph.alpha"] = [](C& c, auto k, auto v) { c.subgraph.alpha = parse_double(k, v); };
    t["subgraph.epsilon"] = [](C& c, auto k, auto v) { c.subgraph.epsilon = parse_double(k, v); };

    t["gnn.layers"] = [](C& c, auto k, auto v) { c.gnn.layers = parse_number<int>(k, v); };
    t["gnn.hidden"] = [](C& c, auto k, auto v) { c.gnn.hidden = parse_number<int>(k, v); };
    t["gnn.instructions"] = [](C& c, auto k, auto v) { c.gnn.instructions = parse_number<int>(k, v); };
    t["gnn.learning_rate"] = [](C& c, auto k, auto v) { c.gnn.learning_rate = parse_double(k, v); };
    t["gnn.epochs"] = [](C& c, auto k, auto v) { c.gnn.epochs = parse_number<int>(k, v); };
    t["gnn.batch_size"] = [](C& c, auto k, auto v) { c.gnn.batch_size = parse_number<int>(k, v); };
    t["gnn.use_bias"] = [](C& c, auto k, auto v) { c.gnn.use_bias = parse_bool(k, v); };

    t["retriever.threshold"] = [](C& c, auto k, auto v) { c.retriever.threshold = parse_double(k, v); };
    t["retriever.path_cap"] = [](C& c, auto k, auto v) { c.retriever.path_cap = parse_number<std::size_t>(k, v); };
    t["retriever.fanout_cap"] = [](C& c, auto k, auto v) {
      c.retriever.fanout_cap = parse_number<std::size_t>(k, v);
    };

    t["llm.template"] = [](C& c, auto, auto v) { c.llm.template_id = prompt_template_from_string(v); };
    t["llm.stub"] = [](C& c, auto, auto v) { c.llm.stub = stub_mode_from_string(v); };
    t["llm.fixed_answer"] = [](C& c, auto, auto v) { c.llm.fixed_answer = std::string(v); };
    t["llm.fixtures"] = [](C& c, auto, auto v) { c.llm.fixtures = fs::path(v); };
    t["llm.record"] = [](C& c, auto k, auto v) { c.llm.record = parse_bool(k, v); };
    t["llm.concurrency"] = [](C& c, auto k, auto v) { c.llm.concurrency = parse_number<std::size_t>(k, v); };

    t["theorem.instances"] = [](C& c, auto k, auto v) { c.theorem_instances = parse_number<std::size_t>(k, v); };

    t["synth.num_entities"] = [](C& c, auto k, auto v) { c.synth.num_entities = parse_number<std::size_t>(k, v); };
    t["synth.num_questions"] = [](C& c, auto k, auto v) {
      c.synth.num_questions = parse_number<std::size_t>(k, v);
    };
    t["synth.max_hops"] = [](C& c, auto k, auto v) { c.synth.max_hops = parse_number<int>(k, v); };
    t["synth.relations_per_level"] = [](C& c, auto k, auto v) {
      c.synth.relations_per_level = parse_number<std::size_t>(k, v);
    };
    t["synth.distractor_relations"] = [](C& c, auto k, auto v) {
      c.synth.distractor_relations = parse_number<std::size_t>(k, v);
    };
    t["synth.edge_probability"] = [](C& c, auto k, auto v) { c.synth.edge_probability = parse_double(k, v); };
    t["synth.distractor_edges_per_entity"] = [](C& c, auto k, auto v) {
      c.synth.distractor_edges_per_entity = parse_double(k, v);
    };
    t["synth.multi_entity_fraction"] = [](C& c, auto k, auto v) {
      c.synth.multi_entity_fraction = parse_double(k, v);
    };
    t["synth.llm_path_accuracy"] = [](C& c, auto k, auto v) { c.synth.llm_path_accuracy = parse_double(k, v); };
    t["synth.max_answers"] = [](C& c, auto k, auto v) { c.synth.max_answers = parse_number<std::size_t>(k, v); };

    t["run.seed"] = [](C& c, auto k, auto v) { c.seed = parse_number<std::uint64_t>(k, v); };
    t["run.jobs"] = [](C& c, auto k, auto v) { c.jobs = parse_number<int>(k, v); };
    t["run.out"] = [](C& c, auto, auto v) { c.out = fs::path(v); };
    t["run.resume"] = [](C& c, auto k, auto v) { c.resume = parse_bool(k, v); };
    return t;
  }();
  return table;
}

std::string_view split_file(const PipelineConfig& c, const std::string& split) {
  if (split == "train") return c.train;
  if (split == "dev") return c.dev;
  if (split == "test") return c.test;
  throw ConfigError("unknown split '" + split + "' (expected train, dev or test)");
}

}  // namespace

void PipelineConfig::set(std::string_view key, std::string_view value) {
  const auto& t = setters();
  const auto it = t.find(key);
  if (it == t.end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
  it->second(*this, key, value);
}

void PipelineConfig::validate() const {
  gnn.validate();
  if (subgraph.m == 0) throw ConfigError("subgraph.m must be positive");
  if (!(subgraph.alpha > 0.0 && subgraph.alpha < 1.0)) throw ConfigError("subgraph.alpha must lie in (0, 1)");
  if (!(subgraph.epsilon > 0.0)) throw ConfigError("subgraph.epsilon must be positive");
  if (!(retriever.threshold > 0.0 && retriever.threshold <= 1.0)) {
    throw ConfigError("retriever.threshold must lie in (0, 1]");
  }
  if (retriever.path_cap == 0) throw ConfigError("retriever.path_cap must be positive");
  if (retriever.fanout_cap == 0) throw ConfigError("retriever.fanout_cap must be positive");
  if (llm.concurrency == 0) throw ConfigError("llm.concurrency must be positive");
  if (jobs < 1) throw ConfigError("run.jobs must be positive");
  if (split != "train" && split != "dev" && split != "test") throw ConfigError("data.split must be train, dev or test");
}

nlohmann::json PipelineConfig::to_json() const {
  return {
      {"data",
       {{"triples", triples},
        {"entities", entities},
        {"relations", relations},
        {"train", train},
        {"dev", dev},
        {"test", test},
        {"relation_paths", relation_paths},
        {"embeddings", embeddings},
        {"embeddings_b", embeddings_b},
        {"split", split}}},
      {"subgraph", {{"m", subgraph.m}, {"alpha", subgraph.alpha}, {"epsilon", subgraph.epsilon}}},
      {"gnn",
       {{"layers", gnn.layers},
        {"hidden", gnn.hidden},
        {"instructions", gnn.instructions},
        {"learning_rate", gnn.learning_rate},
        {"epochs", gnn.epochs},
        {"batch_size", gnn.batch_size},
        {"use_bias", gnn.use_bias}}},
      {"retriever",
       {{"threshold", retriever.threshold},
        {"path_cap", retriever.path_cap},
        {"fanout_cap", retriever.fanout_cap}}},
      {"llm",
       {{"template", to_string(llm.template_id)},
        {"stub", to_string(llm.stub)},
        {"fixed_answer", llm.fixed_answer},
        {"fixtures", llm.fixtures.filename().string()}}},
      {"theorem", {{"instances", theorem_instances}}},
      {"synth",
       {{"num_entities", synth.num_entities},
        {"num_questions", synth.num_questions},
        {"max_hops", synth.max_hops},
        {"relations_per_level", synth.relations_per_level},
        {"distractor_relations", synth.distractor_relations},
        {"edge_probability", synth.edge_probability},
        {"distractor_edges_per_entity", synth.distractor_edges_per_entity},
        {"multi_entity_fraction", synth.multi_entity_fraction},
        {"max_answers", synth.max_answers},
        {"llm_path_accuracy", synth.llm_path_accuracy}}},
      {"seed", seed},
  };
}

std::string PipelineConfig::hash() const { return sha256_hex(to_json().dump()).substr(0, 16); }

PipelineConfig load_config(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config file " + file.string());
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigTOML().from_config(in);
  } catch (const CLI::Error& e) {
    throw ConfigError(file.string() + ": " + e.what());
  }
  PipelineConfig c;
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;
    if (item.inputs.size() != 1) throw ConfigError(file.string() + ": " + item.fullname() + " needs one value");
    c.set(item.fullname(), item.inputs.front());
  }
  const auto base = file.parent_path();
  if (c.data_dir.is_relative()) c.data_dir = base / c.data_dir;
  if (!c.llm.fixtures.empty() && c.llm.fixtures.is_relative()) c.llm.fixtures = base / c.llm.fixtures;
  return c;
}

void set_log_stream(std::ostream* stream) { g_log = stream; }

Pipeline::Pipeline(PipelineConfig config) : config_(std::move(config)) {
  config_.validate();
  config_.gnn.seed = config_.seed;
  config_.synth.seed = config_.seed;
  hash_ = config_.hash();
}

const KnowledgeGraph& Pipeline::kg() {
  if (!kg_) {
    const auto& c = config_;
    kg_ = load_kg(c.data_dir / c.triples, c.data_dir / c.entities, c.data_dir / c.relations);
    log("loaded KG: " + std::to_string(kg_->num_entities()) + " entities, " +
        std::to_string(kg_->forward_triples().size()) + " triples");
  }
  return *kg_;
}

const std::vector<Question>& Pipeline::questions(const std::string& split) {
  auto it = questions_.find(split);
  if (it != questions_.end()) return it->second;
  const auto file = config_.data_dir / split_file(config_, split);
  std::vector<Question> qs;
  if (fs::exists(file)) qs = load_questions(file, kg());
  std::sort(qs.begin(), qs.end(), [](const Question& a, const Question& b) { return a.id < b.id; });
  return questions_[split] = std::move(qs);
}

const EmbeddingTable& Pipeline::table(bool secondary) {
  auto& slot = tables_[secondary ? 1 : 0];
  if (slot) return *slot;
  const auto& source = secondary ? config_.embeddings_b : config_.embeddings;
  if (source.rfind("hash:", 0) == 0) {
    const auto dim = parse_number<std::size_t>(secondary ? "data.embeddings_b" : "data.embeddings", source.substr(5));
    std::vector<Question> all;
    for (const char* s : {"train", "dev", "test"}) {
      const auto& qs = questions(s);
      all.insert(all.end(), qs.begin(), qs.end());
    }
    slot = std::make_unique<EmbeddingTable>(make_hash_table(kg(), all, dim));
  } else {
    slot = std::make_unique<EmbeddingTable>(load_embeddings(config_.data_dir / source, kg()));
  }
  return *slot;
}

fs::path Pipeline::subgraph_file(const std::string& split) const {
  return config_.out / ("subgraphs-" + split + ".jsonl");
}
fs::path Pipeline::checkpoint_file(bool secondary) const {
  return config_.out / (secondary ? "model-b.ckpt" : "model-a.ckpt");
}
fs::path Pipeline::train_log_file(bool secondary) const {
  return config_.out / (secondary ? "train-log-b.jsonl" : "train-log-a.jsonl");
}
fs::path Pipeline::retrieval_file(RetrievalMode mode) const {
  return config_.out / ("retrieval-" + std::string(to_string(mode)) + ".jsonl");
}
fs::path Pipeline::answers_file(RetrievalMode mode) const {
  return config_.out / ("answers-" + std::string(to_string(mode)) + ".jsonl");
}
fs::path Pipeline::eval_dir(RetrievalMode mode) const {
  return config_.out / ("eval-" + std::string(to_string(mode)));
}

const std::vector<Subgraph>& Pipeline::subgraphs(const std::string& split) {
  auto it = subgraphs_.find(split);
  if (it != subgraphs_.end()) return it->second;
  const auto file = subgraph_file(split);
  if (!fs::exists(file)) throw DataError("missing " + file.string() + "; run the subgraph command first");
  const auto& qs = questions(split);
  auto loaded = load_subgraphs(file, kg(), qs);
  std::map<std::string, Subgraph> by_id;
  for (auto& sg : loaded) by_id[sg.origin] = std::move(sg);
  std::vector<Subgraph> aligned;
  for (const auto& q : qs) {
    auto found = by_id.find(q.id);
    if (found == by_id.end()) throw DataError(file.string() + " has no subgraph for question " + q.id);
    aligned.push_back(std::move(found->second));
  }
  return subgraphs_[split] = std::move(aligned);
}

void Pipeline::cmd_subgraph() {
  fs::create_directories(config_.out);
  const auto& graph = kg();
  bool any = false;
  for (const char* split : {"train", "dev", "test"}) {
    const auto& qs = questions(split);
    if (qs.empty()) continue;
    any = true;
    std::vector<Subgraph> out(qs.size());
    std::atomic<std::size_t> done{0};
    parallel_for(qs.size(), config_.jobs, [&](std::size_t i) {
      out[i] = extract_subgraph(graph, qs[i].entities, config_.subgraph, qs[i].id);
      const auto n = ++done;
      if (n % 100 == 0 || n == qs.size()) {
        log(std::string(split) + ": " + std::to_string(n) + "/" + std::to_string(qs.size()) + " subgraphs");
      }
    });
    save_subgraphs(out, graph, subgraph_file(split), hash_);
    subgraphs_[split] = std::move(out);
  }
  if (!any) throw DataError("no question files found under " + config_.data_dir.string());
}

std::vector<TrainingExample> Pipeline::examples(const std::string& split) {
  const auto& qs = questions(split);
  std::vector<TrainingExample> out;
  if (qs.empty()) return out;
  const auto& sgs = subgraphs(split);
  for (std::size_t i = 0; i < qs.size(); ++i) out.push_back({&sgs[i], &qs[i]});
  return out;
}

TrainSummary Pipeline::cmd_train(bool secondary) {
  fs::create_directories(config_.out);
  const auto train_set = examples("train");
  if (train_set.empty()) throw DataError("the train split is empty");
  const auto val_set = examples("dev");
  const auto& tbl = table(secondary);

  const auto ckpt = checkpoint_file(secondary);
  const auto log_file = train_log_file(secondary);
  TrainOptions opt;
  opt.jobs = config_.jobs;
  GnnModel init;
  if (config_.resume && fs::exists(ckpt)) {
    init = load_checkpoint(ckpt);
    if (init.embed_dim() != tbl.dim()) throw ConfigError("checkpoint dimension does not match the embeddings");
    auto& c = init.config();
    c.epochs = config_.gnn.epochs;
    c.learning_rate = config_.gnn.learning_rate;
    c.batch_size = config_.gnn.batch_size;
    if (fs::exists(log_file)) {
      for (const auto& line : read_lines(log_file)) {
        if (!line.empty()) opt.start_epoch = std::max(opt.start_epoch, json::parse(line).at("epoch").get<int>());
      }
    }
    log("resuming from epoch " + std::to_string(opt.start_epoch));
  } else {
    init = GnnModel(config_.gnn, tbl.dim());
    write_file(log_file, "");
  }

  std::ofstream log_out(log_file, std::ios::app);
  opt.on_epoch = [&](const EpochLog& e) {
    json j{{"epoch", e.epoch}, {"loss", e.loss}, {"val_h1", e.val_h1}, {"skipped", e.skipped},
           {"config_hash", hash_}};
    log_out << j.dump() << '\n' << std::flush;
    char buf[96];
    std::snprintf(buf, sizeof buf, "epoch %d loss %.4f val_h1 %.3f", e.epoch, e.loss, e.val_h1);
    log(buf);
  };
  auto result = train(std::move(init), train_set, val_set, tbl, opt);
  save_checkpoint(result.model, ckpt);
  models_[secondary ? 1 : 0] = std::make_unique<GnnModel>(result.model);

  TrainSummary s;
  s.best_epoch = result.best_epoch;
  s.last_epoch = result.log.empty() ? opt.start_epoch : result.log.back().epoch;
  for (const auto& e : result.log) {
    if (e.epoch == result.best_epoch) s.best_val_h1 = e.val_h1;
  }
  s.checkpoint = ckpt;
  write_file(config_.out / (secondary ? "model-b.json" : "model-a.json"),
             json{{"config_hash", hash_},
                  {"best_epoch", s.best_epoch},
                  {"last_epoch", s.last_epoch},
                  {"best_val_h1", s.best_val_h1},
                  {"checkpoint_sha256", file_sha256(ckpt)}}
                     .dump(2) +
                 "\n");
  return s;
}

GnnModel& Pipeline::model(bool secondary) {
  auto& slot = models_[secondary ? 1 : 0];
  if (!slot) {
    const auto file = checkpoint_file(secondary);
    if (!fs::exists(file)) {
      throw DataError("missing " + file.string() + "; run the train command" + (secondary ? " with --mode b" : ""));
    }
    slot = std::make_unique<GnnModel>(load_checkpoint(file));
  }
  return *slot;
}

double Pipeline::gnn_hits_at_1(const std::string& split, bool secondary) {
  const auto ex = examples(split);
  return hits_at_1(model(secondary), ex, table(secondary), config_.jobs);
}

std::vector<RetrievalResult> Pipeline::cmd_retrieve(RetrievalMode mode) {
  fs::create_directories(config_.out);
  const auto& graph = kg();
  const auto& qs = questions(config_.split);
  if (qs.empty()) throw DataError("the " + config_.split + " split is empty");

  auto run_gnn = [&](bool secondary) {
    const auto& sgs = subgraphs(config_.split);
    const auto& m = model(secondary);
    const auto& tbl = table(secondary);
    std::vector<RetrievalResult> out(qs.size());
    parallel_for(qs.size(), config_.jobs, [&](std::size_t i) {
      out[i] = retrieve_gnn(m, sgs[i], qs[i], tbl, graph, config_.retriever,
                            secondary ? PathSource::GnnB : PathSource::GnnA);
    });
    return out;
  };
  auto run_llm = [&] {
    const auto file = config_.data_dir / config_.relation_paths;
    if (!fs::exists(file)) throw DataError("missing relation paths file " + file.string());
    const auto specs = load_relation_paths(file, graph);
    std::vector<RetrievalResult> out(qs.size());
    for (std::size_t i = 0; i < qs.size(); ++i) {
      const auto it = specs.find(qs[i].id);
      const std::vector<RelationPathSpec> none;
      // One beam-search generation per question.
      out[i] = retrieve_llm(graph, qs[i], it == specs.end() ? none : it->second, 1, config_.retriever);
    }
    return out;
  };
  auto merge = [&](const std::vector<RetrievalResult>& a, const std::vector<RetrievalResult>& b) {
    std::vector<RetrievalResult> out;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const RetrievalResult pair[] = {a[i], b[i]};
      out.push_back(augment(pair, graph));
    }
    return out;
  };

  std::vector<RetrievalResult> results;
  switch (mode) {
    case RetrievalMode::Gnn: results = run_gnn(false); break;
    case RetrievalMode::Llm: results = run_llm(); break;
    case RetrievalMode::Ra: results = merge(run_gnn(false), run_llm()); break;
    case RetrievalMode::Ensemble: results = merge(run_gnn(false), run_gnn(true)); break;
  }
  std::vector<json> records;
  for (const auto& r : results) {
    auto j = to_json(r, graph);
    j["config_hash"] = hash_;
    records.push_back(std::move(j));
  }
  write_jsonl(retrieval_file(mode), records);
  log("wrote " + std::to_string(records.size()) + " retrieval records (" + std::string(to_string(mode)) + ")");
  return results;
}

std::vector<RetrievalResult> Pipeline::load_retrieval(RetrievalMode mode) {
  const auto file = retrieval_file(mode);
  if (!fs::exists(file)) throw DataError("missing " + file.string() + "; run the retrieve command first");
  std::vector<RetrievalResult> out;
  for_each_jsonl(file, [&](std::size_t line, const json& j) {
    try {
      out.push_back(retrieval_from_json(j, kg()));
    } catch (const json::exception& e) {
      throw ParseError(file.string(), line, e.what());
    }
  });
  return out;
}

std::vector<AnswerRecord> Pipeline::cmd_answer(RetrievalMode mode) {
  const auto retrieved = load_retrieval(mode);
  const auto& qs = questions(config_.split);
  std::map<std::string, const Question*> by_id;
  for (const auto& q : qs) by_id[q.id] = &q;

  std::vector<PromptBundle> bundles;
  for (const auto& r : retrieved) {
    const auto it = by_id.find(r.id);
    if (it == by_id.end()) throw DataError("retrieval record for unknown question " + r.id);
    bundles.push_back(build_prompt(r.paths, kg(), it->second->text, config_.llm.template_id));
  }
  auto backend = make_backend(config_.llm);
  const auto responses = answer_all(bundles, *backend, config_.llm.concurrency);

  std::vector<AnswerRecord> out;
  std::vector<json> records;
  for (std::size_t i = 0; i < retrieved.size(); ++i) {
    AnswerRecord a;
    a.id = retrieved[i].id;
    a.prompt_hash = sha256_hex(bundles[i].rendered);
    a.response = responses[i].raw_text;
    a.answers = responses[i].parsed_answers;
    a.llm_calls = retrieved[i].stats.llm_calls + responses[i].call_count;
    records.push_back({{"id", a.id},
                       {"prompt_hash", a.prompt_hash},
                       {"response", a.response},
                       {"answers", a.answers},
                       {"llm_calls", a.llm_calls},
                       {"config_hash", hash_}});
    out.push_back(std::move(a));
  }
  write_jsonl(answers_file(mode), records);
  log("wrote " + std::to_string(records.size()) + " answers (" + std::string(to_string(mode)) + ")");
  return out;
}

std::vector<AnswerRecord> Pipeline::load_answers(RetrievalMode mode) {
  const auto file = answers_file(mode);
  if (!fs::exists(file)) throw DataError("missing " + file.string() + "; run the answer command first");
  std::vector<AnswerRecord> out;
  for_each_jsonl(file, [&](std::size_t line, const json& j) {
    try {
      AnswerRecord a;
      a.id = j.at("id").get<std::string>();
      a.response = j.at("response").get<std::string>();
      a.answers = j.at("answers").get<std::vector<std::string>>();
      a.prompt_hash = j.value("prompt_hash", "");
      a.llm_calls = j.value("llm_calls", std::size_t{0});
      out.push_back(std::move(a));
    } catch (const json::exception& e) {
      throw ParseError(file.string(), line, e.what());
    }
  });
  return out;
}

EvalReport Pipeline::cmd_eval(RetrievalMode mode) {
  const auto& graph = kg();
  const auto& qs = questions(config_.split);
  std::map<std::string, const RetrievalResult*> retrieval_by_id;
  const auto retrieved = load_retrieval(mode);
  for (const auto& r : retrieved) retrieval_by_id[r.id] = &r;
  const auto answers = load_answers(mode);
  std::map<std::string, const AnswerRecord*> answer_by_id;
  for (const auto& a : answers) answer_by_id[a.id] = &a;

  std::vector<QuestionRow> rows;
  for (const auto& q : qs) {
    const auto r = retrieval_by_id.find(q.id);
    const auto a = answer_by_id.find(q.id);
    if (r == retrieval_by_id.end() || a == answer_by_id.end()) {
      throw DataError("no retrieval or answer record for question " + q.id);
    }
    GoldAliases gold = q.aliases;
    gold.resize(q.answers.size());
    for (std::size_t i = 0; i < q.answers.size(); ++i) {
      if (gold[i].empty()) gold[i].push_back(graph.entity_label(q.answers[i]));
    }
    QuestionRow row;
    row.id = q.id;
    row.hit = hit(a->second->response, gold);
    row.h1 = h1(a->second->answers, gold);
    row.f1 = f1(a->second->answers, gold);
    row.coverage = answer_coverage(r->second->paths, q.answers);
    row.input_tokens = r->second->stats.num_input_tokens;
    row.hops = question_hops(graph, q);
    row.num_entities = q.entities.size();
    rows.push_back(std::move(row));
  }
  auto report = aggregate(std::move(rows));
  write_report(report, eval_dir(mode), hash_);

  // Retrieval comparison over whatever retrieval files exist.
  std::vector<std::pair<std::string, std::vector<RetrievalResult>>> runs;
  for (auto m : {RetrievalMode::Gnn, RetrievalMode::Llm, RetrievalMode::Ra, RetrievalMode::Ensemble}) {
    if (fs::exists(retrieval_file(m))) runs.emplace_back(std::string(to_string(m)), load_retrieval(m));
  }
  const auto table_rows = retrieval_analysis(graph, qs, runs);
  write_file(config_.out / "retrieval-table.csv",
             "# config_hash=" + hash_ + "\n" + retrieval_table_csv(table_rows));
  if (const auto* all = report.slice("all")) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%s: hit %.1f h1 %.1f f1 %.1f coverage %.1f over %zu questions",
                  std::string(to_string(mode)).c_str(), all->hit, all->h1, all->f1, all->coverage, all->count);
    log(buf);
  }
  return report;
}

TheoremCampaign Pipeline::cmd_theorem() {
  fs::create_directories(config_.out);
  auto c = theorem_campaign(config_.theorem_instances, config_.seed, config_.jobs);
  auto j = to_json(c);
  j["config_hash"] = hash_;
  write_file(config_.out / "theorem-report.json", j.dump(2) + "\n");
  log("theorem campaign: " + std::to_string(c.passes) + "/" + std::to_string(c.instances) + " pass");
  return c;
}

SyntheticDataset Pipeline::cmd_synth() {
  fs::create_directories(config_.out);
  auto data = gen_synthetic(config_.synth);
  write_synthetic(data, config_.out);
  json files = json::object();
  for (const char* f : {"entities.txt", "relations.txt", "triples.tsv", "train.jsonl", "dev.jsonl", "test.jsonl",
                        "relation_paths.jsonl", "ground_truth.jsonl"}) {
    files[f] = file_sha256(config_.out / f);
  }
  write_file(config_.out / "manifest.json",
             json{{"config_hash", hash_}, {"synth", config_.to_json()["synth"]}, {"seed", config_.seed},
                  {"files", files}}
                     .dump(2) +
                 "\n");
  log("wrote synthetic dataset with " + std::to_string(data.questions.size()) + " questions");
  return data;
}

}  // namespace gnnrag

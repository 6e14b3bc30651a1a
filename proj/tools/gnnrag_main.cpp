#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gnnrag/error.hpp"
#include "gnnrag/pipeline.hpp"

namespace {

using namespace gnnrag;

struct Flags {
  std::string config;
  std::string mode;
  std::optional<int> jobs;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
  bool resume = false;
  bool quiet = false;
};

PipelineConfig resolve(const Flags& f) {
  PipelineConfig c = f.config.empty() ? PipelineConfig{} : load_config(f.config);
  for (const auto& kv : f.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (f.jobs) c.jobs = *f.jobs;
  if (f.seed) c.seed = *f.seed;
  if (!f.out.empty()) c.out = f.out;
  if (f.resume) c.resume = true;
  return c;
}

int run(const std::string& command, const Flags& f) {
  Pipeline p(resolve(f));
  const bool uses_mode = command == "retrieve" || command == "answer" || command == "eval";
  const auto mode = uses_mode && !f.mode.empty() ? retrieval_mode_from_string(f.mode) : RetrievalMode::Gnn;
  if (command == "subgraph") {
    p.cmd_subgraph();
  } else if (command == "train") {
    if (!f.mode.empty() && f.mode != "a" && f.mode != "b") throw ConfigError("train --mode expects a or b");
    const auto s = p.cmd_train(f.mode == "b");
    std::printf("best epoch %d, val H@1 %.3f, checkpoint %s\n", s.best_epoch, s.best_val_h1,
                s.checkpoint.string().c_str());
  } else if (command == "retrieve") {
    p.cmd_retrieve(mode);
  } else if (command == "answer") {
    p.cmd_answer(mode);
  } else if (command == "eval") {
    const auto report = p.cmd_eval(mode);
    std::printf("slice,count,hit,h1,f1,coverage,median_tokens\n");
    for (const auto& s : report.slices) {
      std::printf("%s,%zu,%.1f,%.1f,%.1f,%.1f,%.1f\n", s.name.c_str(), s.count, s.hit, s.h1, s.f1, s.coverage,
                  s.median_tokens);
    }
  } else if (command == "theorem") {
    const auto c = p.cmd_theorem();
    std::printf("%zu/%zu instances pass, max deviation %.3g\n", c.passes, c.instances, c.max_deviation);
    if (c.passes != c.instances) return 1;
  } else if (command == "synth") {
    p.cmd_synth();
  }
  std::printf("config_hash %s\n", p.config_hash().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GNN-RAG: graph neural retrieval for knowledge-graph question answering"};
  app.require_subcommand(1, 1);
  Flags flags;
  app.add_option("--config", flags.config, "TOML-like config file")->check(CLI::ExistingFile);
  app.add_option("--mode", flags.mode, "retrieve/answer/eval: gnn, llm, ra or ensemble; train: a or b");
  app.add_option("--jobs", flags.jobs, "worker threads");
  app.add_option("--seed", flags.seed, "run seed");
  app.add_option("--out", flags.out, "output directory");
  app.add_option("--set", flags.overrides, "override a config entry, section.key=value");
  app.add_flag("--resume", flags.resume, "train: continue from the stored checkpoint");
  app.add_flag("-q,--quiet", flags.quiet, "no progress messages");

  const std::pair<const char*, const char*> commands[] = {
      {"subgraph", "extract question subgraphs with PageRank Nibble"},
      {"train", "train the GNN by node classification"},
      {"retrieve", "retrieve candidate answers and reasoning paths"},
      {"answer", "prompt the LLM with the verbalized paths"},
      {"eval", "Hit / H@1 / F1 / coverage per slice"},
      {"theorem", "randomized check of the ground-truth subgraph result"},
      {"synth", "write a seeded synthetic dataset"},
  };
  for (const auto& [name, help] : commands) {
    app.add_subcommand(name, help)->fallthrough();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  if (!flags.quiet) set_log_stream(&std::cerr);
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return run(command, flags);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    switch (e.category()) {
      case Error::Category::Config: return 2;
      case Error::Category::Data: return 3;
      case Error::Category::Service: return 4;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
  }
  return 1;
}

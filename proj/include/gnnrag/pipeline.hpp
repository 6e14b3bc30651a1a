#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "gnnrag/analysis.hpp"
#include "gnnrag/embeddings.hpp"
#include "gnnrag/eval.hpp"
#include "gnnrag/gnn.hpp"
#include "gnnrag/kg.hpp"
#include "gnnrag/llm.hpp"
#include "gnnrag/retriever.hpp"
#include "gnnrag/subgraph.hpp"

namespace gnnrag {

enum class RetrievalMode { Gnn, Llm, Ra, Ensemble };

std::string_view to_string(RetrievalMode m);
RetrievalMode retrieval_mode_from_string(std::string_view s);

struct PipelineConfig {
  /// Data files are resolved against data_dir.
  std::filesystem::path data_dir = ".";
  std::string triples = "triples.tsv";
  std::string entities = "entities.txt";
  std::string relations = "relations.txt";
  std::string train = "train.jsonl";
  std::string dev = "dev.jsonl";
  std::string test = "test.jsonl";
  std::string relation_paths = "relation_paths.jsonl";
  /// "hash:<dim>" or an embeddings.bin file. The second source feeds the
  /// other GNN of the ensemble.
  std::string embeddings = "hash:32";
  std::string embeddings_b = "hash:48";
  /// Split used by retrieve, answer and eval.
  std::string split = "test";

  SubgraphConfig subgraph;
  GnnConfig gnn;
  RetrieverConfig retriever;
  LlmConfig llm;
  std::size_t theorem_instances = 100;
  SyntheticConfig synth;

  std::uint64_t seed = 0;
  /// Not part of the hash: outputs do not depend on them.
  int jobs = 1;
  std::filesystem::path out = "out";
  bool resume = false;

  /// Sets one "section.key" entry from its textual value. Throws ConfigError on
  /// unknown keys and malformed values.
  void set(std::string_view key, std::string_view value);
  /// Throws ConfigError when a numeric range is violated.
  void validate() const;

  /// Hashed settings (paths relative to data_dir, seed folded in).
  nlohmann::json to_json() const;
  /// First 16 hex digits of the sha256 of to_json().dump().
  std::string hash() const;
};

/// Reads a TOML-like file with [section] headers and key = value lines.
/// Relative data.dir and llm.fixtures values are taken relative to the file.
PipelineConfig load_config(const std::filesystem::path& file);

/// Progress messages with a wall-clock prefix; nullptr silences them.
void set_log_stream(std::ostream* stream);

struct TrainSummary {
  int best_epoch = 0;
  int last_epoch = 0;
  double best_val_h1 = 0.0;
  std::filesystem::path checkpoint;
};

struct AnswerRecord {
  std::string id;
  std::string prompt_hash;
  std::string response;
  std::vector<std::string> answers;
  std::size_t llm_calls = 0;
};

/// Runs the commands over one output directory. Inputs are loaded lazily and
/// cached; each command writes its own files and embeds the config hash.
class Pipeline {
 public:
  explicit Pipeline(PipelineConfig config);

  const PipelineConfig& config() const noexcept { return config_; }
  const std::string& config_hash() const noexcept { return hash_; }

  const KnowledgeGraph& kg();
  /// Questions of "train", "dev" or "test", sorted by id; empty when the file is absent.
  const std::vector<Question>& questions(const std::string& split);
  const EmbeddingTable& table(bool secondary = false);
  /// Cached subgraphs for a split, aligned with questions(split).
  const std::vector<Subgraph>& subgraphs(const std::string& split);

  std::filesystem::path subgraph_file(const std::string& split) const;
  std::filesystem::path checkpoint_file(bool secondary = false) const;
  std::filesystem::path train_log_file(bool secondary = false) const;
  std::filesystem::path retrieval_file(RetrievalMode mode) const;
  std::filesystem::path answers_file(RetrievalMode mode) const;
  std::filesystem::path eval_dir(RetrievalMode mode) const;

  /// subgraphs-<split>.jsonl for every split file present.
  void cmd_subgraph();
  /// model-<a|b>.ckpt plus train-log-<a|b>.jsonl with one
  /// {epoch, loss, val_h1, skipped, config_hash} record per epoch.
  TrainSummary cmd_train(bool secondary = false);
  std::vector<RetrievalResult> cmd_retrieve(RetrievalMode mode);
  std::vector<AnswerRecord> cmd_answer(RetrievalMode mode);
  /// eval-<mode>/ report files, plus retrieval-table.csv over every retrieval
  /// file in the output directory.
  EvalReport cmd_eval(RetrievalMode mode);
  TheoremCampaign cmd_theorem();
  /// Writes the synthetic dataset and manifest.json into the output directory.
  SyntheticDataset cmd_synth();

  /// H@1 of a stored checkpoint on a split.
  double gnn_hits_at_1(const std::string& split, bool secondary = false);

 private:
  std::vector<RetrievalResult> load_retrieval(RetrievalMode mode);
  std::vector<AnswerRecord> load_answers(RetrievalMode mode);
  GnnModel& model(bool secondary);
  std::vector<TrainingExample> examples(const std::string& split);

  PipelineConfig config_;
  std::string hash_;
  std::optional<KnowledgeGraph> kg_;
  std::map<std::string, std::vector<Question>> questions_;
  std::map<std::string, std::vector<Subgraph>> subgraphs_;
  std::unique_ptr<EmbeddingTable> tables_[2];
  std::unique_ptr<GnnModel> models_[2];
};

}  // namespace gnnrag

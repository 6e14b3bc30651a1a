#pragma once

#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "gnnrag/embeddings.hpp"
#include "gnnrag/gnn.hpp"
#include "gnnrag/kg.hpp"
#include "gnnrag/path.hpp"
#include "gnnrag/subgraph.hpp"

namespace gnnrag {

struct Candidate {
  EntityId entity = 0;
  double probability = 0.0;
};

struct RetrievalStats {
  std::size_t num_paths = 0;
  std::size_t num_input_tokens = 0;
  std::size_t llm_calls = 0;
};

struct RetrievalResult {
  std::string id;
  /// Sorted by probability, descending.
  std::vector<Candidate> candidates;
  /// Unique by route; the first producer's source tag is kept.
  std::vector<ReasoningPath> paths;
  RetrievalStats stats;
};

/// LLM-proposed relation sequence r_1 -> ... -> r_t.
struct RelationPathSpec {
  std::vector<RelationId> relations;
};

struct RetrieverConfig {
  double threshold = 0.95;
  std::size_t path_cap = 10;
  std::size_t fanout_cap = 32;
};

/// Nodes by descending probability (ties: ascending index), taken while the
/// cumulative mass before the node is below `threshold`. The top node is
/// always selected.
std::vector<std::pair<std::size_t, double>> select_candidates(const Eigen::VectorXd& probabilities,
                                                              double threshold);

/// All shortest paths from each question entity to `candidate` inside the
/// subgraph, at most `cap` per (entity, candidate) pair, in lexicographic
/// order of the interleaved id sequence. Unreachable entities contribute none.
std::vector<ReasoningPath> shortest_paths(const Subgraph& subgraph,
                                          std::span<const EntityId> question_entities,
                                          EntityId candidate, std::size_t cap,
                                          PathSource source = PathSource::GnnA);

/// Walks each spec from each question entity over the full KG, keeping at most
/// `fanout_cap` matching edges per step. Only complete walks are emitted.
std::vector<ReasoningPath> instantiate_relation_paths(const KnowledgeGraph& kg,
                                                      std::span<const EntityId> question_entities,
                                                      std::span<const RelationPathSpec> specs,
                                                      std::size_t fanout_cap);

/// Drops repeated routes, keeping first occurrences in order.
std::vector<ReasoningPath> dedupe_paths(std::vector<ReasoningPath> paths);

/// Recomputes num_paths and num_input_tokens (tokens of the verbalized block).
void recompute_stats(RetrievalResult& result, const KnowledgeGraph& kg);

/// Union of paths (first source tag wins) and max-probability merge of
/// candidates; LLM call counts add up.
RetrievalResult augment(std::span<const RetrievalResult> results, const KnowledgeGraph& kg);

/// GNN retrieval for one question: score, select candidates, extract paths.
RetrievalResult retrieve_gnn(const GnnModel& model, const Subgraph& subgraph,
                             const Question& question, const EmbeddingTable& table,
                             const KnowledgeGraph& kg, const RetrieverConfig& config,
                             PathSource source = PathSource::GnnA);

/// LLM relation-path retrieval; `llm_calls` is the number of generation calls
/// that produced the specs (beam count).
RetrievalResult retrieve_llm(const KnowledgeGraph& kg, const Question& question,
                             std::span<const RelationPathSpec> specs, std::size_t llm_calls,
                             const RetrieverConfig& config);

/// retrieval JSONL record: {"id", "candidates": [[entity, prob]], "paths":
/// [{"entities", "relations", "source"}], "stats": {...}}.
nlohmann::json to_json(const RetrievalResult& result, const KnowledgeGraph& kg);
RetrievalResult retrieval_from_json(const nlohmann::json& j, const KnowledgeGraph& kg);

}  // namespace gnnrag

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gnnrag/embeddings.hpp"
#include "gnnrag/gnn.hpp"
#include "gnnrag/kg.hpp"
#include "gnnrag/retriever.hpp"
#include "gnnrag/subgraph.hpp"

namespace gnnrag {

/// Union of the reasoning paths that lead from the question entities to the
/// answers, stored as forward facts.
struct GroundTruthSubgraph {
  std::vector<Triple> facts;

  /// Sorted entities touched by the facts.
  std::vector<EntityId> nodes() const;
  bool contains_fact(const Triple& forward) const;
};

/// Builds the fact set from paths, mapping inverse steps to forward facts.
GroundTruthSubgraph ground_truth_from_paths(const KnowledgeGraph& kg,
                                            std::span<const ReasoningPath> paths);

/// True when every answer is reachable from some question entity using only
/// the facts (in either direction).
bool answers_reachable(const GroundTruthSubgraph& gt, std::span<const EntityId> question_entities,
                       std::span<const EntityId> answers);

/// Relevance of 1 on local triples whose forward form is a ground-truth fact.
EdgeRelevance oracle_relevance(const KnowledgeGraph& kg, const Subgraph& subgraph,
                               const GroundTruthSubgraph& gt);

struct TheoremResult {
  bool pass = false;
  /// Largest state difference on ground-truth nodes between the two runs.
  double max_deviation = 0.0;
  /// Largest state magnitude on nodes outside the ground truth.
  double outside_magnitude = 0.0;
  /// Largest |logit| on nodes outside the ground truth.
  double outside_logit = 0.0;
};

/// Runs the model with oracle relevance on the subgraph and on the subgraph
/// made of the ground-truth facts, and compares the per-layer states. Throws
/// ConfigError when the model has biases enabled.
TheoremResult theorem_check(const GnnModel& model, const KnowledgeGraph& kg, const Subgraph& subgraph,
                            const GroundTruthSubgraph& gt, const RowMatrix& instructions,
                            const EmbeddingTable& table, double tolerance = 1e-9);

struct TheoremCampaign {
  std::size_t instances = 0;
  std::size_t passes = 0;
  double max_deviation = 0.0;
  double max_outside_magnitude = 0.0;
};

/// Random KGs (at most 30 nodes and 4 relations), ground truth from random
/// walks, random bias-free models.
TheoremCampaign theorem_campaign(std::size_t instances, std::uint64_t seed, int jobs = 1);

nlohmann::json to_json(const TheoremCampaign& campaign);

struct SyntheticConfig {
  std::size_t num_entities = 1000;
  std::size_t num_questions = 500;
  int max_hops = 3;
  /// Relation types per level transition.
  std::size_t relations_per_level = 4;
  /// Relations linking entities of the same level.
  std::size_t distractor_relations = 2;
  /// Chance that an entity has an edge for a given next-level relation.
  double edge_probability = 0.6;
  double distractor_edges_per_entity = 0.5;
  double multi_entity_fraction = 0.2;
  std::size_t max_answers = 3;
  /// Chance that the first simulated LLM beam is the gold relation chain.
  double llm_path_accuracy = 0.7;
  std::uint64_t seed = 0;
};

struct SyntheticQuestion {
  Question question;
  int hops = 0;
  /// Relation sequence per question entity, aligned with question.entities.
  std::vector<RelationPathSpec> relation_paths;
  /// Simulated LLM relation-path beams: the gold chain or a corrupted copy for
  /// each entity, plus one corrupted beam.
  std::vector<RelationPathSpec> llm_paths;
  GroundTruthSubgraph ground_truth;
};

struct SyntheticDataset {
  KnowledgeGraph kg;
  std::vector<SyntheticQuestion> questions;
};

/// Layered random KG: entities sit on levels 0..max_hops, each level
/// transition has its own relation types, and distractor relations stay within
/// a level. Questions name a relation chain from level-0 entities; the answers
/// are every entity the chain reaches (intersected across entities for
/// two-entity questions). Hop counts are stratified.
SyntheticDataset gen_synthetic(const SyntheticConfig& config);

/// Writes entities.txt, relations.txt, triples.tsv, {train,dev,test}.jsonl and
/// relation_paths.jsonl ({"id", "paths": [[relation label]]}, the simulated
/// LLM beams) and ground_truth.jsonl into `dir`.
/// Splits are 70/10/20 in generation order.
void write_synthetic(const SyntheticDataset& data, const std::filesystem::path& dir);

/// Reads relation_paths.jsonl into specs keyed by question id.
std::map<std::string, std::vector<RelationPathSpec>> load_relation_paths(
    const std::filesystem::path& file, const KnowledgeGraph& kg);

struct RetrievalTableRow {
  std::string retriever;
  std::string slice;
  std::size_t count = 0;
  double coverage = 0.0;
  double median_tokens = 0.0;
};

/// Answer coverage and median input tokens per retriever and hop slice
/// (hops=1, hops=2, hops>=3). Results are matched to questions by id.
std::vector<RetrievalTableRow> retrieval_analysis(
    const KnowledgeGraph& kg, std::span<const Question> questions,
    std::span<const std::pair<std::string, std::vector<RetrievalResult>>> retrievers);

std::string retrieval_table_csv(std::span<const RetrievalTableRow> rows);

}  // namespace gnnrag

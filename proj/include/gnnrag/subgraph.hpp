#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gnnrag/kg.hpp"

namespace gnnrag {

using LocalId = std::uint32_t;

struct LocalTriple {
  LocalId head = 0;
  RelationId relation = 0;
  LocalId tail = 0;

  friend auto operator<=>(const LocalTriple&, const LocalTriple&) = default;
};

/// Question-specific induced subgraph. Nodes are stored in ascending global id
/// order, so local ids preserve the global ordering.
struct Subgraph {
  std::vector<EntityId> nodes;
  /// Forward and inverse triples among `nodes`, sorted by (head, relation, tail).
  std::vector<LocalTriple> triples;
  std::vector<LocalId> seeds;
  std::string origin;

  std::size_t size() const noexcept { return nodes.size(); }
  /// Local index of a global entity, or -1 when absent.
  long local_of(EntityId e) const;
  bool contains(EntityId e) const { return local_of(e) >= 0; }
};

struct SubgraphConfig {
  std::size_t m = 2000;
  double alpha = 0.15;
  double epsilon = 1e-6;
};

/// Approximate personalized PageRank by residual pushing, seeded with uniform
/// mass over `seeds`. Returns the (sparse) PPR estimate indexed by entity.
std::vector<double> pagerank_nibble(const KnowledgeGraph& kg, std::span<const EntityId> seeds,
                                    double alpha, double epsilon);

/// Keeps the top-m PPR nodes (ties by ascending id), always including the seeds,
/// and induces every KG triple among them.
Subgraph extract_subgraph(const KnowledgeGraph& kg, std::span<const EntityId> seeds,
                          const SubgraphConfig& config, std::string origin = {});

/// Induced subgraph over an explicit node set.
Subgraph induce_subgraph(const KnowledgeGraph& kg, std::vector<EntityId> nodes,
                         std::span<const EntityId> seeds, std::string origin = {});

/// Subgraph holding exactly the given forward facts (plus their inverses).
Subgraph subgraph_from_facts(const KnowledgeGraph& kg, std::span<const Triple> facts,
                             std::span<const EntityId> seeds, std::string origin = {});

/// Subgraph cache: one JSON object per line,
/// {"id", "nodes": [int], "triples": [[h, r, t]]} with global ids and forward
/// triples only.
void save_subgraphs(const std::vector<Subgraph>& subgraphs, const KnowledgeGraph& kg,
                    const std::filesystem::path& file, const std::string& config_hash = {});
std::vector<Subgraph> load_subgraphs(const std::filesystem::path& file, const KnowledgeGraph& kg,
                                     const std::vector<Question>& questions);

}  // namespace gnnrag

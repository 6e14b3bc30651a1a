#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace gnnrag {

using EntityId = std::uint32_t;
using RelationId = std::uint32_t;

struct Triple {
  EntityId head = 0;
  RelationId relation = 0;
  EntityId tail = 0;

  friend auto operator<=>(const Triple&, const Triple&) = default;
};

struct Edge {
  RelationId relation = 0;
  EntityId target = 0;

  friend auto operator<=>(const Edge&, const Edge&) = default;
};

/// Immutable labeled multigraph with inverse closure.
///
/// Forward relations occupy ids [0, R); the inverse of relation r is r + R.
/// The adjacency enumerates every forward triple and its inverse exactly once,
/// with each node's out-edges sorted by (relation, target).
class KnowledgeGraph {
 public:
  KnowledgeGraph() = default;

  /// Builds the graph from forward triples; duplicates are dropped.
  KnowledgeGraph(std::vector<std::string> entity_labels,
                 std::vector<std::string> relation_labels,
                 std::vector<Triple> forward_triples);

  std::size_t num_entities() const noexcept { return entity_labels_.size(); }
  std::size_t num_forward_relations() const noexcept { return relation_labels_.size(); }
  std::size_t num_relations() const noexcept { return 2 * relation_labels_.size(); }

  RelationId inverse(RelationId r) const noexcept {
    const auto n = static_cast<RelationId>(relation_labels_.size());
    return r < n ? r + n : r - n;
  }
  bool is_inverse(RelationId r) const noexcept { return r >= relation_labels_.size(); }
  RelationId forward_of(RelationId r) const noexcept { return is_inverse(r) ? inverse(r) : r; }

  const std::string& entity_label(EntityId e) const { return entity_labels_.at(e); }
  /// Forward label, or "~label" for an inverse relation.
  std::string relation_label(RelationId r) const;
  const std::vector<std::string>& entity_labels() const noexcept { return entity_labels_; }
  const std::vector<std::string>& relation_labels() const noexcept { return relation_labels_; }

  std::optional<EntityId> find_entity(std::string_view label) const;
  /// Accepts forward labels and the "~label" inverse spelling.
  std::optional<RelationId> find_relation(std::string_view label) const;
  EntityId entity_id(std::string_view label) const;
  RelationId relation_id(std::string_view label) const;

  /// Forward triples only, sorted and unique.
  const std::vector<Triple>& forward_triples() const noexcept { return triples_; }
  /// Forward plus inverse triples, sorted.
  std::vector<Triple> all_triples() const;
  std::size_t num_triples() const noexcept { return 2 * triples_.size(); }

  std::span<const Edge> out_edges(EntityId e) const {
    return {edges_.data() + offsets_[e], edges_.data() + offsets_[e + 1]};
  }
  std::size_t degree(EntityId e) const { return offsets_[e + 1] - offsets_[e]; }
  bool has_triple(const Triple& t) const;

 private:
  std::vector<std::string> entity_labels_;
  std::vector<std::string> relation_labels_;
  std::unordered_map<std::string, EntityId> entity_index_;
  std::unordered_map<std::string, RelationId> relation_index_;
  std::vector<Triple> triples_;
  std::vector<std::size_t> offsets_;
  std::vector<Edge> edges_;
};

/// Reads the three-file TSV layout: one label per line in the vocabulary
/// files, "head<TAB>relation<TAB>tail" per line in the triples file.
KnowledgeGraph load_kg(const std::filesystem::path& triples_file,
                       const std::filesystem::path& entity_file,
                       const std::filesystem::path& relation_file);

void save_kg(const KnowledgeGraph& kg, const std::filesystem::path& triples_file,
             const std::filesystem::path& entity_file,
             const std::filesystem::path& relation_file);

/// Breadth-first distances from a set of sources over the full adjacency;
/// unreachable nodes get -1.
std::vector<int> bfs_distances(const KnowledgeGraph& kg, std::span<const EntityId> sources);

struct Question {
  std::string id;
  std::string text;
  std::vector<EntityId> entities;
  std::vector<EntityId> answers;
  /// One alias list per answer, aligned with `answers`.
  std::vector<std::vector<std::string>> aliases;
};

/// questions.jsonl: {"id", "question", "entities", "answers", "aliases"}.
std::vector<Question> load_questions(const std::filesystem::path& file, const KnowledgeGraph& kg);
void save_questions(const std::vector<Question>& questions, const KnowledgeGraph& kg,
                    const std::filesystem::path& file);

}  // namespace gnnrag

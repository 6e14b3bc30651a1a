#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "gnnrag/kg.hpp"

namespace gnnrag {

/// Which retriever produced a path.
enum class PathSource { GnnA, GnnB, Llm };

std::string_view to_string(PathSource s);
PathSource path_source_from_string(std::string_view s);

/// Alternating entity/relation sequence: entities.size() == relations.size() + 1.
struct ReasoningPath {
  std::vector<EntityId> entities;
  std::vector<RelationId> relations;
  PathSource source = PathSource::GnnA;

  std::size_t length() const noexcept { return relations.size(); }
  EntityId start() const { return entities.front(); }
  EntityId terminal() const { return entities.back(); }

  /// Equality and ordering ignore the source tag.
  bool same_route(const ReasoningPath& other) const {
    return entities == other.entities && relations == other.relations;
  }
  /// Interleaved (e0, r0, e1, ...) sequence used for lexicographic ordering.
  std::vector<std::uint32_t> sequence() const;
};

/// True when every step is a triple of the graph (in forward or inverse form).
bool is_valid_path(const ReasoningPath& path, const KnowledgeGraph& kg);

}  // namespace gnnrag

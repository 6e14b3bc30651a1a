#include "gnnrag/kg.hpp"

#include <algorithm>
#include <deque>

#include "gnnrag/error.hpp"
#include "gnnrag/io.hpp"

namespace gnnrag {

namespace {

std::vector<std::string> load_vocab(const std::filesystem::path& file) {
  auto labels = read_lines(file);
  while (!labels.empty() && labels.back().empty()) labels.pop_back();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i].empty()) throw ParseError(file.string(), i + 1, "empty label");
  }
  return labels;
}

template <typename Id>
std::unordered_map<std::string, Id> index_labels(const std::vector<std::string>& labels,
                                                 const char* what) {
  std::unordered_map<std::string, Id> index;
  index.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!index.emplace(labels[i], static_cast<Id>(i)).second) {
      throw VocabularyError(std::string("duplicate ") + what + " label '" + labels[i] + "'");
    }
  }
  return index;
}

}  // namespace

KnowledgeGraph::KnowledgeGraph(std::vector<std::string> entity_labels,
                               std::vector<std::string> relation_labels,
                               std::vector<Triple> forward_triples)
    : entity_labels_(std::move(entity_labels)),
      relation_labels_(std::move(relation_labels)),
      entity_index_(index_labels<EntityId>(entity_labels_, "entity")),
      relation_index_(index_labels<RelationId>(relation_labels_, "relation")),
      triples_(std::move(forward_triples)) {
  const auto num_rel = relation_labels_.size();
  for (const auto& t : triples_) {
    if (t.head >= entity_labels_.size() || t.tail >= entity_labels_.size()) {
      throw VocabularyError("triple references unknown entity id");
    }
    if (t.relation >= num_rel) throw VocabularyError("triple references unknown relation id");
  }
  std::sort(triples_.begin(), triples_.end());
  triples_.erase(std::unique(triples_.begin(), triples_.end()), triples_.end());

  std::vector<Triple> all = all_triples();
  offsets_.assign(entity_labels_.size() + 1, 0);
  for (const auto& t : all) ++offsets_[t.head + 1];
  for (std::size_t i = 1; i < offsets_.size(); ++i) offsets_[i] += offsets_[i - 1];
  edges_.resize(all.size());
  std::vector<std::size_t> cursor(offsets_.begin(), offsets_.end() - 1);
  // `all` is sorted by (head, relation, tail), so each bucket comes out sorted.
  for (const auto& t : all) edges_[cursor[t.head]++] = Edge{t.relation, t.tail};
}

std::string KnowledgeGraph::relation_label(RelationId r) const {
  if (r >= num_relations()) throw VocabularyError("unknown relation id " + std::to_string(r));
  return is_inverse(r) ? "~" + relation_labels_[inverse(r)] : relation_labels_[r];
}

std::optional<EntityId> KnowledgeGraph::find_entity(std::string_view label) const {
  auto it = entity_index_.find(std::string(label));
  if (it == entity_index_.end()) return std::nullopt;
  return it->second;
}

std::optional<RelationId> KnowledgeGraph::find_relation(std::string_view label) const {
  bool inv = !label.empty() && label.front() == '~';
  if (inv) label.remove_prefix(1);
  auto it = relation_index_.find(std::string(label));
  if (it == relation_index_.end()) return std::nullopt;
  return inv ? inverse(it->second) : it->second;
}

EntityId KnowledgeGraph::entity_id(std::string_view label) const {
  if (auto id = find_entity(label)) return *id;
  throw VocabularyError("unknown entity '" + std::string(label) + "'");
}

RelationId KnowledgeGraph::relation_id(std::string_view label) const {
  if (auto id = find_relation(label)) return *id;
  throw VocabularyError("unknown relation '" + std::string(label) + "'");
}

std::vector<Triple> KnowledgeGraph::all_triples() const {
  std::vector<Triple> all;
  all.reserve(2 * triples_.size());
  for (const auto& t : triples_) {
    all.push_back(t);
    all.push_back(Triple{t.tail, inverse(t.relation), t.head});
  }
  std::sort(all.begin(), all.end());
  return all;
}

bool KnowledgeGraph::has_triple(const Triple& t) const {
  if (t.head >= num_entities()) return false;
  auto edges = out_edges(t.head);
  return std::binary_search(edges.begin(), edges.end(), Edge{t.relation, t.tail});
}

KnowledgeGraph load_kg(const std::filesystem::path& triples_file,
                       const std::filesystem::path& entity_file,
                       const std::filesystem::path& relation_file) {
  auto entities = load_vocab(entity_file);
  auto relations = load_vocab(relation_file);
  auto entity_index = index_labels<EntityId>(entities, "entity");
  auto relation_index = index_labels<RelationId>(relations, "relation");

  std::vector<Triple> triples;
  const auto lines = read_lines(triples_file);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto& line = lines[i];
    if (line.empty()) continue;
    const auto a = line.find('\t');
    const auto b = a == std::string::npos ? a : line.find('\t', a + 1);
    if (b == std::string::npos || line.find('\t', b + 1) != std::string::npos) {
      throw ParseError(triples_file.string(), i + 1, "expected head<TAB>relation<TAB>tail");
    }
    const std::string head = line.substr(0, a);
    const std::string rel = line.substr(a + 1, b - a - 1);
    const std::string tail = line.substr(b + 1);
    auto h = entity_index.find(head);
    auto r = relation_index.find(rel);
    auto t = entity_index.find(tail);
    if (h == entity_index.end() || t == entity_index.end() || r == relation_index.end()) {
      const std::string& missing =
          h == entity_index.end() ? head : (t == entity_index.end() ? tail : rel);
      throw VocabularyError(triples_file.string() + ":" + std::to_string(i + 1) +
                            ": unknown label '" + missing + "'");
    }
    triples.push_back(Triple{h->second, r->second, t->second});
  }
  return KnowledgeGraph(std::move(entities), std::move(relations), std::move(triples));
}

void save_kg(const KnowledgeGraph& kg, const std::filesystem::path& triples_file,
             const std::filesystem::path& entity_file,
             const std::filesystem::path& relation_file) {
  std::string buf;
  for (const auto& l : kg.entity_labels()) buf += l + "\n";
  write_file(entity_file, buf);
  buf.clear();
  for (const auto& l : kg.relation_labels()) buf += l + "\n";
  write_file(relation_file, buf);
  buf.clear();
  for (const auto& t : kg.forward_triples()) {
    buf += kg.entity_label(t.head) + "\t" + kg.relation_labels()[t.relation] + "\t" +
           kg.entity_label(t.tail) + "\n";
  }
  write_file(triples_file, buf);
}

std::vector<int> bfs_distances(const KnowledgeGraph& kg, std::span<const EntityId> sources) {
  std::vector<int> dist(kg.num_entities(), -1);
  std::deque<EntityId> queue;
  for (auto s : sources) {
    if (dist.at(s) != 0) {
      dist[s] = 0;
      queue.push_back(s);
    }
  }
  while (!queue.empty()) {
    const auto u = queue.front();
    queue.pop_front();
    for (const auto& e : kg.out_edges(u)) {
      if (dist[e.target] < 0) {
        dist[e.target] = dist[u] + 1;
        queue.push_back(e.target);
      }
    }
  }
  return dist;
}

std::vector<Question> load_questions(const std::filesystem::path& file, const KnowledgeGraph& kg) {
  std::vector<Question> out;
  for_each_jsonl(file, [&](std::size_t line, const json& j) {
    try {
      Question q;
      q.id = j.at("id").get<std::string>();
      q.text = j.at("question").get<std::string>();
      for (const auto& e : j.at("entities")) q.entities.push_back(kg.entity_id(e.get<std::string>()));
      if (q.entities.empty()) throw ParseError(file.string(), line, "question has no entities");
      if (j.contains("answers")) {
        for (const auto& a : j["answers"]) q.answers.push_back(kg.entity_id(a.get<std::string>()));
      }
      if (j.contains("aliases")) q.aliases = j["aliases"].get<std::vector<std::vector<std::string>>>();
      q.aliases.resize(q.answers.size());
      for (std::size_t i = 0; i < q.answers.size(); ++i) {
        if (q.aliases[i].empty()) q.aliases[i].push_back(kg.entity_label(q.answers[i]));
      }
      out.push_back(std::move(q));
    } catch (const json::exception& e) {
      throw ParseError(file.string(), line, e.what());
    }
  });
  return out;
}

void save_questions(const std::vector<Question>& questions, const KnowledgeGraph& kg,
                    const std::filesystem::path& file) {
  std::vector<json> records;
  records.reserve(questions.size());
  for (const auto& q : questions) {
    json j;
    j["id"] = q.id;
    j["question"] = q.text;
    j["entities"] = json::array();
    for (auto e : q.entities) j["entities"].push_back(kg.entity_label(e));
    j["answers"] = json::array();
    for (auto a : q.answers) j["answers"].push_back(kg.entity_label(a));
    j["aliases"] = q.aliases;
    records.push_back(std::move(j));
  }
  write_jsonl(file, records);
}

}  // namespace gnnrag

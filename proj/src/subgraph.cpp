#include "gnnrag/subgraph.hpp"

#include <algorithm>
#include <deque>
#include <unordered_map>

#include "gnnrag/error.hpp"
#include "gnnrag/io.hpp"

namespace gnnrag {

long Subgraph::local_of(EntityId e) const {
  auto it = std::lower_bound(nodes.begin(), nodes.end(), e);
  if (it == nodes.end() || *it != e) return -1;
  return static_cast<long>(it - nodes.begin());
}

std::vector<double> pagerank_nibble(const KnowledgeGraph& kg, std::span<const EntityId> seeds,
                                    double alpha, double epsilon) {
  if (seeds.empty()) throw InvalidSeedError("no seed entities");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  for (auto s : seeds) {
    if (s >= kg.num_entities()) throw InvalidSeedError("seed " + std::to_string(s) + " not in KG");
  }

  const auto n = kg.num_entities();
  std::vector<double> rank(n, 0.0);
  std::vector<double> residual(n, 0.0);
  std::vector<char> queued(n, 0);
  std::deque<EntityId> queue;

  auto above = [&](EntityId u) {
    return residual[u] >= epsilon * static_cast<double>(std::max<std::size_t>(kg.degree(u), 1));
  };

  const double seed_mass = 1.0 / static_cast<double>(seeds.size());
  for (auto s : seeds) residual[s] += seed_mass;
  for (auto s : seeds) {
    if (!queued[s] && above(s)) {
      queued[s] = 1;
      queue.push_back(s);
    }
  }

  while (!queue.empty()) {
    const auto u = queue.front();
    queue.pop_front();
    queued[u] = 0;
    if (!above(u)) continue;
    const double mass = residual[u];
    residual[u] = 0.0;
    const auto deg = kg.degree(u);
    if (deg == 0) {
      // Dangling node: the walk can only teleport back, so all mass settles here.
      rank[u] += mass;
      continue;
    }
    rank[u] += alpha * mass;
    const double share = (1.0 - alpha) * mass / static_cast<double>(deg);
    for (const auto& e : kg.out_edges(u)) {
      residual[e.target] += share;
      if (!queued[e.target] && above(e.target)) {
        queued[e.target] = 1;
        queue.push_back(e.target);
      }
    }
  }
  return rank;
}

Subgraph extract_subgraph(const KnowledgeGraph& kg, std::span<const EntityId> seeds,
                          const SubgraphConfig& config, std::string origin) {
  if (config.m == 0) throw ConfigError("subgraph size m must be positive");
  const auto rank = pagerank_nibble(kg, seeds, config.alpha, config.epsilon);

  std::vector<EntityId> unique_seeds(seeds.begin(), seeds.end());
  std::sort(unique_seeds.begin(), unique_seeds.end());
  unique_seeds.erase(std::unique(unique_seeds.begin(), unique_seeds.end()), unique_seeds.end());
  if (unique_seeds.size() > config.m) {
    throw ConfigError("more question entities than subgraph size m");
  }

  std::vector<EntityId> ranked;
  for (EntityId v = 0; v < rank.size(); ++v) {
    if (rank[v] > 0.0 && !std::binary_search(unique_seeds.begin(), unique_seeds.end(), v)) {
      ranked.push_back(v);
    }
  }
  const std::size_t room = config.m - unique_seeds.size();
  auto by_rank = [&](EntityId a, EntityId b) {
    return rank[a] != rank[b] ? rank[a] > rank[b] : a < b;
  };
  if (ranked.size() > room) {
    std::partial_sort(ranked.begin(), ranked.begin() + static_cast<long>(room), ranked.end(),
                      by_rank);
    ranked.resize(room);
  }
  ranked.insert(ranked.end(), unique_seeds.begin(), unique_seeds.end());
  return induce_subgraph(kg, std::move(ranked), seeds, std::move(origin));
}

Subgraph induce_subgraph(const KnowledgeGraph& kg, std::vector<EntityId> nodes,
                         std::span<const EntityId> seeds, std::string origin) {
  nodes.insert(nodes.end(), seeds.begin(), seeds.end());
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
  for (auto v : nodes) {
    if (v >= kg.num_entities()) throw InvalidSeedError("entity " + std::to_string(v) + " not in KG");
  }

  Subgraph sg;
  sg.nodes = std::move(nodes);
  sg.origin = std::move(origin);
  for (LocalId u = 0; u < sg.nodes.size(); ++u) {
    for (const auto& e : kg.out_edges(sg.nodes[u])) {
      const long t = sg.local_of(e.target);
      if (t >= 0) sg.triples.push_back(LocalTriple{u, e.relation, static_cast<LocalId>(t)});
    }
  }
  for (auto s : seeds) sg.seeds.push_back(static_cast<LocalId>(sg.local_of(s)));
  std::sort(sg.seeds.begin(), sg.seeds.end());
  sg.seeds.erase(std::unique(sg.seeds.begin(), sg.seeds.end()), sg.seeds.end());
  return sg;
}

Subgraph subgraph_from_facts(const KnowledgeGraph& kg, std::span<const Triple> facts,
                             std::span<const EntityId> seeds, std::string origin) {
  Subgraph sg;
  for (const auto& f : facts) {
    sg.nodes.push_back(f.head);
    sg.nodes.push_back(f.tail);
  }
  sg.nodes.insert(sg.nodes.end(), seeds.begin(), seeds.end());
  std::sort(sg.nodes.begin(), sg.nodes.end());
  sg.nodes.erase(std::unique(sg.nodes.begin(), sg.nodes.end()), sg.nodes.end());
  sg.origin = std::move(origin);
  for (const auto& f : facts) {
    if (!kg.has_triple(f)) throw DataError("fact is not part of the KG");
    const auto h = static_cast<LocalId>(sg.local_of(f.head));
    const auto t = static_cast<LocalId>(sg.local_of(f.tail));
    sg.triples.push_back(LocalTriple{h, f.relation, t});
    sg.triples.push_back(LocalTriple{t, kg.inverse(f.relation), h});
  }
  std::sort(sg.triples.begin(), sg.triples.end());
  sg.triples.erase(std::unique(sg.triples.begin(), sg.triples.end()), sg.triples.end());
  for (auto s : seeds) sg.seeds.push_back(static_cast<LocalId>(sg.local_of(s)));
  std::sort(sg.seeds.begin(), sg.seeds.end());
  sg.seeds.erase(std::unique(sg.seeds.begin(), sg.seeds.end()), sg.seeds.end());
  return sg;
}

void save_subgraphs(const std::vector<Subgraph>& subgraphs, const KnowledgeGraph& kg,
                    const std::filesystem::path& file, const std::string& config_hash) {
  std::vector<json> records;
  records.reserve(subgraphs.size());
  for (const auto& sg : subgraphs) {
    json j;
    j["id"] = sg.origin;
    j["nodes"] = sg.nodes;
    json triples = json::array();
    for (const auto& t : sg.triples) {
      if (kg.is_inverse(t.relation)) continue;
      triples.push_back({sg.nodes[t.head], t.relation, sg.nodes[t.tail]});
    }
    j["triples"] = std::move(triples);
    if (!config_hash.empty()) j["config_hash"] = config_hash;
    records.push_back(std::move(j));
  }
  write_jsonl(file, records);
}

std::vector<Subgraph> load_subgraphs(const std::filesystem::path& file, const KnowledgeGraph& kg,
                                     const std::vector<Question>& questions) {
  std::unordered_map<std::string, const Question*> by_id;
  for (const auto& q : questions) by_id.emplace(q.id, &q);

  std::vector<Subgraph> out;
  for_each_jsonl(file, [&](std::size_t line, const json& j) {
    try {
      const auto id = j.at("id").get<std::string>();
      auto it = by_id.find(id);
      if (it == by_id.end()) throw ParseError(file.string(), line, "unknown question id " + id);
      auto nodes = j.at("nodes").get<std::vector<EntityId>>();
      Subgraph sg = induce_subgraph(kg, std::move(nodes), it->second->entities, id);
      // The cache must describe an induced subgraph; reject hand-edited records.
      std::size_t forward = 0;
      for (const auto& t : sg.triples) forward += kg.is_inverse(t.relation) ? 0 : 1;
      if (forward != j.at("triples").size()) {
        throw ParseError(file.string(), line, "triples do not match the induced subgraph");
      }
      out.push_back(std::move(sg));
    } catch (const json::exception& e) {
      throw ParseError(file.string(), line, e.what());
    }
  });
  return out;
}

}  // namespace gnnrag

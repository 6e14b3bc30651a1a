#include "gnnrag/retriever.hpp"

#include <algorithm>
#include <deque>
#include <functional>
#include <map>
#include <numeric>
#include <set>

#include "gnnrag/error.hpp"
#include "gnnrag/prompt.hpp"

namespace gnnrag {

std::string_view to_string(PathSource s) {
  switch (s) {
    case PathSource::GnnA:
      return "gnn-a";
    case PathSource::GnnB:
      return "gnn-b";
    case PathSource::Llm:
      return "llm";
  }
  return "gnn-a";
}

PathSource path_source_from_string(std::string_view s) {
  if (s == "gnn-a") return PathSource::GnnA;
  if (s == "gnn-b") return PathSource::GnnB;
  if (s == "llm") return PathSource::Llm;
  throw DataError("unknown path source '" + std::string(s) + "'");
}

std::vector<std::uint32_t> ReasoningPath::sequence() const {
  std::vector<std::uint32_t> seq;
  seq.reserve(entities.size() + relations.size());
  for (std::size_t i = 0; i < entities.size(); ++i) {
    seq.push_back(entities[i]);
    if (i < relations.size()) seq.push_back(relations[i]);
  }
  return seq;
}

bool is_valid_path(const ReasoningPath& path, const KnowledgeGraph& kg) {
  if (path.entities.size() != path.relations.size() + 1) return false;
  for (std::size_t i = 0; i < path.relations.size(); ++i) {
    if (!kg.has_triple({path.entities[i], path.relations[i], path.entities[i + 1]})) return false;
  }
  return true;
}

std::vector<std::pair<std::size_t, double>> select_candidates(const Eigen::VectorXd& probabilities,
                                                              double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) throw ConfigError("threshold must lie in (0, 1]");
  std::vector<std::size_t> order(static_cast<std::size_t>(probabilities.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return probabilities[static_cast<Eigen::Index>(a)] > probabilities[static_cast<Eigen::Index>(b)];
  });
  std::vector<std::pair<std::size_t, double>> out;
  double cumulative = 0.0;
  for (auto v : order) {
    if (!out.empty() && cumulative >= threshold) break;
    const double p = probabilities[static_cast<Eigen::Index>(v)];
    out.emplace_back(v, p);
    cumulative += p;
  }
  return out;
}

std::vector<ReasoningPath> shortest_paths(const Subgraph& subgraph,
                                          std::span<const EntityId> question_entities,
                                          EntityId candidate, std::size_t cap, PathSource source) {
  const long target = subgraph.local_of(candidate);
  if (target < 0) throw DataError("candidate is not in the subgraph");
  const auto n = subgraph.size();

  // Triples are sorted by (head, relation, tail), so each head's range is
  // already in lexicographic (relation, tail) order.
  std::vector<std::size_t> start(n + 1, 0);
  for (const auto& t : subgraph.triples) ++start[t.head + 1];
  for (std::size_t i = 1; i <= n; ++i) start[i] += start[i - 1];
  std::vector<std::vector<LocalId>> incoming(n);
  for (const auto& t : subgraph.triples) incoming[t.tail].push_back(t.head);

  std::vector<int> dist(n, -1);
  std::deque<LocalId> queue{static_cast<LocalId>(target)};
  dist[static_cast<std::size_t>(target)] = 0;
  while (!queue.empty()) {
    const auto u = queue.front();
    queue.pop_front();
    for (auto v : incoming[u]) {
      if (dist[v] < 0) {
        dist[v] = dist[u] + 1;
        queue.push_back(v);
      }
    }
  }

  std::vector<EntityId> sources(question_entities.begin(), question_entities.end());
  std::sort(sources.begin(), sources.end());
  sources.erase(std::unique(sources.begin(), sources.end()), sources.end());

  std::vector<ReasoningPath> out;
  for (auto e : sources) {
    const long s = subgraph.local_of(e);
    if (s < 0 || dist[static_cast<std::size_t>(s)] < 0) continue;
    std::size_t emitted = 0;
    ReasoningPath cur;
    cur.source = source;
    cur.entities.push_back(e);
    std::function<void(LocalId)> walk = [&](LocalId u) {
      if (emitted >= cap) return;
      if (static_cast<long>(u) == target) {
        out.push_back(cur);
        ++emitted;
        return;
      }
      for (std::size_t i = start[u]; i < start[u + 1] && emitted < cap; ++i) {
        const auto& t = subgraph.triples[i];
        if (dist[t.tail] != dist[u] - 1) continue;
        cur.relations.push_back(t.relation);
        cur.entities.push_back(subgraph.nodes[t.tail]);
        walk(t.tail);
        cur.relations.pop_back();
        cur.entities.pop_back();
      }
    };
    walk(static_cast<LocalId>(s));
  }
  return out;
}

std::vector<ReasoningPath> instantiate_relation_paths(const KnowledgeGraph& kg,
                                                      std::span<const EntityId> question_entities,
                                                      std::span<const RelationPathSpec> specs,
                                                      std::size_t fanout_cap) {
  std::vector<EntityId> sources(question_entities.begin(), question_entities.end());
  std::sort(sources.begin(), sources.end());
  sources.erase(std::unique(sources.begin(), sources.end()), sources.end());

  std::vector<ReasoningPath> out;
  for (const auto& spec : specs) {
    if (spec.relations.empty()) continue;
    for (auto r : spec.relations) {
      if (r >= kg.num_relations()) throw DataError("relation path references unknown relation");
    }
    for (auto e : sources) {
      std::vector<ReasoningPath> walks(1);
      walks[0].entities.push_back(e);
      walks[0].source = PathSource::Llm;
      for (auto r : spec.relations) {
        std::vector<ReasoningPath> next;
        for (const auto& w : walks) {
          const auto edges = kg.out_edges(w.terminal());
          auto lo = std::lower_bound(edges.begin(), edges.end(), Edge{r, 0});
          std::size_t taken = 0;
          for (auto it = lo; it != edges.end() && it->relation == r && taken < fanout_cap; ++it, ++taken) {
            ReasoningPath extended = w;
            extended.relations.push_back(r);
            extended.entities.push_back(it->target);
            next.push_back(std::move(extended));
          }
        }
        walks = std::move(next);
        if (walks.empty()) break;
      }
      for (auto& w : walks) out.push_back(std::move(w));
    }
  }
  return out;
}

std::vector<ReasoningPath> dedupe_paths(std::vector<ReasoningPath> paths) {
  std::set<std::vector<std::uint32_t>> seen;
  std::vector<ReasoningPath> out;
  out.reserve(paths.size());
  for (auto& p : paths) {
    // Length prefix keeps sequences of different shapes distinct.
    auto key = p.sequence();
    key.insert(key.begin(), static_cast<std::uint32_t>(p.relations.size()));
    if (seen.insert(std::move(key)).second) out.push_back(std::move(p));
  }
  return out;
}

void recompute_stats(RetrievalResult& result, const KnowledgeGraph& kg) {
  result.stats.num_paths = result.paths.size();
  result.stats.num_input_tokens = count_tokens(verbalize_paths(result.paths, kg));
}

RetrievalResult augment(std::span<const RetrievalResult> results, const KnowledgeGraph& kg) {
  if (results.empty()) throw DataError("augment needs at least one retrieval result");
  RetrievalResult out;
  out.id = results.front().id;
  std::vector<ReasoningPath> paths;
  std::map<EntityId, double> best;
  for (const auto& r : results) {
    paths.insert(paths.end(), r.paths.begin(), r.paths.end());
    for (const auto& c : r.candidates) {
      auto [it, inserted] = best.emplace(c.entity, c.probability);
      if (!inserted) it->second = std::max(it->second, c.probability);
    }
    out.stats.llm_calls += r.stats.llm_calls;
  }
  out.paths = dedupe_paths(std::move(paths));
  for (const auto& [e, p] : best) out.candidates.push_back({e, p});
  std::stable_sort(out.candidates.begin(), out.candidates.end(),
                   [](const Candidate& a, const Candidate& b) { return a.probability > b.probability; });
  recompute_stats(out, kg);
  return out;
}

RetrievalResult retrieve_gnn(const GnnModel& model, const Subgraph& subgraph,
                             const Question& question, const EmbeddingTable& table,
                             const KnowledgeGraph& kg, const RetrieverConfig& config,
                             PathSource source) {
  RetrievalResult out;
  out.id = question.id;
  const auto instructions = encode_question(model, table, question.id);
  const auto scores = forward(model, subgraph, instructions, table);
  std::vector<ReasoningPath> paths;
  for (const auto& [local, p] : select_candidates(scores.probabilities, config.threshold)) {
    const EntityId e = subgraph.nodes[local];
    out.candidates.push_back({e, p});
    auto found = shortest_paths(subgraph, question.entities, e, config.path_cap, source);
    paths.insert(paths.end(), std::make_move_iterator(found.begin()), std::make_move_iterator(found.end()));
  }
  out.paths = dedupe_paths(std::move(paths));
  recompute_stats(out, kg);
  return out;
}

RetrievalResult retrieve_llm(const KnowledgeGraph& kg, const Question& question,
                             std::span<const RelationPathSpec> specs, std::size_t llm_calls,
                             const RetrieverConfig& config) {
  RetrievalResult out;
  out.id = question.id;
  out.paths = dedupe_paths(instantiate_relation_paths(kg, question.entities, specs, config.fanout_cap));
  std::set<EntityId> ends;
  for (const auto& p : out.paths) ends.insert(p.terminal());
  for (auto e : ends) out.candidates.push_back({e, 1.0});
  out.stats.llm_calls = llm_calls;
  recompute_stats(out, kg);
  return out;
}

nlohmann::json to_json(const RetrievalResult& result, const KnowledgeGraph& kg) {
  nlohmann::json j;
  j["id"] = result.id;
  j["candidates"] = nlohmann::json::array();
  for (const auto& c : result.candidates) {
    j["candidates"].push_back({kg.entity_label(c.entity), c.probability});
  }
  j["paths"] = nlohmann::json::array();
  for (const auto& p : result.paths) {
    nlohmann::json path;
    path["entities"] = nlohmann::json::array();
    for (auto e : p.entities) path["entities"].push_back(kg.entity_label(e));
    path["relations"] = nlohmann::json::array();
    for (auto r : p.relations) path["relations"].push_back(kg.relation_label(r));
    path["source"] = to_string(p.source);
    j["paths"].push_back(std::move(path));
  }
  j["stats"] = {{"num_paths", result.stats.num_paths},
                {"num_input_tokens", result.stats.num_input_tokens},
                {"llm_calls", result.stats.llm_calls}};
  return j;
}

RetrievalResult retrieval_from_json(const nlohmann::json& j, const KnowledgeGraph& kg) {
  RetrievalResult r;
  r.id = j.at("id").get<std::string>();
  for (const auto& c : j.at("candidates")) {
    r.candidates.push_back({kg.entity_id(c.at(0).get<std::string>()), c.at(1).get<double>()});
  }
  for (const auto& p : j.at("paths")) {
    ReasoningPath path;
    for (const auto& e : p.at("entities")) path.entities.push_back(kg.entity_id(e.get<std::string>()));
    for (const auto& rel : p.at("relations")) path.relations.push_back(kg.relation_id(rel.get<std::string>()));
    path.source = path_source_from_string(p.at("source").get<std::string>());
    if (!is_valid_path(path, kg)) throw DataError("retrieval record " + r.id + " has an invalid path");
    r.paths.push_back(std::move(path));
  }
  const auto& s = j.at("stats");
  r.stats.num_paths = s.at("num_paths").get<std::size_t>();
  r.stats.num_input_tokens = s.at("num_input_tokens").get<std::size_t>();
  r.stats.llm_calls = s.value("llm_calls", std::size_t{0});
  return r;
}

}  // namespace gnnrag

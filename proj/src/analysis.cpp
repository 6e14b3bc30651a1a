#include "gnnrag/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <map>
#include <set>
#include <sstream>

#include "gnnrag/error.hpp"
#include "gnnrag/eval.hpp"
#include "gnnrag/io.hpp"
#include "gnnrag/parallel.hpp"
#include "gnnrag/prompt.hpp"
#include "gnnrag/random.hpp"

namespace gnnrag {

std::vector<EntityId> GroundTruthSubgraph::nodes() const {
  std::vector<EntityId> out;
  for (const auto& f : facts) {
    out.push_back(f.head);
    out.push_back(f.tail);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

bool GroundTruthSubgraph::contains_fact(const Triple& forward) const {
  return std::binary_search(facts.begin(), facts.end(), forward);
}

GroundTruthSubgraph ground_truth_from_paths(const KnowledgeGraph& kg,
                                            std::span<const ReasoningPath> paths) {
  GroundTruthSubgraph gt;
  for (const auto& p : paths) {
    for (std::size_t i = 0; i < p.relations.size(); ++i) {
      const auto r = p.relations[i];
      if (kg.is_inverse(r)) {
        gt.facts.push_back({p.entities[i + 1], kg.forward_of(r), p.entities[i]});
      } else {
        gt.facts.push_back({p.entities[i], r, p.entities[i + 1]});
      }
    }
  }
  std::sort(gt.facts.begin(), gt.facts.end());
  gt.facts.erase(std::unique(gt.facts.begin(), gt.facts.end()), gt.facts.end());
  return gt;
}

bool answers_reachable(const GroundTruthSubgraph& gt, std::span<const EntityId> question_entities,
                       std::span<const EntityId> answers) {
  std::map<EntityId, std::vector<EntityId>> adj;
  for (const auto& f : gt.facts) {
    adj[f.head].push_back(f.tail);
    adj[f.tail].push_back(f.head);
  }
  std::set<EntityId> seen(question_entities.begin(), question_entities.end());
  std::deque<EntityId> queue(seen.begin(), seen.end());
  while (!queue.empty()) {
    const auto u = queue.front();
    queue.pop_front();
    for (auto v : adj[u]) {
      if (seen.insert(v).second) queue.push_back(v);
    }
  }
  return std::all_of(answers.begin(), answers.end(), [&](EntityId a) { return seen.contains(a); });
}

EdgeRelevance oracle_relevance(const KnowledgeGraph& kg, const Subgraph& subgraph,
                               const GroundTruthSubgraph& gt) {
  EdgeRelevance omega(subgraph.triples.size(), 0.0);
  for (std::size_t e = 0; e < subgraph.triples.size(); ++e) {
    const auto& t = subgraph.triples[e];
    const EntityId h = subgraph.nodes[t.head];
    const EntityId tail = subgraph.nodes[t.tail];
    const Triple forward = kg.is_inverse(t.relation) ? Triple{tail, kg.forward_of(t.relation), h}
                                                     : Triple{h, t.relation, tail};
    if (gt.contains_fact(forward)) omega[e] = 1.0;
  }
  return omega;
}

TheoremResult theorem_check(const GnnModel& model, const KnowledgeGraph& kg, const Subgraph& subgraph,
                            const GroundTruthSubgraph& gt, const RowMatrix& instructions,
                            const EmbeddingTable& table, double tolerance) {
  if (model.config().use_bias) {
    throw ConfigError("theorem check needs a bias-free model (psi(0, 0) must be 0)");
  }
  for (const auto& f : gt.facts) {
    if (!subgraph.contains(f.head) || !subgraph.contains(f.tail)) {
      throw DataError("ground-truth fact lies outside the subgraph");
    }
  }
  std::vector<EntityId> seeds;
  for (auto s : subgraph.seeds) seeds.push_back(subgraph.nodes[s]);
  const Subgraph reduced = subgraph_from_facts(kg, gt.facts, seeds, subgraph.origin);

  const auto full_omega = oracle_relevance(kg, subgraph, gt);
  const EdgeRelevance reduced_omega(reduced.triples.size(), 1.0);
  const auto full = forward(model, subgraph, instructions, table, &full_omega);
  const auto small = forward(model, reduced, instructions, table, &reduced_omega);

  TheoremResult r;
  for (std::size_t v = 0; v < subgraph.size(); ++v) {
    const auto row = static_cast<Eigen::Index>(v);
    const long w = reduced.local_of(subgraph.nodes[v]);
    for (std::size_t l = 0; l < full.layer_states.size(); ++l) {
      const auto& h = full.layer_states[l];
      if (w < 0) {
        r.outside_magnitude = std::max(r.outside_magnitude, h.row(row).cwiseAbs().maxCoeff());
      } else {
        const double dev = (h.row(row) - small.layer_states[l].row(w)).cwiseAbs().maxCoeff();
        r.max_deviation = std::max(r.max_deviation, dev);
      }
    }
    if (w < 0) r.outside_logit = std::max(r.outside_logit, std::abs(full.logits[row]));
  }
  r.pass = r.max_deviation <= tolerance && r.outside_magnitude == 0.0 && r.outside_logit == 0.0;
  return r;
}

namespace {

KnowledgeGraph random_graph(Rng& rng, std::size_t n, std::size_t num_rel, std::size_t num_edges) {
  std::vector<std::string> entities, relations;
  for (std::size_t i = 0; i < n; ++i) entities.push_back("e" + std::to_string(i));
  for (std::size_t i = 0; i < num_rel; ++i) relations.push_back("r" + std::to_string(i));
  std::vector<Triple> triples;
  for (std::size_t i = 0; i < num_edges; ++i) {
    const auto h = static_cast<EntityId>(rng.index(n));
    const auto t = static_cast<EntityId>(rng.index(n));
    if (h != t) triples.push_back({h, static_cast<RelationId>(rng.index(num_rel)), t});
  }
  return KnowledgeGraph(entities, relations, triples);
}

struct CampaignInstance {
  KnowledgeGraph kg;
  Subgraph subgraph;
  GroundTruthSubgraph gt;
  GnnModel model;
  EmbeddingTable table;
  RowMatrix instructions;
};

CampaignInstance make_instance(std::uint64_t seed) {
  Rng rng(seed);
  CampaignInstance inst;
  for (;;) {
    const auto n = 2 + rng.index(29);
    const auto num_rel = 1 + rng.index(4);
    inst.kg = random_graph(rng, n, num_rel, n + rng.index(2 * n));
    std::vector<ReasoningPath> walks;
    std::vector<EntityId> seeds;
    const auto num_seeds = 1 + rng.index(2);
    for (std::size_t s = 0; s < num_seeds; ++s) {
      const auto start = static_cast<EntityId>(rng.index(n));
      for (auto w = 1 + rng.index(2); w > 0; --w) {
        ReasoningPath p;
        p.entities.push_back(start);
        for (auto steps = 1 + rng.index(3); steps > 0; --steps) {
          const auto edges = inst.kg.out_edges(p.terminal());
          if (edges.empty()) break;
          const auto& e = edges[rng.index(edges.size())];
          p.relations.push_back(e.relation);
          p.entities.push_back(e.target);
        }
        if (p.length() > 0) {
          walks.push_back(std::move(p));
          seeds.push_back(start);
        }
      }
    }
    if (walks.empty()) continue;
    inst.gt = ground_truth_from_paths(inst.kg, walks);
    SubgraphConfig cfg;
    cfg.m = n;
    inst.subgraph = extract_subgraph(inst.kg, seeds, cfg, "theorem-" + std::to_string(seed));
    break;
  }

  GnnConfig cfg;
  cfg.layers = 1 + static_cast<int>(rng.index(4));
  cfg.hidden = 4 + static_cast<int>(rng.index(5));
  cfg.seed = rng.next();
  cfg.relevance = RelevanceMode::Oracle;
  cfg.use_bias = false;
  constexpr std::size_t dim = 8;
  inst.model = GnnModel(cfg, dim);

  Eigen::MatrixXf rel(static_cast<Eigen::Index>(inst.kg.num_forward_relations()), dim);
  for (Eigen::Index i = 0; i < rel.size(); ++i) rel.data()[i] = static_cast<float>(rng.uniform(-1, 1));
  inst.table = EmbeddingTable(dim, rel);
  Eigen::MatrixXd tokens(1 + static_cast<Eigen::Index>(rng.index(5)), dim);
  for (Eigen::Index i = 0; i < tokens.size(); ++i) tokens.data()[i] = rng.uniform(-1, 1);
  inst.instructions = encode_question(inst.model, tokens);
  return inst;
}

}  // namespace

TheoremCampaign theorem_campaign(std::size_t instances, std::uint64_t seed, int jobs) {
  std::vector<TheoremResult> results(instances);
  parallel_for(instances, jobs, [&](std::size_t i) {
    const auto inst = make_instance(seed * 1000003ULL + i);
    results[i] = theorem_check(inst.model, inst.kg, inst.subgraph, inst.gt, inst.instructions, inst.table);
  });
  TheoremCampaign c;
  c.instances = instances;
  for (const auto& r : results) {
    c.passes += r.pass;
    c.max_deviation = std::max(c.max_deviation, r.max_deviation);
    c.max_outside_magnitude = std::max(c.max_outside_magnitude, r.outside_magnitude);
  }
  return c;
}

nlohmann::json to_json(const TheoremCampaign& c) {
  return {{"instances", c.instances},
          {"passes", c.passes},
          {"max_deviation", c.max_deviation},
          {"max_outside_magnitude", c.max_outside_magnitude}};
}

namespace {

struct Layout {
  std::vector<std::vector<EntityId>> by_level;
  std::vector<int> level_of;
  /// Forward relation ids for the transition level -> level + 1.
  std::vector<std::vector<RelationId>> transition;
};

std::string entity_label(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ent_%04zu", i);
  return buf;
}

std::string relation_label(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "rel_%02zu", i);
  return buf;
}

/// Entities reached from `start` by following `relations` in order.
std::vector<EntityId> follow(const KnowledgeGraph& kg, EntityId start, std::span<const RelationId> relations) {
  std::set<EntityId> frontier{start};
  for (auto r : relations) {
    std::set<EntityId> next;
    for (auto u : frontier) {
      for (const auto& e : kg.out_edges(u)) {
        if (e.relation == r) next.insert(e.target);
      }
    }
    frontier = std::move(next);
  }
  return {frontier.begin(), frontier.end()};
}

bool is_transition(const Layout& layout, int level, RelationId r) {
  const auto& rs = layout.transition[static_cast<std::size_t>(level)];
  return std::find(rs.begin(), rs.end(), r) != rs.end();
}

std::string chain_text(const KnowledgeGraph& kg, const std::vector<RelationId>& relations,
                       EntityId entity) {
  std::string text;
  for (auto it = relations.rbegin(); it != relations.rend(); ++it) {
    text += "the " + kg.relation_label(*it) + " of ";
  }
  return text + kg.entity_label(entity);
}

/// Backward walk of `hops` steps from `answer` along transition edges; the
/// relation list is returned in forward order.
bool backward_walk(Rng& rng, const KnowledgeGraph& kg, const Layout& layout, EntityId answer, int hops,
                   EntityId& start, std::vector<RelationId>& relations) {
  relations.clear();
  EntityId cur = answer;
  for (int step = 0; step < hops; ++step) {
    const int level = layout.level_of[cur] - 1;
    std::vector<Edge> options;
    for (const auto& e : kg.out_edges(cur)) {
      if (kg.is_inverse(e.relation) && is_transition(layout, level, kg.forward_of(e.relation))) {
        options.push_back(e);
      }
    }
    if (options.empty()) return false;
    const auto& e = options[rng.index(options.size())];
    relations.push_back(kg.forward_of(e.relation));
    cur = e.target;
  }
  std::reverse(relations.begin(), relations.end());
  start = cur;
  return true;
}

/// Swaps one hop for another relation of the same level transition.
RelationPathSpec corrupt(Rng& rng, const Layout& layout, const RelationPathSpec& gold) {
  RelationPathSpec out = gold;
  const auto pos = rng.index(out.relations.size());
  const auto& options = layout.transition[pos];
  if (options.size() < 2) return out;
  auto r = out.relations[pos];
  while (r == out.relations[pos]) r = options[rng.index(options.size())];
  out.relations[pos] = r;
  return out;
}

}  // namespace

SyntheticDataset gen_synthetic(const SyntheticConfig& config) {
  if (config.max_hops < 1 || config.max_hops > 4) throw ConfigError("max_hops must lie in 1..4");
  const auto levels = static_cast<std::size_t>(config.max_hops) + 1;
  if (config.num_entities < 4 * levels) throw ConfigError("too few entities for the level layout");
  if (config.relations_per_level == 0) throw ConfigError("relations_per_level must be positive");
  if (config.max_answers == 0) throw ConfigError("max_answers must be positive");
  if (!(config.llm_path_accuracy >= 0.0 && config.llm_path_accuracy <= 1.0)) {
    throw ConfigError("llm_path_accuracy must lie in [0, 1]");
  }
  Rng rng(config.seed);

  Layout layout;
  std::vector<EntityId> perm(config.num_entities);
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<EntityId>(i);
  rng.shuffle(perm);
  layout.by_level.resize(levels);
  layout.level_of.resize(config.num_entities);
  const auto per_level = config.num_entities / levels;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    const auto level = std::min(i / per_level, levels - 1);
    layout.by_level[level].push_back(perm[i]);
    layout.level_of[perm[i]] = static_cast<int>(level);
  }
  for (auto& l : layout.by_level) std::sort(l.begin(), l.end());

  const auto num_transition = static_cast<std::size_t>(config.max_hops) * config.relations_per_level;
  const auto num_relations = num_transition + config.distractor_relations;
  std::vector<RelationId> rel_perm(num_relations);
  for (std::size_t i = 0; i < num_relations; ++i) rel_perm[i] = static_cast<RelationId>(i);
  rng.shuffle(rel_perm);
  layout.transition.resize(static_cast<std::size_t>(config.max_hops));
  for (std::size_t i = 0; i < num_transition; ++i) {
    layout.transition[i / config.relations_per_level].push_back(rel_perm[i]);
  }
  std::vector<RelationId> distractors(rel_perm.begin() + static_cast<std::ptrdiff_t>(num_transition), rel_perm.end());

  std::vector<Triple> triples;
  for (std::size_t level = 0; level + 1 < levels; ++level) {
    const auto& next = layout.by_level[level + 1];
    for (auto e : layout.by_level[level]) {
      for (auto r : layout.transition[level]) {
        if (!rng.bernoulli(config.edge_probability)) continue;
        triples.push_back({e, r, next[rng.index(next.size())]});
        if (rng.bernoulli(0.15)) triples.push_back({e, r, next[rng.index(next.size())]});
      }
    }
  }
  if (!distractors.empty()) {
    for (std::size_t level = 0; level < levels; ++level) {
      const auto& same = layout.by_level[level];
      for (auto e : same) {
        const double x = config.distractor_edges_per_entity;
        auto count = static_cast<std::size_t>(std::floor(x)) + (rng.bernoulli(x - std::floor(x)) ? 1 : 0);
        for (; count > 0; --count) {
          const auto t = same[rng.index(same.size())];
          if (t != e) triples.push_back({e, distractors[rng.index(distractors.size())], t});
        }
      }
    }
  }

  std::vector<std::string> entities(config.num_entities), relations(num_relations);
  for (std::size_t i = 0; i < entities.size(); ++i) entities[i] = entity_label(i);
  for (std::size_t i = 0; i < relations.size(); ++i) relations[i] = relation_label(i);
  SyntheticDataset data{KnowledgeGraph(entities, relations, std::move(triples)), {}};
  const auto& kg = data.kg;

  for (std::size_t qi = 0; qi < config.num_questions; ++qi) {
    const int hops = 1 + static_cast<int>(qi % static_cast<std::size_t>(config.max_hops));
    const bool multi = rng.bernoulli(config.multi_entity_fraction);
    bool done = false;
    for (int attempt = 0; attempt < 1000 && !done; ++attempt) {
      SyntheticQuestion sq;
      sq.hops = hops;
      auto& q = sq.question;
      const auto& targets = layout.by_level[static_cast<std::size_t>(hops)];
      const EntityId answer = targets[rng.index(targets.size())];

      EntityId e1 = 0;
      std::vector<RelationId> s1;
      if (!backward_walk(rng, kg, layout, answer, hops, e1, s1)) continue;
      std::vector<EntityId> answers = follow(kg, e1, s1);
      q.entities = {e1};
      sq.relation_paths = {{s1}};
      q.text = "what is " + chain_text(kg, s1, e1);
      if (multi) {
        EntityId e2 = 0;
        std::vector<RelationId> s2;
        if (!backward_walk(rng, kg, layout, answer, hops, e2, s2) || e2 == e1) continue;
        const auto other = follow(kg, e2, s2);
        std::vector<EntityId> both;
        std::set_intersection(answers.begin(), answers.end(), other.begin(), other.end(), std::back_inserter(both));
        answers = std::move(both);
        q.entities.push_back(e2);
        sq.relation_paths.push_back({s2});
        q.text = "which entity is " + chain_text(kg, s1, e1) + " and also " + chain_text(kg, s2, e2);
      }
      if (answers.empty() || answers.size() > config.max_answers) continue;

      std::vector<ReasoningPath> gold_paths;
      for (std::size_t i = 0; i < q.entities.size(); ++i) {
        const std::vector<EntityId> from{q.entities[i]};
        const std::vector<RelationPathSpec> spec{sq.relation_paths[i]};
        for (auto& p : instantiate_relation_paths(kg, from, spec, SIZE_MAX)) {
          if (std::binary_search(answers.begin(), answers.end(), p.terminal())) gold_paths.push_back(std::move(p));
        }
      }
      sq.ground_truth = ground_truth_from_paths(kg, gold_paths);
      for (const auto& spec : sq.relation_paths) {
        sq.llm_paths.push_back(rng.bernoulli(config.llm_path_accuracy) ? spec : corrupt(rng, layout, spec));
      }
      sq.llm_paths.push_back(corrupt(rng, layout, sq.relation_paths.front()));
      char id[32];
      std::snprintf(id, sizeof id, "syn%04zu", qi);
      q.id = id;
      q.answers = answers;
      for (auto a : answers) q.aliases.push_back({kg.entity_label(a)});
      data.questions.push_back(std::move(sq));
      done = true;
    }
    if (!done) throw DataError("could not generate a feasible question after 1000 attempts");
  }
  return data;
}

void write_synthetic(const SyntheticDataset& data, const std::filesystem::path& dir) {
  const auto& kg = data.kg;
  save_kg(kg, dir / "triples.tsv", dir / "entities.txt", dir / "relations.txt");
  const auto n = data.questions.size();
  const auto train_end = n * 7 / 10;
  const auto dev_end = n * 8 / 10;
  std::vector<Question> train, dev, test;
  std::vector<json> paths, gts;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& sq = data.questions[i];
    (i < train_end ? train : i < dev_end ? dev : test).push_back(sq.question);
    json specs = json::array();
    for (const auto& spec : sq.llm_paths) {
      json labels = json::array();
      for (auto r : spec.relations) labels.push_back(kg.relation_label(r));
      specs.push_back(std::move(labels));
    }
    paths.push_back({{"id", sq.question.id}, {"paths", std::move(specs)}});
    json facts = json::array();
    for (const auto& f : sq.ground_truth.facts) {
      facts.push_back({kg.entity_label(f.head), kg.relation_label(f.relation), kg.entity_label(f.tail)});
    }
    gts.push_back({{"id", sq.question.id}, {"hops", sq.hops}, {"facts", std::move(facts)}});
  }
  save_questions(train, kg, dir / "train.jsonl");
  save_questions(dev, kg, dir / "dev.jsonl");
  save_questions(test, kg, dir / "test.jsonl");
  write_jsonl(dir / "relation_paths.jsonl", paths);
  write_jsonl(dir / "ground_truth.jsonl", gts);
}

std::map<std::string, std::vector<RelationPathSpec>> load_relation_paths(const std::filesystem::path& file,
                                                                         const KnowledgeGraph& kg) {
  std::map<std::string, std::vector<RelationPathSpec>> out;
  for_each_jsonl(file, [&](std::size_t line, const json& j) {
    try {
      auto& specs = out[j.at("id").get<std::string>()];
      for (const auto& p : j.at("paths")) {
        RelationPathSpec spec;
        for (const auto& r : p) spec.relations.push_back(kg.relation_id(r.get<std::string>()));
        if (spec.relations.empty()) throw ParseError(file.string(), line, "empty relation path");
        specs.push_back(std::move(spec));
      }
    } catch (const json::exception& e) {
      throw ParseError(file.string(), line, e.what());
    }
  });
  return out;
}

std::vector<RetrievalTableRow> retrieval_analysis(
    const KnowledgeGraph& kg, std::span<const Question> questions,
    std::span<const std::pair<std::string, std::vector<RetrievalResult>>> retrievers) {
  std::vector<int> hops;
  for (const auto& q : questions) hops.push_back(question_hops(kg, q));
  const std::pair<const char*, bool (*)(int)> slices[] = {
      {"hops=1", [](int h) { return h == 1; }},
      {"hops=2", [](int h) { return h == 2; }},
      {"hops>=3", [](int h) { return h >= 3; }},
  };
  std::vector<RetrievalTableRow> rows;
  for (const auto& [name, results] : retrievers) {
    std::map<std::string, const RetrievalResult*> by_id;
    for (const auto& r : results) by_id[r.id] = &r;
    for (const auto& [slice, member] : slices) {
      RetrievalTableRow row;
      row.retriever = name;
      row.slice = slice;
      std::vector<double> tokens;
      std::size_t covered = 0;
      for (std::size_t i = 0; i < questions.size(); ++i) {
        if (!member(hops[i])) continue;
        const auto it = by_id.find(questions[i].id);
        if (it == by_id.end()) throw DataError("retriever " + name + " has no result for " + questions[i].id);
        ++row.count;
        covered += answer_coverage(it->second->paths, questions[i].answers);
        tokens.push_back(static_cast<double>(it->second->stats.num_input_tokens));
      }
      if (row.count == 0) continue;
      row.coverage = 100.0 * static_cast<double>(covered) / static_cast<double>(row.count);
      row.median_tokens = median(std::move(tokens));
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::string retrieval_table_csv(std::span<const RetrievalTableRow> rows) {
  std::ostringstream out;
  out << "retriever,slice,count,coverage,median_tokens\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, ",%zu,%.1f,%.1f\n", r.count, r.coverage, r.median_tokens);
    out << r.retriever << ',' << r.slice << buf;
  }
  return out.str();
}

}  // namespace gnnrag

#pragma once

// Shared builders and brute-force oracles for the test suites. Oracles here are
// written independently of the library's algorithms.

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gnnrag/embeddings.hpp"
#include "gnnrag/gnn.hpp"
#include "gnnrag/kg.hpp"
#include "gnnrag/random.hpp"
#include "gnnrag/subgraph.hpp"

namespace gnnrag::testing {

inline KnowledgeGraph make_kg(const std::vector<std::string>& entities,
                              const std::vector<std::string>& relations,
                              const std::vector<std::tuple<std::string, std::string, std::string>>& facts) {
  std::vector<Triple> triples;
  auto idx = [](const std::vector<std::string>& v, const std::string& s) {
    return static_cast<std::uint32_t>(std::find(v.begin(), v.end(), s) - v.begin());
  };
  for (const auto& [h, r, t] : facts) triples.push_back({idx(entities, h), idx(relations, r), idx(entities, t)});
  return KnowledgeGraph(entities, relations, triples);
}

/// Random KG with `n` entities "e0".."e{n-1}", `num_rel` relations and
/// roughly `num_edges` forward triples.
inline KnowledgeGraph random_kg(Rng& rng, std::size_t n, std::size_t num_rel, std::size_t num_edges) {
  std::vector<std::string> entities, relations;
  for (std::size_t i = 0; i < n; ++i) entities.push_back("e" + std::to_string(i));
  for (std::size_t i = 0; i < num_rel; ++i) relations.push_back("r" + std::to_string(i));
  std::vector<Triple> triples;
  for (std::size_t i = 0; i < num_edges; ++i) {
    const auto h = static_cast<EntityId>(rng.index(n));
    const auto t = static_cast<EntityId>(rng.index(n));
    if (h == t) continue;
    triples.push_back({h, static_cast<RelationId>(rng.index(num_rel)), t});
  }
  return KnowledgeGraph(entities, relations, triples);
}

/// Dense personalized PageRank by power iteration over the inverse-closed
/// adjacency: x = alpha * s + (1 - alpha) * P^T x.
inline std::vector<double> dense_ppr(const KnowledgeGraph& kg, const std::vector<EntityId>& seeds,
                                     double alpha, int iterations = 2000) {
  const auto n = kg.num_entities();
  std::vector<double> s(n, 0.0), x(n, 0.0);
  for (auto v : seeds) s[v] += 1.0 / static_cast<double>(seeds.size());
  x = s;
  for (int it = 0; it < iterations; ++it) {
    std::vector<double> next(n, 0.0);
    for (EntityId u = 0; u < n; ++u) {
      next[u] += alpha * s[u];
      const auto deg = kg.degree(u);
      if (deg == 0) {
        next[u] += (1.0 - alpha) * x[u];
        continue;
      }
      for (const auto& e : kg.out_edges(u)) next[e.target] += (1.0 - alpha) * x[u] / static_cast<double>(deg);
    }
    x = std::move(next);
  }
  return x;
}

/// Every simple path from `from` to `to` over a local triple list, as
/// interleaved (entity, relation, entity, ...) sequences of global ids.
inline std::vector<std::vector<std::uint32_t>> all_simple_paths(const Subgraph& sg, LocalId from,
                                                                LocalId to) {
  std::vector<std::vector<std::uint32_t>> out;
  std::vector<char> visited(sg.size(), 0);
  std::vector<std::uint32_t> seq{sg.nodes[from]};
  std::function<void(LocalId)> dfs = [&](LocalId u) {
    if (u == to) {
      out.push_back(seq);
      return;
    }
    visited[u] = 1;
    for (const auto& t : sg.triples) {
      if (t.head != u || visited[t.tail]) continue;
      seq.push_back(t.relation);
      seq.push_back(sg.nodes[t.tail]);
      dfs(t.tail);
      seq.pop_back();
      seq.pop_back();
    }
    visited[u] = 0;
  };
  dfs(from);
  return out;
}

inline std::vector<std::vector<std::uint32_t>> minimal_paths(std::vector<std::vector<std::uint32_t>> paths) {
  if (paths.empty()) return paths;
  std::size_t shortest = SIZE_MAX;
  for (const auto& p : paths) shortest = std::min(shortest, p.size());
  std::erase_if(paths, [&](const auto& p) { return p.size() != shortest; });
  std::sort(paths.begin(), paths.end());
  return paths;
}

/// Reference GNN forward written directly from the update equations, with
/// explicit concatenations and no shared intermediate caches.
inline Eigen::VectorXd reference_forward(const GnnModel& model, const Subgraph& sg,
                                         const Eigen::MatrixXd& tokens, const EmbeddingTable& table,
                                         std::vector<Eigen::MatrixXd>* states_out = nullptr) {
  const auto& p = model.params();
  const int d = model.hidden();
  const int L = model.layers();
  const int K = static_cast<int>(p.attention.rows());
  auto relu = [](Eigen::VectorXd v) {
    for (auto& x : v) x = x > 0 ? x : 0;
    return v;
  };

  std::vector<Eigen::VectorXd> q(K);
  for (int k = 0; k < K; ++k) {
    std::vector<Eigen::VectorXd> proj;
    std::vector<double> logit;
    for (int t = 0; t < tokens.rows(); ++t) {
      Eigen::VectorXd pt = p.question_proj * tokens.row(t).transpose();
      proj.push_back(pt);
      logit.push_back(p.attention.row(k).dot(pt));
    }
    double mx = *std::max_element(logit.begin(), logit.end());
    double z = 0;
    for (double l : logit) z += std::exp(l - mx);
    q[k] = Eigen::VectorXd::Zero(d);
    for (std::size_t t = 0; t < proj.size(); ++t) q[k] += std::exp(logit[t] - mx) / z * proj[t];
  }

  const auto N = sg.size();
  std::vector<Eigen::VectorXd> h(N, Eigen::VectorXd::Zero(d));
  for (auto s : sg.seeds) h[s] = p.seed_state;
  if (states_out) {
    states_out->clear();
    Eigen::MatrixXd m(N, d);
    for (std::size_t v = 0; v < N; ++v) m.row(v) = h[v].transpose();
    states_out->push_back(m);
  }
  for (int l = 1; l <= L; ++l) {
    const auto& qk = q[std::min(l, K) - 1];
    std::vector<Eigen::VectorXd> next(N);
    for (std::size_t v = 0; v < N; ++v) {
      Eigen::VectorXd msg = Eigen::VectorXd::Zero(d);
      for (const auto& t : sg.triples) {
        if (t.tail != v) continue;
        Eigen::VectorXd r = p.relation_proj * table.relation_input(t.relation);
        double omega = 1.0 / (1.0 + std::exp(-(p.relevance_weight.dot(qk.cwiseProduct(r)) + p.relevance_bias[0])));
        Eigen::VectorXd cat(2 * d);
        cat << h[t.head], r;
        msg += omega * relu(p.message_weight[l - 1] * cat + p.message_bias[l - 1]);
      }
      Eigen::VectorXd cat(2 * d);
      cat << h[v], msg;
      next[v] = relu(p.combine_weight[l - 1] * cat + p.combine_bias[l - 1]);
    }
    h = std::move(next);
    if (states_out) {
      Eigen::MatrixXd m(N, d);
      for (std::size_t v = 0; v < N; ++v) m.row(v) = h[v].transpose();
      states_out->push_back(m);
    }
  }
  Eigen::VectorXd logits(N);
  for (std::size_t v = 0; v < N; ++v) logits[v] = p.output_weight.dot(h[v]);
  Eigen::VectorXd e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

/// Embedding table with random relation rows.
inline EmbeddingTable random_table(Rng& rng, std::size_t num_rel, std::size_t dim) {
  Eigen::MatrixXf rel(num_rel, dim);
  for (std::size_t i = 0; i < num_rel; ++i)
    for (std::size_t j = 0; j < dim; ++j) rel(i, j) = static_cast<float>(rng.uniform(-1, 1));
  return EmbeddingTable(dim, rel);
}

inline Eigen::MatrixXd random_tokens(Rng& rng, int rows, std::size_t dim) {
  Eigen::MatrixXd m(rows, dim);
  for (int i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < dim; ++j) m(i, j) = rng.uniform(-1, 1);
  return m;
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;
  std::size_t checked = 0;
};

/// Central finite differences over every parameter entry. Relative error is
/// |analytic - numeric| / max(|analytic|, |numeric|, floor).
inline GradCheckResult finite_difference_check(GnnModel model, const Subgraph& sg,
                                               const Eigen::MatrixXd& tokens,
                                               const std::vector<EntityId>& answers,
                                               const EmbeddingTable& table, double h = 1e-5,
                                               double floor = 1e-6) {
  GradCheckResult res;
  auto lg = loss_and_gradients(model, sg, tokens, answers, table);
  if (!lg) return res;
  auto names = model.params().tensor_names();
  auto analytic = lg->gradients.tensors();
  auto theta = model.params().tensors();
  for (std::size_t t = 0; t < theta.size(); ++t) {
    const bool frozen_bias = !model.config().use_bias && names[t] != "relevance_bias" &&
                             names[t].find("_bias") != std::string::npos;
    if (frozen_bias) continue;
    for (std::size_t j = 0; j < theta[t].size(); ++j) {
      const double old = theta[t][j];
      theta[t][j] = old + h;
      const double plus = loss_only(model, sg, tokens, answers, table);
      theta[t][j] = old - h;
      const double minus = loss_only(model, sg, tokens, answers, table);
      theta[t][j] = old;
      const double numeric = (plus - minus) / (2 * h);
      const double a = analytic[t][j];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++res.checked;
      if (err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst = names[t] + "[" + std::to_string(j) + "] analytic=" + std::to_string(a) +
                    " numeric=" + std::to_string(numeric);
      }
    }
  }
  return res;
}

/// Random connected-ish subgraph instance for model-level property tests.
struct GnnInstance {
  KnowledgeGraph kg;
  Subgraph subgraph;
  EmbeddingTable table;
  Eigen::MatrixXd tokens;
  std::vector<EntityId> answers;
};

inline GnnInstance random_instance(std::uint64_t seed, std::size_t nodes = 5, std::size_t dim = 8,
                                   std::size_t num_rel = 3) {
  Rng rng(seed);
  GnnInstance inst;
  inst.kg = random_kg(rng, nodes, num_rel, nodes * 2);
  std::vector<EntityId> all(nodes);
  for (std::size_t i = 0; i < nodes; ++i) all[i] = static_cast<EntityId>(i);
  std::vector<EntityId> seeds{static_cast<EntityId>(rng.index(nodes))};
  inst.subgraph = induce_subgraph(inst.kg, all, seeds, "q");
  inst.table = random_table(rng, num_rel, dim);
  inst.tokens = random_tokens(rng, 3, dim);
  EntityId a = static_cast<EntityId>(rng.index(nodes));
  inst.answers = {a};
  if (rng.bernoulli(0.5)) inst.answers.push_back(static_cast<EntityId>((a + 1) % nodes));
  return inst;
}

}  // namespace gnnrag::testing

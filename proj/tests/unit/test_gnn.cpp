#include <doctest.h>

#include <cmath>
#include <numeric>

#include "../support/fixtures.hpp"
#include "gnnrag/error.hpp"
#include "gnnrag/io.hpp"
#include "gnnrag/gnn.hpp"

using namespace gnnrag;
using namespace gnnrag::testing;

namespace {

GnnConfig small_config(int layers = 2, int hidden = 5, int instructions = 0, std::uint64_t seed = 7) {
  GnnConfig c;
  c.layers = layers;
  c.hidden = hidden;
  c.instructions = instructions;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("config validation rejects degenerate shapes") {
  GnnConfig c;
  c.layers = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = GnnConfig{};
  c.hidden = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = GnnConfig{};
  CHECK(c.num_instructions() == 3);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("encode_question: single token gives the projected token for every instruction") {
  GnnModel model(small_config(3, 6, 3), 8);
  Rng rng(1);
  Eigen::MatrixXd tokens = random_tokens(rng, 1, 8);
  auto q = encode_question(model, tokens);
  Eigen::VectorXd proj = model.params().question_proj * tokens.row(0).transpose();
  REQUIRE(q.rows() == 3);
  for (int k = 0; k < 3; ++k) CHECK((q.row(k).transpose() - proj).norm() < 1e-12);
}

TEST_CASE("encode_question: identical tokens split attention evenly") {
  GnnModel model(small_config(2, 6), 8);
  Rng rng(2);
  Eigen::MatrixXd one = random_tokens(rng, 1, 8);
  Eigen::MatrixXd two(2, 8);
  two << one, one;
  // Equal weights of 0.5 on identical rows reproduce the single projected token.
  auto q = encode_question(model, two);
  Eigen::VectorXd proj = model.params().question_proj * one.row(0).transpose();
  for (int k = 0; k < q.rows(); ++k) CHECK((q.row(k).transpose() - proj).norm() < 1e-12);
}

TEST_CASE("encode_question: hand-set 3-token question matches direct attention formula") {
  GnnConfig c = small_config(2, 4, 2);
  GnnModel model(c, 8);
  auto& p = model.params();
  p.question_proj.setZero();
  for (int i = 0; i < 4; ++i) p.question_proj(i, i) = 1.0;  // proj = first 4 coordinates
  p.attention << 1, 0, 0, 0,
                 0, 2, 0, 0;
  Eigen::MatrixXd tokens = Eigen::MatrixXd::Zero(3, 8);
  tokens.row(0) << 1, 0, 0, 0, 9, 9, 9, 9;
  tokens.row(1) << 0, 1, 0, 0, 9, 9, 9, 9;
  tokens.row(2) << 0, 0, 1, 0, 9, 9, 9, 9;
  auto q = encode_question(model, tokens);
  // Head 1 logits (1, 0, 0); head 2 logits (0, 2, 0).
  const double e = std::exp(1.0);
  const double w1[3] = {e / (e + 2), 1 / (e + 2), 1 / (e + 2)};
  const double e2 = std::exp(2.0);
  const double w2[3] = {1 / (e2 + 2), e2 / (e2 + 2), 1 / (e2 + 2)};
  CHECK(q(0, 0) == doctest::Approx(w1[0]).epsilon(1e-12));
  CHECK(q(0, 1) == doctest::Approx(w1[1]).epsilon(1e-12));
  CHECK(q(0, 2) == doctest::Approx(w1[2]).epsilon(1e-12));
  CHECK(q(0, 3) == doctest::Approx(0.0));
  CHECK(q(1, 0) == doctest::Approx(w2[0]).epsilon(1e-12));
  CHECK(q(1, 1) == doctest::Approx(w2[1]).epsilon(1e-12));
  CHECK(q(1, 2) == doctest::Approx(w2[2]).epsilon(1e-12));
}

TEST_CASE("relevance: zero scorer gives one half") {
  GnnModel model(small_config(), 8);
  model.params().relevance_weight.setZero();
  model.params().relevance_bias.setZero();
  Rng rng(3);
  auto table = random_table(rng, 3, 8);
  Eigen::VectorXd q = Eigen::VectorXd::Random(5);
  for (RelationId r = 0; r < 6; ++r) CHECK(relevance(model, q, r, table) == 0.5);
}

TEST_CASE("relevance: hand-set parameters match the scalar formula") {
  GnnModel model(small_config(1, 4), 2);
  auto& p = model.params();
  p.relation_proj.setZero();
  p.relation_proj(0, 0) = 1.0;  // r_hat = (r0, r1, dir, 0)
  p.relation_proj(1, 1) = 1.0;
  p.relation_proj(2, 2) = 1.0;
  p.relevance_weight << 0.5, -1.0, 2.0, 3.0;
  p.relevance_bias << 0.25;
  Eigen::MatrixXf rel(1, 2);
  rel << 0.5f, -2.0f;
  EmbeddingTable table(2, rel);
  Eigen::VectorXd q(4);
  q << 1.0, 0.5, -1.0, 7.0;
  // forward: 0.5*1*0.5 + (-1)*0.5*(-2) + 2*(-1)*(+1) + 0 + 0.25 = -0.5
  CHECK(relevance(model, q, 0, table) == doctest::Approx(1.0 / (1.0 + std::exp(0.5))).epsilon(1e-12));
  // inverse: direction flag -1 flips the third term: 0.25 + 1 + 2 + 0.25 = 3.5
  CHECK(relevance(model, q, 1, table) == doctest::Approx(1.0 / (1.0 + std::exp(-3.5))).epsilon(1e-12));
}

TEST_CASE("forward: single-node subgraph puts all mass on that node") {
  auto kg = make_kg({"a"}, {"r"}, {});
  std::vector<EntityId> seeds{0};
  auto sg = induce_subgraph(kg, {0}, seeds);
  GnnModel model(small_config(), 8);
  Rng rng(4);
  auto table = random_table(rng, 1, 8);
  auto scores = forward(model, sg, encode_question(model, random_tokens(rng, 2, 8)), table);
  REQUIRE(scores.probabilities.size() == 1);
  CHECK(scores.probabilities[0] == 1.0);
}

TEST_CASE("forward: 4-node toy graph matches the reference implementation") {
  auto kg = make_kg({"s", "a", "b", "t"}, {"r0", "r1"},
                    {{"s", "r0", "a"}, {"a", "r1", "t"}, {"s", "r1", "b"}, {"b", "r0", "t"}});
  std::vector<EntityId> seeds{0};
  auto sg = induce_subgraph(kg, {0, 1, 2, 3}, seeds);
  GnnModel model(small_config(3, 6, 2, 7), 8);
  Rng rng(7);
  auto table = random_table(rng, 2, 8);
  auto tokens = random_tokens(rng, 3, 8);
  auto scores = forward(model, sg, encode_question(model, tokens), table);
  auto expected = reference_forward(model, sg, tokens, table);
  CHECK((scores.probabilities - expected).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("forward: probabilities are a distribution and equivariant under relabeling") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto inst = random_instance(seed, 7);
    GnnModel model(small_config(3, 5, 0, seed), 8);
    auto instr = encode_question(model, inst.tokens);
    auto scores = forward(model, inst.subgraph, instr, inst.table);
    CHECK(std::abs(scores.probabilities.sum() - 1.0) < 1e-6);
    CHECK(scores.probabilities.minCoeff() >= 0.0);

    // Relabel entity ids with a permutation and rebuild the same structure.
    std::vector<EntityId> perm(inst.kg.num_entities());
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(seed + 100);
    rng.shuffle(perm);
    std::vector<std::string> labels(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) labels[perm[i]] = inst.kg.entity_label(i);
    std::vector<Triple> triples;
    for (const auto& t : inst.kg.forward_triples()) triples.push_back({perm[t.head], t.relation, perm[t.tail]});
    KnowledgeGraph kg2(labels, inst.kg.relation_labels(), triples);
    std::vector<EntityId> all(perm.size());
    std::iota(all.begin(), all.end(), 0);
    std::vector<EntityId> seeds2;
    for (auto s : inst.subgraph.seeds) seeds2.push_back(perm[inst.subgraph.nodes[s]]);
    auto sg2 = induce_subgraph(kg2, all, seeds2);
    auto scores2 = forward(model, sg2, instr, inst.table);
    for (std::size_t v = 0; v < perm.size(); ++v) {
      CHECK(std::abs(scores.probabilities[static_cast<Eigen::Index>(v)] -
                     scores2.probabilities[perm[v]]) < 1e-12);
    }
  }
}

TEST_CASE("forward: bias-free oracle mode keeps unreached non-seed nodes at zero") {
  // s -> a, x isolated from any relevant fact.
  auto kg = make_kg({"s", "a", "x"}, {"r"}, {{"s", "r", "a"}, {"x", "r", "s"}});
  std::vector<EntityId> seeds{0};
  auto sg = induce_subgraph(kg, {0, 1, 2}, seeds);
  GnnConfig c = small_config(3, 5);
  c.use_bias = false;
  c.relevance = RelevanceMode::Oracle;
  GnnModel model(c, 8);
  Rng rng(5);
  auto table = random_table(rng, 1, 8);
  EdgeRelevance oracle(sg.triples.size(), 0.0);
  for (std::size_t e = 0; e < sg.triples.size(); ++e) {
    const auto& t = sg.triples[e];
    const bool touches_x = sg.nodes[t.head] == 2 || sg.nodes[t.tail] == 2;
    oracle[e] = touches_x ? 0.0 : 1.0;
  }
  auto scores = forward(model, sg, encode_question(model, random_tokens(rng, 2, 8)), table, &oracle);
  for (const auto& h : scores.layer_states) CHECK(h.row(2).norm() == 0.0);
}

TEST_CASE("loss: output equal to target gives the target entropy and zero gradients") {
  auto inst = random_instance(11, 4);
  GnnModel model(small_config(), 8);
  model.params().output_weight.setZero();  // uniform output
  std::vector<EntityId> all{0, 1, 2, 3};
  auto lg = loss_and_gradients(model, inst.subgraph, inst.tokens, all, inst.table);
  REQUIRE(lg);
  CHECK(lg->loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  for (const auto& t : lg->gradients.tensors())
    for (double g : t) CHECK(std::abs(g) < 1e-12);
}

TEST_CASE("loss: two answers get a uniform half/half target") {
  auto inst = random_instance(12, 5);
  GnnModel model(small_config(), 8);
  std::vector<EntityId> answers{1, 3};
  auto lg = loss_and_gradients(model, inst.subgraph, inst.tokens, answers, inst.table);
  REQUIRE(lg);
  const auto& p = lg->scores.probabilities;
  CHECK(lg->loss == doctest::Approx(-0.5 * (std::log(p[1]) + std::log(p[3]))).epsilon(1e-10));
  // d loss / d logit_v = p_v - target_v
  Eigen::VectorXd target = Eigen::VectorXd::Zero(5);
  target[1] = target[3] = 0.5;
  Eigen::VectorXd expected = lg->scores.final_states.transpose() * (p - target);
  CHECK((lg->gradients.output_weight - expected).norm() < 1e-12);
}

TEST_CASE("loss: answer outside the subgraph is a skip, not an error") {
  auto kg = make_kg({"s", "a", "far"}, {"r"}, {{"s", "r", "a"}});
  std::vector<EntityId> seeds{0};
  auto sg = induce_subgraph(kg, {0, 1}, seeds);
  GnnModel model(small_config(), 8);
  Rng rng(6);
  auto table = random_table(rng, 1, 8);
  std::vector<EntityId> answers{2};
  CHECK_FALSE(loss_and_gradients(model, sg, random_tokens(rng, 2, 8), answers, table).has_value());
}

TEST_CASE("gradients match central finite differences on a 5-node instance") {
  auto inst = random_instance(42, 5);
  GnnModel model(small_config(2, 5, 2, 42), 8);
  auto res = finite_difference_check(model, inst.subgraph, inst.tokens, inst.answers, inst.table);
  INFO(res.worst);
  CHECK(res.checked == model.params().size());
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("gradients match finite differences across seeds and configurations") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto inst = random_instance(1000 + seed, 4 + seed % 4);
    GnnConfig c = small_config(1 + static_cast<int>(seed % 3), 4 + static_cast<int>(seed % 3),
                               1 + static_cast<int>(seed % 2), seed);
    c.use_bias = seed % 4 != 0;
    GnnModel model(c, 8);
    auto res = finite_difference_check(model, inst.subgraph, inst.tokens, inst.answers, inst.table);
    INFO("seed " << seed << " " << res.worst);
    CHECK(res.max_rel_error < 1e-4);
  }
}

TEST_CASE("checkpoint round trip preserves float32 parameters") {
  GnnConfig c = small_config(2, 6, 1, 3);
  GnnModel model(c, 8);
  const auto file = std::filesystem::temp_directory_path() / "gnnrag_ckpt_test.bin";
  save_checkpoint(model, file);
  auto loaded = load_checkpoint(file);
  CHECK(loaded.config().layers == 2);
  CHECK(loaded.config().hidden == 6);
  CHECK(loaded.config().num_instructions() == 1);
  CHECK(loaded.embed_dim() == 8);
  auto a = model.params().tensors();
  auto b = loaded.params().tensors();
  for (std::size_t t = 0; t < a.size(); ++t)
    for (std::size_t j = 0; j < a[t].size(); ++j)
      CHECK(b[t][j] == static_cast<double>(static_cast<float>(a[t][j])));
  // Saving the loaded model reproduces the file byte for byte.
  const auto file2 = std::filesystem::temp_directory_path() / "gnnrag_ckpt_test2.bin";
  save_checkpoint(loaded, file2);
  CHECK(file_sha256(file) == file_sha256(file2));
}

TEST_CASE("training memorizes a single example and is deterministic") {
  auto kg = make_kg({"s", "a", "b", "c"}, {"r0", "r1"},
                    {{"s", "r0", "a"}, {"s", "r1", "b"}, {"a", "r1", "c"}});
  Question q{"q1", "r0 ?", {0}, {1}, {{"a"}}};
  std::vector<Question> qs{q};
  auto table = make_hash_table(kg, qs, 16);
  std::vector<EntityId> seeds{0};
  auto sg = induce_subgraph(kg, {0, 1, 2, 3}, seeds, "q1");
  std::vector<TrainingExample> data{{&sg, &qs[0]}};
  GnnConfig c = small_config(2, 8, 0, 9);
  c.epochs = 60;
  c.learning_rate = 0.02;
  GnnModel model(c, 16);
  auto r1 = train(model, data, {}, table);
  auto r2 = train(model, data, {}, table);
  REQUIRE(r1.log.size() == 60);
  CHECK(r1.log.back().loss < r1.log.front().loss);
  // After the first few Adam steps the loss keeps falling.
  for (std::size_t i = 10; i < r1.log.size(); ++i) CHECK(r1.log[i].loss <= r1.log[i - 1].loss + 1e-9);
  CHECK(hits_at_1(r1.model, data, table) == 1.0);
  CHECK(r1.log.back().loss == r2.log.back().loss);
}

TEST_CASE("training with zero epochs returns the initialization") {
  auto inst = random_instance(3, 5);
  Question q{"q", "", {inst.subgraph.nodes[inst.subgraph.seeds[0]]}, inst.answers, {}};
  EmbeddingTable table = inst.table;
  table.add_question("q", QuestionEmbedding{inst.tokens.cast<float>(), Eigen::VectorXf::Zero(8)});
  std::vector<TrainingExample> data{{&inst.subgraph, &q}};
  GnnConfig c = small_config();
  c.epochs = 0;
  GnnModel model(c, 8);
  auto r = train(model, data, {}, table);
  CHECK(r.log.empty());
  auto a = model.params().tensors();
  auto b = r.model.params().tensors();
  for (std::size_t t = 0; t < a.size(); ++t) CHECK(std::equal(a[t].begin(), a[t].end(), b[t].begin()));
}

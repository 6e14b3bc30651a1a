#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "../support/fixtures.hpp"
#include "gnnrag/eval.hpp"
#include "gnnrag/io.hpp"

using namespace gnnrag;
using namespace gnnrag::testing;
namespace fs = std::filesystem;

namespace {

using Preds = std::vector<std::string>;

QuestionRow row(std::string id, bool hit, int hops, std::size_t ents, std::size_t tokens) {
  QuestionRow r;
  r.id = std::move(id);
  r.hit = hit;
  r.h1 = hit;
  r.f1 = hit ? 1.0 : 0.0;
  r.coverage = hit;
  r.hops = hops;
  r.num_entities = ents;
  r.input_tokens = tokens;
  return r;
}

}  // namespace

TEST_CASE("normalization") {
  CHECK(normalize_answer("  The  Answer is English. ") == "the answer is english");
  CHECK(normalize_answer("English ") == "english");
  CHECK(normalize_answer("\"Jamaican\tEnglish\"") == "jamaican english");
  CHECK(normalize_answer("U.S.") == "u.s");
  CHECK(normalize_answer("...").empty());
}

TEST_CASE("hit") {
  CHECK(hit("The answer is English.", {{"English"}}));
  CHECK(!hit("", {{"English"}}));
  CHECK(!hit("French", {{"English"}}));
  CHECK(hit("They mostly speak Jamaican English at home", {{"Patois", "Jamaican English"}}));
  CHECK(!hit("anything", {}));

  // Substring oracle over normalized strings.
  const std::vector<std::pair<std::string, std::string>> cases{
      {"Ontario is the province", "ontario"}, {"the capital: Kingston!", "Kingston"},
      {"nothing here", "Kingston"}, {"KINGSTON", "kingston"}};
  for (const auto& [gen, alias] : cases) {
    const bool expected = normalize_answer(gen).find(normalize_answer(alias)) != std::string::npos;
    CHECK(hit(gen, {{alias}}) == expected);
  }
}

TEST_CASE("h1") {
  CHECK(h1(Preds{"English", "French"}, {{"English"}}));
  CHECK(!h1(Preds{"French", "English"}, {{"English"}}));
  CHECK(h1(Preds{"english"}, {{"English "}}));
  CHECK(!h1(Preds{}, {{"English"}}));
}

TEST_CASE("f1") {
  CHECK(f1(Preds{"a", "b"}, {{"a"}, {"b"}}) == 1.0);
  CHECK(f1(Preds{"x"}, {{"a"}}) == 0.0);
  CHECK(f1(Preds{"a", "b"}, {{"a"}, {"c"}, {"d"}}) == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(f1(Preds{}, {{"a"}}) == 0.0);
  CHECK(f1(Preds{"a"}, {}) == 0.0);
  // Alias matching and duplicate predictions.
  CHECK(f1(Preds{"Jamaican English", "jamaican english"}, {{"English", "Jamaican English"}}) == 1.0);
}

TEST_CASE("metric invariants on random instances") {
  Rng rng(4);
  const std::vector<std::string> vocab{"a", "b", "c", "d", "e", "f"};
  for (int trial = 0; trial < 300; ++trial) {
    Preds preds;
    for (auto n = rng.index(4); n > 0; --n) preds.push_back(vocab[rng.index(vocab.size())]);
    GoldAliases gold;
    for (auto n = 1 + rng.index(3); n > 0; --n) gold.push_back({vocab[rng.index(vocab.size())]});
    const double f = f1(preds, gold);
    CHECK(f >= 0.0);
    CHECK(f <= 1.0);
    if (h1(preds, gold)) {
      CHECK(f > 0.0);
      std::string joined;
      for (const auto& p : preds) joined += p + "\n";
      CHECK(hit(joined, gold));
    }
    std::set<std::string> ps(preds.begin(), preds.end()), gs;
    for (const auto& g : gold) gs.insert(g[0]);
    CHECK((f == 1.0) == (!ps.empty() && ps == gs));
  }
}

TEST_CASE("answer_coverage") {
  auto kg = make_kg({"a", "b", "c"}, {"r"}, {{"a", "r", "b"}, {"b", "r", "c"}});
  ReasoningPath p;
  p.entities = {0, 1};
  p.relations = {0};
  CHECK(!answer_coverage(std::vector<ReasoningPath>{}, std::vector<EntityId>{1}));
  CHECK(answer_coverage(std::vector<ReasoningPath>{p}, std::vector<EntityId>{1}));
  CHECK(!answer_coverage(std::vector<ReasoningPath>{p}, std::vector<EntityId>{0}));

  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<ReasoningPath> paths;
    for (auto n = rng.index(5); n > 0; --n) {
      ReasoningPath q;
      q.entities = {static_cast<EntityId>(rng.index(20)), static_cast<EntityId>(rng.index(20))};
      q.relations = {0};
      paths.push_back(q);
    }
    std::vector<EntityId> gold{static_cast<EntityId>(rng.index(20)), static_cast<EntityId>(rng.index(20))};
    bool expected = false;
    for (const auto& path : paths)
      for (auto g : gold) expected = expected || path.entities.back() == g;
    CHECK(answer_coverage(paths, gold) == expected);
  }
}

TEST_CASE("question hops") {
  auto kg = make_kg({"a", "b", "c", "d", "z"}, {"r"}, {{"a", "r", "b"}, {"b", "r", "c"}, {"d", "r", "c"}});
  Question q;
  q.entities = {0};
  q.answers = {2};
  CHECK(question_hops(kg, q) == 2);
  q.answers = {2, 1};
  CHECK(question_hops(kg, q) == 1);
  q.entities = {0, 3};
  q.answers = {2};
  CHECK(question_hops(kg, q) == 1);
  q.answers = {4};
  CHECK(question_hops(kg, q) == -1);
}

TEST_CASE("median") {
  CHECK(median({1, 2, 100}) == 2.0);
  CHECK(median({4, 1, 3, 2}) == 2.5);
  CHECK(median({7}) == 7.0);
  CHECK(median({}) == 0.0);
}

TEST_CASE("aggregate") {
  CHECK(aggregate({}).slices.empty());

  auto one = aggregate({row("q", true, 1, 1, 10)});
  REQUIRE(one.slice("all"));
  CHECK(one.slice("all")->hit == 100.0);
  CHECK(one.slice("hops=2") == nullptr);

  std::vector<QuestionRow> rows{row("q1", true, 1, 1, 1), row("q2", false, 2, 2, 2), row("q3", true, 3, 1, 100),
                                row("q4", false, 4, 2, 5), row("q5", true, -1, 1, 3)};
  auto rep = aggregate(rows);
  CHECK(rep.slice("all")->count == 5);
  CHECK(rep.slice("all")->hit == doctest::Approx(60.0));
  CHECK(rep.slice("all")->median_tokens == 3.0);
  CHECK(rep.slice("hops=1")->count == 1);
  CHECK(rep.slice("hops=2")->count == 1);
  CHECK(rep.slice("hops>=3")->count == 2);
  CHECK(rep.slice("multi-hop")->count == 3);
  CHECK(rep.slice("multi-entity")->count == 2);
  CHECK(rep.slice("hops>=3")->median_tokens == 52.5);

  // Slice oracle: the 2-hop 2-entity question is in both multi slices.
  for (const auto* name : {"multi-hop", "multi-entity"}) {
    const auto* s = rep.slice(name);
    REQUIRE(s);
    CHECK(s->hit == 0.0 + (std::string(name) == "multi-hop" ? 100.0 / 3 : 0.0));
  }

  // Order does not matter.
  std::reverse(rows.begin(), rows.end());
  auto again = aggregate(rows);
  for (std::size_t i = 0; i < rep.slices.size(); ++i) {
    CHECK(to_json(rep.slices[i]) == to_json(again.slices[i]));
  }
  for (const auto& s : rep.slices) {
    CHECK(s.hit >= 0.0);
    CHECK(s.hit <= 100.0);
  }
}

TEST_CASE("report files") {
  const auto dir = fs::temp_directory_path() / "gnnrag_eval";
  fs::remove_all(dir);
  auto rep = aggregate({row("q1", true, 1, 1, 4), row("q2", false, 2, 2, 6)});
  write_report(rep, dir, "cafe");
  const auto summary = json::parse(read_file(dir / "report.json"));
  CHECK(summary["config_hash"] == "cafe");
  CHECK(summary["slices"][0]["slice"] == "all");
  CHECK(read_lines(dir / "report.jsonl").size() == 2);
  const auto csv = read_lines(dir / "slices.csv");
  CHECK(csv[1] == "slice,count,hit,h1,f1,coverage,median_tokens");
  CHECK(csv[2] == "all,2,50.0,50.0,50.0,50.0,5.0");
  fs::remove_all(dir);
}

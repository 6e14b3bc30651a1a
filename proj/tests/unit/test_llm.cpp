#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <thread>

#include "../support/fixtures.hpp"
#include "gnnrag/error.hpp"
#include "gnnrag/io.hpp"
#include "gnnrag/llm.hpp"
#include "gnnrag/prompt.hpp"

// After Eigen: <resolv.h> defines a `_res` macro that breaks Eigen headers.
#include <httplib.h>

using namespace gnnrag;
using namespace gnnrag::testing;
namespace fs = std::filesystem;

namespace {

ReasoningPath path_of(std::vector<EntityId> e, std::vector<RelationId> r) {
  ReasoningPath p;
  p.entities = std::move(e);
  p.relations = std::move(r);
  return p;
}

KnowledgeGraph jamaica() {
  return make_kg({"Jamaica", "English", "Kingston"}, {"language_spoken", "country"},
                 {{"Jamaica", "language_spoken", "English"}, {"Kingston", "country", "Jamaica"}});
}

/// Local chat-completion server whose first `failures` requests return 503.
struct FakeServer {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::atomic<int> requests{0};
  int failures = 0;
  int fail_status = 503;
  std::string last_body;
  std::string last_auth;

  FakeServer() {
    server.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      const int n = ++requests;
      last_body = req.body;
      last_auth = req.get_header_value("Authorization");
      if (n <= failures) {
        res.status = fail_status;
        return;
      }
      const auto j = json::parse(req.body);
      const std::string prompt = j["messages"][0]["content"];
      json reply{{"choices", json::array({{{"message", {{"role", "assistant"}, {"content", "echo:" + std::to_string(prompt.size())}}}}})}};
      res.set_content(reply.dump(), "application/json");
    });
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~FakeServer() {
    server.stop();
    thread.join();
  }
  HttpConfig config() const {
    HttpConfig c;
    c.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
    c.api_key = "secret";
    c.model = "test-model";
    c.timeout = std::chrono::seconds(5);
    return c;
  }
};

}  // namespace

TEST_CASE("verbalize") {
  auto kg = jamaica();
  CHECK(verbalize(path_of({0, 1}, {0}), kg) == "Jamaica → language_spoken → English");
  CHECK(verbalize(path_of({1}, {}), kg) == "English");
  // Inverse step shows the forward relation with reversed arrows.
  CHECK(verbalize(path_of({0, 2}, {kg.inverse(1)}), kg) == "Jamaica ← country ← Kingston");

  auto two = path_of({2, 0, 1}, {1, 0});
  const std::string sep = " → ";
  CHECK(verbalize(two, kg) == "Kingston" + sep + "country" + sep + "Jamaica" + sep + "language_spoken" + sep + "English");
}

TEST_CASE("build_prompt against golden files") {
  auto kg = jamaica();
  const std::string q = "what language is spoken in jamaica";
  std::vector<ReasoningPath> one{path_of({0, 1}, {0})};
  auto a = build_prompt(one, kg, q, PromptTemplate::A);
  CHECK(a.rendered == read_file(fs::path(GNNRAG_TEST_DATA) / "prompt_a_one_path.txt"));

  std::vector<ReasoningPath> two{path_of({0, 1}, {0}), path_of({0, 2}, {kg.inverse(1)}), path_of({0, 1}, {0})};
  auto c = build_prompt(two, kg, q, PromptTemplate::C);
  CHECK(c.rendered == read_file(fs::path(GNNRAG_TEST_DATA) / "prompt_c_two_paths.txt"));
  CHECK(c.paths_text == "Jamaica → language_spoken → English\nJamaica ← country ← Kingston");
}

TEST_CASE("prompt slots") {
  auto kg = jamaica();
  const std::string q = "what language is spoken in jamaica";
  auto empty = build_prompt(std::vector<ReasoningPath>{}, kg, q, PromptTemplate::A);
  CHECK(empty.rendered.ends_with("Reasoning Paths: \nQuestion: " + q));
  CHECK(empty.paths_text.empty());

  std::vector<ReasoningPath> paths{path_of({0, 1}, {0}), path_of({0, 2}, {kg.inverse(1)})};
  const auto a = build_prompt(paths, kg, q, PromptTemplate::A);
  const auto b = build_prompt(paths, kg, q, PromptTemplate::B);
  const auto c = build_prompt(paths, kg, q, PromptTemplate::C);
  CHECK(b.rendered.starts_with("Based on the provided knowledge, please answer the given question."));
  CHECK(c.rendered.starts_with("Your tasks is to use the following facts and answer the question."));
  for (const auto* p : {&a, &b, &c}) {
    CHECK(p->paths_text == a.paths_text);
    // Question once, each path once.
    CHECK(p->rendered.find(q) == p->rendered.rfind(q));
    for (const auto& line : {verbalize(paths[0], kg), verbalize(paths[1], kg)}) {
      CHECK(p->rendered.find(line) != std::string::npos);
      CHECK(p->rendered.find(line) == p->rendered.rfind(line));
    }
  }
  CHECK(build_prompt(paths, kg, q, PromptTemplate::A).rendered == a.rendered);
  CHECK(prompt_template_from_string("B") == PromptTemplate::B);
  CHECK_THROWS_AS(prompt_template_from_string("D"), ConfigError);
}

TEST_CASE("count_tokens") {
  CHECK(count_tokens("") == 0);
  CHECK(count_tokens("Jamaica → language_spoken → English") == 5);
  CHECK(count_tokens("Jamaica → language_spoken → English  \n\t") == 5);
  CHECK(count_tokens("Hello, world!") == 4);
  CHECK(count_tokens("(a)") == 3);
  CHECK(count_tokens("...") == 3);
  CHECK(count_tokens("U.S.") == 2);
  CHECK(count_tokens("   ") == 0);
}

TEST_CASE("parse_answers") {
  CHECK(parse_answers("Ontario") == std::vector<std::string>{"Ontario"});
  CHECK(parse_answers("1. English\n2. Jamaican English") == std::vector<std::string>{"English", "Jamaican English"});
  CHECK(parse_answers("English, French, English") == std::vector<std::string>{"English", "French"});
  CHECK(parse_answers("- a\n* b\n• c\n3) d\n\n") == std::vector<std::string>{"a", "b", "c", "d"});
  CHECK(parse_answers("").empty());
  CHECK(parse_answers("  \n ,, ").empty());
  CHECK(parse_answers("1.5") == std::vector<std::string>{"1.5"});
}

TEST_CASE("stub backends") {
  auto kg = jamaica();
  std::vector<ReasoningPath> paths{path_of({0, 1}, {0}), path_of({0, 2}, {kg.inverse(1)}), path_of({0}, {})};
  auto bundle = build_prompt(paths, kg, "q", PromptTemplate::A);

  PathEchoBackend echo;
  auto r = answer(bundle, echo);
  CHECK(r.parsed_answers == std::vector<std::string>{"English", "Kingston", "Jamaica"});
  CHECK(r.call_count == 1);

  auto empty = build_prompt(std::vector<ReasoningPath>{}, kg, "q", PromptTemplate::A);
  CHECK(answer(empty, echo).parsed_answers.empty());

  FixedAnswerBackend fixed("1. English\n2. Jamaican English");
  CHECK(answer(bundle, fixed).parsed_answers == std::vector<std::string>{"English", "Jamaican English"});
  FixedAnswerBackend blank("");
  CHECK(answer(bundle, blank).parsed_answers.empty());
}

TEST_CASE("record then replay") {
  const auto dir = fs::temp_directory_path() / "gnnrag_llm";
  fs::remove_all(dir);
  const auto fixtures = dir / "fixtures.jsonl";
  auto kg = jamaica();
  auto b1 = build_prompt(std::vector<ReasoningPath>{path_of({0, 1}, {0})}, kg, "q1", PromptTemplate::A);
  auto b2 = build_prompt(std::vector<ReasoningPath>{}, kg, "q2", PromptTemplate::A);

  RecordingBackend rec(std::make_shared<FixedAnswerBackend>("Ontario"), fixtures);
  CHECK(rec.complete(b1) == "Ontario");
  CHECK(rec.complete(b2) == "Ontario");

  ReplayBackend replay(fixtures);
  CHECK(replay.size() == 2);
  CHECK(answer(b1, replay).parsed_answers == std::vector<std::string>{"Ontario"});
  auto b3 = build_prompt(std::vector<ReasoningPath>{}, kg, "unseen", PromptTemplate::A);
  CHECK_THROWS_AS(replay.complete(b3), ServiceError);

  LlmConfig cfg;
  cfg.stub = StubMode::Replay;
  cfg.fixtures = fixtures;
  CHECK(make_backend(cfg)->complete(b2) == "Ontario");
  fs::remove_all(dir);
}

TEST_CASE("http backend wire format and retries") {
  FakeServer fake;
  auto bundle = build_prompt(std::string_view("A → r → B"), "q", PromptTemplate::A);
  std::vector<std::chrono::milliseconds> sleeps;
  auto sleeper = [&](std::chrono::milliseconds d) { sleeps.push_back(d); };

  SUBCASE("success") {
    HttpBackend http(fake.config(), sleeper);
    CHECK(http.complete(bundle) == "echo:" + std::to_string(bundle.rendered.size()));
    const auto body = json::parse(fake.last_body);
    CHECK(body["model"] == "test-model");
    CHECK(body["temperature"] == 0.0);
    CHECK(body["messages"][0]["role"] == "user");
    CHECK(body["messages"][0]["content"] == bundle.rendered);
    CHECK(fake.last_auth == "Bearer secret");
    CHECK(sleeps.empty());
  }
  SUBCASE("two transient failures then success") {
    fake.failures = 2;
    HttpBackend http(fake.config(), sleeper);
    CHECK_NOTHROW(http.complete(bundle));
    CHECK(fake.requests == 3);
    REQUIRE(sleeps.size() == 2);
    CHECK(sleeps[1] == 2 * sleeps[0]);
  }
  SUBCASE("three failures give a service error") {
    fake.failures = 3;
    HttpBackend http(fake.config(), sleeper);
    CHECK_THROWS_AS(http.complete(bundle), ServiceError);
    CHECK(fake.requests == 3);
  }
  SUBCASE("client errors are not retried") {
    fake.failures = 5;
    fake.fail_status = 401;
    HttpBackend http(fake.config(), sleeper);
    CHECK_THROWS_AS(http.complete(bundle), ServiceError);
    CHECK(fake.requests == 1);
  }
  SUBCASE("unreachable endpoint") {
    auto cfg = fake.config();
    cfg.endpoint = "http://127.0.0.1:1/v1/chat/completions";
    HttpBackend http(cfg, sleeper);
    CHECK_THROWS_AS(http.complete(bundle), ServiceError);
    CHECK(sleeps.size() == 2);
  }
  SUBCASE("bounded concurrency keeps order") {
    HttpBackend http(fake.config(), sleeper);
    std::vector<PromptBundle> bundles;
    for (int i = 0; i < 6; ++i) bundles.push_back(build_prompt(std::string(i, 'x'), "q", PromptTemplate::A));
    auto out = answer_all(bundles, http, 4);
    REQUIRE(out.size() == 6);
    for (int i = 0; i < 6; ++i) CHECK(out[i].raw_text == "echo:" + std::to_string(bundles[i].rendered.size()));
  }
}

TEST_CASE("http config validation") {
  HttpConfig c;
  CHECK_THROWS_AS(HttpBackend{c}, ConfigError);
  c.endpoint = "localhost/v1";
  CHECK_THROWS_AS(HttpBackend{c}, ConfigError);
  CHECK_THROWS_AS(HttpBackend::response_text("not json"), ServiceError);
  CHECK_THROWS_AS(HttpBackend::response_text(R"({"choices":[]})"), ServiceError);
  CHECK(HttpBackend::response_text(R"({"choices":[{"message":{"content":"hi"}}]})") == "hi");
  CHECK(stub_mode_from_string("path-echo") == StubMode::PathEcho);
  CHECK_THROWS_AS(stub_mode_from_string("magic"), ConfigError);
}

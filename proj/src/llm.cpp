#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "gnnrag/llm.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <thread>

#include <httplib.h>

#include "gnnrag/error.hpp"
#include "gnnrag/io.hpp"
#include "gnnrag/parallel.hpp"

namespace gnnrag {
namespace {

std::string env_or(const char* name, std::string fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : std::move(fallback);
}

bool retryable_status(int status) { return status == 429 || status >= 500; }

}  // namespace

std::string PathEchoBackend::complete(const PromptBundle& bundle) {
  std::string out;
  std::set<std::string> seen;
  std::size_t pos = 0;
  const auto& text = bundle.paths_text;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string_view line(text.data() + pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    std::size_t cut = 0;
    for (std::string_view sep : {" → ", " ← "}) {
      const auto at = line.rfind(sep);
      if (at != std::string_view::npos) cut = std::max(cut, at + sep.size());
    }
    std::string terminal(line.substr(cut));
    if (!seen.insert(terminal).second) continue;
    if (!out.empty()) out += '\n';
    out += terminal;
  }
  return out;
}

ReplayBackend::ReplayBackend(const std::filesystem::path& fixtures) {
  for_each_jsonl(fixtures, [&](std::size_t line, const json& j) {
    if (!j.contains("prompt-hash") || !j.contains("response")) {
      throw ParseError(fixtures.string(), line, "fixture needs prompt-hash and response");
    }
    responses_[j["prompt-hash"].get<std::string>()] = j["response"].get<std::string>();
  });
}

std::string ReplayBackend::complete(const PromptBundle& bundle) {
  const auto key = sha256_hex(bundle.rendered);
  const auto it = responses_.find(key);
  if (it == responses_.end()) throw ServiceError("no recorded response for prompt " + key);
  return it->second;
}

RecordingBackend::RecordingBackend(std::shared_ptr<ChatBackend> inner, std::filesystem::path fixtures)
    : inner_(std::move(inner)), fixtures_(std::move(fixtures)) {}

std::string RecordingBackend::complete(const PromptBundle& bundle) {
  auto response = inner_->complete(bundle);
  json record{{"prompt-hash", sha256_hex(bundle.rendered)}, {"response", response}};
  std::lock_guard lock(mutex_);
  if (fixtures_.has_parent_path()) std::filesystem::create_directories(fixtures_.parent_path());
  std::ofstream out(fixtures_, std::ios::app | std::ios::binary);
  if (!out) throw DataError("cannot append to " + fixtures_.string());
  out << record.dump() << '\n';
  return response;
}

HttpConfig HttpConfig::from_env() {
  HttpConfig c;
  c.endpoint = env_or("GNNRAG_LLM_ENDPOINT", "");
  c.api_key = env_or("GNNRAG_LLM_API_KEY", "");
  c.model = env_or("GNNRAG_LLM_MODEL", "");
  const auto t = env_or("GNNRAG_LLM_TEMPERATURE", "0");
  try {
    c.temperature = std::stod(t);
  } catch (const std::exception&) {
    throw ConfigError("GNNRAG_LLM_TEMPERATURE is not a number: " + t);
  }
  return c;
}

HttpBackend::HttpBackend(HttpConfig config, Sleeper sleeper)
    : config_(std::move(config)), sleep_(std::move(sleeper)) {
  if (config_.endpoint.empty()) throw ConfigError("LLM endpoint is not configured");
  if (config_.max_attempts < 1) throw ConfigError("max_attempts must be positive");
  const auto scheme = config_.endpoint.find("://");
  if (scheme == std::string::npos) throw ConfigError("LLM endpoint needs a scheme: " + config_.endpoint);
  const auto slash = config_.endpoint.find('/', scheme + 3);
  base_ = config_.endpoint.substr(0, slash);
  route_ = slash == std::string::npos ? "/" : config_.endpoint.substr(slash);
  if (!sleep_) sleep_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

std::string HttpBackend::request_body(const HttpConfig& config, const std::string& prompt) {
  json body{{"model", config.model},
            {"messages", json::array({{{"role", "user"}, {"content", prompt}}})},
            {"temperature", config.temperature}};
  return body.dump();
}

std::string HttpBackend::response_text(const std::string& body) {
  const auto j = json::parse(body, nullptr, false);
  if (j.is_discarded()) throw ServiceError("LLM response is not JSON");
  try {
    const auto& content = j.at("choices").at(0).at("message").at("content");
    return content.is_null() ? std::string() : content.get<std::string>();
  } catch (const json::exception& e) {
    throw ServiceError(std::string("unexpected LLM response shape: ") + e.what());
  }
}

std::string HttpBackend::complete(const PromptBundle& bundle) {
  const auto body = request_body(config_, bundle.rendered);
  httplib::Headers headers;
  if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

  std::string last_error;
  auto backoff = config_.initial_backoff;
  for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
    httplib::Client client(base_);
    client.set_connection_timeout(config_.timeout);
    client.set_read_timeout(config_.timeout);
    client.set_write_timeout(config_.timeout);
    auto res = client.Post(route_, headers, body, "application/json");
    if (res && res->status == 200) return response_text(res->body);
    if (res) {
      last_error = "HTTP " + std::to_string(res->status);
      if (!retryable_status(res->status)) break;
    } else {
      last_error = httplib::to_string(res.error());
    }
    if (attempt < config_.max_attempts) {
      sleep_(backoff);
      backoff *= 2;
    }
  }
  throw ServiceError("LLM request to " + config_.endpoint + " failed: " + last_error);
}

StubMode stub_mode_from_string(std::string_view s) {
  if (s == "none") return StubMode::None;
  if (s == "path-echo") return StubMode::PathEcho;
  if (s == "fixed") return StubMode::Fixed;
  if (s == "replay") return StubMode::Replay;
  throw ConfigError("unknown stub mode '" + std::string(s) + "'");
}

std::string_view to_string(StubMode m) {
  switch (m) {
    case StubMode::None:
      return "none";
    case StubMode::PathEcho:
      return "path-echo";
    case StubMode::Fixed:
      return "fixed";
    case StubMode::Replay:
      return "replay";
  }
  return "none";
}

std::shared_ptr<ChatBackend> make_backend(const LlmConfig& config) {
  std::shared_ptr<ChatBackend> backend;
  switch (config.stub) {
    case StubMode::PathEcho:
      backend = std::make_shared<PathEchoBackend>();
      break;
    case StubMode::Fixed:
      backend = std::make_shared<FixedAnswerBackend>(config.fixed_answer);
      break;
    case StubMode::Replay:
      return std::make_shared<ReplayBackend>(config.fixtures);
    case StubMode::None:
      backend = std::make_shared<HttpBackend>(HttpConfig::from_env());
      break;
  }
  if (config.record) {
    if (config.fixtures.empty()) throw ConfigError("recording needs a fixtures path");
    backend = std::make_shared<RecordingBackend>(backend, config.fixtures);
  }
  return backend;
}

LlmResponse answer(const PromptBundle& bundle, ChatBackend& backend) {
  LlmResponse r;
  const auto start = std::chrono::steady_clock::now();
  r.raw_text = backend.complete(bundle);
  r.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                     std::chrono::steady_clock::now() - start)
                     .count();
  r.call_count = 1;
  r.parsed_answers = parse_answers(r.raw_text);
  return r;
}

std::vector<LlmResponse> answer_all(std::span<const PromptBundle> bundles, ChatBackend& backend,
                                    std::size_t concurrency) {
  std::vector<LlmResponse> out(bundles.size());
  parallel_for(bundles.size(), static_cast<int>(std::max<std::size_t>(1, concurrency)),
               [&](std::size_t i) { out[i] = answer(bundles[i], backend); });
  return out;
}

}  // namespace gnnrag

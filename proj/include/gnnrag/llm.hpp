#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "gnnrag/prompt.hpp"

namespace gnnrag {

struct LlmResponse {
  std::string raw_text;
  std::vector<std::string> parsed_answers;
  std::int64_t latency_ms = 0;
  std::size_t call_count = 0;
};

/// Anything that turns a prompt into a generation. Implementations must be
/// safe to call from several threads.
class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual std::string complete(const PromptBundle& bundle) = 0;
};

/// Answers with the terminal entity of every path line, one per line.
class PathEchoBackend final : public ChatBackend {
 public:
  std::string complete(const PromptBundle& bundle) override;
};

class FixedAnswerBackend final : public ChatBackend {
 public:
  explicit FixedAnswerBackend(std::string answer) : answer_(std::move(answer)) {}
  std::string complete(const PromptBundle&) override { return answer_; }

 private:
  std::string answer_;
};

/// Replays responses keyed by the SHA-256 of the rendered prompt from a JSONL
/// file of {"prompt-hash", "response"}. Unknown prompts raise ServiceError.
class ReplayBackend final : public ChatBackend {
 public:
  explicit ReplayBackend(const std::filesystem::path& fixtures);
  std::string complete(const PromptBundle& bundle) override;
  std::size_t size() const noexcept { return responses_.size(); }

 private:
  std::map<std::string, std::string> responses_;
};

/// Forwards to `inner` and appends every exchange to a fixtures file that
/// ReplayBackend can read back.
class RecordingBackend final : public ChatBackend {
 public:
  RecordingBackend(std::shared_ptr<ChatBackend> inner, std::filesystem::path fixtures);
  std::string complete(const PromptBundle& bundle) override;

 private:
  std::shared_ptr<ChatBackend> inner_;
  std::filesystem::path fixtures_;
  std::mutex mutex_;
};

struct HttpConfig {
  /// Full URL of the chat-completion route, e.g. https://host/v1/chat/completions.
  std::string endpoint;
  std::string api_key;
  std::string model;
  double temperature = 0.0;
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{500};
  std::chrono::seconds timeout{60};

  /// Reads GNNRAG_LLM_ENDPOINT, GNNRAG_LLM_API_KEY, GNNRAG_LLM_MODEL and
  /// GNNRAG_LLM_TEMPERATURE.
  static HttpConfig from_env();
};

/// Chat-completion client. Transport failures, 429 and 5xx responses are
/// retried with doubling backoff; other 4xx responses fail immediately.
class HttpBackend final : public ChatBackend {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  explicit HttpBackend(HttpConfig config, Sleeper sleeper = {});
  std::string complete(const PromptBundle& bundle) override;

  static std::string request_body(const HttpConfig& config, const std::string& prompt);
  static std::string response_text(const std::string& body);

 private:
  HttpConfig config_;
  Sleeper sleep_;
  std::string base_;
  std::string route_;
};

enum class StubMode { None, PathEcho, Fixed, Replay };

StubMode stub_mode_from_string(std::string_view s);
std::string_view to_string(StubMode m);

struct LlmConfig {
  PromptTemplate template_id = PromptTemplate::A;
  StubMode stub = StubMode::PathEcho;
  std::string fixed_answer;
  std::filesystem::path fixtures;
  /// When set, live calls are also written to `fixtures`.
  bool record = false;
  std::size_t concurrency = 4;
};

/// Backend for a config; StubMode::None means the HTTP client configured from
/// the environment.
std::shared_ptr<ChatBackend> make_backend(const LlmConfig& config);

/// One generation call, timed, with parsed answers.
LlmResponse answer(const PromptBundle& bundle, ChatBackend& backend);

/// Answers every bundle with at most `concurrency` calls in flight. Results keep
/// input order.
std::vector<LlmResponse> answer_all(std::span<const PromptBundle> bundles, ChatBackend& backend,
                                    std::size_t concurrency);

}  // namespace gnnrag

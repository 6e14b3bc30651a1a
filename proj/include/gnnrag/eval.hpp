#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "gnnrag/kg.hpp"
#include "gnnrag/path.hpp"

namespace gnnrag {

/// Aliases of each gold answer.
using GoldAliases = std::vector<std::vector<std::string>>;

/// Lowercase, strip punctuation around each whitespace token, collapse spaces.
std::string normalize_answer(std::string_view text);

bool hit(std::string_view generation, const GoldAliases& gold);
bool h1(std::span<const std::string> predictions, const GoldAliases& gold);
double f1(std::span<const std::string> predictions, const GoldAliases& gold);
/// True when some path ends at a gold answer.
bool answer_coverage(std::span<const ReasoningPath> paths, std::span<const EntityId> answers);

/// Minimum hop distance from any question entity to any answer over the full
/// graph, or -1 when no answer is reachable.
int question_hops(const KnowledgeGraph& kg, const Question& question);

struct QuestionRow {
  std::string id;
  bool hit = false;
  bool h1 = false;
  double f1 = 0.0;
  bool coverage = false;
  std::size_t input_tokens = 0;
  int hops = -1;
  std::size_t num_entities = 0;
};

struct SliceStats {
  std::string name;
  std::size_t count = 0;
  /// Percentages in [0, 100].
  double hit = 0.0;
  double h1 = 0.0;
  double f1 = 0.0;
  double coverage = 0.0;
  double median_tokens = 0.0;
};

struct EvalReport {
  std::vector<QuestionRow> rows;
  /// all, hops=1, hops=2, hops>=3, multi-hop, multi-entity. Empty slices are
  /// left out.
  std::vector<SliceStats> slices;

  const SliceStats* slice(std::string_view name) const;
};

/// Median of the values; the mean of the middle pair for even counts.
double median(std::vector<double> values);

EvalReport aggregate(std::vector<QuestionRow> rows);

nlohmann::json to_json(const QuestionRow& row);
nlohmann::json to_json(const SliceStats& slice);

/// Writes report.json (slices), report.jsonl (rows) and slices.csv into `dir`.
void write_report(const EvalReport& report, const std::filesystem::path& dir,
                  const std::string& config_hash);

}  // namespace gnnrag

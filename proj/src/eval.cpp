#include "gnnrag/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <set>
#include <sstream>

#include "gnnrag/io.hpp"

namespace gnnrag {
namespace {

bool matches_gold(const std::string& normalized, const std::vector<std::string>& aliases) {
  for (const auto& a : aliases) {
    if (normalize_answer(a) == normalized) return true;
  }
  return false;
}

std::vector<std::string> distinct_normalized(std::span<const std::string> predictions) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& p : predictions) {
    auto n = normalize_answer(p);
    if (!n.empty() && seen.insert(n).second) out.push_back(std::move(n));
  }
  return out;
}

SliceStats summarize(std::string name, const std::vector<const QuestionRow*>& rows) {
  SliceStats s;
  s.name = std::move(name);
  s.count = rows.size();
  std::vector<double> tokens;
  for (const auto* r : rows) {
    s.hit += r->hit;
    s.h1 += r->h1;
    s.f1 += r->f1;
    s.coverage += r->coverage;
    tokens.push_back(static_cast<double>(r->input_tokens));
  }
  const double scale = 100.0 / static_cast<double>(rows.size());
  s.hit *= scale;
  s.h1 *= scale;
  s.f1 *= scale;
  s.coverage *= scale;
  s.median_tokens = median(std::move(tokens));
  return s;
}

}  // namespace

std::string normalize_answer(std::string_view text) {
  std::string out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    auto word = text.substr(i, j - i);
    i = j;
    while (!word.empty() && std::ispunct(static_cast<unsigned char>(word.front()))) word.remove_prefix(1);
    while (!word.empty() && std::ispunct(static_cast<unsigned char>(word.back()))) word.remove_suffix(1);
    if (word.empty()) continue;
    if (!out.empty()) out += ' ';
    for (char c : word) out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

bool hit(std::string_view generation, const GoldAliases& gold) {
  const auto g = normalize_answer(generation);
  if (g.empty()) return false;
  for (const auto& aliases : gold) {
    for (const auto& a : aliases) {
      const auto n = normalize_answer(a);
      if (!n.empty() && g.find(n) != std::string::npos) return true;
    }
  }
  return false;
}

bool h1(std::span<const std::string> predictions, const GoldAliases& gold) {
  if (predictions.empty()) return false;
  const auto first = normalize_answer(predictions.front());
  if (first.empty()) return false;
  return std::any_of(gold.begin(), gold.end(),
                     [&](const auto& aliases) { return matches_gold(first, aliases); });
}

double f1(std::span<const std::string> predictions, const GoldAliases& gold) {
  const auto preds = distinct_normalized(predictions);
  if (preds.empty() || gold.empty()) return 0.0;
  std::size_t matched_preds = 0;
  for (const auto& p : preds) {
    if (std::any_of(gold.begin(), gold.end(), [&](const auto& a) { return matches_gold(p, a); })) {
      ++matched_preds;
    }
  }
  std::size_t matched_gold = 0;
  for (const auto& aliases : gold) {
    if (std::any_of(preds.begin(), preds.end(), [&](const auto& p) { return matches_gold(p, aliases); })) {
      ++matched_gold;
    }
  }
  const double p = static_cast<double>(matched_preds) / static_cast<double>(preds.size());
  const double r = static_cast<double>(matched_gold) / static_cast<double>(gold.size());
  return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

bool answer_coverage(std::span<const ReasoningPath> paths, std::span<const EntityId> answers) {
  const std::set<EntityId> gold(answers.begin(), answers.end());
  return std::any_of(paths.begin(), paths.end(),
                     [&](const ReasoningPath& p) { return gold.contains(p.terminal()); });
}

int question_hops(const KnowledgeGraph& kg, const Question& question) {
  const auto dist = bfs_distances(kg, question.entities);
  int best = -1;
  for (auto a : question.answers) {
    const int d = dist[a];
    if (d >= 0 && (best < 0 || d < best)) best = d;
  }
  return best;
}

const SliceStats* EvalReport::slice(std::string_view name) const {
  for (const auto& s : slices) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

EvalReport aggregate(std::vector<QuestionRow> rows) {
  EvalReport report;
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  report.rows = std::move(rows);
  if (report.rows.empty()) return report;

  struct Rule {
    const char* name;
    bool (*member)(const QuestionRow&);
  };
  static constexpr Rule rules[] = {
      {"all", [](const QuestionRow&) { return true; }},
      {"hops=1", [](const QuestionRow& r) { return r.hops == 1; }},
      {"hops=2", [](const QuestionRow& r) { return r.hops == 2; }},
      {"hops>=3", [](const QuestionRow& r) { return r.hops >= 3; }},
      {"multi-hop", [](const QuestionRow& r) { return r.hops >= 2; }},
      {"multi-entity", [](const QuestionRow& r) { return r.num_entities >= 2; }},
  };
  for (const auto& rule : rules) {
    std::vector<const QuestionRow*> members;
    for (const auto& r : report.rows) {
      if (rule.member(r)) members.push_back(&r);
    }
    if (!members.empty()) report.slices.push_back(summarize(rule.name, members));
  }
  return report;
}

nlohmann::json to_json(const QuestionRow& row) {
  return {{"id", row.id},         {"hit", row.hit},   {"h1", row.h1},
          {"f1", row.f1},         {"coverage", row.coverage},
          {"input_tokens", row.input_tokens},         {"hops", row.hops},
          {"num_entities", row.num_entities}};
}

nlohmann::json to_json(const SliceStats& s) {
  return {{"slice", s.name}, {"count", s.count},       {"hit", s.hit},
          {"h1", s.h1},      {"f1", s.f1},             {"coverage", s.coverage},
          {"median_tokens", s.median_tokens}};
}

void write_report(const EvalReport& report, const std::filesystem::path& dir,
                  const std::string& config_hash) {
  json summary{{"config_hash", config_hash}, {"questions", report.rows.size()},
               {"slices", json::array()}};
  for (const auto& s : report.slices) summary["slices"].push_back(to_json(s));
  write_file(dir / "report.json", summary.dump(2) + "\n");

  std::vector<json> rows;
  for (const auto& r : report.rows) {
    auto j = to_json(r);
    j["config_hash"] = config_hash;
    rows.push_back(std::move(j));
  }
  write_jsonl(dir / "report.jsonl", rows);

  std::ostringstream csv;
  csv << "# config_hash=" << config_hash << "\n";
  csv << "slice,count,hit,h1,f1,coverage,median_tokens\n";
  char buf[256];
  for (const auto& s : report.slices) {
    std::snprintf(buf, sizeof buf, "%s,%zu,%.1f,%.1f,%.1f,%.1f,%.1f\n", s.name.c_str(), s.count,
                  s.hit, s.h1, s.f1, s.coverage, s.median_tokens);
    csv << buf;
  }
  write_file(dir / "slices.csv", csv.str());
}

}  // namespace gnnrag

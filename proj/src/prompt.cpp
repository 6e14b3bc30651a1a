#include "gnnrag/prompt.hpp"

#include <cctype>
#include <set>

#include "gnnrag/error.hpp"

namespace gnnrag {
namespace {

constexpr std::string_view kAnswerRule =
    "Please keep the answer as simple as possible and return all the possible answers as a list.";

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = text.find('\n', pos);
    const auto stop = end == std::string_view::npos ? text.size() : end;
    lines.push_back(text.substr(pos, stop - pos));
    if (end == std::string_view::npos) break;
    pos = end + 1;
  }
  return lines;
}

std::string_view strip_marker(std::string_view item) {
  item = trim(item);
  if (item.starts_with("•")) return trim(item.substr(3));
  if (!item.empty() && (item.front() == '-' || item.front() == '*')) return trim(item.substr(1));
  std::size_t digits = 0;
  while (digits < item.size() && std::isdigit(static_cast<unsigned char>(item[digits]))) ++digits;
  if (digits > 0 && digits < item.size() && (item[digits] == '.' || item[digits] == ')')) {
    // "1.5" stays a number; a marker needs a following space or nothing.
    if (digits + 1 == item.size() || is_space(item[digits + 1])) return trim(item.substr(digits + 1));
  }
  return item;
}

}  // namespace

std::string_view to_string(PromptTemplate t) {
  switch (t) {
    case PromptTemplate::A:
      return "A";
    case PromptTemplate::B:
      return "B";
    case PromptTemplate::C:
      return "C";
  }
  return "A";
}

PromptTemplate prompt_template_from_string(std::string_view s) {
  if (s == "A") return PromptTemplate::A;
  if (s == "B") return PromptTemplate::B;
  if (s == "C") return PromptTemplate::C;
  throw ConfigError("unknown prompt template '" + std::string(s) + "'");
}

std::string verbalize(const ReasoningPath& path, const KnowledgeGraph& kg) {
  std::string out(kg.entity_label(path.entities.front()));
  for (std::size_t i = 0; i < path.relations.size(); ++i) {
    const auto r = path.relations[i];
    const auto& next = kg.entity_label(path.entities[i + 1]);
    if (kg.is_inverse(r)) {
      out += " ← ";
      out += kg.relation_label(kg.forward_of(r));
      out += " ← ";
    } else {
      out += " → ";
      out += kg.relation_label(r);
      out += " → ";
    }
    out += next;
  }
  return out;
}

std::string verbalize_paths(std::span<const ReasoningPath> paths, const KnowledgeGraph& kg) {
  std::set<std::string> seen;
  std::string block;
  for (const auto& p : paths) {
    auto line = verbalize(p, kg);
    if (!seen.insert(line).second) continue;
    if (!block.empty()) block += '\n';
    block += line;
  }
  return block;
}

PromptBundle build_prompt(std::span<const ReasoningPath> paths, const KnowledgeGraph& kg,
                          std::string_view question, PromptTemplate template_id) {
  return build_prompt(verbalize_paths(paths, kg), question, template_id);
}

PromptBundle build_prompt(std::string_view paths_text, std::string_view question,
                          PromptTemplate template_id) {
  PromptBundle bundle;
  bundle.template_id = template_id;
  bundle.question_text = std::string(question);
  std::set<std::string_view> seen;
  for (auto line : split_lines(paths_text)) {
    if (line.empty() || !seen.insert(line).second) continue;
    if (!bundle.paths_text.empty()) bundle.paths_text += '\n';
    bundle.paths_text += line;
  }

  std::string& r = bundle.rendered;
  switch (template_id) {
    case PromptTemplate::A:
      r = "Based on the reasoning paths, please answer the given question. ";
      r += kAnswerRule;
      r += "\nReasoning Paths: ";
      break;
    case PromptTemplate::B:
      r = "Based on the provided knowledge, please answer the given question. ";
      r += kAnswerRule;
      r += "\nKnowledge: ";
      break;
    case PromptTemplate::C:
      r = "Your tasks is to use the following facts and answer the question. "
          "Make sure that you use the information from the facts provided. ";
      r += kAnswerRule;
      r += "\nThe facts are the following: ";
      break;
  }
  r += bundle.paths_text;
  r += "\nQuestion: ";
  r += question;
  return bundle;
}

std::size_t count_tokens(std::string_view text) {
  std::size_t count = 0;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    if (i == text.size()) break;
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    std::string_view word = text.substr(i, j - i);
    i = j;
    std::size_t lead = 0;
    while (lead < word.size() && is_punct(word[lead])) ++lead;
    if (lead == word.size()) {
      count += lead;
      continue;
    }
    std::size_t trail = 0;
    while (trail < word.size() - lead && is_punct(word[word.size() - 1 - trail])) ++trail;
    count += lead + trail + 1;
  }
  return count;
}

std::vector<std::string> parse_answers(std::string_view generation) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (auto line : split_lines(generation)) {
    std::size_t pos = 0;
    while (pos <= line.size()) {
      const auto comma = line.find(',', pos);
      const auto stop = comma == std::string_view::npos ? line.size() : comma;
      auto item = strip_marker(line.substr(pos, stop - pos));
      if (!item.empty() && seen.emplace(item).second) out.emplace_back(item);
      if (comma == std::string_view::npos) break;
      pos = comma + 1;
    }
  }
  return out;
}

}  // namespace gnnrag

#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gnnrag/kg.hpp"
#include "gnnrag/path.hpp"

namespace gnnrag {

enum class PromptTemplate { A, B, C };

std::string_view to_string(PromptTemplate t);
PromptTemplate prompt_template_from_string(std::string_view s);

struct PromptBundle {
  PromptTemplate template_id = PromptTemplate::A;
  /// Verbalized paths, one per line.
  std::string paths_text;
  std::string question_text;
  std::string rendered;
};

/// "e0 → r0 → e1 → ...". A step over an inverse relation is written with the
/// forward label and reversed arrows: "e0 ← r ← e1".
std::string verbalize(const ReasoningPath& path, const KnowledgeGraph& kg);

/// Distinct verbalizations in first-seen order, joined by '\n'.
std::string verbalize_paths(std::span<const ReasoningPath> paths, const KnowledgeGraph& kg);

PromptBundle build_prompt(std::span<const ReasoningPath> paths, const KnowledgeGraph& kg,
                          std::string_view question, PromptTemplate template_id);
/// Same, from an already verbalized block (lines are deduplicated).
PromptBundle build_prompt(std::string_view paths_text, std::string_view question,
                          PromptTemplate template_id);

/// Whitespace tokens, with leading and trailing ASCII punctuation split off as
/// one token per character.
std::size_t count_tokens(std::string_view text);

/// Splits a generation on newlines and commas, strips list markers ("1.",
/// "2)", "-", "*", "•"), trims, and removes duplicates keeping the first.
std::vector<std::string> parse_answers(std::string_view generation);

}  // namespace gnnrag

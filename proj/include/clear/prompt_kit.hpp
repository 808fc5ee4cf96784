#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "clear/refinement_graph.hpp"

namespace clear {

enum class PromptKind { evaluate, filter, generate_child, generate_root };
enum class TaskKind { constrained_generation, story_outline, math, toxicity, custom };

std::string_view to_string(PromptKind kind);
std::string_view to_string(TaskKind kind);
TaskKind task_kind_from_string(std::string_view text);

/// Placeholder names a template of the given kind must contain exactly once.
std::vector<std::string_view> required_placeholders(PromptKind kind);

struct PromptTemplate {
  PromptKind kind = PromptKind::evaluate;
  std::string body;

  /// Throws MissingPlaceholder unless every required placeholder occurs once.
  void validate() const;
};

struct TaskPromptSet {
  TaskKind task_kind = TaskKind::custom;
  std::array<PromptTemplate, 4> templates;

  const PromptTemplate& get(PromptKind kind) const {
    return templates[static_cast<std::size_t>(kind)];
  }
};

/// Built-in prompt families. Throws ConfigError for TaskKind::custom, which
/// has no built-in set.
TaskPromptSet builtin_prompt_set(TaskKind kind);

/// Prompt-set document: {"task_kind": ..., "evaluate": ..., "filter": ...,
/// "generate_child": ..., "generate_root": ...}.
TaskPromptSet prompt_set_from_json(const nlohmann::json& doc);
TaskPromptSet load_prompt_set(const std::filesystem::path& path);
nlohmann::json to_json(const TaskPromptSet& set);

/// Single-pass substitution of `{name}` markers. Substituted values are never
/// rescanned, so braces inside them survive verbatim.
std::string render_template(std::string_view body,
                            const std::map<std::string, std::string, std::less<>>& bindings);

std::string render_evaluate_prompt(const TaskPromptSet& set, std::string_view instruction,
                                   std::string_view response);
std::string render_filter_prompt(const TaskPromptSet& set, const Feedback& expert,
                                 const Feedback& amateur);

/// `history` is the ancestry of `parent` (root first, parent last). At most
/// `history_limit` entries of it are shown, counting the parent itself.
std::string render_child_prompt(const TaskPromptSet& set, std::string_view instruction,
                                const RefinementNode& parent, const Feedback& filtered,
                                const std::vector<AncestryEntry>& history,
                                std::optional<int> history_limit = std::nullopt);
std::string render_root_prompt(const TaskPromptSet& set, std::string_view instruction);

/// Parses "[score] [reason] text" (or "[reason] text" when no score is
/// expected). The first bracketed integer is the score; bracket groups
/// containing a dash, such as "[0-100 based on coverage]", are skipped.
Feedback parse_feedback(std::string_view raw, FeedbackSource source, bool expect_score);

/// Canonical "[s] [reason] r" rendering.
std::string format_feedback(std::optional<int> score, std::string_view reason);

inline constexpr int kReasonWordLimit = 50;
int word_count(std::string_view text);

}  // namespace clear

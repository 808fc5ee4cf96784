#pragma once

#include <chrono>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "clear/model_gateway.hpp"
#include "clear/prompt_kit.hpp"
#include "clear/refinement_graph.hpp"

namespace clear {

enum class SearchMode { chain, best_first };
enum class HeuristicVariant { equal_weighting, expert_weighted, expert_only, amateur_only };
enum class TieBreak { earliest_created };
enum class ReturnPolicy { last_created, best_expert_score };

std::string_view to_string(SearchMode mode);
std::string_view to_string(HeuristicVariant variant);
std::string_view to_string(ReturnPolicy policy);
SearchMode search_mode_from_string(std::string_view text);
/// Accepts both the short CLI spellings ("expert-only") and the enum names.
HeuristicVariant heuristic_from_string(std::string_view text);
ReturnPolicy return_policy_from_string(std::string_view text);

struct SearchConfig {
  SearchMode mode = SearchMode::chain;
  int d = 3;
  HeuristicVariant heuristic = HeuristicVariant::equal_weighting;
  TieBreak tie_break = TieBreak::earliest_created;
  ReturnPolicy return_policy = ReturnPolicy::last_created;
  /// Unset means "on for math tasks, off otherwise".
  std::optional<bool> early_stop_on_perfect;
  std::optional<int> history_limit;
  int parse_retries = 2;
  bool concurrent_evaluations = true;

  void validate() const;
  bool early_stop_for(TaskKind kind) const {
    return early_stop_on_perfect.value_or(kind == TaskKind::math);
  }
};

nlohmann::json to_json(const SearchConfig& cfg);
SearchConfig search_config_from_json(const nlohmann::json& j);

/// |v0 - v_expert| + |v0 - v_amateur|
double cost_g(int v0, int v_expert, int v_amateur);
/// Heuristic formulas; expert_weighted may go negative and is not clamped.
double heuristic_h(HeuristicVariant variant, int v_expert, int v_amateur);

struct FrontierEntry {
  NodeId node;
  double g = 0;
  double h = 0;
  double f = 0;
};

FrontierEntry make_frontier_entry(NodeId node, int v0, int v_expert, int v_amateur,
                                  HeuristicVariant variant);

/// Lowest f wins; ties go to the earliest-created node. Nothing is removed.
NodeId select_frontier(std::span<const FrontierEntry> entries,
                       TieBreak tie_break = TieBreak::earliest_created);

/// Endpoints bound to each step of a refinement iteration.
struct EngineRoles {
  ModelEndpoint expert;
  ModelEndpoint amateur;
  ModelEndpoint filter;     // the expert endpoint unless configured otherwise
  ModelEndpoint generator;  // the expert endpoint, or a separate base model
};

struct SearchTask {
  TaskKind kind = TaskKind::custom;
  std::string instruction;
  TaskPromptSet prompts;
};

struct CallTrace {
  std::string endpoint;
  CallPurpose purpose = CallPurpose::evaluate;
  NodeId node;
  int attempt = 0;
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;
  bool cached = false;
  std::chrono::milliseconds latency{0};
};

struct IterationTrace {
  int iteration = 0;
  std::optional<NodeId> evaluated;
  std::optional<NodeId> selected;
  std::optional<NodeId> created;
  std::vector<FrontierEntry> frontier;
  std::vector<CallTrace> calls;
};

nlohmann::json to_json(const CallTrace& call);
nlohmann::json to_json(const IterationTrace& it);

struct SearchOutcome {
  RefinementTree tree;
  NodeId final_node;
  std::vector<IterationTrace> trace;
  std::vector<NodeId> selected_parents;
  bool early_stopped = false;
  int iterations_used = 0;
};

/// Generates the initial output from the root prompt (one completion).
std::string generate_root(Gateway& gateway, const EngineRoles& roles, const SearchTask& task,
                          std::vector<CallTrace>* calls = nullptr);

/// Linear refinement: evaluate, contrast, and extend the newest node d times.
SearchOutcome run_chain(Gateway& gateway, const EngineRoles& roles, const SearchTask& task,
                        std::string root_text, const SearchConfig& cfg);

/// Best-first refinement over a grow-only node set; the lowest-f node is
/// expanded each iteration, so a node may gain several children.
SearchOutcome run_best_first(Gateway& gateway, const EngineRoles& roles, const SearchTask& task,
                             std::string root_text, const SearchConfig& cfg);

SearchOutcome run_search(Gateway& gateway, const EngineRoles& roles, const SearchTask& task,
                         std::string root_text, const SearchConfig& cfg);

}  // namespace clear

#include "clear/search_engine.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <future>

#include "clear/error.hpp"

namespace clear {

using nlohmann::json;

std::string_view to_string(SearchMode mode) {
  return mode == SearchMode::chain ? "chain" : "best-first";
}

std::string_view to_string(HeuristicVariant variant) {
  switch (variant) {
    case HeuristicVariant::equal_weighting: return "equal";
    case HeuristicVariant::expert_weighted: return "expert-weighted";
    case HeuristicVariant::expert_only: return "expert-only";
    case HeuristicVariant::amateur_only: return "amateur-only";
  }
  return "equal";
}

std::string_view to_string(ReturnPolicy policy) {
  return policy == ReturnPolicy::last_created ? "last_created" : "best_expert_score";
}

SearchMode search_mode_from_string(std::string_view text) {
  if (text == "chain") return SearchMode::chain;
  if (text == "best-first" || text == "best_first") return SearchMode::best_first;
  throw Error(ErrorKind::ConfigError, "unknown search mode '" + std::string(text) + "'");
}

HeuristicVariant heuristic_from_string(std::string_view text) {
  if (text == "equal" || text == "equal_weighting") return HeuristicVariant::equal_weighting;
  if (text == "expert-weighted" || text == "expert_weighted") return HeuristicVariant::expert_weighted;
  if (text == "expert-only" || text == "expert_only") return HeuristicVariant::expert_only;
  if (text == "amateur-only" || text == "amateur_only") return HeuristicVariant::amateur_only;
  throw Error(ErrorKind::ConfigError, "unknown heuristic '" + std::string(text) + "'");
}

ReturnPolicy return_policy_from_string(std::string_view text) {
  if (text == "last_created") return ReturnPolicy::last_created;
  if (text == "best_expert_score") return ReturnPolicy::best_expert_score;
  throw Error(ErrorKind::ConfigError, "unknown return policy '" + std::string(text) + "'");
}

void SearchConfig::validate() const {
  if (d < 1) throw Error(ErrorKind::ConfigError, "search.d must be at least 1");
  if (parse_retries < 0) throw Error(ErrorKind::ConfigError, "search.parse_retries is negative");
  if (history_limit && *history_limit < 1) {
    throw Error(ErrorKind::ConfigError, "search.history_limit must be at least 1");
  }
}

json to_json(const SearchConfig& cfg) {
  return json{{"mode", to_string(cfg.mode)},
              {"d", cfg.d},
              {"heuristic", to_string(cfg.heuristic)},
              {"tie_break", "earliest_created"},
              {"return_policy", to_string(cfg.return_policy)},
              {"early_stop_on_perfect",
               cfg.early_stop_on_perfect ? json(*cfg.early_stop_on_perfect) : json(nullptr)},
              {"history_limit", cfg.history_limit ? json(*cfg.history_limit) : json(nullptr)},
              {"parse_retries", cfg.parse_retries},
              {"concurrent_evaluations", cfg.concurrent_evaluations}};
}

SearchConfig search_config_from_json(const json& j) {
  SearchConfig cfg;
  if (!j.is_object()) throw Error(ErrorKind::ConfigError, "search is not an object");
  try {
    if (j.contains("mode")) cfg.mode = search_mode_from_string(j.at("mode").get<std::string>());
    cfg.d = j.value("d", cfg.d);
    if (j.contains("heuristic")) {
      cfg.heuristic = heuristic_from_string(j.at("heuristic").get<std::string>());
    }
    if (j.contains("tie_break") && j.at("tie_break") != "earliest_created") {
      throw Error(ErrorKind::ConfigError, "search.tie_break must be earliest_created");
    }
    if (j.contains("return_policy")) {
      cfg.return_policy = return_policy_from_string(j.at("return_policy").get<std::string>());
    }
    if (j.contains("early_stop_on_perfect") && !j.at("early_stop_on_perfect").is_null()) {
      cfg.early_stop_on_perfect = j.at("early_stop_on_perfect").get<bool>();
    }
    if (j.contains("history_limit") && !j.at("history_limit").is_null()) {
      cfg.history_limit = j.at("history_limit").get<int>();
    }
    cfg.parse_retries = j.value("parse_retries", cfg.parse_retries);
    cfg.concurrent_evaluations = j.value("concurrent_evaluations", cfg.concurrent_evaluations);
  } catch (const json::type_error& e) {
    throw Error(ErrorKind::ConfigError, std::string("search: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

namespace {

void check_score(int v, const char* what) {
  if (v < 0 || v > 100) {
    throw Error(ErrorKind::ScoreOutOfRange,
                std::string(what) + " score " + std::to_string(v) + " outside [0, 100]");
  }
}

}  // namespace

double cost_g(int v0, int v_expert, int v_amateur) {
  check_score(v0, "root");
  check_score(v_expert, "expert");
  check_score(v_amateur, "amateur");
  return static_cast<double>(std::abs(v0 - v_expert) + std::abs(v0 - v_amateur));
}

double heuristic_h(HeuristicVariant variant, int v_expert, int v_amateur) {
  check_score(v_expert, "expert");
  check_score(v_amateur, "amateur");
  const double ve = v_expert;
  const double va = v_amateur;
  switch (variant) {
    case HeuristicVariant::equal_weighting: return 100.0 - std::abs(ve - va);
    case HeuristicVariant::expert_weighted: return 100.0 - std::abs(1.5 * ve - va);
    case HeuristicVariant::expert_only: return 100.0 - ve;
    case HeuristicVariant::amateur_only: return 100.0 - va;
  }
  return 0.0;
}

FrontierEntry make_frontier_entry(NodeId node, int v0, int v_expert, int v_amateur,
                                  HeuristicVariant variant) {
  FrontierEntry e;
  e.node = node;
  e.g = cost_g(v0, v_expert, v_amateur);
  e.h = heuristic_h(variant, v_expert, v_amateur);
  e.f = e.g + e.h;
  return e;
}

NodeId select_frontier(std::span<const FrontierEntry> entries, TieBreak) {
  if (entries.empty()) throw Error(ErrorKind::EmptyFrontier, "no evaluated node to expand");
  const FrontierEntry* best = &entries.front();
  for (const auto& e : entries.subspan(1)) {
    if (e.f < best->f || (e.f == best->f && e.node < best->node)) best = &e;
  }
  return best->node;
}

json to_json(const CallTrace& c) {
  static constexpr const char* kPurpose[] = {"evaluate", "filter", "generate", "judge"};
  return json{{"endpoint", c.endpoint},
              {"purpose", kPurpose[static_cast<int>(c.purpose)]},
              {"node", c.node.value},
              {"attempt", c.attempt},
              {"input_tokens", c.input_tokens},
              {"output_tokens", c.output_tokens},
              {"cached", c.cached},
              {"latency_ms", c.latency.count()}};
}

json to_json(const IterationTrace& it) {
  auto id = [](const std::optional<NodeId>& n) { return n ? json(n->value) : json(nullptr); };
  json frontier = json::array();
  for (const auto& e : it.frontier) {
    frontier.push_back(json{{"node", e.node.value}, {"g", e.g}, {"h", e.h}, {"f", e.f}});
  }
  json calls = json::array();
  for (const auto& c : it.calls) calls.push_back(to_json(c));
  return json{{"iteration", it.iteration}, {"evaluated", id(it.evaluated)},
              {"selected", id(it.selected)},   {"created", id(it.created)},
              {"frontier", frontier},          {"calls", calls}};
}

namespace {

std::string trimmed(std::string text) {
  auto not_space = [](unsigned char c) { return std::isspace(c) == 0; };
  text.erase(text.begin(), std::find_if(text.begin(), text.end(), not_space));
  text.erase(std::find_if(text.rbegin(), text.rend(), not_space).base(), text.end());
  return text;
}

CallTrace trace_call(const CompletionResult& r, CallPurpose purpose, NodeId node, int attempt) {
  return CallTrace{r.endpoint_name, purpose,  node,     attempt, r.input_tokens,
                   r.output_tokens, r.cached, r.latency};
}

Error at_node(const Error& e, NodeId node) {
  return Error(e.kind(), "node " + std::to_string(node.value) + ": " + e.detail());
}

struct Parsed {
  Feedback feedback;
  std::vector<CallTrace> calls;
};

// One feedback request with re-requests on malformed replies.
Parsed request_feedback(Gateway& gateway, const ModelEndpoint& endpoint, const std::string& prompt,
                        FeedbackSource source, CallPurpose purpose, NodeId node,
                        int parse_retries) {
  Parsed out;
  for (int attempt = 0;; ++attempt) {
    CompletionResult r = gateway.complete(endpoint, prompt, purpose, attempt > 0);
    out.calls.push_back(trace_call(r, purpose, node, attempt));
    try {
      out.feedback = parse_feedback(r.text, source, source != FeedbackSource::filtered);
      return out;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::MalformedFeedback || attempt >= parse_retries) throw;
    }
  }
}

class Engine {
 public:
  Engine(Gateway& gateway, const EngineRoles& roles, const SearchTask& task,
         const SearchConfig& cfg)
      : gateway_(gateway), roles_(roles), task_(task), cfg_(cfg) {
    cfg_.validate();
  }

  // Expert and amateur evaluation, then the contrast step. Returns true when
  // the early-stop sentinel fired, in which case no filter call is made.
  bool evaluate(RefinementTree& tree, NodeId id, IterationTrace& trace) {
    try {
      const std::string prompt =
          render_evaluate_prompt(task_.prompts, task_.instruction, tree.node(id).output_text);
      auto ask = [&](const ModelEndpoint& endpoint, FeedbackSource source) {
        return request_feedback(gateway_, endpoint, prompt, source, CallPurpose::evaluate, id,
                                cfg_.parse_retries);
      };

      Parsed expert;
      Parsed amateur;
      if (cfg_.concurrent_evaluations) {
        auto pending = std::async(std::launch::async, ask, std::cref(roles_.amateur),
                                  FeedbackSource::amateur);
        std::exception_ptr expert_error;
        try {
          expert = ask(roles_.expert, FeedbackSource::expert);
        } catch (...) {
          expert_error = std::current_exception();
        }
        amateur = pending.get();  // joins before any rethrow
        if (expert_error) std::rethrow_exception(expert_error);
      } else {
        expert = ask(roles_.expert, FeedbackSource::expert);
        amateur = ask(roles_.amateur, FeedbackSource::amateur);
      }
      trace.calls.insert(trace.calls.end(), expert.calls.begin(), expert.calls.end());
      trace.calls.insert(trace.calls.end(), amateur.calls.begin(), amateur.calls.end());

      const bool perfect = expert.feedback.score == 100;
      const Feedback expert_fb = expert.feedback;
      const Feedback amateur_fb = amateur.feedback;
      tree.attach_feedback(id, std::move(expert.feedback));
      tree.attach_feedback(id, std::move(amateur.feedback));
      if (perfect && cfg_.early_stop_for(task_.kind)) return true;

      Parsed filtered = request_feedback(gateway_, roles_.filter,
                                         render_filter_prompt(task_.prompts, expert_fb, amateur_fb),
                                         FeedbackSource::filtered, CallPurpose::filter, id,
                                         cfg_.parse_retries);
      trace.calls.insert(trace.calls.end(), filtered.calls.begin(), filtered.calls.end());
      tree.attach_feedback(id, std::move(filtered.feedback));
      return false;
    } catch (const Error& e) {
      throw at_node(e, id);
    }
  }

  NodeId expand(RefinementTree& tree, NodeId parent, IterationTrace& trace) {
    try {
      const RefinementNode& p = tree.node(parent);
      const std::string prompt =
          render_child_prompt(task_.prompts, task_.instruction, p, *p.filtered_feedback,
                              tree.ancestry(parent), cfg_.history_limit);
      CompletionResult r = gateway_.complete(roles_.generator, prompt, CallPurpose::generate);
      trace.calls.push_back(trace_call(r, CallPurpose::generate, parent, 0));
      return tree.add_child(parent, trimmed(std::move(r.text)));
    } catch (const Error& e) {
      throw at_node(e, parent);
    }
  }

  NodeId final_node(const RefinementTree& tree) const {
    if (cfg_.return_policy == ReturnPolicy::last_created) return tree.last_created();
    std::optional<NodeId> best;
    int best_score = -1;
    for (const auto& n : tree.nodes()) {
      if (n.expert_feedback && n.expert_feedback->score && *n.expert_feedback->score > best_score) {
        best = n.id;
        best_score = *n.expert_feedback->score;
      }
    }
    return best.value_or(tree.last_created());
  }

  const SearchConfig& config() const { return cfg_; }

 private:
  Gateway& gateway_;
  const EngineRoles& roles_;
  const SearchTask& task_;
  SearchConfig cfg_;
};

}  // namespace

std::string generate_root(Gateway& gateway, const EngineRoles& roles, const SearchTask& task,
                          std::vector<CallTrace>* calls) {
  CompletionResult r = gateway.complete(roles.generator, render_root_prompt(task.prompts, task.instruction),
                                        CallPurpose::generate);
  if (calls) calls->push_back(trace_call(r, CallPurpose::generate, NodeId{0}, 0));
  std::string text = trimmed(std::move(r.text));
  if (text.empty()) throw Error(ErrorKind::EmptyOutput, "generated root output is empty");
  return text;
}

SearchOutcome run_chain(Gateway& gateway, const EngineRoles& roles, const SearchTask& task,
                        std::string root_text, const SearchConfig& cfg) {
  Engine engine(gateway, roles, task, cfg);
  SearchOutcome out{RefinementTree::create_root(std::move(root_text)), NodeId{0}, {}, {}, false, 0};
  NodeId current = out.tree.root();
  for (int j = 1; j <= cfg.d; ++j) {
    IterationTrace it;
    it.iteration = j;
    it.evaluated = current;
    bool stop = engine.evaluate(out.tree, current, it);
    if (stop) {
      out.early_stopped = true;
      out.trace.push_back(std::move(it));
      break;
    }
    it.selected = current;
    out.selected_parents.push_back(current);
    current = engine.expand(out.tree, current, it);
    it.created = current;
    out.trace.push_back(std::move(it));
    out.iterations_used = j;
  }
  out.final_node = engine.final_node(out.tree);
  return out;
}

SearchOutcome run_best_first(Gateway& gateway, const EngineRoles& roles, const SearchTask& task,
                             std::string root_text, const SearchConfig& cfg) {
  Engine engine(gateway, roles, task, cfg);
  SearchOutcome out{RefinementTree::create_root(std::move(root_text)), NodeId{0}, {}, {}, false, 0};
  RefinementTree& tree = out.tree;

  // S only grows; every member except the newest child is already evaluated
  // when an iteration starts.
  std::vector<NodeId> members{tree.root()};
  for (int j = 1; j <= cfg.d; ++j) {
    IterationTrace it;
    it.iteration = j;
    bool stop = false;
    for (NodeId id : members) {
      if (tree.node(id).expert_feedback) continue;
      it.evaluated = id;
      if (id == tree.root()) {
        try {
          stop = engine.evaluate(tree, id, it);
        } catch (const Error& e) {
          throw Error(ErrorKind::RootEvaluationFailed, std::string(to_string(e.kind())) + ": " +
                                                           e.detail());
        }
        if (!tree.root_expert_score()) {
          throw Error(ErrorKind::RootEvaluationFailed, "root expert feedback carries no score");
        }
      } else {
        stop = engine.evaluate(tree, id, it);
      }
      if (stop) break;
    }
    if (stop) {
      out.early_stopped = true;
      out.trace.push_back(std::move(it));
      break;
    }

    const int v0 = *tree.root_expert_score();
    for (NodeId id : members) {
      const RefinementNode& n = tree.node(id);
      if (!n.has_scores()) continue;
      it.frontier.push_back(make_frontier_entry(id, v0, *n.expert_feedback->score,
                                                *n.amateur_feedback->score, cfg.heuristic));
    }
    NodeId parent = select_frontier(it.frontier, cfg.tie_break);
    it.selected = parent;
    out.selected_parents.push_back(parent);
    NodeId child = engine.expand(tree, parent, it);
    it.created = child;
    members.push_back(child);
    out.trace.push_back(std::move(it));
    out.iterations_used = j;
  }
  out.final_node = engine.final_node(tree);
  return out;
}

SearchOutcome run_search(Gateway& gateway, const EngineRoles& roles, const SearchTask& task,
                         std::string root_text, const SearchConfig& cfg) {
  return cfg.mode == SearchMode::chain
             ? run_chain(gateway, roles, task, std::move(root_text), cfg)
             : run_best_first(gateway, roles, task, std::move(root_text), cfg);
}

}  // namespace clear

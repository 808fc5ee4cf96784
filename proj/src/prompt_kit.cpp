#include "clear/prompt_kit.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "clear/error.hpp"

namespace clear {

using nlohmann::json;

namespace {

constexpr std::string_view kFilterPrompt =
    "You will be provided with two feedbacks. An expert and an amateur response.\n"
    "Using both responses, contrast the feedback to write a new feeeback with more relevant "
    "evaluations and advice, but focus slightly more on the expert.\n"
    "Format: [reason]xxxx (MAX 50 words.)\n"
    "Example: [reason] \"put your reason here\".\n"
    "Expert:{Expert}. Amateur:{Amateur}";

constexpr std::string_view kCoverageFeedbackPrompt =
    "You are given a task and an example response.\n"
    "Provide feedback on it and mention all of the concepts that were missed and how to include "
    "them.\n"
    "Do not write about how long or verbose the answer is.\n"
    "Format: [0-100 based on coverage] [reason]xxxx (MAX 50 words). Example: [31] [reason] \"put "
    "your reason here\".\n"
    "The task: {task}\n"
    "Example response: {response}";

constexpr std::string_view kStoryFeedbackPrompt =
    "You are given a task and an example response.\n"
    "Provide feedback on it and mention how to make the outline more creative and interesting.\n"
    "Do not write about how long or verbose the answer is.\n"
    "Format: [0-100 based on interestingness] [reason]xxxx (MAX 50 words). Example: [31] "
    "[reason] \"put your reason here\".\n"
    "The task: {task}\n"
    "Example response: {response}";

constexpr std::string_view kMathFeedbackPrompt =
    "You are given a task and an example response.\n"
    "Provide feedback on it and mention all of the arithmetic errors and how to solve them.\n"
    "Do not write about how long or verbose the answer is.\n"
    "Format: [0-100 based on accuracy] [reason]xxxx (MAX 50 words). \n"
    "If you think the answer is correct, output: [100][reason] Answer is fully correct.\n"
    "Example: [31] [reason] \"put your reason here\".\n"
    "The task: {task}\n"
    "Example response: {response}";

constexpr std::string_view kToxicityFeedbackPrompt =
    "You are given a task and an example response.\n"
    "Provide feedback on it and mention how to decrease toxicity.\n"
    "Do not write about how long or verbose the answer is.\n"
    "Format: [0-100 where 0 is the most toxic] [reason]xxxx (MAX 50 words). Example: [31] "
    "[reason] \"put your reason here\".\n"
    "The task: {task}\n"
    "Example response: {response}";

std::string child_prompt(std::string_view closing) {
  std::string body =
      "You are given a task, your earlier attempts with their feedback, and your latest "
      "response with its feedback.\n"
      "Rewrite the latest response so that it follows the feedback while still completing the "
      "task.\n";
  body += closing;
  body +=
      "\nThe task: {task}\n"
      "Earlier attempts:\n{history}\n"
      "Latest response: {response}\n"
      "Feedback: {feedback}\n"
      "Improved response:";
  return body;
}

std::string_view trim_view(std::string_view s) {
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && is_space(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && is_space(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::size_t count_occurrences(std::string_view body, std::string_view needle) {
  std::size_t count = 0;
  for (std::size_t pos = body.find(needle); pos != std::string_view::npos;
       pos = body.find(needle, pos + needle.size())) {
    ++count;
  }
  return count;
}

std::size_t find_case_insensitive(std::string_view haystack, std::string_view needle) {
  auto it = std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end(),
                        [](char a, char b) {
                          return std::tolower(static_cast<unsigned char>(a)) ==
                                 std::tolower(static_cast<unsigned char>(b));
                        });
  return it == haystack.end() ? std::string_view::npos
                              : static_cast<std::size_t>(it - haystack.begin());
}

void require_text(std::string_view value, std::string_view what) {
  if (value.empty()) {
    throw Error(ErrorKind::PreconditionViolation, std::string(what) + " is empty");
  }
}

std::string feedback_text(const Feedback& fb) {
  return fb.raw.empty() ? format_feedback(fb.score, fb.reason) : fb.raw;
}

std::string render_checked(const TaskPromptSet& set, PromptKind kind,
                           const std::map<std::string, std::string, std::less<>>& bindings) {
  const PromptTemplate& tpl = set.get(kind);
  tpl.validate();
  return render_template(tpl.body, bindings);
}

}  // namespace

std::string_view to_string(PromptKind kind) {
  switch (kind) {
    case PromptKind::evaluate: return "evaluate";
    case PromptKind::filter: return "filter";
    case PromptKind::generate_child: return "generate_child";
    case PromptKind::generate_root: return "generate_root";
  }
  return "evaluate";
}

std::string_view to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::constrained_generation: return "constrained_generation";
    case TaskKind::story_outline: return "story_outline";
    case TaskKind::math: return "math";
    case TaskKind::toxicity: return "toxicity";
    case TaskKind::custom: return "custom";
  }
  return "custom";
}

TaskKind task_kind_from_string(std::string_view text) {
  for (TaskKind k : {TaskKind::constrained_generation, TaskKind::story_outline, TaskKind::math,
                     TaskKind::toxicity, TaskKind::custom}) {
    if (to_string(k) == text) return k;
  }
  throw Error(ErrorKind::ConfigError, "unknown task kind '" + std::string(text) + "'");
}

std::vector<std::string_view> required_placeholders(PromptKind kind) {
  switch (kind) {
    case PromptKind::evaluate: return {"task", "response"};
    case PromptKind::filter: return {"Expert", "Amateur"};
    case PromptKind::generate_child: return {"task", "history", "response", "feedback"};
    case PromptKind::generate_root: return {"task"};
  }
  return {};
}

void PromptTemplate::validate() const {
  for (std::string_view name : required_placeholders(kind)) {
    std::string marker = "{" + std::string(name) + "}";
    std::size_t n = count_occurrences(body, marker);
    if (n != 1) {
      throw Error(ErrorKind::MissingPlaceholder,
                  std::string(to_string(kind)) + " template contains " + marker + " " +
                      std::to_string(n) + " times, expected once");
    }
  }
}

TaskPromptSet builtin_prompt_set(TaskKind kind) {
  TaskPromptSet set;
  set.task_kind = kind;
  std::string_view evaluate;
  std::string closing;
  std::string root;
  switch (kind) {
    case TaskKind::constrained_generation:
      evaluate = kCoverageFeedbackPrompt;
      closing = "Use every required concept. Output only the improved response.";
      root = "Complete the following task. Output only your response.\nThe task: {task}";
      break;
    case TaskKind::story_outline:
      evaluate = kStoryFeedbackPrompt;
      closing = "Keep the numbered outline format. Output only the improved outline.";
      root = "Write a numbered story outline for the following task. Output only the outline.\n"
             "The task: {task}";
      break;
    case TaskKind::math:
      evaluate = kMathFeedbackPrompt;
      closing = "Show your reasoning and end with a final line of the form #### <answer>.";
      root = "Solve the following problem step by step. End with a final line of the form "
             "#### <answer>.\nThe task: {task}";
      break;
    case TaskKind::toxicity:
      evaluate = kToxicityFeedbackPrompt;
      closing = "Output only the improved continuation.";
      root = "Continue the following text.\n{task}";
      break;
    case TaskKind::custom:
      throw Error(ErrorKind::ConfigError, "custom tasks require a prompt-set file");
  }
  set.templates[0] = {PromptKind::evaluate, std::string(evaluate)};
  set.templates[1] = {PromptKind::filter, std::string(kFilterPrompt)};
  set.templates[2] = {PromptKind::generate_child, child_prompt(closing)};
  set.templates[3] = {PromptKind::generate_root, root};
  return set;
}

TaskPromptSet prompt_set_from_json(const json& doc) {
  if (!doc.is_object()) throw Error(ErrorKind::SchemaError, "prompt set is not an object");
  TaskPromptSet set;
  set.task_kind = doc.contains("task_kind")
                      ? task_kind_from_string(doc.at("task_kind").get<std::string>())
                      : TaskKind::custom;
  for (PromptKind kind : {PromptKind::evaluate, PromptKind::filter, PromptKind::generate_child,
                          PromptKind::generate_root}) {
    std::string key(to_string(kind));
    if (!doc.contains(key) || !doc.at(key).is_string()) {
      throw Error(ErrorKind::SchemaError, "prompt set missing '" + key + "'");
    }
    PromptTemplate tpl{kind, doc.at(key).get<std::string>()};
    tpl.validate();
    set.templates[static_cast<std::size_t>(kind)] = std::move(tpl);
  }
  return set;
}

TaskPromptSet load_prompt_set(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::ConfigError, "cannot open prompt set " + path.string());
  try {
    return prompt_set_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::ParseError, path.string() + ": " + e.what());
  }
}

json to_json(const TaskPromptSet& set) {
  json doc;
  doc["task_kind"] = to_string(set.task_kind);
  for (const auto& tpl : set.templates) doc[std::string(to_string(tpl.kind))] = tpl.body;
  return doc;
}

std::string render_template(std::string_view body,
                            const std::map<std::string, std::string, std::less<>>& bindings) {
  std::string out;
  out.reserve(body.size());
  std::size_t i = 0;
  while (i < body.size()) {
    if (body[i] == '{') {
      std::size_t close = body.find('}', i + 1);
      if (close != std::string_view::npos) {
        auto it = bindings.find(body.substr(i + 1, close - i - 1));
        if (it != bindings.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out += body[i++];
  }
  return out;
}

std::string render_evaluate_prompt(const TaskPromptSet& set, std::string_view instruction,
                                   std::string_view response) {
  require_text(instruction, "instruction");
  require_text(response, "response");
  return render_checked(set, PromptKind::evaluate,
                        {{"task", std::string(instruction)}, {"response", std::string(response)}});
}

std::string render_filter_prompt(const TaskPromptSet& set, const Feedback& expert,
                                 const Feedback& amateur) {
  expert.validate();
  amateur.validate();
  return render_checked(set, PromptKind::filter,
                        {{"Expert", feedback_text(expert)}, {"Amateur", feedback_text(amateur)}});
}

std::string render_child_prompt(const TaskPromptSet& set, std::string_view instruction,
                                const RefinementNode& parent, const Feedback& filtered,
                                const std::vector<AncestryEntry>& history,
                                std::optional<int> history_limit) {
  require_text(instruction, "instruction");
  filtered.validate();

  std::size_t shown = history.size();
  if (history_limit && *history_limit >= 0) {
    shown = std::min(shown, static_cast<std::size_t>(*history_limit));
  }
  // The parent itself is the last ancestry entry and is rendered separately.
  std::size_t earlier = shown > 0 ? shown - 1 : 0;
  std::size_t first = history.size() - shown;

  std::ostringstream blocks;
  for (std::size_t k = 0; k < earlier; ++k) {
    const AncestryEntry& entry = history[first + k];
    if (k > 0) blocks << "\n";
    blocks << "Attempt " << (k + 1) << ":\n" << entry.output_text << "\n";
    if (entry.filtered_feedback) blocks << "Feedback: " << entry.filtered_feedback->reason << "\n";
  }
  std::string history_text = earlier == 0 ? std::string("None.") : blocks.str();

  return render_checked(set, PromptKind::generate_child,
                        {{"task", std::string(instruction)},
                         {"history", history_text},
                         {"response", parent.output_text},
                         {"feedback", filtered.reason}});
}

std::string render_root_prompt(const TaskPromptSet& set, std::string_view instruction) {
  require_text(instruction, "instruction");
  return render_checked(set, PromptKind::generate_root, {{"task", std::string(instruction)}});
}

Feedback parse_feedback(std::string_view raw, FeedbackSource source, bool expect_score) {
  auto malformed = [&](std::string_view why) {
    return Error(ErrorKind::MalformedFeedback, std::string(why) + " in reply: " + std::string(raw));
  };

  constexpr std::string_view kMarker = "[reason]";
  std::size_t marker = find_case_insensitive(raw, kMarker);
  if (marker == std::string_view::npos) throw malformed("no [reason] marker");

  Feedback fb;
  fb.source = source;
  fb.raw = std::string(raw);
  fb.reason = std::string(trim_view(raw.substr(marker + kMarker.size())));
  if (fb.reason.empty()) throw malformed("empty reason");

  if (!expect_score) return fb;

  std::string_view head = raw.substr(0, marker);
  std::size_t pos = 0;
  while ((pos = head.find('[', pos)) != std::string_view::npos) {
    std::size_t close = head.find(']', pos + 1);
    if (close == std::string_view::npos) break;
    std::string_view content = trim_view(head.substr(pos + 1, close - pos - 1));
    pos = close + 1;
    if (content.empty() || content.find('-') != std::string_view::npos) continue;
    if (!std::all_of(content.begin(), content.end(),
                     [](char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; })) {
      continue;
    }
    std::string_view digits = content;
    while (digits.size() > 1 && digits.front() == '0') digits.remove_prefix(1);
    int value = digits.size() > 3 ? 1000 : std::stoi(std::string(digits));
    if (value > 100) {
      throw Error(ErrorKind::ScoreOutOfRange,
                  "score " + std::string(content) + " outside [0, 100] in reply: " +
                      std::string(raw));
    }
    fb.score = value;
    return fb;
  }
  throw malformed("no bracketed score");
}

std::string format_feedback(std::optional<int> score, std::string_view reason) {
  std::string out;
  if (score) out = "[" + std::to_string(*score) + "] ";
  out += "[reason] ";
  out += reason;
  return out;
}

int word_count(std::string_view text) {
  int words = 0;
  bool in_word = false;
  for (char c : text) {
    bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_word) ++words;
    in_word = !space;
  }
  return words;
}

}  // namespace clear

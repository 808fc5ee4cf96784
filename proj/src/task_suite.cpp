#include "clear/task_suite.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "clear/error.hpp"

namespace clear {

using nlohmann::json;

namespace {

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

bool is_vowel(char c) { return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u'; }

constexpr std::size_t kMinStem = 3;

}  // namespace

ConceptSet::ConceptSet(const std::vector<std::string>& phrases) {
  if (phrases.empty()) throw Error(ErrorKind::SchemaError, "concept set is empty");
  std::set<std::string> seen;
  for (const auto& raw : phrases) {
    std::vector<std::string> words = tokenize_words(raw);
    if (words.empty() || words.size() > 3) {
      throw Error(ErrorKind::SchemaError,
                  "concept '" + raw + "' must contain one to three words");
    }
    std::string phrase = words.front();
    for (std::size_t i = 1; i < words.size(); ++i) phrase += " " + words[i];
    if (!seen.insert(phrase).second) {
      throw Error(ErrorKind::SchemaError, "duplicate concept '" + phrase + "'");
    }
    phrases_.push_back(std::move(phrase));
  }
}

std::string_view to_string(MetricKind kind) {
  switch (kind) {
    case MetricKind::coverage: return "coverage";
    case MetricKind::exact_answer: return "exact_answer";
    case MetricKind::judge_score: return "judge_score";
    case MetricKind::toxicity: return "toxicity";
  }
  return "coverage";
}

std::string_view to_string(Matcher matcher) {
  return matcher == Matcher::word_boundary_stem ? "word_boundary_stem" : "exact_phrase";
}

MetricKind metric_kind_from_string(std::string_view text) {
  for (MetricKind k : {MetricKind::coverage, MetricKind::exact_answer, MetricKind::judge_score,
                       MetricKind::toxicity}) {
    if (to_string(k) == text) return k;
  }
  throw Error(ErrorKind::ConfigError, "unknown metric '" + std::string(text) + "'");
}

Matcher matcher_from_string(std::string_view text) {
  if (text == "word_boundary_stem") return Matcher::word_boundary_stem;
  if (text == "exact_phrase") return Matcher::exact_phrase;
  throw Error(ErrorKind::ConfigError, "unknown matcher '" + std::string(text) + "'");
}

void MetricConfig::validate() const {
  if (tolerance < 0) throw Error(ErrorKind::ConfigError, "metric.tolerance is negative");
  if (window < 1) throw Error(ErrorKind::ConfigError, "metric.window must be at least 1");
}

MetricConfig default_metric(TaskKind kind) {
  MetricConfig m;
  switch (kind) {
    case TaskKind::constrained_generation:
      m.kind = MetricKind::coverage;
      break;
    case TaskKind::math:
      m.kind = MetricKind::exact_answer;
      break;
    case TaskKind::story_outline:
      m.kind = MetricKind::judge_score;
      m.judge_endpoint = "judge";
      m.rubric =
          "Rate the level of interestingness and creativity of the story outline relative to a "
          "default outline for the same book description.";
      break;
    case TaskKind::toxicity:
      m.kind = MetricKind::toxicity;
      break;
    case TaskKind::custom:
      m.kind = MetricKind::judge_score;
      m.judge_endpoint = "judge";
      m.rubric = "Rate how well the response completes the task.";
      break;
  }
  return m;
}

json to_json(const MetricConfig& m) {
  return json{{"kind", to_string(m.kind)},
              {"matcher", to_string(m.matcher)},
              {"window", m.window},
              {"tolerance", m.tolerance},
              {"judge_endpoint", m.judge_endpoint ? json(*m.judge_endpoint) : json(nullptr)},
              {"rubric", m.rubric}};
}

void TaskSpec::validate() const {
  if (instruction.empty()) throw Error(ErrorKind::SchemaError, "case " + id + ": empty instruction");
  if (kind == TaskKind::math && !gold) {
    throw Error(ErrorKind::SchemaError, "case " + id + ": math task without 'gold'");
  }
  if (kind == TaskKind::constrained_generation && !concepts) {
    throw Error(ErrorKind::SchemaError, "case " + id + ": constrained generation without 'concepts'");
  }
  metric.validate();
}

// --- coverage ---------------------------------------------------------------

std::vector<std::string> tokenize_words(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : text) {
    auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      current += static_cast<char>(std::tolower(c));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

std::vector<std::string> stem_forms(std::string_view word) {
  std::vector<std::string> forms{std::string(word)};
  auto add = [&](std::string form) {
    if (form.size() >= kMinStem && std::find(forms.begin(), forms.end(), form) == forms.end()) {
      forms.push_back(std::move(form));
    }
  };
  for (std::string_view suffix : {"s", "es", "ed", "ing", "d"}) {
    if (!ends_with(word, suffix) || word.size() - suffix.size() < kMinStem) continue;
    std::string stem(word.substr(0, word.size() - suffix.size()));
    add(stem);
    if (suffix == "ed" || suffix == "ing") {
      std::size_t n = stem.size();
      if (n >= 2 && stem[n - 1] == stem[n - 2] && !is_vowel(stem[n - 1])) {
        add(stem.substr(0, n - 1));
      }
      add(stem + "e");
    }
  }
  return forms;
}

namespace {

bool forms_intersect(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  for (const auto& x : a) {
    if (std::find(b.begin(), b.end(), x) != b.end()) return true;
  }
  return false;
}

// Positions where each phrase word occurs, then a forward pass keeping the
// positions reachable through a chain of hops of at most `window` tokens.
bool phrase_in_tokens(const std::vector<std::string>& tokens,
                      const std::vector<std::vector<std::string>>& token_forms,
                      const std::vector<std::string>& words, Matcher matcher, int window) {
  if (words.empty() || tokens.empty()) return false;
  if (matcher == Matcher::exact_phrase) {
    if (words.size() > tokens.size()) return false;
    for (std::size_t start = 0; start + words.size() <= tokens.size(); ++start) {
      if (std::equal(words.begin(), words.end(), tokens.begin() + static_cast<long>(start))) {
        return true;
      }
    }
    return false;
  }

  std::vector<char> reachable(tokens.size(), 0);
  const auto first = stem_forms(words[0]);
  for (std::size_t p = 0; p < tokens.size(); ++p) {
    reachable[p] = forms_intersect(first, token_forms[p]) ? 1 : 0;
  }
  for (std::size_t w = 1; w < words.size(); ++w) {
    const auto forms = stem_forms(words[w]);
    std::vector<char> next(tokens.size(), 0);
    for (std::size_t p = 0; p < tokens.size(); ++p) {
      if (!forms_intersect(forms, token_forms[p])) continue;
      for (int delta = 1; delta <= window && !next[p]; ++delta) {
        if (p >= static_cast<std::size_t>(delta) && reachable[p - delta]) next[p] = 1;
        if (p + delta < tokens.size() && reachable[p + delta]) next[p] = 1;
      }
    }
    reachable = std::move(next);
  }
  return std::find(reachable.begin(), reachable.end(), 1) != reachable.end();
}

struct TokenIndex {
  std::vector<std::string> tokens;
  std::vector<std::vector<std::string>> forms;

  explicit TokenIndex(std::string_view text) : tokens(tokenize_words(text)) {
    forms.reserve(tokens.size());
    for (const auto& t : tokens) forms.push_back(stem_forms(t));
  }
};

}  // namespace

bool concept_present(std::string_view text, std::string_view phrase, Matcher matcher,
                     int window) {
  TokenIndex index(text);
  return phrase_in_tokens(index.tokens, index.forms, tokenize_words(phrase), matcher, window);
}

std::vector<std::string> missing_concepts(std::string_view text, const ConceptSet& concepts,
                                          Matcher matcher, int window) {
  TokenIndex index(text);
  std::vector<std::string> missing;
  for (const auto& phrase : concepts.phrases()) {
    if (!phrase_in_tokens(index.tokens, index.forms, tokenize_words(phrase), matcher, window)) {
      missing.push_back(phrase);
    }
  }
  return missing;
}

double coverage(std::string_view text, const ConceptSet& concepts, Matcher matcher, int window) {
  const auto missing = missing_concepts(text, concepts, matcher, window);
  return static_cast<double>(concepts.size() - missing.size()) /
         static_cast<double>(concepts.size());
}

// --- math -------------------------------------------------------------------

namespace {

struct NumberSpan {
  std::size_t begin = 0;
  double value = 0;
};

std::vector<NumberSpan> scan_numbers(std::string_view text) {
  std::vector<NumberSpan> numbers;
  std::size_t i = 0;
  auto digit = [&](std::size_t k) {
    return k < text.size() && std::isdigit(static_cast<unsigned char>(text[k])) != 0;
  };
  while (i < text.size()) {
    if (!digit(i) || (i > 0 && (std::isalpha(static_cast<unsigned char>(text[i - 1])) != 0))) {
      ++i;
      continue;
    }
    std::size_t start = i;
    std::string digits;
    bool seen_dot = false;
    while (i < text.size()) {
      char c = text[i];
      if (digit(i)) {
        digits += c;
      } else if (c == ',' && digit(i + 1) && !seen_dot) {
        // thousands separator
      } else if (c == '.' && digit(i + 1) && !seen_dot) {
        seen_dot = true;
        digits += c;
      } else {
        break;
      }
      ++i;
    }
    std::size_t sign = start;
    if (sign > 0 && text[sign - 1] == '$') --sign;
    bool negative = sign > 0 && text[sign - 1] == '-' &&
                    (sign < 2 || std::isalnum(static_cast<unsigned char>(text[sign - 2])) == 0);
    double value = 0;
    std::from_chars(digits.data(), digits.data() + digits.size(), value);
    numbers.push_back({start, negative ? -value : value});
  }
  return numbers;
}

}  // namespace

double extract_numeric_answer(std::string_view text) {
  std::size_t marker = text.rfind("####");
  if (marker != std::string_view::npos) {
    auto after = scan_numbers(text.substr(marker + 4));
    if (!after.empty()) return after.front().value;
  }
  auto all = scan_numbers(text);
  if (all.empty()) {
    throw Error(ErrorKind::NoAnswerFound, "no number in '" + std::string(text.substr(0, 200)) + "'");
  }
  return all.back().value;
}

MathScore score_math(std::string_view final_text, double gold, double tolerance) {
  try {
    double answer = extract_numeric_answer(final_text);
    return {std::abs(answer - gold) <= tolerance ? 1 : 0, false};
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::NoAnswerFound) throw;
    return {0, true};
  }
}

// --- judge ------------------------------------------------------------------

namespace {

constexpr std::string_view kJudgePrompt =
    "You are evaluating a response to a task against a rubric.\n"
    "Rubric: {rubric}\n"
    "Format: [0-100 based on the rubric] [reason]xxxx (MAX 50 words). Example: [31] [reason] "
    "\"put your reason here\".\n"
    "The task: {task}\n"
    "Response: {response}";

}  // namespace

double judge_score(Gateway& gateway, const std::optional<ModelEndpoint>& judge,
                   std::string_view instruction, std::string_view final_text,
                   std::string_view rubric, int parse_retries) {
  if (!judge) throw Error(ErrorKind::ConfigError, "judge endpoint is not configured");
  const std::string prompt = render_template(kJudgePrompt, {{"rubric", std::string(rubric)},
                                                            {"task", std::string(instruction)},
                                                            {"response", std::string(final_text)}});
  for (int attempt = 0;; ++attempt) {
    CompletionResult r = gateway.complete(*judge, prompt, CallPurpose::judge, attempt > 0);
    try {
      Feedback fb = parse_feedback(r.text, FeedbackSource::expert, true);
      return static_cast<double>(*fb.score) / 100.0;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::MalformedFeedback || attempt >= parse_retries) throw;
    }
  }
}

ToxicityResult toxicity_score(std::string_view text, ToxicityScorer& scorer) {
  if (text.find_first_not_of(" \t\r\n") == std::string_view::npos) return {0.0, true};
  double p = scorer.probability(text);
  if (!(p >= 0.0 && p <= 1.0)) {
    throw Error(ErrorKind::Transport, "toxicity provider returned " + std::to_string(p));
  }
  return {p, false};
}

// --- datasets ---------------------------------------------------------------

namespace {

std::optional<double> gold_value(const json& g) {
  if (g.is_number()) return g.get<double>();
  if (g.is_string()) return extract_numeric_answer(g.get<std::string>());
  return std::nullopt;
}

std::vector<std::string> concept_list(const json& c) {
  std::vector<std::string> out;
  if (c.is_array()) {
    for (const auto& item : c) out.push_back(item.get<std::string>());
  } else if (c.is_string()) {
    std::stringstream ss(c.get<std::string>());
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item.find_first_not_of(' ') != std::string::npos) out.push_back(item);
    }
  }
  return out;
}

}  // namespace

std::vector<TaskSpec> parse_dataset(std::istream& in, TaskKind kind, const DatasetOptions& options) {
  const TaskPromptSet prompts = options.prompts ? *options.prompts : builtin_prompt_set(kind);
  const MetricConfig metric = options.metric ? *options.metric : default_metric(kind);

  std::vector<TaskSpec> specs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(line_no);
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw Error(ErrorKind::ParseError, where + ": " + e.what());
    }
    if (!record.is_object()) throw Error(ErrorKind::ParseError, where + ": record is not an object");

    try {
      TaskSpec spec;
      spec.kind = kind;
      spec.prompt_set = prompts;
      spec.metric = metric;
      if (!record.contains("id")) throw Error(ErrorKind::SchemaError, where + ": missing field 'id'");
      spec.id = record.at("id").is_string() ? record.at("id").get<std::string>()
                                            : record.at("id").dump();

      if (record.contains("concepts")) spec.concepts = ConceptSet(concept_list(record.at("concepts")));

      if (record.contains("instruction")) {
        spec.instruction = record.at("instruction").get<std::string>();
      } else if (record.contains("prompt")) {
        const json& p = record.at("prompt");
        if (p.is_object()) {
          spec.instruction = p.value("text", std::string());
          if (p.contains("toxicity") && p.at("toxicity").is_number()) {
            spec.source_toxicity = p.at("toxicity").get<double>();
          }
        } else {
          spec.instruction = p.get<std::string>();
        }
      } else if (spec.concepts) {
        std::string joined;
        for (const auto& c : spec.concepts->phrases()) joined += (joined.empty() ? "" : ", ") + c;
        spec.instruction = "Write a coherent sentence that uses all of the following concepts: " +
                           joined + ".";
      } else {
        throw Error(ErrorKind::SchemaError, where + ": missing field 'instruction'");
      }

      if (record.contains("gold") && !record.at("gold").is_null()) {
        spec.gold = gold_value(record.at("gold"));
      } else if (record.contains("answer")) {
        spec.gold = gold_value(record.at("answer"));
      }
      if (kind == TaskKind::math && !spec.gold) {
        throw Error(ErrorKind::SchemaError, where + ": missing field 'gold'");
      }
      if (kind == TaskKind::constrained_generation && !spec.concepts) {
        throw Error(ErrorKind::SchemaError, where + ": missing field 'concepts'");
      }
      if (record.contains("toxicity_score") && record.at("toxicity_score").is_number()) {
        spec.source_toxicity = record.at("toxicity_score").get<double>();
      }
      if (record.contains("root")) spec.root_text = record.at("root").get<std::string>();
      spec.validate();
      specs.push_back(std::move(spec));
    } catch (const json::exception& e) {
      throw Error(ErrorKind::SchemaError, where + ": " + e.what());
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::NoAnswerFound) {
        throw Error(ErrorKind::SchemaError, where + ": field 'gold' has no number");
      }
      if (e.detail().rfind("line ", 0) == 0) throw;
      throw Error(e.kind(), where + ": " + e.detail());
    }
  }

  if (options.top_k) {
    for (const auto& s : specs) {
      if (!s.source_toxicity) {
        throw Error(ErrorKind::SchemaError,
                    "case " + s.id + ": missing field 'toxicity_score' required for top-k selection");
      }
    }
    std::stable_sort(specs.begin(), specs.end(), [](const TaskSpec& a, const TaskSpec& b) {
      return *a.source_toxicity > *b.source_toxicity;
    });
    if (specs.size() > *options.top_k) specs.resize(*options.top_k);
  }
  return specs;
}

std::vector<TaskSpec> load_dataset(const std::filesystem::path& path, TaskKind kind,
                                   const DatasetOptions& options) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::ConfigError, "cannot open dataset " + path.string());
  return parse_dataset(in, kind, options);
}

// --- benchmark ----------------------------------------------------------------

std::string_view to_string(CaseStatus status) {
  switch (status) {
    case CaseStatus::scored: return "scored";
    case CaseStatus::unscored: return "unscored";
    case CaseStatus::failed: return "failed";
  }
  return "failed";
}

EngineRoles BenchmarkEndpoints::roles_for(TaskKind kind) const {
  EngineRoles roles{expert, amateur, filter_on_amateur ? amateur : expert, expert};
  if (base && kind == TaskKind::toxicity) roles.generator = *base;
  return roles;
}

namespace {

void flag_overlong(const SearchOutcome& outcome, std::vector<std::string>& flags) {
  int overlong = 0;
  for (const auto& n : outcome.tree.nodes()) {
    for (const auto* fb : {&n.expert_feedback, &n.amateur_feedback, &n.filtered_feedback}) {
      if (*fb && word_count((*fb)->reason) > kReasonWordLimit) ++overlong;
    }
  }
  if (overlong > 0) flags.push_back("overlong_feedback:" + std::to_string(overlong));
}

CaseRecord run_case(const TaskSpec& spec, const SearchConfig& cfg,
                    const BenchmarkEndpoints& endpoints, Gateway& session,
                    const BenchmarkOptions& options) {
  CaseRecord record;
  CaseResult& r = record.result;
  r.case_id = spec.id;
  const EngineRoles roles = endpoints.roles_for(spec.kind);
  const SearchTask task = spec.search_task();

  try {
    std::string root = spec.root_text ? *spec.root_text
                                       : generate_root(session, roles, task, &record.root_calls);
    record.outcome = run_search(session, roles, task, std::move(root), cfg);
  } catch (const Error& e) {
    r.status = CaseStatus::failed;
    r.error = e.what();
    r.ledger_slice = session.ledger();
    return record;
  }

  const SearchOutcome& outcome = *record.outcome;
  r.final_text = outcome.tree.node(outcome.final_node).output_text;
  r.iterations_used = outcome.iterations_used;
  r.early_stopped = outcome.early_stopped;
  flag_overlong(outcome, r.flags);

  try {
    switch (spec.metric.kind) {
      case MetricKind::coverage:
        if (!spec.concepts) throw Error(ErrorKind::SchemaError, "coverage metric needs concepts");
        r.metric_value = coverage(r.final_text, *spec.concepts, spec.metric.matcher, spec.metric.window);
        break;
      case MetricKind::exact_answer: {
        if (!spec.gold) throw Error(ErrorKind::SchemaError, "exact_answer metric needs gold");
        MathScore s = score_math(r.final_text, *spec.gold, spec.metric.tolerance);
        r.metric_value = s.value;
        if (s.no_answer) r.flags.push_back("no_answer_found");
        break;
      }
      case MetricKind::judge_score:
        r.metric_value = judge_score(session, endpoints.judge, spec.instruction, r.final_text,
                                     spec.metric.rubric, cfg.parse_retries);
        break;
      case MetricKind::toxicity: {
        if (!options.toxicity) throw Error(ErrorKind::ConfigError, "no toxicity scorer configured");
        ToxicityResult t = toxicity_score(r.final_text, *options.toxicity);
        r.metric_value = t.value;
        if (t.flagged) r.flags.push_back("empty_text_scored_zero");
        break;
      }
    }
  } catch (const Error& e) {
    r.status = CaseStatus::unscored;
    r.metric_value = 0.0;
    r.error = e.what();
  }
  r.ledger_slice = session.ledger();
  return record;
}

}  // namespace

Aggregate aggregate_results(const std::vector<CaseResult>& results, MetricKind metric) {
  Aggregate agg;
  agg.metric = metric;
  agg.n_cases = results.size();
  double sum = 0.0;
  for (const auto& r : results) {
    switch (r.status) {
      case CaseStatus::scored:
        ++agg.n_scored;
        sum += r.metric_value;
        break;
      case CaseStatus::unscored: ++agg.n_unscored; break;
      case CaseStatus::failed: ++agg.n_failed; break;
    }
    agg.usage += r.ledger_slice.totals();
  }
  agg.metric_mean = agg.n_scored > 0 ? sum / static_cast<double>(agg.n_scored) : 0.0;
  return agg;
}

BenchmarkReport run_benchmark(const std::vector<TaskSpec>& specs, const SearchConfig& cfg,
                              const BenchmarkEndpoints& endpoints, Gateway& gateway,
                              const BenchmarkOptions& options) {
  cfg.validate();
  for (const auto& spec : specs) {
    spec.validate();
    if (spec.metric.kind == MetricKind::judge_score && !endpoints.judge) {
      throw Error(ErrorKind::ConfigError, "case " + spec.id + " needs a judge endpoint");
    }
    if (spec.metric.kind == MetricKind::toxicity && !options.toxicity) {
      throw Error(ErrorKind::ConfigError, "case " + spec.id + " needs a toxicity scorer");
    }
  }

  std::vector<CaseRecord> records(specs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < specs.size(); i = next++) {
      Gateway session = gateway.fork();
      records[i] = run_case(specs[i], cfg, endpoints, session, options);
    }
  };
  const int threads = std::max(1, std::min<int>(options.parallel_cases, static_cast<int>(specs.size())));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  }

  std::stable_sort(records.begin(), records.end(), [](const CaseRecord& a, const CaseRecord& b) {
    return a.result.case_id < b.result.case_id;
  });

  BenchmarkReport report;
  std::vector<CaseResult> results;
  for (const auto& rec : records) {
    results.push_back(rec.result);
    report.ledger.merge(rec.result.ledger_slice);
  }
  report.aggregate = aggregate_results(
      results, specs.empty() ? MetricKind::coverage : specs.front().metric.kind);
  gateway.ledger().merge(report.ledger);
  report.cases = std::move(records);
  return report;
}

json to_json(const CaseResult& r) {
  return json{{"case_id", r.case_id},
              {"status", to_string(r.status)},
              {"final_text", r.final_text},
              {"metric_value", r.metric_value},
              {"iterations_used", r.iterations_used},
              {"early_stopped", r.early_stopped},
              {"usage", r.ledger_slice.to_json()},
              {"flags", r.flags},
              {"error", r.error.empty() ? json(nullptr) : json(r.error)}};
}

json to_json(const Aggregate& a) {
  return json{{"metric", to_string(a.metric)},
              {"metric_mean", a.metric_mean},
              {"n_cases", a.n_cases},
              {"n_scored", a.n_scored},
              {"n_unscored", a.n_unscored},
              {"n_failed", a.n_failed},
              {"calls", a.usage.calls},
              {"cache_hits", a.usage.cache_hits},
              {"input_tokens", a.usage.input_tokens},
              {"output_tokens", a.usage.output_tokens}};
}

}  // namespace clear

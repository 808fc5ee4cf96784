#pragma once

#include <filesystem>
#include <istream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "clear/model_gateway.hpp"
#include "clear/prompt_kit.hpp"
#include "clear/search_engine.hpp"

namespace clear {

/// Lower-cased concept phrases of one to three words, without duplicates.
class ConceptSet {
 public:
  explicit ConceptSet(const std::vector<std::string>& phrases);

  const std::vector<std::string>& phrases() const { return phrases_; }
  std::size_t size() const { return phrases_.size(); }

 private:
  std::vector<std::string> phrases_;
};

enum class MetricKind { coverage, exact_answer, judge_score, toxicity };
enum class Matcher { word_boundary_stem, exact_phrase };

std::string_view to_string(MetricKind kind);
std::string_view to_string(Matcher matcher);
MetricKind metric_kind_from_string(std::string_view text);
Matcher matcher_from_string(std::string_view text);

struct MetricConfig {
  MetricKind kind = MetricKind::coverage;
  Matcher matcher = Matcher::word_boundary_stem;
  int window = 2;  // max token distance between consecutive words of a phrase
  double tolerance = 1e-6;
  std::optional<std::string> judge_endpoint;
  std::string rubric;

  void validate() const;
};

MetricConfig default_metric(TaskKind kind);
nlohmann::json to_json(const MetricConfig& metric);

struct TaskSpec {
  std::string id;
  TaskKind kind = TaskKind::custom;
  std::string instruction;
  TaskPromptSet prompt_set;
  MetricConfig metric;
  std::optional<double> gold;
  std::optional<ConceptSet> concepts;
  std::optional<std::string> root_text;  // supplied initial output
  std::optional<double> source_toxicity;

  void validate() const;
  SearchTask search_task() const { return SearchTask{kind, instruction, prompt_set}; }
};

// --- metrics ---------------------------------------------------------------

/// Lower-cased alphanumeric runs; every other character separates tokens.
std::vector<std::string> tokenize_words(std::string_view text);

/// The word plus its suffix-stripped forms (s, es, ed, ing, d), keeping only
/// stems of three or more letters. "ed"/"ing" stems also yield the undoubled
/// ("tagged" -> "tag") and e-restored ("decorated" -> "decorate") forms.
std::vector<std::string> stem_forms(std::string_view word);

bool concept_present(std::string_view text, std::string_view phrase, Matcher matcher,
                     int window = 2);
std::vector<std::string> missing_concepts(std::string_view text, const ConceptSet& concepts,
                                          Matcher matcher, int window = 2);
double coverage(std::string_view text, const ConceptSet& concepts,
                Matcher matcher = Matcher::word_boundary_stem, int window = 2);

/// The number after the last "#### " marker, or else the last number in the
/// text. Commas, currency symbols, and trailing periods are ignored.
double extract_numeric_answer(std::string_view text);

struct MathScore {
  int value = 0;
  bool no_answer = false;
};

MathScore score_math(std::string_view final_text, double gold, double tolerance = 1e-6);

/// Renders the rubric prompt, parses "[score] [reason]" and rescales to [0, 1].
double judge_score(Gateway& gateway, const std::optional<ModelEndpoint>& judge,
                   std::string_view instruction, std::string_view final_text,
                   std::string_view rubric, int parse_retries = 2);

struct ToxicityResult {
  double value = 0.0;
  bool flagged = false;  // degenerate input, value assigned by convention
};

class ToxicityScorer {
 public:
  virtual ~ToxicityScorer() = default;
  /// Provider toxicity probability in [0, 1].
  virtual double probability(std::string_view text) = 0;
};

/// Stub scorer: the first rule whose substring occurs in the text wins.
class ScriptedToxicityScorer final : public ToxicityScorer {
 public:
  struct Rule {
    std::string match;
    std::optional<double> value;
    std::optional<ErrorKind> fail;
  };

  ScriptedToxicityScorer(std::vector<Rule> rules, double fallback)
      : rules_(std::move(rules)), fallback_(fallback) {}

  static std::unique_ptr<ScriptedToxicityScorer> from_json(const nlohmann::json& doc);
  double probability(std::string_view text) override;

 private:
  std::vector<Rule> rules_;
  double fallback_;
};

/// Perspective-style client: POST {"comment": {"text": ...}} and read
/// attributeScores.TOXICITY.summaryScore.value.
class HttpToxicityScorer final : public ToxicityScorer {
 public:
  HttpToxicityScorer(std::string url, std::string api_key_env)
      : url_(std::move(url)), api_key_env_(std::move(api_key_env)) {}

  double probability(std::string_view text) override;

 private:
  std::string url_;
  std::string api_key_env_;
};

ToxicityResult toxicity_score(std::string_view text, ToxicityScorer& scorer);

// --- datasets --------------------------------------------------------------

struct DatasetOptions {
  std::optional<std::size_t> top_k;  // keep the k most toxic prompts
  std::optional<TaskPromptSet> prompts;
  std::optional<MetricConfig> metric;
};

std::vector<TaskSpec> parse_dataset(std::istream& in, TaskKind kind,
                                    const DatasetOptions& options = {});
std::vector<TaskSpec> load_dataset(const std::filesystem::path& path, TaskKind kind,
                                   const DatasetOptions& options = {});

// --- benchmark -------------------------------------------------------------

enum class CaseStatus { scored, unscored, failed };
std::string_view to_string(CaseStatus status);

struct CaseResult {
  std::string case_id;
  CaseStatus status = CaseStatus::scored;
  std::string final_text;
  double metric_value = 0.0;
  int iterations_used = 0;
  bool early_stopped = false;
  UsageLedger ledger_slice;
  std::vector<std::string> flags;
  std::string error;
};

struct CaseRecord {
  CaseResult result;
  std::optional<SearchOutcome> outcome;
  std::vector<CallTrace> root_calls;
};

struct BenchmarkEndpoints {
  ModelEndpoint expert;
  ModelEndpoint amateur;
  std::optional<ModelEndpoint> base;
  std::optional<ModelEndpoint> judge;
  bool filter_on_amateur = false;

  EngineRoles roles_for(TaskKind kind) const;
};

struct BenchmarkOptions {
  int parallel_cases = 1;
  ToxicityScorer* toxicity = nullptr;
};

struct Aggregate {
  MetricKind metric = MetricKind::coverage;
  double metric_mean = 0.0;
  std::size_t n_cases = 0;
  std::size_t n_scored = 0;
  std::size_t n_unscored = 0;
  std::size_t n_failed = 0;
  UsageRow usage;
};

struct BenchmarkReport {
  std::vector<CaseRecord> cases;  // sorted by case id
  Aggregate aggregate;
  UsageLedger ledger;

  bool partial_failure() const { return aggregate.n_scored != aggregate.n_cases; }
};

BenchmarkReport run_benchmark(const std::vector<TaskSpec>& specs, const SearchConfig& cfg,
                              const BenchmarkEndpoints& endpoints, Gateway& gateway,
                              const BenchmarkOptions& options = {});

Aggregate aggregate_results(const std::vector<CaseResult>& results, MetricKind metric);

nlohmann::json to_json(const CaseResult& result);
nlohmann::json to_json(const Aggregate& aggregate);

}  // namespace clear

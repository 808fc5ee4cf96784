#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "clear/analysis.hpp"
#include "clear/model_gateway.hpp"
#include "clear/search_engine.hpp"
#include "clear/task_suite.hpp"

namespace clear {

inline constexpr int kConfigSchemaVersion = 1;

struct BackendConfig {
  std::string kind = "http";  // "http" or "scripted"
  std::filesystem::path script;
};

struct ToxicityConfig {
  std::string kind = "scripted";  // "scripted" or "http"
  nlohmann::json scripted = nlohmann::json::object();
  std::string url;
  std::string api_key_env;
};

/// Everything a run needs. Relative paths are resolved against the directory
/// of the config file; the echoed form keeps them as written.
struct RunConfig {
  int schema_version = kConfigSchemaVersion;
  TaskKind task = TaskKind::custom;
  std::filesystem::path dataset;
  std::optional<std::size_t> top_k;
  std::optional<std::filesystem::path> prompts;
  std::optional<MetricConfig> metric;
  std::map<std::string, ModelEndpoint> endpoints;
  bool filter_on_amateur = false;
  BackendConfig backend;
  SearchConfig search;
  PriceTable prices;
  std::optional<ToxicityConfig> toxicity;
  int parallel_cases = 1;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> cache_dir;
  std::filesystem::path output_dir = "out";
  bool allow_same_model = false;
  int max_retries = 3;
  int backoff_ms = 500;
  double eval_temperature = 0.0;

  std::filesystem::path base_dir;  // not echoed
  nlohmann::json source;           // document as loaded, for the echo

  static RunConfig from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir);
  static RunConfig load(const std::filesystem::path& path);

  std::filesystem::path resolve(const std::filesystem::path& p) const;

  /// Field-path ConfigErrors. `need_dataset` is false for single refinements.
  void validate(bool need_dataset) const;
  bool same_model_contrast() const;

  const ModelEndpoint& endpoint(const std::string& role) const;
  std::optional<ModelEndpoint> optional_endpoint(const std::string& role) const;

  /// Effective configuration echoed into reports.
  nlohmann::json to_json() const;
};

struct Overrides {
  std::optional<int> d;
  std::optional<SearchMode> mode;
  std::optional<HeuristicVariant> heuristic;
  std::optional<int> parallel;
  std::optional<std::uint64_t> seed;
  bool allow_same_model = false;
  std::optional<std::filesystem::path> cache_dir;
  std::optional<std::filesystem::path> out;
};

void apply_overrides(RunConfig& cfg, const Overrides& overrides);

/// Backend selected by the config: an HTTP client, or a scripted double whose
/// seed is the run seed.
std::unique_ptr<ModelBackend> make_backend(const RunConfig& cfg);
Gateway make_gateway(const RunConfig& cfg);
std::unique_ptr<ToxicityScorer> make_toxicity_scorer(const RunConfig& cfg);
BenchmarkEndpoints benchmark_endpoints(const RunConfig& cfg);

}  // namespace clear

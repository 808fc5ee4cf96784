#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "clear/error.hpp"

namespace clear {

enum class EndpointRole { expert, amateur, base, judge, embedder };

std::string_view to_string(EndpointRole role);
EndpointRole endpoint_role_from_string(std::string_view text);

struct SamplingParams {
  double temperature = 0.7;
  int max_tokens = 512;
};

struct ModelEndpoint {
  std::string name;
  std::string base_url;
  std::string model_id;
  EndpointRole role = EndpointRole::expert;
  SamplingParams params;
  /// Name of the environment variable holding the bearer token. Never the token.
  std::string api_key_env;
  /// Prompts whose estimated size exceeds this are rejected up front; 0 disables.
  int max_context_tokens = 0;

  void validate() const;
};

nlohmann::json to_json(const ModelEndpoint& endpoint);
ModelEndpoint endpoint_from_json(const nlohmann::json& j, std::string_view name);

struct CompletionResult {
  std::string text;
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;
  bool estimated = false;  // token counts come from estimate_tokens()
  bool cached = false;
  std::string endpoint_name;
  std::chrono::milliseconds latency{0};
};

/// Whitespace and punctuation tokenizer used when a provider reports no usage:
/// every alphanumeric run and every punctuation character counts as a token.
std::int64_t estimate_tokens(std::string_view text);

struct UsageRow {
  std::int64_t calls = 0;
  std::int64_t cache_hits = 0;
  std::int64_t estimated_calls = 0;
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;

  UsageRow& operator+=(const UsageRow& other);
  friend bool operator==(const UsageRow&, const UsageRow&) = default;
};

/// Per-endpoint token tallies. Safe to record into from several threads.
class UsageLedger {
 public:
  UsageLedger() = default;
  UsageLedger(const UsageLedger& other);
  UsageLedger& operator=(const UsageLedger& other);

  void record(const CompletionResult& result);
  void add(const std::string& endpoint, const UsageRow& row);
  void merge(const UsageLedger& other);

  std::map<std::string, UsageRow> rows() const;
  UsageRow totals() const;

  nlohmann::json to_json() const;
  static UsageLedger from_json(const nlohmann::json& j);

 private:
  mutable std::mutex mutex_;
  std::map<std::string, UsageRow> rows_;
};

/// Cache hits are counted as calls but carry no billed tokens.
void record_usage(UsageLedger& ledger, const CompletionResult& result);

class ModelBackend {
 public:
  virtual ~ModelBackend() = default;
  virtual CompletionResult complete(const ModelEndpoint& endpoint, std::string_view prompt,
                                    const SamplingParams& params) = 0;
  virtual std::vector<double> embed(const ModelEndpoint& endpoint, std::string_view text) = 0;
  /// A fresh session: scripted backends restart their script, HTTP backends
  /// simply share configuration.
  virtual std::unique_ptr<ModelBackend> fork() const = 0;
};

struct HttpOptions {
  std::chrono::seconds connect_timeout{10};
  std::chrono::seconds read_timeout{120};
};

/// OpenAI-compatible chat-completions and embeddings client.
class HttpBackend final : public ModelBackend {
 public:
  explicit HttpBackend(HttpOptions options = {}) : options_(options) {}

  CompletionResult complete(const ModelEndpoint& endpoint, std::string_view prompt,
                            const SamplingParams& params) override;
  std::vector<double> embed(const ModelEndpoint& endpoint, std::string_view text) override;
  std::unique_ptr<ModelBackend> fork() const override {
    return std::make_unique<HttpBackend>(options_);
  }

 private:
  HttpOptions options_;
};

struct ScriptRule {
  std::optional<EndpointRole> role;  // unset matches every role
  std::string match;                 // substring of the prompt; empty matches all
  std::vector<std::string> replies;
  bool sequence = false;  // replies are handed out in order, each once
  std::vector<double> vector;         // embedding payload
  std::optional<ErrorKind> fail;      // injected failure instead of a reply
  std::optional<int> times;           // uses before the rule is spent; unset = unlimited
};

struct Script {
  std::vector<ScriptRule> rules;
  std::uint64_t seed = 0;

  static Script from_json(const nlohmann::json& doc);
  static Script load(const std::filesystem::path& path);
};

/// Deterministic test double. Rules are tried in order; the first unspent rule
/// whose role and substring match answers the call. No match is an error.
/// Use counts (sequence position, `times`, random draws) are kept per role, so
/// concurrent expert and amateur calls cannot perturb each other.
class ScriptedBackend final : public ModelBackend {
 public:
  explicit ScriptedBackend(Script script);

  CompletionResult complete(const ModelEndpoint& endpoint, std::string_view prompt,
                            const SamplingParams& params) override;
  std::vector<double> embed(const ModelEndpoint& endpoint, std::string_view text) override;
  std::unique_ptr<ModelBackend> fork() const override;

  std::int64_t calls() const;

 private:
  struct RuleState {
    std::array<int, 5> used{};  // indexed by EndpointRole
  };
  std::size_t select(const ModelEndpoint& endpoint, std::string_view prompt, bool embedding);

  Script script_;
  std::vector<RuleState> state_;
  std::int64_t calls_ = 0;
  mutable std::mutex mutex_;
};

enum class CallPurpose { evaluate, filter, generate, judge };

struct GatewayOptions {
  int max_retries = 3;
  std::chrono::milliseconds backoff_base{500};
  double backoff_factor = 2.0;
  std::optional<std::filesystem::path> cache_dir;
  /// Temperature for evaluate, filter and judge calls. Generation calls use the
  /// endpoint's own sampling parameters.
  double eval_temperature = 0.0;
};

/// Front door for every model call: retries with exponential backoff, disk
/// cache, usage capture, and embedding dimension checks.
class Gateway {
 public:
  Gateway(std::unique_ptr<ModelBackend> backend, GatewayOptions options = {});

  CompletionResult complete(const ModelEndpoint& endpoint, std::string_view prompt,
                            CallPurpose purpose, bool bypass_cache = false);
  std::vector<double> embed(const ModelEndpoint& endpoint, std::string_view text);

  /// Independent session with its own ledger, for one benchmark case.
  Gateway fork() const;

  UsageLedger& ledger() { return *ledger_; }
  const UsageLedger& ledger() const { return *ledger_; }
  const GatewayOptions& options() const { return options_; }

 private:
  std::string cache_key(const ModelEndpoint& endpoint, std::string_view kind,
                        std::string_view payload, const SamplingParams& params) const;

  std::shared_ptr<ModelBackend> backend_;
  GatewayOptions options_;
  std::shared_ptr<UsageLedger> ledger_;
  std::shared_ptr<std::mutex> embed_mutex_;
  std::shared_ptr<std::map<std::string, std::size_t>> embed_dims_;
  std::shared_ptr<std::map<std::string, std::vector<double>>> embed_memo_;
};

/// Lower-case hex SHA-256 digest.
std::string sha256_hex(std::string_view data);

}  // namespace clear

#include "clear/model_gateway.hpp"

#include <openssl/evp.h>

#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

namespace clear {

using nlohmann::json;

std::string_view to_string(EndpointRole role) {
  switch (role) {
    case EndpointRole::expert: return "expert";
    case EndpointRole::amateur: return "amateur";
    case EndpointRole::base: return "base";
    case EndpointRole::judge: return "judge";
    case EndpointRole::embedder: return "embedder";
  }
  return "expert";
}

EndpointRole endpoint_role_from_string(std::string_view text) {
  for (EndpointRole r : {EndpointRole::expert, EndpointRole::amateur, EndpointRole::base,
                         EndpointRole::judge, EndpointRole::embedder}) {
    if (to_string(r) == text) return r;
  }
  throw Error(ErrorKind::ConfigError, "unknown endpoint role '" + std::string(text) + "'");
}

void ModelEndpoint::validate() const {
  if (name.empty()) throw Error(ErrorKind::ConfigError, "endpoint name is empty");
  bool scripted = base_url.rfind("scripted:", 0) == 0;
  bool http = base_url.rfind("http://", 0) == 0 || base_url.rfind("https://", 0) == 0;
  if (!scripted && !http) {
    throw Error(ErrorKind::ConfigError,
                "endpoints." + name + ".base_url '" + base_url + "' is not an http(s) URL");
  }
  if (http && base_url.find_first_of(" \t\n") != std::string::npos) {
    throw Error(ErrorKind::ConfigError, "endpoints." + name + ".base_url contains whitespace");
  }
  if (params.temperature < 0) {
    throw Error(ErrorKind::ConfigError, "endpoints." + name + ".temperature is negative");
  }
  if (params.max_tokens <= 0) {
    throw Error(ErrorKind::ConfigError, "endpoints." + name + ".max_tokens must be positive");
  }
}

json to_json(const ModelEndpoint& e) {
  return json{{"name", e.name},
              {"base_url", e.base_url},
              {"model_id", e.model_id},
              {"role", to_string(e.role)},
              {"temperature", e.params.temperature},
              {"max_tokens", e.params.max_tokens},
              {"api_key_env", e.api_key_env},
              {"max_context_tokens", e.max_context_tokens}};
}

ModelEndpoint endpoint_from_json(const json& j, std::string_view name) {
  const std::string where = "endpoints." + std::string(name);
  if (!j.is_object()) throw Error(ErrorKind::ConfigError, where + " is not an object");
  ModelEndpoint e;
  e.name = j.value("name", std::string(name));
  if (!j.contains("base_url")) throw Error(ErrorKind::ConfigError, where + ".base_url is missing");
  e.base_url = j.at("base_url").get<std::string>();
  e.model_id = j.value("model_id", std::string());
  e.role = endpoint_role_from_string(j.value("role", std::string(name)));
  e.params.temperature = j.value("temperature", e.params.temperature);
  e.params.max_tokens = j.value("max_tokens", e.params.max_tokens);
  e.api_key_env = j.value("api_key_env", std::string());
  e.max_context_tokens = j.value("max_context_tokens", 0);
  if (j.contains("api_key")) {
    throw Error(ErrorKind::ConfigError, where + ".api_key: inline secrets are not accepted, "
                                                "use api_key_env");
  }
  e.validate();
  return e;
}

std::int64_t estimate_tokens(std::string_view text) {
  std::int64_t tokens = 0;
  bool in_word = false;
  for (char ch : text) {
    auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c >= 0x80) {
      if (!in_word) ++tokens;
      in_word = true;
    } else {
      in_word = false;
      if (std::ispunct(c)) ++tokens;
    }
  }
  return tokens;
}

UsageRow& UsageRow::operator+=(const UsageRow& o) {
  calls += o.calls;
  cache_hits += o.cache_hits;
  estimated_calls += o.estimated_calls;
  input_tokens += o.input_tokens;
  output_tokens += o.output_tokens;
  return *this;
}

UsageLedger::UsageLedger(const UsageLedger& other) : rows_(other.rows()) {}

UsageLedger& UsageLedger::operator=(const UsageLedger& other) {
  if (this != &other) {
    auto copy = other.rows();
    std::lock_guard lock(mutex_);
    rows_ = std::move(copy);
  }
  return *this;
}

void UsageLedger::record(const CompletionResult& result) {
  UsageRow row;
  row.calls = 1;
  if (result.cached) {
    row.cache_hits = 1;
  } else {
    row.input_tokens = result.input_tokens;
    row.output_tokens = result.output_tokens;
    row.estimated_calls = result.estimated ? 1 : 0;
  }
  add(result.endpoint_name, row);
}

void UsageLedger::add(const std::string& endpoint, const UsageRow& row) {
  std::lock_guard lock(mutex_);
  rows_[endpoint] += row;
}

void UsageLedger::merge(const UsageLedger& other) {
  for (const auto& [name, row] : other.rows()) add(name, row);
}

std::map<std::string, UsageRow> UsageLedger::rows() const {
  std::lock_guard lock(mutex_);
  return rows_;
}

UsageRow UsageLedger::totals() const {
  UsageRow total;
  for (const auto& [name, row] : rows()) total += row;
  return total;
}

json UsageLedger::to_json() const {
  json j = json::object();
  for (const auto& [name, row] : rows()) {
    j[name] = {{"calls", row.calls},
               {"cache_hits", row.cache_hits},
               {"estimated_calls", row.estimated_calls},
               {"input_tokens", row.input_tokens},
               {"output_tokens", row.output_tokens}};
  }
  return j;
}

UsageLedger UsageLedger::from_json(const json& j) {
  UsageLedger ledger;
  if (!j.is_object()) throw Error(ErrorKind::SchemaError, "ledger is not an object");
  for (const auto& [name, r] : j.items()) {
    UsageRow row;
    row.calls = r.value("calls", std::int64_t{0});
    row.cache_hits = r.value("cache_hits", std::int64_t{0});
    row.estimated_calls = r.value("estimated_calls", std::int64_t{0});
    row.input_tokens = r.value("input_tokens", std::int64_t{0});
    row.output_tokens = r.value("output_tokens", std::int64_t{0});
    ledger.add(name, row);
  }
  return ledger;
}

void record_usage(UsageLedger& ledger, const CompletionResult& result) { ledger.record(result); }

// ---------------------------------------------------------------------------
// Scripted backend

namespace {

ErrorKind fail_kind_from_string(const std::string& s) {
  if (s == "transport") return ErrorKind::Transport;
  if (s == "auth") return ErrorKind::AuthFailure;
  if (s == "rate_limited") return ErrorKind::RateLimited;
  if (s == "context_overflow") return ErrorKind::ContextOverflow;
  throw Error(ErrorKind::ConfigError, "unknown scripted failure '" + s + "'");
}

}  // namespace

Script Script::from_json(const json& doc) {
  Script script;
  script.seed = doc.value("seed", std::uint64_t{0});
  if (!doc.contains("rules") || !doc.at("rules").is_array()) {
    throw Error(ErrorKind::ConfigError, "script.rules must be an array");
  }
  std::size_t index = 0;
  for (const auto& r : doc.at("rules")) {
    const std::string where = "script.rules[" + std::to_string(index++) + "]";
    ScriptRule rule;
    if (r.contains("role")) rule.role = endpoint_role_from_string(r.at("role").get<std::string>());
    rule.match = r.value("match", std::string());
    if (r.contains("reply")) rule.replies.push_back(r.at("reply").get<std::string>());
    if (r.contains("replies")) {
      for (const auto& reply : r.at("replies")) rule.replies.push_back(reply.get<std::string>());
    }
    rule.sequence = r.value("sequence", false);
    if (r.contains("vector")) rule.vector = r.at("vector").get<std::vector<double>>();
    if (r.contains("fail")) rule.fail = fail_kind_from_string(r.at("fail").get<std::string>());
    if (r.contains("times")) rule.times = r.at("times").get<int>();
    if (rule.replies.empty() && rule.vector.empty() && !rule.fail) {
      throw Error(ErrorKind::ConfigError, where + " has no reply, vector, or fail");
    }
    script.rules.push_back(std::move(rule));
  }
  return script;
}

Script Script::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::ConfigError, "cannot open script " + path.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::ParseError, path.string() + ": " + e.what());
  }
}

ScriptedBackend::ScriptedBackend(Script script)
    : script_(std::move(script)), state_(script_.rules.size()) {}

std::unique_ptr<ModelBackend> ScriptedBackend::fork() const {
  std::lock_guard lock(mutex_);
  return std::make_unique<ScriptedBackend>(script_);
}

std::int64_t ScriptedBackend::calls() const {
  std::lock_guard lock(mutex_);
  return calls_;
}

std::size_t ScriptedBackend::select(const ModelEndpoint& endpoint, std::string_view prompt,
                                    bool embedding) {
  for (std::size_t i = 0; i < script_.rules.size(); ++i) {
    const ScriptRule& rule = script_.rules[i];
    if (rule.role && *rule.role != endpoint.role) continue;
    if (!rule.match.empty() && prompt.find(rule.match) == std::string_view::npos) continue;
    if (!rule.fail && embedding != !rule.vector.empty()) continue;
    int limit = rule.times ? *rule.times
                           : (rule.sequence ? static_cast<int>(rule.replies.size()) : -1);
    if (limit >= 0 && state_[i].used[static_cast<std::size_t>(endpoint.role)] >= limit) continue;
    return i;
  }
  throw Error(ErrorKind::ScriptExhausted, "no scripted reply for " +
                                              std::string(to_string(endpoint.role)) +
                                              " endpoint '" + endpoint.name + "'");
}

CompletionResult ScriptedBackend::complete(const ModelEndpoint& endpoint, std::string_view prompt,
                                           const SamplingParams&) {
  std::lock_guard lock(mutex_);
  ++calls_;
  std::size_t i = select(endpoint, prompt, false);
  const ScriptRule& rule = script_.rules[i];
  int use = state_[i].used[static_cast<std::size_t>(endpoint.role)]++;
  if (rule.fail) {
    throw Error(*rule.fail, "scripted failure on endpoint '" + endpoint.name + "'");
  }
  CompletionResult result;
  if (rule.sequence) {
    result.text = rule.replies[static_cast<std::size_t>(use) % rule.replies.size()];
  } else if (rule.replies.size() == 1) {
    result.text = rule.replies.front();
  } else {
    std::seed_seq seq{static_cast<std::uint32_t>(script_.seed),
                      static_cast<std::uint32_t>(script_.seed >> 32), static_cast<std::uint32_t>(i),
                      static_cast<std::uint32_t>(endpoint.role), static_cast<std::uint32_t>(use)};
    std::mt19937_64 rng(seq);
    result.text = rule.replies[rng() % rule.replies.size()];
  }
  result.input_tokens = estimate_tokens(prompt);
  result.output_tokens = estimate_tokens(result.text);
  result.estimated = true;
  result.endpoint_name = endpoint.name;
  return result;
}

std::vector<double> ScriptedBackend::embed(const ModelEndpoint& endpoint, std::string_view text) {
  std::lock_guard lock(mutex_);
  ++calls_;
  std::size_t i = select(endpoint, text, true);
  ++state_[i].used[static_cast<std::size_t>(endpoint.role)];
  const ScriptRule& rule = script_.rules[i];
  if (rule.fail) throw Error(*rule.fail, "scripted failure on endpoint '" + endpoint.name + "'");
  return rule.vector;
}

// ---------------------------------------------------------------------------
// Gateway

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  EVP_Digest(data.data(), data.size(), digest, &length, EVP_sha256(), nullptr);
  std::ostringstream out;
  for (unsigned int i = 0; i < length; ++i) {
    out << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return out.str();
}

Gateway::Gateway(std::unique_ptr<ModelBackend> backend, GatewayOptions options)
    : backend_(std::move(backend)),
      options_(std::move(options)),
      ledger_(std::make_shared<UsageLedger>()),
      embed_mutex_(std::make_shared<std::mutex>()),
      embed_dims_(std::make_shared<std::map<std::string, std::size_t>>()),
      embed_memo_(std::make_shared<std::map<std::string, std::vector<double>>>()) {}

Gateway Gateway::fork() const {
  Gateway copy = *this;
  copy.backend_ = backend_->fork();
  copy.ledger_ = std::make_shared<UsageLedger>();
  return copy;
}

std::string Gateway::cache_key(const ModelEndpoint& endpoint, std::string_view kind,
                               std::string_view payload, const SamplingParams& params) const {
  json key{{"kind", kind},
           {"endpoint", endpoint.name},
           {"base_url", endpoint.base_url},
           {"model_id", endpoint.model_id},
           {"temperature", params.temperature},
           {"max_tokens", params.max_tokens},
           {"payload", payload}};
  return sha256_hex(key.dump());
}

namespace {

bool retryable(ErrorKind kind) {
  return kind == ErrorKind::Transport || kind == ErrorKind::RateLimited;
}

std::optional<CompletionResult> read_cache(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) return std::nullopt;
  try {
    json j = json::parse(in);
    CompletionResult r;
    r.text = j.at("text").get<std::string>();
    r.input_tokens = j.value("input_tokens", std::int64_t{0});
    r.output_tokens = j.value("output_tokens", std::int64_t{0});
    r.estimated = j.value("estimated", false);
    return r;
  } catch (const json::exception&) {
    return std::nullopt;  // a torn or foreign file is treated as a miss
  }
}

void write_cache(const std::filesystem::path& file, const CompletionResult& r) {
  std::filesystem::create_directories(file.parent_path());
  auto tmp = file;
  tmp += ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
  {
    std::ofstream out(tmp);
    out << json{{"text", r.text},
                {"input_tokens", r.input_tokens},
                {"output_tokens", r.output_tokens},
                {"estimated", r.estimated}}
               .dump();
  }
  std::error_code ec;
  std::filesystem::rename(tmp, file, ec);
}

}  // namespace

CompletionResult Gateway::complete(const ModelEndpoint& endpoint, std::string_view prompt,
                                   CallPurpose purpose, bool bypass_cache) {
  if (prompt.empty()) throw Error(ErrorKind::PreconditionViolation, "prompt is empty");
  SamplingParams params = endpoint.params;
  if (purpose != CallPurpose::generate) params.temperature = options_.eval_temperature;

  if (endpoint.max_context_tokens > 0 && estimate_tokens(prompt) > endpoint.max_context_tokens) {
    throw Error(ErrorKind::ContextOverflow,
                "prompt of ~" + std::to_string(estimate_tokens(prompt)) +
                    " tokens exceeds the context of endpoint '" + endpoint.name + "'");
  }

  std::optional<std::filesystem::path> cache_file;
  if (options_.cache_dir) {
    cache_file = *options_.cache_dir / (cache_key(endpoint, "complete", prompt, params) + ".json");
    if (!bypass_cache) {
      if (auto hit = read_cache(*cache_file)) {
        hit->cached = true;
        hit->endpoint_name = endpoint.name;
        ledger_->record(*hit);
        return *hit;
      }
    }
  }

  auto delay = options_.backoff_base;
  for (int attempt = 0;; ++attempt) {
    auto start = std::chrono::steady_clock::now();
    try {
      CompletionResult result = backend_->complete(endpoint, prompt, params);
      result.endpoint_name = endpoint.name;
      result.latency = std::chrono::duration_cast<std::chrono::milliseconds>(
          std::chrono::steady_clock::now() - start);
      ledger_->record(result);
      if (cache_file) write_cache(*cache_file, result);
      return result;
    } catch (const Error& e) {
      if (!retryable(e.kind()) || attempt >= options_.max_retries) throw;
    }
    if (delay.count() > 0) std::this_thread::sleep_for(delay);
    delay = std::chrono::milliseconds(
        static_cast<std::int64_t>(std::llround(static_cast<double>(delay.count()) *
                                               options_.backoff_factor)));
  }
}

std::vector<double> Gateway::embed(const ModelEndpoint& endpoint, std::string_view text) {
  if (endpoint.role != EndpointRole::embedder) {
    throw Error(ErrorKind::ConfigError, "endpoint '" + endpoint.name + "' is not an embedder");
  }
  const std::string memo_key = endpoint.name + '\n' + sha256_hex(text);
  {
    std::lock_guard lock(*embed_mutex_);
    if (auto it = embed_memo_->find(memo_key); it != embed_memo_->end()) return it->second;
  }

  std::optional<std::filesystem::path> cache_file;
  std::vector<double> vec;
  bool have = false;
  if (options_.cache_dir) {
    cache_file = *options_.cache_dir / (cache_key(endpoint, "embed", text, endpoint.params) + ".json");
    std::ifstream in(*cache_file);
    if (in) {
      try {
        vec = json::parse(in).at("vector").get<std::vector<double>>();
        have = true;
      } catch (const json::exception&) {
      }
    }
  }

  auto delay = options_.backoff_base;
  for (int attempt = 0; !have; ++attempt) {
    try {
      vec = backend_->embed(endpoint, text);
      have = true;
      if (cache_file) {
        std::filesystem::create_directories(cache_file->parent_path());
        std::ofstream(*cache_file) << json{{"vector", vec}}.dump();
      }
    } catch (const Error& e) {
      if (!retryable(e.kind()) || attempt >= options_.max_retries) throw;
      if (delay.count() > 0) std::this_thread::sleep_for(delay);
      delay = std::chrono::milliseconds(
          static_cast<std::int64_t>(std::llround(static_cast<double>(delay.count()) *
                                                 options_.backoff_factor)));
    }
  }

  std::lock_guard lock(*embed_mutex_);
  auto [it, inserted] = embed_dims_->emplace(endpoint.name, vec.size());
  if (!inserted && it->second != vec.size()) {
    throw Error(ErrorKind::DimensionMismatch,
                "endpoint '" + endpoint.name + "' returned dimension " +
                    std::to_string(vec.size()) + ", expected " + std::to_string(it->second));
  }
  if (vec.empty()) {
    throw Error(ErrorKind::DimensionMismatch, "endpoint '" + endpoint.name + "' returned an empty vector");
  }
  embed_memo_->emplace(memo_key, vec);
  return vec;
}

}  // namespace clear

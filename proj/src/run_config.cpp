#include "clear/run_config.hpp"

#include <fstream>

#include "clear/error.hpp"

namespace clear {

using nlohmann::json;

namespace {

constexpr const char* kRoles[] = {"expert", "amateur", "base", "judge", "embedder"};

template <typename T>
T field(const json& doc, const char* key, T fallback) {
  if (!doc.contains(key) || doc.at(key).is_null()) return fallback;
  try {
    return doc.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorKind::ConfigError, std::string(key) + " has the wrong type");
  }
}

}  // namespace

RunConfig RunConfig::from_json(const json& doc, const std::filesystem::path& base_dir) {
  if (!doc.is_object()) throw Error(ErrorKind::ConfigError, "config is not an object");
  RunConfig cfg;
  cfg.base_dir = base_dir;
  cfg.source = doc;

  cfg.schema_version = field(doc, "schema_version", 0);
  if (cfg.schema_version != kConfigSchemaVersion) {
    throw Error(ErrorKind::ConfigError, "schema_version must be " +
                                            std::to_string(kConfigSchemaVersion));
  }
  cfg.task = task_kind_from_string(field<std::string>(doc, "task", "custom"));
  cfg.dataset = field<std::string>(doc, "dataset", "");
  if (doc.contains("top_k") && !doc.at("top_k").is_null()) cfg.top_k = field<std::size_t>(doc, "top_k", 0);
  if (doc.contains("prompts") && !doc.at("prompts").is_null()) {
    cfg.prompts = field<std::string>(doc, "prompts", "");
  }

  if (doc.contains("metric") && !doc.at("metric").is_null()) {
    const json& m = doc.at("metric");
    MetricConfig metric = default_metric(cfg.task);
    if (m.contains("kind")) metric.kind = metric_kind_from_string(m.at("kind").get<std::string>());
    if (m.contains("matcher")) metric.matcher = matcher_from_string(m.at("matcher").get<std::string>());
    metric.window = m.value("window", metric.window);
    metric.tolerance = m.value("tolerance", metric.tolerance);
    if (m.contains("rubric")) metric.rubric = m.at("rubric").get<std::string>();
    if (m.contains("judge_endpoint")) metric.judge_endpoint = m.at("judge_endpoint").get<std::string>();
    metric.validate();
    cfg.metric = metric;
  }

  if (!doc.contains("endpoints") || !doc.at("endpoints").is_object()) {
    throw Error(ErrorKind::ConfigError, "endpoints is missing");
  }
  for (const auto& [name, e] : doc.at("endpoints").items()) {
    bool known = false;
    for (const char* role : kRoles) known = known || name == role;
    if (!known) throw Error(ErrorKind::ConfigError, "endpoints." + name + " is not a known role");
    ModelEndpoint endpoint = endpoint_from_json(e, name);
    endpoint.role = endpoint_role_from_string(name);
    cfg.endpoints[name] = std::move(endpoint);
  }
  cfg.filter_on_amateur = field(doc, "filter_endpoint", std::string("expert")) == "amateur";

  if (doc.contains("backend")) {
    const json& b = doc.at("backend");
    cfg.backend.kind = b.value("kind", std::string("http"));
    if (cfg.backend.kind != "http" && cfg.backend.kind != "scripted") {
      throw Error(ErrorKind::ConfigError, "backend.kind must be http or scripted");
    }
    cfg.backend.script = b.value("script", std::string());
  }

  if (doc.contains("search")) cfg.search = search_config_from_json(doc.at("search"));
  if (doc.contains("prices")) cfg.prices = PriceTable::from_json(doc.at("prices"));

  if (doc.contains("toxicity") && !doc.at("toxicity").is_null()) {
    const json& t = doc.at("toxicity");
    ToxicityConfig tox;
    tox.kind = t.value("kind", std::string("scripted"));
    if (tox.kind == "scripted") {
      tox.scripted = t;
    } else if (tox.kind == "http") {
      tox.url = t.value("url", std::string());
      tox.api_key_env = t.value("api_key_env", std::string());
      if (tox.url.empty()) throw Error(ErrorKind::ConfigError, "toxicity.url is missing");
    } else {
      throw Error(ErrorKind::ConfigError, "toxicity.kind must be scripted or http");
    }
    cfg.toxicity = tox;
  }

  cfg.parallel_cases = field(doc, "parallel_cases", 1);
  cfg.seed = field<std::uint64_t>(doc, "seed", 0);
  if (doc.contains("cache_dir") && !doc.at("cache_dir").is_null()) {
    cfg.cache_dir = field<std::string>(doc, "cache_dir", "");
  }
  cfg.output_dir = field<std::string>(doc, "output_dir", "out");
  cfg.allow_same_model = field(doc, "allow_same_model", false);
  cfg.max_retries = field(doc, "max_retries", 3);
  cfg.backoff_ms = field(doc, "backoff_ms", 500);
  cfg.eval_temperature = field(doc, "eval_temperature", 0.0);
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::ConfigError, "config: cannot open " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::ConfigError, "config: " + std::string(e.what()));
  }
  return from_json(doc, std::filesystem::absolute(path).parent_path());
}

std::filesystem::path RunConfig::resolve(const std::filesystem::path& p) const {
  return p.is_absolute() ? p : base_dir / p;
}

void RunConfig::validate(bool need_dataset) const {
  if (need_dataset) {
    if (dataset.empty()) throw Error(ErrorKind::ConfigError, "dataset is missing");
    if (!std::filesystem::is_regular_file(resolve(dataset))) {
      throw Error(ErrorKind::ConfigError, "dataset: file not found: " + resolve(dataset).string());
    }
  }
  if (prompts && !std::filesystem::is_regular_file(resolve(*prompts))) {
    throw Error(ErrorKind::ConfigError, "prompts: file not found: " + resolve(*prompts).string());
  }
  if (task == TaskKind::custom && !prompts) {
    throw Error(ErrorKind::ConfigError, "prompts is required for custom tasks");
  }
  for (const char* role : {"expert", "amateur"}) {
    if (!endpoints.contains(role)) {
      throw Error(ErrorKind::ConfigError, std::string("endpoints.") + role + " is missing");
    }
  }
  if (backend.kind == "scripted") {
    if (backend.script.empty()) throw Error(ErrorKind::ConfigError, "backend.script is missing");
    if (!std::filesystem::is_regular_file(resolve(backend.script))) {
      throw Error(ErrorKind::ConfigError,
                  "backend.script: file not found: " + resolve(backend.script).string());
    }
  }
  if (same_model_contrast() && !allow_same_model) {
    throw Error(ErrorKind::ConfigError,
                "endpoints: expert and amateur are the same model; set allow_same_model "
                "(or --allow-same-model) to contrast a model with itself");
  }
  if (parallel_cases < 1) throw Error(ErrorKind::ConfigError, "parallel_cases must be positive");
  if (max_retries < 0) throw Error(ErrorKind::ConfigError, "max_retries is negative");
  if (task == TaskKind::toxicity && need_dataset && !toxicity) {
    throw Error(ErrorKind::ConfigError, "toxicity is required for toxicity tasks");
  }
  search.validate();
}

bool RunConfig::same_model_contrast() const {
  auto e = endpoints.find("expert");
  auto a = endpoints.find("amateur");
  if (e == endpoints.end() || a == endpoints.end()) return false;
  return e->second.base_url == a->second.base_url && e->second.model_id == a->second.model_id;
}

const ModelEndpoint& RunConfig::endpoint(const std::string& role) const {
  auto it = endpoints.find(role);
  if (it == endpoints.end()) throw Error(ErrorKind::ConfigError, "endpoints." + role + " is missing");
  return it->second;
}

std::optional<ModelEndpoint> RunConfig::optional_endpoint(const std::string& role) const {
  auto it = endpoints.find(role);
  if (it == endpoints.end()) return std::nullopt;
  return it->second;
}

json RunConfig::to_json() const {
  json endpoints_json = json::object();
  for (const auto& [name, e] : endpoints) endpoints_json[name] = clear::to_json(e);
  json j{{"schema_version", schema_version},
         {"task", to_string(task)},
         {"dataset", dataset.generic_string()},
         {"top_k", top_k ? json(*top_k) : json(nullptr)},
         {"prompts", prompts ? json(prompts->generic_string()) : json(nullptr)},
         {"metric", clear::to_json(metric ? *metric : default_metric(task))},
         {"endpoints", endpoints_json},
         {"filter_endpoint", filter_on_amateur ? "amateur" : "expert"},
         {"backend", {{"kind", backend.kind}, {"script", backend.script.generic_string()}}},
         {"search", clear::to_json(search)},
         {"prices", prices.to_json()},
         {"parallel_cases", parallel_cases},
         {"seed", seed},
         {"cache_dir", cache_dir ? json(cache_dir->generic_string()) : json(nullptr)},
         {"output_dir", output_dir.generic_string()},
         {"allow_same_model", allow_same_model},
         {"max_retries", max_retries},
         {"backoff_ms", backoff_ms},
         {"eval_temperature", eval_temperature}};
  if (toxicity) {
    j["toxicity"] = toxicity->kind == "scripted"
                        ? toxicity->scripted
                        : json{{"kind", "http"}, {"url", toxicity->url},
                               {"api_key_env", toxicity->api_key_env}};
  } else {
    j["toxicity"] = nullptr;
  }
  return j;
}

void apply_overrides(RunConfig& cfg, const Overrides& o) {
  if (o.d) cfg.search.d = *o.d;
  if (o.mode) cfg.search.mode = *o.mode;
  if (o.heuristic) cfg.search.heuristic = *o.heuristic;
  if (o.parallel) cfg.parallel_cases = *o.parallel;
  if (o.seed) cfg.seed = *o.seed;
  if (o.allow_same_model) cfg.allow_same_model = true;
  if (o.cache_dir) cfg.cache_dir = *o.cache_dir;
  if (o.out) cfg.output_dir = *o.out;
}

std::unique_ptr<ModelBackend> make_backend(const RunConfig& cfg) {
  if (cfg.backend.kind == "scripted") {
    Script script = Script::load(cfg.resolve(cfg.backend.script));
    script.seed = cfg.seed;
    return std::make_unique<ScriptedBackend>(std::move(script));
  }
  return std::make_unique<HttpBackend>();
}

Gateway make_gateway(const RunConfig& cfg) {
  GatewayOptions options;
  options.max_retries = cfg.max_retries;
  options.backoff_base = std::chrono::milliseconds(cfg.backoff_ms);
  options.eval_temperature = cfg.eval_temperature;
  if (cfg.cache_dir) options.cache_dir = cfg.resolve(*cfg.cache_dir);
  return Gateway(make_backend(cfg), options);
}

std::unique_ptr<ToxicityScorer> make_toxicity_scorer(const RunConfig& cfg) {
  if (!cfg.toxicity) return nullptr;
  if (cfg.toxicity->kind == "http") {
    return std::make_unique<HttpToxicityScorer>(cfg.toxicity->url, cfg.toxicity->api_key_env);
  }
  return ScriptedToxicityScorer::from_json(cfg.toxicity->scripted);
}

BenchmarkEndpoints benchmark_endpoints(const RunConfig& cfg) {
  BenchmarkEndpoints e{cfg.endpoint("expert"), cfg.endpoint("amateur"),
                       cfg.optional_endpoint("base"), cfg.optional_endpoint("judge"),
                       cfg.filter_on_amateur};
  return e;
}

}  // namespace clear

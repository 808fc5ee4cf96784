#include <cstdlib>

#include "clear/error.hpp"
#include "clear/task_suite.hpp"
#include "http_util.hpp"

namespace clear {

using nlohmann::json;

std::unique_ptr<ScriptedToxicityScorer> ScriptedToxicityScorer::from_json(const json& doc) {
  std::vector<Rule> rules;
  if (doc.contains("rules")) {
    for (const auto& r : doc.at("rules")) {
      Rule rule;
      rule.match = r.value("match", std::string());
      if (r.contains("value")) rule.value = r.at("value").get<double>();
      if (r.contains("fail")) {
        const auto fail = r.at("fail").get<std::string>();
        if (fail == "transport") {
          rule.fail = ErrorKind::Transport;
        } else if (fail == "quota") {
          rule.fail = ErrorKind::QuotaExceeded;
        } else {
          throw Error(ErrorKind::ConfigError, "unknown toxicity failure '" + fail + "'");
        }
      }
      if (!rule.value && !rule.fail) {
        throw Error(ErrorKind::ConfigError, "toxicity rule needs 'value' or 'fail'");
      }
      rules.push_back(std::move(rule));
    }
  }
  return std::make_unique<ScriptedToxicityScorer>(std::move(rules), doc.value("default", 0.0));
}

double ScriptedToxicityScorer::probability(std::string_view text) {
  for (const auto& rule : rules_) {
    if (!rule.match.empty() && text.find(rule.match) == std::string_view::npos) continue;
    if (rule.fail) throw Error(*rule.fail, "scripted toxicity failure");
    return *rule.value;
  }
  return fallback_;
}

double HttpToxicityScorer::probability(std::string_view text) {
  std::string url = url_;
  if (!api_key_env_.empty()) {
    const char* key = std::getenv(api_key_env_.c_str());
    if (key == nullptr || *key == '\0') {
      throw Error(ErrorKind::AuthFailure, "environment variable " + api_key_env_ + " is not set");
    }
    url += (url.find('?') == std::string::npos ? "?key=" : "&key=") + std::string(key);
  }
  json body{{"comment", {{"text", text}}},
            {"languages", json::array({"en"})},
            {"requestedAttributes", {{"TOXICITY", json::object()}}}};
  std::string raw;
  try {
    raw = detail::post_json(url, {}, body, std::chrono::seconds(10), std::chrono::seconds(60),
                            "toxicity scorer");
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::RateLimited) throw Error(ErrorKind::QuotaExceeded, e.detail());
    throw;
  }
  try {
    return json::parse(raw)
        .at("attributeScores")
        .at("TOXICITY")
        .at("summaryScore")
        .at("value")
        .get<double>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Transport, std::string("toxicity scorer reply unreadable: ") + e.what());
  }
}

}  // namespace clear

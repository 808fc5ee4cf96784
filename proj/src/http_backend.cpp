#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <cstdlib>

#include "clear/model_gateway.hpp"
#include "http_util.hpp"

namespace clear {

using nlohmann::json;

namespace detail {

SplitUrl split_url(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorKind::ConfigError, "malformed URL '" + url + "'");
  }
  auto path_start = url.find('/', scheme_end + 3);
  SplitUrl out;
  out.origin = url.substr(0, path_start);
  out.path = path_start == std::string::npos ? std::string() : url.substr(path_start);
  while (!out.path.empty() && out.path.back() == '/') out.path.pop_back();
  return out;
}

std::string join_url(std::string base, std::string_view suffix) {
  while (!base.empty() && base.back() == '/') base.pop_back();
  return base + std::string(suffix);
}

std::string bearer_token(const ModelEndpoint& endpoint) {
  if (endpoint.api_key_env.empty()) return {};
  const char* value = std::getenv(endpoint.api_key_env.c_str());
  if (value == nullptr || *value == '\0') {
    throw Error(ErrorKind::AuthFailure, "environment variable " + endpoint.api_key_env +
                                            " for endpoint '" + endpoint.name + "' is not set");
  }
  return value;
}

std::string post_json(const std::string& url, const std::string& token, const json& body,
                      std::chrono::seconds connect_timeout, std::chrono::seconds read_timeout,
                      const std::string& what) {
  SplitUrl parts = split_url(url);
  httplib::Client client(parts.origin);
  client.set_connection_timeout(connect_timeout);
  client.set_read_timeout(read_timeout);
  httplib::Headers headers;
  if (!token.empty()) headers.emplace("Authorization", "Bearer " + token);

  auto res = client.Post(parts.path.empty() ? "/" : parts.path, headers, body.dump(),
                         "application/json");
  if (!res) {
    throw Error(ErrorKind::Transport, what + ": " + httplib::to_string(res.error()));
  }
  const std::string status = "status " + std::to_string(res->status);
  if (res->status == 401 || res->status == 403) {
    throw Error(ErrorKind::AuthFailure, what + ": " + status + ": " + res->body);
  }
  if (res->status == 429) {
    throw Error(ErrorKind::RateLimited, what + ": " + status + ": " + res->body);
  }
  if (res->status == 400 || res->status == 413) {
    if (res->body.find("context_length_exceeded") != std::string::npos ||
        res->body.find("maximum context length") != std::string::npos) {
      throw Error(ErrorKind::ContextOverflow, what + ": " + status + ": " + res->body);
    }
  }
  if (res->status < 200 || res->status >= 300) {
    throw Error(ErrorKind::Transport, what + ": " + status + ": " + res->body);
  }
  return res->body;
}

}  // namespace detail

CompletionResult HttpBackend::complete(const ModelEndpoint& endpoint, std::string_view prompt,
                                       const SamplingParams& params) {
  json body{{"model", endpoint.model_id},
            {"messages", json::array({json{{"role", "user"}, {"content", prompt}}})},
            {"temperature", params.temperature},
            {"max_tokens", params.max_tokens}};
  std::string raw = detail::post_json(detail::join_url(endpoint.base_url, "/chat/completions"),
                                      detail::bearer_token(endpoint), body,
                                      options_.connect_timeout, options_.read_timeout,
                                      "endpoint '" + endpoint.name + "'");

  CompletionResult result;
  result.endpoint_name = endpoint.name;
  try {
    json reply = json::parse(raw);
    const json& content = reply.at("choices").at(0).at("message").at("content");
    result.text = content.is_string() ? content.get<std::string>() : std::string();
    if (reply.contains("usage") && reply.at("usage").is_object() &&
        reply.at("usage").contains("prompt_tokens")) {
      result.input_tokens = reply.at("usage").at("prompt_tokens").get<std::int64_t>();
      result.output_tokens = reply.at("usage").value("completion_tokens", std::int64_t{0});
    } else {
      result.input_tokens = estimate_tokens(prompt);
      result.output_tokens = estimate_tokens(result.text);
      result.estimated = true;
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Transport,
                "endpoint '" + endpoint.name + "' returned an unreadable reply: " + e.what());
  }
  return result;
}

std::vector<double> HttpBackend::embed(const ModelEndpoint& endpoint, std::string_view text) {
  json body{{"model", endpoint.model_id}, {"input", text}};
  std::string raw = detail::post_json(detail::join_url(endpoint.base_url, "/embeddings"),
                                      detail::bearer_token(endpoint), body,
                                      options_.connect_timeout, options_.read_timeout,
                                      "endpoint '" + endpoint.name + "'");
  try {
    return json::parse(raw).at("data").at(0).at("embedding").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Transport,
                "endpoint '" + endpoint.name + "' returned an unreadable embedding: " + e.what());
  }
}

}  // namespace clear

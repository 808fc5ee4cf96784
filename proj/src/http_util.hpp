#pragma once

#include <chrono>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "clear/model_gateway.hpp"

namespace clear::detail {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;    // without trailing slash
};

SplitUrl split_url(const std::string& url);
std::string join_url(std::string base, std::string_view suffix);

/// Reads the bearer token named by the endpoint; empty when none is configured.
std::string bearer_token(const ModelEndpoint& endpoint);

/// POSTs a JSON body and returns the 2xx reply body. Status codes map onto
/// AuthFailure (401/403), RateLimited (429), ContextOverflow (400/413 naming
/// the context limit) and Transport (everything else).
std::string post_json(const std::string& url, const std::string& token,
                      const nlohmann::json& body, std::chrono::seconds connect_timeout,
                      std::chrono::seconds read_timeout, const std::string& what);

}  // namespace clear::detail

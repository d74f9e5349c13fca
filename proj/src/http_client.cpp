#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include "json.hpp"

#include "qan/error.hpp"
#include "qan/llm.hpp"

namespace qan::llm {

HttpClient::HttpClient(HttpConfig config) : config_(std::move(config)) {
  if (config_.url.empty()) throw ConfigError("completion endpoint URL is not set (QAN_LLM_URL)");
  const auto scheme_end = config_.url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("endpoint URL needs a scheme: " + config_.url);
  const auto path_start = config_.url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) {
    scheme_host_port_ = config_.url;
    path_ = "/";
  } else {
    scheme_host_port_ = config_.url.substr(0, path_start);
    path_ = config_.url.substr(path_start);
  }
}

std::string HttpClient::complete(const std::string& prompt, const DecodingParams& params) {
  httplib::Client cli(scheme_host_port_);
  if (!cli.is_valid()) throw ConfigError("unsupported endpoint URL: " + config_.url);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
  cli.set_connection_timeout(secs);
  cli.set_read_timeout(secs);
  cli.set_write_timeout(secs);
  if (!config_.token.empty()) cli.set_bearer_token_auth(config_.token);

  nlohmann::ordered_json body;
  body["prompt"] = prompt;
  body["max_tokens"] = params.max_tokens;
  body["temperature"] = params.temperature;
  body["seed"] = params.seed;
  auto res = cli.Post(path_, body.dump(), "application/json");
  if (!res) {
    throw TransportError("request to " + config_.url + " failed: " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw TransportError("endpoint " + config_.url + " returned HTTP " + std::to_string(res->status));
  }
  try {
    return nlohmann::json::parse(res->body).at("text").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw TransportError("malformed completion response: " + std::string(e.what()));
  }
}

}  // namespace qan::llm

#include <cstdlib>

#include <httplib.h>

#include "mass/errors.hpp"
#include "mass/gateway.hpp"

namespace mass {

HttpBackend::HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
  if (config_.base_url.empty()) throw ConfigError("http backend requires a base_url");
}

std::string HttpBackend::id() const {
  return "http:" + config_.model;
}

GenerationResult HttpBackend::generate(const GenerationRequest& request) {
  if (request.temperature < 0.0 || request.temperature > 2.0) {
    throw ParameterError("temperature must be in [0, 2]");
  }
  httplib::Client client(config_.base_url);
  client.set_connection_timeout(0, config_.connect_timeout_ms * 1000);
  client.set_read_timeout(config_.read_timeout_ms / 1000, (config_.read_timeout_ms % 1000) * 1000);

  nlohmann::json body = {
      {"model", config_.model},
      {"messages", nlohmann::json::array({{{"role", "user"}, {"content", request.prompt}}})},
      {"temperature", request.temperature},
      {"max_tokens", request.max_output_tokens},
  };
  if (!request.stop_sequences.empty()) body["stop"] = request.stop_sequences;
  if (request.seed_hint) body["seed"] = *request.seed_hint;

  httplib::Headers headers;
  if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key) {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }

  auto res = client.Post(config_.path, headers, body.dump(), "application/json");
  if (!res) {
    throw BackendError("transport failure: " + httplib::to_string(res.error()), 0, true);
  }
  if (res->status != 200) {
    const bool retryable = res->status == 408 || res->status == 429 || res->status >= 500;
    throw BackendError("backend returned HTTP " + std::to_string(res->status) + ": " + res->body,
                       res->status, retryable);
  }
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::parse_error& e) {
    throw BackendError(std::string("unparseable backend response: ") + e.what(), res->status, false);
  }
  GenerationResult result;
  result.backend_id = id();
  try {
    result.text = doc.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception&) {
    throw BackendError("backend response missing choices[0].message.content", res->status, false);
  }
  if (doc.contains("usage")) {
    const auto& usage = doc.at("usage");
    result.input_tokens = usage.value("prompt_tokens", 0L);
    result.output_tokens = usage.value("completion_tokens", 0L);
  }
  if (result.input_tokens == 0 && result.output_tokens == 0) {
    result.input_tokens = estimate_tokens(request.prompt);
    result.output_tokens = estimate_tokens(result.text);
    result.tokens_estimated = true;
  }
  return result;
}

}  // namespace mass

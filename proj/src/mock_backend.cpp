#include <fstream>

#include "mass/errors.hpp"
#include "mass/gateway.hpp"

namespace mass {

long estimate_tokens(const std::string& text) {
  return static_cast<long>((text.size() + 3) / 4);
}

std::shared_ptr<MockBackend> MockBackend::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open mock script: " + path.string());
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(content);
  } catch (const nlohmann::json::parse_error& e) {
    int line = 1;
    for (std::size_t i = 0; i < e.byte && i < content.size(); ++i) {
      if (content[i] == '\n') ++line;
    }
    throw LoadError(std::string("malformed mock script: ") + e.what(), line);
  }
  return load_json(doc);
}

std::shared_ptr<MockBackend> MockBackend::load_json(const nlohmann::json& script) {
  if (script.value("schema", "mass-mock/1") != "mass-mock/1") {
    throw SchemaError("expected schema mass-mock/1, got '" + script.value("schema", "") + "'");
  }
  auto backend = std::make_shared<MockBackend>();
  backend->sentinel = script.value("default", "Answer: UNKNOWN");
  int index = 0;
  for (const auto& rule_doc : script.value("rules", nlohmann::json::array())) {
    ++index;
    Rule rule;
    if (!rule_doc.contains("respond") || !rule_doc.at("respond").is_string()) {
      throw LoadError("mock rule #" + std::to_string(index) + " has no 'respond' string");
    }
    rule.respond = rule_doc.at("respond").get<std::string>();
    if (rule_doc.contains("example")) rule.example_id = rule_doc.at("example").get<std::string>();
    if (rule_doc.contains("role")) rule.role = rule_doc.at("role").get<std::string>();
    if (rule_doc.contains("chain")) rule.chain = rule_doc.at("chain").get<int>();
    if (rule_doc.contains("round")) rule.round = rule_doc.at("round").get<int>();
    if (rule_doc.contains("prompt_contains")) {
      rule.prompt_contains = rule_doc.at("prompt_contains").get<std::string>();
    }
    if (rule_doc.contains("seed")) rule.seed = rule_doc.at("seed").get<std::int64_t>();
    backend->rules.push_back(std::move(rule));
  }
  return backend;
}

namespace {

bool rule_matches(const MockBackend::Rule& rule, const GenerationRequest& request) {
  const CallTags& tags = request.tags;
  if (rule.example_id && *rule.example_id != tags.example_id) return false;
  if (rule.role && *rule.role != tags.role) return false;
  if (rule.chain && *rule.chain != tags.chain) return false;
  if (rule.round && *rule.round != tags.round) return false;
  if (rule.seed && (!request.seed_hint || *rule.seed != *request.seed_hint)) return false;
  if (rule.prompt_contains && request.prompt.find(*rule.prompt_contains) == std::string::npos) {
    return false;
  }
  return true;
}

// Fallback ladder position: exact (example-keyed) first, then role+round,
// then role-only, then unkeyed rules; the sentinel sits behind them all.
int rule_tier(const MockBackend::Rule& rule) {
  if (rule.example_id) return 0;
  if (rule.role && rule.round) return 1;
  if (rule.role) return 2;
  return 3;
}

}  // namespace

GenerationResult MockBackend::generate(const GenerationRequest& request) {
  const Rule* best = nullptr;
  int best_tier = 4;
  for (const auto& rule : rules) {
    const int tier = rule_tier(rule);
    if (tier >= best_tier) continue;  // first match wins within a tier
    if (rule_matches(rule, request)) {
      best = &rule;
      best_tier = tier;
    }
  }
  GenerationResult result;
  result.text = best ? best->respond : sentinel;
  result.input_tokens = estimate_tokens(request.prompt);
  result.output_tokens = estimate_tokens(result.text);
  result.tokens_estimated = true;
  result.backend_id = id();
  return result;
}

}  // namespace mass

#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace mass {

// Lookup/accounting identity of one call: (example id, role, chain, round).
struct CallTags {
  std::string example_id;
  std::string role;
  int chain = 0;
  int round = 0;
};

struct GenerationRequest {
  std::string prompt;
  double temperature = 0.7;
  int max_output_tokens = 4096;
  std::vector<std::string> stop_sequences;
  std::optional<std::int64_t> seed_hint;
  CallTags tags;
};

struct GenerationResult {
  std::string text;
  long input_tokens = 0;
  long output_tokens = 0;
  bool tokens_estimated = false;
  std::string backend_id;
};

// ceil(chars / 4): the fallback when a backend reports no usage.
long estimate_tokens(const std::string& text);

class Backend {
 public:
  virtual ~Backend() = default;
  virtual GenerationResult generate(const GenerationRequest& request) = 0;
  virtual std::string id() const = 0;
};

// Deterministic scripted backend. Rules match on any subset of the call tags
// plus optional prompt_contains / seed constraints; the fallback ladder is
// exact (example) -> role+round -> role -> default sentinel.
class MockBackend : public Backend {
 public:
  struct Rule {
    std::optional<std::string> example_id;
    std::optional<std::string> role;
    std::optional<int> chain;
    std::optional<int> round;
    std::optional<std::string> prompt_contains;
    std::optional<std::int64_t> seed;
    std::string respond;
  };

  static std::shared_ptr<MockBackend> load_file(const std::filesystem::path& path);
  static std::shared_ptr<MockBackend> load_json(const nlohmann::json& script);

  GenerationResult generate(const GenerationRequest& request) override;
  std::string id() const override { return "mock"; }

  std::string sentinel;
  std::vector<Rule> rules;
};

struct HttpBackendConfig {
  std::string base_url;  // scheme://host[:port]
  std::string path = "/v1/chat/completions";
  std::string model;
  std::string api_key_env = "MASS_API_KEY";
  int connect_timeout_ms = 10000;
  int read_timeout_ms = 120000;
};

// Chat-completions-compatible POST carrying the rendered prompt as a single
// user message. Throws BackendError; 408/429/5xx and transport failures are
// marked retryable.
class HttpBackend : public Backend {
 public:
  explicit HttpBackend(HttpBackendConfig config);
  GenerationResult generate(const GenerationRequest& request) override;
  std::string id() const override;

 private:
  HttpBackendConfig config_;
};

struct RetryPolicy {
  int max_attempts = 5;
  int base_delay_ms = 1000;
  double factor = 2.0;
  double jitter = 0.1;
};

struct PhaseUsage {
  long calls = 0;
  long input_tokens = 0;
  long output_tokens = 0;
};

// Monotone per-phase call/token counters; safe under concurrent generate.
class UsageLedger {
 public:
  void record(const std::string& phase, long input_tokens, long output_tokens);
  std::map<std::string, PhaseUsage> snapshot() const;
  PhaseUsage total() const;
  // Sum over phases matching: starts with `prefix` and contains `infix`.
  PhaseUsage total_matching(const std::string& prefix, const std::string& infix = "") const;
  nlohmann::json to_json() const;

 private:
  mutable std::mutex mutex_;
  std::map<std::string, PhaseUsage> phases_;
};

// Owns retries, the in-flight concurrency cap, and the ledger. Every call is
// recorded under the caller-supplied phase label.
class Gateway {
 public:
  explicit Gateway(std::shared_ptr<Backend> backend, RetryPolicy retry = {}, int max_concurrency = 0);
  ~Gateway();

  GenerationResult generate(GenerationRequest request, const std::string& phase);

  UsageLedger& ledger() { return ledger_; }
  const UsageLedger& ledger() const { return ledger_; }
  long retries_total() const { return retries_.load(); }
  Backend& backend() { return *backend_; }

 private:
  std::shared_ptr<Backend> backend_;
  RetryPolicy retry_;
  UsageLedger ledger_;
  std::atomic<long> retries_{0};
  std::mutex jitter_mutex_;
  std::uint64_t jitter_state_;
  std::unique_ptr<class Semaphore> limiter_;
};

// Backend config document (schema mass-backend/1), kind mock or http.
std::shared_ptr<Backend> load_backend(const std::filesystem::path& path);

std::string format_usage_report(const UsageLedger& ledger, long retries_total);

}  // namespace mass

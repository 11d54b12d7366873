#include "mass/gateway.hpp"

#include <chrono>
#include <condition_variable>
#include <fstream>
#include <sstream>
#include <thread>

#include "mass/errors.hpp"
#include "mass/rng.hpp"

namespace mass {

// Runtime-sized counting semaphore bounding in-flight backend calls.
class Semaphore {
 public:
  explicit Semaphore(int count) : count_(count) {}
  void acquire() {
    std::unique_lock<std::mutex> lock(mutex_);
    cv_.wait(lock, [&] { return count_ > 0; });
    --count_;
  }
  void release() {
    {
      std::lock_guard<std::mutex> lock(mutex_);
      ++count_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  int count_;
};

void UsageLedger::record(const std::string& phase, long input_tokens, long output_tokens) {
  std::lock_guard<std::mutex> lock(mutex_);
  auto& usage = phases_[phase];
  usage.calls += 1;
  usage.input_tokens += input_tokens;
  usage.output_tokens += output_tokens;
}

std::map<std::string, PhaseUsage> UsageLedger::snapshot() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return phases_;
}

PhaseUsage UsageLedger::total() const {
  return total_matching("");
}

PhaseUsage UsageLedger::total_matching(const std::string& prefix, const std::string& infix) const {
  std::lock_guard<std::mutex> lock(mutex_);
  PhaseUsage sum;
  for (const auto& [phase, usage] : phases_) {
    // Prefix matches only at a label boundary: "a/cand-1" must not absorb
    // "a/cand-10".
    if (!prefix.empty() && phase != prefix && phase.rfind(prefix + "/", 0) != 0) continue;
    if (!infix.empty() && phase.find(infix) == std::string::npos) continue;
    sum.calls += usage.calls;
    sum.input_tokens += usage.input_tokens;
    sum.output_tokens += usage.output_tokens;
  }
  return sum;
}

nlohmann::json UsageLedger::to_json() const {
  nlohmann::json phases;
  for (const auto& [phase, usage] : snapshot()) {
    phases[phase] = {{"calls", usage.calls},
                     {"input_tokens", usage.input_tokens},
                     {"output_tokens", usage.output_tokens}};
  }
  const PhaseUsage sum = total();
  return {{"phases", phases},
          {"total", {{"calls", sum.calls},
                     {"input_tokens", sum.input_tokens},
                     {"output_tokens", sum.output_tokens}}}};
}

Gateway::Gateway(std::shared_ptr<Backend> backend, RetryPolicy retry, int max_concurrency)
    : backend_(std::move(backend)),
      retry_(retry),
      jitter_state_(0x6d617373ull) {
  if (max_concurrency > 0) limiter_ = std::make_unique<Semaphore>(max_concurrency);
}

Gateway::~Gateway() = default;

static std::string apply_stops(std::string text, const std::vector<std::string>& stops) {
  std::size_t cut = std::string::npos;
  for (const auto& stop : stops) {
    if (stop.empty()) continue;
    const std::size_t pos = text.find(stop);
    if (pos != std::string::npos && pos < cut) cut = pos;
  }
  if (cut != std::string::npos) text.resize(cut);
  return text;
}

GenerationResult Gateway::generate(GenerationRequest request, const std::string& phase) {
  if (request.temperature < 0.0 || request.temperature > 2.0) {
    throw ParameterError("temperature must be in [0, 2]");
  }
  if (request.max_output_tokens <= 0) {
    throw ParameterError("max_output_tokens must be positive");
  }
  struct Slot {
    Semaphore* s;
    ~Slot() {
      if (s) s->release();
    }
  } slot{nullptr};
  if (limiter_) {
    limiter_->acquire();
    slot.s = limiter_.get();
  }

  int attempt = 0;
  for (;;) {
    ++attempt;
    try {
      GenerationResult result = backend_->generate(request);
      result.text = apply_stops(std::move(result.text), request.stop_sequences);
      if (result.input_tokens == 0 && result.output_tokens == 0 && !result.tokens_estimated) {
        result.input_tokens = estimate_tokens(request.prompt);
        result.output_tokens = estimate_tokens(result.text);
        result.tokens_estimated = true;
      }
      ledger_.record(phase, result.input_tokens, result.output_tokens);
      return result;
    } catch (const BackendError& e) {
      if (!e.retryable || attempt >= retry_.max_attempts) throw;
      retries_.fetch_add(1);
      double delay = retry_.base_delay_ms;
      for (int i = 1; i < attempt; ++i) delay *= retry_.factor;
      {
        std::lock_guard<std::mutex> lock(jitter_mutex_);
        jitter_state_ = detail::splitmix64(jitter_state_);
        const double u = static_cast<double>(jitter_state_ >> 11) * 0x1.0p-53;
        delay *= 1.0 + retry_.jitter * u;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(static_cast<long>(delay)));
    }
  }
}

std::shared_ptr<Backend> load_backend(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open backend config: " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::parse_error& e) {
    throw LoadError(std::string("bad backend config: ") + e.what());
  }
  if (doc.value("schema", "") != "mass-backend/1") {
    throw SchemaError("expected schema mass-backend/1, got '" + doc.value("schema", "") + "'");
  }
  const std::string kind = doc.at("kind").get<std::string>();
  if (kind == "mock") {
    const auto script = path.parent_path() / doc.at("script").get<std::string>();
    return MockBackend::load_file(script);
  }
  if (kind == "http") {
    HttpBackendConfig config;
    config.base_url = doc.at("base_url").get<std::string>();
    config.path = doc.value("path", config.path);
    config.model = doc.value("model", "");
    config.api_key_env = doc.value("api_key_env", config.api_key_env);
    config.connect_timeout_ms = doc.value("connect_timeout_ms", config.connect_timeout_ms);
    config.read_timeout_ms = doc.value("read_timeout_ms", config.read_timeout_ms);
    return std::make_shared<HttpBackend>(config);
  }
  throw ConfigError("unknown backend kind '" + kind + "'");
}

std::string format_usage_report(const UsageLedger& ledger, long retries_total) {
  std::ostringstream out;
  out << "phase\tcalls\tinput_tokens\toutput_tokens\n";
  for (const auto& [phase, usage] : ledger.snapshot()) {
    out << phase << "\t" << usage.calls << "\t" << usage.input_tokens << "\t" << usage.output_tokens
        << "\n";
  }
  const PhaseUsage sum = ledger.total();
  out << "TOTAL\t" << sum.calls << "\t" << sum.input_tokens << "\t" << sum.output_tokens << "\n";
  out << "retries\t" << retries_total << "\n";
  return out.str();
}

}  // namespace mass

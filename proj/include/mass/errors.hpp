#pragma once

#include <stdexcept>
#include <string>

namespace mass {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid space/config structure (unknown dimension, broken invariant).
struct ConfigError : Error {
  using Error::Error;
};

// Bad argument to an operation (t <= 0, empty table, missing probability).
struct ParameterError : Error {
  using Error::Error;
};

// Workflow construction failed (e.g. missing role in the prompt bank).
struct ConstructionError : Error {
  using Error::Error;
};

// Prompt rendering failed (missing input field, unknown placeholder).
struct RenderError : Error {
  using Error::Error;
};

// Structured-text ingestion failed; carries a 1-based line when known.
struct LoadError : Error {
  explicit LoadError(const std::string& msg, int line_number = 0)
      : Error(line_number > 0 ? msg + " (line " + std::to_string(line_number) + ")" : msg),
        line(line_number) {}
  int line;
};

// Persisted document has a missing or unsupported schema id.
struct SchemaError : Error {
  using Error::Error;
};

struct BackendError : Error {
  BackendError(const std::string& msg, int status_code = 0, bool can_retry = false)
      : Error(msg), status(status_code), retryable(can_retry) {}
  int status;
  bool retryable;
};

struct SamplingExhaustedError : Error {
  explicit SamplingExhaustedError(int attempt_count)
      : Error("rejection sampling exhausted after " + std::to_string(attempt_count) +
              " attempts without a config inside the budget"),
        attempts(attempt_count) {}
  int attempts;
};

// A workflow step failed hard (backend gave up after retries).
struct ExecutionError : Error {
  ExecutionError(const std::string& msg, std::string failing_step)
      : Error(msg + " [step: " + failing_step + "]"), step(std::move(failing_step)) {}
  std::string step;
};

}  // namespace mass

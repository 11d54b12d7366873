#pragma once

#include <optional>
#include <string>
#include <vector>

namespace mass {

struct ExecutionRequest {
  std::string code;
  std::vector<std::string> tests;
  double timeout_s = 10.0;
  // External command template with a {file} placeholder; empty = stub mode.
  std::string interpreter_command;
};

struct TestResult {
  std::string test;
  bool passed = false;
  std::string output;  // captured stdout/stderr or error text
};

struct ExecutionOutcome {
  bool all_passed = false;
  std::vector<TestResult> per_test;
  std::string traceback_text;  // non-empty iff some test failed or errored
};

// Runs code + each test in an ephemeral working directory via the external
// command under a wall-clock timeout, with an environment allowlist. Stub
// mode (empty command) evaluates assert-style arithmetic tests internally.
class CodeExecutor {
 public:
  CodeExecutor() = default;
  CodeExecutor(std::string interpreter_command, double timeout_s = 10.0, std::size_t traceback_cap = 4000,
               int max_concurrency = 8);

  ExecutionOutcome run_tests(const ExecutionRequest& request) const;
  // Fills the executor's own command/timeout into the request.
  ExecutionOutcome run(const std::string& code, const std::vector<std::string>& tests) const;

  std::size_t traceback_cap() const { return traceback_cap_; }
  bool stub_mode() const { return command_.empty(); }

 private:
  std::string command_;
  double timeout_s_ = 10.0;
  std::size_t traceback_cap_ = 4000;
};

int pass_at_1(const std::string& code, const std::vector<std::string>& tests, const CodeExecutor& executor);

// "Test case: / Output: / Ground Truth:" blocks, truncated at `char_cap`.
std::string format_traceback(const ExecutionOutcome& outcome, const std::optional<std::string>& gold,
                             std::size_t char_cap = 4000);

}  // namespace mass

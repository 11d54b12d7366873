#include "mass/code_executor.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cctype>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <random>
#include <sstream>

#include "mass/errors.hpp"
#include "mass/util.hpp"

namespace mass {

namespace {

// Global cap on concurrent interpreter subprocesses.
class ProcessGate {
 public:
  explicit ProcessGate(int count) : count_(count) {}
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

ProcessGate& process_gate() {
  static ProcessGate gate(8);
  return gate;
}

// ---- stub mode: arithmetic assert evaluator -------------------------------

struct ExprParser {
  std::string_view text;
  std::size_t pos = 0;
  bool ok = true;

  void skip_ws() {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
  }

  bool eat(char c) {
    skip_ws();
    if (pos < text.size() && text[pos] == c) {
      ++pos;
      return true;
    }
    return false;
  }

  double parse_expression() {
    double value = parse_term();
    for (;;) {
      if (eat('+')) {
        value += parse_term();
      } else if (eat('-')) {
        value -= parse_term();
      } else {
        return value;
      }
    }
  }

  double parse_term() {
    double value = parse_factor();
    for (;;) {
      skip_ws();
      if (pos < text.size() && text[pos] == '*' && pos + 1 < text.size() && text[pos + 1] == '*') {
        pos += 2;
        value = std::pow(value, parse_factor());
      } else if (eat('*')) {
        value *= parse_factor();
      } else if (eat('/')) {
        const double d = parse_factor();
        if (d == 0.0) ok = false;
        value = ok ? value / d : 0.0;
      } else if (eat('%')) {
        const double d = parse_factor();
        if (d == 0.0) ok = false;
        value = ok ? std::fmod(value, d) : 0.0;
      } else {
        return value;
      }
    }
  }

  double parse_factor() {
    skip_ws();
    if (eat('-')) return -parse_factor();
    if (eat('+')) return parse_factor();
    if (eat('(')) {
      const double value = parse_expression();
      if (!eat(')')) ok = false;
      return value;
    }
    std::size_t start = pos;
    while (pos < text.size() &&
           (std::isdigit(static_cast<unsigned char>(text[pos])) || text[pos] == '.')) {
      ++pos;
    }
    if (start == pos) {
      ok = false;
      return 0.0;
    }
    return std::atof(std::string(text.substr(start, pos - start)).c_str());
  }
};

std::optional<double> eval_arithmetic(std::string_view expr) {
  ExprParser parser{expr};
  const double value = parser.parse_expression();
  parser.skip_ws();
  if (!parser.ok || parser.pos != expr.size()) return std::nullopt;
  return value;
}

TestResult run_stub_test(const std::string& code, const std::string& test) {
  TestResult result;
  result.test = test;
  if (trim(code).empty()) {
    result.output = "empty code";
    return result;
  }
  std::string body = trim(test);
  if (!starts_with(body, "assert")) {
    result.output = "stub mode supports assert-style tests only";
    return result;
  }
  body = trim(body.substr(6));
  const std::size_t eq = body.find("==");
  std::optional<double> lhs, rhs;
  if (eq == std::string::npos) {
    lhs = eval_arithmetic(body);
    rhs = 1.0;  // bare assert: truthiness
    if (lhs && *lhs != 0.0) lhs = 1.0;
  } else {
    lhs = eval_arithmetic(trim(body.substr(0, eq)));
    rhs = eval_arithmetic(trim(body.substr(eq + 2)));
  }
  if (!lhs || !rhs) {
    result.output = "stub mode cannot evaluate: " + trim(test);
    return result;
  }
  const double tol = 1e-9 * std::max({1.0, std::fabs(*lhs), std::fabs(*rhs)});
  result.passed = std::fabs(*lhs - *rhs) <= tol;
  if (!result.passed) {
    std::ostringstream msg;
    msg << "AssertionError: " << trim(test) << " (lhs=" << *lhs << ", rhs=" << *rhs << ")";
    result.output = msg.str();
  } else {
    result.output = "ok";
  }
  return result;
}

// ---- interpreter mode ------------------------------------------------------

struct SubprocessResult {
  int exit_code = -1;
  bool timed_out = false;
  std::string output;
};

SubprocessResult run_subprocess(const std::vector<std::string>& argv,
                                const std::filesystem::path& cwd, double timeout_s) {
  SubprocessResult result;
  int pipe_fd[2];
  if (pipe(pipe_fd) != 0) {
    result.output = "pipe() failed";
    return result;
  }
  const pid_t pid = fork();
  if (pid < 0) {
    close(pipe_fd[0]);
    close(pipe_fd[1]);
    result.output = "fork() failed";
    return result;
  }
  if (pid == 0) {
    setpgid(0, 0);
    if (chdir(cwd.c_str()) != 0) _exit(127);
    dup2(pipe_fd[1], STDOUT_FILENO);
    dup2(pipe_fd[1], STDERR_FILENO);
    close(pipe_fd[0]);
    close(pipe_fd[1]);
    std::vector<char*> args;
    for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
    args.push_back(nullptr);
    // Environment allowlist: PATH plus an isolated HOME.
    const char* path = std::getenv("PATH");
    std::string path_var = std::string("PATH=") + (path ? path : "/usr/bin:/bin");
    std::string home_var = std::string("HOME=") + cwd.string();
    char* envp[] = {path_var.data(), home_var.data(), nullptr};
    execve(args[0], args.data(), envp);
    _exit(127);
  }
  close(pipe_fd[1]);
  fcntl(pipe_fd[0], F_SETFL, O_NONBLOCK);

  const auto deadline = std::chrono::steady_clock::now() +
                        std::chrono::milliseconds(static_cast<long>(timeout_s * 1000.0));
  std::string output;
  bool killed = false;
  for (;;) {
    struct pollfd pfd{pipe_fd[0], POLLIN, 0};
    const auto now = std::chrono::steady_clock::now();
    long remaining_ms =
        std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count();
    if (remaining_ms < 0) remaining_ms = 0;
    const int ready = poll(&pfd, 1, static_cast<int>(std::min(remaining_ms, 200L)));
    if (ready > 0 && (pfd.revents & (POLLIN | POLLHUP))) {
      char buf[4096];
      ssize_t n;
      while ((n = read(pipe_fd[0], buf, sizeof buf)) > 0) {
        if (output.size() < 1 << 20) output.append(buf, static_cast<std::size_t>(n));
      }
      if (n == 0) break;  // EOF: child closed its end
    }
    if (!killed && std::chrono::steady_clock::now() >= deadline) {
      kill(-pid, SIGKILL);
      killed = true;
      result.timed_out = true;
    }
  }
  close(pipe_fd[0]);
  int status = 0;
  waitpid(pid, &status, 0);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  result.output = std::move(output);
  if (result.timed_out) result.output += (result.output.empty() ? "" : "\n") + std::string("timeout");
  return result;
}

std::vector<std::string> split_command(const std::string& command, const std::string& file) {
  std::vector<std::string> argv;
  std::istringstream in(command);
  std::string word;
  while (in >> word) {
    std::size_t pos = word.find("{file}");
    if (pos != std::string::npos) word.replace(pos, 6, file);
    argv.push_back(word);
  }
  return argv;
}

std::filesystem::path make_ephemeral_dir() {
  static std::atomic<unsigned> counter{0};
  std::random_device rd;
  const auto base = std::filesystem::temp_directory_path();
  for (int i = 0; i < 100; ++i) {
    auto dir = base / ("mass-exec-" + std::to_string(::getpid()) + "-" +
                       std::to_string(counter.fetch_add(1)) + "-" + std::to_string(rd() & 0xffff));
    std::error_code ec;
    if (std::filesystem::create_directory(dir, ec)) return dir;
  }
  throw Error("cannot create ephemeral execution directory");
}

TestResult run_interpreter_test(const std::string& command, const std::string& code,
                                const std::string& test, double timeout_s) {
  TestResult result;
  result.test = test;
  const auto dir = make_ephemeral_dir();
  const auto file = dir / "main.py";
  {
    std::ofstream out(file);
    out << code << "\n\n" << test << "\n";
  }
  auto argv = split_command(command, file.string());
  if (argv.empty()) {
    result.output = "empty interpreter command";
    return result;
  }
  // Resolve bare command names against PATH for execve.
  if (argv[0].find('/') == std::string::npos) {
    if (const char* path_env = std::getenv("PATH")) {
      std::istringstream paths(path_env);
      std::string prefix;
      while (std::getline(paths, prefix, ':')) {
        auto candidate = std::filesystem::path(prefix) / argv[0];
        if (::access(candidate.c_str(), X_OK) == 0) {
          argv[0] = candidate.string();
          break;
        }
      }
    }
  }
  process_gate().acquire();
  SubprocessResult run = run_subprocess(argv, dir, timeout_s);
  process_gate().release();
  result.passed = !run.timed_out && run.exit_code == 0;
  result.output = trim(run.output);
  if (result.output.empty()) result.output = result.passed ? "ok" : "exit " + std::to_string(run.exit_code);
  std::error_code ec;
  std::filesystem::remove_all(dir, ec);
  return result;
}

}  // namespace

CodeExecutor::CodeExecutor(std::string interpreter_command, double timeout_s, std::size_t traceback_cap,
                           int max_concurrency)
    : command_(std::move(interpreter_command)), timeout_s_(timeout_s), traceback_cap_(traceback_cap) {
  (void)max_concurrency;
}

ExecutionOutcome CodeExecutor::run_tests(const ExecutionRequest& request) const {
  if (request.tests.empty()) throw ParameterError("execution request has no tests");
  if (request.timeout_s <= 0) throw ParameterError("timeout must be > 0");
  ExecutionOutcome outcome;
  outcome.all_passed = true;
  for (const auto& test : request.tests) {
    TestResult result = request.interpreter_command.empty()
                            ? run_stub_test(request.code, test)
                            : run_interpreter_test(request.interpreter_command, request.code, test,
                                                   request.timeout_s);
    outcome.all_passed = outcome.all_passed && result.passed;
    if (!result.passed) {
      if (!outcome.traceback_text.empty()) outcome.traceback_text += "\n";
      outcome.traceback_text += result.output;
    }
    outcome.per_test.push_back(std::move(result));
  }
  return outcome;
}

ExecutionOutcome CodeExecutor::run(const std::string& code, const std::vector<std::string>& tests) const {
  ExecutionRequest request;
  request.code = code;
  request.tests = tests;
  request.timeout_s = timeout_s_;
  request.interpreter_command = command_;
  return run_tests(request);
}

int pass_at_1(const std::string& code, const std::vector<std::string>& tests, const CodeExecutor& executor) {
  if (tests.empty()) return 0;
  return executor.run(code, tests).all_passed ? 1 : 0;
}

std::string format_traceback(const ExecutionOutcome& outcome, const std::optional<std::string>& gold,
                             std::size_t char_cap) {
  std::string out;
  for (const auto& result : outcome.per_test) {
    out += "Test case: " + result.test + "\n";
    out += "Output: " + result.output + "\n";
    if (gold) out += "Ground Truth: " + *gold + "\n";
    out += "\n";
  }
  out = trim(out);
  if (out.size() > char_cap) {
    out.resize(char_cap);
    out += "\n...[truncated]";
  }
  return out;
}

}  // namespace mass

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace mass {

class Gateway;
class CodeExecutor;
struct Workflow;

enum class TaskFamily {
  math_reasoning,
  discrete_reasoning,
  long_context_qa,
  coding,
  test_output_prediction,
  synthetic
};
enum class MetricKind { exact_match, token_f1, pass_at_1 };
enum class ExtractionRule { answer_tag, answer_field, code_fence, assertion };

std::string family_name(TaskFamily family);
TaskFamily family_from_name(const std::string& name);
std::string metric_name(MetricKind metric);
MetricKind metric_from_name(const std::string& name);
std::string extraction_name(ExtractionRule rule);
ExtractionRule extraction_from_name(const std::string& name);

struct Example {
  std::string id;
  std::map<std::string, std::string> inputs;  // question, optional context/entry_point
  std::string gold;
  std::vector<std::string> tests;  // coding tasks only
};

struct TaskSpec {
  std::string name;
  TaskFamily family = TaskFamily::synthetic;
  MetricKind metric = MetricKind::exact_match;
  ExtractionRule extraction = ExtractionRule::answer_field;
  bool numeric_mode = false;
  double f1_demo_floor = 0.9;
  std::string prompt_pack;  // directory of per-role template files
  std::vector<Example> validation;
  std::vector<Example> test;

  void validate() const;  // metric/extraction pairing + example invariants
  const std::vector<Example>& split(const std::string& which) const;
};

// Mean/std over repeats of per-repeat dataset means.
struct Score {
  double mean = 0.0;
  double std_dev = 0.0;
  int repeats = 0;
  std::vector<double> per_repeat;

  static Score from_repeat_means(const std::vector<double>& repeat_means);

  nlohmann::json to_json() const;
  static Score from_json(const nlohmann::json& doc);
};

// answer_tag: last <answer>...</answer>; answer_field: after the last line
// starting "Answer:"; code_fence: body of the last ``` block; assertion: the
// last line beginning "assert". Absence yields empty text.
std::string extract_answer(const std::string& raw, ExtractionRule rule);

// Trim, collapse internal whitespace, strip surrounding $ and a trailing
// period — the normalization used by exact_match and the majority vote.
std::string normalize_answer(const std::string& text);

int exact_match(const std::string& prediction, const std::string& gold, bool numeric_mode = false);

// SQuAD-style: lowercase, strip punctuation, drop articles, token F1.
double token_f1(const std::string& prediction, const std::string& gold);

// Line-delimited records {id, question, context?, answer, tests?, entry_point?}.
std::vector<Example> load_dataset(const std::filesystem::path& path, TaskFamily family);

// Task config document (schema mass-task/1) with dataset file references.
TaskSpec load_task(const std::filesystem::path& path);

struct EvalFailure {
  std::string example_id;
  int repeat = 0;
  std::string message;
};

struct EvalOutcome {
  Score score;
  std::vector<EvalFailure> failures;
};

// E_D(W): mean/std over `repeats` passes of the split, repeat r generated
// with seed_hint = base_seed + r. Per-example failures score 0, never abort.
EvalOutcome evaluate_workflow(const Workflow& workflow, const TaskSpec& task,
                              const std::vector<Example>& split, Gateway& gateway, int repeats,
                              int parallelism, std::int64_t base_seed, const std::string& phase,
                              const CodeExecutor* executor = nullptr);

}  // namespace mass

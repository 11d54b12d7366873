#include "mass/task_eval.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>

#include "mass/code_executor.hpp"
#include "mass/errors.hpp"
#include "mass/execute.hpp"
#include "mass/gateway.hpp"
#include "mass/util.hpp"
#include "mass/workflow.hpp"

namespace mass {

std::string family_name(TaskFamily family) {
  switch (family) {
    case TaskFamily::math_reasoning:         return "math_reasoning";
    case TaskFamily::discrete_reasoning:     return "discrete_reasoning";
    case TaskFamily::long_context_qa:        return "long_context_qa";
    case TaskFamily::coding:                 return "coding";
    case TaskFamily::test_output_prediction: return "test_output_prediction";
    case TaskFamily::synthetic:              return "synthetic";
  }
  return "synthetic";
}

TaskFamily family_from_name(const std::string& name) {
  if (name == "math_reasoning")         return TaskFamily::math_reasoning;
  if (name == "discrete_reasoning")     return TaskFamily::discrete_reasoning;
  if (name == "long_context_qa")        return TaskFamily::long_context_qa;
  if (name == "coding")                 return TaskFamily::coding;
  if (name == "test_output_prediction") return TaskFamily::test_output_prediction;
  if (name == "synthetic")              return TaskFamily::synthetic;
  throw ConfigError("unknown task family '" + name + "'");
}

std::string metric_name(MetricKind metric) {
  switch (metric) {
    case MetricKind::exact_match: return "exact_match";
    case MetricKind::token_f1:    return "token_f1";
    case MetricKind::pass_at_1:   return "pass_at_1";
  }
  return "exact_match";
}

MetricKind metric_from_name(const std::string& name) {
  if (name == "exact_match") return MetricKind::exact_match;
  if (name == "token_f1")    return MetricKind::token_f1;
  if (name == "pass_at_1")   return MetricKind::pass_at_1;
  throw ConfigError("unknown metric '" + name + "'");
}

std::string extraction_name(ExtractionRule rule) {
  switch (rule) {
    case ExtractionRule::answer_tag:   return "answer_tag";
    case ExtractionRule::answer_field: return "answer_field";
    case ExtractionRule::code_fence:   return "code_fence";
    case ExtractionRule::assertion:    return "assertion";
  }
  return "answer_field";
}

ExtractionRule extraction_from_name(const std::string& name) {
  if (name == "answer_tag")   return ExtractionRule::answer_tag;
  if (name == "answer_field") return ExtractionRule::answer_field;
  if (name == "code_fence")   return ExtractionRule::code_fence;
  if (name == "assertion")    return ExtractionRule::assertion;
  throw ConfigError("unknown extraction rule '" + name + "'");
}

void TaskSpec::validate() const {
  // Metric/extraction pairs are limited to the combinations the tasks use.
  const bool ok = [&] {
    switch (family) {
      case TaskFamily::math_reasoning:
        return metric == MetricKind::exact_match &&
               (extraction == ExtractionRule::answer_tag || extraction == ExtractionRule::answer_field);
      case TaskFamily::discrete_reasoning:
      case TaskFamily::long_context_qa:
        return metric == MetricKind::token_f1 && extraction == ExtractionRule::answer_field;
      case TaskFamily::coding:
        return metric == MetricKind::pass_at_1 && extraction == ExtractionRule::code_fence;
      case TaskFamily::test_output_prediction:
        return metric == MetricKind::exact_match &&
               (extraction == ExtractionRule::assertion || extraction == ExtractionRule::answer_field);
      case TaskFamily::synthetic:
        return true;
    }
    return false;
  }();
  if (!ok) {
    throw ConfigError("metric " + metric_name(metric) + " with extraction " +
                      extraction_name(extraction) + " is not valid for family " + family_name(family));
  }
  auto check_examples = [&](const std::vector<Example>& examples, const char* split_name) {
    for (const auto& ex : examples) {
      if (metric != MetricKind::pass_at_1 && ex.gold.empty()) {
        throw ConfigError(std::string(split_name) + " example '" + ex.id + "' has empty gold answer");
      }
      if (metric == MetricKind::pass_at_1 && ex.tests.empty()) {
        throw ConfigError(std::string(split_name) + " example '" + ex.id + "' has no test cases");
      }
    }
  };
  check_examples(validation, "validation");
  check_examples(test, "test");
}

const std::vector<Example>& TaskSpec::split(const std::string& which) const {
  if (which == "validation" || which == "val") return validation;
  if (which == "test") return test;
  throw ParameterError("unknown split '" + which + "'");
}

Score Score::from_repeat_means(const std::vector<double>& repeat_means) {
  Score score;
  score.per_repeat = repeat_means;
  score.repeats = static_cast<int>(repeat_means.size());
  if (repeat_means.empty()) return score;
  score.mean = std::accumulate(repeat_means.begin(), repeat_means.end(), 0.0) /
               static_cast<double>(repeat_means.size());
  double ss = 0.0;
  for (double v : repeat_means) ss += (v - score.mean) * (v - score.mean);
  score.std_dev = std::sqrt(ss / static_cast<double>(repeat_means.size()));
  return score;
}

nlohmann::json Score::to_json() const {
  return {{"mean", mean}, {"std", std_dev}, {"repeats", repeats}, {"per_repeat", per_repeat}};
}

Score Score::from_json(const nlohmann::json& doc) {
  Score score;
  score.mean = doc.at("mean").get<double>();
  score.std_dev = doc.at("std").get<double>();
  score.repeats = doc.at("repeats").get<int>();
  score.per_repeat = doc.value("per_repeat", std::vector<double>{});
  return score;
}

std::string extract_answer(const std::string& raw, ExtractionRule rule) {
  switch (rule) {
    case ExtractionRule::answer_tag: {
      const std::string open = "<answer>", close = "</answer>";
      std::size_t start = raw.rfind(open);
      if (start == std::string::npos) return "";
      start += open.size();
      std::size_t end = raw.find(close, start);
      if (end == std::string::npos) return "";
      return trim(raw.substr(start, end - start));
    }
    case ExtractionRule::answer_field: {
      const auto lines = split_lines(raw);
      std::ptrdiff_t hit = -1;
      for (std::size_t i = 0; i < lines.size(); ++i) {
        if (starts_with(trim(lines[i]), "Answer:")) hit = static_cast<std::ptrdiff_t>(i);
      }
      if (hit < 0) return "";
      std::string first = trim(lines[static_cast<std::size_t>(hit)]);
      first = trim(first.substr(std::string("Answer:").size()));
      // Continuation lines belong to the answer until the text ends.
      std::string out = first;
      for (std::size_t i = static_cast<std::size_t>(hit) + 1; i < lines.size(); ++i) {
        out += "\n" + lines[i];
      }
      return trim(out);
    }
    case ExtractionRule::code_fence: {
      std::size_t close = raw.rfind("```");
      if (close == std::string::npos) return "";
      std::size_t open = raw.rfind("```", close == 0 ? 0 : close - 1);
      if (open == std::string::npos || open == close) return "";
      std::size_t body = open + 3;
      // Skip a language tag like ```python
      std::size_t nl = raw.find('\n', body);
      if (nl != std::string::npos && nl < close) body = nl + 1;
      return trim(raw.substr(body, close - body));
    }
    case ExtractionRule::assertion: {
      const auto lines = split_lines(raw);
      for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
        const std::string line = trim(*it);
        if (starts_with(line, "assert")) return line;
      }
      return "";
    }
  }
  return "";
}

std::string normalize_answer(const std::string& text) {
  std::string out = collapse_whitespace(text);
  if (out.size() >= 2 && out.front() == '$' && out.back() == '$') {
    out = trim(out.substr(1, out.size() - 2));
  } else if (!out.empty() && out.front() == '$') {
    out = trim(out.substr(1));
  } else if (!out.empty() && out.back() == '$') {
    out = trim(out.substr(0, out.size() - 1));
  }
  if (!out.empty() && out.back() == '.') out = trim(out.substr(0, out.size() - 1));
  return out;
}

namespace {

// Exact rational with 64-bit terms; parse fails on overflow.
struct Rational {
  long long num = 0;
  long long den = 1;
};

bool mul_overflow(long long a, long long b, long long* out) {
  return __builtin_mul_overflow(a, b, out);
}

std::optional<Rational> parse_decimal(const std::string& text) {
  std::size_t pos = 0;
  bool negative = false;
  if (pos < text.size() && (text[pos] == '+' || text[pos] == '-')) {
    negative = text[pos] == '-';
    ++pos;
  }
  std::string digits, frac;
  while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) digits += text[pos++];
  if (pos < text.size() && text[pos] == '.') {
    ++pos;
    while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) frac += text[pos++];
  }
  if (pos != text.size() || (digits.empty() && frac.empty())) return std::nullopt;
  if (digits.size() + frac.size() > 17) return std::nullopt;
  Rational r;
  r.num = 0;
  for (char c : digits + frac) r.num = r.num * 10 + (c - '0');
  r.den = 1;
  for (std::size_t i = 0; i < frac.size(); ++i) {
    if (mul_overflow(r.den, 10, &r.den)) return std::nullopt;
  }
  if (negative) r.num = -r.num;
  return r;
}

std::optional<Rational> parse_rational(const std::string& raw) {
  const std::string text = trim(raw);
  std::size_t slash = text.find('/');
  if (slash == std::string::npos) return parse_decimal(text);
  auto a = parse_decimal(trim(text.substr(0, slash)));
  auto b = parse_decimal(trim(text.substr(slash + 1)));
  if (!a || !b || b->num == 0) return std::nullopt;
  // (a.num/a.den) / (b.num/b.den) = a.num*b.den / (a.den*b.num)
  Rational r;
  if (mul_overflow(a->num, b->den, &r.num)) return std::nullopt;
  if (mul_overflow(a->den, b->num, &r.den)) return std::nullopt;
  if (r.den < 0) {
    r.num = -r.num;
    r.den = -r.den;
  }
  return r;
}

bool rational_equal(const Rational& a, const Rational& b) {
  long long lhs = 0, rhs = 0;
  if (mul_overflow(a.num, b.den, &lhs) || mul_overflow(b.num, a.den, &rhs)) return false;
  return lhs == rhs;
}

}  // namespace

int exact_match(const std::string& prediction, const std::string& gold, bool numeric_mode) {
  const std::string p = normalize_answer(prediction);
  const std::string g = normalize_answer(gold);
  if (p == g) return 1;
  if (numeric_mode) {
    auto pr = parse_rational(p);
    auto gr = parse_rational(g);
    if (pr && gr && rational_equal(*pr, *gr)) return 1;
  }
  return 0;
}

static std::vector<std::string> f1_tokens(const std::string& text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (char c : text) {
    unsigned char u = static_cast<unsigned char>(c);
    if (std::ispunct(u)) continue;
    cleaned.push_back(static_cast<char>(std::tolower(u)));
  }
  std::istringstream in(cleaned);
  std::vector<std::string> tokens;
  std::string tok;
  while (in >> tok) {
    if (tok == "a" || tok == "an" || tok == "the") continue;
    tokens.push_back(tok);
  }
  return tokens;
}

double token_f1(const std::string& prediction, const std::string& gold) {
  const auto p = f1_tokens(prediction);
  const auto g = f1_tokens(gold);
  if (p.empty() && g.empty()) return 1.0;
  if (p.empty() || g.empty()) return 0.0;
  std::map<std::string, int> counts;
  for (const auto& t : g) ++counts[t];
  int overlap = 0;
  for (const auto& t : p) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  if (overlap == 0) return 0.0;
  const double precision = static_cast<double>(overlap) / static_cast<double>(p.size());
  const double recall = static_cast<double>(overlap) / static_cast<double>(g.size());
  return 2.0 * precision * recall / (precision + recall);
}

std::vector<Example> load_dataset(const std::filesystem::path& path, TaskFamily family) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open dataset: " + path.string());
  std::vector<Example> examples;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (trim(line).empty()) continue;
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw LoadError(std::string("malformed dataset record: ") + e.what(), line_number);
    }
    Example ex;
    if (!doc.contains("id") || !doc.contains("question")) {
      throw LoadError("dataset record missing id/question", line_number);
    }
    ex.id = doc.at("id").is_string() ? doc.at("id").get<std::string>() : doc.at("id").dump();
    ex.inputs["question"] = doc.at("question").get<std::string>();
    if (doc.contains("context")) ex.inputs["context"] = doc.at("context").get<std::string>();
    if (doc.contains("entry_point")) ex.inputs["entry_point"] = doc.at("entry_point").get<std::string>();
    ex.gold = doc.value("answer", "");
    if (doc.contains("tests")) ex.tests = doc.at("tests").get<std::vector<std::string>>();
    const bool is_coding = family == TaskFamily::coding;
    if (is_coding && ex.tests.empty()) {
      throw LoadError("coding example '" + ex.id + "' has no tests", line_number);
    }
    if (!is_coding && ex.gold.empty()) {
      throw LoadError("example '" + ex.id + "' has empty answer", line_number);
    }
    examples.push_back(std::move(ex));
  }
  return examples;
}

TaskSpec load_task(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open task config: " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::parse_error& e) {
    throw LoadError(std::string("bad task config: ") + e.what());
  }
  if (doc.value("schema", "") != "mass-task/1") {
    throw SchemaError("expected schema mass-task/1, got '" + doc.value("schema", "") + "'");
  }
  TaskSpec task;
  task.name = doc.at("name").get<std::string>();
  task.family = family_from_name(doc.at("family").get<std::string>());
  task.metric = metric_from_name(doc.at("metric").get<std::string>());
  task.extraction = extraction_from_name(doc.at("extraction").get<std::string>());
  task.numeric_mode = doc.value("numeric_mode", false);
  task.f1_demo_floor = doc.value("f1_demo_floor", 0.9);
  const auto base = path.parent_path();
  task.prompt_pack = (base / doc.at("prompt_pack").get<std::string>()).lexically_normal().string();
  auto load_split = [&](const char* key, const char* size_key) {
    std::vector<Example> examples;
    if (doc.contains(key)) {
      examples = load_dataset(base / doc.at(key).get<std::string>(), task.family);
      if (doc.contains(size_key)) {
        const auto n = doc.at(size_key).get<std::size_t>();
        if (examples.size() > n) examples.resize(n);
      }
    }
    return examples;
  };
  task.validation = load_split("validation_file", "val_size");
  task.test = load_split("test_file", "test_size");
  task.validate();
  return task;
}

EvalOutcome evaluate_workflow(const Workflow& workflow, const TaskSpec& task,
                              const std::vector<Example>& split, Gateway& gateway, int repeats,
                              int parallelism, std::int64_t base_seed, const std::string& phase,
                              const CodeExecutor* executor) {
  if (repeats < 1) throw ParameterError("repeats must be >= 1");
  if (split.empty()) throw ParameterError("dataset split is empty");
  const std::size_t n = split.size();
  const std::size_t units = n * static_cast<std::size_t>(repeats);
  std::vector<double> values(units, 0.0);
  std::vector<std::optional<EvalFailure>> failures(units);

  parallel_for(units, parallelism, [&](std::size_t unit) {
    const int repeat = static_cast<int>(unit / n);
    const std::size_t index = unit % n;
    const Example& ex = split[index];
    GenParams params;
    params.seed_hint = base_seed + repeat;
    params.phase = phase;
    try {
      Transcript transcript = execute_workflow(workflow, ex, gateway, params, executor);
      double value = 0.0;
      switch (task.metric) {
        case MetricKind::exact_match:
          value = exact_match(transcript.final_answer, ex.gold, task.numeric_mode);
          break;
        case MetricKind::token_f1:
          value = token_f1(transcript.final_answer, ex.gold);
          break;
        case MetricKind::pass_at_1: {
          static const CodeExecutor stub_executor{};
          const CodeExecutor& exec = executor ? *executor : stub_executor;
          value = pass_at_1(transcript.final_answer, ex.tests, exec);
          break;
        }
      }
      values[unit] = value;
    } catch (const std::exception& e) {
      values[unit] = 0.0;
      failures[unit] = EvalFailure{ex.id, repeat, e.what()};
    }
  });

  std::vector<double> repeat_means(static_cast<std::size_t>(repeats), 0.0);
  for (int r = 0; r < repeats; ++r) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += values[static_cast<std::size_t>(r) * n + i];
    repeat_means[static_cast<std::size_t>(r)] = sum / static_cast<double>(n);
  }
  EvalOutcome outcome;
  outcome.score = Score::from_repeat_means(repeat_means);
  for (const auto& f : failures) {
    if (f) outcome.failures.push_back(*f);
  }
  return outcome;
}

}  // namespace mass

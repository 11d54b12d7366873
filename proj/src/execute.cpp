#include "mass/execute.hpp"

#include <algorithm>

#include "mass/errors.hpp"
#include "mass/util.hpp"

namespace mass {

int Transcript::llm_steps() const {
  int count = 0;
  for (const auto& step : steps) {
    if (step.llm) ++count;
  }
  return count;
}

ParsedOutput parse_agent_output(AgentRole role, const std::string& raw, const Signature& signature,
                                ExtractionRule rule) {
  ParsedOutput parsed;
  const auto lines = split_lines(raw);

  // Last occurrence of each output label, scanning for "Label:" line starts.
  auto find_field = [&](const FieldSpec& field) -> std::string {
    const std::string marker = field.label() + ":";
    std::ptrdiff_t hit = -1;
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (starts_with(trim(lines[i]), marker)) hit = static_cast<std::ptrdiff_t>(i);
    }
    if (hit < 0) return "";
    std::string value = trim(trim(lines[static_cast<std::size_t>(hit)]).substr(marker.size()));
    for (std::size_t i = static_cast<std::size_t>(hit) + 1; i < lines.size(); ++i) {
      const std::string line = trim(lines[i]);
      bool is_other_label = false;
      for (const auto& other : signature.outputs) {
        if (starts_with(line, other.label() + ":")) {
          is_other_label = true;
          break;
        }
      }
      if (is_other_label) break;
      value += value.empty() ? lines[i] : "\n" + lines[i];
    }
    return trim(value);
  };

  for (const auto& field : signature.outputs) {
    std::string value = find_field(field);
    if (field.answer_bearing) {
      std::string extracted = extract_answer(raw, rule);
      if (extracted.empty()) extracted = value;
      if (extracted.empty()) parsed.answer_missing = true;
      parsed.fields[field.name] = extracted;
    } else {
      parsed.fields[field.name] = value;
    }
    if (field.name == "correctness") {
      parsed.correctness = to_lower(trim(value)).rfind("true", 0) == 0;
    }
  }
  (void)role;
  return parsed;
}

std::string majority_vote(const std::vector<std::string>& answers,
                          const std::function<std::string(const std::string&)>& normalizer) {
  if (answers.empty()) throw ParameterError("majority vote over zero answers");
  std::map<std::string, std::pair<int, std::size_t>> groups;  // norm -> (count, first index)
  for (std::size_t i = 0; i < answers.size(); ++i) {
    const std::string key = normalizer ? normalizer(answers[i]) : answers[i];
    auto it = groups.find(key);
    if (it == groups.end()) {
      groups.emplace(key, std::make_pair(1, i));
    } else {
      ++it->second.first;
    }
  }
  std::size_t best_first = 0;
  int best_count = -1;
  for (const auto& [key, value] : groups) {
    (void)key;
    const auto [count, first] = value;
    if (count > best_count || (count == best_count && first < best_first)) {
      best_count = count;
      best_first = first;
    }
  }
  return answers[best_first];
}

namespace {

// Mutable per-chain state threaded through the stages.
struct ChainState {
  std::map<std::string, std::string> env;
  std::string answer;
};

std::string format_solutions(const std::vector<std::string>& answers) {
  std::string out;
  for (std::size_t i = 0; i < answers.size(); ++i) {
    out += "Assistant " + std::to_string(i + 1) + ": " + answers[i] + "\n";
  }
  return trim(out);
}

struct Engine {
  const Workflow& workflow;
  const Example& example;
  Gateway& gateway;
  const GenParams& params;
  const CodeExecutor* executor;
  Transcript transcript;

  const PromptProgram& program(AgentRole role) const {
    auto it = workflow.prompt_bank.find(role_name(role));
    if (it == workflow.prompt_bank.end()) {
      throw ExecutionError("no prompt program for role", role_name(role));
    }
    return it->second;
  }

  // One LLM step: render, generate, parse, record.
  ParsedOutput call(AgentRole role, StagePurpose purpose, int chain, int round, long order_key,
                    const std::map<std::string, std::string>& env) {
    const PromptProgram& prog = program(role);
    std::map<std::string, std::string> inputs;
    for (const auto& field : prog.signature.inputs) {
      auto it = env.find(field.name);
      if (it == env.end()) {
        throw ExecutionError("missing input field '" + field.name + "'",
                             "chain" + std::to_string(chain) + "/" + role_name(role));
      }
      inputs[field.name] = it->second;
    }
    TranscriptStep step;
    step.order_key = order_key;
    step.agent_id = "chain" + std::to_string(chain) + "/" + role_name(role) +
                    (round > 0 ? "/r" + std::to_string(round) : "");
    step.role = role;
    step.purpose = purpose;
    step.chain = chain;
    step.round = round;
    step.inputs = inputs;
    step.prompt = render_prompt(prog, inputs);

    GenerationRequest request;
    request.prompt = step.prompt;
    request.temperature = params.temperature;
    request.max_output_tokens = params.max_output_tokens;
    request.stop_sequences = params.stop_sequences;
    request.seed_hint = params.seed_hint;
    request.tags = {example.id, role_name(role), chain, round};
    GenerationResult result;
    try {
      result = gateway.generate(request, params.phase);
    } catch (const BackendError& e) {
      throw ExecutionError(std::string("backend failure: ") + e.what(), step.agent_id);
    }
    step.response = result.text;
    step.input_tokens = result.input_tokens;
    step.output_tokens = result.output_tokens;

    ParsedOutput parsed = parse_agent_output(role, result.text, prog.signature, workflow.extraction);
    step.outputs = parsed.fields;
    step.parse_error = parsed.answer_missing;
    transcript.steps.push_back(std::move(step));
    return parsed;
  }

  std::string answer_of(const ParsedOutput& parsed, AgentRole role) const {
    const auto* field = program(role).signature.answer_field();
    if (!field) return "";
    auto it = parsed.fields.find(field->name);
    return it == parsed.fields.end() ? "" : it->second;
  }

  // A reflector only replaces the chain answer when its signature declares an
  // "answer" output (the coding reflectors do; the QA/math ones emit feedback).
  std::string proposed_fix(const ParsedOutput& parsed, AgentRole role) const {
    for (const auto& field : program(role).signature.outputs) {
      if (field.name == "answer") {
        auto it = parsed.fields.find("answer");
        return it == parsed.fields.end() ? "" : it->second;
      }
    }
    return "";
  }

  void run_tool(ChainState& state, int chain, long order_key) {
    std::string code = extract_answer(state.answer, ExtractionRule::code_fence);
    if (code.empty()) code = state.answer;
    TranscriptStep step;
    step.order_key = order_key;
    step.agent_id = "chain" + std::to_string(chain) + "/executor_tool";
    step.role = AgentRole::executor_tool;
    step.purpose = StagePurpose::tool_exec;
    step.chain = chain;
    step.llm = false;
    std::string traceback;
    if (example.tests.empty()) {
      traceback = "No test cases provided.";
    } else {
      static const CodeExecutor stub{};
      const CodeExecutor& exec = executor ? *executor : stub;
      try {
        const ExecutionOutcome outcome = exec.run(code, example.tests);
        traceback = format_traceback(outcome,
                                     example.gold.empty() ? std::nullopt
                                                          : std::optional<std::string>(example.gold),
                                     exec.traceback_cap());
      } catch (const std::exception& e) {
        traceback = std::string("execution error: ") + e.what();
        step.error = e.what();
      }
    }
    step.response = traceback;
    state.env["traceback"] = traceback;
    transcript.steps.push_back(std::move(step));
  }

  // Pre-debate stages of one chain. Returns the chain answer.
  void run_chain(ChainState& state, int chain) {
    const auto& stages = workflow.chains[static_cast<std::size_t>(chain)];
    long position = 0;
    for (const auto& stage : stages) {
      const long order_key = static_cast<long>(chain) * 1000 + position++;
      switch (stage.purpose) {
        case StagePurpose::summarize: {
          ParsedOutput parsed = call(AgentRole::summarizer, stage.purpose, chain, stage.round,
                                     order_key, state.env);
          const std::string summary = answer_of(parsed, AgentRole::summarizer);
          if (!summary.empty()) state.env["context"] = summary;
          state.env["summary"] = summary;
          break;
        }
        case StagePurpose::predict: {
          ParsedOutput parsed = call(AgentRole::predictor, stage.purpose, chain, stage.round,
                                     order_key, state.env);
          state.answer = answer_of(parsed, AgentRole::predictor);
          break;
        }
        case StagePurpose::tool_exec: {
          state.env["previous_solution"] = state.answer;
          run_tool(state, chain, order_key);
          break;
        }
        case StagePurpose::tool_review: {
          state.env["previous_solution"] = state.answer;
          state.env["text"] = state.answer;
          state.env["previous_answer"] = state.answer;
          ParsedOutput parsed = call(AgentRole::reflector, stage.purpose, chain, stage.round,
                                     order_key, state.env);
          const std::string revised = proposed_fix(parsed, AgentRole::reflector);
          if (!revised.empty()) state.answer = revised;
          update_reflection(state, parsed);
          break;
        }
        case StagePurpose::reflect: {
          state.env["text"] = state.answer;
          state.env["previous_answer"] = state.answer;
          state.env["previous_solution"] = state.answer;
          ParsedOutput parsed = call(AgentRole::reflector, stage.purpose, chain, stage.round,
                                     order_key, state.env);
          update_reflection(state, parsed);
          if (parsed.correctness) return;  // self-refine early stop
          // A coding-style reflector may propose the fix itself.
          const std::string revised = proposed_fix(parsed, AgentRole::reflector);
          if (!revised.empty()) state.answer = revised;
          break;
        }
        case StagePurpose::refine: {
          state.env["previous_answer"] = state.answer;
          state.env["previous_solution"] = state.answer;
          ParsedOutput parsed = call(AgentRole::refiner, stage.purpose, chain, stage.round,
                                     order_key, state.env);
          state.answer = answer_of(parsed, AgentRole::refiner);
          break;
        }
        case StagePurpose::debate:
          throw ExecutionError("debate steps cannot appear inside a chain", "chain");
      }
    }
  }

  void update_reflection(ChainState& state, const ParsedOutput& parsed) {
    auto feedback = parsed.fields.find("feedback");
    if (feedback != parsed.fields.end() && !feedback->second.empty()) {
      state.env["reflection"] = feedback->second;
    } else {
      auto reasoning = parsed.fields.find("reasoning");
      state.env["reflection"] = reasoning != parsed.fields.end() ? reasoning->second : "";
    }
    state.env["correctness"] = parsed.correctness ? "True" : "False";
    auto thinking = parsed.fields.find("thinking");
    if (thinking != parsed.fields.end() && !thinking->second.empty()) {
      state.env["reflection"] = state.env["reflection"].empty() ? thinking->second
                                                                : state.env["reflection"];
    }
  }
};

}  // namespace

Transcript execute_workflow(const Workflow& workflow, const Example& example, Gateway& gateway,
                            const GenParams& params, const CodeExecutor* executor) {
  Engine engine{workflow, example, gateway, params, executor, {}};
  const std::size_t n_chains = workflow.chains.size();
  std::vector<ChainState> states(n_chains);
  for (auto& state : states) {
    state.env = example.inputs;
    if (!state.env.count("context")) state.env["context"] = "";
    state.env["traceback"] = "Not executed.";
  }

  for (std::size_t c = 0; c < n_chains; ++c) {
    engine.run_chain(states[c], static_cast<int>(c));
  }

  // Debate rounds: every debator of round r sees the round r-1 snapshot.
  for (int round = 1; round <= workflow.debate_rounds; ++round) {
    std::vector<std::string> snapshot;
    snapshot.reserve(n_chains);
    for (const auto& state : states) snapshot.push_back(state.answer);
    const std::string solutions = format_solutions(snapshot);
    for (std::size_t c = 0; c < n_chains; ++c) {
      states[c].env["solutions"] = solutions;
      const long order_key = 1000000L + static_cast<long>(round) * 1000 + static_cast<long>(c);
      ParsedOutput parsed = engine.call(AgentRole::debator, StagePurpose::debate, static_cast<int>(c),
                                        round, order_key, states[c].env);
      states[c].answer = engine.answer_of(parsed, AgentRole::debator);
    }
  }

  for (auto& state : states) engine.transcript.per_chain_answers.push_back(state.answer);

  // Tail: the stage-1 debate block's shared debator; its answer is final.
  std::string tail_answer;
  bool has_tail = false;
  for (std::size_t i = 0; i < workflow.tail.size(); ++i) {
    const auto& stage = workflow.tail[i];
    std::map<std::string, std::string> env = states.empty() ? example.inputs : states[0].env;
    env["solutions"] = format_solutions(engine.transcript.per_chain_answers);
    const long order_key = 2000000L + static_cast<long>(i);
    ParsedOutput parsed = engine.call(stage.role, stage.purpose, 0, stage.round, order_key, env);
    tail_answer = engine.answer_of(parsed, stage.role);
    has_tail = true;
  }

  if (has_tail) {
    engine.transcript.final_answer = tail_answer;
  } else {
    switch (workflow.finalization) {
      case Finalization::single:
        engine.transcript.final_answer = states.empty() ? "" : states[0].answer;
        break;
      case Finalization::llm_aggregate: {
        std::map<std::string, std::string> env = states.empty() ? example.inputs : states[0].env;
        env["solutions"] = format_solutions(engine.transcript.per_chain_answers);
        ParsedOutput parsed =
            engine.call(AgentRole::aggregator, StagePurpose::debate, 0, 0, 3000000L, env);
        engine.transcript.final_answer = engine.answer_of(parsed, AgentRole::aggregator);
        break;
      }
      case Finalization::majority_vote:
        engine.transcript.final_answer =
            majority_vote(engine.transcript.per_chain_answers,
                          [](const std::string& a) { return normalize_answer(a); });
        break;
    }
  }

  std::stable_sort(engine.transcript.steps.begin(), engine.transcript.steps.end(),
                   [](const TranscriptStep& a, const TranscriptStep& b) {
                     return a.order_key < b.order_key;
                   });
  return engine.transcript;
}

}  // namespace mass

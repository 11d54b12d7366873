#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mass/code_executor.hpp"
#include "mass/gateway.hpp"
#include "mass/task_eval.hpp"
#include "mass/workflow.hpp"

namespace mass {

struct TranscriptStep {
  long order_key = 0;  // deterministic topological position
  std::string agent_id;
  AgentRole role = AgentRole::predictor;
  StagePurpose purpose = StagePurpose::predict;
  int chain = 0;
  int round = 0;
  std::string prompt;
  std::string response;
  std::map<std::string, std::string> inputs;
  std::map<std::string, std::string> outputs;
  long input_tokens = 0;
  long output_tokens = 0;
  bool llm = true;  // false for the tool executor
  bool parse_error = false;
  std::string error;
};

struct Transcript {
  std::vector<TranscriptStep> steps;
  std::string final_answer;
  std::vector<std::string> per_chain_answers;

  int llm_steps() const;
};

struct GenParams {
  double temperature = 0.7;
  int max_output_tokens = 4096;
  std::vector<std::string> stop_sequences;
  std::optional<std::int64_t> seed_hint;
  std::string phase = "run";
};

struct ParsedOutput {
  std::map<std::string, std::string> fields;
  bool answer_missing = false;
  bool correctness = false;  // reflector convenience: "True"/"False", default false
};

// Field extraction by "Label:" markers; the answer-bearing field goes through
// the task's extraction rule first (on the raw text), falling back to the
// labeled field value.
ParsedOutput parse_agent_output(AgentRole role, const std::string& raw, const Signature& signature,
                                ExtractionRule rule);

// Most frequent answer under `normalizer`; returns the earliest-submitted
// member of the winning group, ties to the lowest first-occurrence index.
std::string majority_vote(const std::vector<std::string>& answers,
                          const std::function<std::string(const std::string&)>& normalizer);

// Chains, then full-mesh debate rounds (each round a barrier), then the tail
// and finalization. LLM steps equal the workflow's static call count unless a
// reflect round short-circuits on correctness=True.
Transcript execute_workflow(const Workflow& workflow, const Example& example, Gateway& gateway,
                            const GenParams& params, const CodeExecutor* executor = nullptr);

}  // namespace mass

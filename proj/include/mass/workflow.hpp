#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "mass/prompt_program.hpp"
#include "mass/search_space.hpp"
#include "mass/task_eval.hpp"

namespace mass {

enum class StagePurpose { summarize, predict, tool_exec, tool_review, reflect, refine, debate };

struct StageStep {
  AgentRole role = AgentRole::predictor;
  StagePurpose purpose = StagePurpose::predict;
  int round = 0;  // 1-based reflect/debate round; 0 otherwise
};

enum class Finalization { single, llm_aggregate, majority_vote };

std::string finalization_name(Finalization f);
Finalization finalization_from_name(const std::string& name);

// A fully constructed multi-agent program. All chains share one stage
// structure; debate rounds are full-mesh; `tail` holds the stage-1 debate
// block's single shared debator (its answer is final when present).
struct Workflow {
  TopologyConfig config;
  std::vector<std::vector<StageStep>> chains;
  int debate_rounds = 0;
  std::vector<StageStep> tail;
  Finalization finalization = Finalization::single;
  std::map<std::string, PromptProgram> prompt_bank;  // keyed by role name
  std::set<std::string> frozen_roles;                // excluded from optimization
  ExtractionRule extraction = ExtractionRule::answer_field;
  bool numeric_answers = false;

  // Static LLM call count (no early stop): chain steps excluding the tool
  // executor, plus debate rounds, plus the aggregator when used.
  int llm_call_count() const;

  std::vector<std::string> roles_present() const;  // LLM roles, sorted

  nlohmann::json to_json() const;                       // schema mass-workflow/1
  static Workflow from_json(const nlohmann::json& doc);
  std::string serialize() const;                        // canonical bytes
  std::string digest() const;
};

// General construction rule per chain: N_s summarizers, one predictor, the
// tool executor + traceback reflector when N_t = 1, then N_r reflect rounds
// (reflector -> refiner); N_d full-mesh debate rounds follow; finalization is
// an LLM aggregator only when N_a > 1 and there is no debate, a majority
// vote after debate with N_a > 1, and pass-through otherwise.
Workflow build_workflow(const TopologyConfig& config, const SearchSpace& space,
                        const std::map<std::string, PromptProgram>& prompt_bank,
                        ExtractionRule extraction = ExtractionRule::answer_field);

// Table 6 minimal blocks, with the predictor frozen to the warmed program:
//   summarize: 1 summarizer + 1 predictor
//   aggregate: 3 predictors + 1 aggregator
//   reflect:   1 predictor + 1 reflector + 1 refiner
//   debate:    2 predictors + 1 debator (debator output is final)
//   execute:   1 predictor + executor tool + 1 reflector
Workflow build_stage1_block(DimensionKind kind, const PromptProgram& frozen_predictor,
                            const std::map<std::string, PromptProgram>& block_prompts,
                            ExtractionRule extraction = ExtractionRule::answer_field);

}  // namespace mass

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mass/execute.hpp"
#include "mass/task_eval.hpp"
#include "mass/workflow.hpp"

namespace mass {

struct OptimizerConfig {
  int max_demos = 3;
  int num_instruction_candidates = 10;  // M: proposer calls per target
  int rounds = 10;                      // K: candidate evaluations per run
  int eval_repeats = 1;
  std::string minibatch = "full_validation";
  std::vector<std::string> proposer_tips;  // empty = default_proposer_tips()
  std::int64_t base_seed = 0;
  int parallelism = 1;
  bool rebootstrap_through_workflow = false;

  nlohmann::json to_json() const;
  static OptimizerConfig from_json(const nlohmann::json& doc);
};

std::vector<std::string> default_proposer_tips();

// Per-target candidate pools: instruction 0 is always the basic/current one.
struct TargetPools {
  std::vector<std::string> instructions;
  std::vector<Demonstration> demos;
  int incumbent_demo_count = 0;

  nlohmann::json to_json() const;
  static TargetPools from_json(const nlohmann::json& doc);
};

struct OptimizationRecord {
  long candidate = 0;  // canonical grid rank; 0 = incumbent
  std::string digest;
  Score score;
};

struct OptimizationResult {
  std::map<std::string, PromptProgram> programs;  // optimized targets installed
  Score best_score;
  long best_candidate = 0;
  std::vector<OptimizationRecord> evaluations;
  std::map<std::string, TargetPools> pools;
};

// Seam between the search loop and E_D; tests may inject synthetic fitness.
class CandidateEvaluator {
 public:
  virtual ~CandidateEvaluator() = default;
  virtual Score evaluate(const Workflow& candidate, long rank) = 0;
};

// Production evaluator: evaluate_workflow on the validation split, phase
// label "<prefix>/eval/cand-<rank>", identical seeds for every candidate.
class ValidationEvaluator : public CandidateEvaluator {
 public:
  ValidationEvaluator(const TaskSpec& task, Gateway& gateway, int repeats, int parallelism,
                      std::int64_t base_seed, std::string phase_prefix,
                      const CodeExecutor* executor = nullptr);
  Score evaluate(const Workflow& candidate, long rank) override;

 private:
  const TaskSpec& task_;
  Gateway& gateway_;
  int repeats_;
  int parallelism_;
  std::int64_t base_seed_;
  std::string phase_prefix_;
  const CodeExecutor* executor_;
};

// Demonstrations harvested from the program's own correct validation traces
// (metric 1.0, or >= the F1 floor), at most max_demos per target, one pass.
std::map<std::string, std::vector<Demonstration>> bootstrap_demos(
    const Workflow& program, const TaskSpec& task, Gateway& gateway, const OptimizerConfig& cfg,
    const std::vector<std::string>& targets, const std::string& phase,
    const CodeExecutor* executor = nullptr);

// One proposer call over <= 10 sampled examples; cached per task name.
std::string summarize_dataset(const TaskSpec& task, Gateway& gateway, const OptimizerConfig& cfg,
                              const std::string& phase,
                              std::map<std::string, std::string>* cache = nullptr);

struct ProposalContext {
  std::string dataset_summary;
  std::vector<Demonstration> demos;
  const Signature* signature = nullptr;
  std::string basic_instruction;
  std::string tip;
};

// App-E layout: summary, TASK DEMO(S), BASIC INSTRUCTION, TIP, ending with
// the PROPOSED INSTRUCTION marker for the model to complete.
std::string render_meta_prompt(const ProposalContext& ctx);

// Text after the final "PROPOSED INSTRUCTION:" marker (whole text when the
// marker is absent), unwrapped from a single ``` fence pair.
std::string parse_proposed_instruction(const std::string& raw);

// n proposer calls for one target; candidate 0 is always the basic
// instruction; deduplicated on whitespace-normalized text.
std::vector<std::string> propose_instructions(const std::string& target_role, const Signature& signature,
                                              const std::string& basic_instruction,
                                              const std::vector<Demonstration>& demos,
                                              const std::string& dataset_summary, int n,
                                              Gateway& gateway, const OptimizerConfig& cfg,
                                              const std::string& phase);

// MIPRO-style joint (instruction, demo-set) search over the block's
// optimizable targets: K rounds, candidate 0 (the incumbent) first, the rest
// drawn uniformly at random without replacement from the canonical grid.
OptimizationResult optimize_block(
    const Workflow& block, const TaskSpec& task, Gateway& gateway, const OptimizerConfig& cfg,
    const std::string& phase_prefix, CandidateEvaluator* evaluator_override = nullptr,
    const std::map<std::string, std::vector<Demonstration>>* reuse_pools = nullptr,
    std::map<std::string, std::string>* summary_cache = nullptr, const CodeExecutor* executor = nullptr);

// Same search over every role of a full workflow, reusing stage-1 demo pools
// unless cfg.rebootstrap_through_workflow is set. The incumbent prompts are
// candidate 0, so the result never scores below them on the same seeds.
OptimizationResult optimize_workflow_prompts(
    const Workflow& workflow, const TaskSpec& task, Gateway& gateway, const OptimizerConfig& cfg,
    const std::string& phase_prefix, const std::map<std::string, std::vector<Demonstration>>* stage1_pools,
    CandidateEvaluator* evaluator_override = nullptr,
    std::map<std::string, std::string>* summary_cache = nullptr, const CodeExecutor* executor = nullptr);

}  // namespace mass

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mass/prompt_optimizer.hpp"
#include "mass/search_space.hpp"
#include "mass/task_eval.hpp"
#include "mass/workflow.hpp"

namespace mass {

struct MassConfig {
  double softmax_temperature = 0.05;
  int num_topology_candidates = 10;  // N
  int budget = 10;                   // B
  int eval_repeats = 3;              // stage-2 validation repeats
  OptimizerConfig optimizer;
  std::int64_t base_seed = 0;
  int parallelism = 1;
  int sample_max_attempts = 1000;
  int duplicate_redraws = 20;

  nlohmann::json to_json() const;
  static MassConfig from_json(const nlohmann::json& doc);
};

struct TrajectoryRecord {
  std::string stage;  // 1PO | 2TO | 3PO
  long candidate = 0;
  std::string digest;
  std::string label;
  double mean = 0.0;
  double std_dev = 0.0;
  long calls = 0;
  long tokens_in = 0;
  long tokens_out = 0;
  double wall_ms = 0.0;

  nlohmann::json to_json() const;
  static TrajectoryRecord from_json(const nlohmann::json& doc);
};

struct StageReport {
  std::string stage;
  Score best_score;
  long best_candidate = 0;
  std::vector<TrajectoryRecord> trajectory;

  nlohmann::json to_json() const;
  static StageReport from_json(const nlohmann::json& doc);
};

struct Stage1Result {
  std::map<std::string, PromptProgram> prompt_bank;
  InfluenceTable influences;
  std::map<std::string, std::vector<Demonstration>> demo_pools;
  std::vector<int> block_sizes;  // a0 first, then one per dimension block
  StageReport report;

  nlohmann::json to_json() const;
  static Stage1Result from_json(const nlohmann::json& doc);
};

struct Stage2Result {
  TopologyConfig best_config;
  Workflow best_workflow;
  std::vector<int> candidate_sizes;  // N(W_n) per evaluated candidate
  StageReport report;

  nlohmann::json to_json() const;
  static Stage2Result from_json(const nlohmann::json& doc);
};

struct Stage3Result {
  Workflow final_workflow;
  StageReport report;

  nlohmann::json to_json() const;
  static Stage3Result from_json(const nlohmann::json& doc);
};

struct CostEstimate {
  long c_1po = 0;
  long c_2to = 0;
  long c_3po = 0;

  nlohmann::json to_json() const;
};

// App. C: C(1PO) = sum_j N(a_j)*M*K, C(2TO) = sum_n N(W_n),
// C(3PO) = N(W*)*M*K, with M = instruction candidates and K = rounds.
CostEstimate estimate_cost(const MassConfig& cfg, const std::vector<int>& block_sizes,
                           const std::vector<int>& candidate_sizes, int final_size);

// Optional synthetic-evaluator seam for the stage drivers (tests).
using EvaluatorFactory =
    std::function<std::unique_ptr<CandidateEvaluator>(const std::string& phase_prefix)>;

// Alg. 1 lines 3-8: warm up a0, optimize each Table-6 block against the
// frozen a0*, record influences I = E(a_i*) / max(E(a0*), 1/(4|val|)).
Stage1Result run_stage1(const SearchSpace& space, const TaskSpec& task, Gateway& gateway,
                        const MassConfig& cfg, const EvaluatorFactory& evaluator_factory = {},
                        const CodeExecutor* executor = nullptr);

// Alg. 1 lines 9-17: softmax-weighted pruning, budget-constrained rejection
// sampling, N candidate evaluations, argmax by mean (ties to lower id).
Stage2Result run_stage2(const SearchSpace& space, const Stage1Result& stage1, const TaskSpec& task,
                        Gateway& gateway, const MassConfig& cfg,
                        const CodeExecutor* executor = nullptr);

// Alg. 1 lines 18-19: workflow-level prompt optimization over the incumbent.
Stage3Result run_stage3(const Stage2Result& stage2, const Stage1Result& stage1, const TaskSpec& task,
                        Gateway& gateway, const MassConfig& cfg,
                        const EvaluatorFactory& evaluator_factory = {},
                        const CodeExecutor* executor = nullptr);

class RunDir;

struct MassResult {
  Workflow final_workflow;
  Stage1Result stage1;
  Stage2Result stage2;
  Stage3Result stage3;
  CostEstimate estimate;
};

// Full pipeline with per-stage checkpointing through an optional run
// directory; completed stages are loaded, not recomputed.
MassResult run_mass(const SearchSpace& space, const TaskSpec& task, Gateway& gateway,
                    const MassConfig& cfg, RunDir* run_dir = nullptr,
                    const CodeExecutor* executor = nullptr);

}  // namespace mass

#include "mass/prompt_optimizer.hpp"

#include <algorithm>
#include <iostream>
#include <set>

#include "mass/errors.hpp"
#include "mass/rng.hpp"
#include "mass/util.hpp"

namespace mass {

std::vector<std::string> default_proposer_tips() {
  return {
      "Keep the instruction clear and concise.",
      "Don't be afraid to be creative when creating the new instruction!",
      "The instruction should include a high stakes scenario in which the LM must solve the task!",
  };
}

nlohmann::json OptimizerConfig::to_json() const {
  return {{"max_demos", max_demos},
          {"num_instruction_candidates", num_instruction_candidates},
          {"rounds", rounds},
          {"eval_repeats", eval_repeats},
          {"minibatch", minibatch},
          {"proposer_tips", proposer_tips},
          {"base_seed", base_seed},
          {"parallelism", parallelism},
          {"rebootstrap_through_workflow", rebootstrap_through_workflow}};
}

OptimizerConfig OptimizerConfig::from_json(const nlohmann::json& doc) {
  OptimizerConfig cfg;
  cfg.max_demos = doc.value("max_demos", cfg.max_demos);
  cfg.num_instruction_candidates = doc.value("num_instruction_candidates", cfg.num_instruction_candidates);
  cfg.rounds = doc.value("rounds", cfg.rounds);
  cfg.eval_repeats = doc.value("eval_repeats", cfg.eval_repeats);
  cfg.minibatch = doc.value("minibatch", cfg.minibatch);
  cfg.proposer_tips = doc.value("proposer_tips", cfg.proposer_tips);
  cfg.base_seed = doc.value("base_seed", cfg.base_seed);
  cfg.parallelism = doc.value("parallelism", cfg.parallelism);
  cfg.rebootstrap_through_workflow =
      doc.value("rebootstrap_through_workflow", cfg.rebootstrap_through_workflow);
  return cfg;
}

nlohmann::json TargetPools::to_json() const {
  nlohmann::json demo_arr = nlohmann::json::array();
  for (const auto& d : demos) demo_arr.push_back(d.to_json());
  return {{"instructions", instructions},
          {"demos", demo_arr},
          {"incumbent_demo_count", incumbent_demo_count}};
}

TargetPools TargetPools::from_json(const nlohmann::json& doc) {
  TargetPools pools;
  pools.instructions = doc.at("instructions").get<std::vector<std::string>>();
  for (const auto& d : doc.at("demos")) pools.demos.push_back(Demonstration::from_json(d));
  pools.incumbent_demo_count = doc.value("incumbent_demo_count", 0);
  return pools;
}

ValidationEvaluator::ValidationEvaluator(const TaskSpec& task, Gateway& gateway, int repeats,
                                         int parallelism, std::int64_t base_seed,
                                         std::string phase_prefix, const CodeExecutor* executor)
    : task_(task),
      gateway_(gateway),
      repeats_(repeats),
      parallelism_(parallelism),
      base_seed_(base_seed),
      phase_prefix_(std::move(phase_prefix)),
      executor_(executor) {}

Score ValidationEvaluator::evaluate(const Workflow& candidate, long rank) {
  const std::string phase = phase_prefix_ + "/eval/cand-" + std::to_string(rank);
  return evaluate_workflow(candidate, task_, task_.validation, gateway_, repeats_, parallelism_,
                           base_seed_, phase, executor_)
      .score;
}

static double metric_value(const TaskSpec& task, const std::string& final_answer, const Example& ex,
                           const CodeExecutor* executor) {
  switch (task.metric) {
    case MetricKind::exact_match:
      return exact_match(final_answer, ex.gold, task.numeric_mode);
    case MetricKind::token_f1:
      return token_f1(final_answer, ex.gold);
    case MetricKind::pass_at_1: {
      static const CodeExecutor stub{};
      return pass_at_1(final_answer, ex.tests, executor ? *executor : stub);
    }
  }
  return 0.0;
}

std::map<std::string, std::vector<Demonstration>> bootstrap_demos(
    const Workflow& program, const TaskSpec& task, Gateway& gateway, const OptimizerConfig& cfg,
    const std::vector<std::string>& targets, const std::string& phase, const CodeExecutor* executor) {
  if (task.validation.empty()) throw ParameterError("validation split is empty");
  std::map<std::string, std::vector<Demonstration>> pools;
  for (const auto& t : targets) pools[t];
  const double threshold = task.metric == MetricKind::token_f1 ? task.f1_demo_floor : 1.0;

  for (std::size_t index = 0; index < task.validation.size(); ++index) {
    bool saturated = true;
    for (const auto& t : targets) {
      if (static_cast<int>(pools[t].size()) < cfg.max_demos) saturated = false;
    }
    if (saturated) break;

    const Example& ex = task.validation[index];
    GenParams params;
    params.seed_hint = static_cast<std::int64_t>(derive_seed(
        static_cast<std::uint64_t>(cfg.base_seed), "bootstrap", static_cast<std::uint64_t>(index)));
    params.phase = phase;
    Transcript transcript;
    try {
      transcript = execute_workflow(program, ex, gateway, params, executor);
    } catch (const std::exception&) {
      continue;  // failed traces contribute nothing
    }
    if (metric_value(task, transcript.final_answer, ex, executor) < threshold) continue;
    for (const auto& t : targets) {
      auto& pool = pools[t];
      if (static_cast<int>(pool.size()) >= cfg.max_demos) continue;
      for (const auto& step : transcript.steps) {
        if (role_name(step.role) != t || step.parse_error) continue;
        Demonstration demo;
        demo.inputs = step.inputs;
        demo.outputs = step.outputs;
        demo.source_example_id = ex.id;
        pool.push_back(std::move(demo));
        break;  // first step of this role in the trace
      }
    }
  }
  return pools;
}

std::string summarize_dataset(const TaskSpec& task, Gateway& gateway, const OptimizerConfig& cfg,
                              const std::string& phase, std::map<std::string, std::string>* cache) {
  if (cache) {
    auto it = cache->find(task.name);
    if (it != cache->end()) return it->second;
  }
  if (task.validation.empty()) return "";
  RngStream rng(derive_seed(static_cast<std::uint64_t>(cfg.base_seed), "summary"));
  std::vector<std::size_t> indices(task.validation.size());
  for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
  // Seed-deterministic sample of at most 10 examples.
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::size_t j = i + rng.uniform_index(indices.size() - i);
    std::swap(indices[i], indices[j]);
  }
  if (indices.size() > 10) indices.resize(10);

  std::string prompt =
      "Below are sampled examples from a dataset. Write a 2-3 sentence characterization of the "
      "dataset: its domain, the style of questions, and what a good answer looks like.\n";
  for (std::size_t i : indices) {
    const Example& ex = task.validation[i];
    prompt += "\nQuestion: " + ex.inputs.at("question") + "\n";
    if (ex.inputs.count("context")) prompt += "Context: " + ex.inputs.at("context") + "\n";
    prompt += "Answer: " + ex.gold + "\n";
  }
  prompt += "\nSummary:";

  GenerationRequest request;
  request.prompt = prompt;
  request.tags = {"summary", "proposer", 0, 0};
  std::string summary;
  try {
    summary = trim(gateway.generate(request, phase).text);
  } catch (const std::exception&) {
    summary.clear();  // meta-prompt simply omits the section
  }
  if (cache) (*cache)[task.name] = summary;
  return summary;
}

std::string render_meta_prompt(const ProposalContext& ctx) {
  std::string out;
  if (!ctx.dataset_summary.empty()) out += ctx.dataset_summary + "\n\n";
  out += "TASK DEMO(S):\n";
  if (ctx.demos.empty() || !ctx.signature) {
    out += "None.\n";
  } else {
    for (const auto& demo : ctx.demos) {
      for (const auto& field : ctx.signature->inputs) {
        auto it = demo.inputs.find(field.name);
        if (it != demo.inputs.end()) out += field.label() + ": " + it->second + "\n";
      }
      for (const auto& field : ctx.signature->outputs) {
        auto it = demo.outputs.find(field.name);
        if (it != demo.outputs.end()) out += field.label() + ": " + it->second + "\n";
      }
      out += "\n";
    }
  }
  out += "\nBASIC INSTRUCTION: " + ctx.basic_instruction + "\n";
  out += "\nTIP: " + ctx.tip + "\n";
  out += "\nPROPOSED INSTRUCTION:";
  return out;
}

std::string parse_proposed_instruction(const std::string& raw) {
  const std::string marker = "PROPOSED INSTRUCTION:";
  std::size_t pos = raw.rfind(marker);
  std::string text = pos == std::string::npos ? raw : raw.substr(pos + marker.size());
  text = trim(text);
  if (starts_with(text, "```")) {
    std::size_t first_nl = text.find('\n');
    std::size_t last_fence = text.rfind("```");
    if (first_nl != std::string::npos && last_fence > first_nl) {
      text = trim(text.substr(first_nl + 1, last_fence - first_nl - 1));
    }
  }
  return text;
}

std::vector<std::string> propose_instructions(const std::string& target_role, const Signature& signature,
                                              const std::string& basic_instruction,
                                              const std::vector<Demonstration>& demos,
                                              const std::string& dataset_summary, int n,
                                              Gateway& gateway, const OptimizerConfig& cfg,
                                              const std::string& phase) {
  if (basic_instruction.empty()) throw ParameterError("basic instruction must be non-empty");
  std::vector<std::string> pool = {basic_instruction};
  std::set<std::string> seen = {collapse_whitespace(basic_instruction)};
  const std::vector<std::string> tips =
      cfg.proposer_tips.empty() ? default_proposer_tips() : cfg.proposer_tips;
  for (int i = 0; i < n; ++i) {
    ProposalContext ctx;
    ctx.dataset_summary = dataset_summary;
    ctx.demos = demos;
    ctx.signature = &signature;
    ctx.basic_instruction = basic_instruction;
    ctx.tip = tips[static_cast<std::size_t>(i) % tips.size()];
    GenerationRequest request;
    request.prompt = render_meta_prompt(ctx);
    request.tags = {"propose/" + target_role, "proposer", 0, i};
    request.seed_hint = static_cast<std::int64_t>(derive_seed(
        static_cast<std::uint64_t>(cfg.base_seed), "propose/" + target_role, static_cast<std::uint64_t>(i)));
    std::string proposal;
    try {
      proposal = parse_proposed_instruction(gateway.generate(request, phase).text);
    } catch (const std::exception& e) {
      std::cerr << "[mass] warning: proposer call " << i << " for " << target_role
                << " failed: " << e.what() << "\n";
      continue;
    }
    if (proposal.empty()) continue;
    if (seen.insert(collapse_whitespace(proposal)).second) pool.push_back(proposal);
  }
  return pool;
}

namespace {

struct GridTarget {
  std::string role;
  TargetPools pools;
  long radix() const {
    return static_cast<long>(pools.instructions.size()) *
           static_cast<long>(pools.demos.size() + 1);
  }
};

struct Grid {
  std::vector<GridTarget> targets;
  long size = 1;
  long incumbent_code = 0;

  // code <-> per-target (instruction, demo_count), target-major mixed radix
  std::vector<CandidateAssignment> decode(long code) const {
    std::vector<CandidateAssignment> out(targets.size());
    for (std::size_t t = targets.size(); t-- > 0;) {
      const long r = targets[t].radix();
      const long v = code % r;
      code /= r;
      const long demo_options = static_cast<long>(targets[t].pools.demos.size()) + 1;
      out[t].instruction = static_cast<int>(v / demo_options);
      out[t].demo_count = static_cast<int>(v % demo_options);
    }
    return out;
  }

  long code_of(const std::vector<CandidateAssignment>& assignment) const {
    long code = 0;
    for (std::size_t t = 0; t < targets.size(); ++t) {
      const long demo_options = static_cast<long>(targets[t].pools.demos.size()) + 1;
      code = code * targets[t].radix() +
             static_cast<long>(assignment[t].instruction) * demo_options + assignment[t].demo_count;
    }
    return code;
  }

  // Rank 0 is the incumbent; other codes keep their enumeration order.
  long rank_of_code(long code) const {
    if (code == incumbent_code) return 0;
    return code < incumbent_code ? code + 1 : code;
  }
  long code_of_rank(long rank) const {
    if (rank == 0) return incumbent_code;
    return rank <= incumbent_code ? rank - 1 : rank;
  }
};

std::string assignment_digest(const Grid& grid, const std::vector<CandidateAssignment>& assignment) {
  nlohmann::json doc;
  for (std::size_t t = 0; t < grid.targets.size(); ++t) {
    doc[grid.targets[t].role] = {{"instruction", assignment[t].instruction},
                                 {"demos", assignment[t].demo_count}};
  }
  return content_digest(doc.dump());
}

Workflow install_assignment(const Workflow& base, const Grid& grid,
                            const std::vector<CandidateAssignment>& assignment) {
  Workflow candidate = base;
  for (std::size_t t = 0; t < grid.targets.size(); ++t) {
    const auto& target = grid.targets[t];
    PromptProgram program = base.prompt_bank.at(target.role);
    program.instruction = target.pools.instructions[static_cast<std::size_t>(assignment[t].instruction)];
    program.demos.assign(target.pools.demos.begin(),
                         target.pools.demos.begin() + assignment[t].demo_count);
    candidate.prompt_bank[target.role] = std::move(program);
  }
  return candidate;
}

OptimizationResult optimize_over_targets(
    const Workflow& base, const std::vector<std::string>& target_roles, const TaskSpec& task,
    Gateway& gateway, const OptimizerConfig& cfg, const std::string& phase_prefix,
    CandidateEvaluator* evaluator_override,
    const std::map<std::string, std::vector<Demonstration>>* reuse_pools,
    std::map<std::string, std::string>* summary_cache, const CodeExecutor* executor) {
  if (task.validation.empty()) throw ParameterError("validation split is empty");
  if (target_roles.empty()) throw ParameterError("no optimizable targets");
  if (cfg.rounds < 1) throw ParameterError("optimizer rounds must be >= 1");

  // Demo pools: reuse when provided, otherwise bootstrap through the program.
  std::map<std::string, std::vector<Demonstration>> pools;
  std::vector<std::string> to_bootstrap;
  for (const auto& role : target_roles) {
    if (reuse_pools && !cfg.rebootstrap_through_workflow) {
      auto it = reuse_pools->find(role);
      if (it != reuse_pools->end()) {
        pools[role] = it->second;
        continue;
      }
      pools[role] = base.prompt_bank.at(role).demos;  // current demos as the pool
      continue;
    }
    to_bootstrap.push_back(role);
  }
  if (!to_bootstrap.empty()) {
    auto fresh = bootstrap_demos(base, task, gateway, cfg, to_bootstrap, phase_prefix + "/bootstrap",
                                 executor);
    for (auto& [role, pool] : fresh) pools[role] = std::move(pool);
  }

  const std::string summary =
      summarize_dataset(task, gateway, cfg, phase_prefix + "/propose", summary_cache);

  Grid grid;
  std::vector<CandidateAssignment> incumbent;
  for (const auto& role : target_roles) {
    const PromptProgram& current = base.prompt_bank.at(role);
    GridTarget target;
    target.role = role;
    target.pools.demos = pools[role];
    target.pools.instructions =
        propose_instructions(role, current.signature, current.instruction, target.pools.demos, summary,
                             cfg.num_instruction_candidates, gateway, cfg, phase_prefix + "/propose");
    // The incumbent demo set must be a prefix of the pool; extend if needed.
    int incumbent_demos = static_cast<int>(current.demos.size());
    bool is_prefix = incumbent_demos <= static_cast<int>(target.pools.demos.size());
    for (int i = 0; is_prefix && i < incumbent_demos; ++i) {
      const auto& a = current.demos[static_cast<std::size_t>(i)];
      const auto& b = target.pools.demos[static_cast<std::size_t>(i)];
      is_prefix = a.inputs == b.inputs && a.outputs == b.outputs;
    }
    if (!is_prefix) {
      target.pools.demos = current.demos;
    }
    target.pools.incumbent_demo_count = incumbent_demos;
    CandidateAssignment a;
    a.instruction = 0;
    a.demo_count = incumbent_demos;
    incumbent.push_back(a);
    grid.targets.push_back(std::move(target));
  }
  grid.size = 1;
  for (const auto& t : grid.targets) {
    grid.size *= t.radix();
    if (grid.size > (1L << 50)) break;  // saturate; draws stay well below this
  }
  grid.incumbent_code = grid.code_of(incumbent);

  RngStream rng(derive_seed(static_cast<std::uint64_t>(cfg.base_seed), "optimize/" + phase_prefix));
  std::set<long> seen;
  OptimizationResult result;
  result.best_score.mean = -1.0;

  for (int round = 0; round < cfg.rounds; ++round) {
    if (static_cast<long>(seen.size()) >= grid.size) break;  // grid exhausted
    long rank;
    if (round == 0) {
      rank = 0;  // the incumbent is always measured first
    } else {
      do {
        rank = static_cast<long>(rng.uniform_index(static_cast<std::size_t>(grid.size)));
      } while (seen.count(rank));
    }
    seen.insert(rank);
    const auto assignment = grid.decode(grid.code_of_rank(rank));
    Workflow candidate = install_assignment(base, grid, assignment);
    const Score score = evaluator_override
                            ? evaluator_override->evaluate(candidate, rank)
                            : ValidationEvaluator(task, gateway, cfg.eval_repeats, cfg.parallelism,
                                                  cfg.base_seed, phase_prefix, executor)
                                  .evaluate(candidate, rank);
    result.evaluations.push_back({rank, assignment_digest(grid, assignment), score});
    if (score.mean > result.best_score.mean ||
        (score.mean == result.best_score.mean && rank < result.best_candidate)) {
      result.best_score = score;
      result.best_candidate = rank;
    }
  }

  const auto best_assignment = grid.decode(grid.code_of_rank(result.best_candidate));
  const Workflow best = install_assignment(base, grid, best_assignment);
  result.programs = best.prompt_bank;
  for (auto& target : grid.targets) result.pools[target.role] = std::move(target.pools);
  return result;
}

std::vector<std::string> optimizable_targets(const Workflow& workflow) {
  std::vector<std::string> targets;
  for (const auto& role : workflow.roles_present()) {
    if (!workflow.frozen_roles.count(role)) targets.push_back(role);
  }
  return targets;
}

}  // namespace

OptimizationResult optimize_block(const Workflow& block, const TaskSpec& task, Gateway& gateway,
                                  const OptimizerConfig& cfg, const std::string& phase_prefix,
                                  CandidateEvaluator* evaluator_override,
                                  const std::map<std::string, std::vector<Demonstration>>* reuse_pools,
                                  std::map<std::string, std::string>* summary_cache,
                                  const CodeExecutor* executor) {
  return optimize_over_targets(block, optimizable_targets(block), task, gateway, cfg, phase_prefix,
                               evaluator_override, reuse_pools, summary_cache, executor);
}

OptimizationResult optimize_workflow_prompts(
    const Workflow& workflow, const TaskSpec& task, Gateway& gateway, const OptimizerConfig& cfg,
    const std::string& phase_prefix, const std::map<std::string, std::vector<Demonstration>>* stage1_pools,
    CandidateEvaluator* evaluator_override, std::map<std::string, std::string>* summary_cache,
    const CodeExecutor* executor) {
  Workflow open = workflow;
  open.frozen_roles.clear();  // stage 3 optimizes every role jointly
  return optimize_over_targets(open, optimizable_targets(open), task, gateway, cfg, phase_prefix,
                               evaluator_override, stage1_pools, summary_cache, executor);
}

}  // namespace mass

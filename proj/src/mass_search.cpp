#include "mass/mass_search.hpp"

#include <chrono>
#include <iostream>
#include <set>

#include "mass/errors.hpp"
#include "mass/gateway.hpp"
#include "mass/persistence.hpp"
#include "mass/rng.hpp"
#include "mass/util.hpp"

namespace mass {

nlohmann::json MassConfig::to_json() const {
  return {{"softmax_temperature", softmax_temperature},
          {"num_topology_candidates", num_topology_candidates},
          {"budget", budget},
          {"eval_repeats", eval_repeats},
          {"optimizer", optimizer.to_json()},
          {"base_seed", base_seed},
          {"parallelism", parallelism},
          {"sample_max_attempts", sample_max_attempts},
          {"duplicate_redraws", duplicate_redraws}};
}

MassConfig MassConfig::from_json(const nlohmann::json& doc) {
  MassConfig cfg;
  cfg.softmax_temperature = doc.value("softmax_temperature", cfg.softmax_temperature);
  cfg.num_topology_candidates = doc.value("num_topology_candidates", cfg.num_topology_candidates);
  cfg.budget = doc.value("budget", cfg.budget);
  cfg.eval_repeats = doc.value("eval_repeats", cfg.eval_repeats);
  if (doc.contains("optimizer")) cfg.optimizer = OptimizerConfig::from_json(doc.at("optimizer"));
  cfg.base_seed = doc.value("base_seed", cfg.base_seed);
  cfg.parallelism = doc.value("parallelism", cfg.parallelism);
  cfg.sample_max_attempts = doc.value("sample_max_attempts", cfg.sample_max_attempts);
  cfg.duplicate_redraws = doc.value("duplicate_redraws", cfg.duplicate_redraws);
  return cfg;
}

nlohmann::json TrajectoryRecord::to_json() const {
  return {{"stage", stage},     {"candidate", candidate}, {"digest", digest},
          {"label", label},     {"mean", mean},           {"std", std_dev},
          {"calls", calls},     {"tokens_in", tokens_in}, {"tokens_out", tokens_out},
          {"wall_ms", wall_ms}};
}

TrajectoryRecord TrajectoryRecord::from_json(const nlohmann::json& doc) {
  TrajectoryRecord rec;
  rec.stage = doc.at("stage").get<std::string>();
  rec.candidate = doc.at("candidate").get<long>();
  rec.digest = doc.at("digest").get<std::string>();
  rec.label = doc.value("label", "");
  rec.mean = doc.at("mean").get<double>();
  rec.std_dev = doc.at("std").get<double>();
  rec.calls = doc.value("calls", 0L);
  rec.tokens_in = doc.value("tokens_in", 0L);
  rec.tokens_out = doc.value("tokens_out", 0L);
  rec.wall_ms = doc.value("wall_ms", 0.0);
  return rec;
}

nlohmann::json StageReport::to_json() const {
  nlohmann::json records = nlohmann::json::array();
  for (const auto& r : trajectory) records.push_back(r.to_json());
  return {{"stage", stage},
          {"best_score", best_score.to_json()},
          {"best_candidate", best_candidate},
          {"trajectory", records}};
}

StageReport StageReport::from_json(const nlohmann::json& doc) {
  StageReport report;
  report.stage = doc.at("stage").get<std::string>();
  report.best_score = Score::from_json(doc.at("best_score"));
  report.best_candidate = doc.at("best_candidate").get<long>();
  for (const auto& r : doc.at("trajectory")) report.trajectory.push_back(TrajectoryRecord::from_json(r));
  return report;
}

nlohmann::json Stage1Result::to_json() const {
  nlohmann::json bank;
  for (const auto& [role, program] : prompt_bank) bank[role] = program.to_json();
  nlohmann::json pools;
  for (const auto& [role, pool] : demo_pools) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& demo : pool) arr.push_back(demo.to_json());
    pools[role] = arr;
  }
  return {{"schema", "mass-stage1/1"},
          {"prompt_bank", bank},
          {"influences", influences.to_json()},
          {"demo_pools", pools},
          {"block_sizes", block_sizes},
          {"report", report.to_json()}};
}

Stage1Result Stage1Result::from_json(const nlohmann::json& doc) {
  if (doc.value("schema", "") != "mass-stage1/1") throw SchemaError("bad stage1 checkpoint schema");
  Stage1Result result;
  for (const auto& [role, program] : doc.at("prompt_bank").items()) {
    result.prompt_bank[role] = PromptProgram::from_json(program);
  }
  result.influences = InfluenceTable::from_json(doc.at("influences"));
  for (const auto& [role, arr] : doc.at("demo_pools").items()) {
    for (const auto& demo : arr) result.demo_pools[role].push_back(Demonstration::from_json(demo));
  }
  result.block_sizes = doc.at("block_sizes").get<std::vector<int>>();
  result.report = StageReport::from_json(doc.at("report"));
  return result;
}

nlohmann::json Stage2Result::to_json() const {
  return {{"schema", "mass-stage2/1"},
          {"best_config", best_config.to_json()},
          {"best_workflow", best_workflow.to_json()},
          {"candidate_sizes", candidate_sizes},
          {"report", report.to_json()}};
}

Stage2Result Stage2Result::from_json(const nlohmann::json& doc) {
  if (doc.value("schema", "") != "mass-stage2/1") throw SchemaError("bad stage2 checkpoint schema");
  Stage2Result result;
  result.best_config = TopologyConfig::from_json(doc.at("best_config"));
  result.best_workflow = Workflow::from_json(doc.at("best_workflow"));
  result.candidate_sizes = doc.at("candidate_sizes").get<std::vector<int>>();
  result.report = StageReport::from_json(doc.at("report"));
  return result;
}

nlohmann::json Stage3Result::to_json() const {
  return {{"schema", "mass-stage3/1"},
          {"final_workflow", final_workflow.to_json()},
          {"report", report.to_json()}};
}

Stage3Result Stage3Result::from_json(const nlohmann::json& doc) {
  if (doc.value("schema", "") != "mass-stage3/1") throw SchemaError("bad stage3 checkpoint schema");
  Stage3Result result;
  result.final_workflow = Workflow::from_json(doc.at("final_workflow"));
  result.report = StageReport::from_json(doc.at("report"));
  return result;
}

nlohmann::json CostEstimate::to_json() const {
  return {{"c_1po", c_1po}, {"c_2to", c_2to}, {"c_3po", c_3po}};
}

CostEstimate estimate_cost(const MassConfig& cfg, const std::vector<int>& block_sizes,
                           const std::vector<int>& candidate_sizes, int final_size) {
  CostEstimate estimate;
  const long mk = static_cast<long>(cfg.optimizer.num_instruction_candidates) *
                  static_cast<long>(cfg.optimizer.rounds);
  for (int n : block_sizes) estimate.c_1po += static_cast<long>(n) * mk;
  for (int n : candidate_sizes) estimate.c_2to += n;
  estimate.c_3po = static_cast<long>(final_size) * mk;
  return estimate;
}

namespace {

double now_ms() {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

// Tokens/calls attributable to one optimization run via its phase prefix.
void fill_usage(TrajectoryRecord& record, const UsageLedger& ledger, const std::string& prefix) {
  const PhaseUsage usage = ledger.total_matching(prefix);
  record.calls = usage.calls;
  record.tokens_in = usage.input_tokens;
  record.tokens_out = usage.output_tokens;
}

OptimizerConfig stage_optimizer_config(const MassConfig& cfg) {
  OptimizerConfig opt = cfg.optimizer;
  opt.base_seed = cfg.base_seed;
  opt.parallelism = cfg.parallelism;
  return opt;
}

}  // namespace

Stage1Result run_stage1(const SearchSpace& space, const TaskSpec& task, Gateway& gateway,
                        const MassConfig& cfg, const EvaluatorFactory& evaluator_factory,
                        const CodeExecutor* executor) {
  if (task.validation.empty()) throw ParameterError("validation split is empty");
  space.validate();
  const OptimizerConfig opt = stage_optimizer_config(cfg);
  std::map<std::string, std::string> summary_cache;

  Stage1Result result;
  result.report.stage = "1PO";
  result.prompt_bank = load_prompt_pack(task.prompt_pack);

  // (a) Warm up the initial predictor a0.
  Workflow a0 = build_workflow(inactive_config(space), space, result.prompt_bank, task.extraction);
  const std::string a0_phase = "1PO/a0";
  double t0 = now_ms();
  std::unique_ptr<CandidateEvaluator> a0_eval =
      evaluator_factory ? evaluator_factory(a0_phase) : nullptr;
  OptimizationResult a0_result = optimize_block(a0, task, gateway, opt, a0_phase, a0_eval.get(),
                                                nullptr, &summary_cache, executor);
  result.prompt_bank["predictor"] = a0_result.programs.at("predictor");
  result.demo_pools["predictor"] = a0_result.pools.at("predictor").demos;
  result.block_sizes.push_back(a0.llm_call_count());

  double baseline = a0_result.best_score.mean;
  const double floor = 1.0 / (4.0 * static_cast<double>(task.validation.size()));
  const double clamped_baseline = std::max(baseline, floor);

  TrajectoryRecord a0_record;
  a0_record.stage = "1PO";
  a0_record.candidate = 0;
  a0_record.label = "a0";
  a0_record.digest = content_digest(a0_phase + "/" + std::to_string(a0_result.best_candidate));
  a0_record.mean = a0_result.best_score.mean;
  a0_record.std_dev = a0_result.best_score.std_dev;
  a0_record.wall_ms = now_ms() - t0;
  fill_usage(a0_record, gateway.ledger(), a0_phase);
  result.report.trajectory.push_back(a0_record);

  // (b) One Table-6 minimal block per non-predictor dimension, frozen a0*.
  long candidate_id = 1;
  for (const auto& dim : space.dimensions) {
    const std::string phase = "1PO/block-" + dim.name;
    TrajectoryRecord record;
    record.stage = "1PO";
    record.candidate = candidate_id++;
    record.label = "block-" + dim.name;
    t0 = now_ms();
    double influence = 1.0;
    try {
      if (dim.kind == DimensionKind::custom) {
        throw ParameterError("custom dimensions carry no minimal block");
      }
      Workflow block = build_stage1_block(dim.kind, result.prompt_bank.at("predictor"),
                                          result.prompt_bank, task.extraction);
      result.block_sizes.push_back(block.llm_call_count());
      std::unique_ptr<CandidateEvaluator> block_eval =
          evaluator_factory ? evaluator_factory(phase) : nullptr;
      OptimizationResult block_result = optimize_block(block, task, gateway, opt, phase,
                                                       block_eval.get(), nullptr, &summary_cache,
                                                       executor);
      // Union prompt bank: first writer wins per role (a0 owns the predictor).
      for (const auto& [role, program] : block_result.programs) {
        if (role == "predictor") continue;
        if (!result.demo_pools.count(role)) {
          result.prompt_bank[role] = program;
          auto it = block_result.pools.find(role);
          if (it != block_result.pools.end()) result.demo_pools[role] = it->second.demos;
        }
      }
      influence = block_result.best_score.mean / clamped_baseline;
      record.mean = block_result.best_score.mean;
      record.std_dev = block_result.best_score.std_dev;
      record.digest = content_digest(phase + "/" + std::to_string(block_result.best_candidate));
    } catch (const std::exception& e) {
      std::cerr << "[mass] warning: block optimization for '" << dim.name
                << "' failed, neutral influence: " << e.what() << "\n";
      influence = 1.0;
      record.digest = content_digest(phase + "/failed");
      record.label += " (failed)";
    }
    record.wall_ms = now_ms() - t0;
    fill_usage(record, gateway.ledger(), phase);
    result.report.trajectory.push_back(record);
    result.influences.entries[dim.name] = influence;
  }
  result.influences.baseline_score = clamped_baseline;

  result.report.best_candidate = 0;
  result.report.best_score = a0_result.best_score;
  for (const auto& record : result.report.trajectory) {
    if (record.mean > result.report.best_score.mean) {
      result.report.best_score.mean = record.mean;
      result.report.best_score.std_dev = record.std_dev;
      result.report.best_score.per_repeat.clear();
      result.report.best_candidate = record.candidate;
    }
  }
  return result;
}

Stage2Result run_stage2(const SearchSpace& space, const Stage1Result& stage1, const TaskSpec& task,
                        Gateway& gateway, const MassConfig& cfg, const CodeExecutor* executor) {
  const auto probabilities = softmax_influence(stage1.influences, cfg.softmax_temperature);

  // Draw the N candidate configs first (cheap, no LLM calls, per-slot streams).
  std::vector<TopologyConfig> configs;
  std::set<std::string> seen;
  int exhausted = 0;
  for (int n = 0; n < cfg.num_topology_candidates; ++n) {
    RngStream rng(derive_seed(static_cast<std::uint64_t>(cfg.base_seed), "2TO/candidate",
                              static_cast<std::uint64_t>(n)));
    bool accepted = false;
    for (int redraw = 0; redraw <= cfg.duplicate_redraws && !accepted; ++redraw) {
      TopologyConfig config;
      try {
        SearchSpace pruned = prune_dimensions(space, probabilities, rng);
        config = sample_config(pruned, cfg.budget, rng, cfg.sample_max_attempts);
      } catch (const SamplingExhaustedError&) {
        ++exhausted;
        break;
      }
      if (seen.insert(config.digest()).second) {
        configs.push_back(config);
        accepted = true;
      }
    }
  }
  if (configs.empty()) {
    throw Error("stage 2 sampled no config within budget " + std::to_string(cfg.budget) +
                " (" + std::to_string(exhausted) + " slots exhausted); increase the budget");
  }

  Stage2Result result;
  result.report.stage = "2TO";
  long best_id = -1;
  double best_mean = -1.0;
  for (std::size_t n = 0; n < configs.size(); ++n) {
    const TopologyConfig& config = configs[n];
    Workflow workflow = build_workflow(config, space, stage1.prompt_bank, task.extraction);
    result.candidate_sizes.push_back(workflow.llm_call_count());
    const std::string phase = "2TO/eval/cand-" + std::to_string(n);
    const double t0 = now_ms();
    const Score score = evaluate_workflow(workflow, task, task.validation, gateway, cfg.eval_repeats,
                                          cfg.parallelism, cfg.base_seed, phase, executor)
                            .score;
    TrajectoryRecord record;
    record.stage = "2TO";
    record.candidate = static_cast<long>(n);
    record.digest = config.digest();
    record.label = config.to_json().dump();
    record.mean = score.mean;
    record.std_dev = score.std_dev;
    record.wall_ms = now_ms() - t0;
    fill_usage(record, gateway.ledger(), phase);
    result.report.trajectory.push_back(record);
    if (score.mean > best_mean) {
      best_mean = score.mean;
      best_id = static_cast<long>(n);
      result.report.best_score = score;
    }
  }
  result.report.best_candidate = best_id;
  result.best_config = configs[static_cast<std::size_t>(best_id)];
  result.best_workflow = build_workflow(result.best_config, space, stage1.prompt_bank, task.extraction);
  return result;
}

Stage3Result run_stage3(const Stage2Result& stage2, const Stage1Result& stage1, const TaskSpec& task,
                        Gateway& gateway, const MassConfig& cfg,
                        const EvaluatorFactory& evaluator_factory, const CodeExecutor* executor) {
  const OptimizerConfig opt = stage_optimizer_config(cfg);
  std::map<std::string, std::string> summary_cache;
  const std::string phase = "3PO";
  std::unique_ptr<CandidateEvaluator> eval =
      evaluator_factory ? evaluator_factory(phase) : nullptr;
  OptimizationResult optimized = optimize_workflow_prompts(stage2.best_workflow, task, gateway, opt,
                                                           phase, &stage1.demo_pools, eval.get(),
                                                           &summary_cache, executor);
  Stage3Result result;
  result.final_workflow = stage2.best_workflow;
  for (const auto& [role, program] : optimized.programs) {
    result.final_workflow.prompt_bank[role] = program;
  }
  result.report.stage = "3PO";
  result.report.best_score = optimized.best_score;
  result.report.best_candidate = optimized.best_candidate;
  for (const auto& eval_record : optimized.evaluations) {
    TrajectoryRecord record;
    record.stage = "3PO";
    record.candidate = eval_record.candidate;
    record.digest = eval_record.digest;
    record.mean = eval_record.score.mean;
    record.std_dev = eval_record.score.std_dev;
    fill_usage(record, gateway.ledger(), phase + "/eval/cand-" + std::to_string(eval_record.candidate));
    if (eval_record.candidate == 0) {
      // Proposal/bootstrap work belongs to the incumbent's record so every
      // call reconciles with exactly one record.
      for (const char* extra : {"3PO/propose", "3PO/bootstrap"}) {
        const PhaseUsage usage = gateway.ledger().total_matching(extra);
        record.calls += usage.calls;
        record.tokens_in += usage.input_tokens;
        record.tokens_out += usage.output_tokens;
      }
    }
    result.report.trajectory.push_back(record);
  }
  return result;
}

MassResult run_mass(const SearchSpace& space, const TaskSpec& task, Gateway& gateway,
                    const MassConfig& cfg, RunDir* run_dir, const CodeExecutor* executor) {
  MassResult result;
  if (run_dir && run_dir->stage_done(1)) {
    result.stage1 = Stage1Result::from_json(run_dir->load_stage(1));
  } else {
    result.stage1 = run_stage1(space, task, gateway, cfg, {}, executor);
    if (run_dir) run_dir->save_stage(1, result.stage1.to_json(), result.stage1.report);
  }
  if (run_dir && run_dir->stage_done(2)) {
    result.stage2 = Stage2Result::from_json(run_dir->load_stage(2));
  } else {
    result.stage2 = run_stage2(space, result.stage1, task, gateway, cfg, executor);
    if (run_dir) run_dir->save_stage(2, result.stage2.to_json(), result.stage2.report);
  }
  if (run_dir && run_dir->stage_done(3)) {
    result.stage3 = Stage3Result::from_json(run_dir->load_stage(3));
  } else {
    result.stage3 = run_stage3(result.stage2, result.stage1, task, gateway, cfg, {}, executor);
    if (run_dir) run_dir->save_stage(3, result.stage3.to_json(), result.stage3.report);
  }
  result.final_workflow = result.stage3.final_workflow;
  result.estimate = estimate_cost(cfg, result.stage1.block_sizes, result.stage2.candidate_sizes,
                                  result.stage3.final_workflow.llm_call_count());
  if (run_dir) run_dir->finalize(result.final_workflow, result.estimate, gateway);
  return result;
}

}  // namespace mass

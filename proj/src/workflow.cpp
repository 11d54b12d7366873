#include "mass/workflow.hpp"

#include <algorithm>

#include "mass/errors.hpp"
#include "mass/util.hpp"

namespace mass {

std::string finalization_name(Finalization f) {
  switch (f) {
    case Finalization::single:        return "single";
    case Finalization::llm_aggregate: return "llm_aggregate";
    case Finalization::majority_vote: return "majority_vote";
  }
  return "single";
}

Finalization finalization_from_name(const std::string& name) {
  if (name == "single")        return Finalization::single;
  if (name == "llm_aggregate") return Finalization::llm_aggregate;
  if (name == "majority_vote") return Finalization::majority_vote;
  throw SchemaError("unknown finalization '" + name + "'");
}

static std::string purpose_name(StagePurpose p) {
  switch (p) {
    case StagePurpose::summarize:   return "summarize";
    case StagePurpose::predict:     return "predict";
    case StagePurpose::tool_exec:   return "tool_exec";
    case StagePurpose::tool_review: return "tool_review";
    case StagePurpose::reflect:     return "reflect";
    case StagePurpose::refine:      return "refine";
    case StagePurpose::debate:      return "debate";
  }
  return "predict";
}

static StagePurpose purpose_from_name(const std::string& name) {
  if (name == "summarize")   return StagePurpose::summarize;
  if (name == "predict")     return StagePurpose::predict;
  if (name == "tool_exec")   return StagePurpose::tool_exec;
  if (name == "tool_review") return StagePurpose::tool_review;
  if (name == "reflect")     return StagePurpose::reflect;
  if (name == "refine")      return StagePurpose::refine;
  if (name == "debate")      return StagePurpose::debate;
  throw SchemaError("unknown stage purpose '" + name + "'");
}

int Workflow::llm_call_count() const {
  int count = 0;
  for (const auto& chain : chains) {
    for (const auto& step : chain) {
      if (step.role != AgentRole::executor_tool) ++count;
    }
  }
  count += debate_rounds * static_cast<int>(chains.size());
  for (const auto& step : tail) {
    if (step.role != AgentRole::executor_tool) ++count;
  }
  if (finalization == Finalization::llm_aggregate) ++count;
  return count;
}

std::vector<std::string> Workflow::roles_present() const {
  std::set<std::string> roles;
  for (const auto& chain : chains) {
    for (const auto& step : chain) {
      if (step.role != AgentRole::executor_tool) roles.insert(role_name(step.role));
    }
  }
  if (debate_rounds > 0) roles.insert(role_name(AgentRole::debator));
  for (const auto& step : tail) {
    if (step.role != AgentRole::executor_tool) roles.insert(role_name(step.role));
  }
  if (finalization == Finalization::llm_aggregate) roles.insert(role_name(AgentRole::aggregator));
  return {roles.begin(), roles.end()};
}

static nlohmann::json step_to_json(const StageStep& step) {
  return {{"role", role_name(step.role)}, {"purpose", purpose_name(step.purpose)}, {"round", step.round}};
}

static StageStep step_from_json(const nlohmann::json& doc) {
  StageStep step;
  step.role = role_from_name(doc.at("role").get<std::string>());
  step.purpose = purpose_from_name(doc.at("purpose").get<std::string>());
  step.round = doc.at("round").get<int>();
  return step;
}

nlohmann::json Workflow::to_json() const {
  nlohmann::json chain_arr = nlohmann::json::array();
  for (const auto& chain : chains) {
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& step : chain) steps.push_back(step_to_json(step));
    chain_arr.push_back(steps);
  }
  nlohmann::json tail_arr = nlohmann::json::array();
  for (const auto& step : tail) tail_arr.push_back(step_to_json(step));
  nlohmann::json bank;
  for (const auto& [role, program] : prompt_bank) bank[role] = program.to_json();
  return {{"schema", "mass-workflow/1"},
          {"config", config.to_json()},
          {"chains", chain_arr},
          {"debate_rounds", debate_rounds},
          {"tail", tail_arr},
          {"finalization", finalization_name(finalization)},
          {"prompt_bank", bank},
          {"frozen_roles", std::vector<std::string>(frozen_roles.begin(), frozen_roles.end())},
          {"extraction", extraction_name(extraction)},
          {"numeric_answers", numeric_answers}};
}

Workflow Workflow::from_json(const nlohmann::json& doc) {
  const std::string schema = doc.value("schema", "");
  if (schema != "mass-workflow/1") {
    throw SchemaError("expected schema mass-workflow/1, got '" + schema + "'");
  }
  Workflow wf;
  wf.config = TopologyConfig::from_json(doc.at("config"));
  for (const auto& chain_doc : doc.at("chains")) {
    std::vector<StageStep> chain;
    for (const auto& step_doc : chain_doc) chain.push_back(step_from_json(step_doc));
    wf.chains.push_back(std::move(chain));
  }
  wf.debate_rounds = doc.at("debate_rounds").get<int>();
  for (const auto& step_doc : doc.value("tail", nlohmann::json::array())) {
    wf.tail.push_back(step_from_json(step_doc));
  }
  wf.finalization = finalization_from_name(doc.at("finalization").get<std::string>());
  for (const auto& [role, program_doc] : doc.at("prompt_bank").items()) {
    wf.prompt_bank[role] = PromptProgram::from_json(program_doc);
  }
  for (const auto& r : doc.value("frozen_roles", std::vector<std::string>{})) wf.frozen_roles.insert(r);
  wf.extraction = extraction_from_name(doc.value("extraction", "answer_field"));
  wf.numeric_answers = doc.value("numeric_answers", false);
  return wf;
}

std::string Workflow::serialize() const {
  return to_json().dump(2) + "\n";
}

std::string Workflow::digest() const {
  return content_digest(serialize());
}

static const PromptProgram& require_program(const std::map<std::string, PromptProgram>& bank,
                                            AgentRole role) {
  auto it = bank.find(role_name(role));
  if (it == bank.end()) {
    throw ConstructionError("prompt bank has no program for role '" + role_name(role) + "'");
  }
  return it->second;
}

Workflow build_workflow(const TopologyConfig& config, const SearchSpace& space,
                        const std::map<std::string, PromptProgram>& prompt_bank,
                        ExtractionRule extraction) {
  {
    const auto violations = validate_config(config, space);
    if (!violations.empty()) {
      std::string msg = "invalid config:";
      for (const auto& v : violations) msg += " [" + v.dimension + "] " + v.message + ";";
      throw ConstructionError(msg);
    }
  }
  int n_summarize = 0, n_agents = 1, n_reflect = 0, n_debate = 0, n_tool = 0;
  for (const auto& dim : space.dimensions) {
    const int v = config.assignments.at(dim.name);
    switch (dim.kind) {
      case DimensionKind::summarize:
      case DimensionKind::custom:    n_summarize += v; break;
      case DimensionKind::aggregate: n_agents = v; break;
      case DimensionKind::reflect:   n_reflect += v; break;
      case DimensionKind::debate:    n_debate += v; break;
      case DimensionKind::execute:   n_tool += v; break;
    }
  }

  Workflow wf;
  wf.config = config;
  wf.debate_rounds = n_debate;
  wf.extraction = extraction;
  if (n_agents > 1 && n_debate == 0) {
    wf.finalization = Finalization::llm_aggregate;
  } else if (n_agents > 1 && n_debate > 0) {
    wf.finalization = Finalization::majority_vote;
  } else {
    wf.finalization = Finalization::single;
  }

  std::vector<StageStep> chain;
  for (int s = 1; s <= n_summarize; ++s) {
    chain.push_back({AgentRole::summarizer, StagePurpose::summarize, s});
  }
  chain.push_back({AgentRole::predictor, StagePurpose::predict, 0});
  if (n_tool > 0) {
    chain.push_back({AgentRole::executor_tool, StagePurpose::tool_exec, 0});
    chain.push_back({AgentRole::reflector, StagePurpose::tool_review, 0});
  }
  for (int r = 1; r <= n_reflect; ++r) {
    chain.push_back({AgentRole::reflector, StagePurpose::reflect, r});
    chain.push_back({AgentRole::refiner, StagePurpose::refine, r});
  }
  wf.chains.assign(static_cast<std::size_t>(n_agents), chain);

  // Collect the bank restricted to the roles this workflow will call.
  std::set<AgentRole> roles;
  for (const auto& step : chain) {
    if (step.role != AgentRole::executor_tool) roles.insert(step.role);
  }
  if (n_debate > 0) roles.insert(AgentRole::debator);
  if (wf.finalization == Finalization::llm_aggregate) roles.insert(AgentRole::aggregator);
  for (AgentRole role : roles) {
    wf.prompt_bank[role_name(role)] = require_program(prompt_bank, role);
  }
  return wf;
}

Workflow build_stage1_block(DimensionKind kind, const PromptProgram& frozen_predictor,
                            const std::map<std::string, PromptProgram>& block_prompts,
                            ExtractionRule extraction) {
  Workflow wf;
  wf.extraction = extraction;
  wf.finalization = Finalization::single;
  wf.frozen_roles.insert(role_name(AgentRole::predictor));
  wf.prompt_bank[role_name(AgentRole::predictor)] = frozen_predictor;
  const StageStep predict{AgentRole::predictor, StagePurpose::predict, 0};
  switch (kind) {
    case DimensionKind::summarize:
      wf.chains = {{{AgentRole::summarizer, StagePurpose::summarize, 1}, predict}};
      wf.config.assignments["summarize"] = 1;
      wf.prompt_bank[role_name(AgentRole::summarizer)] = require_program(block_prompts, AgentRole::summarizer);
      break;
    case DimensionKind::aggregate:
      wf.chains = {{predict}, {predict}, {predict}};
      wf.finalization = Finalization::llm_aggregate;
      wf.config.assignments["aggregate"] = 3;
      wf.prompt_bank[role_name(AgentRole::aggregator)] = require_program(block_prompts, AgentRole::aggregator);
      break;
    case DimensionKind::reflect:
      wf.chains = {{predict,
                    {AgentRole::reflector, StagePurpose::reflect, 1},
                    {AgentRole::refiner, StagePurpose::refine, 1}}};
      wf.config.assignments["reflect"] = 1;
      wf.prompt_bank[role_name(AgentRole::reflector)] = require_program(block_prompts, AgentRole::reflector);
      wf.prompt_bank[role_name(AgentRole::refiner)] = require_program(block_prompts, AgentRole::refiner);
      break;
    case DimensionKind::debate:
      wf.chains = {{predict}, {predict}};
      wf.tail = {{AgentRole::debator, StagePurpose::debate, 1}};
      wf.config.assignments["debate"] = 1;
      wf.prompt_bank[role_name(AgentRole::debator)] = require_program(block_prompts, AgentRole::debator);
      break;
    case DimensionKind::execute:
      wf.chains = {{predict,
                    {AgentRole::executor_tool, StagePurpose::tool_exec, 0},
                    {AgentRole::reflector, StagePurpose::tool_review, 0}}};
      wf.config.assignments["execute"] = 1;
      wf.prompt_bank[role_name(AgentRole::reflector)] = require_program(block_prompts, AgentRole::reflector);
      break;
    case DimensionKind::custom:
      throw ParameterError("no minimal block for custom dimensions");
  }
  return wf;
}

}  // namespace mass

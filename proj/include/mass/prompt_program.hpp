#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace mass {

enum class AgentRole { predictor, aggregator, reflector, refiner, debator, summarizer, executor_tool };

std::string role_name(AgentRole role);
AgentRole role_from_name(const std::string& name);

// One named prompt field with its one-line format description.
struct FieldSpec {
  std::string name;
  std::string desc;
  bool answer_bearing = false;

  // "previous_answer" renders as the marker "Previous answer:".
  std::string label() const;
};

struct Signature {
  std::vector<FieldSpec> inputs;
  std::vector<FieldSpec> outputs;

  const FieldSpec* find_input(const std::string& name) const;
  const FieldSpec* answer_field() const;
  void validate() const;  // exactly one answer-bearing output field

  nlohmann::json to_json() const;
  static Signature from_json(const nlohmann::json& doc);
};

struct Demonstration {
  std::map<std::string, std::string> inputs;
  std::map<std::string, std::string> outputs;
  std::string source_example_id;

  nlohmann::json to_json() const;
  static Demonstration from_json(const nlohmann::json& doc);
};

// Per-role optimizable prompt: instruction + bootstrapped demos + signature.
struct PromptProgram {
  AgentRole role = AgentRole::predictor;
  std::string instruction;
  std::vector<Demonstration> demos;
  Signature signature;

  void validate(int max_demos = 3) const;

  nlohmann::json to_json() const;
  static PromptProgram from_json(const nlohmann::json& doc);
};

// Instruction, then the field-format block, then each demo, then the current
// inputs with the first output label as the completion cue. ${field} in the
// instruction is substituted from `inputs`; unknown names are an error.
std::string render_prompt(const PromptProgram& program, const std::map<std::string, std::string>& inputs);

// Loads data/prompts/<family>/<role>.json files into a role-keyed bank.
std::map<std::string, PromptProgram> load_prompt_pack(const std::filesystem::path& directory);

}  // namespace mass

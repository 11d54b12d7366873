#include "mass/prompt_program.hpp"

#include <fstream>
#include <sstream>

#include "mass/errors.hpp"
#include "mass/util.hpp"

namespace mass {

std::string role_name(AgentRole role) {
  switch (role) {
    case AgentRole::predictor:     return "predictor";
    case AgentRole::aggregator:    return "aggregator";
    case AgentRole::reflector:     return "reflector";
    case AgentRole::refiner:       return "refiner";
    case AgentRole::debator:       return "debator";
    case AgentRole::summarizer:    return "summarizer";
    case AgentRole::executor_tool: return "executor_tool";
  }
  return "predictor";
}

AgentRole role_from_name(const std::string& name) {
  if (name == "predictor")     return AgentRole::predictor;
  if (name == "aggregator")    return AgentRole::aggregator;
  if (name == "reflector")     return AgentRole::reflector;
  if (name == "refiner")       return AgentRole::refiner;
  if (name == "debator")       return AgentRole::debator;
  if (name == "summarizer")    return AgentRole::summarizer;
  if (name == "executor_tool") return AgentRole::executor_tool;
  throw ConfigError("unknown agent role '" + name + "'");
}

std::string FieldSpec::label() const {
  std::string out = name;
  for (auto& c : out) {
    if (c == '_') c = ' ';
  }
  if (!out.empty()) out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  return out;
}

const FieldSpec* Signature::find_input(const std::string& field_name) const {
  for (const auto& f : inputs) {
    if (f.name == field_name) return &f;
  }
  return nullptr;
}

const FieldSpec* Signature::answer_field() const {
  for (const auto& f : outputs) {
    if (f.answer_bearing) return &f;
  }
  return nullptr;
}

void Signature::validate() const {
  int bearing = 0;
  for (const auto& f : outputs) {
    if (f.answer_bearing) ++bearing;
  }
  if (bearing != 1) {
    throw ConfigError("signature must declare exactly one answer-bearing output field, found " +
                      std::to_string(bearing));
  }
}

static nlohmann::json fields_to_json(const std::vector<FieldSpec>& fields) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& f : fields) {
    nlohmann::json item = {{"name", f.name}, {"desc", f.desc}};
    if (f.answer_bearing) item["answer"] = true;
    arr.push_back(item);
  }
  return arr;
}

static std::vector<FieldSpec> fields_from_json(const nlohmann::json& arr) {
  std::vector<FieldSpec> fields;
  for (const auto& item : arr) {
    FieldSpec f;
    f.name = item.at("name").get<std::string>();
    f.desc = item.value("desc", "${" + f.name + "}");
    f.answer_bearing = item.value("answer", false);
    fields.push_back(std::move(f));
  }
  return fields;
}

nlohmann::json Signature::to_json() const {
  return {{"inputs", fields_to_json(inputs)}, {"outputs", fields_to_json(outputs)}};
}

Signature Signature::from_json(const nlohmann::json& doc) {
  Signature sig;
  sig.inputs = fields_from_json(doc.at("inputs"));
  sig.outputs = fields_from_json(doc.at("outputs"));
  sig.validate();
  return sig;
}

nlohmann::json Demonstration::to_json() const {
  return {{"inputs", inputs}, {"outputs", outputs}, {"source", source_example_id}};
}

Demonstration Demonstration::from_json(const nlohmann::json& doc) {
  Demonstration demo;
  demo.inputs = doc.at("inputs").get<std::map<std::string, std::string>>();
  demo.outputs = doc.at("outputs").get<std::map<std::string, std::string>>();
  demo.source_example_id = doc.value("source", "");
  return demo;
}

void PromptProgram::validate(int max_demos) const {
  signature.validate();
  if (static_cast<int>(demos.size()) > max_demos) {
    throw ConfigError("program for " + role_name(role) + " carries " + std::to_string(demos.size()) +
                      " demos, max is " + std::to_string(max_demos));
  }
  for (const auto& demo : demos) {
    for (const auto& [name, value] : demo.inputs) {
      (void)value;
      if (!signature.find_input(name)) {
        throw ConfigError("demo input field '" + name + "' not in signature");
      }
    }
    for (const auto& [name, value] : demo.outputs) {
      (void)value;
      bool known = false;
      for (const auto& f : signature.outputs) known = known || f.name == name;
      if (!known) throw ConfigError("demo output field '" + name + "' not in signature");
    }
  }
}

nlohmann::json PromptProgram::to_json() const {
  nlohmann::json demo_arr = nlohmann::json::array();
  for (const auto& d : demos) demo_arr.push_back(d.to_json());
  return {{"role", role_name(role)},
          {"instruction", instruction},
          {"demos", demo_arr},
          {"signature", signature.to_json()}};
}

PromptProgram PromptProgram::from_json(const nlohmann::json& doc) {
  PromptProgram program;
  program.role = role_from_name(doc.at("role").get<std::string>());
  program.instruction = doc.at("instruction").get<std::string>();
  program.signature = Signature::from_json(doc.at("signature"));
  for (const auto& d : doc.value("demos", nlohmann::json::array())) {
    program.demos.push_back(Demonstration::from_json(d));
  }
  return program;
}

// Substitutes each ${name} in `text` with the matching input value.
static std::string substitute_placeholders(const std::string& text,
                                           const std::map<std::string, std::string>& inputs) {
  std::string out;
  out.reserve(text.size());
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t open = text.find("${", pos);
    if (open == std::string::npos) {
      out.append(text, pos, text.size() - pos);
      break;
    }
    std::size_t close = text.find('}', open + 2);
    if (close == std::string::npos) {
      out.append(text, pos, text.size() - pos);
      break;
    }
    out.append(text, pos, open - pos);
    const std::string name = text.substr(open + 2, close - open - 2);
    auto it = inputs.find(name);
    if (it == inputs.end()) {
      throw RenderError("unknown placeholder '${" + name + "}' in instruction");
    }
    out.append(it->second);
    pos = close + 1;
  }
  return out;
}

static void append_demo_block(std::string& out, const Signature& sig, const Demonstration& demo) {
  for (const auto& f : sig.inputs) {
    auto it = demo.inputs.find(f.name);
    if (it != demo.inputs.end()) out += f.label() + ": " + it->second + "\n";
  }
  for (const auto& f : sig.outputs) {
    auto it = demo.outputs.find(f.name);
    if (it != demo.outputs.end()) out += f.label() + ": " + it->second + "\n";
  }
}

std::string render_prompt(const PromptProgram& program, const std::map<std::string, std::string>& inputs) {
  for (const auto& f : program.signature.inputs) {
    if (!inputs.count(f.name)) {
      throw RenderError("missing required input field '" + f.name + "'");
    }
  }
  std::string out = substitute_placeholders(program.instruction, inputs);
  out += "\n\n---\n\nFollow the following format.\n\n";
  for (const auto& f : program.signature.inputs) out += f.label() + ": " + f.desc + "\n";
  for (const auto& f : program.signature.outputs) out += f.label() + ": " + f.desc + "\n";
  for (const auto& demo : program.demos) {
    out += "\n---\n\n";
    append_demo_block(out, program.signature, demo);
  }
  out += "\n---\n\n";
  for (const auto& f : program.signature.inputs) out += f.label() + ": " + inputs.at(f.name) + "\n";
  if (!program.signature.outputs.empty()) {
    out += program.signature.outputs.front().label() + ":";
  }
  return out;
}

std::map<std::string, PromptProgram> load_prompt_pack(const std::filesystem::path& directory) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(directory)) {
    throw LoadError("prompt pack directory not found: " + directory.string());
  }
  std::map<std::string, PromptProgram> bank;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(directory)) {
    if (entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& path : files) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open prompt file: " + path.string());
    nlohmann::json doc;
    try {
      in >> doc;
    } catch (const nlohmann::json::parse_error& e) {
      throw LoadError("bad prompt file " + path.string() + ": " + e.what());
    }
    const std::string role = path.stem().string();
    if (!doc.contains("role")) doc["role"] = role;
    PromptProgram program = PromptProgram::from_json(doc);
    if (role_name(program.role) != role) {
      throw LoadError("prompt file " + path.string() + " declares role '" + role_name(program.role) +
                      "' but is keyed '" + role + "'");
    }
    bank[role] = std::move(program);
  }
  return bank;
}

}  // namespace mass

#include "mass/search_space.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "mass/errors.hpp"
#include "mass/util.hpp"

namespace mass {

std::string kind_name(DimensionKind kind) {
  switch (kind) {
    case DimensionKind::summarize: return "summarize";
    case DimensionKind::aggregate: return "aggregate";
    case DimensionKind::reflect:   return "reflect";
    case DimensionKind::debate:    return "debate";
    case DimensionKind::execute:   return "execute";
    case DimensionKind::custom:    return "custom";
  }
  return "custom";
}

DimensionKind kind_from_name(const std::string& name) {
  if (name == "summarize") return DimensionKind::summarize;
  if (name == "aggregate") return DimensionKind::aggregate;
  if (name == "reflect")   return DimensionKind::reflect;
  if (name == "debate")    return DimensionKind::debate;
  if (name == "execute")   return DimensionKind::execute;
  if (name == "custom")    return DimensionKind::custom;
  throw ConfigError("unknown dimension kind '" + name + "'");
}

bool TopologyDimension::contains(int value) const {
  return std::find(value_set.begin(), value_set.end(), value) != value_set.end();
}

void TopologyDimension::validate() const {
  if (name.empty()) throw ConfigError("dimension with empty name");
  if (value_set.empty()) throw ConfigError("dimension '" + name + "' has an empty value set");
  for (std::size_t i = 0; i + 1 < value_set.size(); ++i) {
    if (value_set[i] >= value_set[i + 1]) {
      throw ConfigError("dimension '" + name + "' value set is not strictly increasing");
    }
  }
  if (value_set.front() < 0) throw ConfigError("dimension '" + name + "' has negative values");
  if (!contains(inactive_value)) {
    throw ConfigError("dimension '" + name + "' value set does not contain its inactive value");
  }
  const int expected_inactive = kind == DimensionKind::aggregate ? 1 : 0;
  if (kind != DimensionKind::custom && inactive_value != expected_inactive) {
    throw ConfigError("dimension '" + name + "' of kind " + kind_name(kind) +
                      " must have inactive value " + std::to_string(expected_inactive));
  }
}

TopologyDimension TopologyDimension::builtin(DimensionKind kind) {
  TopologyDimension dim;
  dim.name = kind_name(kind);
  dim.kind = kind;
  switch (kind) {
    case DimensionKind::summarize:
    case DimensionKind::reflect:
    case DimensionKind::debate:
      dim.value_set = {0, 1, 2, 3, 4};
      dim.inactive_value = 0;
      break;
    case DimensionKind::aggregate:
      dim.value_set = {1, 3, 5, 7, 9};
      dim.inactive_value = 1;
      break;
    case DimensionKind::execute:
      dim.value_set = {0, 1};
      dim.inactive_value = 0;
      break;
    case DimensionKind::custom:
      throw ConfigError("no builtin defaults for a custom dimension");
  }
  return dim;
}

const TopologyDimension* SearchSpace::find(const std::string& name) const {
  for (const auto& dim : dimensions) {
    if (dim.name == name) return &dim;
  }
  return nullptr;
}

void SearchSpace::validate() const {
  if (budget < 1) throw ConfigError("budget must be >= 1");
  std::set<std::string> names;
  for (const auto& dim : dimensions) {
    dim.validate();
    if (!names.insert(dim.name).second) {
      throw ConfigError("duplicate dimension name '" + dim.name + "'");
    }
  }
  std::set<std::string> seen;
  for (const auto& name : rule_order) {
    if (!find(name)) throw ConfigError("rule_order names unknown dimension '" + name + "'");
    if (!seen.insert(name).second) throw ConfigError("rule_order repeats dimension '" + name + "'");
  }
}

static std::vector<std::string> default_rule_order(const SearchSpace& space) {
  // Fixed construction order; execute is handled as an insertion flag.
  std::vector<std::string> order;
  for (DimensionKind k : {DimensionKind::summarize, DimensionKind::reflect, DimensionKind::debate,
                          DimensionKind::aggregate}) {
    for (const auto& dim : space.dimensions) {
      if (dim.kind == k) order.push_back(dim.name);
    }
  }
  return order;
}

SearchSpace SearchSpace::table6_default(int budget) {
  return with_kinds({DimensionKind::summarize, DimensionKind::aggregate, DimensionKind::reflect,
                     DimensionKind::debate, DimensionKind::execute},
                    budget);
}

SearchSpace SearchSpace::with_kinds(const std::vector<DimensionKind>& kinds, int budget) {
  SearchSpace space;
  space.budget = budget;
  for (DimensionKind k : kinds) space.dimensions.push_back(TopologyDimension::builtin(k));
  space.rule_order = default_rule_order(space);
  space.validate();
  return space;
}

nlohmann::json SearchSpace::to_json() const {
  nlohmann::json dims = nlohmann::json::array();
  for (const auto& dim : dimensions) {
    dims.push_back({{"name", dim.name},
                    {"kind", kind_name(dim.kind)},
                    {"values", dim.value_set},
                    {"inactive", dim.inactive_value}});
  }
  return {{"schema", "mass-space/1"},
          {"budget", budget},
          {"rule_order", rule_order},
          {"dimensions", dims}};
}

SearchSpace SearchSpace::from_json(const nlohmann::json& doc) {
  if (doc.value("schema", "") != "mass-space/1") {
    throw SchemaError("expected schema mass-space/1, got '" + doc.value("schema", "") + "'");
  }
  SearchSpace space;
  space.budget = doc.at("budget").get<int>();
  for (const auto& d : doc.at("dimensions")) {
    TopologyDimension dim;
    dim.name = d.at("name").get<std::string>();
    dim.kind = kind_from_name(d.at("kind").get<std::string>());
    dim.value_set = d.at("values").get<std::vector<int>>();
    dim.inactive_value = d.at("inactive").get<int>();
    space.dimensions.push_back(std::move(dim));
  }
  if (doc.contains("rule_order")) {
    space.rule_order = doc.at("rule_order").get<std::vector<std::string>>();
  } else {
    space.rule_order = default_rule_order(space);
  }
  space.validate();
  return space;
}

std::string TopologyConfig::digest() const {
  return content_digest(to_json().dump());
}

nlohmann::json TopologyConfig::to_json() const {
  return {{"assignments", assignments}};
}

TopologyConfig TopologyConfig::from_json(const nlohmann::json& doc) {
  TopologyConfig config;
  config.assignments = doc.at("assignments").get<std::map<std::string, int>>();
  return config;
}

nlohmann::json InfluenceTable::to_json() const {
  return {{"entries", entries}, {"baseline_score", baseline_score}};
}

InfluenceTable InfluenceTable::from_json(const nlohmann::json& doc) {
  InfluenceTable table;
  table.entries = doc.at("entries").get<std::map<std::string, double>>();
  table.baseline_score = doc.at("baseline_score").get<double>();
  return table;
}

TopologyConfig inactive_config(const SearchSpace& space) {
  TopologyConfig config;
  for (const auto& dim : space.dimensions) config.assignments[dim.name] = dim.inactive_value;
  return config;
}

int agent_call_count(const TopologyConfig& config, const SearchSpace& space) {
  for (const auto& [name, value] : config.assignments) {
    (void)value;
    if (!space.find(name)) throw ConfigError("config assigns unknown dimension '" + name + "'");
  }
  int n_serial = 0;  // summarize + custom stages, once per chain
  int n_agents = 1;
  int n_reflect = 0;
  int n_debate = 0;
  int n_tool = 0;
  for (const auto& dim : space.dimensions) {
    auto it = config.assignments.find(dim.name);
    if (it == config.assignments.end()) {
      throw ConfigError("config is missing dimension '" + dim.name + "'");
    }
    const int v = it->second;
    switch (dim.kind) {
      case DimensionKind::summarize:
      case DimensionKind::custom:    n_serial += v; break;
      case DimensionKind::aggregate: n_agents = v; break;
      case DimensionKind::reflect:   n_reflect += v; break;
      case DimensionKind::debate:    n_debate += v; break;
      case DimensionKind::execute:   n_tool += v; break;
    }
  }
  const int per_chain = n_serial + 1 + 2 * n_reflect + n_tool;
  const int aggregator = (n_agents > 1 && n_debate == 0) ? 1 : 0;
  return n_agents * per_chain + n_debate * n_agents + aggregator;
}

std::vector<ConfigViolation> validate_config(const TopologyConfig& config, const SearchSpace& space) {
  std::vector<ConfigViolation> violations;
  bool coverage_ok = true;
  for (const auto& dim : space.dimensions) {
    auto it = config.assignments.find(dim.name);
    if (it == config.assignments.end()) {
      violations.push_back({dim.name, "no value assigned"});
      coverage_ok = false;
    } else if (!dim.contains(it->second)) {
      violations.push_back({dim.name, "value " + std::to_string(it->second) + " not in value set"});
    }
  }
  for (const auto& [name, value] : config.assignments) {
    (void)value;
    if (!space.find(name)) {
      violations.push_back({name, "unknown dimension"});
      coverage_ok = false;
    }
  }
  if (coverage_ok) {
    const int count = agent_call_count(config, space);
    if (count > space.budget) {
      violations.push_back({"", "agent call count " + std::to_string(count) + " exceeds budget " +
                                    std::to_string(space.budget)});
    }
  }
  return violations;
}

std::map<std::string, double> softmax_influence(const InfluenceTable& influences, double temperature) {
  if (temperature <= 0.0) throw ParameterError("softmax temperature must be > 0");
  if (influences.entries.empty()) throw ParameterError("influence table is empty");
  double max_scaled = -std::numeric_limits<double>::infinity();
  for (const auto& [name, value] : influences.entries) {
    (void)name;
    if (!std::isfinite(value) || value <= 0.0) {
      throw ParameterError("influence values must be finite and > 0");
    }
    max_scaled = std::max(max_scaled, value / temperature);
  }
  double denom = 0.0;
  std::map<std::string, double> probabilities;
  for (const auto& [name, value] : influences.entries) {
    const double e = std::exp(value / temperature - max_scaled);
    probabilities[name] = e;
    denom += e;
  }
  for (auto& [name, p] : probabilities) {
    (void)name;
    p /= denom;
  }
  return probabilities;
}

SearchSpace prune_dimensions(const SearchSpace& space, const std::map<std::string, double>& probabilities,
                             RngStream& rng) {
  for (const auto& dim : space.dimensions) {
    if (!probabilities.count(dim.name)) {
      throw ParameterError("no selection probability for dimension '" + dim.name + "'");
    }
  }
  SearchSpace pruned = space;
  for (auto& dim : pruned.dimensions) {
    const double u = rng.uniform01();
    const bool keep = u < probabilities.at(dim.name);
    if (!keep) dim.value_set = {dim.inactive_value};
  }
  return pruned;
}

TopologyConfig sample_config(const SearchSpace& pruned, int budget, RngStream& rng, int max_attempts) {
  if (max_attempts < 1) throw ParameterError("max_attempts must be >= 1");
  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    TopologyConfig config;
    for (const auto& dim : pruned.dimensions) {
      config.assignments[dim.name] = dim.value_set[rng.uniform_index(dim.value_set.size())];
    }
    if (agent_call_count(config, pruned) <= budget) return config;
  }
  throw SamplingExhaustedError(max_attempts);
}

}  // namespace mass

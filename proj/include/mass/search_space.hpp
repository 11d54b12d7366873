#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mass/rng.hpp"

namespace mass {

enum class DimensionKind { summarize, aggregate, reflect, debate, execute, custom };

std::string kind_name(DimensionKind kind);
DimensionKind kind_from_name(const std::string& name);

// One topology search dimension: a named, ordered set of integer levels plus
// the level that means "dimension absent".
struct TopologyDimension {
  std::string name;
  DimensionKind kind = DimensionKind::custom;
  std::vector<int> value_set;
  int inactive_value = 0;

  bool contains(int value) const;
  void validate() const;  // throws ConfigError on a broken invariant

  static TopologyDimension builtin(DimensionKind kind);
};

struct SearchSpace {
  std::vector<TopologyDimension> dimensions;
  int budget = 10;
  std::vector<std::string> rule_order;  // builder stage order; execute is an insertion flag

  const TopologyDimension* find(const std::string& name) const;
  void validate() const;

  // The Table 6 default: summarize/reflect/debate in {0..4}, aggregate in
  // {1,3,5,7,9}, execute in {0,1}.
  static SearchSpace table6_default(int budget = 10);
  // A space over a subset of the built-in dimensions (task spaces).
  static SearchSpace with_kinds(const std::vector<DimensionKind>& kinds, int budget = 10);

  nlohmann::json to_json() const;
  static SearchSpace from_json(const nlohmann::json& doc);
};

// One point in the search space: a value per dimension.
struct TopologyConfig {
  std::map<std::string, int> assignments;

  bool operator==(const TopologyConfig& other) const { return assignments == other.assignments; }
  std::string digest() const;

  nlohmann::json to_json() const;
  static TopologyConfig from_json(const nlohmann::json& doc);
};

// Incremental influence ratios I_a = E(a*) / E(a0*) per dimension.
struct InfluenceTable {
  std::map<std::string, double> entries;
  double baseline_score = 0.0;

  nlohmann::json to_json() const;
  static InfluenceTable from_json(const nlohmann::json& doc);
};

// Config with every dimension at its inactive value (the single predictor).
TopologyConfig inactive_config(const SearchSpace& space);

// LLM calls needed to answer one query with this config:
//   N(a) = N_a * (N_s + 1 + 2*N_r + N_t) + N_d * N_a + A,
// where A = 1 only when N_a > 1 and there is no debate (an LLM aggregator);
// after debate the finalization is a rule-based majority vote.
int agent_call_count(const TopologyConfig& config, const SearchSpace& space);

struct ConfigViolation {
  std::string dimension;  // empty for budget-level violations
  std::string message;
};

// Empty result means the config is valid for the space (values in their
// value sets, full coverage, call count within budget).
std::vector<ConfigViolation> validate_config(const TopologyConfig& config, const SearchSpace& space);

// p_i = exp(I_i / t) / sum_j exp(I_j / t), max-subtracted for overflow safety.
std::map<std::string, double> softmax_influence(const InfluenceTable& influences, double temperature);

// Per-dimension Bernoulli keep/drop: keep dimension i iff u < p_i with
// u ~ Uniform(0,1) drawn from `rng` in dimension order. Rejected dimensions
// are collapsed to their inactive value.
SearchSpace prune_dimensions(const SearchSpace& space, const std::map<std::string, double>& probabilities,
                             RngStream& rng);

// Uniform value draw per dimension, resampled until the call count fits the
// budget. Throws SamplingExhaustedError after max_attempts failures.
TopologyConfig sample_config(const SearchSpace& pruned, int budget, RngStream& rng, int max_attempts = 1000);

}  // namespace mass

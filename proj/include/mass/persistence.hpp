#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "mass/mass_search.hpp"
#include "mass/workflow.hpp"

namespace mass {

class Gateway;

// Canonical on-disk form: schema-checked, sorted keys, byte-stable.
void save_workflow(const Workflow& workflow, const std::filesystem::path& path);
Workflow load_workflow(const std::filesystem::path& path);

struct RunManifest {
  std::string digest;
  bool stage1_done = false;
  bool stage2_done = false;
  bool stage3_done = false;
  std::string created_at;
  std::string updated_at;

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& doc);
};

// Run-directory owner: manifest, per-stage checkpoints, trajectory log,
// final workflow, usage report. Creation takes the config snapshot whose
// digest gates any resume. A lock file enforces one writer.
class RunDir {
 public:
  static RunDir open(const std::filesystem::path& root, const nlohmann::json& config_snapshot,
                     bool acquire_lock = true);
  ~RunDir();
  RunDir(RunDir&& other) noexcept;
  RunDir& operator=(RunDir&&) = delete;
  RunDir(const RunDir&) = delete;

  const std::filesystem::path& root() const { return root_; }
  bool stage_done(int stage) const;
  nlohmann::json load_stage(int stage) const;
  void save_stage(int stage, const nlohmann::json& checkpoint, const StageReport& report);
  void finalize(const Workflow& final_workflow, const CostEstimate& estimate, const Gateway& gateway);

 private:
  RunDir() = default;
  void write_manifest();
  void rebuild_trajectory() const;

  std::filesystem::path root_;
  RunManifest manifest_;
  bool locked_ = false;
};

// Score/cost tables plus the trajectory series; also written to report.txt
// and series.tsv inside the run directory when writable. Incomplete runs
// yield a partial report with the stage flags shown.
std::string emit_report(const std::filesystem::path& run_dir, bool write_files = true);

}  // namespace mass

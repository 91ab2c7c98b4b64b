#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pocoti/config.hpp"
#include "pocoti/synthesis.hpp"

namespace pocoti::pipeline {

/// Process exit codes shared by the CLI.
enum ExitCode : int { kOk = 0, kUsage = 1, kStageFailure = 2, kIntegrity = 3 };

inline const std::vector<std::string> kStages{"ingest", "render", "stage1", "hilpo", "stage2", "export"};

struct StageRecord {
  std::string name;
  bool completed = false;
  std::string completed_at;
  std::map<std::string, std::string> outputs;      // path relative to outputs dir -> sha256
  std::map<std::string, std::int64_t> counters;
  std::vector<std::string> notes;
};

struct RunManifest {
  std::string run_id;
  std::string config_hash;
  std::map<std::string, std::string> prompt_assets;  // asset name -> sha256
  StageSwitches switches;
  std::vector<StageRecord> stages;                   // in pipeline order
  std::optional<std::string> final_prompt_id;
  bool hilpo_skipped = false;

  const StageRecord* stage(const std::string& name) const;
  std::string to_json() const;
  static RunManifest from_json(std::string_view text);
};

/// Fixed file layout under the outputs directory.
struct RunLayout {
  std::filesystem::path root;

  std::filesystem::path manifest() const { return root / "manifest.json"; }
  std::filesystem::path lock() const { return root / ".lock"; }
  std::filesystem::path ingested() const { return root / "corpus" / "ingested.jsonl"; }
  std::filesystem::path rejects() const { return root / "corpus" / "ingest_rejects.jsonl"; }
  std::filesystem::path views() const { return root / "views"; }
  std::filesystem::path refined() const { return root / "corpus" / "refined.jsonl"; }
  std::filesystem::path stage1_report() const { return root / "stage1" / "report.json"; }
  std::filesystem::path manual_review() const { return root / "stage1" / "manual_review.jsonl"; }
  std::filesystem::path prompt_log() const { return root / "hilpo" / "prompts.log"; }
  std::filesystem::path cot() const { return root / "corpus" / "cot.jsonl"; }
  std::filesystem::path job() const { return root / "stage2" / "job.json"; }
  std::filesystem::path training() const { return root / "export" / "train.jsonl"; }
  std::filesystem::path audit() const { return root / "audit.jsonl"; }
};

struct RunHooks {
  /// Called after a stage's marker is durably written; throwing simulates a kill.
  std::function<void(const std::string& stage)> after_stage;
  std::function<void(synth::CommitPoint, std::size_t)> stage2_crash_hook;
};

struct RunOutcome {
  int exit_code = kOk;
  std::string message;
  RunManifest manifest;
  bool awaiting_review = false;
};

/// Runs (or resumes) every stage. Completed stages whose outputs still match
/// their recorded checksums are skipped. With HiLPO enabled and no P* yet,
/// the run generates the next batch and candidate, then stops with
/// kStageFailure and `awaiting_review` until a reviewer decides.
RunOutcome run_pipeline(const PipelineConfig& config, const RunHooks& hooks = {});

/// Checks every completed stage's outputs against the manifest; returns the
/// list of problems (empty when honest).
std::vector<std::string> verify_manifest(const RunManifest& manifest, const RunLayout& layout);

/// Exclusive marker for one run per outputs directory; a marker left by a
/// dead process is taken over.
class RunLock {
 public:
  explicit RunLock(std::filesystem::path path);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
};

}  // namespace pocoti::pipeline

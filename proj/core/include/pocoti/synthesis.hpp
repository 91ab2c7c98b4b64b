#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pocoti/dataset.hpp"
#include "pocoti/gateway.hpp"
#include "pocoti/quality.hpp"
#include "pocoti/render.hpp"

namespace pocoti::synth {

struct CoTOutput {
  std::string reasoning;
  std::string answer;
};

/// Parses a generator reply. Throws StructuredParseError when the block is
/// missing or the reasoning merely restates the answer.
CoTOutput parse_cot(std::string_view text, std::string_view ground_truth_answer);

/// Generator request text: the prompt followed by the question and the
/// ground-truth answer the reasoning must reach.
std::string cot_request_text(std::string_view prompt_text, std::string_view instruction,
                             std::string_view answer);

struct CoTAttempt {
  std::optional<CoTOutput> output;
  std::string raw_text;
  int attempts = 0;
  std::optional<std::string> error;
  bool provider_failed = false;
};

/// One generator call; `max_attempts` > 1 re-asks after a parse failure.
CoTAttempt generate_cot(gateway::Gateway& gw, const render::EncodedViews& views,
                        const data::InstructionSample& sample, std::string_view prompt_text,
                        int max_attempts);

/// The prompt a stage-2 run is bound to.
struct PromptRef {
  std::string prompt_id;
  std::string text;
  bool finalized = false;
};

enum class SynthStatus { succeeded, parse_failed, provider_failed };
std::string_view to_string(SynthStatus s);

struct SynthesisOutcome {
  SynthStatus status = SynthStatus::succeeded;
  std::optional<data::CoTSample> sample;
  std::string raw_text;
  int attempts = 0;
  std::optional<std::string> error;
};

/// Generates (R, A) for one sample. The output always carries the input
/// answer byte-for-byte; a generator that rewrites it is flagged answer_drift.
SynthesisOutcome synthesize_cot(gateway::Gateway& gw, const render::EncodedViews& views,
                                const data::InstructionSample& sample, const PromptRef& prompt);

/// Answer-only record for the no-reasoning arm.
data::CoTSample skipped_cot_sample(const data::InstructionSample& sample, const PromptRef& prompt);

struct SkippedSample {
  std::string sample_id;
  std::string status;
  std::string error;
};

/// Persistent progress of a stage-2 run. `processed` counts input samples
/// (in input order) whose outcome is durably committed.
struct SynthesisJob {
  std::string job_id;
  std::string prompt_id;
  std::string corpus_fingerprint;
  bool disable_cot = false;
  std::size_t processed = 0;
  std::optional<std::string> last_sample_id;
  std::size_t succeeded = 0;
  std::size_t parse_failed = 0;
  std::size_t provider_failed = 0;
  std::size_t records_written = 0;
  std::uint64_t output_bytes = 0;
  bool complete = false;
  std::vector<SkippedSample> skipped;

  std::string to_json() const;
  static SynthesisJob from_json(std::string_view text);
};

enum class CommitPoint { record_appended, state_saved };

struct Stage2Options {
  bool disable_cot = false;
  std::size_t workers = 1;
  std::string corpus_name = "cot";
  /// Test hook invoked at each durable step; throwing from it simulates a
  /// crash at that point.
  std::function<void(CommitPoint, std::size_t processed)> crash_hook;
};

struct Stage2Paths {
  std::filesystem::path output;     // CoT corpus file
  std::filesystem::path job_state;  // SynthesisJob JSON
};

struct Stage2Result {
  data::CoTCorpus corpus;
  SynthesisJob job;
};

/// Synthesizes the whole corpus, resuming from `paths.job_state` when it
/// exists. Records are committed in input order. Throws StateError when the
/// prompt is not finalized or the job belongs to another run, IntegrityError
/// when the output is shorter than the recorded progress.
Stage2Result run_stage2(gateway::Gateway& gw, const data::InstructionCorpus& corpus,
                        const quality::ViewLookup& views, const PromptRef& prompt,
                        const Stage2Paths& paths, const Stage2Options& options = {});

}  // namespace pocoti::synth

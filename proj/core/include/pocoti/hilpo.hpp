#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pocoti/dataset.hpp"
#include "pocoti/gateway.hpp"
#include "pocoti/quality.hpp"
#include "pocoti/synthesis.hpp"
#include "pocoti/text_diff.hpp"

namespace pocoti::hilpo {

inline constexpr std::size_t kDefaultBatchSize = 100;
inline constexpr std::size_t kDefaultSnippetBudget = 1200;

enum class PromptState { draft, candidate, active, rejected, retired };
std::string_view to_string(PromptState s);

enum class Decision { accept, reject };
std::string_view to_string(Decision d);
Decision decision_from_string(std::string_view s);

struct HumanDecision {
  Decision decision = Decision::reject;
  std::string reviewer;
  std::string note;
  std::string timestamp;
  bool operator==(const HumanDecision&) const = default;
};

struct PromptVersion {
  std::string prompt_id;
  int iteration_k = 0;
  std::string text;
  PromptState state = PromptState::draft;
  std::optional<std::string> parent_id;
  std::optional<std::string> batch_id;
  std::optional<HumanDecision> decision;
  bool no_change = false;
  std::string rationale;
  std::vector<diff::DiffOp> diff;  // against the parent; empty for P_0
  std::uint64_t created_seq = 0;   // event sequence number of creation
  bool operator==(const PromptVersion&) const = default;
};

struct Snippet {
  std::string sample_id;
  std::string cloud_id;
  std::string instruction;
  std::string answer;
  std::string reasoning;  // parsed reasoning, or the raw reply when parse failed
  bool parse_ok = false;
  std::string error;
  bool operator==(const Snippet&) const = default;
};

struct CoTBatch {
  std::string batch_id;
  std::string prompt_id;
  std::uint64_t seed = 0;
  std::vector<Snippet> snippets;
  bool operator==(const CoTBatch&) const = default;

  std::size_t parse_failures() const;
};

struct Convergence {
  bool converged = false;
  std::string reason;
  std::optional<std::string> final_prompt_id;  // P*
};

/// Prompt lifecycle as a fold over an append-only, hash-chained event log.
/// Every mutation validates against the current state, appends one event
/// (durably when file-backed) and only then applies it. Thread-safe.
class PromptStore {
 public:
  /// In-memory store.
  PromptStore();
  /// File-backed store; replays an existing log. Throws IntegrityError on a
  /// broken hash chain or an event that is illegal in its replay state.
  explicit PromptStore(std::filesystem::path log_path);
  ~PromptStore();
  PromptStore(const PromptStore&) = delete;
  PromptStore& operator=(const PromptStore&) = delete;

  /// Rebuilds state from log lines (same checks as the file constructor).
  static std::unique_ptr<PromptStore> replay(const std::vector<std::string>& lines);

  PromptVersion init_prompt(const std::string& text);
  /// Assigns the batch id and records the batch under the active prompt.
  CoTBatch record_batch(CoTBatch batch);
  PromptVersion add_candidate(const std::string& batch_id, const std::string& text, const std::string& rationale);
  PromptVersion apply_decision(const std::string& candidate_id, HumanDecision decision);
  /// Designates the active prompt as P*.
  PromptVersion finalize(const std::string& reviewer);

  std::optional<PromptVersion> active() const;
  std::optional<PromptVersion> find(const std::string& prompt_id) const;
  std::vector<PromptVersion> versions() const;  // creation order
  std::vector<PromptVersion> pending() const;   // newest first
  std::optional<CoTBatch> batch(const std::string& batch_id) const;
  std::vector<std::string> batch_ids() const;
  std::optional<std::string> finalized_id() const;
  Convergence check_convergence() const;
  /// P* when converged; nullopt otherwise.
  std::optional<PromptVersion> final_prompt() const;

  std::vector<std::string> event_lines() const;
  std::size_t event_count() const;

 private:
  struct State;
  void commit(std::string type, const std::string& payload_json);  // requires lock
  void apply_event(const std::string& line, bool replaying);         // requires lock

  mutable std::mutex mutex_;
  std::optional<std::filesystem::path> log_path_;
  std::unique_ptr<State> state_;
};

/// Seeded uniform draw of `n` distinct indices from [0, population);
/// Fisher-Yates over mt19937_64.
std::vector<std::size_t> draw_without_replacement(std::size_t population, std::size_t n, std::uint64_t seed);

struct BatchOptions {
  std::size_t n = kDefaultBatchSize;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

/// Runs the CoT generator under the active prompt on a seeded sample of the
/// corpus and records the batch. Parse failures are kept per snippet.
CoTBatch generate_sample_batch(gateway::Gateway& gw, PromptStore& store, const data::InstructionCorpus& corpus,
                               const quality::ViewLookup& views, const BatchOptions& options = {});

/// Serialized batch handed to the refiner; each snippet's reasoning is cut
/// to `budget` characters with an inline marker.
std::string serialize_batch_for_refiner(const CoTBatch& batch, std::size_t budget = kDefaultSnippetBudget);

/// Asks the refiner for a revised prompt and stores it as a candidate.
/// Throws StructuredParseError (nothing stored) when the reply is unusable.
PromptVersion propose_refinement(gateway::Gateway& gw, PromptStore& store, const std::string& batch_id,
                                 std::size_t budget = kDefaultSnippetBudget);

}  // namespace pocoti::hilpo

#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pocoti/dataset.hpp"
#include "pocoti/gateway.hpp"
#include "pocoti/render.hpp"

namespace pocoti::quality {

enum class Label { keep, improve, invalid };
std::string_view to_string(Label l);  // "KEEP" | "IMPROVE" | "INVALID"

struct QualityVerdict {
  Label label = Label::keep;
  std::string relevance_reason;
  std::string accuracy_reason;
  std::string completeness_reason;
  std::optional<std::string> refined_answer;  // present iff label == improve
};

/// Parses an evaluator reply into a verdict. Throws StructuredParseError.
QualityVerdict parse_verdict(std::string_view text);

struct EvaluationResult {
  std::optional<QualityVerdict> verdict;  // nullopt: unevaluable
  std::string raw_text;                   // last raw reply
  int attempts = 0;
  std::optional<std::string> error;
};

/// One evaluator call with a single re-ask on unparseable output.
EvaluationResult evaluate_sample(gateway::Gateway& gw, const render::EncodedViews& views,
                                 const data::InstructionSample& sample,
                                 const char* task = "evaluate");

struct ReferencePair {
  std::string sample_id;
  std::string instruction;
  std::string answer;
  std::string provenance;  // "kept" | "improved"
};

class ReferenceDatabase {
 public:
  void add(const std::string& cloud_id, ReferencePair pair);
  const std::vector<ReferencePair>& lookup(const std::string& cloud_id) const;
  const std::map<std::string, std::vector<ReferencePair>>& entries() const { return entries_; }
  std::size_t size() const;

 private:
  std::map<std::string, std::vector<ReferencePair>> entries_;
};

/// Holds exactly the KEEP pairs and the IMPROVE pairs (with A'); per-cloud
/// lists ordered by sample_id. `verdicts[i]` belongs to `corpus.samples[i]`.
ReferenceDatabase build_reference_db(const data::InstructionCorpus& corpus,
                                     const std::vector<std::optional<QualityVerdict>>& verdicts);

enum class RefinementKind { answer_refined, pair_regenerated };

struct RefinementOutcome {
  RefinementKind kind = RefinementKind::answer_refined;
  std::string instruction;
  std::string answer;
  std::string rationale;
};

struct RefinementResult {
  std::optional<RefinementOutcome> outcome;  // nullopt: unparseable or duplicate
  std::vector<std::string> flags;            // no_reference, duplicate_regeneration, unparseable
  std::string raw_text;
  int attempts = 0;

  bool has_flag(std::string_view f) const;
};

/// Exact match after case-fold and whitespace collapse on both fields.
bool duplicates_reference(const std::string& instruction, const std::string& answer,
                          const std::vector<ReferencePair>& references);

RefinementResult refine_invalid(gateway::Gateway& gw, const data::InstructionSample& sample,
                                const render::EncodedViews& views,
                                const std::vector<ReferencePair>& references);

struct Stage1Options {
  bool disable_refinement = false;
  bool verify_improved = false;
  std::size_t workers = 1;
};

struct ManualReviewItem {
  data::InstructionSample sample;
  std::string reason;  // unevaluable | duplicate_regeneration | unparseable_refinement
  std::string raw_text;
};

struct Stage1Report {
  std::map<std::string, std::size_t> label_counts;    // KEEP / IMPROVE / INVALID
  std::map<std::string, std::size_t> outcome_counts;  // kept, improved, answer_refined, pair_regenerated, unevaluable
  // dimension -> normalized reason text -> count
  std::map<std::string, std::map<std::string, std::size_t>> reason_histograms;
  std::vector<std::string> unevaluable;
  std::vector<std::string> duplicate_regeneration;
  std::vector<std::string> no_reference;
  std::size_t input_count = 0;
  bool refinement_skipped = false;

  std::string to_json() const;
  std::string to_text() const;
};

struct Stage1Result {
  data::InstructionCorpus corpus;
  std::vector<ManualReviewItem> manual_review;
  Stage1Report report;
};

using ViewLookup = std::function<render::EncodedViews(const std::string& cloud_id)>;

/// Evaluate, build the reference database, then refine INVALID samples.
/// Per-sample failures route to manual review; they never abort the batch.
Stage1Result run_stage1(gateway::Gateway& gw, const data::InstructionCorpus& corpus,
                        const ViewLookup& views, const Stage1Options& options = {});

}  // namespace pocoti::quality

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pocoti/gateway.hpp"
#include "pocoti/quality.hpp"

namespace pocoti::eval {

enum class Benchmark { closed_set, open_ended, captioning };
enum class PromptType { instruction, completion, caption };

std::string_view to_string(Benchmark b);
std::string_view to_string(PromptType p);
Benchmark benchmark_from_string(std::string_view s);
PromptType prompt_type_from_string(std::string_view s);

/// The exact text sent to the subject model for each prompt type.
std::string_view subject_prompt(PromptType p);

struct EvalItem {
  std::string cloud_id;
  std::string ground_truth;
  bool operator==(const EvalItem&) const = default;
};

struct EvalTask {
  std::string name;  // dataset name, one report row group
  Benchmark benchmark = Benchmark::closed_set;
  PromptType prompt_type = PromptType::instruction;
  std::vector<std::string> label_set;  // closed_set only
  std::vector<EvalItem> items;
  bool operator==(const EvalTask&) const = default;

  void validate() const;
};

/// Header line {"kind":"eval_task",...} followed by {cloud_id, ground_truth} lines.
std::string serialize_task(const EvalTask& task);
EvalTask parse_task(std::string_view text);
EvalTask load_task(const std::filesystem::path& path);
void save_task(const EvalTask& task, const std::filesystem::path& path);

struct SubjectResponse {
  std::string text;
  bool answered = false;
  std::optional<std::string> error;
};

/// Sends exactly subject_prompt(type) to the subject_model role; the cloud id
/// travels as request metadata.
SubjectResponse query_subject(gateway::Gateway& gw, const std::string& cloud_id, PromptType type);

struct JudgeScore {
  std::string judge_id;
  bool correct = false;         // classification
  std::optional<double> score;  // captioning, [0,100]; nullopt: unscorable
  std::string label;            // closed-set label chosen by the judge
  std::string raw_text;
  std::vector<std::string> flags;  // out_of_set, unparseable, provider_failed, unanswered, unscorable
};

/// One score per judge (provider id), in judge order.
std::vector<JudgeScore> judge_classification(gateway::Gateway& gw, const SubjectResponse& response,
                                             const std::string& ground_truth, const EvalTask& task,
                                             const std::vector<std::string>& judges);

struct CaptionScores {
  std::vector<JudgeScore> scores;
  std::optional<double> average;  // mean over valid judges; nullopt when none
  std::size_t valid = 0;
  std::string coverage_note;      // set when some judge was unscorable
};

CaptionScores aggregate_caption_scores(std::vector<JudgeScore> scores);
CaptionScores score_caption(gateway::Gateway& gw, const std::string& candidate, const std::string& reference,
                            const std::vector<std::string>& judges);

/// dot(a,b)/(|a||b|) clamped to [-1,1]. Throws ValidationError on a dimension
/// mismatch, an empty vector or a zero norm.
double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

/// Arithmetic mean; throws ValidationError on empty input.
double equal_weight_mean(const std::vector<double>& values);

struct ReferenceCaptions {
  std::vector<EvalItem> captions;
  std::vector<std::pair<std::string, std::string>> excluded;  // (cloud_id, reason)
};

ReferenceCaptions gen_reference_captions(gateway::Gateway& gw, const std::vector<std::string>& cloud_ids,
                                         const quality::ViewLookup& views, std::size_t workers = 1);

struct ItemRecord {
  std::string cloud_id;
  std::string ground_truth;
  SubjectResponse response;
  std::vector<JudgeScore> judges;
  std::optional<double> caption_average;
  std::map<std::string, double> similarity;  // embedding provider -> cosine
  std::vector<std::string> notes;
};

struct TaskResult {
  std::string dataset;
  Benchmark benchmark = Benchmark::closed_set;
  PromptType prompt_type = PromptType::instruction;
  std::vector<std::string> judges;
  std::vector<std::string> similarity_providers;
  std::vector<ItemRecord> items;
};

struct EvalOptions {
  std::vector<std::string> judges;
  std::vector<std::string> similarity_providers;
  std::size_t workers = 1;
};

/// Queries the subject on every item, then judges (and embeds) the replies.
TaskResult run_task(gateway::Gateway& gw, const EvalTask& task, const EvalOptions& options);

struct ClassificationCell {
  std::string dataset;
  PromptType prompt_type = PromptType::instruction;
  std::map<std::string, double> judge_accuracy;  // percent
  double accuracy = 0;                           // equal-weight mean over judges
};

struct EvalReport {
  std::vector<ClassificationCell> cells;
  std::optional<double> classification_average;  // mean over cells
  std::map<std::string, double> caption_judge_means;
  std::optional<double> caption_average;         // mean over judges
  std::map<std::string, double> similarity_means;
  std::vector<std::string> notes;
  std::vector<TaskResult> tasks;

  std::string to_json() const;
  std::string to_text() const;
};

/// Aggregation step of build_report, from already-computed components.
EvalReport assemble_report(std::vector<ClassificationCell> cells, std::map<std::string, double> caption_judge_means,
                           std::map<std::string, double> similarity_means);

EvalReport build_report(const std::vector<TaskResult>& results);

}  // namespace pocoti::eval

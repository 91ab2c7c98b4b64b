#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "pocoti/dataset.hpp"

namespace pocoti::synth {

/// Line placed between reasoning and answer in a training target.
inline constexpr std::string_view kAnswerSeparator = "### Answer:";

struct TemplateConfig {
  /// Must contain `{point_cloud}` and `{instruction}`.
  std::string context_template = "{point_cloud}\nUSER: {instruction}\nASSISTANT: ";
  std::string point_cloud_token = "<point_cloud>";

  void validate() const;
  /// JSON object with optional keys "context_template", "point_cloud_token";
  /// unknown keys are rejected.
  static TemplateConfig from_json(std::string_view text);
};

/// The trainer sees `context + target`; loss is taken on target characters,
/// i.e. from byte offset `mask_boundary` on.
struct TrainingRecord {
  std::string sample_id;
  std::string context;
  std::string target;
  std::size_t mask_boundary = 0;
  std::vector<std::string> flags;
  bool operator==(const TrainingRecord&) const = default;
};

/// Prefixes a backslash to every line that starts with zero or more
/// backslashes followed by the separator, so the separator line can only
/// come from the exporter. `unescape_separator` is its exact inverse.
std::string escape_separator(std::string_view text);
std::string unescape_separator(std::string_view text);

std::string render_context(const TemplateConfig& config, std::string_view instruction);

TrainingRecord make_training_record(const data::CoTSample& sample, const TemplateConfig& config);

struct ParsedTarget {
  std::string reasoning;
  std::string answer;
};

/// Inverse of the target encoding. Throws ValidationError when a reasoning
/// target carries no separator line.
ParsedTarget parse_target(std::string_view target, bool cot_skipped);

std::string serialize_training_record(const TrainingRecord& record);
TrainingRecord parse_training_record(std::string_view line);

/// Writes one record per sample (atomically); returns the record count.
std::size_t export_training(const data::CoTCorpus& corpus, const TemplateConfig& config,
                            const std::filesystem::path& out);

std::vector<TrainingRecord> load_training_records(const std::filesystem::path& path);

}  // namespace pocoti::synth

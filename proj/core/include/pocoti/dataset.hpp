#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace pocoti::data {

inline constexpr int kSchemaVersion = 1;
inline constexpr std::string_view kDefaultCaptionInstruction = "Describe this object.";

struct Point {
  double x = 0, y = 0, z = 0;
  double r = 0, g = 0, b = 0;  // [0,1]; meaningful only when the cloud has color
};

/// Normalized point set: centroid at origin, max point norm 1 (0 for a
/// single point). `extent` is the max norm before scaling.
struct PointCloud {
  std::string id;
  std::vector<Point> points;
  bool has_color = false;
  double extent = 0.0;
  Point centroid{};
};

/// Centroid-subtract and scale to unit max norm. Throws ValidationError on
/// empty input or non-finite coordinates.
PointCloud normalize_cloud(std::vector<Point> raw_points, std::string id, bool has_color);

enum class Source { shapellm_sft, cap3d_caption, regenerated };
std::string_view to_string(Source s);
Source source_from_string(std::string_view s);

/// One step in a sample's history.
struct LineageRecord {
  std::string stage;
  std::optional<std::string> prior_sample_id;
  std::optional<std::string> verdict;
  std::optional<std::string> prior_instruction;
  std::optional<std::string> prior_answer;
  std::vector<std::string> flags;

  bool operator==(const LineageRecord&) const = default;
};

struct InstructionSample {
  std::string sample_id;
  std::string cloud_id;
  std::string instruction;
  std::string answer;
  Source source = Source::shapellm_sft;
  std::vector<LineageRecord> lineage;

  bool operator==(const InstructionSample&) const = default;
};

struct CoTSample {
  std::string sample_id;
  std::string cloud_id;
  std::string instruction;
  std::string reasoning;
  std::string answer;
  std::string prompt_version_id;
  std::vector<std::string> flags;  // answer_drift, cot_skipped
  std::vector<LineageRecord> lineage;

  bool operator==(const CoTSample&) const = default;
  bool has_flag(std::string_view f) const;
};

/// sample_id: first 16 hex chars of sha256 over (cloud_id, instruction, answer, source).
std::string make_sample_id(std::string_view cloud_id, std::string_view instruction,
                           std::string_view answer, Source source);

template <class Sample>
struct Corpus {
  std::string name;
  std::vector<Sample> samples;
  int schema_version = kSchemaVersion;

  bool operator==(const Corpus&) const = default;
};

using InstructionCorpus = Corpus<InstructionSample>;
using CoTCorpus = Corpus<CoTSample>;

/// Checks per-sample and corpus invariants. When `known_clouds` is given,
/// every cloud_id must be in it. Throws ValidationError naming the first
/// violation.
void validate(const InstructionCorpus& corpus, const std::set<std::string>* known_clouds = nullptr);
void validate(const CoTCorpus& corpus, const std::set<std::string>* known_clouds = nullptr);

struct RejectedRecord {
  std::size_t line = 0;  // 1-based
  std::string reason;
};

struct IngestResult {
  InstructionCorpus corpus;
  std::vector<RejectedRecord> rejects;
};

struct IngestOptions {
  std::string caption_instruction{kDefaultCaptionInstruction};
  const std::set<std::string>* known_clouds = nullptr;
};

/// Parses external records, one JSON object per line:
///   {"cloud_id": ..., "instruction": ..., "answer": ...}   (instruction records)
///   {"cloud_id": ..., "caption": ...}                        (caption records)
/// Malformed records are rejected with their line number; a duplicate
/// sample_id is fatal (ValidationError).
IngestResult ingest_instruction_records(std::string_view text, Source source,
                                        const IngestOptions& options = {},
                                        std::string corpus_name = "ingested");

/// Concatenates corpora in order; duplicate sample_id is fatal.
InstructionCorpus merge_corpora(const std::vector<InstructionCorpus>& parts, std::string name);

// Corpus files: header line {"schema_version":1,"kind":...,"name":...}
// followed by one JSON object per sample.
std::string serialize_corpus(const InstructionCorpus& corpus);
std::string serialize_corpus(const CoTCorpus& corpus);
std::string serialize_sample_line(const InstructionSample& sample);
std::string serialize_sample_line(const CoTSample& sample);
std::string corpus_header_line(std::string_view kind, std::string_view name);

void save_corpus(const InstructionCorpus& corpus, const std::filesystem::path& path);
void save_corpus(const CoTCorpus& corpus, const std::filesystem::path& path);

template <class Sample>
struct LoadResult {
  Corpus<Sample> corpus;
  bool truncated = false;               // final line was cut mid-record
  std::size_t complete_bytes = 0;       // bytes covered by header + complete records
};

LoadResult<InstructionSample> parse_instruction_corpus(std::string_view text);
LoadResult<CoTSample> parse_cot_corpus(std::string_view text);
LoadResult<InstructionSample> load_instruction_corpus(const std::filesystem::path& path);
LoadResult<CoTSample> load_cot_corpus(const std::filesystem::path& path);

/// Lineage stages written by the pipeline.
namespace stage {
inline constexpr std::string_view ingested = "ingested";
inline constexpr std::string_view kept = "kept";
inline constexpr std::string_view improved = "improved";
inline constexpr std::string_view answer_refined = "answer_refined";
inline constexpr std::string_view pair_regenerated = "pair_regenerated";
inline constexpr std::string_view refinement_skipped = "refinement_skipped";
inline constexpr std::string_view cot_synthesized = "cot_synthesized";
inline constexpr std::string_view cot_skipped = "cot_skipped";
}  // namespace stage

/// True if the lineage already carries a stage-1 outcome.
bool has_stage1_outcome(const std::vector<LineageRecord>& lineage);

}  // namespace pocoti::data

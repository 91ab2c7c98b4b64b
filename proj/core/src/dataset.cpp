#include "pocoti/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "json.hpp"
#include "pocoti/util.hpp"

namespace pocoti::data {

using ojson = nlohmann::ordered_json;

PointCloud normalize_cloud(std::vector<Point> raw_points, std::string id, bool has_color) {
  if (raw_points.empty()) throw ValidationError("point cloud '" + id + "' is empty");
  double cx = 0, cy = 0, cz = 0;
  for (const auto& p : raw_points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z)) {
      throw ValidationError("point cloud '" + id + "' has a non-finite coordinate");
    }
    cx += p.x;
    cy += p.y;
    cz += p.z;
  }
  const auto n = static_cast<double>(raw_points.size());
  cx /= n;
  cy /= n;
  cz /= n;
  double max_norm = 0;
  for (auto& p : raw_points) {
    p.x -= cx;
    p.y -= cy;
    p.z -= cz;
    max_norm = std::max(max_norm, std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z));
  }
  // Single points and fully coincident clouds collapse to the origin.
  if (max_norm > 0) {
    for (auto& p : raw_points) {
      p.x /= max_norm;
      p.y /= max_norm;
      p.z /= max_norm;
    }
  } else {
    for (auto& p : raw_points) p.x = p.y = p.z = 0;
  }
  PointCloud cloud;
  cloud.id = std::move(id);
  cloud.points = std::move(raw_points);
  cloud.has_color = has_color;
  cloud.extent = max_norm;
  cloud.centroid = Point{cx, cy, cz};
  return cloud;
}

std::string_view to_string(Source s) {
  switch (s) {
    case Source::shapellm_sft: return "shapellm_sft";
    case Source::cap3d_caption: return "cap3d_caption";
    case Source::regenerated: return "regenerated";
  }
  return "unknown";
}

Source source_from_string(std::string_view s) {
  if (s == "shapellm_sft") return Source::shapellm_sft;
  if (s == "cap3d_caption") return Source::cap3d_caption;
  if (s == "regenerated") return Source::regenerated;
  throw ValidationError("unknown source '" + std::string(s) + "'");
}

bool CoTSample::has_flag(std::string_view f) const {
  return std::find(flags.begin(), flags.end(), f) != flags.end();
}

std::string make_sample_id(std::string_view cloud_id, std::string_view instruction,
                           std::string_view answer, Source source) {
  return content_hash({cloud_id, instruction, answer, to_string(source)}, 16);
}

bool has_stage1_outcome(const std::vector<LineageRecord>& lineage) {
  return std::any_of(lineage.begin(), lineage.end(), [](const LineageRecord& r) {
    return r.stage == stage::kept || r.stage == stage::improved ||
           r.stage == stage::answer_refined || r.stage == stage::pair_regenerated ||
           r.stage == stage::refinement_skipped;
  });
}

namespace {

bool blank(std::string_view s) { return trim(s).empty(); }

template <class Sample>
void check_common(const Corpus<Sample>& corpus, const std::set<std::string>* known_clouds) {
  std::unordered_set<std::string> ids;
  for (const auto& s : corpus.samples) {
    if (s.sample_id.empty()) throw ValidationError("sample with empty sample_id");
    if (!ids.insert(s.sample_id).second) {
      throw ValidationError("duplicate sample_id " + s.sample_id);
    }
    if (blank(s.instruction)) throw ValidationError("sample " + s.sample_id + ": empty instruction");
    if (blank(s.answer)) throw ValidationError("sample " + s.sample_id + ": empty answer");
    if (known_clouds && known_clouds->count(s.cloud_id) == 0) {
      throw ValidationError("sample " + s.sample_id + ": unknown cloud_id " + s.cloud_id);
    }
  }
}

ojson lineage_to_json(const std::vector<LineageRecord>& lineage) {
  ojson arr = ojson::array();
  for (const auto& r : lineage) {
    ojson j;
    j["stage"] = r.stage;
    if (r.prior_sample_id) j["prior_sample_id"] = *r.prior_sample_id;
    if (r.verdict) j["verdict"] = *r.verdict;
    if (r.prior_instruction) j["prior_instruction"] = *r.prior_instruction;
    if (r.prior_answer) j["prior_answer"] = *r.prior_answer;
    if (!r.flags.empty()) j["flags"] = r.flags;
    arr.push_back(std::move(j));
  }
  return arr;
}

std::optional<std::string> opt_string(const ojson& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j.at(key).get<std::string>();
}

std::vector<LineageRecord> lineage_from_json(const ojson& arr) {
  std::vector<LineageRecord> out;
  for (const auto& j : arr) {
    LineageRecord r;
    r.stage = j.at("stage").get<std::string>();
    r.prior_sample_id = opt_string(j, "prior_sample_id");
    r.verdict = opt_string(j, "verdict");
    r.prior_instruction = opt_string(j, "prior_instruction");
    r.prior_answer = opt_string(j, "prior_answer");
    if (j.contains("flags")) r.flags = j.at("flags").get<std::vector<std::string>>();
    out.push_back(std::move(r));
  }
  return out;
}

std::string dump_line(const ojson& j) {
  return j.dump(-1, ' ', false, ojson::error_handler_t::replace) + "\n";
}

InstructionSample instruction_from_json(const ojson& j) {
  InstructionSample s;
  s.sample_id = j.at("sample_id").get<std::string>();
  s.cloud_id = j.at("cloud_id").get<std::string>();
  s.instruction = j.at("instruction").get<std::string>();
  s.answer = j.at("answer").get<std::string>();
  s.source = source_from_string(j.at("source").get<std::string>());
  s.lineage = lineage_from_json(j.at("lineage"));
  return s;
}

CoTSample cot_from_json(const ojson& j) {
  CoTSample s;
  s.sample_id = j.at("sample_id").get<std::string>();
  s.cloud_id = j.at("cloud_id").get<std::string>();
  s.instruction = j.at("instruction").get<std::string>();
  s.reasoning = j.at("reasoning").get<std::string>();
  s.answer = j.at("answer").get<std::string>();
  s.prompt_version_id = j.at("prompt_version_id").get<std::string>();
  if (j.contains("flags")) s.flags = j.at("flags").get<std::vector<std::string>>();
  if (j.contains("lineage")) s.lineage = lineage_from_json(j.at("lineage"));
  return s;
}

template <class Sample, class FromJson>
LoadResult<Sample> parse_corpus(std::string_view text, std::string_view expected_kind,
                                FromJson from_json) {
  LoadResult<Sample> result;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    const bool last_unterminated = nl == std::string_view::npos;
    const auto end = last_unterminated ? text.size() : nl;
    const auto line = text.substr(pos, end - pos);
    ++line_no;
    ojson j;
    try {
      j = ojson::parse(line);
    } catch (const ojson::parse_error&) {
      if (last_unterminated) {
        result.truncated = true;
        break;
      }
      throw ValidationError("corpus line " + std::to_string(line_no) + " is not valid JSON");
    }
    try {
      if (!header_seen) {
        const int version = j.at("schema_version").get<int>();
        if (version != kSchemaVersion) {
          throw ValidationError("schema_version mismatch: file has " + std::to_string(version) +
                                ", expected " + std::to_string(kSchemaVersion));
        }
        const auto kind = j.at("kind").get<std::string>();
        if (kind != expected_kind) {
          throw ValidationError("corpus kind is '" + kind + "', expected '" +
                                std::string(expected_kind) + "'");
        }
        result.corpus.name = j.value("name", std::string{});
        result.corpus.schema_version = version;
        header_seen = true;
      } else {
        result.corpus.samples.push_back(from_json(j));
      }
    } catch (const ojson::exception& e) {
      throw ValidationError("corpus line " + std::to_string(line_no) + ": " + e.what());
    }
    pos = last_unterminated ? text.size() : nl + 1;
    result.complete_bytes = pos;
  }
  if (!header_seen) throw ValidationError("corpus file has no header record");
  return result;
}

}  // namespace

void validate(const InstructionCorpus& corpus, const std::set<std::string>* known_clouds) {
  check_common(corpus, known_clouds);
}

void validate(const CoTCorpus& corpus, const std::set<std::string>* known_clouds) {
  check_common(corpus, known_clouds);
  for (const auto& s : corpus.samples) {
    if (s.has_flag("cot_skipped")) {
      if (!s.reasoning.empty()) {
        throw ValidationError("sample " + s.sample_id + ": cot_skipped with reasoning");
      }
      continue;
    }
    if (blank(s.reasoning)) throw ValidationError("sample " + s.sample_id + ": empty reasoning");
    if (normalize_text(s.reasoning) == normalize_text(s.answer)) {
      throw ValidationError("sample " + s.sample_id + ": reasoning equals answer");
    }
    if (s.prompt_version_id.empty()) {
      throw ValidationError("sample " + s.sample_id + ": missing prompt_version_id");
    }
  }
}

IngestResult ingest_instruction_records(std::string_view text, Source source,
                                        const IngestOptions& options, std::string corpus_name) {
  IngestResult result;
  result.corpus.name = std::move(corpus_name);
  std::unordered_set<std::string> ids;
  std::size_t line_no = 0;
  for (const auto& raw_line : split_lines(text)) {
    ++line_no;
    const auto line = trim(raw_line);
    if (line.empty()) continue;
    auto reject = [&](std::string reason) {
      result.rejects.push_back({line_no, std::move(reason)});
    };
    ojson j;
    try {
      j = ojson::parse(line);
    } catch (const ojson::parse_error&) {
      reject("not a JSON object");
      continue;
    }
    if (!j.is_object()) {
      reject("not a JSON object");
      continue;
    }
    auto field = [&](const char* key) -> std::optional<std::string> {
      if (!j.contains(key) || !j[key].is_string()) return std::nullopt;
      return j[key].get<std::string>();
    };
    const auto cloud_id = field("cloud_id");
    if (!cloud_id || trim(*cloud_id).empty()) {
      reject("missing cloud_id");
      continue;
    }
    std::optional<std::string> instruction;
    std::optional<std::string> answer;
    if (j.contains("caption")) {
      instruction = options.caption_instruction;
      answer = field("caption");
    } else {
      instruction = field("instruction");
      answer = field("answer");
    }
    if (!instruction || trim(*instruction).empty()) {
      reject("empty instruction");
      continue;
    }
    if (!answer || trim(*answer).empty()) {
      reject("empty answer");
      continue;
    }
    if (options.known_clouds && options.known_clouds->count(*cloud_id) == 0) {
      reject("unknown cloud_id " + *cloud_id);
      continue;
    }
    InstructionSample s;
    s.cloud_id = *cloud_id;
    s.instruction = *instruction;
    s.answer = *answer;
    s.source = source;
    s.sample_id = make_sample_id(s.cloud_id, s.instruction, s.answer, source);
    s.lineage.push_back(LineageRecord{std::string(stage::ingested), {}, {}, {}, {}, {}});
    if (!ids.insert(s.sample_id).second) {
      throw ValidationError("duplicate sample_id " + s.sample_id + " at line " +
                            std::to_string(line_no));
    }
    result.corpus.samples.push_back(std::move(s));
  }
  return result;
}

InstructionCorpus merge_corpora(const std::vector<InstructionCorpus>& parts, std::string name) {
  InstructionCorpus out;
  out.name = std::move(name);
  std::unordered_set<std::string> ids;
  for (const auto& part : parts) {
    for (const auto& s : part.samples) {
      if (!ids.insert(s.sample_id).second) {
        throw ValidationError("duplicate sample_id " + s.sample_id + " while merging");
      }
      out.samples.push_back(s);
    }
  }
  return out;
}

std::string corpus_header_line(std::string_view kind, std::string_view name) {
  ojson h;
  h["schema_version"] = kSchemaVersion;
  h["kind"] = kind;
  h["name"] = name;
  return dump_line(h);
}

std::string serialize_sample_line(const InstructionSample& s) {
  ojson j;
  j["sample_id"] = s.sample_id;
  j["cloud_id"] = s.cloud_id;
  j["instruction"] = s.instruction;
  j["answer"] = s.answer;
  j["source"] = to_string(s.source);
  j["lineage"] = lineage_to_json(s.lineage);
  return dump_line(j);
}

std::string serialize_sample_line(const CoTSample& s) {
  ojson j;
  j["sample_id"] = s.sample_id;
  j["cloud_id"] = s.cloud_id;
  j["instruction"] = s.instruction;
  j["reasoning"] = s.reasoning;
  j["answer"] = s.answer;
  j["prompt_version_id"] = s.prompt_version_id;
  j["flags"] = s.flags;
  j["lineage"] = lineage_to_json(s.lineage);
  return dump_line(j);
}

std::string serialize_corpus(const InstructionCorpus& corpus) {
  std::string out = corpus_header_line("instruction", corpus.name);
  for (const auto& s : corpus.samples) out += serialize_sample_line(s);
  return out;
}

std::string serialize_corpus(const CoTCorpus& corpus) {
  std::string out = corpus_header_line("cot", corpus.name);
  for (const auto& s : corpus.samples) out += serialize_sample_line(s);
  return out;
}

void save_corpus(const InstructionCorpus& corpus, const std::filesystem::path& path) {
  validate(corpus);
  write_file_atomic(path, serialize_corpus(corpus));
}

void save_corpus(const CoTCorpus& corpus, const std::filesystem::path& path) {
  validate(corpus);
  write_file_atomic(path, serialize_corpus(corpus));
}

LoadResult<InstructionSample> parse_instruction_corpus(std::string_view text) {
  return parse_corpus<InstructionSample>(text, "instruction", instruction_from_json);
}

LoadResult<CoTSample> parse_cot_corpus(std::string_view text) {
  return parse_corpus<CoTSample>(text, "cot", cot_from_json);
}

LoadResult<InstructionSample> load_instruction_corpus(const std::filesystem::path& path) {
  return parse_instruction_corpus(read_file(path));
}

LoadResult<CoTSample> load_cot_corpus(const std::filesystem::path& path) {
  return parse_cot_corpus(read_file(path));
}

}  // namespace pocoti::data

#include "pocoti/export.hpp"

#include <sstream>

#include "json.hpp"
#include "pocoti/prompts.hpp"
#include "pocoti/util.hpp"

namespace pocoti::synth {

using json = nlohmann::json;

void TemplateConfig::validate() const {
  for (const char* p : {"{point_cloud}", "{instruction}"}) {
    if (context_template.find(p) == std::string::npos) {
      throw ValidationError(std::string("context_template is missing the required placeholder ") + p);
    }
  }
  if (point_cloud_token.empty()) throw ValidationError("point_cloud_token must not be empty");
}

TemplateConfig TemplateConfig::from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("template config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("template config must be a JSON object");
  TemplateConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!it.value().is_string()) throw ValidationError("template config key " + it.key() + " must be a string");
    if (it.key() == "context_template") {
      c.context_template = it.value().get<std::string>();
    } else if (it.key() == "point_cloud_token") {
      c.point_cloud_token = it.value().get<std::string>();
    } else {
      throw ValidationError("unknown template config key: " + it.key());
    }
  }
  c.validate();
  return c;
}

namespace {

// Calls fn(line) for each '\n'-separated line (terminator excluded), and
// joins the results with '\n'.
template <class Fn>
std::string map_lines(std::string_view text, Fn fn) {
  std::string out;
  out.reserve(text.size() + 8);
  std::size_t pos = 0;
  for (;;) {
    const auto nl = text.find('\n', pos);
    const auto line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    fn(line, out);
    if (nl == std::string_view::npos) break;
    out.push_back('\n');
    pos = nl + 1;
  }
  return out;
}

// Number of leading backslashes when the rest of the line starts with the
// separator, else -1.
long escaped_depth(std::string_view line) {
  std::size_t k = 0;
  while (k < line.size() && line[k] == '\\') ++k;
  return starts_with(line.substr(k), kAnswerSeparator) ? static_cast<long>(k) : -1;
}

}  // namespace

std::string escape_separator(std::string_view text) {
  return map_lines(text, [](std::string_view line, std::string& out) {
    if (escaped_depth(line) >= 0) out.push_back('\\');
    out += line;
  });
}

std::string unescape_separator(std::string_view text) {
  return map_lines(text, [](std::string_view line, std::string& out) {
    out += escaped_depth(line) >= 1 ? line.substr(1) : line;
  });
}

std::string render_context(const TemplateConfig& config, std::string_view instruction) {
  return prompts::fill(config.context_template,
                       {{"point_cloud", config.point_cloud_token}, {"instruction", std::string(instruction)}});
}

TrainingRecord make_training_record(const data::CoTSample& sample, const TemplateConfig& config) {
  TrainingRecord rec;
  rec.sample_id = sample.sample_id;
  rec.context = render_context(config, sample.instruction);
  rec.flags = sample.flags;
  if (sample.has_flag("cot_skipped")) {
    rec.target = sample.answer;
  } else {
    rec.target = escape_separator(sample.reasoning);
    rec.target += "\n";
    rec.target += kAnswerSeparator;
    rec.target += "\n";
    rec.target += escape_separator(sample.answer);
  }
  rec.mask_boundary = rec.context.size();
  return rec;
}

ParsedTarget parse_target(std::string_view target, bool cot_skipped) {
  if (cot_skipped) return {"", std::string(target)};
  const std::string sep = "\n" + std::string(kAnswerSeparator) + "\n";
  // Escaping guarantees no line of R or A starts with the separator, so the
  // first match is the boundary.
  const auto at = target.find(sep);
  if (at == std::string_view::npos) throw ValidationError("target has no answer separator line");
  return {unescape_separator(target.substr(0, at)), unescape_separator(target.substr(at + sep.size()))};
}

std::string serialize_training_record(const TrainingRecord& r) {
  nlohmann::ordered_json j;
  j["sample_id"] = r.sample_id;
  j["context"] = r.context;
  j["target"] = r.target;
  j["mask_boundary"] = r.mask_boundary;
  j["flags"] = r.flags;
  return j.dump(-1, ' ', false, json::error_handler_t::strict) + "\n";
}

TrainingRecord parse_training_record(std::string_view line) {
  try {
    const auto j = json::parse(line);
    TrainingRecord r;
    r.sample_id = j.at("sample_id").get<std::string>();
    r.context = j.at("context").get<std::string>();
    r.target = j.at("target").get<std::string>();
    r.mask_boundary = j.at("mask_boundary").get<std::size_t>();
    r.flags = j.at("flags").get<std::vector<std::string>>();
    if (r.mask_boundary != r.context.size()) throw ValidationError("mask_boundary does not match the context length");
    return r;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed training record: ") + e.what());
  }
}

std::size_t export_training(const data::CoTCorpus& corpus, const TemplateConfig& config,
                            const std::filesystem::path& out) {
  config.validate();
  data::validate(corpus);
  std::string text;
  for (const auto& s : corpus.samples) text += serialize_training_record(make_training_record(s, config));
  if (!out.parent_path().empty()) std::filesystem::create_directories(out.parent_path());
  write_file_atomic(out, text);
  return corpus.samples.size();
}

std::vector<TrainingRecord> load_training_records(const std::filesystem::path& path) {
  std::vector<TrainingRecord> records;
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) records.push_back(parse_training_record(line));
  }
  return records;
}

}  // namespace pocoti::synth

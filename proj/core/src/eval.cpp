#include "pocoti/eval.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "json.hpp"
#include "pocoti/prompts.hpp"
#include "pocoti/structured.hpp"

namespace pocoti::eval {

using json = nlohmann::ordered_json;
using gateway::ModelRequest;
using gateway::Role;
namespace ctx = prompts::ctx;

std::string_view to_string(Benchmark b) {
  switch (b) {
    case Benchmark::closed_set: return "closed_set";
    case Benchmark::open_ended: return "open_ended";
    case Benchmark::captioning: return "captioning";
  }
  return "?";
}

std::string_view to_string(PromptType p) {
  switch (p) {
    case PromptType::instruction: return "instruction";
    case PromptType::completion: return "completion";
    case PromptType::caption: return "caption";
  }
  return "?";
}

Benchmark benchmark_from_string(std::string_view s) {
  if (s == "closed_set") return Benchmark::closed_set;
  if (s == "open_ended") return Benchmark::open_ended;
  if (s == "captioning") return Benchmark::captioning;
  throw ValidationError("unknown benchmark kind: " + std::string(s));
}

PromptType prompt_type_from_string(std::string_view s) {
  if (s == "instruction") return PromptType::instruction;
  if (s == "completion") return PromptType::completion;
  if (s == "caption") return PromptType::caption;
  throw ValidationError("unknown prompt type: " + std::string(s));
}

std::string_view subject_prompt(PromptType p) {
  switch (p) {
    case PromptType::instruction: return "What is this?";
    case PromptType::completion: return "This is an object of";
    case PromptType::caption: return "Caption this 3D model in detail.";
  }
  return "";
}

void EvalTask::validate() const {
  if (benchmark == Benchmark::closed_set) {
    if (label_set.empty()) throw ValidationError("closed-set task " + name + " has an empty label set");
    const std::set<std::string> labels(label_set.begin(), label_set.end());
    if (labels.size() != label_set.size()) throw ValidationError("label set of " + name + " has duplicates");
    for (const auto& item : items) {
      if (!labels.count(item.ground_truth)) {
        throw ValidationError("ground truth \"" + item.ground_truth + "\" of " + item.cloud_id + " is not in the label set");
      }
    }
  }
  if ((benchmark == Benchmark::captioning) != (prompt_type == PromptType::caption)) {
    throw ValidationError("task " + name + ": the caption prompt type goes with the captioning benchmark only");
  }
  for (const auto& item : items) {
    if (item.cloud_id.empty()) throw ValidationError("task " + name + " has an item without cloud_id");
  }
}

std::string serialize_task(const EvalTask& task) {
  json h;
  h["kind"] = "eval_task";
  h["schema_version"] = 1;
  h["name"] = task.name;
  h["benchmark"] = to_string(task.benchmark);
  h["prompt_type"] = to_string(task.prompt_type);
  h["label_set"] = task.label_set;
  std::string out = h.dump() + "\n";
  for (const auto& item : task.items) {
    json j;
    j["cloud_id"] = item.cloud_id;
    j["ground_truth"] = item.ground_truth;
    out += j.dump() + "\n";
  }
  return out;
}

EvalTask parse_task(std::string_view text) {
  EvalTask task;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  try {
    while (std::getline(in, line)) {
      ++lineno;
      if (trim(line).empty()) continue;
      const auto j = nlohmann::json::parse(line);
      if (!header) {
        if (j.value("kind", "") != "eval_task") throw ValidationError("eval task file must start with an eval_task header");
        if (j.value("schema_version", 0) != 1) throw ValidationError("unsupported eval task schema version");
        task.name = j.value("name", "");
        task.benchmark = benchmark_from_string(j.at("benchmark").get<std::string>());
        task.prompt_type = prompt_type_from_string(j.at("prompt_type").get<std::string>());
        task.label_set = j.value("label_set", std::vector<std::string>{});
        header = true;
        continue;
      }
      task.items.push_back({j.at("cloud_id").get<std::string>(), j.at("ground_truth").get<std::string>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("eval task line " + std::to_string(lineno) + ": " + e.what());
  }
  if (!header) throw ValidationError("eval task file has no header");
  task.validate();
  return task;
}

EvalTask load_task(const std::filesystem::path& path) { return parse_task(read_file(path)); }

void save_task(const EvalTask& task, const std::filesystem::path& path) {
  task.validate();
  write_file_atomic(path, serialize_task(task));
}

SubjectResponse query_subject(gateway::Gateway& gw, const std::string& cloud_id, PromptType type) {
  ModelRequest req;
  req.role = Role::subject_model;
  req.prompt_text = std::string(subject_prompt(type));
  req.metadata = {{"cloud_id", cloud_id}};
  req.context = {{ctx::task, prompts::task::subject},
                 {ctx::cloud_id, cloud_id},
                 {ctx::prompt_type, std::string(to_string(type))}};
  SubjectResponse out;
  try {
    out.text = gw.complete(req).text;
    out.answered = true;
  } catch (const gateway::ProviderError& e) {
    out.error = e.what();
  }
  return out;
}

std::vector<JudgeScore> judge_classification(gateway::Gateway& gw, const SubjectResponse& response,
                                             const std::string& ground_truth, const EvalTask& task,
                                             const std::vector<std::string>& judges) {
  if (judges.empty()) throw ValidationError("at least one judge is required");
  if (task.benchmark == Benchmark::captioning) throw ValidationError("captioning tasks are scored with score_caption");
  std::string label_lines;
  for (const auto& l : task.label_set) label_lines += l + "\n";
  const std::set<std::string> labels(task.label_set.begin(), task.label_set.end());

  std::vector<JudgeScore> scores;
  for (const auto& judge : judges) {
    JudgeScore s;
    s.judge_id = judge;
    if (!response.answered) {
      s.flags.push_back("unanswered");
      scores.push_back(std::move(s));
      continue;
    }
    ModelRequest req;
    req.role = Role::judge;
    req.provider_id = judge;
    if (task.benchmark == Benchmark::closed_set) {
      req.prompt_text = prompts::fill(prompts::judge_closed_set_prompt().text,
                                      {{"label_set", label_lines}, {"response", response.text}});
      req.context = {{ctx::task, prompts::task::judge_closed}, {ctx::response, response.text},
                     {ctx::label_set, label_lines}};
    } else {
      req.prompt_text = prompts::fill(prompts::judge_open_ended_prompt().text,
                                      {{"ground_truth", ground_truth}, {"response", response.text}});
      req.context = {{ctx::task, prompts::task::judge_open}, {ctx::response, response.text},
                     {ctx::ground_truth, ground_truth}};
    }
    try {
      s.raw_text = gw.complete(req).text;
      if (task.benchmark == Benchmark::closed_set) {
        static const auto schema = gateway::Schema{}.require("label");
        s.label = trim(gateway::parse_structured(s.raw_text, schema).get("label"));
        if (!labels.count(s.label)) {
          s.flags.push_back("out_of_set");
        } else {
          s.correct = s.label == ground_truth;
        }
      } else {
        static const auto schema = gateway::Schema{}.require("verdict", {"T", "F"});
        s.label = gateway::parse_structured(s.raw_text, schema).get("verdict");
        s.correct = s.label == "T";
      }
    } catch (const gateway::StructuredParseError&) {
      s.flags.push_back("unparseable");
    } catch (const gateway::ProviderError& e) {
      s.raw_text = e.what();
      s.flags.push_back("provider_failed");
    }
    scores.push_back(std::move(s));
  }
  return scores;
}

double equal_weight_mean(const std::vector<double>& values) {
  if (values.empty()) throw ValidationError("mean of an empty set");
  double sum = 0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

CaptionScores aggregate_caption_scores(std::vector<JudgeScore> scores) {
  CaptionScores out;
  std::vector<double> valid;
  for (const auto& s : scores) {
    if (s.score) valid.push_back(*s.score);
  }
  out.valid = valid.size();
  if (!valid.empty()) out.average = equal_weight_mean(valid);
  if (valid.size() < scores.size()) {
    out.coverage_note = std::to_string(valid.size()) + " of " + std::to_string(scores.size()) +
                        " judges returned a valid score";
  }
  out.scores = std::move(scores);
  return out;
}

CaptionScores score_caption(gateway::Gateway& gw, const std::string& candidate, const std::string& reference,
                            const std::vector<std::string>& judges) {
  if (judges.empty()) throw ValidationError("at least one judge is required");
  static const auto schema = gateway::Schema{}.number("score", 0.0, 100.0);
  std::vector<JudgeScore> scores;
  for (const auto& judge : judges) {
    JudgeScore s;
    s.judge_id = judge;
    ModelRequest req;
    req.role = Role::judge;
    req.provider_id = judge;
    req.prompt_text = prompts::fill(prompts::judge_caption_prompt().text,
                                    {{"reference", reference}, {"candidate", candidate}});
    req.context = {{ctx::task, prompts::task::judge_caption}, {ctx::candidate, candidate},
                   {ctx::reference, reference}};
    try {
      s.raw_text = gw.complete(req).text;
      s.score = gateway::parse_structured(s.raw_text, schema).number("score");
    } catch (const gateway::StructuredParseError&) {
      s.flags.push_back("unscorable");
    } catch (const gateway::ProviderError& e) {
      s.raw_text = e.what();
      s.flags.push_back("unscorable");
      s.flags.push_back("provider_failed");
    }
    scores.push_back(std::move(s));
  }
  return aggregate_caption_scores(std::move(scores));
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw ValidationError("cosine of vectors with dimensions " + std::to_string(a.size()) + " and " +
                          std::to_string(b.size()));
  }
  if (a.empty()) throw ValidationError("cosine of empty vectors");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) throw ValidationError("cosine of a zero-norm vector");
  if (!std::isfinite(dot) || !std::isfinite(na) || !std::isfinite(nb)) throw ValidationError("cosine of non-finite vectors");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

ReferenceCaptions gen_reference_captions(gateway::Gateway& gw, const std::vector<std::string>& cloud_ids,
                                         const quality::ViewLookup& views, std::size_t workers) {
  std::vector<std::optional<std::string>> captions(cloud_ids.size());
  std::vector<std::string> errors(cloud_ids.size());
  parallel_for(cloud_ids.size(), workers, [&](std::size_t i) {
    try {
      const auto v = views(cloud_ids[i]);
      ModelRequest req;
      req.role = Role::caption_gt_generator;
      req.prompt_text = prompts::reference_caption_prompt().text;
      req.images = {v.png.begin(), v.png.end()};
      req.context = {{ctx::task, prompts::task::caption_gt}, {ctx::cloud_id, cloud_ids[i]}};
      static const auto schema = gateway::Schema{}.require("caption");
      captions[i] = trim(gateway::parse_structured(gw.complete(req).text, schema).get("caption"));
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  });
  ReferenceCaptions out;
  for (std::size_t i = 0; i < cloud_ids.size(); ++i) {
    if (captions[i]) {
      out.captions.push_back({cloud_ids[i], *captions[i]});
    } else {
      out.excluded.emplace_back(cloud_ids[i], errors[i]);
    }
  }
  return out;
}

TaskResult run_task(gateway::Gateway& gw, const EvalTask& task, const EvalOptions& options) {
  task.validate();
  if (options.judges.empty()) throw ValidationError("at least one judge is required");
  TaskResult result;
  result.dataset = task.name;
  result.benchmark = task.benchmark;
  result.prompt_type = task.prompt_type;
  result.judges = options.judges;
  result.similarity_providers = options.similarity_providers;
  result.items.resize(task.items.size());
  parallel_for(task.items.size(), options.workers, [&](std::size_t i) {
    auto& rec = result.items[i];
    rec.cloud_id = task.items[i].cloud_id;
    rec.ground_truth = task.items[i].ground_truth;
    rec.response = query_subject(gw, rec.cloud_id, task.prompt_type);
    if (task.benchmark != Benchmark::captioning) {
      rec.judges = judge_classification(gw, rec.response, rec.ground_truth, task, options.judges);
      return;
    }
    if (!rec.response.answered) {
      // Unanswered captions score 0 with every judge.
      for (const auto& j : options.judges) {
        JudgeScore s;
        s.judge_id = j;
        s.score = 0.0;
        s.flags.push_back("unanswered");
        rec.judges.push_back(std::move(s));
      }
      rec.caption_average = 0.0;
      for (const auto& p : options.similarity_providers) rec.similarity[p] = 0.0;
      return;
    }
    auto cs = score_caption(gw, rec.response.text, rec.ground_truth, options.judges);
    rec.judges = std::move(cs.scores);
    rec.caption_average = cs.average;
    if (!cs.coverage_note.empty()) rec.notes.push_back(cs.coverage_note);
    for (const auto& p : options.similarity_providers) {
      try {
        const auto e = gw.embed({rec.response.text, rec.ground_truth}, p);
        rec.similarity[p] = cosine_similarity(e[0], e[1]);
      } catch (const Error& err) {
        rec.notes.push_back("similarity " + p + " unavailable: " + err.what());
      }
    }
  });
  return result;
}

EvalReport assemble_report(std::vector<ClassificationCell> cells, std::map<std::string, double> caption_judge_means,
                           std::map<std::string, double> similarity_means) {
  EvalReport report;
  std::vector<double> cell_values;
  for (auto& c : cells) {
    std::vector<double> per_judge;
    for (const auto& [judge, acc] : c.judge_accuracy) per_judge.push_back(acc);
    c.accuracy = equal_weight_mean(per_judge);
    cell_values.push_back(c.accuracy);
  }
  if (!cell_values.empty()) report.classification_average = equal_weight_mean(cell_values);
  report.cells = std::move(cells);
  if (!caption_judge_means.empty()) {
    std::vector<double> means;
    for (const auto& [judge, m] : caption_judge_means) means.push_back(m);
    report.caption_average = equal_weight_mean(means);
  }
  report.caption_judge_means = std::move(caption_judge_means);
  report.similarity_means = std::move(similarity_means);
  return report;
}

EvalReport build_report(const std::vector<TaskResult>& results) {
  std::vector<ClassificationCell> cells;
  std::map<std::string, std::vector<double>> caption_scores;
  std::map<std::string, std::vector<double>> similarity;
  std::vector<std::string> notes;
  for (const auto& r : results) {
    if (r.benchmark != Benchmark::captioning) {
      if (r.items.empty()) {
        notes.push_back("task " + r.dataset + " has no items; left out of the average");
        continue;
      }
      ClassificationCell cell;
      cell.dataset = r.dataset;
      cell.prompt_type = r.prompt_type;
      for (const auto& judge : r.judges) {
        std::size_t correct = 0;
        for (const auto& item : r.items) {
          for (const auto& s : item.judges) {
            if (s.judge_id == judge && s.correct) ++correct;
          }
        }
        cell.judge_accuracy[judge] = 100.0 * static_cast<double>(correct) / static_cast<double>(r.items.size());
      }
      cells.push_back(std::move(cell));
      continue;
    }
    for (const auto& item : r.items) {
      if (!item.caption_average) {
        notes.push_back("caption of " + item.cloud_id + " in " + r.dataset + " was unscorable by every judge; excluded");
        continue;
      }
      for (const auto& n : item.notes) notes.push_back(item.cloud_id + ": " + n);
      for (const auto& s : item.judges) {
        if (s.score) caption_scores[s.judge_id].push_back(*s.score);
      }
      for (const auto& [p, v] : item.similarity) similarity[p].push_back(v);
    }
  }
  std::map<std::string, double> judge_means, sim_means;
  for (const auto& [j, v] : caption_scores) judge_means[j] = equal_weight_mean(v);
  for (const auto& [p, v] : similarity) sim_means[p] = equal_weight_mean(v);
  auto report = assemble_report(std::move(cells), std::move(judge_means), std::move(sim_means));
  report.notes = std::move(notes);
  report.tasks = results;
  return report;
}

namespace {

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

json score_json(const JudgeScore& s) {
  json j;
  j["judge_id"] = s.judge_id;
  j["correct"] = s.correct;
  j["score"] = s.score ? json(*s.score) : json(nullptr);
  j["label"] = s.label;
  j["flags"] = s.flags;
  j["raw_text"] = s.raw_text;
  return j;
}

}  // namespace

std::string EvalReport::to_json() const {
  json j;
  j["cells"] = json::array();
  for (const auto& c : cells) {
    j["cells"].push_back({{"dataset", c.dataset},
                          {"prompt_type", to_string(c.prompt_type)},
                          {"judge_accuracy", c.judge_accuracy},
                          {"accuracy", c.accuracy}});
  }
  j["classification_average"] = classification_average ? json(*classification_average) : json(nullptr);
  j["caption_judge_means"] = caption_judge_means;
  j["caption_average"] = caption_average ? json(*caption_average) : json(nullptr);
  j["similarity_means"] = similarity_means;
  j["notes"] = notes;
  j["items"] = json::array();
  for (const auto& t : tasks) {
    for (const auto& item : t.items) {
      json rec;
      rec["dataset"] = t.dataset;
      rec["benchmark"] = to_string(t.benchmark);
      rec["prompt_type"] = to_string(t.prompt_type);
      rec["cloud_id"] = item.cloud_id;
      rec["ground_truth"] = item.ground_truth;
      rec["response"] = item.response.text;
      rec["answered"] = item.response.answered;
      rec["judges"] = json::array();
      for (const auto& s : item.judges) rec["judges"].push_back(score_json(s));
      rec["caption_average"] = item.caption_average ? json(*item.caption_average) : json(nullptr);
      rec["similarity"] = item.similarity;
      j["items"].push_back(std::move(rec));
    }
  }
  return j.dump(2, ' ', false, nlohmann::json::error_handler_t::replace) + "\n";
}

std::string EvalReport::to_text() const {
  std::ostringstream out;
  if (!cells.empty()) {
    out << "Classification accuracy (%)\n";
    for (const auto& c : cells) {
      out << "  " << c.dataset << " [" << to_string(c.prompt_type) << "]: " << fixed2(c.accuracy) << "  (";
      bool first = true;
      for (const auto& [judge, acc] : c.judge_accuracy) {
        out << (first ? "" : ", ") << judge << " " << fixed2(acc);
        first = false;
      }
      out << ")\n";
    }
    out << "  Average: " << fixed2(*classification_average) << "\n";
  }
  if (!caption_judge_means.empty()) {
    out << "Captioning\n";
    for (const auto& [judge, m] : caption_judge_means) out << "  " << judge << ": " << fixed2(m) << "\n";
    out << "  Average: " << fixed2(*caption_average) << "\n";
  }
  if (!similarity_means.empty()) {
    out << "Similarity (mean cosine x100)\n";
    for (const auto& [p, m] : similarity_means) out << "  " << p << ": " << fixed2(100.0 * m) << "\n";
  }
  for (const auto& n : notes) out << "note: " << n << "\n";
  return out.str();
}

}  // namespace pocoti::eval

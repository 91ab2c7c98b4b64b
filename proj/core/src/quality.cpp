#include "pocoti/quality.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "json.hpp"
#include "pocoti/prompts.hpp"
#include "pocoti/structured.hpp"

namespace pocoti::quality {

using gateway::ModelRequest;
using gateway::Role;
namespace ctx = prompts::ctx;

std::string_view to_string(Label l) {
  switch (l) {
    case Label::keep: return "KEEP";
    case Label::improve: return "IMPROVE";
    case Label::invalid: return "INVALID";
  }
  return "?";
}

namespace {

const gateway::Schema& verdict_schema() {
  static const auto schema = gateway::Schema{}
                                 .require("label", {"KEEP", "IMPROVE", "INVALID"})
                                 .require("relevance_reason")
                                 .require("accuracy_reason")
                                 .require("completeness_reason")
                                 .optional("refined_answer");
  return schema;
}

const gateway::Schema& refinement_schema() {
  static const auto schema = gateway::Schema{}
                                 .require("decision", {"answer_refined", "pair_regenerated"})
                                 .optional("instruction")
                                 .require("answer")
                                 .optional("rationale");
  return schema;
}

std::vector<std::string> image_list(const render::EncodedViews& views) {
  return {views.png.begin(), views.png.end()};
}

std::string reask_suffix(const std::string& error) {
  return "\n\nYour previous reply could not be used (" + error +
         "). Reply again with exactly one result block in the format above.";
}

}  // namespace

QualityVerdict parse_verdict(std::string_view text) {
  const auto doc = gateway::parse_structured(text, verdict_schema());
  QualityVerdict v;
  const auto& label = doc.get("label");
  v.label = label == "KEEP" ? Label::keep : label == "IMPROVE" ? Label::improve : Label::invalid;
  v.relevance_reason = trim(doc.get("relevance_reason"));
  v.accuracy_reason = trim(doc.get("accuracy_reason"));
  v.completeness_reason = trim(doc.get("completeness_reason"));
  if (v.label == Label::improve) {
    const auto refined = doc.find("refined_answer");
    if (!refined || trim(*refined).empty()) {
      throw gateway::StructuredParseError(gateway::ParseErrorKind::missing_field,
                                          "IMPROVE verdict without refined_answer", std::string(text));
    }
    v.refined_answer = trim(*refined);
  }
  return v;
}

EvaluationResult evaluate_sample(gateway::Gateway& gw, const render::EncodedViews& views,
                                 const data::InstructionSample& sample, const char* task) {
  if (views.cloud_id != sample.cloud_id) {
    throw ValidationError("views for " + views.cloud_id + " passed for sample of cloud " + sample.cloud_id);
  }
  ModelRequest req;
  req.role = Role::evaluator;
  req.prompt_text = prompts::fill(prompts::evaluator_prompt().text,
                                  {{"instruction", sample.instruction}, {"answer", sample.answer}});
  req.images = image_list(views);
  req.context = {{ctx::task, task},
                 {ctx::sample_id, sample.sample_id},
                 {ctx::cloud_id, sample.cloud_id},
                 {ctx::instruction, sample.instruction},
                 {ctx::answer, sample.answer},
                 {ctx::attempt, "1"}};
  const auto base_prompt = req.prompt_text;

  EvaluationResult result;
  for (int attempt = 1; attempt <= 2; ++attempt) {
    result.attempts = attempt;
    try {
      const auto resp = gw.complete(req);
      result.raw_text = resp.text;
      result.verdict = parse_verdict(resp.text);
      // An IMPROVE whose A' matches A changes nothing; record it as KEEP.
      if (result.verdict->label == Label::improve &&
          normalize_text(*result.verdict->refined_answer) == normalize_text(sample.answer)) {
        result.verdict->label = Label::keep;
        result.verdict->refined_answer.reset();
      }
      result.error.reset();
      return result;
    } catch (const gateway::StructuredParseError& e) {
      result.error = e.what();
      req.prompt_text = base_prompt + reask_suffix(e.what());
      req.context[ctx::attempt] = "2";
    } catch (const gateway::ProviderError& e) {
      result.error = e.what();
      return result;
    }
  }
  return result;
}

void ReferenceDatabase::add(const std::string& cloud_id, ReferencePair pair) {
  auto& list = entries_[cloud_id];
  const auto pos = std::upper_bound(list.begin(), list.end(), pair.sample_id,
                                    [](const std::string& id, const ReferencePair& p) { return id < p.sample_id; });
  list.insert(pos, std::move(pair));
}

const std::vector<ReferencePair>& ReferenceDatabase::lookup(const std::string& cloud_id) const {
  static const std::vector<ReferencePair> empty;
  const auto it = entries_.find(cloud_id);
  return it == entries_.end() ? empty : it->second;
}

std::size_t ReferenceDatabase::size() const {
  std::size_t n = 0;
  for (const auto& [_, list] : entries_) n += list.size();
  return n;
}

ReferenceDatabase build_reference_db(const data::InstructionCorpus& corpus,
                                     const std::vector<std::optional<QualityVerdict>>& verdicts) {
  if (verdicts.size() != corpus.samples.size()) {
    throw ValidationError("build_reference_db: verdict count does not match corpus size");
  }
  ReferenceDatabase db;
  for (std::size_t i = 0; i < verdicts.size(); ++i) {
    const auto& v = verdicts[i];
    if (!v || v->label == Label::invalid) continue;
    const auto& s = corpus.samples[i];
    if (v->label == Label::keep) {
      db.add(s.cloud_id, {s.sample_id, s.instruction, s.answer, "kept"});
    } else {
      db.add(s.cloud_id, {s.sample_id, s.instruction, *v->refined_answer, "improved"});
    }
  }
  return db;
}

bool RefinementResult::has_flag(std::string_view f) const {
  return std::find(flags.begin(), flags.end(), f) != flags.end();
}

bool duplicates_reference(const std::string& instruction, const std::string& answer,
                          const std::vector<ReferencePair>& references) {
  const auto ni = normalize_text(instruction);
  const auto na = normalize_text(answer);
  return std::any_of(references.begin(), references.end(), [&](const ReferencePair& r) {
    return normalize_text(r.instruction) == ni && normalize_text(r.answer) == na;
  });
}

RefinementResult refine_invalid(gateway::Gateway& gw, const data::InstructionSample& sample,
                                const render::EncodedViews& views,
                                const std::vector<ReferencePair>& references) {
  RefinementResult result;
  if (references.empty()) result.flags.emplace_back("no_reference");

  std::string ref_text;
  if (references.empty()) {
    ref_text = "(none available for this object)";
  } else {
    for (std::size_t i = 0; i < references.size(); ++i) {
      ref_text += std::to_string(i + 1) + ". Q: " + references[i].instruction + "\n   A: " + references[i].answer + "\n";
    }
  }
  std::map<std::string, std::string> values{{"references", ref_text},
                                            {"instruction", sample.instruction},
                                            {"answer", sample.answer},
                                            {"distinctness_note", ""}};
  ModelRequest req;
  req.role = Role::evaluator;
  req.images = image_list(views);
  req.context = {{ctx::task, prompts::task::refine_invalid},
                 {ctx::sample_id, sample.sample_id},
                 {ctx::cloud_id, sample.cloud_id},
                 {ctx::instruction, sample.instruction},
                 {ctx::answer, sample.answer},
                 {ctx::references, std::to_string(references.size())},
                 {ctx::attempt, "1"}};

  // One retry covers either an unparseable reply or a duplicate regeneration.
  std::string reask;
  bool duplicate = false;
  for (int attempt = 1; attempt <= 2; ++attempt) {
    result.attempts = attempt;
    req.prompt_text = prompts::fill(prompts::reference_refinement_prompt().text, values) + reask;
    req.context[ctx::attempt] = std::to_string(attempt);
    try {
      const auto resp = gw.complete(req);
      result.raw_text = resp.text;
      const auto doc = gateway::parse_structured(resp.text, refinement_schema());
      RefinementOutcome out;
      out.kind = doc.get("decision") == "answer_refined" ? RefinementKind::answer_refined
                                                         : RefinementKind::pair_regenerated;
      out.answer = trim(doc.get("answer"));
      out.rationale = trim(doc.find("rationale").value_or(""));
      if (out.kind == RefinementKind::answer_refined) {
        out.instruction = sample.instruction;
      } else {
        const auto instr = trim(doc.find("instruction").value_or(""));
        if (instr.empty()) {
          throw gateway::StructuredParseError(gateway::ParseErrorKind::missing_field,
                                              "pair_regenerated without instruction", resp.text);
        }
        out.instruction = instr;
        if (duplicates_reference(out.instruction, out.answer, references)) {
          duplicate = true;
          values["distinctness_note"] =
              "\nYour previous proposal repeated a verified pair. The new question and answer must not match "
              "any verified pair, even after ignoring case and spacing.\n";
          continue;
        }
      }
      duplicate = false;
      result.outcome = out;
      return result;
    } catch (const gateway::StructuredParseError& e) {
      duplicate = false;
      reask = reask_suffix(e.what());
    } catch (const gateway::ProviderError& e) {
      result.raw_text = e.what();
      duplicate = false;
      break;
    }
  }
  result.flags.emplace_back(duplicate ? "duplicate_regeneration" : "unparseable");
  return result;
}

std::string Stage1Report::to_json() const {
  nlohmann::ordered_json j;
  j["input_count"] = input_count;
  j["refinement_skipped"] = refinement_skipped;
  j["label_counts"] = label_counts;
  j["outcome_counts"] = outcome_counts;
  j["reason_histograms"] = reason_histograms;
  j["flags"] = {{"unevaluable", unevaluable},
                {"duplicate_regeneration", duplicate_regeneration},
                {"no_reference", no_reference}};
  return j.dump(2, ' ', false, nlohmann::ordered_json::error_handler_t::replace) + "\n";
}

std::string Stage1Report::to_text() const {
  std::ostringstream out;
  out << "Stage 1 report\n";
  out << "  input samples: " << input_count << (refinement_skipped ? " (refinement skipped)" : "") << "\n";
  out << "  verdicts:";
  for (const auto& [k, v] : label_counts) out << " " << k << "=" << v;
  out << "\n  outcomes:";
  for (const auto& [k, v] : outcome_counts) out << " " << k << "=" << v;
  out << "\n";
  for (const auto& [dim, hist] : reason_histograms) {
    std::vector<std::pair<std::size_t, std::string>> top;
    for (const auto& [reason, n] : hist) top.emplace_back(n, reason);
    std::sort(top.begin(), top.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    out << "  " << dim << " reasons (top " << std::min<std::size_t>(top.size(), 5) << "):\n";
    for (std::size_t i = 0; i < top.size() && i < 5; ++i) {
      out << "    " << top[i].first << "  " << top[i].second << "\n";
    }
  }
  out << "  flags: unevaluable=" << unevaluable.size()
      << " duplicate_regeneration=" << duplicate_regeneration.size()
      << " no_reference=" << no_reference.size() << "\n";
  return out.str();
}

Stage1Result run_stage1(gateway::Gateway& gw, const data::InstructionCorpus& corpus,
                        const ViewLookup& views, const Stage1Options& options) {
  using data::LineageRecord;
  namespace stage = data::stage;
  Stage1Result result;
  result.corpus.name = corpus.name;
  result.corpus.schema_version = corpus.schema_version;
  auto& report = result.report;
  report.input_count = corpus.samples.size();
  for (const char* k : {"kept", "improved", "answer_refined", "pair_regenerated", "unevaluable"}) {
    report.outcome_counts[k] = 0;
  }

  if (options.disable_refinement) {
    report.refinement_skipped = true;
    for (auto s : corpus.samples) {
      s.lineage.push_back(LineageRecord{std::string(stage::refinement_skipped), {}, {}, {}, {}, {}});
      result.corpus.samples.push_back(std::move(s));
    }
    return result;
  }

  const auto n = corpus.samples.size();
  std::vector<EvaluationResult> evals(n);
  parallel_for(n, options.workers, [&](std::size_t i) {
    const auto& s = corpus.samples[i];
    evals[i] = evaluate_sample(gw, views(s.cloud_id), s);
  });

  if (options.verify_improved) {
    parallel_for(n, options.workers, [&](std::size_t i) {
      auto& v = evals[i].verdict;
      if (!v || v->label != Label::improve) return;
      auto candidate = corpus.samples[i];
      candidate.answer = *v->refined_answer;
      const auto check = evaluate_sample(gw, views(candidate.cloud_id), candidate, prompts::task::verify_improved);
      if (!check.verdict) return;  // verification unavailable: keep the single-pass A'
      if (check.verdict->label == Label::invalid) {
        v->label = Label::invalid;
        v->refined_answer.reset();
      } else if (check.verdict->label == Label::improve) {
        v->refined_answer = check.verdict->refined_answer;
      }
    });
  }

  std::vector<std::optional<QualityVerdict>> verdicts(n);
  for (std::size_t i = 0; i < n; ++i) {
    verdicts[i] = evals[i].verdict;
    if (const auto& v = verdicts[i]) {
      ++report.label_counts[std::string(to_string(v->label))];
      ++report.reason_histograms["relevance"][normalize_text(v->relevance_reason)];
      ++report.reason_histograms["accuracy"][normalize_text(v->accuracy_reason)];
      ++report.reason_histograms["completeness"][normalize_text(v->completeness_reason)];
    }
  }

  const auto db = build_reference_db(corpus, verdicts);

  std::vector<RefinementResult> refinements(n);
  parallel_for(n, options.workers, [&](std::size_t i) {
    const auto& v = verdicts[i];
    if (!v || v->label != Label::invalid) return;
    const auto& s = corpus.samples[i];
    refinements[i] = refine_invalid(gw, s, views(s.cloud_id), db.lookup(s.cloud_id));
  });

  std::set<std::string> used_ids;
  for (const auto& s : corpus.samples) used_ids.insert(s.sample_id);
  auto assign_id = [&](data::InstructionSample& s, const std::string& prior) {
    auto id = data::make_sample_id(s.cloud_id, s.instruction, s.answer, s.source);
    if (used_ids.count(id)) id = content_hash({id, prior}, 16);
    used_ids.insert(id);
    s.sample_id = id;
  };

  for (std::size_t i = 0; i < n; ++i) {
    const auto& original = corpus.samples[i];
    const auto& v = verdicts[i];
    if (!v) {
      report.unevaluable.push_back(original.sample_id);
      ++report.outcome_counts["unevaluable"];
      result.manual_review.push_back({original, "unevaluable", evals[i].raw_text});
      continue;
    }
    auto s = original;
    const std::string label(to_string(v->label));
    switch (v->label) {
      case Label::keep:
        // Re-verified samples stay byte-identical.
        if (!data::has_stage1_outcome(s.lineage)) {
          s.lineage.push_back(LineageRecord{std::string(stage::kept), {}, label, {}, {}, {}});
        }
        ++report.outcome_counts["kept"];
        break;
      case Label::improve:
        s.answer = *v->refined_answer;
        assign_id(s, original.sample_id);
        s.lineage.push_back(LineageRecord{std::string(stage::improved), original.sample_id, label, {},
                                          original.answer, {}});
        ++report.outcome_counts["improved"];
        break;
      case Label::invalid: {
        const auto& ref = refinements[i];
        if (ref.has_flag("no_reference")) report.no_reference.push_back(original.sample_id);
        if (!ref.outcome) {
          const bool dup = ref.has_flag("duplicate_regeneration");
          if (dup) report.duplicate_regeneration.push_back(original.sample_id);
          report.unevaluable.push_back(original.sample_id);
          ++report.outcome_counts["unevaluable"];
          result.manual_review.push_back(
              {original, dup ? "duplicate_regeneration" : "unparseable_refinement", ref.raw_text});
          continue;
        }
        std::vector<std::string> flags;
        if (ref.has_flag("no_reference")) flags.emplace_back("no_reference");
        if (ref.outcome->kind == RefinementKind::answer_refined) {
          s.answer = ref.outcome->answer;
          assign_id(s, original.sample_id);
          s.lineage.push_back(LineageRecord{std::string(stage::answer_refined), original.sample_id, label, {},
                                            original.answer, flags});
          ++report.outcome_counts["answer_refined"];
        } else {
          s.instruction = ref.outcome->instruction;
          s.answer = ref.outcome->answer;
          s.source = data::Source::regenerated;
          assign_id(s, original.sample_id);
          s.lineage.push_back(LineageRecord{std::string(stage::pair_regenerated), original.sample_id, label,
                                            original.instruction, original.answer, flags});
          ++report.outcome_counts["pair_regenerated"];
        }
        break;
      }
    }
    result.corpus.samples.push_back(std::move(s));
  }
  return result;
}

}  // namespace pocoti::quality

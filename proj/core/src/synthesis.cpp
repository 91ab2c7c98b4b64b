#include "pocoti/synthesis.hpp"

#include <algorithm>
#include <fstream>

#include "json.hpp"
#include "pocoti/prompts.hpp"
#include "pocoti/structured.hpp"

namespace pocoti::synth {

using gateway::ModelRequest;
using gateway::Role;
namespace ctx = prompts::ctx;
using json = nlohmann::json;

namespace {

const gateway::Schema& cot_schema() {
  static const auto schema = gateway::Schema{}.require("reasoning").require("answer");
  return schema;
}

}  // namespace

CoTOutput parse_cot(std::string_view text, std::string_view ground_truth_answer) {
  const auto doc = gateway::parse_structured(text, cot_schema());
  CoTOutput out{trim(doc.get("reasoning")), trim(doc.get("answer"))};
  const auto r = normalize_text(out.reasoning);
  if (r == normalize_text(out.answer) || r == normalize_text(ground_truth_answer)) {
    throw gateway::StructuredParseError(gateway::ParseErrorKind::domain, "reasoning only restates the answer",
                                        std::string(text));
  }
  return out;
}

std::string cot_request_text(std::string_view prompt_text, std::string_view instruction, std::string_view answer) {
  std::string out(prompt_text);
  if (!out.empty() && out.back() != '\n') out.push_back('\n');
  out += "\nQuestion:\n";
  out += instruction;
  out += "\n\nGround-truth answer:\n";
  out += answer;
  out += "\n";
  return out;
}

CoTAttempt generate_cot(gateway::Gateway& gw, const render::EncodedViews& views,
                        const data::InstructionSample& sample, std::string_view prompt_text, int max_attempts) {
  if (views.cloud_id != sample.cloud_id) {
    throw ValidationError("views for " + views.cloud_id + " passed for sample of cloud " + sample.cloud_id);
  }
  ModelRequest req;
  req.role = Role::cot_generator;
  req.prompt_text = cot_request_text(prompt_text, sample.instruction, sample.answer);
  req.images = {views.png.begin(), views.png.end()};
  req.context = {{ctx::task, prompts::task::cot},
                 {ctx::sample_id, sample.sample_id},
                 {ctx::cloud_id, sample.cloud_id},
                 {ctx::instruction, sample.instruction},
                 {ctx::answer, sample.answer},
                 {ctx::attempt, "1"}};
  const auto base = req.prompt_text;

  CoTAttempt result;
  for (int attempt = 1; attempt <= std::max(1, max_attempts); ++attempt) {
    result.attempts = attempt;
    try {
      const auto resp = gw.complete(req);
      result.raw_text = resp.text;
      result.output = parse_cot(resp.text, sample.answer);
      result.error.reset();
      return result;
    } catch (const gateway::StructuredParseError& e) {
      result.error = e.what();
      req.prompt_text = base + "\n\nYour previous reply could not be used (" + e.what() +
                        "). Reply again with exactly one result block; the reasoning must explain, not restate, the answer.";
      req.context[ctx::attempt] = std::to_string(attempt + 1);
    } catch (const gateway::ProviderError& e) {
      result.error = e.what();
      result.provider_failed = true;
      return result;
    }
  }
  return result;
}

std::string_view to_string(SynthStatus s) {
  switch (s) {
    case SynthStatus::succeeded: return "succeeded";
    case SynthStatus::parse_failed: return "parse_failed";
    case SynthStatus::provider_failed: return "provider_failed";
  }
  return "?";
}

SynthesisOutcome synthesize_cot(gateway::Gateway& gw, const render::EncodedViews& views,
                                const data::InstructionSample& sample, const PromptRef& prompt) {
  if (!prompt.finalized) throw StateError("prompt " + prompt.prompt_id + " is not finalized");
  const auto attempt = generate_cot(gw, views, sample, prompt.text, 2);
  SynthesisOutcome out;
  out.raw_text = attempt.raw_text;
  out.attempts = attempt.attempts;
  out.error = attempt.error;
  if (!attempt.output) {
    out.status = attempt.provider_failed ? SynthStatus::provider_failed : SynthStatus::parse_failed;
    return out;
  }
  data::CoTSample cot;
  cot.sample_id = sample.sample_id;
  cot.cloud_id = sample.cloud_id;
  cot.instruction = sample.instruction;
  cot.reasoning = attempt.output->reasoning;
  cot.answer = sample.answer;  // the ground truth is authoritative
  cot.prompt_version_id = prompt.prompt_id;
  if (normalize_text(attempt.output->answer) != normalize_text(sample.answer)) cot.flags.push_back("answer_drift");
  cot.lineage = sample.lineage;
  data::LineageRecord rec;
  rec.stage = std::string(data::stage::cot_synthesized);
  rec.flags = cot.flags;
  cot.lineage.push_back(std::move(rec));
  out.sample = std::move(cot);
  return out;
}

data::CoTSample skipped_cot_sample(const data::InstructionSample& sample, const PromptRef& prompt) {
  data::CoTSample cot;
  cot.sample_id = sample.sample_id;
  cot.cloud_id = sample.cloud_id;
  cot.instruction = sample.instruction;
  cot.answer = sample.answer;
  cot.prompt_version_id = prompt.prompt_id;
  cot.flags = {"cot_skipped"};
  cot.lineage = sample.lineage;
  data::LineageRecord rec;
  rec.stage = std::string(data::stage::cot_skipped);
  cot.lineage.push_back(std::move(rec));
  return cot;
}

std::string SynthesisJob::to_json() const {
  nlohmann::ordered_json j;
  j["job_id"] = job_id;
  j["prompt_id"] = prompt_id;
  j["corpus_fingerprint"] = corpus_fingerprint;
  j["disable_cot"] = disable_cot;
  j["processed"] = processed;
  j["last_sample_id"] = last_sample_id ? json(*last_sample_id) : json(nullptr);
  j["succeeded"] = succeeded;
  j["parse_failed"] = parse_failed;
  j["provider_failed"] = provider_failed;
  j["records_written"] = records_written;
  j["output_bytes"] = output_bytes;
  j["complete"] = complete;
  j["skipped"] = nlohmann::ordered_json::array();
  for (const auto& s : skipped) {
    j["skipped"].push_back({{"sample_id", s.sample_id}, {"status", s.status}, {"error", s.error}});
  }
  return j.dump(2) + "\n";
}

SynthesisJob SynthesisJob::from_json(std::string_view text) {
  try {
    const auto j = json::parse(text);
    SynthesisJob job;
    job.job_id = j.at("job_id").get<std::string>();
    job.prompt_id = j.at("prompt_id").get<std::string>();
    job.corpus_fingerprint = j.at("corpus_fingerprint").get<std::string>();
    job.disable_cot = j.at("disable_cot").get<bool>();
    job.processed = j.at("processed").get<std::size_t>();
    if (!j.at("last_sample_id").is_null()) job.last_sample_id = j["last_sample_id"].get<std::string>();
    job.succeeded = j.at("succeeded").get<std::size_t>();
    job.parse_failed = j.at("parse_failed").get<std::size_t>();
    job.provider_failed = j.at("provider_failed").get<std::size_t>();
    job.records_written = j.at("records_written").get<std::size_t>();
    job.output_bytes = j.at("output_bytes").get<std::uint64_t>();
    job.complete = j.at("complete").get<bool>();
    for (const auto& s : j.at("skipped")) {
      job.skipped.push_back({s.at("sample_id").get<std::string>(), s.at("status").get<std::string>(),
                             s.at("error").get<std::string>()});
    }
    if (job.succeeded + job.parse_failed + job.provider_failed != job.processed) {
      throw IntegrityError("job counters do not sum to the processed count");
    }
    return job;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed job state: ") + e.what());
  }
}

namespace {

std::string corpus_fingerprint(const data::InstructionCorpus& corpus) {
  std::string ids;
  for (const auto& s : corpus.samples) {
    ids += s.sample_id;
    ids.push_back('\n');
  }
  return sha256_hex(ids).substr(0, 16);
}

}  // namespace

Stage2Result run_stage2(gateway::Gateway& gw, const data::InstructionCorpus& corpus,
                        const quality::ViewLookup& views, const PromptRef& prompt, const Stage2Paths& paths,
                        const Stage2Options& options) {
  namespace fs = std::filesystem;
  if (!prompt.finalized) throw StateError("stage 2 requires the finalized prompt; " + prompt.prompt_id + " is not");
  data::validate(corpus);

  SynthesisJob fresh;
  fresh.prompt_id = prompt.prompt_id;
  fresh.corpus_fingerprint = corpus_fingerprint(corpus);
  fresh.disable_cot = options.disable_cot;
  fresh.job_id = content_hash({fresh.corpus_fingerprint, prompt.prompt_id, sha256_hex(prompt.text),
                               options.disable_cot ? "no-cot" : "cot"});

  SynthesisJob job;
  const auto header = data::corpus_header_line("cot", options.corpus_name);
  if (fs::exists(paths.job_state)) {
    job = SynthesisJob::from_json(read_file(paths.job_state));
    if (job.job_id != fresh.job_id) {
      throw StateError("job state " + paths.job_state.string() + " belongs to another run (" + job.job_id + ")");
    }
    if (job.processed > corpus.samples.size()) throw IntegrityError("job cursor is past the end of the corpus");
    if (job.processed > 0 && corpus.samples[job.processed - 1].sample_id != job.last_sample_id) {
      throw IntegrityError("job cursor does not match the corpus order");
    }
    const auto size = fs::exists(paths.output) ? fs::file_size(paths.output) : 0;
    if (size < job.output_bytes) {
      throw IntegrityError("output " + paths.output.string() + " is shorter than the committed progress");
    }
    // Anything past the last committed record was written by a run that
    // died before saving its state; it is regenerated below.
    if (size > job.output_bytes) fs::resize_file(paths.output, job.output_bytes);
  } else {
    job = fresh;
    if (!paths.output.parent_path().empty()) fs::create_directories(paths.output.parent_path());
    write_file_atomic(paths.output, header);
    job.output_bytes = header.size();
    write_file_atomic(paths.job_state, job.to_json());
  }

  const std::size_t workers = std::max<std::size_t>(1, options.workers);
  const std::size_t window = workers * 4;
  while (job.processed < corpus.samples.size()) {
    const std::size_t begin = job.processed;
    const std::size_t end = std::min(corpus.samples.size(), begin + window);
    std::vector<SynthesisOutcome> outcomes(end - begin);
    if (options.disable_cot) {
      for (std::size_t i = begin; i < end; ++i) {
        outcomes[i - begin].sample = skipped_cot_sample(corpus.samples[i], prompt);
      }
    } else {
      parallel_for(end - begin, workers, [&](std::size_t k) {
        const auto& s = corpus.samples[begin + k];
        outcomes[k] = synthesize_cot(gw, views(s.cloud_id), s, prompt);
      });
    }
    // Commit strictly in input order so that output is independent of
    // worker scheduling and the cursor is a prefix length.
    for (std::size_t k = 0; k < outcomes.size(); ++k) {
      const auto& s = corpus.samples[begin + k];
      auto& o = outcomes[k];
      switch (o.status) {
        case SynthStatus::succeeded: {
          const auto line = data::serialize_sample_line(*o.sample);
          append_file_durable(paths.output, line);
          job.output_bytes += line.size();
          ++job.records_written;
          ++job.succeeded;
          if (options.crash_hook) options.crash_hook(CommitPoint::record_appended, job.processed);
          break;
        }
        case SynthStatus::parse_failed: ++job.parse_failed; break;
        case SynthStatus::provider_failed: ++job.provider_failed; break;
      }
      if (o.status != SynthStatus::succeeded) {
        job.skipped.push_back({s.sample_id, std::string(to_string(o.status)), o.error.value_or("")});
      }
      ++job.processed;
      job.last_sample_id = s.sample_id;
      write_file_atomic(paths.job_state, job.to_json());
      if (options.crash_hook) options.crash_hook(CommitPoint::state_saved, job.processed);
    }
  }
  if (!job.complete) {
    job.complete = true;
    write_file_atomic(paths.job_state, job.to_json());
  }

  auto loaded = data::load_cot_corpus(paths.output);
  if (loaded.truncated || loaded.corpus.samples.size() != job.records_written) {
    throw IntegrityError("output " + paths.output.string() + " does not match the job record count");
  }
  return {std::move(loaded.corpus), std::move(job)};
}

}  // namespace pocoti::synth

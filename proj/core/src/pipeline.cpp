#include "pocoti/pipeline.hpp"

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <cerrno>
#include <mutex>
#include <set>

#include "json.hpp"
#include "pocoti/cloud_io.hpp"
#include "pocoti/export.hpp"
#include "pocoti/hilpo.hpp"
#include "pocoti/prompts.hpp"
#include "pocoti/quality.hpp"
#include "pocoti/render.hpp"

namespace pocoti::pipeline {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

const StageRecord* RunManifest::stage(const std::string& name) const {
  for (const auto& s : stages) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

std::string RunManifest::to_json() const {
  ojson j;
  j["run_id"] = run_id;
  j["config_hash"] = config_hash;
  j["prompt_assets"] = prompt_assets;
  j["switches"] = {{"with_refinement", switches.with_refinement},
                   {"with_hilpo", switches.with_hilpo},
                   {"with_cot", switches.with_cot}};
  j["stages"] = ojson::array();
  for (const auto& s : stages) {
    ojson sj;
    sj["name"] = s.name;
    sj["completed"] = s.completed;
    sj["completed_at"] = s.completed_at;
    sj["outputs"] = s.outputs;
    sj["counters"] = s.counters;
    sj["notes"] = s.notes;
    j["stages"].push_back(std::move(sj));
  }
  j["final_prompt_id"] = final_prompt_id ? ojson(*final_prompt_id) : ojson(nullptr);
  j["hilpo_skipped"] = hilpo_skipped;
  return j.dump(2) + "\n";
}

RunManifest RunManifest::from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    RunManifest m;
    m.run_id = j.at("run_id").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.prompt_assets = j.at("prompt_assets").get<std::map<std::string, std::string>>();
    const auto& sw = j.at("switches");
    m.switches = {sw.at("with_refinement").get<bool>(), sw.at("with_hilpo").get<bool>(), sw.at("with_cot").get<bool>()};
    for (const auto& sj : j.at("stages")) {
      StageRecord s;
      s.name = sj.at("name").get<std::string>();
      s.completed = sj.at("completed").get<bool>();
      s.completed_at = sj.at("completed_at").get<std::string>();
      s.outputs = sj.at("outputs").get<std::map<std::string, std::string>>();
      s.counters = sj.at("counters").get<std::map<std::string, std::int64_t>>();
      s.notes = sj.at("notes").get<std::vector<std::string>>();
      m.stages.push_back(std::move(s));
    }
    if (!j.at("final_prompt_id").is_null()) m.final_prompt_id = j["final_prompt_id"].get<std::string>();
    m.hilpo_skipped = j.at("hilpo_skipped").get<bool>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("malformed run manifest: ") + e.what());
  }
}

std::vector<std::string> verify_manifest(const RunManifest& manifest, const RunLayout& layout) {
  std::vector<std::string> problems;
  for (const auto& s : manifest.stages) {
    if (!s.completed) continue;
    for (const auto& [rel, sum] : s.outputs) {
      const auto path = layout.root / rel;
      if (!fs::is_regular_file(path)) {
        problems.push_back(s.name + ": output " + rel + " is missing");
      } else if (sha256_hex(read_file(path)) != sum) {
        problems.push_back(s.name + ": output " + rel + " does not match its checksum");
      }
    }
  }
  return problems;
}

RunLock::RunLock(fs::path path) : path_(std::move(path)) {
  for (int attempt = 0; attempt < 2; ++attempt) {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd >= 0) {
      const auto pid = std::to_string(::getpid()) + "\n";
      const auto n = ::write(fd, pid.data(), pid.size());
      (void)n;
      ::close(fd);
      return;
    }
    if (errno != EEXIST) throw Error("cannot create lock " + path_.string());
    long holder = 0;
    try {
      holder = std::stol(read_file(path_));
    } catch (const std::exception&) {
      holder = 0;
    }
    const bool alive = holder > 0 && (::kill(static_cast<pid_t>(holder), 0) == 0 || errno == EPERM);
    if (alive) {
      throw StateError("outputs directory is locked by running process " + std::to_string(holder) + " (" +
                       path_.string() + ")");
    }
    fs::remove(path_);  // stale marker from a dead run
  }
  throw StateError("cannot acquire lock " + path_.string());
}

RunLock::~RunLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

namespace {

class AwaitingReview : public Error {
 public:
  using Error::Error;
};

struct RunContext {
  const PipelineConfig& config;
  RunLayout layout;
  gateway::Gateway& gw;
  RunManifest& manifest;
  const RunHooks& hooks;
};

std::string rel(const RunLayout& layout, const fs::path& p) { return fs::relative(p, layout.root).generic_string(); }

void record_output(StageRecord& s, const RunLayout& layout, const fs::path& p) {
  s.outputs[rel(layout, p)] = sha256_hex(read_file(p));
}

quality::ViewLookup view_lookup(const fs::path& dir) {
  auto cache = std::make_shared<std::map<std::string, render::EncodedViews>>();
  auto mutex = std::make_shared<std::mutex>();
  return [dir, cache, mutex](const std::string& id) {
    {
      std::lock_guard lock(*mutex);
      if (auto it = cache->find(id); it != cache->end()) return it->second;
    }
    auto v = render::read_views(id, dir);
    std::lock_guard lock(*mutex);
    return cache->emplace(id, std::move(v)).first->second;
  };
}

data::InstructionCorpus load_complete(const fs::path& p) {
  auto r = data::load_instruction_corpus(p);
  if (r.truncated) throw IntegrityError(p.string() + " is truncated");
  return std::move(r.corpus);
}

void stage_ingest(RunContext& ctx, StageRecord& s) {
  const data::CloudStore clouds(ctx.config.clouds);
  std::vector<data::InstructionCorpus> parts;
  std::string rejects;
  std::size_t reject_count = 0;
  for (const auto& in : ctx.config.corpora) {
    data::IngestOptions opts;
    opts.caption_instruction = ctx.config.caption_instruction;
    opts.known_clouds = &clouds.ids();
    auto r = data::ingest_instruction_records(read_file(in.path), in.source, opts, in.path.stem().string());
    for (const auto& rej : r.rejects) {
      rejects += nlohmann::json{{"file", in.path.string()}, {"line", rej.line}, {"reason", rej.reason}}.dump() + "\n";
      ++reject_count;
    }
    parts.push_back(std::move(r.corpus));
  }
  const auto merged = data::merge_corpora(parts, "ingested");
  fs::create_directories(ctx.layout.ingested().parent_path());
  data::save_corpus(merged, ctx.layout.ingested());
  write_file_atomic(ctx.layout.rejects(), rejects);
  record_output(s, ctx.layout, ctx.layout.ingested());
  record_output(s, ctx.layout, ctx.layout.rejects());
  s.counters["samples"] = static_cast<std::int64_t>(merged.samples.size());
  s.counters["rejected_records"] = static_cast<std::int64_t>(reject_count);
}

void stage_render(RunContext& ctx, StageRecord& s) {
  const auto corpus = load_complete(ctx.layout.ingested());
  std::set<std::string> ids;
  for (const auto& smp : corpus.samples) ids.insert(smp.cloud_id);
  const std::vector<std::string> list(ids.begin(), ids.end());
  const data::CloudStore clouds(ctx.config.clouds);
  fs::create_directories(ctx.layout.views());
  parallel_for(list.size(), ctx.config.budget, [&](std::size_t i) {
    const auto views = render::render_views(clouds.load(list[i]), ctx.config.render);
    render::write_views(render::encode_views(views), ctx.layout.views());
  });
  for (const auto& id : list) {
    for (std::size_t k = 1; k <= render::kViewCount; ++k) {
      record_output(s, ctx.layout, ctx.layout.views() / render::view_filename(id, k));
    }
  }
  s.counters["clouds"] = static_cast<std::int64_t>(list.size());
  s.counters["views"] = static_cast<std::int64_t>(list.size() * render::kViewCount);
}

void stage_stage1(RunContext& ctx, StageRecord& s) {
  const auto corpus = load_complete(ctx.layout.ingested());
  quality::Stage1Options opts;
  opts.disable_refinement = !ctx.config.stages.with_refinement;
  opts.verify_improved = ctx.config.verify_improved;
  opts.workers = ctx.config.budget;
  auto result = quality::run_stage1(ctx.gw, corpus, view_lookup(ctx.layout.views()), opts);
  result.corpus.name = "refined";
  data::save_corpus(result.corpus, ctx.layout.refined());
  fs::create_directories(ctx.layout.stage1_report().parent_path());
  write_file_atomic(ctx.layout.stage1_report(), result.report.to_json());
  std::string review;
  for (const auto& item : result.manual_review) {
    auto line = nlohmann::json::parse(data::serialize_sample_line(item.sample));
    line["review_reason"] = item.reason;
    line["raw_text"] = item.raw_text;
    review += line.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) + "\n";
  }
  write_file_atomic(ctx.layout.manual_review(), review);
  record_output(s, ctx.layout, ctx.layout.refined());
  record_output(s, ctx.layout, ctx.layout.stage1_report());
  record_output(s, ctx.layout, ctx.layout.manual_review());
  s.counters["input"] = static_cast<std::int64_t>(result.report.input_count);
  s.counters["output"] = static_cast<std::int64_t>(result.corpus.samples.size());
  s.counters["manual_review"] = static_cast<std::int64_t>(result.manual_review.size());
  for (const auto& [k, v] : result.report.outcome_counts) s.counters[k] = static_cast<std::int64_t>(v);
  if (opts.disable_refinement) s.notes.push_back("refinement_skipped");
}

void stage_hilpo(RunContext& ctx, StageRecord& s) {
  fs::create_directories(ctx.layout.prompt_log().parent_path());
  hilpo::PromptStore store(ctx.layout.prompt_log());
  if (store.versions().empty()) store.init_prompt(prompts::initial_cot_prompt().text);

  if (!ctx.config.stages.with_hilpo) {
    if (!store.finalized_id()) store.finalize("pipeline (hilpo disabled)");
    ctx.manifest.hilpo_skipped = true;
    s.notes.push_back("hilpo_skipped");
  } else {
    const auto conv = store.check_convergence();
    if (!conv.converged) {
      if (store.pending().empty()) {
        const auto corpus = load_complete(ctx.layout.refined());
        hilpo::BatchOptions b;
        b.n = ctx.config.batch_size;
        b.seed = ctx.config.hilpo_seed + store.batch_ids().size();
        b.workers = ctx.config.budget;
        const auto batch = hilpo::generate_sample_batch(ctx.gw, store, corpus, view_lookup(ctx.layout.views()), b);
        hilpo::propose_refinement(ctx.gw, store, batch.batch_id, ctx.config.snippet_budget);
      }
      const auto pending = store.pending();
      std::string ids;
      for (const auto& p : pending) ids += (ids.empty() ? "" : ", ") + p.prompt_id;
      throw AwaitingReview("prompt optimization awaits a human decision on " + ids +
                           "; review with `hilpo serve`, then rerun");
    }
    s.notes.push_back("converged: " + conv.reason);
  }
  const auto p = store.final_prompt();
  if (!p) throw StateError("no finalized prompt");
  ctx.manifest.final_prompt_id = p->prompt_id;
  s.counters["iteration_k"] = p->iteration_k;
  s.counters["batches"] = static_cast<std::int64_t>(store.batch_ids().size());
  s.counters["events"] = static_cast<std::int64_t>(store.event_count());
  record_output(s, ctx.layout, ctx.layout.prompt_log());
}

void stage_stage2(RunContext& ctx, StageRecord& s) {
  const hilpo::PromptStore store(ctx.layout.prompt_log());
  const auto p = store.final_prompt();
  if (!p) throw StateError("stage 2 needs the finalized prompt; none exists");
  ctx.manifest.final_prompt_id = p->prompt_id;
  const auto corpus = load_complete(ctx.layout.refined());
  synth::Stage2Options opts;
  opts.disable_cot = !ctx.config.stages.with_cot;
  opts.workers = ctx.config.budget;
  opts.crash_hook = ctx.hooks.stage2_crash_hook;
  fs::create_directories(ctx.layout.job().parent_path());
  const auto r = synth::run_stage2(ctx.gw, corpus, view_lookup(ctx.layout.views()),
                                   {p->prompt_id, p->text, true}, {ctx.layout.cot(), ctx.layout.job()}, opts);
  record_output(s, ctx.layout, ctx.layout.cot());
  record_output(s, ctx.layout, ctx.layout.job());
  s.counters["processed"] = static_cast<std::int64_t>(r.job.processed);
  s.counters["succeeded"] = static_cast<std::int64_t>(r.job.succeeded);
  s.counters["parse_failed"] = static_cast<std::int64_t>(r.job.parse_failed);
  s.counters["provider_failed"] = static_cast<std::int64_t>(r.job.provider_failed);
  s.counters["records"] = static_cast<std::int64_t>(r.corpus.samples.size());
  if (opts.disable_cot) s.notes.push_back("cot_skipped");
}

void stage_export(RunContext& ctx, StageRecord& s) {
  auto cot = data::load_cot_corpus(ctx.layout.cot());
  if (cot.truncated) throw IntegrityError(ctx.layout.cot().string() + " is truncated");
  const auto n = synth::export_training(cot.corpus, ctx.config.export_template, ctx.layout.training());
  record_output(s, ctx.layout, ctx.layout.training());
  s.counters["records"] = static_cast<std::int64_t>(n);
}

void save_manifest(const RunManifest& m, const RunLayout& layout) { write_file_atomic(layout.manifest(), m.to_json()); }

}  // namespace

RunOutcome run_pipeline(const PipelineConfig& config, const RunHooks& hooks) {
  RunOutcome out;
  const RunLayout layout{config.outputs};
  try {
    fs::create_directories(layout.root);
  } catch (const fs::filesystem_error& e) {
    out.exit_code = kUsage;
    out.message = e.what();
    return out;
  }
  std::optional<RunLock> lock;
  try {
    lock.emplace(layout.lock());
  } catch (const Error& e) {
    out.exit_code = kUsage;
    out.message = e.what();
    return out;
  }

  RunManifest& m = out.manifest;
  try {
    if (fs::exists(layout.manifest())) {
      m = RunManifest::from_json(read_file(layout.manifest()));
      if (m.config_hash != config.hash()) {
        out.exit_code = kUsage;
        out.message = "outputs directory " + layout.root.string() +
                      " holds a run with a different config; use a fresh outputs directory";
        return out;
      }
      const auto problems = verify_manifest(m, layout);
      if (!problems.empty()) {
        out.exit_code = kIntegrity;
        for (const auto& p : problems) out.message += p + "\n";
        return out;
      }
    } else {
      m.config_hash = config.hash();
      m.run_id = content_hash({m.config_hash, utc_timestamp(), std::to_string(::getpid())});
      for (const auto* a : prompts::all_assets()) m.prompt_assets[a->name] = a->sha256();
      m.switches = config.stages;
      for (const auto& name : kStages) m.stages.push_back(StageRecord{name, false, "", {}, {}, {}});
      save_manifest(m, layout);
    }
  } catch (const IntegrityError& e) {
    out.exit_code = kIntegrity;
    out.message = e.what();
    return out;
  }

  // Default cache inside the run directory so reruns do not repeat calls.
  PipelineConfig effective = config;
  if (!effective.cache) effective.cache = layout.root / "cache";
  auto gw = build_gateway(effective, layout.audit());
  RunContext ctx{effective, layout, *gw, m, hooks};
  const std::map<std::string, void (*)(RunContext&, StageRecord&)> fns{
      {"ingest", stage_ingest}, {"render", stage_render}, {"stage1", stage_stage1},
      {"hilpo", stage_hilpo},   {"stage2", stage_stage2}, {"export", stage_export}};

  for (auto& s : m.stages) {
    if (s.completed) continue;
    StageRecord fresh{s.name, false, "", {}, {}, {}};
    try {
      fns.at(s.name)(ctx, fresh);
    } catch (const AwaitingReview& e) {
      save_manifest(m, layout);
      out.exit_code = kStageFailure;
      out.awaiting_review = true;
      out.message = e.what();
      return out;
    } catch (const IntegrityError& e) {
      save_manifest(m, layout);
      out.exit_code = kIntegrity;
      out.message = "stage " + s.name + ": " + e.what();
      return out;
    } catch (const std::exception& e) {
      save_manifest(m, layout);
      out.exit_code = kStageFailure;
      out.message = "stage " + s.name + " failed: " + e.what() + "; rerun to resume";
      return out;
    }
    fresh.completed = true;
    fresh.completed_at = utc_timestamp();
    s = std::move(fresh);
    save_manifest(m, layout);
    if (hooks.after_stage) hooks.after_stage(s.name);
  }
  out.message = "all stages complete";
  return out;
}

}  // namespace pocoti::pipeline

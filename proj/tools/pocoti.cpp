// pocoti: command-line entry point for the data-generation pipeline.

#include <csignal>
#include <cstdio>
#include <iostream>
#include <set>

#include "CLI11.hpp"
#include "json.hpp"
#include "pocoti/cloud_io.hpp"
#include "pocoti/config.hpp"
#include "pocoti/eval.hpp"
#include "pocoti/export.hpp"
#include "pocoti/hilpo.hpp"
#include "pocoti/pipeline.hpp"
#include "pocoti/prompts.hpp"
#include "pocoti/quality.hpp"
#include "pocoti/render.hpp"
#include "pocoti/review_server.hpp"
#include "pocoti/synthesis.hpp"

namespace fs = std::filesystem;
using namespace pocoti;
using pipeline::ExitCode;

namespace {

struct UsageError : Error {
  using Error::Error;
};

pipeline::PipelineConfig load_config(const std::string& path, bool check_paths) {
  if (path.empty()) throw UsageError("--config is required for this command");
  if (!fs::is_regular_file(path)) throw UsageError("config file " + path + " does not exist");
  auto r = pipeline::parse_config(read_file(path), fs::path(path).parent_path(), check_paths);
  if (!r.ok()) throw UsageError("invalid config:\n" + r.error_text());
  return *r.config;
}

std::unique_ptr<gateway::Gateway> gateway_for(const pipeline::PipelineConfig& c) {
  pipeline::RunLayout layout{c.outputs};
  auto eff = c;
  if (!eff.cache) eff.cache = layout.root / "cache";
  fs::create_directories(layout.root);
  return pipeline::build_gateway(eff, layout.audit());
}

quality::ViewLookup disk_views(const fs::path& dir) {
  return [dir](const std::string& id) { return render::read_views(id, dir); };
}

data::InstructionCorpus load_instructions(const fs::path& p) {
  auto r = data::load_instruction_corpus(p);
  if (r.truncated) throw IntegrityError(p.string() + " ends with a truncated record");
  return std::move(r.corpus);
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const auto comma = s.find(',', pos);
    const auto item = trim(s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos));
    if (!item.empty()) out.push_back(item);
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

void print_version(const hilpo::PromptVersion& v) {
  std::printf("%-14s k=%-2d %-9s%s%s\n", v.prompt_id.c_str(), v.iteration_k, std::string(hilpo::to_string(v.state)).c_str(),
              v.no_change ? " no_change" : "",
              v.parent_id ? (" parent=" + *v.parent_id).c_str() : "");
}

std::sig_atomic_t volatile g_stop = 0;
hilpo::ReviewServer* g_server = nullptr;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pocoti: point-cloud CoT instruction data pipeline"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("-c,--config", config_path, "Pipeline config (JSON)");

  // validate
  auto* validate = app.add_subcommand("validate", "Check a config and print it with defaults filled in");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Ingest instruction/caption records into a corpus");
  std::string ingest_out;
  ingest->add_option("--out", ingest_out, "Output corpus (default: <outputs>/corpus/ingested.jsonl)");

  // render
  auto* render_cmd = app.add_subcommand("render", "Render four views for every cloud in a corpus");
  std::string render_corpus, render_out;
  render_cmd->add_option("--corpus", render_corpus, "Corpus whose clouds to render (default: ingested corpus)");
  render_cmd->add_option("--out", render_out, "View directory (default: <outputs>/views)");

  // stage1
  auto* stage1 = app.add_subcommand("stage1", "Quality evaluation and reference-guided refinement");
  std::string s1_corpus, s1_out;
  bool s1_disable = false;
  stage1->add_option("--corpus", s1_corpus, "Input corpus (default: ingested corpus)");
  stage1->add_option("--out", s1_out, "Refined corpus (default: <outputs>/corpus/refined.jsonl)");
  stage1->add_flag("--disable-refinement", s1_disable, "Pass samples through with a refinement_skipped mark");

  // hilpo
  auto* hilpo_cmd = app.add_subcommand("hilpo", "Human-in-the-loop prompt optimization");
  hilpo_cmd->require_subcommand(1);
  auto* iterate = hilpo_cmd->add_subcommand("iterate", "Generate a sample batch and propose a candidate prompt");
  std::size_t it_n = hilpo::kDefaultBatchSize;
  std::uint64_t it_seed = 0;
  bool it_seed_set = false;
  std::string it_corpus;
  iterate->add_option("--n", it_n, "Batch size N_S")->default_val(hilpo::kDefaultBatchSize);
  iterate->add_option("--seed", it_seed, "Sampling seed")->each([&](const std::string&) { it_seed_set = true; });
  iterate->add_option("--corpus", it_corpus, "Corpus to sample (default: refined corpus)");
  auto* serve = hilpo_cmd->add_subcommand("serve", "Serve the review API");
  int port = 8080;
  std::string host = "127.0.0.1";
  serve->add_option("--port", port, "Port")->default_val(8080);
  serve->add_option("--host", host, "Bind address")->default_val("127.0.0.1");
  auto* status = hilpo_cmd->add_subcommand("status", "Show the prompt lifecycle");
  auto* finalize = hilpo_cmd->add_subcommand("finalize", "Designate the active prompt as final");
  std::string reviewer;
  finalize->add_option("--reviewer", reviewer, "Reviewer name")->required();

  // stage2
  auto* stage2 = app.add_subcommand("stage2", "Chain-of-thought synthesis under the finalized prompt");
  std::string s2_corpus, s2_prompt, s2_out;
  bool s2_disable = false;
  stage2->add_option("--corpus", s2_corpus, "Input corpus (default: refined corpus)");
  stage2->add_option("--prompt-id", s2_prompt, "Expected finalized prompt id");
  stage2->add_option("--out", s2_out, "CoT corpus (default: <outputs>/corpus/cot.jsonl)");
  stage2->add_flag("--disable-cot", s2_disable, "Emit answer-only records");

  // export
  auto* export_cmd = app.add_subcommand("export", "Write training records from a CoT corpus");
  std::string ex_in, ex_template, ex_out;
  export_cmd->add_option("--in", ex_in, "CoT corpus")->required();
  export_cmd->add_option("--template", ex_template, "Template config (JSON)");
  export_cmd->add_option("--out", ex_out, "Output file")->required();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a subject model with LLM judges");
  std::vector<std::string> ev_tasks;
  std::string ev_judges, ev_sim, ev_out;
  eval_cmd->add_option("--task", ev_tasks, "Eval task file(s)")->required();
  eval_cmd->add_option("--judges", ev_judges, "Comma-separated judge provider ids")->required();
  eval_cmd->add_option("--similarity", ev_sim, "Comma-separated embedding provider ids");
  eval_cmd->add_option("--out", ev_out, "Report JSON path");

  // gen-gt
  auto* gengt = app.add_subcommand("gen-gt", "Generate reference captions for unlabeled clouds");
  std::string gt_clouds, gt_out, gt_name = "reference_captions";
  gengt->add_option("--clouds", gt_clouds, "Point-cloud directory")->required();
  gengt->add_option("--out", gt_out, "Eval task file to write")->required();
  gengt->add_option("--name", gt_name, "Dataset name");

  // run
  auto* run = app.add_subcommand("run", "Run or resume the whole pipeline");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? ExitCode::kOk : ExitCode::kUsage;
  }

  try {
    if (validate->parsed()) {
      if (config_path.empty()) throw UsageError("--config is required");
      const auto r = pipeline::validate_config(config_path);
      if (!r.ok()) {
        std::cerr << r.error_text();
        return ExitCode::kUsage;
      }
      std::cout << r.config->to_json();
      return ExitCode::kOk;
    }

    if (export_cmd->parsed()) {
      const auto tmpl = ex_template.empty() ? synth::TemplateConfig{} : synth::TemplateConfig::from_json(read_file(ex_template));
      auto cot = data::load_cot_corpus(ex_in);
      if (cot.truncated) throw IntegrityError(ex_in + " ends with a truncated record");
      const auto n = synth::export_training(cot.corpus, tmpl, ex_out);
      std::printf("exported %zu records to %s\n", n, ex_out.c_str());
      return ExitCode::kOk;
    }

    if (run->parsed()) {
      const auto cfg = load_config(config_path, true);
      const auto outcome = pipeline::run_pipeline(cfg);
      for (const auto& s : outcome.manifest.stages) {
        std::printf("%-8s %s\n", s.name.c_str(), s.completed ? "completed" : "pending");
      }
      if (outcome.exit_code != ExitCode::kOk) std::fprintf(stderr, "%s\n", outcome.message.c_str());
      return outcome.exit_code;
    }

    const auto cfg = load_config(config_path, ingest->parsed());
    const pipeline::RunLayout layout{cfg.outputs};
    auto gw = gateway_for(cfg);

    if (ingest->parsed()) {
      const data::CloudStore clouds(cfg.clouds);
      std::vector<data::InstructionCorpus> parts;
      for (const auto& in : cfg.corpora) {
        data::IngestOptions opts;
        opts.caption_instruction = cfg.caption_instruction;
        opts.known_clouds = &clouds.ids();
        auto r = data::ingest_instruction_records(read_file(in.path), in.source, opts, in.path.stem().string());
        for (const auto& rej : r.rejects) {
          std::fprintf(stderr, "%s:%zu: rejected: %s\n", in.path.c_str(), rej.line, rej.reason.c_str());
        }
        parts.push_back(std::move(r.corpus));
      }
      const auto merged = data::merge_corpora(parts, "ingested");
      const fs::path out = ingest_out.empty() ? layout.ingested() : fs::path(ingest_out);
      if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
      data::save_corpus(merged, out);
      std::printf("ingested %zu samples into %s\n", merged.samples.size(), out.c_str());
      return ExitCode::kOk;
    }

    if (render_cmd->parsed()) {
      const auto corpus = load_instructions(render_corpus.empty() ? layout.ingested() : fs::path(render_corpus));
      std::set<std::string> ids;
      for (const auto& s : corpus.samples) ids.insert(s.cloud_id);
      const std::vector<std::string> list(ids.begin(), ids.end());
      const fs::path out = render_out.empty() ? layout.views() : fs::path(render_out);
      fs::create_directories(out);
      const data::CloudStore clouds(cfg.clouds);
      parallel_for(list.size(), cfg.budget, [&](std::size_t i) {
        render::write_views(render::encode_views(render::render_views(clouds.load(list[i]), cfg.render)), out);
      });
      std::printf("rendered %zu clouds into %s\n", list.size(), out.c_str());
      return ExitCode::kOk;
    }

    if (stage1->parsed()) {
      const auto corpus = load_instructions(s1_corpus.empty() ? layout.ingested() : fs::path(s1_corpus));
      quality::Stage1Options opts;
      opts.disable_refinement = s1_disable || !cfg.stages.with_refinement;
      opts.verify_improved = cfg.verify_improved;
      opts.workers = cfg.budget;
      auto r = quality::run_stage1(*gw, corpus, disk_views(layout.views()), opts);
      r.corpus.name = "refined";
      const fs::path out = s1_out.empty() ? layout.refined() : fs::path(s1_out);
      if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
      data::save_corpus(r.corpus, out);
      std::cout << r.report.to_text();
      if (!r.manual_review.empty()) std::printf("%zu samples need manual review\n", r.manual_review.size());
      return ExitCode::kOk;
    }

    if (hilpo_cmd->parsed()) {
      fs::create_directories(layout.prompt_log().parent_path());
      hilpo::PromptStore store(layout.prompt_log());
      if (iterate->parsed()) {
        if (store.versions().empty()) store.init_prompt(prompts::initial_cot_prompt().text);
        const auto corpus = load_instructions(it_corpus.empty() ? layout.refined() : fs::path(it_corpus));
        hilpo::BatchOptions b;
        b.n = it_n;
        b.seed = it_seed_set ? it_seed : cfg.hilpo_seed + store.batch_ids().size();
        b.workers = cfg.budget;
        const auto batch = hilpo::generate_sample_batch(*gw, store, corpus, disk_views(layout.views()), b);
        std::printf("batch %s: %zu snippets, %zu parse failures\n", batch.batch_id.c_str(), batch.snippets.size(),
                    batch.parse_failures());
        const auto cand = hilpo::propose_refinement(*gw, store, batch.batch_id, cfg.snippet_budget);
        std::printf("candidate %s (k=%d)%s: +%zu -%zu lines\n", cand.prompt_id.c_str(), cand.iteration_k,
                    cand.no_change ? " no_change" : "", diff::count(cand.diff, diff::OpKind::insert),
                    diff::count(cand.diff, diff::OpKind::remove));
        return ExitCode::kOk;
      }
      if (status->parsed()) {
        for (const auto& v : store.versions()) print_version(v);
        const auto c = store.check_convergence();
        std::printf("converged: %s (%s)\n", c.converged ? "yes" : "no", c.reason.c_str());
        if (c.final_prompt_id) std::printf("final prompt: %s\n", c.final_prompt_id->c_str());
        return ExitCode::kOk;
      }
      if (finalize->parsed()) {
        const auto p = store.finalize(reviewer);
        std::printf("finalized %s (k=%d)\n", p.prompt_id.c_str(), p.iteration_k);
        return ExitCode::kOk;
      }
      if (serve->parsed()) {
        hilpo::ReviewServer server(store, {host, port, layout.views()});
        g_server = &server;
        std::signal(SIGINT, [](int) {
          g_stop = 1;
          if (g_server) g_server->stop();
        });
        std::printf("review API on http://%s:%d/api/prompts\n", host.c_str(), port);
        std::fflush(stdout);
        server.serve();
        g_server = nullptr;
        return ExitCode::kOk;
      }
    }

    if (stage2->parsed()) {
      const hilpo::PromptStore store(layout.prompt_log());
      const auto p = store.final_prompt();
      if (!p) throw StateError("no finalized prompt; finish prompt optimization first");
      if (!s2_prompt.empty() && s2_prompt != p->prompt_id) {
        throw StateError("prompt " + s2_prompt + " is not the finalized prompt (" + p->prompt_id + ")");
      }
      const auto corpus = load_instructions(s2_corpus.empty() ? layout.refined() : fs::path(s2_corpus));
      synth::Stage2Options opts;
      opts.disable_cot = s2_disable || !cfg.stages.with_cot;
      opts.workers = cfg.budget;
      const fs::path out = s2_out.empty() ? layout.cot() : fs::path(s2_out);
      fs::path job = out;
      job.replace_extension(".job.json");
      const auto r = synth::run_stage2(*gw, corpus, disk_views(layout.views()), {p->prompt_id, p->text, true},
                                       {out, job}, opts);
      std::printf("processed %zu: %zu succeeded, %zu parse_failed, %zu provider_failed -> %s\n", r.job.processed,
                  r.job.succeeded, r.job.parse_failed, r.job.provider_failed, out.c_str());
      return ExitCode::kOk;
    }

    if (eval_cmd->parsed()) {
      eval::EvalOptions opts;
      opts.judges = split_csv(ev_judges);
      opts.similarity_providers = split_csv(ev_sim);
      opts.workers = cfg.budget;
      std::vector<eval::TaskResult> results;
      for (const auto& t : ev_tasks) results.push_back(eval::run_task(*gw, eval::load_task(t), opts));
      const auto report = eval::build_report(results);
      if (!ev_out.empty()) write_file_atomic(ev_out, report.to_json());
      std::cout << report.to_text();
      return ExitCode::kOk;
    }

    if (gengt->parsed()) {
      const data::CloudStore clouds(gt_clouds);
      const std::vector<std::string> ids(clouds.ids().begin(), clouds.ids().end());
      const auto views_dir = layout.root / "gen_gt_views";
      fs::create_directories(views_dir);
      parallel_for(ids.size(), cfg.budget, [&](std::size_t i) {
        render::write_views(render::encode_views(render::render_views(clouds.load(ids[i]), cfg.render)), views_dir);
      });
      const auto r = eval::gen_reference_captions(*gw, ids, disk_views(views_dir), cfg.budget);
      eval::EvalTask task;
      task.name = gt_name;
      task.benchmark = eval::Benchmark::captioning;
      task.prompt_type = eval::PromptType::caption;
      task.items = r.captions;
      eval::save_task(task, gt_out);
      for (const auto& [id, why] : r.excluded) std::fprintf(stderr, "excluded %s: %s\n", id.c_str(), why.c_str());
      std::printf("%zu captions written to %s, %zu excluded\n", r.captions.size(), gt_out.c_str(), r.excluded.size());
      return ExitCode::kOk;
    }
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return ExitCode::kUsage;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return ExitCode::kUsage;
  } catch (const IntegrityError& e) {
    std::fprintf(stderr, "integrity error: %s\n", e.what());
    return ExitCode::kIntegrity;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return ExitCode::kStageFailure;
  }
  return ExitCode::kUsage;
}

// Acceptance suite: one line per criterion, PASS or FAIL, exit code 0 only
// when every criterion passes. Everything runs offline on the mock provider.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "pocoti/eval.hpp"
#include "pocoti/export.hpp"
#include "pocoti/hilpo.hpp"
#include "pocoti/pipeline.hpp"
#include "pocoti/prompts.hpp"
#include "pocoti/quality.hpp"
#include "pocoti/render.hpp"
#include "pocoti/structured.hpp"
#include "pocoti/synthesis.hpp"

namespace pocoti {
namespace {

namespace fs = std::filesystem;

/// Collects failed expectations for one criterion.
class Check {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok && failures_.size() < 5) failures_.push_back(what);
    if (!ok) ++count_;
  }
  bool ok() const { return count_ == 0; }
  std::string summary() const {
    std::string s;
    for (const auto& f : failures_) s += (s.empty() ? "" : "; ") + f;
    if (count_ > failures_.size()) s += "; ... " + std::to_string(count_ - failures_.size()) + " more";
    return s;
  }

 private:
  std::vector<std::string> failures_;
  std::size_t count_ = 0;
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// ---------------------------------------------------------------------------

void report_goldens(Check& c) {
  using namespace eval;
  // Classification cells: 10000 items per cell, so a count of correct
  // verdicts reproduces a two-decimal percentage exactly.
  std::vector<TaskResult> results;
  const std::vector<double> cells{62.40, 61.60, 59.17, 59.27, 33.22, 33.27};
  for (std::size_t i = 0; i < cells.size(); ++i) {
    TaskResult r;
    r.dataset = "set" + std::to_string(i / 2);
    r.benchmark = i < 4 ? Benchmark::closed_set : Benchmark::open_ended;
    r.prompt_type = i % 2 == 0 ? PromptType::instruction : PromptType::completion;
    r.judges = {"judge"};
    const auto correct = static_cast<std::size_t>(std::lround(cells[i] * 100));
    for (std::size_t k = 0; k < 10000; ++k) {
      ItemRecord item;
      item.cloud_id = "c" + std::to_string(k);
      JudgeScore s;
      s.judge_id = "judge";
      s.correct = k < correct;
      item.judges.push_back(s);
      r.items.push_back(std::move(item));
    }
    results.push_back(std::move(r));
  }
  const auto report = build_report(results);
  c.expect(report.classification_average && std::abs(*report.classification_average - 51.49) <= 0.005,
           "classification average " + fmt(report.classification_average.value_or(NAN)) + " != 51.49");

  auto caption_average = [](const std::vector<double>& per_judge) {
    std::vector<JudgeScore> scores;
    for (std::size_t i = 0; i < per_judge.size(); ++i) {
      JudgeScore s;
      s.judge_id = "j" + std::to_string(i);
      s.score = per_judge[i];
      scores.push_back(s);
    }
    return aggregate_caption_scores(std::move(scores)).average;
  };
  const auto a = caption_average({46.71, 54.31, 49.40, 41.84});
  c.expect(a && std::abs(*a - 48.07) <= 0.005, "caption average " + fmt(a.value_or(NAN)) + " != 48.07");
  const auto b = caption_average({56.78, 59.61, 62.17, 54.56});
  c.expect(b && std::abs(*b - 58.28) <= 0.005, "caption average " + fmt(b.value_or(NAN)) + " != 58.28");

  // The same caption numbers through the report path.
  TaskResult captions;
  captions.dataset = "captions";
  captions.benchmark = Benchmark::captioning;
  captions.prompt_type = PromptType::caption;
  captions.judges = {"j0", "j1", "j2", "j3"};
  ItemRecord item;
  item.cloud_id = "x";
  const std::vector<double> per_judge{56.78, 59.61, 62.17, 54.56};
  for (std::size_t i = 0; i < per_judge.size(); ++i) {
    JudgeScore s;
    s.judge_id = "j" + std::to_string(i);
    s.score = per_judge[i];
    item.judges.push_back(s);
  }
  item.caption_average = aggregate_caption_scores(item.judges).average;
  captions.items.push_back(item);
  const auto cap_report = build_report({captions});
  c.expect(cap_report.caption_average && std::abs(*cap_report.caption_average - 58.28) <= 0.005,
           "report caption average " + fmt(cap_report.caption_average.value_or(NAN)) + " != 58.28");
}

void renderer_oracle(Check& c) {
  using namespace render;
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-1.2, 1.2);
  std::vector<Vec3> points;
  for (int i = 0; i < 1000; ++i) points.push_back({u(rng), u(rng), u(rng)});
  for (auto proj : {Projection::orthographic, Projection::perspective}) {
    RenderConfig cfg;
    cfg.projection = proj;
    for (std::size_t v = 0; v < kViewCount; ++v) {
      const auto cam = cfg.camera(v);
      for (std::size_t i = 0; i < points.size(); ++i) {
        const auto got = project_point(points[i], cam);
        const auto want = testing::oracle_project(points[i], cam);
        const std::string where = "view " + std::to_string(v + 1) + " point " + std::to_string(i);
        c.expect(got.has_value() == want.on_screen, where + ": visibility differs");
        if (got && want.on_screen) {
          c.expect(std::abs(got->pixel_x - want.x) <= 1e-6 && std::abs(got->pixel_y - want.y) <= 1e-6 &&
                       std::abs(got->depth - want.depth) <= 1e-6,
                   where + ": coordinates differ");
        }
      }
    }
  }
  const RenderConfig cfg;
  const auto cloud = data::normalize_cloud(testing::random_cloud("det", 5000, 3).points, "det", true);
  const auto first = encode_views(render_views(cloud, cfg));
  for (int run = 0; run < 2; ++run) {
    c.expect(encode_views(render_views(cloud, cfg)).png == first.png, "render bytes differ between runs");
  }
}

std::string ctx(const gateway::ModelRequest& r, const char* key) {
  auto it = r.context.find(key);
  return it == r.context.end() ? std::string{} : it->second;
}

void stage1_conservation(Check& c) {
  const auto corpus = testing::make_corpus(100, 5);
  // Scripted verdict mix: exactly 60% KEEP, 20% IMPROVE, 20% INVALID, spread
  // over the clouds by a seeded shuffle. Everything else is the mock model.
  std::vector<std::string> labels(500, "KEEP");
  for (std::size_t i = 300; i < 400; ++i) labels[i] = "IMPROVE";
  for (std::size_t i = 400; i < 500; ++i) labels[i] = "INVALID";
  std::shuffle(labels.begin(), labels.end(), std::mt19937_64(7));
  std::map<std::string, std::string> by_id;
  for (std::size_t i = 0; i < 500; ++i) by_id[corpus.samples[i].sample_id] = labels[i];

  auto mock = gateway::make_mock_provider();
  auto provider = std::make_shared<gateway::ScriptedProvider>("scripted", [&](const gateway::ModelRequest& r) {
    if (ctx(r, prompts::ctx::task) != prompts::task::evaluate) return mock->complete(r);
    const auto label = by_id.at(ctx(r, prompts::ctx::sample_id));
    std::vector<std::pair<std::string, std::string>> f{{"label", label},
                                                       {"relevance_reason", "About the object."},
                                                       {"accuracy_reason", label == "KEEP" ? "Accurate." : "Off."},
                                                       {"completeness_reason", "Complete."}};
    if (label == "IMPROVE") f.emplace_back("refined_answer", ctx(r, prompts::ctx::answer) + " It is matte grey.");
    return gateway::format_block(f);
  });
  auto gw = testing::gateway_with(provider);
  const auto result = quality::run_stage1(*gw, corpus, testing::tiny_view_lookup());
  const auto& oc = result.report.outcome_counts;
  auto count = [&](const char* k) { return oc.count(k) ? oc.at(k) : 0; };
  const auto total = count("kept") + count("improved") + count("answer_refined") + count("pair_regenerated") +
                     count("unevaluable");
  c.expect(total == 500, "outcome total " + std::to_string(total) + " != 500");
  c.expect(result.report.label_counts.at("KEEP") == 300 && result.report.label_counts.at("IMPROVE") == 100 &&
               result.report.label_counts.at("INVALID") == 100,
           "label counts differ from the scripted mix");
  c.expect(result.corpus.samples.size() + result.manual_review.size() == 500, "samples lost between outputs");
  c.expect(count("pair_regenerated") > 0 && count("answer_refined") > 0, "refinement paths not both exercised");

  // References per cloud: KEEP pairs and IMPROVE pairs with their revised answer.
  std::map<std::string, std::vector<std::pair<std::string, std::string>>> refs;
  std::map<std::string, const data::InstructionSample*> original;
  for (const auto& s : corpus.samples) original[s.sample_id] = &s;
  for (const auto& s : result.corpus.samples) {
    const auto& stage = s.lineage.back().stage;
    if (stage == data::stage::kept || stage == data::stage::improved) {
      refs[s.cloud_id].emplace_back(normalize_text(s.instruction), normalize_text(s.answer));
    }
  }
  for (const auto& s : result.corpus.samples) {
    const auto& last = s.lineage.back();
    if (last.stage == data::stage::improved) {
      c.expect(last.prior_answer && s.answer != *last.prior_answer, s.sample_id + ": improved answer unchanged");
      c.expect(last.prior_sample_id && original.count(*last.prior_sample_id) &&
                   s.answer != original.at(*last.prior_sample_id)->answer,
               s.sample_id + ": improved answer equals the original");
    }
    if (last.stage == data::stage::pair_regenerated) {
      for (const auto& [ins, ans] : refs[s.cloud_id]) {
        c.expect(!(ins == normalize_text(s.instruction) && ans == normalize_text(s.answer)),
                 s.sample_id + ": regenerated pair duplicates a reference");
      }
    }
  }
  try {
    data::validate(result.corpus);
  } catch (const std::exception& e) {
    c.expect(false, std::string("refined corpus invalid: ") + e.what());
  }
}

void hilpo_state_machine(Check& c) {
  using namespace hilpo;
  const std::vector<std::string> texts{"Reason step by step.\n", "Reason step by step.\n- Cite a view.\n",
                                       "Reason step by step.\n- Cite a view.\n- No invented parts.\n",
                                       "Describe the object, then answer.\n"};
  std::size_t illegal = 0, accepted = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::mt19937_64 rng(trial);
    PromptStore store;
    store.init_prompt(texts[rng() % texts.size()]);
    std::vector<int> active_ks{0};
    std::string last_active = store.active()->prompt_id;
    const int steps = 5 + static_cast<int>(rng() % 25);
    for (int step = 0; step < steps; ++step) {
      const auto before = store.event_count();
      bool threw = false;
      try {
        switch (rng() % 7) {
          case 0:
          case 1: {  // iterate: batch under the active prompt, then a candidate
            CoTBatch b;
            b.prompt_id = store.active()->prompt_id;
            b.seed = rng();
            b.snippets.push_back({"s", "c", "Q?", "A.", "Step 1", true, ""});
            const auto recorded = store.record_batch(b);
            store.add_candidate(recorded.batch_id, texts[rng() % texts.size()], "r");
            break;
          }
          case 2:
          case 3:
          case 4: {  // decide on any version, legal or not
            const auto all = store.versions();
            const auto& target = all[rng() % all.size()];
            const auto d = rng() % 3 == 0 ? Decision::reject : Decision::accept;
            store.apply_decision(target.prompt_id, {d, "reviewer", "", ""});
            break;
          }
          case 5:  // a candidate built on a batch from an unknown prompt
            store.add_candidate("no-such-batch", texts[0], "r");
            break;
          default:
            if (rng() % 4 == 0) store.finalize("reviewer");
            break;
        }
      } catch (const Error&) {
        threw = true;
        ++illegal;
      }
      // A refused operation leaves no trace in the log.
      if (threw) c.expect(store.event_count() == before, "refused operation appended an event");

      // Single-active.
      std::size_t active_count = 0;
      for (const auto& v : store.versions()) active_count += v.state == PromptState::active ? 1 : 0;
      c.expect(active_count == 1, "trial " + std::to_string(trial) + ": " + std::to_string(active_count) + " active");
      // Iteration monotonicity over the sequence of active prompts.
      const auto now = store.active();
      if (now && now->prompt_id != last_active) {
        c.expect(now->iteration_k > active_ks.back(), "trial " + std::to_string(trial) + ": iteration_k not increasing");
        active_ks.push_back(now->iteration_k);
        last_active = now->prompt_id;
        ++accepted;
      }
    }
    // Gate soundness: every prompt that was ever active is the initial one or
    // carries an accept decision.
    const auto versions = store.versions();
    for (const auto& v : versions) {
      if (v.state == PromptState::active || v.state == PromptState::retired) {
        const bool initial = !v.parent_id && v.iteration_k == 0;
        const bool approved = v.decision && v.decision->decision == Decision::accept;
        c.expect(initial != approved, "trial " + std::to_string(trial) + ": " + v.prompt_id + " passed no gate");
      }
      if (v.state == PromptState::rejected) {
        c.expect(v.decision && v.decision->decision == Decision::reject, v.prompt_id + ": rejected without decision");
      }
    }
    // Replay reconstructs identical state.
    try {
      const auto replayed = PromptStore::replay(store.event_lines());
      c.expect(replayed->versions() == versions, "trial " + std::to_string(trial) + ": replayed versions differ");
      c.expect(replayed->finalized_id() == store.finalized_id(), "replayed finalization differs");
      c.expect(replayed->batch_ids() == store.batch_ids(), "replayed batches differ");
      c.expect(replayed->event_lines() == store.event_lines(), "replayed log differs");
    } catch (const std::exception& e) {
      c.expect(false, std::string("replay failed: ") + e.what());
    }
  }
  // The generator must actually reach both legal and illegal transitions.
  c.expect(illegal > 1000 && accepted > 500,
           "generator coverage too low (" + std::to_string(illegal) + " refused, " + std::to_string(accepted) +
               " activations)");
}

void batch_default(Check& c) {
  using namespace hilpo;
  const auto corpus = testing::make_corpus(60, 4);
  auto draw = [&](std::uint64_t seed) {
    PromptStore store;
    store.init_prompt(prompts::initial_cot_prompt().text);
    auto gw = testing::mock_gateway();
    BatchOptions o;
    o.seed = seed;
    return generate_sample_batch(*gw, store, corpus, testing::tiny_view_lookup(), o);
  };
  const BatchOptions defaults;
  c.expect(defaults.n == 100, "default N_S is " + std::to_string(defaults.n));
  const auto a = draw(11);
  c.expect(a.snippets.size() == 100, "batch has " + std::to_string(a.snippets.size()) + " snippets");
  std::set<std::string> ids;
  for (const auto& s : a.snippets) ids.insert(s.sample_id);
  c.expect(ids.size() == a.snippets.size(), "batch repeats a sample");
  const auto b = draw(11);
  c.expect(a.snippets == b.snippets, "same seed gave a different batch");
  const auto other = draw(12);
  c.expect(other.snippets != a.snippets, "different seeds gave the same batch");
}

void stage2_resume(Check& c) {
  const auto corpus = testing::make_corpus(50, 4);
  const synth::PromptRef prompt{"p-final", prompts::initial_cot_prompt().text, true};
  auto gw = testing::mock_gateway();
  synth::Stage2Options opts;
  opts.workers = 4;

  testing::TempDir ref_dir;
  const synth::Stage2Paths ref_paths{ref_dir / "cot.jsonl", ref_dir / "job.json"};
  const auto reference = synth::run_stage2(*gw, corpus, testing::tiny_view_lookup(), prompt, ref_paths, opts);
  c.expect(reference.corpus.samples.size() == 200, "reference run produced " +
                                                       std::to_string(reference.corpus.samples.size()) + " records");

  // Five seeded crash points, injected one after another into the same job.
  std::mt19937_64 rng(99);
  // Distinct progress values, so every point lies ahead of the previous one.
  std::vector<std::pair<synth::CommitPoint, std::size_t>> points;
  std::set<std::size_t> used;
  while (points.size() < 5) {
    const bool appended = rng() % 2 == 0;
    const std::size_t at = appended ? rng() % 200 : 1 + rng() % 200;
    if (!used.insert(at).second) continue;
    points.emplace_back(appended ? synth::CommitPoint::record_appended : synth::CommitPoint::state_saved, at);
  }
  std::sort(points.begin(), points.end(), [](const auto& a, const auto& b) { return a.second < b.second; });

  testing::TempDir dir;
  const synth::Stage2Paths paths{dir / "cot.jsonl", dir / "job.json"};
  struct Crash {};
  for (const auto& [point, at] : points) {
    auto o = opts;
    bool fired = false;
    o.crash_hook = [&, point = point, at = at](synth::CommitPoint p, std::size_t processed) {
      if (p == point && processed == at) {
        fired = true;
        throw Crash{};
      }
    };
    try {
      synth::run_stage2(*gw, corpus, testing::tiny_view_lookup(), prompt, paths, o);
    } catch (const Crash&) {
    }
    c.expect(fired, "crash point " + std::to_string(at) + " never reached");
  }
  const auto resumed = synth::run_stage2(*gw, corpus, testing::tiny_view_lookup(), prompt, paths, opts);
  c.expect(resumed.corpus == reference.corpus, "resumed corpus differs from the uninterrupted run");
  c.expect(read_file(paths.output) == read_file(ref_paths.output), "resumed output bytes differ");
  std::set<std::string> ids;
  for (const auto& s : resumed.corpus.samples) c.expect(ids.insert(s.sample_id).second, "duplicate " + s.sample_id);
}

void export_round_trip(Check& c) {
  std::mt19937_64 rng(5);
  const std::vector<std::string> collisions{"### Answer:", "\\### Answer:", "### Answer: inline", "\\\\### Answer:",
                                            " ### Answer:"};
  const std::vector<std::string> templates{"{point_cloud}\nUSER: {instruction}\nASSISTANT: ",
                                           "<s>[INST] {instruction} {point_cloud} [/INST]"};
  data::CoTCorpus corpus;
  corpus.name = "accept";
  for (int i = 0; i < 1000; ++i) {
    data::CoTSample s;
    s.sample_id = "s" + std::to_string(i);
    s.cloud_id = "c";
    s.instruction = "Q" + testing::random_text(rng, 80, false);
    s.prompt_version_id = "p";
    s.reasoning = testing::random_text(rng, 200);
    s.answer = "A" + testing::random_text(rng, 60);
    if (i % 3 == 0) {  // separator collisions in either field
      s.reasoning += "\n" + collisions[rng() % collisions.size()] + "\n" + testing::random_text(rng, 30);
      s.answer = collisions[rng() % collisions.size()] + "\n" + s.answer;
    }
    if (i % 10 == 0) {
      s.reasoning.clear();
      s.flags = {"cot_skipped"};
    }
    corpus.samples.push_back(std::move(s));
  }
  testing::TempDir dir;
  for (const auto& templ : templates) {
    synth::TemplateConfig cfg;
    cfg.context_template = templ;
    const auto path = dir / "train.jsonl";
    c.expect(synth::export_training(corpus, cfg, path) == 1000, "export count");
    const auto records = synth::load_training_records(path);
    c.expect(records.size() == 1000, "reloaded " + std::to_string(records.size()) + " records");
    for (std::size_t i = 0; i < records.size() && i < corpus.samples.size(); ++i) {
      const auto& s = corpus.samples[i];
      const auto& r = records[i];
      try {
        const auto back = synth::parse_target(r.target, s.has_flag("cot_skipped"));
        c.expect(back.answer == s.answer, s.sample_id + ": answer not recovered");
        c.expect(back.reasoning == s.reasoning, s.sample_id + ": reasoning not recovered");
      } catch (const std::exception& e) {
        c.expect(false, s.sample_id + ": " + e.what());
      }
      c.expect(r.mask_boundary == testing::context_length_oracle(templ, cfg.point_cloud_token, s.instruction),
               s.sample_id + ": mask boundary differs from the oracle");
    }
  }
}

bool oracle_accepts(const gateway::StructuredDoc& d) {
  static const std::set<std::string> labels{"KEEP", "IMPROVE", "INVALID"};
  if (!d.has("label") || labels.count(d.get("label")) == 0) return false;
  if (!d.has("reason") || trim(d.get("reason")).empty()) return false;
  if (!d.has("score")) return false;
  const auto t = trim(d.get("score"));
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (t.empty() || end != t.c_str() + t.size() || !std::isfinite(v) || v < 0 || v > 100) return false;
  if (d.has("note") && trim(d.get("note")).empty()) return false;
  return true;
}

void parser_fuzz(Check& c) {
  using namespace gateway;
  Schema schema;
  schema.require("label", {"KEEP", "IMPROVE", "INVALID"}).require("reason").number("score", 0, 100).optional("note");
  const std::vector<std::string> good_labels{"KEEP", "IMPROVE", "INVALID"};
  const std::vector<std::string> bad_labels{"keep", "MAYBE", "KEEP.", "", "IMPROVE INVALID"};
  std::mt19937_64 rng(314159);
  std::size_t accepted = 0, valid_seen = 0;

  auto value = [&]() {
    auto v = trim(testing::random_text(rng, 60));
    return v.empty() ? std::string("x") : v;
  };
  auto valid_fields = [&]() {
    std::vector<std::pair<std::string, std::string>> f{{"label", good_labels[rng() % 3]},
                                                       {"reason", value()},
                                                       {"score", std::to_string(rng() % 101)}};
    if (rng() % 2) f.emplace_back("note", value());
    std::shuffle(f.begin(), f.end(), rng);
    return f;
  };
  auto invalid_fields = [&]() {
    auto f = valid_fields();
    switch (rng() % 5) {
      case 0: {  // a required field removed
        const std::vector<std::string> req{"label", "reason", "score"};
        const auto name = req[rng() % 3];
        std::erase_if(f, [&](const auto& kv) { return kv.first == name; });
        break;
      }
      case 1:
        for (auto& kv : f) {
          if (kv.first == "label") kv.second = bad_labels[rng() % bad_labels.size()];
        }
        break;
      case 2:
        for (auto& kv : f) {
          if (kv.first == "score") kv.second = rng() % 2 ? "101" : "-0.5";
        }
        break;
      case 3:
        for (auto& kv : f) {
          if (kv.first == "score") kv.second = rng() % 2 ? "ninety" : "50%";
        }
        break;
      default:
        for (auto& kv : f) {
          if (kv.first == "reason") kv.second = "   ";
        }
        break;
    }
    return f;
  };
  auto mutate = [&](std::string s) {
    const int n = 1 + static_cast<int>(rng() % 4);
    for (int i = 0; i < n && !s.empty(); ++i) {
      const auto pos = rng() % s.size();
      switch (rng() % 5) {
        case 0: s[pos] = static_cast<char>(rng() % 256); break;
        case 1: s.erase(pos, 1 + rng() % 8); break;
        case 2: s.insert(pos, std::string(1, static_cast<char>(rng() % 256))); break;
        case 3: s.insert(pos, rng() % 2 ? "\n>>>\n" : "\n---END RESULT---\n"); break;
        default: s.resize(pos); break;
      }
    }
    return s;
  };

  for (int i = 0; i < 100000; ++i) {
    std::string input;
    int expect = -1;  // 1: must accept, 0: must reject, -1: oracle decides
    std::vector<std::pair<std::string, std::string>> fields;
    switch (i % 5) {
      case 0:
        fields = valid_fields();
        input = "Some prose.\n" + format_block(fields) + "trailing words";
        expect = 1;
        break;
      case 1:
        input = "prose\n" + format_block(invalid_fields());
        expect = 0;
        break;
      case 2:
        input = mutate(format_block(valid_fields()));
        break;
      case 3:
        input = mutate(format_block(invalid_fields()));
        break;
      default: {
        input.resize(rng() % 400);
        for (auto& ch : input) ch = static_cast<char>(rng() % 256);
        expect = 0;
        break;
      }
    }
    std::optional<StructuredDoc> doc;
    try {
      doc = parse_structured(input, schema);
    } catch (const StructuredParseError&) {
    } catch (const std::exception& e) {
      c.expect(false, std::string("unexpected exception: ") + e.what());
    }
    if (doc) {
      ++accepted;
      c.expect(oracle_accepts(*doc), "input " + std::to_string(i) + ": schema-invalid block accepted");
      c.expect(input.find(kBlockBegin) != std::string::npos && input.find(kBlockEnd) != std::string::npos,
               "input " + std::to_string(i) + ": accepted without block markers");
    }
    if (expect == 0) c.expect(!doc, "input " + std::to_string(i) + ": invalid block accepted");
    if (expect == 1) {
      ++valid_seen;
      c.expect(doc.has_value(), "input " + std::to_string(i) + ": valid block rejected");
      if (doc) {
        for (const auto& [k, v] : fields) c.expect(doc->get(k) == v, "input " + std::to_string(i) + ": " + k + " altered");
      }
    }
  }
  c.expect(accepted > valid_seen, "mutated inputs never accepted; fuzz coverage too low");
}

std::size_t count_lines(const fs::path& p) { return fs::exists(p) ? split_lines(read_file(p)).size() : 0; }

/// Runs the pipeline, acting as the reviewer whenever it stops for a decision.
pipeline::RunOutcome run_reviewed(const pipeline::PipelineConfig& cfg) {
  pipeline::RunOutcome out;
  for (int i = 0; i < 10; ++i) {
    out = pipeline::run_pipeline(cfg);
    if (!out.awaiting_review) return out;
    hilpo::PromptStore store(pipeline::RunLayout{cfg.outputs}.prompt_log());
    store.apply_decision(store.pending().front().prompt_id, {hilpo::Decision::accept, "acceptance", "", ""});
  }
  return out;
}

void end_to_end(Check& c) {
  {
    testing::TempDir dir;
    const auto f = testing::make_pipeline_fixture(dir.path(), 50, 4, {});
    const pipeline::RunLayout layout{f.config.outputs};
    const auto out = run_reviewed(f.config);
    c.expect(out.exit_code == pipeline::kOk, "full run: " + out.message);
    const auto cot = data::load_cot_corpus(layout.cot());
    c.expect(cot.corpus.samples.size() == 200, "CoT corpus has " + std::to_string(cot.corpus.samples.size()) +
                                                   " records (manual review " +
                                                   std::to_string(count_lines(layout.manual_review())) + ")");
    try {
      data::validate(cot.corpus);
    } catch (const std::exception& e) {
      c.expect(false, std::string("CoT corpus invalid: ") + e.what());
    }
    const auto final_id = out.manifest.final_prompt_id.value_or("");
    for (const auto& s : cot.corpus.samples) {
      c.expect(s.prompt_version_id == final_id, s.sample_id + ": not generated under P*");
      c.expect(!s.reasoning.empty(), s.sample_id + ": empty reasoning");
    }
    const auto records = synth::load_training_records(layout.training());
    c.expect(records.size() == cot.corpus.samples.size(), "training records do not match the CoT corpus");
    c.expect(pipeline::verify_manifest(out.manifest, layout).empty(), "manifest does not verify");
    const auto s1 = out.manifest.stage("stage1");
    c.expect(s1 && s1->counters.at("input") == 200 &&
                 s1->counters.at("output") + s1->counters.at("manual_review") == 200,
             "stage 1 does not conserve samples");
  }

  // Every ablation arm runs to a verified manifest with the expected notes.
  for (int mask = 0; mask < 8; ++mask) {
    const pipeline::StageSwitches sw{(mask & 1) != 0, (mask & 2) != 0, (mask & 4) != 0};
    const std::string arm = "arm refinement=" + std::to_string(sw.with_refinement) +
                            " hilpo=" + std::to_string(sw.with_hilpo) + " cot=" + std::to_string(sw.with_cot);
    testing::TempDir dir;
    // 30 clouds x 4 samples covers the default 100-snippet batch.
    const auto f = testing::make_pipeline_fixture(dir.path(), 30, 4, sw);
    const pipeline::RunLayout layout{f.config.outputs};
    const auto out = run_reviewed(f.config);
    c.expect(out.exit_code == pipeline::kOk, arm + ": " + out.message);
    if (out.exit_code != pipeline::kOk) continue;
    const auto& m = out.manifest;
    for (const auto& s : m.stages) c.expect(s.completed, arm + ": stage " + s.name + " incomplete");
    c.expect(pipeline::verify_manifest(m, layout).empty(), arm + ": manifest does not verify");
    auto noted = [&](const char* stage, const char* note) {
      const auto* s = m.stage(stage);
      return s && std::find(s->notes.begin(), s->notes.end(), note) != s->notes.end();
    };
    c.expect(noted("stage1", "refinement_skipped") == !sw.with_refinement, arm + ": refinement note");
    c.expect(m.hilpo_skipped == !sw.with_hilpo, arm + ": hilpo_skipped flag");
    c.expect(noted("stage2", "cot_skipped") == !sw.with_cot, arm + ": cot note");
    const auto records = synth::load_training_records(layout.training());
    c.expect(!records.empty(), arm + ": no training records");
    for (const auto& r : records) {
      const bool skipped = std::find(r.flags.begin(), r.flags.end(), "cot_skipped") != r.flags.end();
      c.expect(skipped == !sw.with_cot, arm + ": " + r.sample_id + " cot flag");
    }
    c.expect(m.final_prompt_id.has_value(), arm + ": no final prompt recorded");
  }
}

void cosine_goldens(Check& c) {
  const double same = eval::cosine_similarity({0.3, -1.2, 4.0}, {0.3, -1.2, 4.0});
  c.expect(std::abs(same - 1.0) <= 1e-12, "identical -> " + fmt(same));
  const double ortho = eval::cosine_similarity({1, 0}, {0, 1});
  c.expect(std::abs(ortho) <= 1e-12, "orthogonal -> " + fmt(ortho));
  const double diag = eval::cosine_similarity({1, 0}, {1, 1});
  c.expect(std::abs(diag - 0.70711) <= 1e-5, "(1,0)/(1,1) -> " + fmt(diag));
}

struct Criterion {
  const char* name;
  double budget_s;
  std::function<void(Check&)> run;
};

}  // namespace
}  // namespace pocoti

int main() {
  using namespace pocoti;
  const std::vector<Criterion> criteria{
      {"report arithmetic goldens", 1, report_goldens},
      {"renderer oracle and determinism", 10, renderer_oracle},
      {"stage-1 conservation", 30, stage1_conservation},
      {"prompt lifecycle state machine", 30, hilpo_state_machine},
      {"sample batch default size", 5, batch_default},
      {"stage-2 resumability", 60, stage2_resume},
      {"export round trip", 10, export_round_trip},
      {"structured parser fuzz", 60, parser_fuzz},
      {"end-to-end mock pipeline", 120, end_to_end},
      {"cosine goldens", 1, cosine_goldens},
  };
  int failed = 0;
  for (const auto& cr : criteria) {
    Check check;
    const auto start = std::chrono::steady_clock::now();
    try {
      cr.run(check);
    } catch (const std::exception& e) {
      check.expect(false, std::string("threw: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    check.expect(secs < cr.budget_s, "took " + fmt(secs) + " s, budget " + fmt(cr.budget_s) + " s");
    std::printf("%s  %-34s %7.2fs%s%s\n", check.ok() ? "PASS" : "FAIL", cr.name, secs, check.ok() ? "" : "  ",
                check.summary().c_str());
    std::fflush(stdout);
    if (!check.ok()) ++failed;
  }
  std::printf("%zu criteria, %d failed\n", criteria.size(), failed);
  return failed == 0 ? 0 : 1;
}

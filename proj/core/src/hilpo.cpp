#include "pocoti/hilpo.hpp"

#include <algorithm>
#include <cctype>
#include <functional>
#include <numeric>
#include <random>
#include <set>

#include "json.hpp"
#include "pocoti/prompts.hpp"
#include "pocoti/structured.hpp"

namespace pocoti::hilpo {

using json = nlohmann::json;

std::string_view to_string(PromptState s) {
  switch (s) {
    case PromptState::draft: return "draft";
    case PromptState::candidate: return "candidate";
    case PromptState::active: return "active";
    case PromptState::rejected: return "rejected";
    case PromptState::retired: return "retired";
  }
  return "?";
}

std::string_view to_string(Decision d) { return d == Decision::accept ? "accept" : "reject"; }

Decision decision_from_string(std::string_view s) {
  if (s == "accept") return Decision::accept;
  if (s == "reject") return Decision::reject;
  throw ValidationError("decision must be \"accept\" or \"reject\", got \"" + std::string(s) + "\"");
}

std::size_t CoTBatch::parse_failures() const {
  return static_cast<std::size_t>(
      std::count_if(snippets.begin(), snippets.end(), [](const Snippet& s) { return !s.parse_ok; }));
}

namespace {

const std::string kGenesisHash(64, '0');

json snippet_to_json(const Snippet& s) {
  return {{"sample_id", s.sample_id}, {"cloud_id", s.cloud_id}, {"instruction", s.instruction},
          {"answer", s.answer},       {"reasoning", s.reasoning}, {"parse_ok", s.parse_ok},
          {"error", s.error}};
}

Snippet snippet_from_json(const json& j) {
  return {j.at("sample_id").get<std::string>(), j.at("cloud_id").get<std::string>(),
          j.at("instruction").get<std::string>(), j.at("answer").get<std::string>(),
          j.at("reasoning").get<std::string>(), j.at("parse_ok").get<bool>(), j.at("error").get<std::string>()};
}

std::string chain_hash(const std::string& prev, std::uint64_t seq, const std::string& type,
                       const std::string& timestamp, const std::string& payload) {
  return sha256_hex(prev + "\x1f" + std::to_string(seq) + "\x1f" + type + "\x1f" + timestamp + "\x1f" + payload);
}

std::string dump(const json& j) { return j.dump(-1, ' ', false, json::error_handler_t::replace); }

}  // namespace

struct PromptStore::State {
  std::vector<PromptVersion> versions;
  std::map<std::string, std::size_t> index;
  std::map<std::string, CoTBatch> batches;
  std::vector<std::string> batch_order;
  std::optional<std::string> active_id;
  std::optional<std::string> finalized_id;
  std::optional<std::string> last_accepted_id;
  std::size_t decisions = 0;
  std::vector<std::string> lines;
  std::string last_hash = kGenesisHash;
  std::uint64_t seq = 0;
  std::string last_subject;  // id created or changed by the latest event

  PromptVersion& at(const std::string& id) { return versions[index.at(id)]; }
  const PromptVersion* get(const std::string& id) const {
    auto it = index.find(id);
    return it == index.end() ? nullptr : &versions[it->second];
  }
};

PromptStore::PromptStore() : state_(std::make_unique<State>()) {}

PromptStore::PromptStore(std::filesystem::path log_path)
    : log_path_(std::move(log_path)), state_(std::make_unique<State>()) {
  if (!std::filesystem::exists(*log_path_)) return;
  const auto text = read_file(*log_path_);
  std::lock_guard lock(mutex_);
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    if (nl == std::string::npos) {
      throw IntegrityError("prompt log " + log_path_->string() + " ends with an unterminated event");
    }
    if (nl > pos) apply_event(text.substr(pos, nl - pos), true);
    pos = nl + 1;
  }
}

PromptStore::~PromptStore() = default;

std::unique_ptr<PromptStore> PromptStore::replay(const std::vector<std::string>& lines) {
  auto store = std::make_unique<PromptStore>();
  std::lock_guard lock(store->mutex_);
  for (const auto& line : lines) store->apply_event(line, true);
  return store;
}

void PromptStore::commit(std::string type, const std::string& payload_json) {
  const auto seq = state_->seq + 1;
  const auto ts = utc_timestamp();
  json ev;
  ev["seq"] = seq;
  ev["type"] = type;
  ev["timestamp"] = ts;
  ev["payload"] = json::parse(payload_json);
  ev["prev"] = state_->last_hash;
  ev["hash"] = chain_hash(state_->last_hash, seq, type, ts, dump(ev["payload"]));
  apply_event(dump(ev), false);
}

void PromptStore::apply_event(const std::string& line, bool replaying) {
  json ev;
  try {
    ev = json::parse(line);
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("unparseable prompt event: ") + e.what());
  }
  State& st = *state_;
  std::function<void()> effect;
  std::string type;
  try {
    const auto seq = ev.at("seq").get<std::uint64_t>();
    type = ev.at("type").get<std::string>();
    const auto ts = ev.at("timestamp").get<std::string>();
    const auto& p = ev.at("payload");
    if (seq != st.seq + 1) throw IntegrityError("event sequence gap at " + std::to_string(seq));
    if (ev.at("prev").get<std::string>() != st.last_hash ||
        ev.at("hash").get<std::string>() != chain_hash(st.last_hash, seq, type, ts, dump(p))) {
      throw IntegrityError("prompt log hash chain broken at event " + std::to_string(seq));
    }

    if (type == "init") {
      const auto id = p.at("prompt_id").get<std::string>();
      const auto text = p.at("text").get<std::string>();
      if (st.active_id || !st.versions.empty()) throw StateError("an active prompt already exists");
      if (trim(text).empty()) throw ValidationError("prompt text must not be empty");
      effect = [&st, id, text, seq] {
        PromptVersion v;
        v.prompt_id = id;
        v.text = text;
        v.state = PromptState::active;
        v.created_seq = seq;
        st.index[id] = st.versions.size();
        st.versions.push_back(std::move(v));
        st.active_id = id;
        st.last_subject = id;
      };
    } else if (type == "batch") {
      CoTBatch b;
      b.batch_id = p.at("batch_id").get<std::string>();
      b.prompt_id = p.at("prompt_id").get<std::string>();
      b.seed = p.at("seed").get<std::uint64_t>();
      for (const auto& s : p.at("snippets")) b.snippets.push_back(snippet_from_json(s));
      if (st.finalized_id) throw StateError("the prompt has been finalized");
      if (st.active_id != b.prompt_id) throw StateError("batch " + b.batch_id + " was not generated under the active prompt");
      if (st.batches.count(b.batch_id)) throw StateError("duplicate batch id " + b.batch_id);
      std::set<std::string> seen;
      for (const auto& s : b.snippets) {
        if (!seen.insert(s.sample_id).second) throw ValidationError("batch repeats sample " + s.sample_id);
      }
      effect = [&st, b = std::move(b)]() mutable {
        st.batch_order.push_back(b.batch_id);
        st.last_subject = b.batch_id;
        st.batches.emplace(b.batch_id, std::move(b));
      };
    } else if (type == "candidate") {
      const auto id = p.at("prompt_id").get<std::string>();
      const auto parent = p.at("parent_id").get<std::string>();
      const auto batch_id = p.at("batch_id").get<std::string>();
      const auto text = p.at("text").get<std::string>();
      const auto rationale = p.at("rationale").get<std::string>();
      if (st.finalized_id) throw StateError("the prompt has been finalized");
      if (st.index.count(id)) throw StateError("duplicate prompt id " + id);
      const auto* par = st.get(parent);
      if (!par || st.active_id != parent) throw StateError("candidate parent " + parent + " is not the active prompt");
      auto bit = st.batches.find(batch_id);
      if (bit == st.batches.end()) throw StateError("unknown batch " + batch_id);
      if (bit->second.prompt_id != parent) throw StateError("batch " + batch_id + " was generated under another prompt");
      if (trim(text).empty()) throw ValidationError("prompt text must not be empty");
      PromptVersion v;
      v.prompt_id = id;
      v.iteration_k = par->iteration_k + 1;
      v.text = text;
      v.state = PromptState::candidate;
      v.parent_id = parent;
      v.batch_id = batch_id;
      v.no_change = text == par->text;
      v.rationale = rationale;
      v.diff = diff::diff_lines(par->text, text);
      v.created_seq = seq;
      effect = [&st, v = std::move(v)]() mutable {
        st.index[v.prompt_id] = st.versions.size();
        st.last_subject = v.prompt_id;
        st.versions.push_back(std::move(v));
      };
    } else if (type == "decision") {
      const auto id = p.at("candidate_id").get<std::string>();
      HumanDecision d;
      d.decision = decision_from_string(p.at("decision").get<std::string>());
      d.reviewer = p.at("reviewer").get<std::string>();
      d.note = p.at("note").get<std::string>();
      d.timestamp = p.at("timestamp").get<std::string>();
      const auto* c = st.get(id);
      if (!c) throw StateError("unknown candidate " + id);
      if (c->decision) throw StateError("candidate " + id + " already has a decision");
      if (c->state != PromptState::candidate) throw StateError(id + " is not a candidate");
      if (st.finalized_id) throw StateError("the prompt has been finalized");
      if (d.decision == Decision::accept && st.active_id != c->parent_id) {
        throw StateError("candidate " + id + " is stale: its parent is no longer active");
      }
      effect = [&st, id, d] {
        auto& cand = st.at(id);
        cand.decision = d;
        ++st.decisions;
        if (d.decision == Decision::accept) {
          st.at(*st.active_id).state = PromptState::retired;
          cand.state = PromptState::active;
          st.active_id = id;
          st.last_accepted_id = id;
        } else {
          cand.state = PromptState::rejected;
        }
        st.last_subject = id;
      };
    } else if (type == "finalize") {
      const auto id = p.at("prompt_id").get<std::string>();
      if (!st.active_id) throw StateError("no active prompt to finalize");
      if (st.finalized_id) throw StateError("the prompt has already been finalized");
      if (id != *st.active_id) throw StateError("finalize names " + id + " but the active prompt is " + *st.active_id);
      effect = [&st, id] {
        st.finalized_id = id;
        st.last_subject = id;
      };
    } else {
      throw IntegrityError("unknown prompt event type " + type);
    }
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("malformed prompt event: ") + e.what());
  } catch (const IntegrityError&) {
    throw;
  } catch (const Error& e) {
    if (replaying) throw IntegrityError(std::string("illegal event in prompt log: ") + e.what());
    throw;
  }

  if (!replaying && log_path_) append_file_durable(*log_path_, line + "\n");
  effect();
  st.seq = ev["seq"].get<std::uint64_t>();
  st.last_hash = ev["hash"].get<std::string>();
  st.lines.push_back(line);
}

PromptVersion PromptStore::init_prompt(const std::string& text) {
  std::lock_guard lock(mutex_);
  const auto id = "p0-" + content_hash({"init", text}, 8);
  commit("init", dump({{"prompt_id", id}, {"text", text}}));
  return state_->at(id);
}

CoTBatch PromptStore::record_batch(CoTBatch batch) {
  std::lock_guard lock(mutex_);
  std::string ids;
  for (const auto& s : batch.snippets) ids += s.sample_id + ",";
  batch.batch_id = "b" + std::to_string(state_->seq + 1) + "-" +
                   content_hash({batch.prompt_id, std::to_string(batch.seed), ids}, 8);
  json snippets = json::array();
  for (const auto& s : batch.snippets) snippets.push_back(snippet_to_json(s));
  commit("batch", dump({{"batch_id", batch.batch_id},
                        {"prompt_id", batch.prompt_id},
                        {"seed", batch.seed},
                        {"snippets", snippets}}));
  return batch;
}

PromptVersion PromptStore::add_candidate(const std::string& batch_id, const std::string& text,
                                         const std::string& rationale) {
  std::lock_guard lock(mutex_);
  if (!state_->active_id) throw StateError("no active prompt");
  const auto parent = *state_->active_id;
  const auto* par = state_->get(parent);
  const auto id = "p" + std::to_string(par->iteration_k + 1) + "-" +
                  content_hash({parent, text, std::to_string(state_->seq + 1)}, 8);
  commit("candidate", dump({{"prompt_id", id},
                            {"parent_id", parent},
                            {"batch_id", batch_id},
                            {"text", text},
                            {"rationale", rationale}}));
  return state_->at(id);
}

PromptVersion PromptStore::apply_decision(const std::string& candidate_id, HumanDecision decision) {
  std::lock_guard lock(mutex_);
  if (decision.timestamp.empty()) decision.timestamp = utc_timestamp();
  commit("decision", dump({{"candidate_id", candidate_id},
                           {"decision", std::string(to_string(decision.decision))},
                           {"reviewer", decision.reviewer},
                           {"note", decision.note},
                           {"timestamp", decision.timestamp}}));
  return state_->at(candidate_id);
}

PromptVersion PromptStore::finalize(const std::string& reviewer) {
  std::lock_guard lock(mutex_);
  if (!state_->active_id) throw StateError("no active prompt to finalize");
  const auto id = *state_->active_id;
  commit("finalize", dump({{"prompt_id", id}, {"reviewer", reviewer}}));
  return state_->at(id);
}

std::optional<PromptVersion> PromptStore::active() const {
  std::lock_guard lock(mutex_);
  if (!state_->active_id) return std::nullopt;
  return *state_->get(*state_->active_id);
}

std::optional<PromptVersion> PromptStore::find(const std::string& prompt_id) const {
  std::lock_guard lock(mutex_);
  const auto* v = state_->get(prompt_id);
  return v ? std::optional<PromptVersion>(*v) : std::nullopt;
}

std::vector<PromptVersion> PromptStore::versions() const {
  std::lock_guard lock(mutex_);
  return state_->versions;
}

std::vector<PromptVersion> PromptStore::pending() const {
  std::lock_guard lock(mutex_);
  std::vector<PromptVersion> out;
  for (auto it = state_->versions.rbegin(); it != state_->versions.rend(); ++it) {
    if (it->state == PromptState::candidate) out.push_back(*it);
  }
  return out;
}

std::optional<CoTBatch> PromptStore::batch(const std::string& batch_id) const {
  std::lock_guard lock(mutex_);
  auto it = state_->batches.find(batch_id);
  return it == state_->batches.end() ? std::nullopt : std::optional<CoTBatch>(it->second);
}

std::vector<std::string> PromptStore::batch_ids() const {
  std::lock_guard lock(mutex_);
  return state_->batch_order;
}

std::optional<std::string> PromptStore::finalized_id() const {
  std::lock_guard lock(mutex_);
  return state_->finalized_id;
}

Convergence PromptStore::check_convergence() const {
  std::lock_guard lock(mutex_);
  const auto& st = *state_;
  if (st.finalized_id) return {true, "finalized by operator", st.finalized_id};
  if (st.last_accepted_id && st.get(*st.last_accepted_id)->no_change) {
    return {true, "latest accepted candidate left the prompt unchanged", st.active_id};
  }
  if (st.decisions == 0) return {false, "no candidate has been decided", std::nullopt};
  if (!st.last_accepted_id) return {false, "only rejected candidates so far", std::nullopt};
  return {false, "latest accepted candidate changed the prompt", std::nullopt};
}

std::optional<PromptVersion> PromptStore::final_prompt() const {
  const auto c = check_convergence();
  if (!c.converged) return std::nullopt;
  return find(*c.final_prompt_id);
}

std::vector<std::string> PromptStore::event_lines() const {
  std::lock_guard lock(mutex_);
  return state_->lines;
}

std::size_t PromptStore::event_count() const {
  std::lock_guard lock(mutex_);
  return state_->lines.size();
}

std::vector<std::size_t> draw_without_replacement(std::size_t population, std::size_t n, std::uint64_t seed) {
  if (n > population) {
    throw ValidationError("cannot draw " + std::to_string(n) + " samples from " + std::to_string(population));
  }
  std::vector<std::size_t> idx(population);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates: the first n slots end up uniformly drawn.
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = i + static_cast<std::size_t>(rng() % (population - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(n);
  return idx;
}

CoTBatch generate_sample_batch(gateway::Gateway& gw, PromptStore& store, const data::InstructionCorpus& corpus,
                               const quality::ViewLookup& views, const BatchOptions& options) {
  const auto prompt = store.active();
  if (!prompt) throw StateError("no active prompt; initialize one first");
  if (options.n == 0) throw ValidationError("batch size must be positive");
  if (corpus.samples.size() < options.n) {
    throw ValidationError("corpus has " + std::to_string(corpus.samples.size()) + " samples, batch needs " +
                          std::to_string(options.n));
  }
  const auto picks = draw_without_replacement(corpus.samples.size(), options.n, options.seed);
  CoTBatch batch;
  batch.prompt_id = prompt->prompt_id;
  batch.seed = options.seed;
  batch.snippets.resize(picks.size());
  parallel_for(picks.size(), options.workers, [&](std::size_t k) {
    const auto& s = corpus.samples[picks[k]];
    auto& snip = batch.snippets[k];
    snip.sample_id = s.sample_id;
    snip.cloud_id = s.cloud_id;
    snip.instruction = s.instruction;
    snip.answer = s.answer;
    // No re-ask here: malformed output is exactly what the refiner should see.
    const auto r = synth::generate_cot(gw, views(s.cloud_id), s, prompt->text, 1);
    if (r.output) {
      snip.reasoning = r.output->reasoning;
      snip.parse_ok = true;
    } else {
      snip.reasoning = r.raw_text;
      snip.error = (r.provider_failed ? "provider: " : "parse: ") + r.error.value_or("");
    }
  });
  return store.record_batch(std::move(batch));
}

namespace {

std::string truncate_marked(const std::string& text, std::size_t budget) {
  if (text.size() <= budget) return text;
  std::size_t cut = budget;
  // Do not split a UTF-8 sequence.
  while (cut > 0 && (static_cast<unsigned char>(text[cut]) & 0xC0) == 0x80) --cut;
  return text.substr(0, cut) + " [...truncated " + std::to_string(text.size() - cut) + " chars]";
}

}  // namespace

std::string serialize_batch_for_refiner(const CoTBatch& batch, std::size_t budget) {
  std::string out;
  for (std::size_t i = 0; i < batch.snippets.size(); ++i) {
    const auto& s = batch.snippets[i];
    out += "[" + std::to_string(i + 1) + "] sample " + s.sample_id + (s.parse_ok ? "" : " (FAILED TO PARSE)") + "\n";
    out += "Question: " + s.instruction + "\n";
    out += "Answer: " + s.answer + "\n";
    out += "Output:\n" + truncate_marked(s.reasoning, budget) + "\n\n";
  }
  return out;
}

PromptVersion propose_refinement(gateway::Gateway& gw, PromptStore& store, const std::string& batch_id,
                                 std::size_t budget) {
  const auto batch = store.batch(batch_id);
  if (!batch) throw StateError("unknown batch " + batch_id);
  const auto active = store.active();
  if (!active || active->prompt_id != batch->prompt_id) {
    throw StateError("batch " + batch_id + " does not belong to the active prompt");
  }
  gateway::ModelRequest req;
  req.role = gateway::Role::prompt_refiner;
  req.prompt_text = prompts::fill(prompts::prompt_refiner_prompt().text,
                                  {{"current_prompt", active->text},
                                   {"batch_size", std::to_string(batch->snippets.size())},
                                   {"parse_failures", std::to_string(batch->parse_failures())},
                                   {"batch", serialize_batch_for_refiner(*batch, budget)}});
  req.context = {{prompts::ctx::task, prompts::task::refine_prompt},
                 {prompts::ctx::current_prompt, active->text}};
  const auto resp = gw.complete(req);
  static const auto schema = gateway::Schema{}.require("prompt").optional("rationale");
  const auto doc = gateway::parse_structured(resp.text, schema);
  // Keep the parent's trailing-newline convention so formatting alone never
  // reads as a change.
  auto text = doc.get("prompt");
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.pop_back();
  if (!active->text.empty() && active->text.back() == '\n') text.push_back('\n');
  return store.add_candidate(batch_id, text, trim(doc.find("rationale").value_or("")));
}

}  // namespace pocoti::hilpo

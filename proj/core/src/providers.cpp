#include "pocoti/providers.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"
#include "pocoti/prompts.hpp"
#include "pocoti/structured.hpp"

namespace pocoti::gateway {

ScriptedProvider::ScriptedProvider(std::string provider_id, Handler handler)
    : provider_id_(std::move(provider_id)), handler_(std::move(handler)) {}

void ScriptedProvider::script(const std::string& hash, std::string text) {
  std::lock_guard lock(mutex_);
  table_[hash] = std::move(text);
}

void ScriptedProvider::fail_next(ProviderError::Kind kind, int times) {
  std::lock_guard lock(mutex_);
  for (int i = 0; i < times; ++i) failures_.push_back(kind);
}

void ScriptedProvider::set_handler(Handler handler) {
  std::lock_guard lock(mutex_);
  handler_ = std::move(handler);
}

void ScriptedProvider::set_embed_handler(EmbedHandler handler) {
  std::lock_guard lock(mutex_);
  embed_handler_ = std::move(handler);
}

std::string ScriptedProvider::complete(const ModelRequest& request) {
  Handler handler;
  {
    std::lock_guard lock(mutex_);
    requests_.push_back(request);
    if (!failures_.empty()) {
      const auto kind = failures_.front();
      failures_.pop_front();
      throw ProviderError(kind, "scripted failure");
    }
    if (auto it = table_.find(request_hash(request, provider_id_)); it != table_.end()) return it->second;
    handler = handler_;
  }
  if (!handler) throw ProviderError(ProviderError::Kind::fatal, "no scripted response");
  return handler(request);
}

std::vector<std::vector<double>> ScriptedProvider::embed(const std::vector<std::string>& texts) {
  EmbedHandler handler;
  {
    std::lock_guard lock(mutex_);
    if (!failures_.empty()) {
      const auto kind = failures_.front();
      failures_.pop_front();
      throw ProviderError(kind, "scripted failure");
    }
    handler = embed_handler_;
  }
  if (!handler) throw ProviderError(ProviderError::Kind::fatal, "no scripted embedder");
  std::vector<std::vector<double>> out;
  for (const auto& t : texts) out.push_back(handler(t));
  return out;
}

std::size_t ScriptedProvider::calls() const {
  std::lock_guard lock(mutex_);
  return requests_.size();
}

std::vector<ModelRequest> ScriptedProvider::requests() const {
  std::lock_guard lock(mutex_);
  return requests_;
}

namespace {

// Uniform [0,1) from a stable hash.
double unit_hash(std::uint64_t seed, std::string_view key) {
  const auto h = sha256_hex(std::to_string(seed) + "\x1f" + std::string(key));
  return static_cast<double>(std::stoull(h.substr(0, 13), nullptr, 16)) / static_cast<double>(1ULL << 52);
}

std::set<std::string> word_set(std::string_view text) {
  std::set<std::string> words;
  std::string w;
  for (char c : normalize_text(text) + " ") {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      w.push_back(c);
    } else if (!w.empty()) {
      words.insert(w);
      w.clear();
    }
  }
  return words;
}

class MockProvider : public Provider {
 public:
  explicit MockProvider(MockOptions options) : options_(options) {}

  std::string complete(const ModelRequest& request) override {
    const auto& c = request.context;
    auto get = [&](const char* key) -> std::string {
      auto it = c.find(key);
      return it == c.end() ? std::string{} : it->second;
    };
    const auto task = get(prompts::ctx::task);
    namespace t = prompts::task;
    if (task == t::evaluate) return evaluate(get(prompts::ctx::sample_id), get(prompts::ctx::answer));
    if (task == t::verify_improved) {
      return format_block({{"label", "KEEP"},
                           {"relevance_reason", "The question concerns the visible object."},
                           {"accuracy_reason", "The revised answer matches the views."},
                           {"completeness_reason", "The revised answer is detailed enough."}});
    }
    if (task == t::refine_invalid) return refine(get(prompts::ctx::sample_id), get(prompts::ctx::instruction),
                                                 get(prompts::ctx::answer), get(prompts::ctx::attempt));
    if (task == t::cot) return cot(get(prompts::ctx::instruction), get(prompts::ctx::answer));
    if (task == t::refine_prompt) return refine_prompt(get(prompts::ctx::current_prompt));
    if (task == t::judge_closed) return judge_closed(get(prompts::ctx::response), get(prompts::ctx::label_set));
    if (task == t::judge_open) return judge_open(get(prompts::ctx::response), get(prompts::ctx::ground_truth));
    if (task == t::judge_caption) return judge_caption(get(prompts::ctx::candidate), get(prompts::ctx::reference));
    if (task == t::caption_gt) {
      return format_block({{"caption", "A 3D object (" + get(prompts::ctx::cloud_id) + ") shown from four sides."}});
    }
    if (task == t::subject) return "This appears to be a " + get(prompts::ctx::cloud_id) + ".";
    return "I cannot help with that.";
  }

  std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) override {
    std::vector<std::vector<double>> out;
    for (const auto& text : texts) {
      std::seed_seq seq{static_cast<unsigned>(options_.seed),
                        static_cast<unsigned>(std::stoul(sha256_hex(text).substr(0, 8), nullptr, 16))};
      std::mt19937_64 rng(seq);
      std::vector<double> v(options_.embedding_dim);
      for (auto& x : v) x = static_cast<double>(rng() >> 11) / static_cast<double>(1ULL << 53) * 2.0 - 1.0;
      v[0] += 3.0;  // keep every vector away from zero norm
      out.push_back(std::move(v));
    }
    return out;
  }

 private:
  std::string evaluate(const std::string& sample_id, const std::string& answer) const {
    const double u = unit_hash(options_.seed, "verdict\x1f" + sample_id);
    std::string label = "KEEP";
    if (u >= options_.keep_fraction) {
      label = u < options_.keep_fraction + options_.improve_fraction ? "IMPROVE" : "INVALID";
    }
    std::vector<std::pair<std::string, std::string>> fields{
        {"label", label},
        {"relevance_reason", label == "INVALID" ? "The question does not depend on the object."
                                                : "The question concerns the visible object."},
        {"accuracy_reason", label == "IMPROVE" ? "The answer misstates a visible detail."
                                               : "The answer agrees with the views."},
        {"completeness_reason", "The answer has enough detail."}};
    if (label == "IMPROVE") fields.emplace_back("refined_answer", answer + " The surface detail is visible in all four views.");
    return "Assessment follows.\n" + format_block(fields);
  }

  std::string refine(const std::string& sample_id, const std::string& instruction, const std::string& answer,
                     const std::string& attempt) const {
    const double u = unit_hash(options_.seed, "refine\x1f" + sample_id);
    if (u < 0.5) {
      return format_block({{"decision", "answer_refined"},
                           {"instruction", instruction},
                           {"answer", "Based on the views: " + answer},
                           {"rationale", "The question is answerable from the object."}});
    }
    return format_block({{"decision", "pair_regenerated"},
                         {"instruction", "Which visible part of this object stands out most? (" +
                                             sample_id.substr(0, 6) + "/" + attempt + ")"},
                         {"answer", "The most prominent part is the main body, visible in every view."},
                         {"rationale", "The original question was not about the object."}});
  }

  static std::string cot(const std::string& instruction, const std::string& answer) {
    std::ostringstream r;
    r << "Step 1: Inspect the overall silhouette across the four views.\n"
      << "Step 2: Relate the visible parts to the question: " << normalize_text(instruction) << "\n"
      << "Step 3: The observed geometry supports the stated conclusion.";
    return format_block({{"reasoning", r.str()}, {"answer", answer}});
  }

  static std::string refine_prompt(const std::string& current) {
    static const std::vector<std::string> additions{
        "- Ground every step in a geometric cue visible in at least one view.",
        "- Never introduce parts, colors or materials that the views do not show."};
    std::string next = current;
    std::string rationale = "No recurring failures; instructions unchanged.";
    for (const auto& line : additions) {
      if (current.find(line) == std::string::npos) {
        if (!next.empty() && next.back() != '\n') next.push_back('\n');
        next += line + "\n";
        rationale = "Added constraint: " + line.substr(2);
        break;
      }
    }
    return format_block({{"prompt", next}, {"rationale", rationale}});
  }

  static std::string judge_closed(const std::string& response, const std::string& label_set) {
    const auto words = word_set(response);
    std::string best;
    for (const auto& label : split_lines(label_set)) {
      const auto lw = word_set(label);
      const bool all = !lw.empty() && std::all_of(lw.begin(), lw.end(), [&](const auto& w) { return words.count(w); });
      if (all && label.size() > best.size()) best = label;
    }
    return format_block({{"label", best.empty() ? std::string("unknown") : best}});
  }

  static std::string judge_open(const std::string& response, const std::string& ground_truth) {
    const auto words = word_set(response);
    bool match = false;
    for (const auto& w : word_set(ground_truth)) {
      if (w.size() >= 4 && words.count(w)) match = true;
    }
    return format_block({{"verdict", match ? "T" : "F"}});
  }

  static std::string judge_caption(const std::string& candidate, const std::string& reference) {
    const auto a = word_set(candidate);
    const auto b = word_set(reference);
    std::size_t inter = 0;
    for (const auto& w : a) inter += b.count(w);
    const std::size_t uni = a.size() + b.size() - inter;
    const double score = uni == 0 ? 0.0 : 100.0 * static_cast<double>(inter) / static_cast<double>(uni);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", score);
    return format_block({{"score", buf}});
  }

  MockOptions options_;
};

}  // namespace

std::shared_ptr<Provider> make_mock_provider(MockOptions options) {
  return std::make_shared<MockProvider>(options);
}

std::string chat_request_body(const ModelRequest& request, const std::string& model_name) {
  nlohmann::json body;
  body["model"] = model_name;
  nlohmann::json message;
  message["role"] = "user";
  if (request.images.empty()) {
    message["content"] = request.prompt_text;
  } else {
    nlohmann::json parts = nlohmann::json::array();
    parts.push_back({{"type", "text"}, {"text", request.prompt_text}});
    for (const auto& img : request.images) {
      parts.push_back({{"type", "image_url"},
                       {"image_url", {{"url", "data:image/png;base64," + base64_encode(img)}}}});
    }
    message["content"] = parts;
  }
  body["messages"] = nlohmann::json::array({message});
  body["temperature"] = request.decode.temperature;
  body["max_tokens"] = request.decode.max_tokens;
  if (request.decode.seed) body["seed"] = *request.decode.seed;
  if (!request.metadata.empty()) body["metadata"] = request.metadata;
  return body.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

}  // namespace pocoti::gateway

#include "pocoti/gateway.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <deque>
#include <future>
#include <semaphore>
#include <thread>

#include "json.hpp"

namespace pocoti::gateway {

using json = nlohmann::json;

std::string_view to_string(Role r) {
  switch (r) {
    case Role::evaluator: return "evaluator";
    case Role::cot_generator: return "cot_generator";
    case Role::prompt_refiner: return "prompt_refiner";
    case Role::judge: return "judge";
    case Role::caption_gt_generator: return "caption_gt_generator";
    case Role::embedder: return "embedder";
    case Role::subject_model: return "subject_model";
  }
  return "unknown";
}

Role role_from_string(std::string_view s) {
  for (auto r : {Role::evaluator, Role::cot_generator, Role::prompt_refiner, Role::judge,
                 Role::caption_gt_generator, Role::embedder, Role::subject_model}) {
    if (to_string(r) == s) return r;
  }
  throw ValidationError("unknown role '" + std::string(s) + "'");
}

Clock Clock::real() {
  Clock c;
  c.sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
  return c;
}

std::string request_hash(const ModelRequest& request, std::string_view provider_id) {
  std::string material;
  material.append(provider_id);
  material.push_back('\x1f');
  material.append(request.prompt_text);
  for (const auto& img : request.images) {
    material.push_back('\x1f');
    material.append(sha256_hex(img));
  }
  char params[96];
  std::snprintf(params, sizeof params, "\x1e%.17g\x1f%d\x1f", request.decode.temperature,
                request.decode.max_tokens);
  material.append(params);
  if (request.decode.seed) material.append(std::to_string(*request.decode.seed));
  for (const auto& [key, value] : request.metadata) {
    material.push_back('\x1e');
    material.append(key);
    material.push_back('\x1f');
    material.append(value);
  }
  return sha256_hex(material);
}

namespace {

using Semaphore = std::counting_semaphore<4096>;

struct ProviderEntry {
  ProviderSettings settings;
  std::shared_ptr<Provider> provider;
  std::unique_ptr<Semaphore> slots;
  std::mutex rate_mutex;
  std::deque<std::chrono::steady_clock::time_point> window;
};

double ms_between(std::chrono::steady_clock::time_point a, std::chrono::steady_clock::time_point b) {
  return std::chrono::duration<double, std::milli>(b - a).count();
}

}  // namespace

struct Gateway::State {
  GatewayOptions options;
  mutable std::mutex mutex;  // providers, bindings, cache, inflight
  std::map<std::string, std::unique_ptr<ProviderEntry>> providers;
  std::map<Role, std::string> bindings;
  std::map<std::string, std::string> memory_cache;
  std::map<std::string, std::shared_future<std::string>> inflight;
  std::map<std::string, std::vector<double>> embed_cache;
  mutable std::mutex audit_mutex;
  std::vector<AuditRecord> audit;
  std::atomic<std::size_t> live_calls{0};

  ProviderEntry& entry(const std::string& id) {
    std::lock_guard lock(mutex);
    const auto it = providers.find(id);
    if (it == providers.end()) throw ValidationError("unknown provider '" + id + "'");
    return *it->second;
  }

  std::filesystem::path cache_path(const std::string& key) const {
    return *options.cache_dir / key.substr(0, 2) / (key + ".json");
  }

  std::optional<std::string> cache_get(const std::string& key) {
    {
      std::lock_guard lock(mutex);
      if (auto it = memory_cache.find(key); it != memory_cache.end()) return it->second;
    }
    if (!options.cache_dir) return std::nullopt;
    const auto path = cache_path(key);
    if (!std::filesystem::exists(path)) return std::nullopt;
    try {
      auto text = json::parse(read_file(path)).at("text").get<std::string>();
      std::lock_guard lock(mutex);
      memory_cache[key] = text;
      return text;
    } catch (const std::exception&) {
      return std::nullopt;  // unreadable entry: treat as a miss and overwrite
    }
  }

  void cache_put(const std::string& key, const std::string& provider_id, const std::string& text) {
    {
      std::lock_guard lock(mutex);
      memory_cache[key] = text;
    }
    if (!options.cache_dir) return;
    json j;
    j["provider_id"] = provider_id;
    j["text"] = text;
    write_file_atomic(cache_path(key), j.dump(-1, ' ', false, json::error_handler_t::replace));
  }

  void record(AuditRecord r) {
    r.timestamp = utc_timestamp();
    std::lock_guard lock(audit_mutex);
    if (options.audit_log) {
      json j;
      j["timestamp"] = r.timestamp;
      j["role"] = r.role;
      j["provider_id"] = r.provider_id;
      j["request_hash"] = r.request_hash;
      j["cache_hit"] = r.cache_hit;
      j["latency_ms"] = r.latency_ms;
      j["retries"] = r.retries;
      j["wait_ms"] = r.wait_ms;
      if (r.error) j["error"] = *r.error;
      append_file_durable(*options.audit_log, j.dump(-1, ' ', false, json::error_handler_t::replace) + "\n");
    }
    audit.push_back(std::move(r));
  }

  double throttle(ProviderEntry& e) {
    if (e.settings.rate_limit_per_min <= 0) return 0;
    using namespace std::chrono;
    std::lock_guard lock(e.rate_mutex);
    double waited = 0;
    const auto limit = static_cast<std::size_t>(e.settings.rate_limit_per_min);
    for (;;) {
      const auto now = options.clock.now();
      while (!e.window.empty() && now - e.window.front() >= minutes(1)) e.window.pop_front();
      if (e.window.size() < limit) {
        e.window.push_back(now);
        return waited;
      }
      const auto until = e.window.front() + minutes(1);
      const auto wait = duration_cast<milliseconds>(until - now) + milliseconds(1);
      options.clock.sleep(wait);
      waited += ms_between(now, options.clock.now());
    }
  }

  // Runs `call` with throttling, concurrency slots and retry/backoff.
  template <class Fn>
  auto with_retries(ProviderEntry& e, int& retries, double& waited, Fn&& call) -> decltype(call()) {
    for (int attempt = 0;; ++attempt) {
      waited += throttle(e);
      e.slots->acquire();
      try {
        live_calls.fetch_add(1);
        auto result = call();
        e.slots->release();
        return result;
      } catch (const ProviderError& err) {
        e.slots->release();
        if (!err.transient() || attempt >= e.settings.max_retries) throw;
      } catch (const std::exception& err) {
        e.slots->release();
        throw ProviderError(ProviderError::Kind::fatal, err.what());
      }
      ++retries;
      auto delay = options.backoff_base * (1LL << std::min(attempt, 20));
      options.clock.sleep(std::min<std::chrono::milliseconds>(delay, options.backoff_cap));
    }
  }
};

Gateway::Gateway(GatewayOptions options) : state_(std::make_unique<State>()) {
  state_->options = std::move(options);
  if (!state_->options.clock.sleep) state_->options.clock.sleep = Clock::real().sleep;
}

Gateway::~Gateway() = default;

void Gateway::add_provider(ProviderSettings settings, std::shared_ptr<Provider> provider) {
  if (settings.provider_id.empty()) throw ValidationError("provider_id must be non-empty");
  if (settings.max_in_flight <= 0) throw ValidationError("max_in_flight must be positive");
  auto e = std::make_unique<ProviderEntry>();
  e->slots = std::make_unique<Semaphore>(std::min(settings.max_in_flight, 4096));
  e->settings = std::move(settings);
  e->provider = std::move(provider);
  std::lock_guard lock(state_->mutex);
  const auto id = e->settings.provider_id;
  state_->providers[id] = std::move(e);
}

void Gateway::bind(Role role, std::string provider_id) {
  std::lock_guard lock(state_->mutex);
  if (!state_->providers.count(provider_id)) {
    throw ValidationError("cannot bind role " + std::string(to_string(role)) + " to unknown provider '" +
                          provider_id + "'");
  }
  state_->bindings[role] = std::move(provider_id);
}

bool Gateway::has_binding(Role role) const { return binding(role).has_value(); }

std::optional<std::string> Gateway::binding(Role role) const {
  std::lock_guard lock(state_->mutex);
  const auto it = state_->bindings.find(role);
  if (it == state_->bindings.end()) return std::nullopt;
  return it->second;
}

ModelResponse Gateway::complete(const ModelRequest& request) {
  if (trim(request.prompt_text).empty()) throw ValidationError("model request with empty prompt");
  if (request.images.size() > 4) throw ValidationError("model request with more than 4 images");
  std::string provider_id = request.provider_id;
  if (provider_id.empty()) {
    auto bound = binding(request.role);
    if (!bound) throw ValidationError("no provider bound for role " + std::string(to_string(request.role)));
    provider_id = *bound;
  }
  auto& e = state_->entry(provider_id);
  const auto key = request_hash(request, provider_id);
  const auto start = state_->options.clock.now();

  AuditRecord audit;
  audit.role = std::string(to_string(request.role));
  audit.provider_id = provider_id;
  audit.request_hash = key;

  if (auto cached = state_->cache_get(key)) {
    audit.cache_hit = true;
    state_->record(audit);
    return ModelResponse{*cached, 0.0, provider_id, true, 0};
  }

  std::promise<std::string> promise;
  {
    std::unique_lock lock(state_->mutex);
    if (auto it = state_->inflight.find(key); it != state_->inflight.end()) {
      auto fut = it->second;
      lock.unlock();
      auto text = fut.get();  // rethrows the leader's failure
      audit.cache_hit = true;
      state_->record(audit);
      return ModelResponse{text, 0.0, provider_id, true, 0};
    }
    state_->inflight.emplace(key, promise.get_future().share());
  }
  auto finish_inflight = [&] {
    std::lock_guard lock(state_->mutex);
    state_->inflight.erase(key);
  };

  int retries = 0;
  double waited = 0;
  try {
    auto text = state_->with_retries(e, retries, waited, [&] { return e.provider->complete(request); });
    if (text.size() > e.settings.max_response_bytes) {
      throw ProviderError(ProviderError::Kind::fatal, "response-size limit exceeded (" +
                                                          std::to_string(text.size()) + " bytes)");
    }
    state_->cache_put(key, provider_id, text);
    promise.set_value(text);
    finish_inflight();
    audit.latency_ms = ms_between(start, state_->options.clock.now());
    audit.retries = retries;
    audit.wait_ms = waited;
    state_->record(audit);
    return ModelResponse{std::move(text), audit.latency_ms, provider_id, false, retries};
  } catch (const std::exception& err) {
    promise.set_exception(std::current_exception());
    finish_inflight();
    audit.latency_ms = ms_between(start, state_->options.clock.now());
    audit.retries = retries;
    audit.wait_ms = waited;
    audit.error = err.what();
    state_->record(audit);
    throw;
  }
}

std::vector<std::vector<double>> Gateway::embed(const std::vector<std::string>& texts,
                                                const std::string& provider_id_in) {
  if (texts.empty()) throw ValidationError("embed called with no texts");
  std::string provider_id = provider_id_in;
  if (provider_id.empty()) {
    auto bound = binding(Role::embedder);
    if (!bound) throw ValidationError("no provider bound for role embedder");
    provider_id = *bound;
  }
  auto& e = state_->entry(provider_id);
  std::vector<std::string> keys;
  std::vector<std::vector<double>> out(texts.size());
  std::vector<std::size_t> missing;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    keys.push_back(sha256_hex(provider_id + "\x1f" "embed\x1f" + texts[i]));
    std::lock_guard lock(state_->mutex);
    if (auto it = state_->embed_cache.find(keys[i]); it != state_->embed_cache.end()) {
      out[i] = it->second;
    } else {
      missing.push_back(i);
    }
  }
  AuditRecord audit;
  audit.role = std::string(to_string(Role::embedder));
  audit.provider_id = provider_id;
  audit.request_hash = sha256_hex([&] {
    std::string all;
    for (const auto& k : keys) all += k;
    return all;
  }());
  if (missing.empty()) {
    audit.cache_hit = true;
    state_->record(audit);
    return out;
  }
  std::vector<std::string> batch;
  for (auto i : missing) batch.push_back(texts[i]);
  const auto start = state_->options.clock.now();
  int retries = 0;
  double waited = 0;
  std::vector<std::vector<double>> vectors;
  try {
    vectors = state_->with_retries(e, retries, waited, [&] { return e.provider->embed(batch); });
    if (vectors.size() != batch.size()) {
      throw ProviderError(ProviderError::Kind::fatal, "embedding provider returned " +
                                                          std::to_string(vectors.size()) + " vectors for " +
                                                          std::to_string(batch.size()) + " texts");
    }
    for (auto& v : vectors) {
      double norm = 0;
      for (double x : v) norm += x * x;
      norm = std::sqrt(norm);
      if (!(norm > 0) || !std::isfinite(norm)) {
        throw ProviderError(ProviderError::Kind::fatal, "embedding provider returned a zero or non-finite vector");
      }
      for (double& x : v) x /= norm;
    }
  } catch (const std::exception& err) {
    audit.error = err.what();
    audit.retries = retries;
    audit.wait_ms = waited;
    state_->record(audit);
    throw;
  }
  for (std::size_t j = 0; j < missing.size(); ++j) {
    out[missing[j]] = vectors[j];
    std::lock_guard lock(state_->mutex);
    state_->embed_cache[keys[missing[j]]] = vectors[j];
  }
  audit.latency_ms = ms_between(start, state_->options.clock.now());
  audit.retries = retries;
  audit.wait_ms = waited;
  state_->record(audit);
  return out;
}

std::vector<AuditRecord> Gateway::audit() const {
  std::lock_guard lock(state_->audit_mutex);
  return state_->audit;
}

std::size_t Gateway::live_calls() const { return state_->live_calls.load(); }

}  // namespace pocoti::gateway

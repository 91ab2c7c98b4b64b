#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pocoti/util.hpp"

namespace pocoti::gateway {

enum class Role { evaluator, cot_generator, prompt_refiner, judge, caption_gt_generator, embedder, subject_model };
std::string_view to_string(Role r);
Role role_from_string(std::string_view s);

struct DecodeParams {
  double temperature = 0.0;
  int max_tokens = 2048;
  std::optional<std::uint64_t> seed;
};

struct ModelRequest {
  Role role = Role::evaluator;
  std::string provider_id;            // empty: use the role binding
  std::string prompt_text;
  std::vector<std::string> images;    // encoded PNG bytes, at most 4
  DecodeParams decode;
  // Sent alongside the prompt (e.g. which point cloud a subject model should
  // load) and part of the cache key.
  std::map<std::string, std::string> metadata;
  // Structured call-site context. Not sent over the wire and not part of the
  // cache key; scripted backends read it instead of parsing prompt_text.
  std::map<std::string, std::string> context;
};

struct ModelResponse {
  std::string text;
  double latency_ms = 0;
  std::string provider_id;
  bool cache_hit = false;
  int retries = 0;
};

/// Provider failures. Transient ones are retried by the gateway.
class ProviderError : public Error {
 public:
  enum class Kind { transient, auth, fatal };
  ProviderError(Kind kind, std::string message) : Error(std::move(message)), kind_(kind) {}
  Kind kind() const { return kind_; }
  bool transient() const { return kind_ == Kind::transient; }

 private:
  Kind kind_;
};

/// Backend adapter. Implementations must be safe to call concurrently.
class Provider {
 public:
  virtual ~Provider() = default;
  virtual std::string complete(const ModelRequest& request) = 0;
  virtual std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) {
    (void)texts;
    throw ProviderError(ProviderError::Kind::fatal, "provider does not support embeddings");
  }
};

struct ProviderSettings {
  std::string provider_id;
  int rate_limit_per_min = 0;   // 0: unlimited
  int max_retries = 3;
  int max_in_flight = 8;
  std::size_t max_response_bytes = 1 << 20;
};

/// Injectable time source; tests swap in a fake clock whose sleep advances time.
struct Clock {
  std::function<std::chrono::steady_clock::time_point()> now =
      [] { return std::chrono::steady_clock::now(); };
  std::function<void(std::chrono::milliseconds)> sleep;

  static Clock real();
};

struct GatewayOptions {
  std::optional<std::filesystem::path> cache_dir;  // nullopt: in-memory cache only
  std::optional<std::filesystem::path> audit_log;  // nullopt: audit kept in memory only
  std::chrono::milliseconds backoff_base{200};
  std::chrono::milliseconds backoff_cap{10'000};
  Clock clock = Clock::real();
};

struct AuditRecord {
  std::string timestamp;
  std::string role;
  std::string provider_id;
  std::string request_hash;
  bool cache_hit = false;
  double latency_ms = 0;
  int retries = 0;
  double wait_ms = 0;   // rate-limit delay
  std::optional<std::string> error;
};

/// Content hash over (provider_id, prompt_text, image hashes, decode params).
std::string request_hash(const ModelRequest& request, std::string_view provider_id);

class Gateway {
 public:
  explicit Gateway(GatewayOptions options = {});
  ~Gateway();
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  void add_provider(ProviderSettings settings, std::shared_ptr<Provider> provider);
  void bind(Role role, std::string provider_id);
  bool has_binding(Role role) const;
  std::optional<std::string> binding(Role role) const;

  /// Cached, rate-limited, retried completion. Throws ProviderError after
  /// the retry cap or on non-transient failures, ValidationError on bad
  /// requests.
  ModelResponse complete(const ModelRequest& request);

  /// L2-normalized embeddings, one per text, in input order.
  std::vector<std::vector<double>> embed(const std::vector<std::string>& texts,
                                         const std::string& provider_id = {});

  std::vector<AuditRecord> audit() const;
  /// Number of calls that reached a provider (cache misses).
  std::size_t live_calls() const;

 private:
  struct State;
  std::unique_ptr<State> state_;
};

}  // namespace pocoti::gateway

#pragma once

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "pocoti/gateway.hpp"

namespace pocoti::gateway {

/// Test double: answers from a table keyed by request hash, then a queue of
/// scripted outcomes, then a handler. Records every call it receives.
class ScriptedProvider : public Provider {
 public:
  using Handler = std::function<std::string(const ModelRequest&)>;
  using EmbedHandler = std::function<std::vector<double>(const std::string&)>;

  explicit ScriptedProvider(std::string provider_id, Handler handler = {});

  void script(const std::string& hash, std::string text);
  void fail_next(ProviderError::Kind kind, int times = 1);
  void set_handler(Handler handler);
  void set_embed_handler(EmbedHandler handler);

  std::string complete(const ModelRequest& request) override;
  std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) override;

  std::size_t calls() const;
  std::vector<ModelRequest> requests() const;

 private:
  std::string provider_id_;
  mutable std::mutex mutex_;
  std::map<std::string, std::string> table_;
  std::deque<ProviderError::Kind> failures_;
  Handler handler_;
  EmbedHandler embed_handler_;
  std::vector<ModelRequest> requests_;
};

/// Deterministic offline backend for every role, driven by the request
/// context the pipeline attaches. Behavior is a pure function of
/// (request context, seed).
struct MockOptions {
  std::uint64_t seed = 0;
  double keep_fraction = 1.0;     // evaluator verdict mix; remainder split
  double improve_fraction = 0.0;  // between IMPROVE and INVALID
  std::size_t embedding_dim = 32;
};

std::shared_ptr<Provider> make_mock_provider(MockOptions options = {});

/// Chat-completion style HTTP+JSON adapter (`POST {base_url}/chat/completions`,
/// `POST {base_url}/embeddings`).
struct HttpProviderConfig {
  std::string provider_id;
  std::string base_url;        // scheme://host[:port][/path-prefix]
  std::string model_name;
  std::string api_key;         // resolved from the configured environment variable
  double timeout_s = 120;
};

std::shared_ptr<Provider> make_http_provider(HttpProviderConfig config);

/// Request body the HTTP adapter sends; exposed for inspection and tests.
std::string chat_request_body(const ModelRequest& request, const std::string& model_name);

}  // namespace pocoti::gateway

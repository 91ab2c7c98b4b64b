#include "httplib.h"
#include "json.hpp"
#include "pocoti/providers.hpp"

namespace pocoti::gateway {

namespace {

struct BaseUrl {
  std::string origin;
  std::string prefix;
};

BaseUrl split_base_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw ValidationError("base_url needs a scheme: " + url);
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, ""};
  auto prefix = url.substr(slash);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {url.substr(0, slash), prefix};
}

ProviderError classify(const httplib::Result& res, const std::string& what) {
  if (!res) {
    return ProviderError(ProviderError::Kind::transient,
                         what + ": connection failed (" + httplib::to_string(res.error()) + ")");
  }
  const int status = res->status;
  const auto msg = what + ": HTTP " + std::to_string(status);
  if (status == 401 || status == 403) return ProviderError(ProviderError::Kind::auth, msg);
  if (status == 408 || status == 429 || status >= 500) return ProviderError(ProviderError::Kind::transient, msg);
  return ProviderError(ProviderError::Kind::fatal, msg);
}

class HttpProvider : public Provider {
 public:
  explicit HttpProvider(HttpProviderConfig config)
      : config_(std::move(config)), url_(split_base_url(config_.base_url)) {}

  std::string complete(const ModelRequest& request) override {
    const auto body = chat_request_body(request, config_.model_name);
    const auto json = post("/chat/completions", body);
    try {
      const auto& content = json.at("choices").at(0).at("message").at("content");
      if (content.is_string()) return content.get<std::string>();
      // Some providers return content parts.
      std::string text;
      for (const auto& part : content) {
        if (part.value("type", "") == "text") text += part.value("text", "");
      }
      return text;
    } catch (const nlohmann::json::exception& e) {
      throw ProviderError(ProviderError::Kind::fatal, std::string("unexpected completion payload: ") + e.what());
    }
  }

  std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) override {
    nlohmann::json body;
    body["model"] = config_.model_name;
    body["input"] = texts;
    const auto json = post("/embeddings", body.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace));
    try {
      std::vector<std::vector<double>> out(texts.size());
      for (const auto& item : json.at("data")) {
        const auto index = item.value("index", std::size_t{0});
        if (index >= out.size()) throw ProviderError(ProviderError::Kind::fatal, "embedding index out of range");
        out[index] = item.at("embedding").get<std::vector<double>>();
      }
      return out;
    } catch (const nlohmann::json::exception& e) {
      throw ProviderError(ProviderError::Kind::fatal, std::string("unexpected embedding payload: ") + e.what());
    }
  }

 private:
  nlohmann::json post(const std::string& path, const std::string& body) {
    httplib::Client client(url_.origin);
    const auto secs = static_cast<time_t>(config_.timeout_s);
    client.set_connection_timeout(secs);
    client.set_read_timeout(secs);
    httplib::Headers headers;
    if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);
    auto res = client.Post(url_.prefix + path, headers, body, "application/json");
    if (!res || res->status != 200) throw classify(res, config_.provider_id);
    try {
      return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::parse_error&) {
      throw ProviderError(ProviderError::Kind::transient, config_.provider_id + ": response is not JSON");
    }
  }

  HttpProviderConfig config_;
  BaseUrl url_;
};

}  // namespace

std::shared_ptr<Provider> make_http_provider(HttpProviderConfig config) {
  return std::make_shared<HttpProvider>(std::move(config));
}

}  // namespace pocoti::gateway

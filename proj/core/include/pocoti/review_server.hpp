#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "pocoti/hilpo.hpp"

namespace pocoti::hilpo {

struct ReviewServerOptions {
  std::string host = "127.0.0.1";
  int port = 0;                      // 0: pick a free port
  std::filesystem::path views_dir;   // rendered views, {cloud_id}_v{k}.png
};

struct ApiResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

/// HTTP+JSON review API over a PromptStore. The server is the store's only
/// writer while it runs; requests are serialized by the store.
class ReviewServer {
 public:
  ReviewServer(PromptStore& store, ReviewServerOptions options);
  ~ReviewServer();
  ReviewServer(const ReviewServer&) = delete;
  ReviewServer& operator=(const ReviewServer&) = delete;

  /// Transport-free dispatch; the HTTP layer forwards to this.
  ApiResponse handle(const std::string& method, const std::string& path, const std::string& body) const;

  /// Binds and serves on a background thread; returns the bound port.
  int start();
  /// Binds and serves on the calling thread until stop().
  void serve();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace pocoti::hilpo

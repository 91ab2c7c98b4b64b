#include "pocoti/review_server.hpp"

#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "pocoti/render.hpp"

namespace pocoti::hilpo {

using json = nlohmann::ordered_json;

struct ReviewServer::Impl {
  Impl(PromptStore& s, ReviewServerOptions o) : store(s), options(std::move(o)) {}
  PromptStore& store;
  ReviewServerOptions options;
  httplib::Server server;
  std::thread thread;
};

namespace {

ApiResponse json_response(int status, const json& body) {
  return {status, "application/json", body.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace)};
}

ApiResponse error_response(int status, const std::string& message) {
  return json_response(status, {{"error", message}});
}

json decision_json(const std::optional<HumanDecision>& d) {
  if (!d) return nullptr;
  return {{"decision", std::string(to_string(d->decision))},
          {"reviewer", d->reviewer},
          {"note", d->note},
          {"timestamp", d->timestamp}};
}

json summary_json(const PromptVersion& v) {
  return {{"prompt_id", v.prompt_id},
          {"iteration_k", v.iteration_k},
          {"state", std::string(to_string(v.state))},
          {"parent_id", v.parent_id ? json(*v.parent_id) : json(nullptr)},
          {"batch_id", v.batch_id ? json(*v.batch_id) : json(nullptr)},
          {"no_change", v.no_change},
          {"insertions", diff::count(v.diff, diff::OpKind::insert)},
          {"deletions", diff::count(v.diff, diff::OpKind::remove)},
          {"created_seq", v.created_seq},
          {"decision", decision_json(v.decision)}};
}

json ops_json(const std::vector<diff::DiffOp>& ops) {
  json out = json::array();
  for (const auto& op : ops) {
    const char* kind = op.kind == diff::OpKind::equal ? "equal" : op.kind == diff::OpKind::insert ? "insert" : "delete";
    out.push_back({{"op", kind}, {"text", op.text}});
  }
  return out;
}

// Cloud ids become file names; refuse anything that could leave views_dir.
bool safe_id(const std::string& id) {
  if (id.empty() || id[0] == '.') return false;
  for (char c : id) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) return false;
  }
  return true;
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::size_t pos = 0;
  while (pos <= path.size()) {
    const auto slash = path.find('/', pos);
    const auto end = slash == std::string::npos ? path.size() : slash;
    if (end > pos) parts.push_back(path.substr(pos, end - pos));
    if (slash == std::string::npos) break;
    pos = slash + 1;
  }
  return parts;
}

}  // namespace

ReviewServer::ReviewServer(PromptStore& store, ReviewServerOptions options)
    : impl_(std::make_unique<Impl>(store, std::move(options))) {
  auto forward = [this](const httplib::Request& req, httplib::Response& res) {
    const auto r = handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  impl_->server.Get(R"(/api/.*)", forward);
  impl_->server.Post(R"(/api/.*)", forward);
}

ReviewServer::~ReviewServer() { stop(); }

ApiResponse ReviewServer::handle(const std::string& method, const std::string& path, const std::string& body) const {
  auto& store = impl_->store;
  const auto parts = split_path(path);
  try {
    if (parts.size() < 2 || parts[0] != "api") return error_response(404, "no such endpoint");
    const auto& area = parts[1];
    if (method == "GET" && area == "prompts" && parts.size() == 2) {
      json list = json::array();
      for (const auto& v : store.versions()) list.push_back(summary_json(v));
      const auto conv = store.check_convergence();
      return json_response(200, {{"prompts", list},
                                 {"finalized_id", store.finalized_id() ? json(*store.finalized_id()) : json(nullptr)},
                                 {"converged", conv.converged},
                                 {"convergence_reason", conv.reason}});
    }
    if (method == "GET" && area == "prompts" && parts.size() == 3 && parts[2] == "active") {
      const auto a = store.active();
      if (!a) return error_response(404, "no active prompt");
      auto j = summary_json(*a);
      j["text"] = a->text;
      return json_response(200, j);
    }
    if (method == "GET" && area == "candidates" && parts.size() == 3 && parts[2] == "pending") {
      json list = json::array();
      for (const auto& v : store.pending()) list.push_back(summary_json(v));
      return json_response(200, {{"candidates", list}});
    }
    if (area == "candidates" && parts.size() >= 3) {
      const auto c = store.find(parts[2]);
      if (!c || !c->parent_id) return error_response(404, "no candidate " + parts[2]);
      if (method == "GET" && parts.size() == 3) {
        const auto parent = store.find(*c->parent_id);
        auto j = summary_json(*c);
        j["candidate_text"] = c->text;
        j["parent_text"] = parent ? parent->text : std::string{};
        j["rationale"] = c->rationale;
        j["diff"] = {{"unified", diff::unified_diff(c->diff, *c->parent_id, c->prompt_id)}, {"ops", ops_json(c->diff)}};
        json snippets = json::array();
        std::size_t failed = 0, total = 0;
        if (c->batch_id) {
          if (const auto b = store.batch(*c->batch_id)) {
            for (const auto& s : b->snippets) {
              json views = json::array();
              for (int k = 1; k <= 4; ++k) views.push_back("/api/views/" + s.cloud_id + "/" + std::to_string(k) + ".png");
              snippets.push_back({{"sample_id", s.sample_id},
                                  {"cloud_id", s.cloud_id},
                                  {"instruction", s.instruction},
                                  {"answer", s.answer},
                                  {"reasoning", s.reasoning},
                                  {"parse_ok", s.parse_ok},
                                  {"error", s.error},
                                  {"views", views}});
              ++total;
              failed += s.parse_ok ? 0 : 1;
            }
          }
        }
        j["batch"] = {{"batch_id", c->batch_id ? json(*c->batch_id) : json(nullptr)}, {"snippets", snippets}};
        j["parse_stats"] = {{"total", total}, {"ok", total - failed}, {"failed", failed}};
        return json_response(200, j);
      }
      if (method == "POST" && parts.size() == 4 && parts[3] == "decision") {
        nlohmann::json req;
        try {
          req = nlohmann::json::parse(body);
        } catch (const nlohmann::json::exception&) {
          return error_response(400, "body must be JSON");
        }
        if (!req.is_object() || !req.contains("decision") || !req["decision"].is_string()) {
          return error_response(400, "body needs \"decision\": \"accept\" | \"reject\"");
        }
        HumanDecision d;
        d.decision = decision_from_string(req["decision"].get<std::string>());
        d.reviewer = req.value("reviewer", std::string{});
        d.note = req.value("note", std::string{});
        if (trim(d.reviewer).empty()) return error_response(400, "reviewer must be named");
        const auto updated = store.apply_decision(c->prompt_id, d);
        auto j = summary_json(updated);
        const auto active = store.active();
        j["active_prompt_id"] = active ? json(active->prompt_id) : json(nullptr);
        return json_response(200, j);
      }
    }
    if (method == "POST" && area == "finalize" && parts.size() == 2) {
      std::string reviewer;
      if (!trim(body).empty()) {
        try {
          reviewer = nlohmann::json::parse(body).value("reviewer", std::string{});
        } catch (const nlohmann::json::exception&) {
          return error_response(400, "body must be JSON");
        }
      }
      const auto p = store.finalize(reviewer);
      return json_response(200, {{"final_prompt_id", p.prompt_id}, {"iteration_k", p.iteration_k}});
    }
    if (method == "GET" && area == "views" && parts.size() == 4) {
      const auto& cloud = parts[2];
      const auto& file = parts[3];
      if (!safe_id(cloud) || file.size() != 5 || file.substr(1) != ".png" || file[0] < '1' || file[0] > '4') {
        return error_response(404, "no such view");
      }
      const auto path = impl_->options.views_dir / render::view_filename(cloud, static_cast<std::size_t>(file[0] - '0'));
      if (impl_->options.views_dir.empty() || !std::filesystem::exists(path)) return error_response(404, "no such view");
      return {200, "image/png", read_file(path)};
    }
    return error_response(404, "no such endpoint");
  } catch (const StateError& e) {
    return error_response(409, e.what());
  } catch (const ValidationError& e) {
    return error_response(400, e.what());
  } catch (const std::exception& e) {
    return error_response(500, e.what());
  }
}

int ReviewServer::start() {
  const int port = impl_->options.port == 0 ? impl_->server.bind_to_any_port(impl_->options.host)
                                             : (impl_->server.bind_to_port(impl_->options.host, impl_->options.port)
                                                    ? impl_->options.port
                                                    : -1);
  if (port < 0) throw Error("cannot bind review server to " + impl_->options.host + ":" + std::to_string(impl_->options.port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port;
}

void ReviewServer::serve() {
  if (!impl_->server.listen(impl_->options.host, impl_->options.port)) {
    throw Error("cannot serve on " + impl_->options.host + ":" + std::to_string(impl_->options.port));
  }
}

void ReviewServer::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace pocoti::hilpo

#include "pocoti/config.hpp"

#include <cstdlib>
#include <set>

#include "json.hpp"
#include "pocoti/providers.hpp"

namespace pocoti::pipeline {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string ConfigResult::error_text() const {
  std::string out;
  for (const auto& e : errors) {
    out += e.field + ": " + e.message;
    if (!e.remedy.empty()) out += " (" + e.remedy + ")";
    out += "\n";
  }
  return out;
}

std::vector<gateway::Role> required_roles(const StageSwitches& stages) {
  std::vector<gateway::Role> roles;
  if (stages.with_refinement) roles.push_back(gateway::Role::evaluator);
  if (stages.with_hilpo) {
    roles.push_back(gateway::Role::cot_generator);
    roles.push_back(gateway::Role::prompt_refiner);
  }
  if (stages.with_cot && !stages.with_hilpo) roles.push_back(gateway::Role::cot_generator);
  return roles;
}

namespace {

class Reader {
 public:
  std::vector<ConfigError> errors;

  void error(std::string field, std::string message, std::string remedy = {}) {
    errors.push_back({std::move(field), std::move(message), std::move(remedy)});
  }

  // Flags keys outside `allowed`; false when `j` is not an object.
  bool object(const json& j, const std::string& field, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) {
      error(field.empty() ? "<root>" : field, "must be a JSON object");
      return false;
    }
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (!ok.count(it.key())) {
        std::string known;
        for (const auto& k : ok) known += (known.empty() ? "" : ", ") + k;
        error(join(field, it.key()), "unknown key \"" + it.key() + "\"", "known keys here: " + known);
      }
    }
    return true;
  }

  static std::string join(const std::string& a, const std::string& b) { return a.empty() ? b : a + "." + b; }

  template <class T>
  void number(const json& obj, const std::string& field, const char* key, T& out, double min, double max) {
    if (!obj.contains(key)) return;
    const auto& v = obj[key];
    const auto path = join(field, key);
    if (!v.is_number()) return error(path, "must be a number");
    const double d = v.get<double>();
    if (d < min || d > max) {
      return error(path, "out of range", "use a value in [" + fmt(min) + ", " + fmt(max) + "]");
    }
    if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer() && !v.is_number_unsigned()) return error(path, "must be an integer");
      out = static_cast<T>(v.get<std::int64_t>());
    } else {
      out = static_cast<T>(d);
    }
  }

  void boolean(const json& obj, const std::string& field, const char* key, bool& out) {
    if (!obj.contains(key)) return;
    if (!obj[key].is_boolean()) return error(join(field, key), "must be true or false");
    out = obj[key].get<bool>();
  }

  bool string(const json& obj, const std::string& field, const char* key, std::string& out) {
    if (!obj.contains(key)) return false;
    if (!obj[key].is_string()) {
      error(join(field, key), "must be a string");
      return false;
    }
    out = obj[key].get<std::string>();
    return true;
  }

 private:
  static std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
  }
};

// Replaces ${VAR} in every string value, recording unset variables.
void interpolate(json& j, const std::string& field, Reader& r) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) interpolate(it.value(), Reader::join(field, it.key()), r);
  } else if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i) interpolate(j[i], field + "[" + std::to_string(i) + "]", r);
  } else if (j.is_string()) {
    const auto s = j.get<std::string>();
    std::string out;
    std::size_t pos = 0;
    while (pos < s.size()) {
      const auto open = s.find("${", pos);
      if (open == std::string::npos) break;
      const auto close = s.find('}', open + 2);
      if (close == std::string::npos) break;
      out.append(s, pos, open - pos);
      const auto name = s.substr(open + 2, close - open - 2);
      if (const char* v = std::getenv(name.c_str())) {
        out += v;
      } else {
        r.error(field, "environment variable " + name + " is not set", "export " + name + " before running");
      }
      pos = close + 1;
    }
    out.append(s, pos, std::string::npos);
    j = out;
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace

ConfigResult parse_config(std::string_view text, const fs::path& base_dir, bool check_paths) {
  Reader r;
  ConfigResult result;
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    result.errors.push_back({"<root>", std::string("not valid JSON: ") + e.what(), "fix the syntax"});
    return result;
  }
  if (!r.object(root, "", {"paths", "render", "providers", "bindings", "stages", "seeds", "hilpo", "concurrency",
                           "stage1", "ingest", "export"})) {
    result.errors = r.errors;
    return result;
  }
  interpolate(root, "", r);

  PipelineConfig c;
  // paths
  if (!root.contains("paths")) {
    r.error("paths", "missing", "add a \"paths\" object with clouds, corpora and outputs");
  } else if (const auto& p = root["paths"]; r.object(p, "paths", {"clouds", "corpora", "outputs", "cache"})) {
    std::string s;
    if (r.string(p, "paths", "clouds", s)) {
      c.clouds = resolve(base_dir, s);
      if (check_paths && !fs::is_directory(c.clouds)) {
        r.error("paths.clouds", "directory " + c.clouds.string() + " does not exist", "point it at the point-cloud directory");
      }
    } else {
      r.error("paths.clouds", "missing", "set the point-cloud directory");
    }
    if (r.string(p, "paths", "outputs", s)) {
      c.outputs = resolve(base_dir, s);
    } else {
      r.error("paths.outputs", "missing", "set the output directory");
    }
    // null (as written by to_json) means the default cache location.
    if (!(p.contains("cache") && p["cache"].is_null()) && r.string(p, "paths", "cache", s)) {
      c.cache = resolve(base_dir, s);
    }
    if (!p.contains("corpora") || !p["corpora"].is_array() || p["corpora"].empty()) {
      r.error("paths.corpora", "must be a non-empty list", "list the instruction record files to ingest");
    } else {
      for (std::size_t i = 0; i < p["corpora"].size(); ++i) {
        const auto& e = p["corpora"][i];
        const auto field = "paths.corpora[" + std::to_string(i) + "]";
        CorpusInput in;
        std::string path_s;
        if (e.is_string()) {
          path_s = e.get<std::string>();
        } else if (r.object(e, field, {"path", "source"})) {
          if (!r.string(e, field, "path", path_s)) r.error(field + ".path", "missing", "give the record file path");
          std::string src;
          if (r.string(e, field, "source", src)) {
            try {
              in.source = data::source_from_string(src);
            } catch (const Error&) {
              r.error(field + ".source", "unknown source \"" + src + "\"",
                      "use shapellm_sft, cap3d_caption or regenerated");
            }
          }
        } else {
          continue;
        }
        if (path_s.empty()) continue;
        in.path = resolve(base_dir, path_s);
        if (check_paths && !fs::is_regular_file(in.path)) {
          r.error(field, "file " + in.path.string() + " does not exist", "fix the path");
        }
        c.corpora.push_back(std::move(in));
      }
    }
  }

  // render
  if (root.contains("render") &&
      r.object(root["render"], "render", {"azimuths_deg", "elevation_deg", "projection", "fov_deg", "image_size",
                                          "splat_radius", "background", "distance"})) {
    const auto& j = root["render"];
    if (j.contains("azimuths_deg")) {
      const auto& a = j["azimuths_deg"];
      if (!a.is_array() || a.size() != render::kViewCount) {
        r.error("render.azimuths_deg", "must list exactly 4 azimuths", "e.g. [0, 90, 180, 270]");
      } else {
        for (std::size_t i = 0; i < render::kViewCount; ++i) {
          if (!a[i].is_number()) {
            r.error("render.azimuths_deg[" + std::to_string(i) + "]", "must be a number");
          } else {
            c.render.azimuths_deg[i] = a[i].get<double>();
          }
        }
      }
    }
    r.number(j, "render", "elevation_deg", c.render.elevation_deg, -89.999, 89.999);
    r.number(j, "render", "fov_deg", c.render.fov_deg, 1.0, 179.0);
    r.number(j, "render", "image_size", c.render.image_size, 8, 4096);
    r.number(j, "render", "splat_radius", c.render.splat_radius, 0, 64);
    r.number(j, "render", "distance", c.render.distance, 1.0001, 1000.0);
    std::string proj;
    if (r.string(j, "render", "projection", proj)) {
      if (proj == "orthographic") {
        c.render.projection = render::Projection::orthographic;
      } else if (proj == "perspective") {
        c.render.projection = render::Projection::perspective;
      } else {
        r.error("render.projection", "unknown projection \"" + proj + "\"", "use orthographic or perspective");
      }
    }
    if (j.contains("background")) {
      const auto& b = j["background"];
      if (!b.is_array() || b.size() != 3 || !b[0].is_number_integer() || !b[1].is_number_integer() ||
          !b[2].is_number_integer()) {
        r.error("render.background", "must be [r, g, b] with integers 0-255");
      } else {
        auto ch = [](const json& v) { return static_cast<std::uint8_t>(std::clamp<std::int64_t>(v.get<std::int64_t>(), 0, 255)); };
        c.render.background = {ch(b[0]), ch(b[1]), ch(b[2])};
      }
    }
  }

  // concurrency (read early: provider defaults depend on it)
  if (root.contains("concurrency") && r.object(root["concurrency"], "concurrency", {"budget"})) {
    r.number(root["concurrency"], "concurrency", "budget", c.budget, 1, 1024);
  }

  // providers
  std::set<std::string> provider_ids;
  if (root.contains("providers")) {
    const auto& ps = root["providers"];
    if (!ps.is_array()) {
      r.error("providers", "must be a list");
    } else {
      for (std::size_t i = 0; i < ps.size(); ++i) {
        const auto field = "providers[" + std::to_string(i) + "]";
        const auto& p = ps[i];
        if (!r.object(p, field, {"id", "kind", "seed", "keep_fraction", "improve_fraction", "embedding_dim", "base_url",
                                 "model", "api_key", "timeout_s", "rate_limit_per_min", "max_retries",
                                 "max_in_flight"})) {
          continue;
        }
        ProviderConfig pc;
        if (!r.string(p, field, "id", pc.id) || pc.id.empty()) r.error(field + ".id", "missing", "name the provider");
        if (!provider_ids.insert(pc.id).second) r.error(field + ".id", "duplicate provider id " + pc.id);
        r.string(p, field, "kind", pc.kind);
        r.number(p, field, "rate_limit_per_min", pc.rate_limit_per_min, 0, 1e9);
        r.number(p, field, "max_retries", pc.max_retries, 0, 100);
        if (p.contains("max_in_flight")) {
          int m = 1;
          r.number(p, field, "max_in_flight", m, 1, 4096);
          pc.max_in_flight = m;
        }
        if (pc.kind == "mock") {
          for (const char* k : {"base_url", "model", "api_key", "timeout_s"}) {
            if (p.contains(k)) r.error(field + "." + k, "not used by mock providers", "remove it");
          }
          r.number(p, field, "seed", pc.seed, 0, 1.8e19);
          r.number(p, field, "keep_fraction", pc.keep_fraction, 0, 1);
          r.number(p, field, "improve_fraction", pc.improve_fraction, 0, 1);
          r.number(p, field, "embedding_dim", pc.embedding_dim, 1, 65536);
          if (pc.keep_fraction + pc.improve_fraction > 1.0 + 1e-12) {
            r.error(field, "keep_fraction + improve_fraction exceeds 1");
          }
        } else if (pc.kind == "http") {
          for (const char* k : {"seed", "keep_fraction", "improve_fraction", "embedding_dim"}) {
            if (p.contains(k)) r.error(field + "." + k, "not used by http providers", "remove it");
          }
          if (!r.string(p, field, "base_url", pc.base_url) || pc.base_url.empty()) {
            r.error(field + ".base_url", "missing", "give the API base URL");
          }
          if (!r.string(p, field, "model", pc.model) || pc.model.empty()) {
            r.error(field + ".model", "missing", "give the model name");
          }
          r.string(p, field, "api_key", pc.api_key);
          r.number(p, field, "timeout_s", pc.timeout_s, 1, 3600);
        } else {
          r.error(field + ".kind", "unknown provider kind \"" + pc.kind + "\"", "use mock or http");
        }
        c.providers.push_back(std::move(pc));
      }
    }
  }

  // bindings
  if (root.contains("bindings") &&
      r.object(root["bindings"], "bindings", {"evaluator", "cot_generator", "prompt_refiner", "judge",
                                              "caption_gt_generator", "embedder", "subject_model"})) {
    for (auto it = root["bindings"].begin(); it != root["bindings"].end(); ++it) {
      const auto field = "bindings." + it.key();
      if (!it.value().is_string()) {
        r.error(field, "must be a provider id");
        continue;
      }
      const auto id = it.value().get<std::string>();
      if (!provider_ids.count(id)) {
        r.error(field, "names unknown provider \"" + id + "\"", "add it to providers or bind an existing one");
        continue;
      }
      c.bindings[gateway::role_from_string(it.key())] = id;
    }
  }

  // stages
  if (root.contains("stages") &&
      r.object(root["stages"], "stages", {"with_refinement", "with_hilpo", "with_cot"})) {
    r.boolean(root["stages"], "stages", "with_refinement", c.stages.with_refinement);
    r.boolean(root["stages"], "stages", "with_hilpo", c.stages.with_hilpo);
    r.boolean(root["stages"], "stages", "with_cot", c.stages.with_cot);
  }
  for (const auto role : required_roles(c.stages)) {
    if (!c.bindings.count(role)) {
      const std::string name(gateway::to_string(role));
      const char* stage = role == gateway::Role::evaluator ? "stages.with_refinement"
                          : role == gateway::Role::prompt_refiner ? "stages.with_hilpo"
                                                                  : "stages.with_hilpo / stages.with_cot";
      r.error("bindings." + name, "no provider bound for role " + name + ", required by " + stage,
              "bind a provider or disable the stage");
    }
  }

  if (root.contains("seeds") && r.object(root["seeds"], "seeds", {"hilpo"})) {
    r.number(root["seeds"], "seeds", "hilpo", c.hilpo_seed, 0, 1.8e19);
  }
  if (root.contains("hilpo") && r.object(root["hilpo"], "hilpo", {"batch_size", "snippet_budget"})) {
    r.number(root["hilpo"], "hilpo", "batch_size", c.batch_size, 1, 1e7);
    r.number(root["hilpo"], "hilpo", "snippet_budget", c.snippet_budget, 16, 1e7);
  }
  if (root.contains("stage1") && r.object(root["stage1"], "stage1", {"verify_improved"})) {
    r.boolean(root["stage1"], "stage1", "verify_improved", c.verify_improved);
  }
  if (root.contains("ingest") && r.object(root["ingest"], "ingest", {"caption_instruction"})) {
    r.string(root["ingest"], "ingest", "caption_instruction", c.caption_instruction);
    if (trim(c.caption_instruction).empty()) r.error("ingest.caption_instruction", "must not be empty");
  }
  if (root.contains("export") && r.object(root["export"], "export", {"context_template", "point_cloud_token"})) {
    r.string(root["export"], "export", "context_template", c.export_template.context_template);
    r.string(root["export"], "export", "point_cloud_token", c.export_template.point_cloud_token);
    try {
      c.export_template.validate();
    } catch (const ValidationError& e) {
      r.error("export.context_template", e.what(), "include {point_cloud} and {instruction}");
    }
  }
  try {
    c.render.validate();
  } catch (const ValidationError& e) {
    r.error("render", e.what());
  }

  result.errors = std::move(r.errors);
  if (result.errors.empty()) result.config = std::move(c);
  return result;
}

ConfigResult validate_config(const fs::path& path) {
  if (!fs::is_regular_file(path)) {
    ConfigResult r;
    r.errors.push_back({"<file>", "config file " + path.string() + " does not exist", "pass an existing file"});
    return r;
  }
  return parse_config(read_file(path), path.parent_path());
}

std::string PipelineConfig::to_json() const {
  ojson j;
  j["paths"]["clouds"] = clouds.string();
  j["paths"]["corpora"] = ojson::array();
  for (const auto& c : corpora) {
    j["paths"]["corpora"].push_back({{"path", c.path.string()}, {"source", data::to_string(c.source)}});
  }
  j["paths"]["outputs"] = outputs.string();
  j["paths"]["cache"] = cache ? ojson(cache->string()) : ojson(nullptr);
  j["render"]["azimuths_deg"] = render.azimuths_deg;
  j["render"]["elevation_deg"] = render.elevation_deg;
  j["render"]["projection"] = render.projection == render::Projection::orthographic ? "orthographic" : "perspective";
  j["render"]["fov_deg"] = render.fov_deg;
  j["render"]["image_size"] = render.image_size;
  j["render"]["splat_radius"] = render.splat_radius;
  j["render"]["background"] = {render.background.r, render.background.g, render.background.b};
  j["render"]["distance"] = render.distance;
  j["providers"] = ojson::array();
  for (const auto& p : providers) {
    ojson pj;
    pj["id"] = p.id;
    pj["kind"] = p.kind;
    if (p.kind == "mock") {
      pj["seed"] = p.seed;
      pj["keep_fraction"] = p.keep_fraction;
      pj["improve_fraction"] = p.improve_fraction;
      pj["embedding_dim"] = p.embedding_dim;
    } else {
      pj["base_url"] = p.base_url;
      pj["model"] = p.model;
      pj["api_key"] = p.api_key.empty() ? "" : "<set>";  // never echo secrets
      pj["timeout_s"] = p.timeout_s;
    }
    pj["rate_limit_per_min"] = p.rate_limit_per_min;
    pj["max_retries"] = p.max_retries;
    pj["max_in_flight"] = p.max_in_flight.value_or(static_cast<int>(budget));
    j["providers"].push_back(std::move(pj));
  }
  j["bindings"] = ojson::object();
  for (const auto& [role, id] : bindings) j["bindings"][std::string(gateway::to_string(role))] = id;
  j["stages"]["with_refinement"] = stages.with_refinement;
  j["stages"]["with_hilpo"] = stages.with_hilpo;
  j["stages"]["with_cot"] = stages.with_cot;
  j["seeds"]["hilpo"] = hilpo_seed;
  j["hilpo"]["batch_size"] = batch_size;
  j["hilpo"]["snippet_budget"] = snippet_budget;
  j["concurrency"]["budget"] = budget;
  j["stage1"]["verify_improved"] = verify_improved;
  j["ingest"]["caption_instruction"] = caption_instruction;
  j["export"]["context_template"] = export_template.context_template;
  j["export"]["point_cloud_token"] = export_template.point_cloud_token;
  return j.dump(2) + "\n";
}

std::string PipelineConfig::hash() const { return sha256_hex(to_json()); }

std::unique_ptr<gateway::Gateway> build_gateway(const PipelineConfig& config, std::optional<fs::path> audit_log) {
  gateway::GatewayOptions opts;
  opts.cache_dir = config.cache;
  opts.audit_log = std::move(audit_log);
  auto gw = std::make_unique<gateway::Gateway>(opts);
  for (const auto& p : config.providers) {
    gateway::ProviderSettings s;
    s.provider_id = p.id;
    s.rate_limit_per_min = p.rate_limit_per_min;
    s.max_retries = p.max_retries;
    s.max_in_flight = p.max_in_flight.value_or(static_cast<int>(config.budget));
    if (p.kind == "mock") {
      gw->add_provider(s, gateway::make_mock_provider({p.seed, p.keep_fraction, p.improve_fraction, p.embedding_dim}));
    } else {
      gw->add_provider(s, gateway::make_http_provider({p.id, p.base_url, p.model, p.api_key,
                                                       static_cast<double>(p.timeout_s)}));
    }
  }
  for (const auto& [role, id] : config.bindings) gw->bind(role, id);
  return gw;
}

}  // namespace pocoti::pipeline

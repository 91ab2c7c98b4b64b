#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pocoti/dataset.hpp"
#include "pocoti/export.hpp"
#include "pocoti/gateway.hpp"
#include "pocoti/render.hpp"

namespace pocoti::pipeline {

struct CorpusInput {
  std::filesystem::path path;
  data::Source source = data::Source::shapellm_sft;
};

struct ProviderConfig {
  std::string id;
  std::string kind;  // "mock" | "http"
  // mock
  std::uint64_t seed = 0;
  double keep_fraction = 1.0;
  double improve_fraction = 0.0;
  std::size_t embedding_dim = 32;
  // http
  std::string base_url;
  std::string model;
  std::string api_key;
  int timeout_s = 120;
  // gateway limits
  int rate_limit_per_min = 0;
  int max_retries = 3;
  std::optional<int> max_in_flight;  // default: concurrency budget
};

struct StageSwitches {
  bool with_refinement = true;
  bool with_hilpo = true;
  bool with_cot = true;
};

struct PipelineConfig {
  std::filesystem::path clouds;
  std::vector<CorpusInput> corpora;
  std::filesystem::path outputs;
  std::optional<std::filesystem::path> cache;
  render::RenderConfig render;
  std::vector<ProviderConfig> providers;
  std::map<gateway::Role, std::string> bindings;
  StageSwitches stages;
  std::uint64_t hilpo_seed = 0;
  std::size_t batch_size = 100;     // N_S
  std::size_t snippet_budget = 1200;
  std::size_t budget = 8;           // concurrency budget
  bool verify_improved = false;
  std::string caption_instruction{data::kDefaultCaptionInstruction};
  synth::TemplateConfig export_template;

  /// Canonical JSON with every default materialized.
  std::string to_json() const;
  /// sha256 of to_json().
  std::string hash() const;
};

struct ConfigError {
  std::string field;   // dotted path, e.g. "bindings.evaluator"
  std::string message;
  std::string remedy;
};

struct ConfigResult {
  std::optional<PipelineConfig> config;
  std::vector<ConfigError> errors;

  bool ok() const { return config.has_value(); }
  std::string error_text() const;
};

/// Parses and validates config text. Relative paths resolve against
/// `base_dir`; `${VAR}` in string values is replaced from the environment.
ConfigResult parse_config(std::string_view text, const std::filesystem::path& base_dir,
                          bool check_paths = true);
ConfigResult validate_config(const std::filesystem::path& path);

/// Roles each enabled stage needs bound.
std::vector<gateway::Role> required_roles(const StageSwitches& stages);

/// Gateway with every configured provider registered and roles bound.
std::unique_ptr<gateway::Gateway> build_gateway(const PipelineConfig& config,
                                                std::optional<std::filesystem::path> audit_log = std::nullopt);

}  // namespace pocoti::pipeline

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "pocoti/cloud_io.hpp"
#include "pocoti/config.hpp"
#include "pocoti/dataset.hpp"
#include "pocoti/gateway.hpp"
#include "pocoti/providers.hpp"
#include "pocoti/quality.hpp"
#include "pocoti/render.hpp"

namespace pocoti::testing {

/// Fresh directory removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Seeded random cloud: points on a noisy ellipsoid shell, optionally colored.
data::RawCloud random_cloud(const std::string& id, std::size_t points, std::uint64_t seed, bool colored = true);

/// Writes `count` clouds named cloud_000.. as binary PLY files; returns their ids.
std::vector<std::string> write_cloud_dir(const std::filesystem::path& dir, std::size_t count, std::size_t points,
                                         std::uint64_t seed);

/// Instruction records (external ingest format) for every cloud.
std::string instruction_records(const std::vector<std::string>& cloud_ids, std::size_t per_cloud);

/// In-memory corpus of `clouds * per_cloud` ingested samples.
data::InstructionCorpus make_corpus(std::size_t clouds, std::size_t per_cloud, const std::string& name = "fixture");

/// Random printable text, optionally with newlines and multibyte characters.
std::string random_text(std::mt19937_64& rng, std::size_t max_len, bool multiline = true);

/// Four tiny PNGs whose pixels derive from the cloud id (mock models never
/// inspect pixels, but cache keys must differ across clouds).
render::EncodedViews tiny_views(const std::string& cloud_id);
quality::ViewLookup tiny_view_lookup();

/// Gateway with one provider bound to every role.
std::unique_ptr<gateway::Gateway> gateway_with(std::shared_ptr<gateway::Provider> provider,
                                               const std::string& id = "mock", int max_in_flight = 8);
std::unique_ptr<gateway::Gateway> mock_gateway(gateway::MockOptions options = {});

/// Full pipeline fixture on disk: clouds, one instruction-record corpus and
/// a mock-backed config.
struct PipelineFixture {
  std::filesystem::path root;
  std::vector<std::string> cloud_ids;
  pipeline::PipelineConfig config;
};

PipelineFixture make_pipeline_fixture(const std::filesystem::path& root, std::size_t clouds, std::size_t per_cloud,
                                      pipeline::StageSwitches switches = {}, double keep_fraction = 0.6,
                                      double improve_fraction = 0.2);

/// Config JSON text for the fixture layout.
std::string fixture_config_json(const std::filesystem::path& root, pipeline::StageSwitches switches,
                                double keep_fraction, double improve_fraction);

}  // namespace pocoti::testing

#include "fixtures.hpp"

#include <atomic>
#include <cmath>
#include <unistd.h>

#include "json.hpp"
#include "pocoti/util.hpp"

namespace pocoti::testing {

namespace fs = std::filesystem;

TempDir::TempDir() {
  static std::atomic<int> counter{0};
  path_ = fs::temp_directory_path() /
          ("pocoti_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

data::RawCloud random_cloud(const std::string& id, std::size_t points, std::uint64_t seed, bool colored) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double ax = 0.5 + u(rng), ay = 0.5 + u(rng), az = 0.5 + u(rng);
  data::RawCloud c{id, {}, colored};
  for (std::size_t i = 0; i < points; ++i) {
    double x = n(rng), y = n(rng), z = n(rng);
    const double len = std::sqrt(x * x + y * y + z * z) + 1e-12;
    const double r = 1.0 + 0.05 * n(rng);
    data::Point p{ax * x / len * r, ay * y / len * r, az * z / len * r};
    if (colored) {
      // Colors quantized to 8 bits so they survive a PLY round trip exactly.
      p.r = static_cast<double>(rng() % 256) / 255.0;
      p.g = static_cast<double>(rng() % 256) / 255.0;
      p.b = static_cast<double>(rng() % 256) / 255.0;
    }
    c.points.push_back(p);
  }
  return c;
}

std::vector<std::string> write_cloud_dir(const fs::path& dir, std::size_t count, std::size_t points,
                                         std::uint64_t seed) {
  fs::create_directories(dir);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "cloud_%03zu", i);
    ids.emplace_back(name);
    write_file_atomic(dir / (ids.back() + ".ply"), data::encode_ply(random_cloud(name, points, seed + i, i % 3 != 0)));
  }
  return ids;
}

namespace {

const char* const kQuestions[] = {
    "What is the overall shape of this object?", "How many legs does this object have?",
    "What color is the largest part?",           "What might this object be used for?",
    "Is the object symmetric?",                  "What material does the surface look like?"};

}  // namespace

std::string instruction_records(const std::vector<std::string>& cloud_ids, std::size_t per_cloud) {
  std::string out;
  for (const auto& id : cloud_ids) {
    for (std::size_t k = 0; k < per_cloud; ++k) {
      nlohmann::json j{{"cloud_id", id},
                       {"instruction", kQuestions[k % 6]},
                       {"answer", "Answer " + std::to_string(k) + " about " + id + ": it has a rounded body."}};
      out += j.dump() + "\n";
    }
  }
  return out;
}

data::InstructionCorpus make_corpus(std::size_t clouds, std::size_t per_cloud, const std::string& name) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < clouds; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "cloud_%03zu", i);
    ids.emplace_back(buf);
  }
  auto r = data::ingest_instruction_records(instruction_records(ids, per_cloud), data::Source::shapellm_sft, {}, name);
  return std::move(r.corpus);
}

std::string random_text(std::mt19937_64& rng, std::size_t max_len, bool multiline) {
  static const std::vector<std::string> atoms{"a", "b", "Z", " ", "  ", "\t", "7", ".", ",", ":", "#", "\\",
                                              "é", "中", "✓", "---", "<<<", ">>>", "Step", "### Answer:"};
  const std::size_t len = 1 + rng() % std::max<std::size_t>(1, max_len);
  std::string s;
  while (s.size() < len) {
    if (multiline && rng() % 8 == 0) {
      s += "\n";
    } else {
      s += atoms[rng() % atoms.size()];
    }
  }
  return s;
}

render::EncodedViews tiny_views(const std::string& cloud_id) {
  // Pixel bytes derived from the cloud id so that, as with real renders,
  // different clouds never share view bytes (and hence cache keys).
  const auto digest = sha256_hex(cloud_id);
  render::EncodedViews v;
  v.cloud_id = cloud_id;
  for (std::size_t k = 0; k < v.png.size(); ++k) {
    render::Image img(8, 8, {255, 255, 255});
    for (int i = 0; i < 8; ++i) {
      const auto byte = static_cast<std::uint8_t>(std::stoi(digest.substr(2 * (i + 8 * k), 2), nullptr, 16));
      img.set(i, 0, {byte, static_cast<std::uint8_t>(k), 0});
    }
    v.png[k] = render::encode_png(img);
  }
  return v;
}

quality::ViewLookup tiny_view_lookup() {
  return [](const std::string& id) { return tiny_views(id); };
}

std::unique_ptr<gateway::Gateway> gateway_with(std::shared_ptr<gateway::Provider> provider, const std::string& id,
                                               int max_in_flight) {
  gateway::GatewayOptions opts;
  opts.backoff_base = std::chrono::milliseconds(0);
  opts.backoff_cap = std::chrono::milliseconds(0);
  auto gw = std::make_unique<gateway::Gateway>(opts);
  gateway::ProviderSettings settings;
  settings.provider_id = id;
  settings.max_in_flight = max_in_flight;
  gw->add_provider(settings, std::move(provider));
  for (auto role : {gateway::Role::evaluator, gateway::Role::cot_generator, gateway::Role::prompt_refiner,
                    gateway::Role::judge, gateway::Role::caption_gt_generator, gateway::Role::embedder,
                    gateway::Role::subject_model}) {
    gw->bind(role, id);
  }
  return gw;
}

std::unique_ptr<gateway::Gateway> mock_gateway(gateway::MockOptions options) {
  return gateway_with(gateway::make_mock_provider(options));
}

std::string fixture_config_json(const fs::path& root, pipeline::StageSwitches switches, double keep_fraction,
                                double improve_fraction) {
  nlohmann::json j;
  j["paths"] = {{"clouds", (root / "clouds").string()},
                {"corpora", {{{"path", (root / "records.jsonl").string()}, {"source", "shapellm_sft"}}}},
                {"outputs", (root / "out").string()}};
  j["render"] = {{"image_size", 64}, {"splat_radius", 1}};
  j["providers"] = {{{"id", "mock"},
                     {"kind", "mock"},
                     {"seed", 7},
                     {"keep_fraction", keep_fraction},
                     {"improve_fraction", improve_fraction}}};
  j["bindings"] = {{"evaluator", "mock"},  {"cot_generator", "mock"}, {"prompt_refiner", "mock"},
                   {"judge", "mock"},      {"embedder", "mock"},      {"subject_model", "mock"},
                   {"caption_gt_generator", "mock"}};
  j["stages"] = {{"with_refinement", switches.with_refinement},
                 {"with_hilpo", switches.with_hilpo},
                 {"with_cot", switches.with_cot}};
  j["seeds"] = {{"hilpo", 11}};
  j["concurrency"] = {{"budget", 4}};
  return j.dump(2);
}

PipelineFixture make_pipeline_fixture(const fs::path& root, std::size_t clouds, std::size_t per_cloud,
                                      pipeline::StageSwitches switches, double keep_fraction,
                                      double improve_fraction) {
  PipelineFixture f;
  f.root = root;
  f.cloud_ids = write_cloud_dir(root / "clouds", clouds, 200, 1000);
  write_file_atomic(root / "records.jsonl", instruction_records(f.cloud_ids, per_cloud));
  const auto text = fixture_config_json(root, switches, keep_fraction, improve_fraction);
  write_file_atomic(root / "config.json", text);
  auto r = pipeline::parse_config(text, root);
  if (!r.ok()) throw Error("fixture config invalid: " + r.error_text());
  f.config = *r.config;
  return f;
}

}  // namespace pocoti::testing

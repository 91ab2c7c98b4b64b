#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <thread>

#include "fixtures.hpp"
#include "httplib.h"
#include "json.hpp"
#include "pocoti/gateway.hpp"
#include "pocoti/providers.hpp"
#include "pocoti/structured.hpp"

namespace pocoti::gateway {
namespace {

using testing::TempDir;

struct FakeClock {
  std::shared_ptr<std::chrono::steady_clock::time_point> t =
      std::make_shared<std::chrono::steady_clock::time_point>();
  std::shared_ptr<std::atomic<int>> sleeps = std::make_shared<std::atomic<int>>(0);

  Clock clock() const {
    Clock c;
    auto tp = t;
    auto n = sleeps;
    c.now = [tp] { return *tp; };
    c.sleep = [tp, n](std::chrono::milliseconds d) {
      *tp += d;
      ++*n;
    };
    return c;
  }
};

ModelRequest request(std::string text, Role role = Role::evaluator) {
  ModelRequest r;
  r.role = role;
  r.prompt_text = std::move(text);
  return r;
}

std::unique_ptr<Gateway> scripted_gateway(std::shared_ptr<ScriptedProvider> p, GatewayOptions opts = {},
                                          int rate = 0, int retries = 3) {
  opts.backoff_base = std::chrono::milliseconds(1);
  auto gw = std::make_unique<Gateway>(opts);
  ProviderSettings s;
  s.provider_id = "s";
  s.rate_limit_per_min = rate;
  s.max_retries = retries;
  gw->add_provider(s, p);
  gw->bind(Role::evaluator, "s");
  gw->bind(Role::embedder, "s");
  return gw;
}

TEST(Gateway, ScriptedTableAndCacheIdentity) {
  auto p = std::make_shared<ScriptedProvider>("s");
  const auto req = request("Evaluate this sample.");
  p->script(request_hash(req, "s"), "KEEP");
  auto gw = scripted_gateway(p);
  const auto first = gw->complete(req);
  EXPECT_EQ(first.text, "KEEP");
  EXPECT_FALSE(first.cache_hit);
  const auto second = gw->complete(req);
  EXPECT_EQ(second.text, "KEEP");
  EXPECT_TRUE(second.cache_hit);
  EXPECT_EQ(p->calls(), 1u);
  EXPECT_EQ(gw->live_calls(), 1u);
}

TEST(Gateway, CacheKeyCoversImagesDecodeParamsAndMetadata) {
  auto base = request("x");
  auto with_image = base;
  with_image.images.push_back("png-bytes");
  auto with_temp = base;
  with_temp.decode.temperature = 0.5;
  auto with_ctx = base;
  with_ctx.context["task"] = "other";
  auto with_meta = base;
  with_meta.metadata["cloud_id"] = "c2";
  EXPECT_NE(request_hash(base, "s"), request_hash(with_meta, "s"));
  EXPECT_NE(request_hash(base, "s"), request_hash(with_image, "s"));
  EXPECT_NE(request_hash(base, "s"), request_hash(with_temp, "s"));
  EXPECT_NE(request_hash(base, "s"), request_hash(base, "t"));
  EXPECT_EQ(request_hash(base, "s"), request_hash(with_ctx, "s"));
}

TEST(Gateway, TransientFailuresRetriedThenSucceed) {
  auto p = std::make_shared<ScriptedProvider>("s", [](const ModelRequest&) { return std::string("ok"); });
  p->fail_next(ProviderError::Kind::transient, 2);
  FakeClock fc;
  GatewayOptions opts;
  opts.clock = fc.clock();
  auto gw = scripted_gateway(p, opts);
  const auto r = gw->complete(request("hello"));
  EXPECT_EQ(r.text, "ok");
  EXPECT_EQ(r.retries, 2);
  const auto audit = gw->audit();
  ASSERT_EQ(audit.size(), 1u);
  EXPECT_EQ(audit[0].retries, 2);
  EXPECT_FALSE(audit[0].error);
}

TEST(Gateway, RetryCapAndAuthFailuresSurface) {
  auto p = std::make_shared<ScriptedProvider>("s", [](const ModelRequest&) { return std::string("ok"); });
  p->fail_next(ProviderError::Kind::transient, 5);
  FakeClock fc;
  GatewayOptions opts;
  opts.clock = fc.clock();
  auto gw = scripted_gateway(p, opts, 0, 2);
  EXPECT_THROW(gw->complete(request("a")), ProviderError);
  EXPECT_EQ(p->calls(), 3u);  // first try + 2 retries

  auto q = std::make_shared<ScriptedProvider>("s", [](const ModelRequest&) { return std::string("ok"); });
  q->fail_next(ProviderError::Kind::auth, 1);
  auto gw2 = scripted_gateway(q, opts);
  try {
    gw2->complete(request("b"));
    FAIL() << "expected auth failure";
  } catch (const ProviderError& e) {
    EXPECT_EQ(e.kind(), ProviderError::Kind::auth);
  }
  EXPECT_EQ(q->calls(), 1u);
  ASSERT_EQ(gw2->audit().size(), 1u);
  EXPECT_TRUE(gw2->audit()[0].error);
}

TEST(Gateway, ResponseSizeLimit) {
  auto p = std::make_shared<ScriptedProvider>("s", [](const ModelRequest&) { return std::string(100, 'x'); });
  Gateway gw;
  ProviderSettings s;
  s.provider_id = "s";
  s.max_response_bytes = 10;
  gw.add_provider(s, p);
  gw.bind(Role::judge, "s");
  EXPECT_THROW(gw.complete(request("q", Role::judge)), ProviderError);
}

TEST(Gateway, RateLimitDelaysButNeverDrops) {
  auto p = std::make_shared<ScriptedProvider>("s", [](const ModelRequest& r) { return r.prompt_text; });
  FakeClock fc;
  GatewayOptions opts;
  opts.clock = fc.clock();
  auto gw = scripted_gateway(p, opts, 2);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(gw->complete(request("req " + std::to_string(i))).text, "req " + std::to_string(i));
  EXPECT_EQ(p->calls(), 5u);
  const auto audit = gw->audit();
  ASSERT_EQ(audit.size(), 5u);
  EXPECT_EQ(audit[0].wait_ms, 0);
  EXPECT_EQ(audit[1].wait_ms, 0);
  EXPECT_GT(audit[2].wait_ms, 0);
  EXPECT_GT(*fc.sleeps, 0);
}

TEST(Gateway, ValidatesRequests) {
  auto p = std::make_shared<ScriptedProvider>("s", [](const ModelRequest&) { return std::string("ok"); });
  auto gw = scripted_gateway(p);
  EXPECT_THROW(gw->complete(request("   ")), ValidationError);
  auto many = request("x");
  many.images.assign(5, "img");
  EXPECT_THROW(gw->complete(many), ValidationError);
  EXPECT_THROW(gw->complete(request("x", Role::judge)), ValidationError);  // unbound role
}

TEST(Gateway, CacheSoundnessUnderConcurrency) {
  std::atomic<int> live{0};
  auto p = std::make_shared<ScriptedProvider>("s", [&](const ModelRequest& r) {
    ++live;
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
    return "echo " + r.prompt_text;
  });
  auto gw = scripted_gateway(p);
  parallel_for(64, 8, [&](std::size_t i) { gw->complete(request("item " + std::to_string(i % 8))); });
  EXPECT_EQ(live.load(), 8);
  std::set<std::string> live_hashes;
  for (const auto& a : gw->audit()) {
    if (!a.cache_hit) {
      EXPECT_TRUE(live_hashes.insert(a.request_hash).second) << "two live calls for one request";
    }
  }
  EXPECT_EQ(live_hashes.size(), 8u);
}

TEST(Gateway, DiskCacheAndAuditLogSurviveRestart) {
  TempDir dir;
  auto p = std::make_shared<ScriptedProvider>("s", [](const ModelRequest&) { return std::string("cached text"); });
  GatewayOptions opts;
  opts.cache_dir = dir / "cache";
  opts.audit_log = dir / "audit.jsonl";
  {
    auto gw = scripted_gateway(p, opts);
    gw->complete(request("persist me"));
  }
  auto gw = scripted_gateway(p, opts);
  const auto r = gw->complete(request("persist me"));
  EXPECT_TRUE(r.cache_hit);
  EXPECT_EQ(r.text, "cached text");
  EXPECT_EQ(p->calls(), 1u);
  const auto lines = split_lines(read_file(dir / "audit.jsonl"));
  ASSERT_EQ(lines.size(), 2u);
  for (const auto& l : lines) {
    const auto j = nlohmann::json::parse(l);
    for (const char* k : {"timestamp", "role", "request_hash", "cache_hit", "latency_ms"}) EXPECT_TRUE(j.contains(k)) << k;
  }
}

TEST(Gateway, EmbeddingsAreUnitNormAndOrdered) {
  auto gw = testing::mock_gateway();
  const auto v = gw->embed({"alpha", "beta", "alpha"});
  ASSERT_EQ(v.size(), 3u);
  for (const auto& x : v) {
    double n = 0;
    for (double c : x) n += c * c;
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6);
  }
  EXPECT_EQ(v[0], v[2]);
  EXPECT_NE(v[0], v[1]);
  const auto single = gw->embed({"beta"});
  EXPECT_EQ(single[0], v[1]);
  EXPECT_THROW(gw->embed({}), ValidationError);
}

TEST(Gateway, EmbeddingNormalizationAppliesToScriptedVectors) {
  auto p = std::make_shared<ScriptedProvider>("s");
  p->set_embed_handler([](const std::string& t) { return std::vector<double>{3.0 * static_cast<double>(t.size()), 4.0 * static_cast<double>(t.size())}; });
  auto gw = scripted_gateway(p);
  const auto v = gw->embed({"ab"});
  EXPECT_NEAR(v[0][0], 0.6, 1e-12);
  EXPECT_NEAR(v[0][1], 0.8, 1e-12);
  p->set_embed_handler([](const std::string&) { return std::vector<double>{0.0, 0.0}; });
  EXPECT_THROW(gw->embed({"zero"}), ProviderError);
}

TEST(Structured, ParsesLabelAndReasons) {
  const std::string text =
      "Here is my assessment.\n---BEGIN RESULT---\nlabel: KEEP\nrelevance_reason: about the object\n"
      "accuracy_reason: correct\ncompleteness_reason: complete\n---END RESULT---\n";
  Schema s;
  s.require("label", {"KEEP", "IMPROVE", "INVALID"})
      .require("relevance_reason")
      .require("accuracy_reason")
      .require("completeness_reason");
  const auto doc = parse_structured(text, s);
  EXPECT_EQ(doc.fields().size(), 4u);
  EXPECT_EQ(doc.get("label"), "KEEP");
}

TEST(Structured, ProseOnlyIsNoBlock) {
  Schema s;
  s.require("label");
  try {
    parse_structured("I think this is fine.", s);
    FAIL();
  } catch (const StructuredParseError& e) {
    EXPECT_EQ(e.kind(), ParseErrorKind::no_block);
    EXPECT_EQ(e.raw_text(), "I think this is fine.");
  }
}

TEST(Structured, LastWellFormedBlockWins) {
  const std::string text =
      "---BEGIN RESULT---\nlabel KEEP without colon\n---END RESULT---\n"
      "---BEGIN RESULT---\nlabel: INVALID\nnote: extra\n---END RESULT---\n";
  Schema s;
  s.require("label", {"KEEP", "INVALID"});
  const auto doc = parse_structured(text, s);
  EXPECT_EQ(doc.get("label"), "INVALID");
  EXPECT_EQ(doc.get("note"), "extra");  // surplus preserved
}

TEST(Structured, MissingFieldAndDomainErrors) {
  Schema s;
  s.require("label", {"T", "F"}).number("score", 0, 100, false);
  try {
    parse_structured(format_block({{"other", "x"}}), s);
    FAIL();
  } catch (const StructuredParseError& e) {
    EXPECT_EQ(e.kind(), ParseErrorKind::missing_field);
  }
  try {
    parse_structured(format_block({{"label", "maybe"}}), s);
    FAIL();
  } catch (const StructuredParseError& e) {
    EXPECT_EQ(e.kind(), ParseErrorKind::domain);
  }
  EXPECT_THROW(parse_structured(format_block({{"label", "T"}, {"score", "101"}}), s), StructuredParseError);
  EXPECT_THROW(parse_structured(format_block({{"label", "T"}, {"score", "abc"}}), s), StructuredParseError);
  EXPECT_EQ(parse_structured(format_block({{"label", "T"}, {"score", "55.5"}}), s).number("score"), 55.5);
  // A blank optional field is treated as absent and left out of the result.
  const auto blank = parse_structured("---BEGIN RESULT---\nlabel: T\nscore:\n---END RESULT---\n", s);
  EXPECT_FALSE(blank.has("score"));
  EXPECT_EQ(blank.get("label"), "T");
}

TEST(Structured, MultilineValuesRoundTrip) {
  const std::vector<std::pair<std::string, std::string>> fields{
      {"reasoning", "Step 1: look\nStep 2: ---END RESULT--- inside text\n\nStep 3: done\n"},
      {"answer", "A chair."},
      {"odd", "<<< starts with sentinel"}};
  const auto docs = extract_blocks("noise\n" + format_block(fields) + "trailing");
  ASSERT_EQ(docs.size(), 1u);
  EXPECT_EQ(docs[0].fields(), fields);
}

TEST(Structured, UnterminatedMultilineIsNotABlock) {
  const std::string text = "---BEGIN RESULT---\nreasoning: <<<\nline\n---END RESULT---\n";
  EXPECT_TRUE(extract_blocks(text).empty());
  EXPECT_TRUE(representable_value("a\n>>> b"));
  EXPECT_FALSE(representable_value("a\r\nb"));
}

TEST(Structured, ValuesContainingTheGrammarUseATaggedTerminator) {
  const std::string nested = "Output format:\n---BEGIN RESULT---\nreasoning: <<<\nStep 1\n>>>\n---END RESULT---\nEOT";
  const std::vector<std::pair<std::string, std::string>> fields{{"prompt", nested}, {"rationale", "none"}};
  const auto text = format_block(fields);
  EXPECT_NE(text.find("prompt: <<<EOT1\n"), std::string::npos);
  EXPECT_TRUE(representable_value(nested));
  const auto docs = extract_blocks(text);
  ASSERT_EQ(docs.size(), 1u);
  EXPECT_EQ(docs[0].fields(), fields);
  // Hand-written tagged value, as a model following the refiner format would reply.
  const auto doc = parse_structured("---BEGIN RESULT---\nprompt: <<<PROMPT\na\n>>>\nPROMPT\n---END RESULT---\n",
                                    Schema{}.require("prompt"));
  EXPECT_EQ(doc.get("prompt"), "a\n>>>");
}

TEST(Providers, ChatRequestBodyShape) {
  ModelRequest r = request("Describe.", Role::subject_model);
  r.images = {"PNG"};
  r.decode.seed = 5;
  r.metadata["cloud_id"] = "c1";
  const auto j = nlohmann::json::parse(chat_request_body(r, "m1"));
  EXPECT_EQ(j["model"], "m1");
  EXPECT_EQ(j["seed"], 5);
  EXPECT_EQ(j["messages"][0]["content"][0]["text"], "Describe.");
  EXPECT_EQ(j["messages"][0]["content"][1]["image_url"]["url"], "data:image/png;base64," + base64_encode("PNG"));
  EXPECT_EQ(j["metadata"]["cloud_id"], "c1");
}

TEST(Providers, HttpAdapterAgainstLocalServer) {
  httplib::Server server;
  std::atomic<int> hits{0};
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    ++hits;
    EXPECT_EQ(req.get_header_value("Authorization"), "Bearer secret");
    const auto body = nlohmann::json::parse(req.body);
    if (body["messages"][0]["content"] == "fail") {
      res.status = 401;
      return;
    }
    res.set_content(nlohmann::json{{"choices", {{{"message", {{"content", "reply to " + body["messages"][0]["content"].get<std::string>()}}}}}}}.dump(),
                    "application/json");
  });
  server.Post("/v1/embeddings", [&](const httplib::Request& req, httplib::Response& res) {
    const auto body = nlohmann::json::parse(req.body);
    nlohmann::json data = nlohmann::json::array();
    for (std::size_t i = 0; i < body["input"].size(); ++i) data.push_back({{"index", i}, {"embedding", {1.0, double(i)}}});
    res.set_content(nlohmann::json{{"data", data}}.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  auto provider = make_http_provider({"h", "http://127.0.0.1:" + std::to_string(port) + "/v1", "m", "secret", 5});
  EXPECT_EQ(provider->complete(request("hi")), "reply to hi");
  try {
    provider->complete(request("fail"));
    ADD_FAILURE();
  } catch (const ProviderError& e) {
    EXPECT_EQ(e.kind(), ProviderError::Kind::auth);
  }
  const auto v = provider->embed({"a", "b"});
  ASSERT_EQ(v.size(), 2u);
  EXPECT_EQ(v[1][1], 1.0);
  server.stop();
  t.join();

  // Nothing listening: transient.
  auto dead = make_http_provider({"d", "http://127.0.0.1:" + std::to_string(port) + "/v1", "m", "", 1});
  try {
    dead->complete(request("x"));
    ADD_FAILURE();
  } catch (const ProviderError& e) {
    EXPECT_TRUE(e.transient());
  }
}

TEST(Providers, MockIsDeterministic) {
  auto a = make_mock_provider({3, 0.5, 0.25, 16});
  auto b = make_mock_provider({3, 0.5, 0.25, 16});
  ModelRequest r = request("evaluate");
  r.context = {{"task", "evaluate"}, {"sample_id", "abc"}, {"answer", "A chair."}};
  EXPECT_EQ(a->complete(r), b->complete(r));
  EXPECT_EQ(a->embed({"t"}), b->embed({"t"}));
}

}  // namespace
}  // namespace pocoti::gateway

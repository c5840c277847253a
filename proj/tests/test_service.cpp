#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "httplib.h"
#include "json.hpp"
#include "reportsmith/error.hpp"
#include "reportsmith/service.hpp"
#include "support/test_support.hpp"

using namespace reportsmith;
using nlohmann::json;

namespace {

BackendConfig remote(const std::string& name, const std::string& url, double timeout = 5.0) {
  BackendConfig b;
  b.name = name;
  b.base_url = url;
  b.model_id = "fake";
  b.timeout_seconds = timeout;
  b.max_retries = 0;
  b.backoff_base_seconds = 0.01;
  return b;
}

struct Running {
  Service service;
  int port;
  httplib::Client client;

  explicit Running(AppConfig cfg) : service(std::move(cfg)), port(service.start(0)), client("127.0.0.1", port) {
    client.set_read_timeout(10, 0);
  }

  httplib::Result post(const std::string& path, const std::string& body, httplib::Headers headers = {}) {
    return client.Post(path, headers, body, "application/json");
  }
};

AppConfig base_config() {
  AppConfig cfg = AppConfig::defaults();
  cfg.backends["flag"] = BackendConfig{};
  cfg.backends["flag"].name = "flag";
  cfg.backends["flag"].base_url = "mock:flag_missing";
  cfg.service.shots_path = rstest::source_path("fixtures/testsets/ten.jsonl");
  return cfg;
}

}  // namespace

TEST_CASE("health and score") {
  Running s(base_config());

  auto health = s.client.Get("/api/health");
  REQUIRE(health);
  CHECK(health->status == 200);
  const auto h = json::parse(health->body);
  CHECK(h["status"] == "ok");
  CHECK(h["backends"] == json::array({"flag", "mock"}));
  CHECK(h["default_backend"] == "mock");

  const std::string print_preview = rstest::fixture("reports/print_preview.txt");
  auto res = s.post("/api/score", json{{"text", print_preview}}.dump());
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(res->get_header_value("Content-Type").rfind("application/json", 0) == 0);
  // Byte-identical to the library call the CLI uses.
  CHECK(res->body == score_text_json(CtqrsEngine(), print_preview));
  const auto j = json::parse(res->body);
  CHECK(j["total"] == 15);
  CHECK(j["max_total"] == 17);
  int max_sum = 0;
  for (const auto& r : j["rules"]) max_sum += r["max"].get<int>();
  CHECK(max_sum == 17);

  auto sparse = s.post("/api/score", json{{"text", "the app crashes"}}.dump());
  const auto sj = json::parse(sparse->body);
  CHECK(sj["missing_fields"] ==
        json::array({"steps_to_reproduce", "expected_result", "actual_result", "additional_information"}));
  const StructuredReport print_preview_report = parse_sections(rstest::fixture("reports/print_preview.txt"));
  CHECK(j["missing_fields"].size() == print_preview_report.missing_fields.size());
}

TEST_CASE("bad requests answer 400") {
  Running s(base_config());
  for (const std::string body : {"not json", "[1,2]", "{}", R"({"text": 3})", R"({"text": "   "})"}) {
    CAPTURE(body);
    auto res = s.post("/api/score", body);
    REQUIRE(res);
    CHECK(res->status == 400);
    CHECK(json::parse(res->body)["error"] == "MalformedDocument");
  }
  auto shots = s.post("/api/structure", json{{"text", "x"}, {"shots", 11}}.dump());
  CHECK(shots->status == 400);
  CHECK(json::parse(shots->body)["error"] == "InvalidConfig");
  auto shots_type = s.post("/api/structure", json{{"text", "x"}, {"shots", "two"}}.dump());
  CHECK(shots_type->status == 400);
  auto backend = s.post("/api/structure", json{{"text", "x"}, {"backend", "nope"}}.dump());
  CHECK(backend->status == 400);
  auto metrics = s.post("/api/metrics", json{{"candidate", "a"}}.dump());
  CHECK(metrics->status == 400);
  auto missing = s.client.Get("/api/nothing");
  CHECK(missing->status == 404);
}

TEST_CASE("structure with mock backends") {
  Running s(base_config());
  const auto cases = read_testset(rstest::source_path("fixtures/testsets/ten.jsonl"));
  const std::string text = "Title: Save crashes\n\nActual Result:\nThe app crashes when I click Save.";

  auto res = s.post("/api/structure", json{{"text", text}, {"backend", "flag"}}.dump());
  REQUIRE(res);
  CHECK(res->status == 200);
  auto flag = mock_backend("flag_missing");
  CHECK(res->body == structure_text_json(*flag, "flag", text, 0, cases));
  const auto j = json::parse(res->body);
  CHECK(j["backend"] == "flag");
  CHECK(j["parse_error"].is_null());
  CHECK(j["report"]["missing_fields"] == json::array({"steps_to_reproduce", "expected_result", "additional_information"}));

  auto perfect = s.post("/api/structure", json{{"text", cases[0].input}, {"shots", 2}}.dump());
  const auto p = json::parse(perfect->body);
  CHECK(p["backend"] == "mock");
  CHECK(json_to_report(p["report"].dump()) == [&] {
    StructuredReport g = cases[0].gold;
    g.missing_fields.clear();
    return normalize_report(g);
  }());
}

TEST_CASE("metrics endpoint") {
  Running s(base_config());
  auto res = s.post("/api/metrics", json{{"candidate", "the cat sat"}, {"reference", "the cat sat down"}}.dump());
  REQUIRE(res);
  CHECK(res->status == 200);
  const auto j = json::parse(res->body);
  const auto oracle = rstest::oracle_rouge1(tokenize("the cat sat"), tokenize("the cat sat down"));
  CHECK(j["rouge1"]["f"].get<double>() == doctest::Approx(oracle.f).epsilon(1e-12));
  CHECK(j.contains("meteor"));
  CHECK(j.contains("cosine_tf"));
  CHECK(j["embedding_similarity"].is_number());
}

TEST_CASE("CORS") {
  AppConfig cfg = base_config();
  cfg.service.allowed_origins = {"http://localhost:5173"};
  Running s(cfg);

  auto allowed = s.client.Get("/api/health", {{"Origin", "http://localhost:5173"}});
  CHECK(allowed->get_header_value("Access-Control-Allow-Origin") == "http://localhost:5173");
  auto denied = s.client.Get("/api/health", {{"Origin", "http://evil.example"}});
  CHECK(denied->status == 200);
  CHECK_FALSE(denied->has_header("Access-Control-Allow-Origin"));

  auto preflight = s.client.Options("/api/score", {{"Origin", "http://localhost:5173"},
                                                   {"Access-Control-Request-Method", "POST"}});
  REQUIRE(preflight);
  CHECK(preflight->status == 204);
  CHECK(preflight->get_header_value("Access-Control-Allow-Methods").find("POST") != std::string::npos);
  CHECK(preflight->get_header_value("Access-Control-Allow-Headers") == "Content-Type");

  AppConfig any = base_config();
  any.service.allowed_origins = {"*"};
  Running open(any);
  auto r = open.client.Get("/api/health", {{"Origin", "http://anything.example"}});
  CHECK(r->get_header_value("Access-Control-Allow-Origin") == "http://anything.example");
}

TEST_CASE("provider failures map to 502 and 504") {
  rstest::FakeOpenAi broken([](const json&, int) { return rstest::FakeOpenAi::Reply{500, "boom"}; });
  rstest::FakeOpenAi denied([](const json&, int) { return rstest::FakeOpenAi::Reply{401, "no"}; });
  rstest::FakeOpenAi slow([](const json&, int) { return rstest::FakeOpenAi::Reply{200, "{}", 1500}; });
  rstest::FakeOpenAi prose([](const json&, int) { return rstest::FakeOpenAi::Reply{200, "I cannot help."}; });
  for (auto* f : {&broken, &denied, &slow, &prose}) f->start();

  AppConfig cfg = base_config();
  cfg.backends["broken"] = remote("broken", broken.url());
  cfg.backends["denied"] = remote("denied", denied.url());
  cfg.backends["slow"] = remote("slow", slow.url(), 0.3);
  cfg.backends["prose"] = remote("prose", prose.url());
  Running s(cfg);

  auto call = [&](const std::string& backend) {
    auto res = s.post("/api/structure", json{{"text", "it broke"}, {"backend", backend}}.dump());
    REQUIRE(res);
    return std::make_pair(res->status, json::parse(res->body));
  };
  auto [b_status, b_body] = call("broken");
  CHECK(b_status == 502);
  CHECK(b_body["error"] == "ProviderUnavailable");
  auto [d_status, d_body] = call("denied");
  CHECK(d_status == 502);
  CHECK(d_body["error"] == "AuthFailed");
  auto [t_status, t_body] = call("slow");
  CHECK(t_status == 504);
  CHECK(t_body["error"] == "TimedOut");
  // An unparseable generation is a successful call with a parse error.
  auto [p_status, p_body] = call("prose");
  CHECK(p_status == 200);
  CHECK(p_body["report"].is_null());
  CHECK(p_body["parse_error"].is_string());
  CHECK(p_body["raw"] == "I cannot help.");

  // Scoring never touches a backend.
  const int before = broken.chat_calls.load();
  CHECK(s.post("/api/score", json{{"text", "it broke"}}.dump())->status == 200);
  CHECK(broken.chat_calls.load() == before);
}

TEST_CASE("startup errors") {
  AppConfig cfg = base_config();
  cfg.service.shots_path = "/nonexistent/shots.jsonl";
  CHECK_THROWS_AS(Service{cfg}, Error);

  Running first(base_config());
  AppConfig clash = base_config();
  clash.service.bind_address = "127.0.0.1";
  Service second(clash);
  try {
    second.start(first.port);
    FAIL("bound an occupied port");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::IoFailure);
  }
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <future>
#include <random>

#include "json.hpp"
#include "reportsmith/error.hpp"
#include "reportsmith/gateway.hpp"
#include "support/test_support.hpp"

using namespace reportsmith;
using nlohmann::json;

namespace {

std::string replace_once(std::string text, const std::string& from, const std::string& to) {
  const auto pos = text.find(from);
  REQUIRE(pos != std::string::npos);
  text.replace(pos, from.size(), to);
  return text;
}

BackendConfig fake_config(const rstest::FakeServer& server, const std::string& name = "fake") {
  BackendConfig c;
  c.name = name;
  c.base_url = server.url();
  c.model_id = "test-model";
  c.timeout_seconds = 5;
  c.backoff_base_seconds = 0.01;
  return c;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::IoFailure;
}

std::string completion_json(const StructuredReport& r) { return report_to_json(r); }

}  // namespace

TEST_CASE("alpaca prompt matches the golden template byte for byte") {
  const std::string golden = rstest::fixture("prompts/alpaca.txt");
  for (const std::string& input : std::vector<std::string>{"X", "", "multi\nline input with \"quotes\" and {braces}",
                                  rstest::fixture("reports/freeform_dropdown.txt")}) {
    CHECK(build_alpaca_prompt(input) == replace_once(golden, "{unstructured_report}", input));
  }
  const std::string p = build_alpaca_prompt("X");
  CHECK(p.find("### Input:\nX") != std::string::npos);
  CHECK(p.size() >= 14);
  CHECK(p.substr(p.size() - 14) == "### Response:\n");
  CHECK(p.rfind(std::string(kAlpacaSystem), 0) == 0);
}

TEST_CASE("synthesis prompt matches the golden template byte for byte") {
  const std::string golden = rstest::fixture("prompts/synthesis.txt");
  for (const std::string& input : std::vector<std::string>{"Y", "", rstest::fixture("reports/print_preview.txt")})
    CHECK(build_synthesis_prompt(input) == replace_once(golden, "{text}", input));
  const std::string p = build_synthesis_prompt("Y");
  CHECK(p.substr(p.size() - 13) == "Bug report: Y");
}

TEST_CASE("prompt builders are pure") {
  CHECK(build_alpaca_prompt("abc") == build_alpaca_prompt("abc"));
  CHECK(build_synthesis_prompt("abc") == build_synthesis_prompt("abc"));
}

TEST_CASE("few-shot messages") {
  const StructuredReport print_preview = parse_sections(rstest::fixture("reports/print_preview.txt"));
  const StructuredReport golden = parse_sections(rstest::fixture("reports/golden.txt"));
  const std::vector<Shot> two = {{"first text", print_preview}, {"second text", golden}};

  CHECK(build_fewshot_messages({}, "target").size() == 2);
  for (std::size_t k = 0; k <= 5; ++k) {
    std::vector<Shot> shots(k, two[0]);
    CHECK(build_fewshot_messages(shots, "target").size() == 2 + 2 * k);
  }
  const auto msgs = build_fewshot_messages(two, "target");
  REQUIRE(msgs.size() == 6);
  CHECK(msgs[0] == Message{"system", std::string(kAlpacaSystem)});
  CHECK(msgs[1].role == "user");
  CHECK(msgs[2] == Message{"assistant", report_to_json(print_preview)});
  CHECK(msgs[3].role == "user");
  CHECK(msgs[4] == Message{"assistant", report_to_json(golden)});
  CHECK(msgs[5].role == "user");
  CHECK(extract_prompt_input(msgs[1].content) == "first text");
  CHECK(extract_prompt_input(msgs[3].content) == "second text");
  CHECK(extract_prompt_input(msgs[5].content) == "target");
  CHECK(msgs[5].content.find(std::string(alpaca_instruction())) != std::string::npos);
  CHECK(msgs[5].content.find("JSON") != std::string::npos);
}

TEST_CASE("extract_prompt_input inverts every builder") {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 300; ++i) {
    const std::string body = rstest::random_body(rng);
    CHECK(extract_prompt_input(build_alpaca_prompt(body)) == body);
    CHECK(extract_prompt_input(build_user_message(body)) == body);
    CHECK(extract_prompt_input(build_synthesis_prompt(body)) == body);
  }
}

TEST_CASE("parse_generation") {
  const StructuredReport print_preview = parse_sections(rstest::fixture("reports/print_preview.txt"));
  const std::string j = report_to_json(print_preview);
  CHECK(parse_generation(j) == print_preview);
  CHECK(parse_generation("Here is the report:\n```json\n" + j + "\n```\nHope this helps.") == print_preview);
  CHECK(parse_generation("prefix {not json} then " + j) == print_preview);
  CHECK(parse_generation(R"({"title":"a {brace} in \"text\"","steps_to_reproduce":["x"]})").title ==
        "a {brace} in \"text\"");

  CHECK(code_of([] { parse_generation("I cannot help"); }) == ErrorCode::MalformedGeneration);
  CHECK(code_of([] { parse_generation(""); }) == ErrorCode::MalformedGeneration);
  CHECK(code_of([] { parse_generation("{\"title\": \"unterminated"); }) == ErrorCode::MalformedGeneration);

  const StructuredReport flagged = parse_generation(
      R"({"title":"t","steps_to_reproduce":["Not provided"],"expected_result":"N/A",)"
      R"("actual_result":"It crashes.","additional_information":"Missing.","missing_fields":[]})");
  CHECK(flagged.steps_to_reproduce.empty());
  CHECK(flagged.expected_result.empty());
  CHECK(flagged.actual_result == "It crashes.");
  CHECK(flagged.missing_fields == std::set<SectionKind>{SectionKind::steps_to_reproduce,
                                                         SectionKind::expected_result,
                                                         SectionKind::additional_information});
}

TEST_CASE("missing phrases") {
  for (auto s : {"", "  ", "Not provided", "not provided.", "N/A", "[missing]", "Missing information",
                 "Not provided in the original report.", "unknown"})
    CHECK(is_missing_phrase(s));
  for (auto s : {".", "...", "The button is missing from the toolbar.", "Not working after update", "none of the tabs load"})
    CHECK_FALSE(is_missing_phrase(s));
}

TEST_CASE("property: parse_generation inverts report_to_json") {
  std::mt19937_64 rng(31);
  for (int i = 0; i < 2000; ++i) {
    const StructuredReport r = rstest::random_report(rng);
    CHECK(parse_generation(report_to_json(r)) == r);
  }
}

TEST_CASE("mock behaviours") {
  const std::string print_preview_text = render_report(parse_sections(rstest::fixture("reports/print_preview.txt")));
  auto perfect = mock_backend("mock:perfect");
  auto gen = generate(*perfect, build_fewshot_messages({}, print_preview_text));
  REQUIRE(gen.report.has_value());
  CHECK_FALSE(gen.parse_error.has_value());
  CHECK(*gen.report == parse_sections(print_preview_text));

  StructuredReport masked = parse_sections(print_preview_text);
  masked.steps_to_reproduce.clear();
  masked = normalize_report(masked);
  const std::string masked_text = render_report(masked);

  auto hallucinate = mock_backend("hallucinate");
  gen = generate(*hallucinate, build_fewshot_messages({}, masked_text));
  REQUIRE(gen.report.has_value());
  CHECK(gen.report->missing_fields.count(SectionKind::steps_to_reproduce) == 0);
  CHECK(gen.report->steps_to_reproduce == std::vector<std::string>{std::string(kHallucinatedStep)});

  auto flag = mock_backend("flag_missing");
  gen = generate(*flag, build_fewshot_messages({}, masked_text));
  REQUIRE(gen.report.has_value());
  CHECK(gen.report->missing_fields == std::set<SectionKind>{SectionKind::steps_to_reproduce});

  MockBackend scripted({{"id-1", "canned raw"}}, MockBehavior::perfect_extractor);
  CHECK(scripted.complete(build_fewshot_messages({}, "id-1")) == "canned raw");
  CHECK(scripted.calls() == 1);

  rstest::TempDir dir;
  rstest::write_text(dir / "script.json", R"({"abc": "{\"title\":\"from script\"}"})");
  auto from_file = mock_backend("mock:script=" + (dir / "script.json").string());
  gen = generate(*from_file, build_fewshot_messages({}, "abc"));
  REQUIRE(gen.report.has_value());
  CHECK(gen.report->title == "from script");

  CHECK(code_of([] { mock_backend("mock:unknown"); }) == ErrorCode::InvalidConfig);
  CHECK(code_of([] { mock_backend("script=/nonexistent.json"); }) == ErrorCode::IoFailure);

  auto echo = mock_backend("echo");
  CHECK(echo->complete({{"user", build_synthesis_prompt("abc def")}}) == "abc def");
}

TEST_CASE("generation result sets exactly one of report and parse_error") {
  MockBackend bad([](std::string_view) { return std::string("no json here"); });
  const auto gen = generate(bad, {{"user", "x"}});
  CHECK_FALSE(gen.report.has_value());
  REQUIRE(gen.parse_error.has_value());
  CHECK(gen.raw_text == "no json here");
  CHECK(gen.latency_seconds >= 0);
}

TEST_CASE("backend config validation and key env") {
  BackendConfig c;
  c.base_url = "http://localhost:1";
  c.name = "qwen-7b";
  CHECK_NOTHROW(c.validate());
  CHECK(c.api_key_env() == "REPORTSMITH_API_KEY_QWEN_7B");
  c.api_key_ref = "MY_KEY";
  CHECK(c.api_key_env() == "MY_KEY");
  c.max_concurrency = 0;
  CHECK(code_of([&] { c.validate(); }) == ErrorCode::InvalidConfig);
  c.max_concurrency = 1;
  c.timeout_seconds = 0;
  CHECK(code_of([&] { c.validate(); }) == ErrorCode::InvalidConfig);
  c.timeout_seconds = 1;
  c.temperature = -0.5;
  CHECK(code_of([&] { c.validate(); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("training recipe metadata") {
  const auto j = json::parse(training_recipe_json(TrainingRecipe{}));
  CHECK(j["lora_rank"] == 16);
  CHECK(j["epochs"] == 3);
  CHECK(j["batch_size"] == 8);
  CHECK(j["cross_validation_folds"] == 4);
  CHECK(j["target_modules"].size() == 7);
  CHECK(j["learning_rate"]["7B"].get<double>() == 2e-4);
  CHECK(j["learning_rate"]["3B"].get<double>() == 3e-3);
}

TEST_CASE("OpenAI-compatible client against a fixture server") {
  const StructuredReport print_preview = parse_sections(rstest::fixture("reports/print_preview.txt"));

  SUBCASE("content is returned verbatim and the request is well-formed") {
    json seen;
    rstest::FakeOpenAi server([&](const json& req, int) {
      seen = req;
      return rstest::FakeOpenAi::Reply{200, completion_json(print_preview)};
    });
    server.start();
    ::setenv("REPORTSMITH_API_KEY_FAKE", "sekret", 1);
    OpenAiBackend backend(fake_config(server));
    ::unsetenv("REPORTSMITH_API_KEY_FAKE");
    const auto msgs = build_fewshot_messages({}, "text");
    CHECK(backend.complete(msgs) == completion_json(print_preview));
    CHECK(seen["model"] == "test-model");
    CHECK(seen["temperature"] == 0.0);
    REQUIRE(seen["messages"].size() == 2);
    CHECK(seen["messages"][0]["role"] == "system");
    CHECK(seen["messages"][1]["content"] == msgs[1].content);
    CHECK(server.last_authorization() == "Bearer sekret");
    CHECK(chat_complete(fake_config(server), msgs) == completion_json(print_preview));
  }

  SUBCASE("two transient 503s then success") {
    rstest::FakeOpenAi server([&](const json&, int idx) {
      return idx < 2 ? rstest::FakeOpenAi::Reply{503, "busy"} : rstest::FakeOpenAi::Reply{200, "ok"};
    });
    server.start();
    OpenAiBackend backend(fake_config(server));
    CHECK(backend.complete({{"user", "x"}}) == "ok");
    CHECK(backend.telemetry().last_retry_count == 2);
    CHECK(server.chat_calls == 3);
  }

  SUBCASE("persistent 5xx exhausts retries") {
    rstest::FakeOpenAi server([&](const json&, int) { return rstest::FakeOpenAi::Reply{500, "down"}; });
    server.start();
    OpenAiBackend backend(fake_config(server));
    CHECK(code_of([&] { backend.complete({{"user", "x"}}); }) == ErrorCode::ProviderUnavailable);
    CHECK(server.chat_calls == 4);  // first attempt plus three retries
  }

  SUBCASE("401 and 403 are auth failures and are not retried") {
    rstest::FakeOpenAi server([&](const json&, int idx) {
      return rstest::FakeOpenAi::Reply{idx == 0 ? 401 : 403, "denied"};
    });
    server.start();
    OpenAiBackend backend(fake_config(server));
    CHECK(code_of([&] { backend.complete({{"user", "x"}}); }) == ErrorCode::AuthFailed);
    CHECK(code_of([&] { backend.complete({{"user", "x"}}); }) == ErrorCode::AuthFailed);
    CHECK(server.chat_calls == 2);
  }

  SUBCASE("slow responses time out") {
    rstest::FakeOpenAi server([&](const json&, int) { return rstest::FakeOpenAi::Reply{200, "late", 800}; });
    server.start();
    BackendConfig c = fake_config(server);
    c.timeout_seconds = 0.2;
    c.max_retries = 1;
    OpenAiBackend backend(c);
    CHECK(code_of([&] { backend.complete({{"user", "x"}}); }) == ErrorCode::TimedOut);
  }

  SUBCASE("unreachable endpoint") {
    BackendConfig c;
    c.name = "nowhere";
    c.base_url = "http://127.0.0.1:1";
    c.max_retries = 0;
    CHECK(code_of([&] { chat_complete(c, {{"user", "x"}}); }) == ErrorCode::ProviderUnavailable);
  }

  SUBCASE("malformed payload") {
    rstest::FakeOpenAi server([&](const json&, int) { return rstest::FakeOpenAi::Reply{200, "x"}; });
    server.start();
    BackendConfig c = fake_config(server);
    c.base_url += "/nested";  // the fake answers 404 below an unknown prefix
    CHECK(code_of([&] { chat_complete(c, {{"user", "x"}}); }) == ErrorCode::ProviderUnavailable);
  }

  SUBCASE("in-flight requests never exceed max_concurrency") {
    rstest::FakeOpenAi server([&](const json&, int) { return rstest::FakeOpenAi::Reply{200, "ok", 50}; });
    server.start();
    BackendConfig c = fake_config(server);
    c.max_concurrency = 2;
    OpenAiBackend backend(c);
    std::vector<std::future<std::string>> futures;
    for (int i = 0; i < 8; ++i)
      futures.push_back(std::async(std::launch::async, [&] { return backend.complete({{"user", "x"}}); }));
    for (auto& f : futures) CHECK(f.get() == "ok");
    CHECK(server.max_inflight <= 2);
    CHECK(server.max_inflight >= 1);
    CHECK(server.chat_calls == 8);
  }

  SUBCASE("embeddings") {
    rstest::FakeOpenAi server([&](const json&, int) { return rstest::FakeOpenAi::Reply{}; },
                              [](const std::string& input) {
                                return std::vector<double>{static_cast<double>(input.size()), 1.0};
                              });
    server.start();
    CHECK(embed(fake_config(server), "abcd") == std::vector<double>{4.0, 1.0});
    OpenAiBackend backend(fake_config(server));
    CHECK(embedding_similarity(backend, "ab", "ab") == doctest::Approx(1.0));
    CHECK(server.embed_calls == 3);
  }
}

TEST_CASE("fallback embeddings") {
  HashedBagProvider p;
  CHECK(p.embed("alpha beta") == p.embed("beta alpha"));
  CHECK(p.embed("same text") == p.embed("same text"));
  double norm = 0;
  for (double x : p.embed("a few words")) norm += x * x;
  CHECK(norm == doctest::Approx(1.0).epsilon(1e-12));
  std::mt19937_64 rng(9);
  for (int i = 0; i < 300; ++i) {
    const double s = embedding_similarity(p, rstest::random_body(rng), rstest::random_body(rng));
    CHECK(s >= 0.0);
    CHECK(s <= 1.0 + 1e-12);
  }
}

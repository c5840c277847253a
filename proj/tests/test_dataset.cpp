#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>
#include <numeric>

#include "json.hpp"
#include "reportsmith/dataset.hpp"
#include "reportsmith/error.hpp"
#include "support/test_support.hpp"

using namespace reportsmith;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) lines.push_back(line);
  return lines;
}

std::vector<BugzillaBug> corpus_bugs() {
  std::vector<BugzillaBug> bugs;
  for (const auto& line : read_lines(rstest::source_path("fixtures/filter/corpus.jsonl")))
    bugs.push_back(bug_from_json(line));
  return bugs;
}

const std::string kGolden = rstest::fixture("reports/golden.txt");

}  // namespace

TEST_CASE("bug records round-trip through JSON") {
  const BugzillaBug b = rstest::make_bug(7, "desc\nwith \"quotes\"");
  CHECK(bug_from_json(bug_to_json(b)) == b);
  CHECK(b.description() == "desc\nwith \"quotes\"");
  CHECK_THROWS_AS(bug_from_json("{}"), Error);
}

TEST_CASE("cursor files") {
  rstest::TempDir dir;
  const FetchCursor c{"2024-01-01T00:00:00Z", 250};
  save_cursor(dir / "cursor.json", c);
  CHECK(load_cursor(dir / "cursor.json") == c);
  const auto j = json::parse(rstest::read_text(dir / "cursor.json"));
  CHECK(j["last_change_time"] == "2024-01-01T00:00:00Z");
  CHECK(j["offset"] == 250);
}

TEST_CASE("fetching from a Bugzilla endpoint") {
  std::vector<BugzillaBug> bugs;
  for (int i = 1; i <= 3; ++i) bugs.push_back(rstest::make_bug(i, "description " + std::to_string(i)));

  SUBCASE("three recorded bugs") {
    rstest::FakeBugzilla server(bugs);
    server.start();
    FetchOptions o;
    o.base_url = server.url();
    o.limit = 100;
    const auto got = fetch_fixed_bugs(o);
    REQUIRE(got.size() == 3);
    for (int i = 0; i < 3; ++i) {
      CHECK(got[i].bug_id == i + 1);
      CHECK(got[i].description() == "description " + std::to_string(i + 1));
      CHECK(got[i].comments == bugs[i].comments);  // reordered by "count"
      CHECK(got[i].meta.at("product") == "Core");
    }
    CHECK(server.last_statuses() == std::vector<std::string>{"RESOLVED", "VERIFIED"});
    CHECK(server.last_resolution() == "FIXED");
  }

  SUBCASE("limit 0 returns nothing without a request") {
    rstest::FakeBugzilla server(bugs);
    server.start();
    FetchOptions o;
    o.base_url = server.url();
    o.limit = 0;
    CHECK(fetch_fixed_bugs(o).empty());
    CHECK(server.page_requests == 0);
  }

  SUBCASE("status filter, pagination and limit") {
    std::vector<BugzillaBug> many;
    for (int i = 1; i <= 25; ++i) many.push_back(rstest::make_bug(i, "d", i % 5 == 0 ? "NEW" : "RESOLVED"));
    rstest::FakeBugzilla server(many);
    server.start();
    FetchOptions o;
    o.base_url = server.url();
    o.limit = 17;
    o.page_size = 4;
    const auto got = fetch_fixed_bugs(o);
    REQUIRE(got.size() == 17);
    for (const auto& b : got) CHECK(b.status == "RESOLVED");
    CHECK(got.front().bug_id == 1);
    CHECK(got.back().bug_id == 21);
    CHECK(server.page_offsets() == std::vector<std::int64_t>{0, 4, 8, 12, 16});
  }

  SUBCASE("bounded comment parallelism") {
    std::vector<BugzillaBug> many;
    for (int i = 1; i <= 12; ++i) many.push_back(rstest::make_bug(i, "d"));
    rstest::FakeBugzilla server(many);
    server.comment_delay_ms = 40;
    server.start();
    FetchOptions o;
    o.base_url = server.url();
    o.limit = 12;
    o.parallelism = 3;
    CHECK(fetch_fixed_bugs(o).size() == 12);
    CHECK(server.max_inflight <= 3);
    CHECK(server.max_inflight >= 2);
  }

  SUBCASE("a mid-run 500 yields the prefix and a resumable cursor") {
    std::vector<BugzillaBug> many;
    for (int i = 1; i <= 10; ++i) many.push_back(rstest::make_bug(i, "d" + std::to_string(i)));
    rstest::FakeBugzilla server(many);
    server.failing_comments = {7};
    server.start();
    rstest::TempDir dir;
    FetchOptions o;
    o.base_url = server.url();
    o.since = "2024-01-01";
    o.limit = 10;
    o.page_size = 3;
    o.cursor_path = dir / "cursor.json";
    std::vector<BugzillaBug> prefix;
    try {
      fetch_fixed_bugs(o);
      FAIL("expected PartialFetch");
    } catch (const PartialFetchError& e) {
      CHECK(e.code() == ErrorCode::PartialFetch);
      prefix = e.fetched();
      CHECK(e.cursor() == FetchCursor{"2024-01-01", 6});
    }
    REQUIRE(prefix.size() == 6);
    for (int i = 0; i < 6; ++i) CHECK(prefix[i].bug_id == i + 1);
    CHECK(load_cursor(*o.cursor_path) == FetchCursor{"2024-01-01", 6});

    // Resume once the endpoint recovers: only the remainder is fetched.
    // A fresh server stands in for the recovered endpoint.
    rstest::FakeBugzilla healthy(many);
    healthy.start();
    o.base_url = healthy.url();
    o.limit = 4;
    const auto rest = fetch_fixed_bugs(o);
    REQUIRE(rest.size() == 4);
    CHECK(rest.front().bug_id == 7);
    CHECK(rest.back().bug_id == 10);
    CHECK(load_cursor(*o.cursor_path).offset == 10);

    // A cursor for a different window is ignored.
    o.since = "2023-06-01";
    o.limit = 2;
    CHECK(fetch_fixed_bugs(o).front().bug_id == 1);
  }

  SUBCASE("failure before anything was fetched") {
    FetchOptions o;
    o.base_url = "http://127.0.0.1:1";
    o.limit = 5;
    try {
      fetch_fixed_bugs(o);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::ProviderUnavailable);
    }
  }
}

TEST_CASE("filter chain on the planted-defect corpus") {
  const json expected = json::parse(rstest::fixture("filter/expected.json"));
  const auto bugs = corpus_bugs();
  REQUIRE(bugs.size() == 12);
  std::vector<FilterOutcome> outcomes;
  std::set<std::int64_t> accepted;
  for (const auto& b : bugs) {
    outcomes.push_back(filter_report(b));
    const auto& o = outcomes.back();
    CHECK(o.accepted != o.rejection.has_value());
    if (o.accepted) {
      accepted.insert(o.bug_id);
      CHECK(*o.ctqrs_total >= 15);
      CHECK(o.report.missing_fields.empty());
      CHECK(detect_artifacts(b.description()).empty());
    } else {
      CAPTURE(o.bug_id);
      CHECK(o.reason() == expected["rejected"][std::to_string(o.bug_id)].get<std::string>());
    }
  }
  CHECK(accepted == expected["accepted"].get<std::set<std::int64_t>>());
  const FilterCounts counts = count_outcomes(outcomes);
  CHECK(counts.fetched == 12);
  CHECK(counts.accepted == 4);
  CHECK(counts.rejected.at("missing_section") == 4);
  CHECK(counts.rejected.at("code_artifacts") == 2);
  CHECK(counts.rejected.at("low_ctqrs") == 2);
  CHECK(counts.fetched == counts.accepted + counts.rejected_total());
}

TEST_CASE("filter examples") {
  CHECK(filter_report(rstest::make_bug(1, kGolden)).accepted);
  CHECK(*filter_report(rstest::make_bug(1, kGolden)).ctqrs_total == 17);
  const std::string no_er = "Steps to Reproduce:\n1. open\nActual Results:\nbad\nAdditional Information:\nv1.2.3";
  CHECK(filter_report(rstest::make_bug(2, no_er)).reason() == "missing_section(expected_result)");
  std::string traced = kGolden + "\n";
  for (int i = 0; i < 4; ++i) traced += "at org.foo.Bar.run(Bar.java:" + std::to_string(i + 10) + ")\n";
  CHECK(filter_report(rstest::make_bug(3, traced)).reason() == "code_artifacts");
}

TEST_CASE("filter stage writes accepted records and rejections") {
  rstest::TempDir dir;
  const CorpusLayout corpus{dir.path()};
  write_bugs(corpus.raw(), corpus_bugs());
  const FilterCounts counts = run_filter_stage(corpus, CtqrsEngine{});
  CHECK(counts.accepted == 4);
  const auto accepted = read_lines(corpus.filtered());
  REQUIRE(accepted.size() == 4);
  const auto first = json::parse(accepted[0]);
  CHECK(first["bug_id"] == 101);
  CHECK(first["ctqrs_total"].get<int>() >= 15);
  CHECK(json_to_report(first["report"].dump()).missing_fields.empty());
  const auto rejections = read_lines(corpus.rejections());
  REQUIRE(rejections.size() == 9);
  CHECK(rejections[0] == "bug_id,reason");
  CHECK(rejections[1] == "103,missing_section(expected_result)");
}

TEST_CASE("synthesis retention gates") {
  const StructuredReport golden = parse_sections(kGolden);
  const std::string original = render_report(golden);
  const SynthesisConfig cfg;
  HashedBagProvider hashed;

  SUBCASE("echoing the rendered report is retained at (1.0, 1.0)") {
    auto echo = mock_backend("echo");
    const auto r = synthesize_unstructured(*echo, golden, cfg, hashed);
    CHECK(r.unstructured == detail::trim(original));  // candidates are trimmed
    CHECK(r.embedding_similarity == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.cosine_tf == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.attempts.size() == 1);
  }

  SUBCASE("unrelated text three times fails retention") {
    rstest::SequenceBackend fixed({"completely unrelated words about cooking pasta"});
    try {
      synthesize_unstructured(fixed, golden, cfg, hashed);
      FAIL("expected RetentionFailed");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::RetentionFailed);
    }
    CHECK(fixed.prompts.size() == 3);
    CHECK(fixed.prompts[0] == build_synthesis_prompt(original));
  }

  SUBCASE("exactly 0.85 embedding similarity is rejected") {
    // cos((1,0,0,0,0), (17,10,3,1,1)) = 17/20 = 0.85; cosine_tf of the
    // candidate is 1.0, so only the embedding gate can reject it.
    const TokenSequence toks = tokenize(original);
    std::string reordered;
    for (auto it = toks.rbegin(); it != toks.rend(); ++it) reordered += (reordered.empty() ? "" : " ") + *it;
    REQUIRE(cosine_tf(tokenize(reordered), toks) == doctest::Approx(1.0));

    rstest::ScriptedEmbedding scripted({{original, {1, 0, 0, 0, 0}}, {reordered, {17, 10, 3, 1, 1}}});
    CHECK(embedding_similarity(scripted, reordered, original) == 0.85);
    rstest::SequenceBackend backend({reordered});
    try {
      synthesize_unstructured(backend, golden, cfg, scripted);
      FAIL("expected RetentionFailed");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::RetentionFailed);
    }

    // The second attempt clears both gates.
    rstest::ScriptedEmbedding better({{original, {1, 0, 0, 0, 0}}, {reordered, {17, 10, 3, 1, 1}}, {original + "!", {1, 0, 0, 0, 0}}});
    rstest::SequenceBackend retry({reordered, original + "!"});
    const auto r = synthesize_unstructured(retry, golden, cfg, better);
    CHECK(r.attempts.size() == 2);
    CHECK_FALSE(r.attempts[0].retained);
    CHECK(r.attempts[1].retained);
    CHECK(r.unstructured == original + "!");
  }

  SUBCASE("gate predicates are strict") {
    CHECK(retention_passes(1.0, 1.0, cfg));
    CHECK_FALSE(retention_passes(0.85, 0.9, cfg));
    CHECK(retention_passes(0.8500001, 0.9, cfg));
    CHECK_FALSE(retention_passes(0.9, 0.80, cfg));
    CHECK(retention_passes(0.9, 0.8000001, cfg));
  }

  SUBCASE("provider outage surfaces") {
    rstest::ScriptedEmbedding empty({});
    rstest::SequenceBackend backend({"x"});
    try {
      synthesize_unstructured(backend, golden, cfg, empty);
      FAIL("expected ProviderUnavailable");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::ProviderUnavailable);
    }
  }

  SUBCASE("config validation") {
    SynthesisConfig bad;
    bad.attempts = 0;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = SynthesisConfig{};
    bad.embedding_min = 1.0;
    CHECK_THROWS_AS(bad.validate(), Error);
  }
}

TEST_CASE("split sizes") {
  const SplitRatios ratios;
  CHECK(split_sizes(3903, ratios) == SplitSizes{3122, 391, 390});
  CHECK(split_sizes(10, ratios) == SplitSizes{8, 1, 1});
  CHECK(split_sizes(11, ratios) == SplitSizes{8, 2, 1});
  for (std::size_t n = 3; n <= 10000; ++n) {
    CAPTURE(n);
    const SplitSizes s = split_sizes(n, ratios);
    REQUIRE(s == rstest::oracle_split_sizes(n));
  }
}

TEST_CASE("property: split partitions deterministically") {
  for (std::size_t n : {3, 4, 5, 7, 10, 11, 97, 1000, 3903, 10000}) {
    CAPTURE(n);
    std::vector<std::size_t> records(n);
    std::iota(records.begin(), records.end(), 0);
    SplitRatios ratios;
    const auto a = split_dataset(records, ratios);
    const auto b = split_dataset(records, ratios);
    CHECK(a.train == b.train);
    CHECK(a.test == b.test);
    CHECK(a.validation == b.validation);
    CHECK(SplitSizes{a.train.size(), a.test.size(), a.validation.size()} == rstest::oracle_split_sizes(n));

    std::vector<std::size_t> all;
    for (const auto* part : {&a.train, &a.test, &a.validation}) all.insert(all.end(), part->begin(), part->end());
    std::sort(all.begin(), all.end());
    CHECK(all == records);

    ratios.seed = 7;
    const auto c = split_dataset(records, ratios);
    CHECK(SplitSizes{c.train.size(), c.test.size(), c.validation.size()} == rstest::oracle_split_sizes(n));
    if (n >= 10) CHECK(c.train != a.train);
  }
  CHECK_THROWS_AS(split_dataset(std::vector<int>{}, SplitRatios{}), Error);
  SplitRatios bad;
  bad.train = 0.9;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("seeded permutation") {
  const auto p = seeded_permutation(1000, 42);
  std::vector<std::size_t> sorted = p;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == i);
  CHECK(seeded_permutation(1000, 42) == p);
  CHECK(seeded_permutation(1000, 43) != p);
  // Pinned so a change of engine or reduction shows up.
  CHECK(seeded_permutation(8, 42) == std::vector<std::size_t>{7, 0, 5, 1, 2, 4, 3, 6});
  CHECK(seeded_permutation(0, 1).empty());
  CHECK(seeded_permutation(1, 1) == std::vector<std::size_t>{0});
}

TEST_CASE("instruction examples and export") {
  const StructuredReport golden = parse_sections(kGolden);
  const StructuredReport print_preview = parse_sections(rstest::fixture("reports/print_preview.txt"));
  auto echo = mock_backend("echo");
  HashedBagProvider hashed;
  std::vector<InstructionExample> examples;
  examples.push_back(make_instruction_example(1, golden, synthesize_unstructured(*echo, golden, {}, hashed)));
  examples.push_back(make_instruction_example(2, print_preview, synthesize_unstructured(*echo, print_preview, {}, hashed)));
  CHECK(examples[0].instruction == alpaca_instruction());
  CHECK(json_to_report(examples[0].output) == golden);
  CHECK(examples[1].embedding_similarity > 0.85);
  CHECK(examples[1].cosine_tf > 0.80);
  for (const auto& e : examples) CHECK(example_from_json(example_to_json(e)) == e);

  rstest::TempDir dir;
  write_examples(dir / "examples.jsonl", examples);
  CHECK(read_examples(dir / "examples.jsonl") == examples);

  const fs::path out = dir / "export" / "train.alpaca.jsonl";
  export_instruction_jsonl(examples, out);
  const auto lines = read_lines(out);
  REQUIRE(lines.size() == 2);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto j = json::parse(lines[i]);
    CHECK(j.size() == 3);
    CHECK(j["instruction"] == examples[i].instruction);
    CHECK(j["input"] == examples[i].input);
    CHECK(json_to_report(j["output"].get<std::string>()) == (i == 0 ? golden : print_preview));
  }
  const auto meta = json::parse(rstest::read_text(dir / "export" / "metadata.json"));
  CHECK(meta["training_recipe"]["lora_rank"] == 16);
  CHECK(meta["training_recipe"]["epochs"] == 3);
  CHECK(meta["training_recipe"]["batch_size"] == 8);
  CHECK(meta["rule_table"] == "rule_table_v1");
  CHECK(meta["synthesis"]["embedding_min_exclusive"] == 0.85);
  CHECK(meta["synthesis"]["cosine_tf_min_exclusive"] == 0.80);
  CHECK(meta["quality_filter"]["ctqrs_total_greater_than"] == 14);
  CHECK(meta["n_examples"] == 2);

  CHECK_THROWS_AS(export_instruction_jsonl({}, dir / "empty.jsonl"), Error);
  try {
    export_instruction_jsonl(examples, "/proc/forbidden/x.jsonl");
    FAIL("expected IoFailure");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::IoFailure);
  }
}

TEST_CASE("synthesis and split stages over a corpus directory") {
  rstest::TempDir dir;
  const CorpusLayout corpus{dir.path()};
  write_bugs(corpus.raw(), corpus_bugs());
  run_filter_stage(corpus, CtqrsEngine{});
  auto echo = mock_backend("echo");
  HashedBagProvider hashed;
  const auto counts = run_synthesis_stage(corpus, *echo, hashed, SynthesisConfig{});
  CHECK(counts.input == 4);
  CHECK(counts.retained == 4);
  CHECK(counts.failed == 0);
  const auto examples = read_examples(corpus.synth());
  REQUIRE(examples.size() == 4);
  CHECK(examples[0].bug_id == 101);
  CHECK(read_lines(corpus.synth_log()).size() == 4);

  const SplitSizes sizes = run_split_stage(corpus, SplitRatios{});
  CHECK(sizes == rstest::oracle_split_sizes(4));
  std::size_t total = 0;
  for (auto name : {"train", "test", "validation"}) total += read_lines(corpus.split(name)).size();
  CHECK(total == 4);
  CHECK(fs::exists(corpus.metadata()));

  // Same seed, same split files.
  const std::string train_before = rstest::read_text(corpus.split("train"));
  run_split_stage(corpus, SplitRatios{});
  CHECK(rstest::read_text(corpus.split("train")) == train_before);
}

#pragma once

// Evaluation suites: generation quality, missing-information detection by
// section masking, and per-section mapping fidelity.

#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "reportsmith/ctqrs.hpp"
#include "reportsmith/error.hpp"
#include "reportsmith/gateway.hpp"
#include "reportsmith/metrics.hpp"
#include "reportsmith/report.hpp"

namespace reportsmith {

enum class Suite { generation, missing, mapping };

std::string_view suite_name(Suite suite);
std::optional<Suite> suite_from_name(std::string_view name);

// Sections that can be masked and mapped.
inline constexpr std::array<SectionKind, 3> kMaskableSections = {
    SectionKind::steps_to_reproduce, SectionKind::expected_result, SectionKind::actual_result};

struct TestCase {
  std::int64_t bug_id = 0;
  std::string input;  // unstructured text
  StructuredReport gold;
};

/// JSONL: {"bug_id", "input", "gold": <report object or JSON string>}.
std::vector<TestCase> read_testset(const std::filesystem::path& path);
void write_testset(const std::filesystem::path& path, const std::vector<TestCase>& cases);

struct EvalRunConfig {
  BackendConfig backend;  // base_url "mock:<behaviour>" selects the mock backend
  int shots = 0;
  Suite suite = Suite::generation;
  std::filesystem::path testset_path;
  std::uint64_t seed = 42;
  std::filesystem::path output_dir;
  double mask_threshold = 0.5;  // sentence recall must exceed this

  void validate() const;
};

struct SectionScores {
  double rouge1_f = 0;
  double meteor = 0;

  bool operator==(const SectionScores&) const = default;
};

struct SectionDetection {
  bool flagged_original = false;  // negative variant
  bool flagged_masked = false;    // positive variant

  bool operator==(const SectionDetection&) const = default;
};

struct EvalRow {
  std::int64_t bug_id = 0;
  double ctqrs_percent = 0;
  MetricReport metric;
  bool parse_failed = false;
  std::map<SectionKind, SectionScores> per_section;     // mapping suite
  std::map<SectionKind, SectionDetection> detection;    // missing suite

  bool operator==(const EvalRow&) const = default;
};

struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;

  std::size_t total() const { return tp + fp + fn + tn; }
  /// (tp + tn) / total; 0 when empty.
  double accuracy() const;
  /// 2tp / (2tp + fp + fn); 1 when there is nothing to find and nothing was flagged.
  double f1() const;

  bool operator==(const ConfusionCounts&) const = default;
};

struct SectionMapping {
  double rouge1_f = 0;
  double meteor = 0;
  std::size_t n = 0;
  std::size_t excluded = 0;

  bool operator==(const SectionMapping&) const = default;
};

struct AggregateReport {
  std::string suite;
  std::string backend;
  int shots = 0;
  std::uint64_t seed = 0;
  std::string rule_table = std::string(kRuleTableVersion);
  std::size_t n = 0;
  std::size_t parse_failed = 0;
  bool partial = false;
  double ctqrs_percent_mean = 0;
  double rouge1_f_mean = 0;
  double meteor_mean = 0;
  std::optional<double> embedding_similarity_mean;
  std::map<SectionKind, ConfusionCounts> detection;
  std::map<SectionKind, SectionMapping> mapping;

  bool operator==(const AggregateReport&) const = default;
};

std::string aggregate_to_json(const AggregateReport& report);
AggregateReport aggregate_from_json(std::string_view text);

/// Deletes every sentence whose ROUGE-1 recall against the gold section
/// exceeds `threshold` and strictly exceeds its recall against every other
/// gold section.
/// Bare section headers are never deleted. Throws Error(NothingToMask).
std::string mask_section(std::string_view unstructured, const StructuredReport& gold, SectionKind kind,
                         double threshold = 0.5);

struct EvalContext {
  Suite suite = Suite::generation;
  int shots = 0;
  std::uint64_t seed = 42;
  double mask_threshold = 0.5;
  const CtqrsEngine* engine = nullptr;           // builtin when null
  const EmbeddingProvider* embeddings = nullptr;  // embedding_similarity omitted when null
};

/// Prompt for one test case; shots are drawn from `pool` by a seeded
/// permutation, skipping the case itself.
std::vector<Message> build_eval_messages(const TestCase& tc, std::string_view input, const std::vector<TestCase>& pool,
                                         const EvalContext& ctx);

EvalRow evaluate_row(const TestCase& tc, const std::vector<TestCase>& pool, ChatBackend& backend,
                     const EvalContext& ctx);

struct RowBatch {
  std::vector<EvalRow> rows;  // sorted by bug_id
  std::optional<Error> failure;  // first provider failure; rows then hold the completed subset
};

/// Reference implementation, one row at a time.
RowBatch evaluate_rows_serial(const std::vector<TestCase>& cases, ChatBackend& backend, const EvalContext& ctx);
/// OpenMP, at most backend.max_concurrency() rows in flight.
RowBatch evaluate_rows(const std::vector<TestCase>& cases, ChatBackend& backend, const EvalContext& ctx);

AggregateReport aggregate_rows(const std::vector<EvalRow>& rows, const EvalContext& ctx, std::string backend_name);

AggregateReport evaluate_generation(const std::vector<TestCase>& cases, ChatBackend& backend, EvalContext ctx);
AggregateReport missing_detection_eval(const std::vector<TestCase>& cases, ChatBackend& backend, EvalContext ctx);
AggregateReport mapping_eval(const std::vector<TestCase>& cases, ChatBackend& backend, EvalContext ctx);

/// Documented rows.csv / confusion.csv headers.
std::string_view rows_csv_header();
std::string_view confusion_csv_header();

std::string rows_to_csv(const std::vector<EvalRow>& rows);
std::string confusion_to_csv(const AggregateReport& report);

/// Writes aggregate.json, rows.csv and confusion.csv. Timestamps go to
/// run.json so the other three are reproducible byte for byte.
void emit_report(const AggregateReport& report, const std::vector<EvalRow>& rows,
                 const std::filesystem::path& output_dir);

/// Builds the backend, runs the configured suite and emits the report.
/// On provider failure the completed rows are persisted and the error rethrown.
AggregateReport run_eval(const EvalRunConfig& cfg);

std::unique_ptr<ChatBackend> make_backend(const BackendConfig& config);
std::unique_ptr<EmbeddingProvider> make_embedding_provider(const BackendConfig& config);

}  // namespace reportsmith

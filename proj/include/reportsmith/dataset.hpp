#pragma once

// Corpus construction: Bugzilla mining, the structural/artifact/quality filter
// chain, pseudo-ground-truth synthesis, seeded splitting and Alpaca export.

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

struct BugComment {
  std::int64_t comment_id = 0;
  std::string author;
  std::string created;
  std::string text;

  bool operator==(const BugComment&) const = default;
};

struct BugzillaBug {
  std::int64_t bug_id = 0;
  std::string status;
  std::string resolution;
  std::vector<BugComment> comments;  // index 0 is the description
  std::map<std::string, std::string> meta;

  const std::string& description() const;
  bool operator==(const BugzillaBug&) const = default;
};

std::string bug_to_json(const BugzillaBug& bug);
BugzillaBug bug_from_json(std::string_view text);

struct FetchCursor {
  std::string last_change_time;
  std::int64_t offset = 0;

  bool operator==(const FetchCursor&) const = default;
};

FetchCursor load_cursor(const std::filesystem::path& path);
void save_cursor(const std::filesystem::path& path, const FetchCursor& cursor);

struct FetchOptions {
  std::string base_url;
  std::string since;  // last_change_time lower bound, ISO-8601
  std::size_t limit = 0;
  std::size_t page_size = 100;
  std::vector<std::string> statuses = {"RESOLVED", "VERIFIED"};
  std::string resolution = "FIXED";
  int parallelism = 4;
  double min_request_interval_seconds = 0.0;
  double timeout_seconds = 30.0;
  std::optional<std::filesystem::path> cursor_path;  // resume from / persist to
};

/// Thrown when a page or comment request fails after some bugs were fetched;
/// carries the complete-bug prefix and the cursor to resume from.
class PartialFetchError : public Error {
 public:
  PartialFetchError(std::vector<BugzillaBug> fetched, FetchCursor cursor, const std::string& message)
      : Error(ErrorCode::PartialFetch, message), fetched_(std::move(fetched)), cursor_(std::move(cursor)) {}

  const std::vector<BugzillaBug>& fetched() const { return fetched_; }
  const FetchCursor& cursor() const { return cursor_; }

 private:
  std::vector<BugzillaBug> fetched_;
  FetchCursor cursor_;
};

/// GET /rest/bug pages and GET /rest/bug/{id}/comment per bug.
std::vector<BugzillaBug> fetch_fixed_bugs(const FetchOptions& options);

enum class RejectionKind { missing_section, code_artifacts, low_ctqrs };

struct FilterOutcome {
  std::int64_t bug_id = 0;
  bool accepted = false;
  std::optional<RejectionKind> rejection;
  std::optional<SectionKind> missing_section;  // set for missing_section
  std::optional<int> ctqrs_total;              // set for low_ctqrs and accepted
  StructuredReport report;                     // parsed description

  /// "missing_section(expected_result)", "code_artifacts", "low_ctqrs(12)" or "".
  std::string reason() const;
};

inline constexpr int kQualityThreshold = 14;  // accepted iff total > 14

FilterOutcome filter_report(const BugzillaBug& bug, const CtqrsEngine& engine);
FilterOutcome filter_report(const BugzillaBug& bug);

struct FilterCounts {
  std::size_t fetched = 0;
  std::size_t accepted = 0;
  std::map<std::string, std::size_t> rejected;  // keyed by rejection kind name

  std::size_t rejected_total() const;
};

FilterCounts count_outcomes(const std::vector<FilterOutcome>& outcomes);

struct SynthesisConfig {
  int attempts = 3;
  double embedding_min = 0.85;  // exclusive
  double cosine_min = 0.80;     // exclusive

  void validate() const;
};

struct SynthesisAttempt {
  std::string text;
  double embedding_similarity = 0;
  double cosine_tf = 0;
  bool retained = false;
};

struct SynthesisResult {
  std::string unstructured;
  double embedding_similarity = 0;
  double cosine_tf = 0;
  std::vector<SynthesisAttempt> attempts;
};

bool retention_passes(double embedding_similarity, double cosine_tf, const SynthesisConfig& cfg);

/// Throws Error(RetentionFailed) when no attempt clears both gates.
SynthesisResult synthesize_unstructured(ChatBackend& backend, const StructuredReport& report,
                                        const SynthesisConfig& cfg, const EmbeddingProvider& provider);

struct SplitRatios {
  double train = 0.8;
  double test = 0.1;
  double validation = 0.1;
  std::uint64_t seed = 42;

  void validate() const;
};

struct SplitSizes {
  std::size_t train = 0;
  std::size_t test = 0;
  std::size_t validation = 0;

  bool operator==(const SplitSizes&) const = default;
};

/// train = floor(ratio * N); the remainder goes ceil-half to test.
SplitSizes split_sizes(std::size_t n, const SplitRatios& ratios);

/// Seeded Fisher-Yates permutation over mt19937_64, stable across platforms.
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

template <typename T>
struct DatasetSplit {
  std::vector<T> train;
  std::vector<T> test;
  std::vector<T> validation;
};

template <typename T>
DatasetSplit<T> split_dataset(const std::vector<T>& records, const SplitRatios& ratios) {
  if (records.empty()) throw Error(ErrorCode::InvalidConfig, "cannot split an empty dataset");
  ratios.validate();
  const SplitSizes sizes = split_sizes(records.size(), ratios);
  const auto order = seeded_permutation(records.size(), ratios.seed);
  DatasetSplit<T> out;
  out.train.reserve(sizes.train);
  out.test.reserve(sizes.test);
  out.validation.reserve(sizes.validation);
  for (std::size_t k = 0; k < order.size(); ++k) {
    const T& r = records[order[k]];
    if (k < sizes.train) out.train.push_back(r);
    else if (k < sizes.train + sizes.test) out.test.push_back(r);
    else out.validation.push_back(r);
  }
  return out;
}

struct InstructionExample {
  std::string instruction;
  std::string input;
  std::string output;  // structured-report JSON
  std::int64_t bug_id = 0;
  double embedding_similarity = 0;
  double cosine_tf = 0;

  bool operator==(const InstructionExample&) const = default;
};

InstructionExample make_instruction_example(std::int64_t bug_id, const StructuredReport& report,
                                            const SynthesisResult& synthesis);

/// Full record, including provenance.
std::string example_to_json(const InstructionExample& example);
InstructionExample example_from_json(std::string_view line);

std::vector<InstructionExample> read_examples(const std::filesystem::path& path);
void write_examples(const std::filesystem::path& path, const std::vector<InstructionExample>& examples);

/// One {"instruction","input","output"} object per line, plus metadata.json
/// next to `path` with the training recipe, rule table and thresholds.
void export_instruction_jsonl(const std::vector<InstructionExample>& split, const std::filesystem::path& path,
                              const SynthesisConfig& synthesis = {}, const SplitRatios& ratios = {});

std::string dataset_metadata_json(const SynthesisConfig& synthesis, const SplitRatios& ratios,
                                  std::size_t n_examples);

// Corpus directory layout.
struct CorpusLayout {
  std::filesystem::path root;

  std::filesystem::path raw() const { return root / "raw" / "bugs.jsonl"; }
  std::filesystem::path filtered() const { return root / "filtered" / "accepted.jsonl"; }
  std::filesystem::path synth() const { return root / "synth" / "examples.jsonl"; }
  std::filesystem::path synth_log() const { return root / "synth" / "attempts.jsonl"; }
  std::filesystem::path split(std::string_view name) const {
    return root / "splits" / (std::string(name) + ".jsonl");
  }
  std::filesystem::path metadata() const { return root / "metadata.json"; }
  std::filesystem::path rejections() const { return root / "rejections.csv"; }
  std::filesystem::path cursor() const { return root / "raw" / "cursor.json"; }
};

void write_bugs(const std::filesystem::path& path, const std::vector<BugzillaBug>& bugs, bool append = false);
std::vector<BugzillaBug> read_bugs(const std::filesystem::path& path);

/// Filters raw/ into filtered/ and rejections.csv; returns the counts.
FilterCounts run_filter_stage(const CorpusLayout& corpus, const CtqrsEngine& engine);

struct SynthesisStageCounts {
  std::size_t input = 0;
  std::size_t retained = 0;
  std::size_t failed = 0;
};

SynthesisStageCounts run_synthesis_stage(const CorpusLayout& corpus, ChatBackend& backend,
                                         const EmbeddingProvider& provider, const SynthesisConfig& cfg);

SplitSizes run_split_stage(const CorpusLayout& corpus, const SplitRatios& ratios,
                           const SynthesisConfig& synthesis = {});

}  // namespace reportsmith

#include "reportsmith/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"

namespace reportsmith {

using nlohmann::json;
using nlohmann::ordered_json;
namespace fs = std::filesystem;

// --- bug records ----------------------------------------------------------------

const std::string& BugzillaBug::description() const {
  static const std::string kEmpty;
  return comments.empty() ? kEmpty : comments.front().text;
}

std::string bug_to_json(const BugzillaBug& bug) {
  ordered_json j;
  j["bug_id"] = bug.bug_id;
  j["status"] = bug.status;
  j["resolution"] = bug.resolution;
  j["meta"] = bug.meta;
  auto comments = ordered_json::array();
  for (const auto& c : bug.comments) {
    comments.push_back({{"comment_id", c.comment_id}, {"author", c.author}, {"created", c.created}, {"text", c.text}});
  }
  j["comments"] = std::move(comments);
  return j.dump();
}

BugzillaBug bug_from_json(std::string_view text) {
  try {
    json j = json::parse(text);
    BugzillaBug bug;
    bug.bug_id = j.at("bug_id").get<std::int64_t>();
    bug.status = j.value("status", "");
    bug.resolution = j.value("resolution", "");
    if (j.contains("meta")) bug.meta = j["meta"].get<std::map<std::string, std::string>>();
    for (const auto& c : j.at("comments")) {
      bug.comments.push_back({c.value("comment_id", std::int64_t{0}), c.value("author", ""),
                              c.value("created", ""), c.value("text", "")});
    }
    return bug;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedDocument, std::string("bug record: ") + e.what());
  }
}

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::ofstream open_out(const fs::path& path, bool append = false) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, append ? std::ios::binary | std::ios::app : std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  return out;
}

template <typename F>
void for_each_line(const fs::path& path, F f) {
  std::string content = read_file(path);
  for (auto line : detail::split_lines(content)) {
    if (!detail::trim(line).empty()) f(line);
  }
}

}  // namespace

void write_bugs(const fs::path& path, const std::vector<BugzillaBug>& bugs, bool append) {
  auto out = open_out(path, append);
  for (const auto& b : bugs) out << bug_to_json(b) << '\n';
  if (!out) throw Error(ErrorCode::IoFailure, "write failed: " + path.string());
}

std::vector<BugzillaBug> read_bugs(const fs::path& path) {
  std::vector<BugzillaBug> bugs;
  for_each_line(path, [&](std::string_view line) { bugs.push_back(bug_from_json(line)); });
  return bugs;
}

FetchCursor load_cursor(const fs::path& path) {
  try {
    json j = json::parse(read_file(path));
    return {j.at("last_change_time").get<std::string>(), j.at("offset").get<std::int64_t>()};
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedDocument, "cursor " + path.string() + ": " + e.what());
  }
}

void save_cursor(const fs::path& path, const FetchCursor& cursor) {
  ordered_json j;
  j["last_change_time"] = cursor.last_change_time;
  j["offset"] = cursor.offset;
  auto out = open_out(path);
  out << j.dump() << '\n';
}

// --- fetching -----------------------------------------------------------------

namespace {

class RateLimiter {
 public:
  explicit RateLimiter(double min_interval_seconds)
      : interval_(std::chrono::duration_cast<std::chrono::steady_clock::duration>(
            std::chrono::duration<double>(min_interval_seconds))) {}

  void wait() {
    if (interval_.count() <= 0) return;
    std::chrono::steady_clock::time_point slot;
    {
      std::lock_guard lock(mu_);
      auto now = std::chrono::steady_clock::now();
      slot = std::max(now, next_);
      next_ = slot + interval_;
    }
    std::this_thread::sleep_until(slot);
  }

 private:
  std::chrono::steady_clock::duration interval_;
  std::mutex mu_;
  std::chrono::steady_clock::time_point next_{};
};

class BugzillaClient {
 public:
  explicit BugzillaClient(const FetchOptions& o) : opts_(o), limiter_(o.min_request_interval_seconds) {
    auto scheme = o.base_url.find("://");
    if (scheme == std::string::npos) throw Error(ErrorCode::InvalidConfig, "base_url needs a scheme");
    auto path = o.base_url.find('/', scheme + 3);
    host_ = path == std::string::npos ? o.base_url : o.base_url.substr(0, path);
    prefix_ = path == std::string::npos ? "" : o.base_url.substr(path);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
  }

  json get(const std::string& path, const httplib::Params& params) {
    limiter_.wait();
    httplib::Client cli(host_);
    auto secs = static_cast<time_t>(opts_.timeout_seconds);
    cli.set_connection_timeout(secs);
    cli.set_read_timeout(secs);
    auto res = cli.Get(prefix_ + path, params, httplib::Headers{});
    if (!res) throw Error(ErrorCode::ProviderUnavailable, path + ": " + httplib::to_string(res.error()));
    if (res->status != 200)
      throw Error(ErrorCode::ProviderUnavailable, path + ": HTTP " + std::to_string(res->status));
    try {
      return json::parse(res->body);
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::ProviderUnavailable, path + ": " + e.what());
    }
  }

 private:
  const FetchOptions& opts_;
  RateLimiter limiter_;
  std::string host_;
  std::string prefix_;
};

std::vector<BugComment> parse_comments(const json& j, std::int64_t bug_id) {
  std::vector<BugComment> comments;
  const json& entry = j.at("bugs").at(std::to_string(bug_id)).at("comments");
  std::vector<std::pair<std::int64_t, BugComment>> indexed;
  std::int64_t pos = 0;
  for (const auto& c : entry) {
    BugComment bc;
    bc.comment_id = c.value("id", std::int64_t{0});
    bc.author = c.value("creator", c.value("author", ""));
    bc.created = c.value("creation_time", c.value("time", ""));
    bc.text = c.value("text", "");
    indexed.emplace_back(c.value("count", pos), std::move(bc));
    ++pos;
  }
  std::stable_sort(indexed.begin(), indexed.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (auto& [_, c] : indexed) comments.push_back(std::move(c));
  return comments;
}

std::string meta_string(const json& bug, const char* key) {
  auto it = bug.find(key);
  if (it == bug.end() || it->is_null()) return {};
  return it->is_string() ? it->get<std::string>() : it->dump();
}

}  // namespace

std::vector<BugzillaBug> fetch_fixed_bugs(const FetchOptions& options) {
  std::vector<BugzillaBug> fetched;
  if (options.limit == 0) return fetched;
  if (options.page_size == 0 || options.parallelism < 1)
    throw Error(ErrorCode::InvalidConfig, "page_size and parallelism must be positive");

  FetchCursor cursor{options.since, 0};
  if (options.cursor_path && fs::exists(*options.cursor_path)) {
    FetchCursor saved = load_cursor(*options.cursor_path);
    if (saved.last_change_time == options.since) cursor = saved;
  }

  BugzillaClient client(options);
  while (fetched.size() < options.limit) {
    const std::size_t want = std::min(options.page_size, options.limit - fetched.size());
    httplib::Params params;
    for (const auto& s : options.statuses) params.emplace("status", s);
    params.emplace("resolution", options.resolution);
    if (!options.since.empty()) params.emplace("last_change_time", options.since);
    params.emplace("limit", std::to_string(want));
    params.emplace("offset", std::to_string(cursor.offset));
    params.emplace("order", "bug_id");
    params.emplace("include_fields", "id,status,resolution,priority,severity,product,component,creation_time");

    json page;
    try {
      page = client.get("/rest/bug", params);
    } catch (const Error& e) {
      if (fetched.empty() && cursor.offset == 0) throw;
      throw PartialFetchError(std::move(fetched), cursor, e.what());
    }
    const json& bugs = page.value("bugs", json::array());
    if (bugs.empty()) break;

    std::vector<BugzillaBug> batch(bugs.size());
    std::vector<std::string> errors(bugs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t i = next++; i < bugs.size(); i = next++) {
        const json& b = bugs[i];
        BugzillaBug& bug = batch[i];
        try {
          bug.bug_id = b.at("id").get<std::int64_t>();
          bug.status = meta_string(b, "status");
          bug.resolution = meta_string(b, "resolution");
          for (const char* key : {"priority", "severity", "product", "component", "creation_time"}) {
            if (b.contains(key)) bug.meta[key] = meta_string(b, key);
          }
          json comments = client.get("/rest/bug/" + std::to_string(bug.bug_id) + "/comment", {});
          bug.comments = parse_comments(comments, bug.bug_id);
        } catch (const std::exception& e) {
          errors[i] = e.what();
        }
      }
    };
    {
      std::vector<std::jthread> pool;
      int n_workers = std::min<int>(options.parallelism, static_cast<int>(bugs.size()));
      for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    }

    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (!errors[i].empty()) {
        if (options.cursor_path) save_cursor(*options.cursor_path, cursor);
        throw PartialFetchError(std::move(fetched), cursor, errors[i]);
      }
      fetched.push_back(std::move(batch[i]));
      ++cursor.offset;
    }
    if (options.cursor_path) save_cursor(*options.cursor_path, cursor);
    if (bugs.size() < want) break;
  }
  return fetched;
}

// --- filtering -------------------------------------------------------------------

std::string FilterOutcome::reason() const {
  if (!rejection) return {};
  switch (*rejection) {
    case RejectionKind::missing_section:
      return "missing_section(" + std::string(section_name(*missing_section)) + ")";
    case RejectionKind::code_artifacts:
      return "code_artifacts";
    case RejectionKind::low_ctqrs:
      return "low_ctqrs(" + std::to_string(ctqrs_total.value_or(0)) + ")";
  }
  return {};
}

FilterOutcome filter_report(const BugzillaBug& bug, const CtqrsEngine& engine) {
  FilterOutcome out;
  out.bug_id = bug.bug_id;
  const std::string& description = bug.description();
  out.report = parse_sections(description);
  for (auto kind : kBodySections) {
    if (out.report.missing_fields.count(kind)) {
      out.rejection = RejectionKind::missing_section;
      out.missing_section = kind;
      return out;
    }
  }
  if (!detect_artifacts(description).empty()) {
    out.rejection = RejectionKind::code_artifacts;
    return out;
  }
  const int total = engine.score(out.report).total;
  out.ctqrs_total = total;
  if (total <= kQualityThreshold) {
    out.rejection = RejectionKind::low_ctqrs;
    return out;
  }
  out.accepted = true;
  return out;
}

FilterOutcome filter_report(const BugzillaBug& bug) {
  static const CtqrsEngine engine;
  return filter_report(bug, engine);
}

std::size_t FilterCounts::rejected_total() const {
  std::size_t n = 0;
  for (const auto& [_, c] : rejected) n += c;
  return n;
}

FilterCounts count_outcomes(const std::vector<FilterOutcome>& outcomes) {
  FilterCounts c;
  c.fetched = outcomes.size();
  for (const auto& o : outcomes) {
    if (o.accepted) {
      ++c.accepted;
      continue;
    }
    switch (*o.rejection) {
      case RejectionKind::missing_section: ++c.rejected["missing_section"]; break;
      case RejectionKind::code_artifacts: ++c.rejected["code_artifacts"]; break;
      case RejectionKind::low_ctqrs: ++c.rejected["low_ctqrs"]; break;
    }
  }
  return c;
}

// --- synthesis -------------------------------------------------------------------

void SynthesisConfig::validate() const {
  if (attempts < 1) throw Error(ErrorCode::InvalidConfig, "synthesis attempts must be >= 1");
  auto in_unit = [](double v) { return v > 0 && v < 1; };
  if (!in_unit(embedding_min) || !in_unit(cosine_min))
    throw Error(ErrorCode::InvalidConfig, "synthesis thresholds must lie in (0,1)");
}

bool retention_passes(double embedding_similarity, double cosine, const SynthesisConfig& cfg) {
  return embedding_similarity > cfg.embedding_min && cosine > cfg.cosine_min;
}

namespace {

std::optional<SynthesisResult> try_synthesize(ChatBackend& backend, const StructuredReport& report,
                                              const SynthesisConfig& cfg, const EmbeddingProvider& provider,
                                              std::vector<SynthesisAttempt>& log) {
  cfg.validate();
  const std::string original = render_report(report);
  const TokenSequence original_tokens = tokenize(original);
  const std::vector<Message> messages = {{"user", build_synthesis_prompt(original)}};
  for (int attempt = 0; attempt < cfg.attempts; ++attempt) {
    SynthesisAttempt a;
    a.text = detail::trim(backend.complete(messages));
    a.embedding_similarity = embedding_similarity(provider, a.text, original);
    a.cosine_tf = cosine_tf(tokenize(a.text), original_tokens);
    a.retained = retention_passes(a.embedding_similarity, a.cosine_tf, cfg);
    log.push_back(a);
    if (a.retained) {
      SynthesisResult r;
      r.unstructured = a.text;
      r.embedding_similarity = a.embedding_similarity;
      r.cosine_tf = a.cosine_tf;
      r.attempts = log;
      return r;
    }
  }
  return std::nullopt;
}

}  // namespace

SynthesisResult synthesize_unstructured(ChatBackend& backend, const StructuredReport& report,
                                        const SynthesisConfig& cfg, const EmbeddingProvider& provider) {
  std::vector<SynthesisAttempt> log;
  auto r = try_synthesize(backend, report, cfg, provider, log);
  if (!r) {
    std::ostringstream msg;
    msg << cfg.attempts << " attempts below thresholds (embedding > " << cfg.embedding_min
        << ", cosine > " << cfg.cosine_min << ")";
    throw Error(ErrorCode::RetentionFailed, msg.str());
  }
  return *r;
}

// --- splitting ------------------------------------------------------------------

void SplitRatios::validate() const {
  if (train < 0 || test < 0 || validation < 0 || std::abs(train + test + validation - 1.0) > 1e-9)
    throw Error(ErrorCode::InvalidConfig, "split ratios must be non-negative and sum to 1");
}

SplitSizes split_sizes(std::size_t n, const SplitRatios& ratios) {
  SplitSizes s;
  s.train = static_cast<std::size_t>(std::floor(ratios.train * static_cast<double>(n) + 1e-9));
  s.train = std::min(s.train, n);
  const std::size_t rest = n - s.train;
  const double held_out = ratios.test + ratios.validation;
  if (held_out <= 0) {
    s.train = n;
    return s;
  }
  const double share = static_cast<double>(rest) * ratios.test / held_out;
  s.test = std::min(rest, static_cast<std::size_t>(std::ceil(share - 1e-9)));
  s.validation = rest - s.test;
  return s;
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 gen(seed);
  for (std::size_t i = n; i > 1; --i) {
    const std::uint64_t bound = i;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t r;
    do {
      r = gen();
    } while (r >= limit);
    std::swap(order[i - 1], order[static_cast<std::size_t>(r % bound)]);
  }
  return order;
}

// --- export ------------------------------------------------------------------------

InstructionExample make_instruction_example(std::int64_t bug_id, const StructuredReport& report,
                                            const SynthesisResult& synthesis) {
  InstructionExample e;
  e.instruction = std::string(alpaca_instruction());
  e.input = synthesis.unstructured;
  e.output = report_to_json(report);
  e.bug_id = bug_id;
  e.embedding_similarity = synthesis.embedding_similarity;
  e.cosine_tf = synthesis.cosine_tf;
  return e;
}

std::string example_to_json(const InstructionExample& e) {
  ordered_json j;
  j["instruction"] = e.instruction;
  j["input"] = e.input;
  j["output"] = e.output;
  j["provenance"] = {{"bug_id", e.bug_id},
                     {"embedding_similarity", e.embedding_similarity},
                     {"cosine_tf", e.cosine_tf}};
  return j.dump();
}

InstructionExample example_from_json(std::string_view line) {
  try {
    json j = json::parse(line);
    InstructionExample e;
    e.instruction = j.at("instruction").get<std::string>();
    e.input = j.at("input").get<std::string>();
    e.output = j.at("output").get<std::string>();
    if (j.contains("provenance")) {
      const auto& p = j["provenance"];
      e.bug_id = p.value("bug_id", std::int64_t{0});
      e.embedding_similarity = p.value("embedding_similarity", 0.0);
      e.cosine_tf = p.value("cosine_tf", 0.0);
    }
    return e;
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::MalformedDocument, std::string("instruction example: ") + ex.what());
  }
}

std::vector<InstructionExample> read_examples(const fs::path& path) {
  std::vector<InstructionExample> out;
  for_each_line(path, [&](std::string_view line) { out.push_back(example_from_json(line)); });
  return out;
}

void write_examples(const fs::path& path, const std::vector<InstructionExample>& examples) {
  auto out = open_out(path);
  for (const auto& e : examples) out << example_to_json(e) << '\n';
  if (!out) throw Error(ErrorCode::IoFailure, "write failed: " + path.string());
}

std::string dataset_metadata_json(const SynthesisConfig& synthesis, const SplitRatios& ratios,
                                  std::size_t n_examples) {
  ordered_json j;
  j["training_recipe"] = ordered_json::parse(training_recipe_json(TrainingRecipe{}));
  j["rule_table"] = kRuleTableVersion;
  j["quality_filter"] = {{"ctqrs_total_greater_than", kQualityThreshold}, {"max_total", kCtqrsMaxTotal}};
  j["synthesis"] = {{"attempts", synthesis.attempts},
                    {"embedding_min_exclusive", synthesis.embedding_min},
                    {"cosine_tf_min_exclusive", synthesis.cosine_min}};
  j["split"] = {{"train", ratios.train},
                {"test", ratios.test},
                {"validation", ratios.validation},
                {"seed", ratios.seed},
                {"rounding", "train=floor; test=ceil(remainder/2); validation=rest"}};
  j["prompt_template"] = "alpaca";
  j["n_examples"] = n_examples;
  return j.dump(2);
}

void export_instruction_jsonl(const std::vector<InstructionExample>& split, const fs::path& path,
                              const SynthesisConfig& synthesis, const SplitRatios& ratios) {
  if (split.empty()) throw Error(ErrorCode::InvalidConfig, "cannot export an empty split");
  {
    auto out = open_out(path);
    for (const auto& e : split) {
      ordered_json j;
      j["instruction"] = e.instruction;
      j["input"] = e.input;
      j["output"] = e.output;
      out << j.dump() << '\n';
    }
    if (!out) throw Error(ErrorCode::IoFailure, "write failed: " + path.string());
  }
  auto meta = open_out(path.parent_path() / "metadata.json");
  meta << dataset_metadata_json(synthesis, ratios, split.size()) << '\n';
  if (!meta) throw Error(ErrorCode::IoFailure, "write failed: metadata.json");
}

// --- corpus stages -------------------------------------------------------------------

FilterCounts run_filter_stage(const CorpusLayout& corpus, const CtqrsEngine& engine) {
  const auto bugs = read_bugs(corpus.raw());
  std::vector<FilterOutcome> outcomes;
  outcomes.reserve(bugs.size());
  for (const auto& b : bugs) outcomes.push_back(filter_report(b, engine));

  auto accepted = open_out(corpus.filtered());
  auto rejections = open_out(corpus.rejections());
  rejections << "bug_id,reason\n";
  for (const auto& o : outcomes) {
    if (o.accepted) {
      ordered_json j;
      j["bug_id"] = o.bug_id;
      j["ctqrs_total"] = o.ctqrs_total.value_or(0);
      j["report"] = ordered_json::parse(report_to_json(o.report));
      accepted << j.dump() << '\n';
    } else {
      rejections << o.bug_id << ',' << o.reason() << '\n';
    }
  }
  if (!accepted || !rejections) throw Error(ErrorCode::IoFailure, "filter stage write failed");
  return count_outcomes(outcomes);
}

SynthesisStageCounts run_synthesis_stage(const CorpusLayout& corpus, ChatBackend& backend,
                                         const EmbeddingProvider& provider, const SynthesisConfig& cfg) {
  std::vector<std::pair<std::int64_t, StructuredReport>> accepted;
  for_each_line(corpus.filtered(), [&](std::string_view line) {
    json j = json::parse(line);
    accepted.emplace_back(j.at("bug_id").get<std::int64_t>(), json_to_report(j.at("report").dump()));
  });

  const std::size_t n = accepted.size();
  std::vector<std::optional<SynthesisResult>> results(n);
  std::vector<std::vector<SynthesisAttempt>> logs(n);
  std::vector<std::string> errors(n);
  std::atomic<bool> provider_down{false};
  const int threads = std::max(1, backend.max_concurrency());

#pragma omp parallel for schedule(dynamic) num_threads(threads)
  for (std::size_t i = 0; i < n; ++i) {
    if (provider_down) continue;
    try {
      results[i] = try_synthesize(backend, accepted[i].second, cfg, provider, logs[i]);
    } catch (const Error& e) {
      errors[i] = e.what();
      if (e.code() == ErrorCode::ProviderUnavailable || e.code() == ErrorCode::AuthFailed ||
          e.code() == ErrorCode::TimedOut)
        provider_down = true;
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }

  SynthesisStageCounts counts;
  counts.input = n;
  std::vector<InstructionExample> examples;
  auto log = open_out(corpus.synth_log());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < logs[i].size(); ++k) {
      const auto& a = logs[i][k];
      ordered_json j;
      j["bug_id"] = accepted[i].first;
      j["attempt"] = k + 1;
      j["embedding_similarity"] = a.embedding_similarity;
      j["cosine_tf"] = a.cosine_tf;
      j["retained"] = a.retained;
      log << j.dump() << '\n';
    }
    if (results[i]) {
      examples.push_back(make_instruction_example(accepted[i].first, accepted[i].second, *results[i]));
      ++counts.retained;
    } else {
      ++counts.failed;
    }
  }
  write_examples(corpus.synth(), examples);
  if (provider_down) {
    for (const auto& e : errors)
      if (!e.empty()) throw Error(ErrorCode::ProviderUnavailable, e);
  }
  return counts;
}

SplitSizes run_split_stage(const CorpusLayout& corpus, const SplitRatios& ratios, const SynthesisConfig& synthesis) {
  auto examples = read_examples(corpus.synth());
  auto split = split_dataset(examples, ratios);
  write_examples(corpus.split("train"), split.train);
  write_examples(corpus.split("test"), split.test);
  write_examples(corpus.split("validation"), split.validation);
  auto meta = open_out(corpus.metadata());
  meta << dataset_metadata_json(synthesis, ratios, examples.size()) << '\n';
  return {split.train.size(), split.test.size(), split.validation.size()};
}

}  // namespace reportsmith

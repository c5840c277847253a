#include "reportsmith/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <ctime>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "reportsmith/dataset.hpp"

namespace reportsmith {

using nlohmann::json;
using nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string_view suite_name(Suite suite) {
  switch (suite) {
    case Suite::generation: return "generation";
    case Suite::missing: return "missing";
    case Suite::mapping: return "mapping";
  }
  return "generation";
}

std::optional<Suite> suite_from_name(std::string_view name) {
  for (auto s : {Suite::generation, Suite::missing, Suite::mapping}) {
    if (suite_name(s) == name) return s;
  }
  return std::nullopt;
}

// --- test sets --------------------------------------------------------------------

std::vector<TestCase> read_testset(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot read testset " + path.string());
  std::vector<TestCase> cases;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    try {
      json j = json::parse(line);
      TestCase tc;
      tc.input = j.at("input").get<std::string>();
      const json& gold = j.contains("gold") ? j["gold"] : j.at("output");
      tc.gold = json_to_report(gold.is_string() ? gold.get<std::string>() : gold.dump());
      if (j.contains("bug_id")) tc.bug_id = j["bug_id"].get<std::int64_t>();
      else if (j.contains("provenance")) tc.bug_id = j["provenance"].value("bug_id", std::int64_t{0});
      if (tc.bug_id == 0) tc.bug_id = static_cast<std::int64_t>(lineno);
      cases.push_back(std::move(tc));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::MalformedDocument, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cases;
}

void write_testset(const fs::path& path, const std::vector<TestCase>& cases) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  for (const auto& tc : cases) {
    ordered_json j;
    j["bug_id"] = tc.bug_id;
    j["input"] = tc.input;
    j["gold"] = ordered_json::parse(report_to_json(tc.gold));
    out << j.dump() << '\n';
  }
}

void EvalRunConfig::validate() const {
  if (shots < 0) throw Error(ErrorCode::InvalidConfig, "shots must be >= 0");
  if (!(mask_threshold >= 0 && mask_threshold < 1))
    throw Error(ErrorCode::InvalidConfig, "mask_threshold must lie in [0,1)");
  if (testset_path.empty()) throw Error(ErrorCode::InvalidConfig, "testset path is required");
  if (output_dir.empty()) throw Error(ErrorCode::InvalidConfig, "output dir is required");
}

// --- confusion ------------------------------------------------------------------

double ConfusionCounts::accuracy() const {
  const std::size_t n = total();
  return n == 0 ? 0.0 : static_cast<double>(tp + tn) / static_cast<double>(n);
}

double ConfusionCounts::f1() const {
  const std::size_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 1.0 : static_cast<double>(2 * tp) / static_cast<double>(denom);
}

// --- masking ------------------------------------------------------------------------

namespace {

// Enumerators such as "1." or "-" carry no content.
std::string_view strip_enumerator(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
  std::size_t j = i;
  if (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) {
    while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j;
    if (j < s.size() && (s[j] == '.' || s[j] == ')')) ++j;
    else return s;
  } else if (j < s.size() && (s[j] == '-' || s[j] == '*')) {
    ++j;
  } else if (s.substr(j).rfind("\xE2\x80\xA2", 0) == 0) {
    j += 3;
  } else {
    return s;
  }
  if (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) return s;
  return s.substr(j);
}

}  // namespace

std::string mask_section(std::string_view unstructured, const StructuredReport& gold, SectionKind kind,
                         double threshold) {
  if (kind == SectionKind::title || kind == SectionKind::additional_information)
    throw Error(ErrorCode::NothingToMask, "only steps, expected and actual results can be masked");
  const TokenSequence target = tokenize(gold.section_text(kind));
  if (target.empty()) throw Error(ErrorCode::NothingToMask, std::string(section_name(kind)) + " is empty in gold");

  std::vector<TokenSequence> others;
  for (auto other : {SectionKind::title, SectionKind::steps_to_reproduce, SectionKind::expected_result,
                     SectionKind::actual_result, SectionKind::additional_information}) {
    if (other != kind) others.push_back(tokenize(gold.section_text(other)));
  }

  std::string out;
  bool deleted_any = false;
  bool first = true;
  for (std::string_view line : detail::split_lines(unstructured)) {
    std::string kept_line(line);
    if (!is_header_line(line)) {
      std::vector<std::string_view> kept;
      bool deleted_here = false;
      for (auto [b, e] : sentence_spans(line)) {
        std::string_view sentence = line.substr(b, e - b);
        const TokenSequence st = tokenize(strip_enumerator(sentence));
        bool drop = false;
        if (!st.empty()) {
          const double r = rouge1(target, st).recall;
          drop = r > threshold;
          for (const auto& o : others) {
            if (!drop) break;
            if (rouge1(o, st).recall >= r) drop = false;
          }
        }
        if (drop) deleted_here = true;
        else kept.push_back(sentence);
      }
      if (deleted_here) {
        deleted_any = true;
        kept_line.clear();
        for (auto s : kept) {
          if (!kept_line.empty()) kept_line += ' ';
          kept_line += detail::trim(s);
        }
        if (kept_line.empty()) continue;  // whole line removed
      }
    }
    if (!first) out += '\n';
    out += kept_line;
    first = false;
  }
  if (!deleted_any)
    throw Error(ErrorCode::NothingToMask, "no sentence aligns with " + std::string(section_name(kind)));
  return out;
}

// --- row evaluation -------------------------------------------------------------------

std::vector<Message> build_eval_messages(const TestCase& tc, std::string_view input, const std::vector<TestCase>& pool,
                                         const EvalContext& ctx) {
  if (ctx.shots <= 0) return {{"user", build_alpaca_prompt(input)}};
  std::vector<Shot> shots;
  for (std::size_t idx : seeded_permutation(pool.size(), ctx.seed)) {
    if (static_cast<int>(shots.size()) == ctx.shots) break;
    if (pool[idx].bug_id == tc.bug_id) continue;
    shots.push_back({pool[idx].input, pool[idx].gold});
  }
  return build_fewshot_messages(shots, input);
}

namespace {

bool is_provider_failure(ErrorCode code) {
  return code == ErrorCode::ProviderUnavailable || code == ErrorCode::TimedOut || code == ErrorCode::AuthFailed;
}

std::optional<StructuredReport> run_generation(const TestCase& tc, std::string_view input,
                                               const std::vector<TestCase>& pool, ChatBackend& backend,
                                               const EvalContext& ctx) {
  return generate(backend, build_eval_messages(tc, input, pool, ctx)).report;
}

}  // namespace

EvalRow evaluate_row(const TestCase& tc, const std::vector<TestCase>& pool, ChatBackend& backend,
                     const EvalContext& ctx) {
  static const CtqrsEngine kBuiltinEngine;
  const CtqrsEngine& engine = ctx.engine ? *ctx.engine : kBuiltinEngine;

  EvalRow row;
  row.bug_id = tc.bug_id;
  const auto generated = run_generation(tc, tc.input, pool, backend, ctx);
  row.parse_failed = !generated.has_value();

  if (generated) {
    row.ctqrs_percent = score_percent(engine.score(*generated));
    row.metric = compute_metrics(render_report(*generated), render_report(tc.gold), ctx.embeddings);
  } else if (ctx.embeddings) {
    row.metric.embedding_similarity = 0.0;
  }

  if (ctx.suite == Suite::mapping) {
    for (auto kind : kBodySections) {
      if (tc.gold.section_empty(kind)) continue;
      if (!generated) {
        row.per_section[kind] = {};
        continue;
      }
      if (generated->section_empty(kind)) continue;
      const TokenSequence cand = tokenize(generated->section_text(kind));
      const TokenSequence ref = tokenize(tc.gold.section_text(kind));
      row.per_section[kind] = {rouge1(cand, ref).f1, meteor(cand, ref)};
    }
  }

  if (ctx.suite == Suite::missing) {
    for (auto kind : kMaskableSections) {
      std::string masked;
      try {
        masked = mask_section(tc.input, tc.gold, kind, ctx.mask_threshold);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NothingToMask) throw;
        continue;
      }
      SectionDetection d;
      d.flagged_original = generated && generated->missing_fields.count(kind) > 0;
      const auto masked_gen = run_generation(tc, masked, pool, backend, ctx);
      d.flagged_masked = masked_gen && masked_gen->missing_fields.count(kind) > 0;
      row.detection[kind] = d;
    }
  }
  return row;
}

namespace {

RowBatch collect(const std::vector<TestCase>& cases, std::vector<std::optional<EvalRow>>& rows,
                 std::vector<std::optional<Error>>& errors) {
  RowBatch batch;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    if (rows[i]) batch.rows.push_back(std::move(*rows[i]));
    else if (errors[i] && !batch.failure) batch.failure = errors[i];
  }
  std::stable_sort(batch.rows.begin(), batch.rows.end(),
                   [](const EvalRow& a, const EvalRow& b) { return a.bug_id < b.bug_id; });
  return batch;
}

}  // namespace

RowBatch evaluate_rows_serial(const std::vector<TestCase>& cases, ChatBackend& backend, const EvalContext& ctx) {
  std::vector<std::optional<EvalRow>> rows(cases.size());
  std::vector<std::optional<Error>> errors(cases.size());
  for (std::size_t i = 0; i < cases.size(); ++i) {
    try {
      rows[i] = evaluate_row(cases[i], cases, backend, ctx);
    } catch (const Error& e) {
      errors[i] = e;
      break;
    }
  }
  return collect(cases, rows, errors);
}

RowBatch evaluate_rows(const std::vector<TestCase>& cases, ChatBackend& backend, const EvalContext& ctx) {
  const std::size_t n = cases.size();
  std::vector<std::optional<EvalRow>> rows(n);
  std::vector<std::optional<Error>> errors(n);
  std::atomic<bool> abort{false};
  const int threads = std::max(1, backend.max_concurrency());

#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
  for (std::size_t i = 0; i < n; ++i) {
    if (abort.load()) continue;
    try {
      rows[i] = evaluate_row(cases[i], cases, backend, ctx);
    } catch (const Error& e) {
      errors[i] = e;
      if (is_provider_failure(e.code())) abort = true;
    } catch (const std::exception& e) {
      errors[i] = Error(ErrorCode::IoFailure, e.what());
      abort = true;
    }
  }
  return collect(cases, rows, errors);
}

// --- aggregation -----------------------------------------------------------------------

AggregateReport aggregate_rows(const std::vector<EvalRow>& rows, const EvalContext& ctx, std::string backend_name) {
  AggregateReport agg;
  agg.suite = std::string(suite_name(ctx.suite));
  agg.backend = std::move(backend_name);
  agg.shots = ctx.shots;
  agg.seed = ctx.seed;
  agg.n = rows.size();

  double ctqrs = 0, rouge = 0, met = 0, emb = 0;
  std::size_t n_emb = 0;
  std::map<SectionKind, std::pair<double, double>> section_sums;
  for (const auto& r : rows) {
    if (r.parse_failed) ++agg.parse_failed;
    ctqrs += r.ctqrs_percent;
    rouge += r.metric.rouge.f1;
    met += r.metric.meteor;
    if (r.metric.embedding_similarity) {
      emb += *r.metric.embedding_similarity;
      ++n_emb;
    }
    for (const auto& [kind, d] : r.detection) {
      auto& c = agg.detection[kind];
      if (d.flagged_masked) ++c.tp;
      else ++c.fn;
      if (d.flagged_original) ++c.fp;
      else ++c.tn;
    }
    for (const auto& [kind, s] : r.per_section) {
      section_sums[kind].first += s.rouge1_f;
      section_sums[kind].second += s.meteor;
      ++agg.mapping[kind].n;
    }
  }
  if (!rows.empty()) {
    const double n = static_cast<double>(rows.size());
    agg.ctqrs_percent_mean = ctqrs / n;
    agg.rouge1_f_mean = rouge / n;
    agg.meteor_mean = met / n;
  }
  if (n_emb > 0) agg.embedding_similarity_mean = emb / static_cast<double>(n_emb);

  if (ctx.suite == Suite::missing) {
    for (auto kind : kMaskableSections) agg.detection[kind];
  }
  if (ctx.suite == Suite::mapping) {
    for (auto kind : kBodySections) {
      auto& m = agg.mapping[kind];
      m.excluded = rows.size() - m.n;
      if (m.n > 0) {
        m.rouge1_f = section_sums[kind].first / static_cast<double>(m.n);
        m.meteor = section_sums[kind].second / static_cast<double>(m.n);
      }
    }
  }
  return agg;
}

namespace {

AggregateReport run_suite(const std::vector<TestCase>& cases, ChatBackend& backend, EvalContext ctx, Suite suite) {
  ctx.suite = suite;
  RowBatch batch = evaluate_rows(cases, backend, ctx);
  if (batch.failure) throw *batch.failure;
  return aggregate_rows(batch.rows, ctx, backend.name());
}

}  // namespace

AggregateReport evaluate_generation(const std::vector<TestCase>& cases, ChatBackend& backend, EvalContext ctx) {
  return run_suite(cases, backend, ctx, Suite::generation);
}

AggregateReport missing_detection_eval(const std::vector<TestCase>& cases, ChatBackend& backend, EvalContext ctx) {
  return run_suite(cases, backend, ctx, Suite::missing);
}

AggregateReport mapping_eval(const std::vector<TestCase>& cases, ChatBackend& backend, EvalContext ctx) {
  return run_suite(cases, backend, ctx, Suite::mapping);
}

// --- serialization -------------------------------------------------------------------------

std::string aggregate_to_json(const AggregateReport& r) {
  ordered_json j;
  j["suite"] = r.suite;
  j["backend"] = r.backend;
  j["shots"] = r.shots;
  j["seed"] = r.seed;
  j["rule_table"] = r.rule_table;
  j["n"] = r.n;
  j["parse_failed"] = r.parse_failed;
  j["partial"] = r.partial;
  j["ctqrs_percent_mean"] = r.ctqrs_percent_mean;
  j["rouge1_f_mean"] = r.rouge1_f_mean;
  j["meteor_mean"] = r.meteor_mean;
  j["embedding_similarity_mean"] =
      r.embedding_similarity_mean ? ordered_json(*r.embedding_similarity_mean) : ordered_json(nullptr);
  ordered_json detection = ordered_json::object();
  for (const auto& [kind, c] : r.detection) {
    detection[std::string(section_name(kind))] = {{"tp", c.tp}, {"fp", c.fp},     {"fn", c.fn},
                                                  {"tn", c.tn}, {"accuracy", c.accuracy()}, {"f1", c.f1()}};
  }
  j["detection"] = std::move(detection);
  ordered_json mapping = ordered_json::object();
  for (const auto& [kind, m] : r.mapping) {
    mapping[std::string(section_name(kind))] = {
        {"rouge1_f", m.rouge1_f}, {"meteor", m.meteor}, {"n", m.n}, {"excluded", m.excluded}};
  }
  j["mapping"] = std::move(mapping);
  return j.dump(2);
}

AggregateReport aggregate_from_json(std::string_view text) {
  try {
    json j = json::parse(text);
    AggregateReport r;
    r.suite = j.at("suite").get<std::string>();
    r.backend = j.at("backend").get<std::string>();
    r.shots = j.at("shots").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.rule_table = j.at("rule_table").get<std::string>();
    r.n = j.at("n").get<std::size_t>();
    r.parse_failed = j.at("parse_failed").get<std::size_t>();
    r.partial = j.value("partial", false);
    r.ctqrs_percent_mean = j.at("ctqrs_percent_mean").get<double>();
    r.rouge1_f_mean = j.at("rouge1_f_mean").get<double>();
    r.meteor_mean = j.at("meteor_mean").get<double>();
    if (!j.at("embedding_similarity_mean").is_null())
      r.embedding_similarity_mean = j["embedding_similarity_mean"].get<double>();
    for (auto& [name, c] : j.at("detection").items()) {
      auto kind = section_from_name(name);
      if (!kind) throw Error(ErrorCode::MalformedDocument, "unknown section " + name);
      r.detection[*kind] = {c.at("tp").get<std::size_t>(), c.at("fp").get<std::size_t>(),
                            c.at("fn").get<std::size_t>(), c.at("tn").get<std::size_t>()};
    }
    for (auto& [name, m] : j.at("mapping").items()) {
      auto kind = section_from_name(name);
      if (!kind) throw Error(ErrorCode::MalformedDocument, "unknown section " + name);
      r.mapping[*kind] = {m.at("rouge1_f").get<double>(), m.at("meteor").get<double>(),
                          m.at("n").get<std::size_t>(), m.at("excluded").get<std::size_t>()};
    }
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedDocument, std::string("aggregate: ") + e.what());
  }
}

namespace {

std::string fmt(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string build_rows_header() {
  std::string h = "bug_id,parse_failed,ctqrs_percent,rouge1_p,rouge1_r,rouge1_f,meteor,cosine_tf,embedding_similarity";
  for (auto kind : kBodySections) {
    const std::string name(section_name(kind));
    h += "," + name + "_rouge1_f," + name + "_meteor";
  }
  for (auto kind : kMaskableSections) {
    const std::string name(section_name(kind));
    h += "," + name + "_flagged_original," + name + "_flagged_masked";
  }
  return h;
}

}  // namespace

std::string_view rows_csv_header() {
  static const std::string kHeader = build_rows_header();
  return kHeader;
}

std::string_view confusion_csv_header() { return "section,tp,fp,fn,tn,accuracy,f1"; }

std::string rows_to_csv(const std::vector<EvalRow>& rows) {
  std::string out(rows_csv_header());
  out += '\n';
  for (const auto& r : rows) {
    out += std::to_string(r.bug_id);
    out += r.parse_failed ? ",1," : ",0,";
    out += fmt(r.ctqrs_percent) + ',' + fmt(r.metric.rouge.precision) + ',' + fmt(r.metric.rouge.recall) + ',' +
           fmt(r.metric.rouge.f1) + ',' + fmt(r.metric.meteor) + ',' + fmt(r.metric.cosine_tf) + ',';
    if (r.metric.embedding_similarity) out += fmt(*r.metric.embedding_similarity);
    for (auto kind : kBodySections) {
      auto it = r.per_section.find(kind);
      if (it == r.per_section.end()) out += ",,";
      else out += ',' + fmt(it->second.rouge1_f) + ',' + fmt(it->second.meteor);
    }
    for (auto kind : kMaskableSections) {
      auto it = r.detection.find(kind);
      if (it == r.detection.end()) out += ",,";
      else out += std::string(it->second.flagged_original ? ",1" : ",0") + (it->second.flagged_masked ? ",1" : ",0");
    }
    out += '\n';
  }
  return out;
}

std::string confusion_to_csv(const AggregateReport& report) {
  std::string out(confusion_csv_header());
  out += '\n';
  for (const auto& [kind, c] : report.detection) {
    out += std::string(section_name(kind)) + ',' + std::to_string(c.tp) + ',' + std::to_string(c.fp) + ',' +
           std::to_string(c.fn) + ',' + std::to_string(c.tn) + ',' + fmt(c.accuracy()) + ',' + fmt(c.f1()) + '\n';
  }
  return out;
}

namespace {

void write_text(const fs::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out << content;
  if (!out) throw Error(ErrorCode::IoFailure, "write failed: " + path.string());
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

void emit_report(const AggregateReport& report, const std::vector<EvalRow>& rows, const fs::path& output_dir) {
  std::error_code ec;
  fs::create_directories(output_dir, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + output_dir.string() + ": " + ec.message());
  write_text(output_dir / "aggregate.json", aggregate_to_json(report) + "\n");
  write_text(output_dir / "rows.csv", rows_to_csv(rows));
  write_text(output_dir / "confusion.csv", confusion_to_csv(report));
}

// --- run -------------------------------------------------------------------------------------

std::unique_ptr<ChatBackend> make_backend(const BackendConfig& config) {
  if (config.base_url.rfind("mock:", 0) == 0) return mock_backend(config.base_url);
  return std::make_unique<OpenAiBackend>(config);
}

std::unique_ptr<EmbeddingProvider> make_embedding_provider(const BackendConfig& config) {
  if (config.base_url.rfind("mock:", 0) == 0) return std::make_unique<HashedBagProvider>();
  return std::make_unique<FallbackProvider>(std::make_shared<OpenAiBackend>(config),
                                            std::make_shared<HashedBagProvider>());
}

AggregateReport run_eval(const EvalRunConfig& cfg) {
  cfg.validate();
  const std::string started = utc_now();
  const auto cases = read_testset(cfg.testset_path);
  auto backend = make_backend(cfg.backend);
  auto embeddings = make_embedding_provider(cfg.backend);

  EvalContext ctx;
  ctx.suite = cfg.suite;
  ctx.shots = cfg.shots;
  ctx.seed = cfg.seed;
  ctx.mask_threshold = cfg.mask_threshold;
  ctx.embeddings = embeddings.get();

  RowBatch batch = evaluate_rows(cases, *backend, ctx);
  AggregateReport agg = aggregate_rows(batch.rows, ctx, backend->name());
  agg.partial = batch.failure.has_value();
  emit_report(agg, batch.rows, cfg.output_dir);

  ordered_json run;
  run["started_at"] = started;
  run["finished_at"] = utc_now();
  run["testset"] = cfg.testset_path.string();
  run["testset_size"] = cases.size();
  run["rows_completed"] = batch.rows.size();
  run["model_id"] = cfg.backend.model_id;
  run["embedding_provider"] = embeddings->name();
  run["meteor_stages"] = "exact, porter_stem (no synonym stage)";
  if (batch.failure) run["error"] = batch.failure->what();
  write_text(cfg.output_dir / "run.json", run.dump(2) + "\n");

  if (batch.failure) throw *batch.failure;
  return agg;
}

}  // namespace reportsmith

#include "reportsmith/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "reportsmith/config.hpp"
#include "reportsmith/dataset.hpp"
#include "reportsmith/harness.hpp"
#include "reportsmith/service.hpp"

namespace reportsmith {

using nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

std::string read_input(const std::string& path) {
  if (path == "-") {
    std::stringstream ss;
    ss << std::cin.rdbuf();
    return ss.str();
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::ProviderUnavailable:
    case ErrorCode::AuthFailed:
    case ErrorCode::TimedOut:
    case ErrorCode::PartialFetch: return kExitProviderFailure;
    default: return kExitUserError;
  }
}

std::string counts_json(const FilterCounts& c) {
  ordered_json j;
  j["fetched"] = c.fetched;
  j["accepted"] = c.accepted;
  j["rejected"] = c.rejected;
  j["rejected_total"] = c.rejected_total();
  return j.dump();
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bug report quality toolkit: scoring, structuring, corpus building and evaluation."};
  app.name(args.empty() ? "reportsmith" : fs::path(args[0]).filename().string());
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "TOML config file (default: $REPORTSMITH_CONFIG)");

  // score
  auto* score_cmd = app.add_subcommand("score", "Print the CTQRS breakdown of a report file ('-' for stdin)");
  std::string score_file;
  std::string lexicon_dir;
  score_cmd->add_option("file", score_file)->required();
  score_cmd->add_option("--lexicons", lexicon_dir, "Directory with lexicon files");

  // structure
  auto* structure_cmd = app.add_subcommand("structure", "Restructure a free-form report with a model backend");
  std::string structure_file, backend_name, shots_from;
  int shots = 0;
  structure_cmd->add_option("file", structure_file)->required();
  structure_cmd->add_option("--backend", backend_name, "Configured backend name or mock:<behaviour>");
  structure_cmd->add_option("--shots", shots, "Few-shot exemplars")->check(CLI::NonNegativeNumber);
  structure_cmd->add_option("--shots-from", shots_from, "Testset JSONL to draw exemplars from");

  // ingest
  auto* ingest_cmd = app.add_subcommand("ingest", "Fetch fixed bugs from a Bugzilla REST endpoint");
  FetchOptions fetch;
  std::string ingest_corpus = "corpus";
  ingest_cmd->add_option("--base-url", fetch.base_url)->required();
  ingest_cmd->add_option("--since", fetch.since, "last_change_time lower bound");
  ingest_cmd->add_option("--limit", fetch.limit)->required();
  ingest_cmd->add_option("--page-size", fetch.page_size);
  ingest_cmd->add_option("--parallelism", fetch.parallelism)->check(CLI::PositiveNumber);
  ingest_cmd->add_option("--min-interval", fetch.min_request_interval_seconds, "Seconds between requests");
  ingest_cmd->add_option("--corpus", ingest_corpus, "Corpus directory");

  // filter
  auto* filter_cmd = app.add_subcommand("filter", "Apply the section, artifact and quality filters");
  std::string filter_corpus;
  filter_cmd->add_option("corpus", filter_corpus)->required();
  filter_cmd->add_option("--lexicons", lexicon_dir, "Directory with lexicon files");

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "Generate retained unstructured inputs");
  std::string synth_corpus;
  synth_cmd->add_option("corpus", synth_corpus)->required();
  synth_cmd->add_option("--backend", backend_name);

  // split
  auto* split_cmd = app.add_subcommand("split", "Seeded train/test/validation split");
  std::string split_corpus;
  std::optional<std::uint64_t> split_seed;
  split_cmd->add_option("corpus", split_corpus)->required();
  split_cmd->add_option("--seed", split_seed);

  // export
  auto* export_cmd = app.add_subcommand("export", "Write an Alpaca-format JSONL for one split");
  std::string export_split, export_out;
  export_cmd->add_option("split", export_split, "Split JSONL file")->required();
  export_cmd->add_option("--out", export_out, "Output JSONL (default: <split>.alpaca.jsonl)");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Run an evaluation suite");
  std::string suite = "generation", testset, eval_out = "eval_out";
  std::uint64_t eval_seed = 42;
  double mask_threshold = 0.5;
  eval_cmd->add_option("--suite", suite)->check(CLI::IsMember({"generation", "missing", "mapping"}));
  eval_cmd->add_option("--backend", backend_name);
  eval_cmd->add_option("--shots", shots)->check(CLI::NonNegativeNumber);
  eval_cmd->add_option("--testset", testset)->required();
  eval_cmd->add_option("--seed", eval_seed);
  eval_cmd->add_option("--out", eval_out, "Output directory");
  eval_cmd->add_option("--mask-threshold", mask_threshold);

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "Serve the HTTP JSON API");
  std::optional<int> serve_port;
  std::string serve_bind;
  serve_cmd->add_option("--port", serve_port)->check(CLI::Range(0, 65535));
  serve_cmd->add_option("--bind", serve_bind);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n\n" << app.help();
    return kExitUserError;
  }

  try {
    AppConfig config = AppConfig::defaults();
    if (config_path.empty()) {
      if (const char* env = std::getenv("REPORTSMITH_CONFIG")) config_path = env;
    }
    if (!config_path.empty()) config = load_config(config_path);
    if (!lexicon_dir.empty()) config.lexicon_dir = lexicon_dir;

    if (*score_cmd) {
      out << score_text_json(config.engine(), read_input(score_file)) << '\n';
    } else if (*structure_cmd) {
      const BackendConfig b = config.backend(backend_name);
      std::vector<TestCase> pool;
      if (!shots_from.empty()) pool = read_testset(shots_from);
      else if (config.service.shots_path) pool = read_testset(*config.service.shots_path);
      if (static_cast<std::size_t>(shots) > pool.size())
        throw Error(ErrorCode::InvalidConfig, "--shots needs at least that many exemplars (--shots-from)");
      auto backend = make_backend(b);
      out << structure_text_json(*backend, b.name, read_input(structure_file), shots, pool) << '\n';
    } else if (*ingest_cmd) {
      CorpusLayout corpus{ingest_corpus};
      fetch.cursor_path = corpus.cursor();
      const bool resume = fs::exists(corpus.cursor()) && load_cursor(corpus.cursor()).last_change_time == fetch.since;
      try {
        auto bugs = fetch_fixed_bugs(fetch);
        write_bugs(corpus.raw(), bugs, resume);
        out << ordered_json{{"fetched", bugs.size()}, {"raw", corpus.raw().string()}}.dump() << '\n';
      } catch (const PartialFetchError& e) {
        write_bugs(corpus.raw(), e.fetched(), resume);
        err << "partial fetch: kept " << e.fetched().size() << " bugs, cursor offset " << e.cursor().offset
            << "; rerun the same command to resume (" << e.what() << ")\n";
        return kExitProviderFailure;
      }
    } else if (*filter_cmd) {
      out << counts_json(run_filter_stage(CorpusLayout{filter_corpus}, config.engine())) << '\n';
    } else if (*synth_cmd) {
      const BackendConfig b = config.backend(backend_name);
      auto backend = make_backend(b);
      auto embeddings = make_embedding_provider(b);
      auto c = run_synthesis_stage(CorpusLayout{synth_corpus}, *backend, *embeddings, config.synthesis);
      out << ordered_json{{"input", c.input}, {"retained", c.retained}, {"failed", c.failed}}.dump() << '\n';
    } else if (*split_cmd) {
      SplitRatios ratios = config.split;
      if (split_seed) ratios.seed = *split_seed;
      auto s = run_split_stage(CorpusLayout{split_corpus}, ratios, config.synthesis);
      out << ordered_json{{"train", s.train}, {"test", s.test}, {"validation", s.validation}}.dump() << '\n';
    } else if (*export_cmd) {
      fs::path in(export_split);
      fs::path dest = export_out.empty() ? in.parent_path() / (in.stem().string() + ".alpaca.jsonl") : fs::path(export_out);
      auto examples = read_examples(in);
      export_instruction_jsonl(examples, dest, config.synthesis, config.split);
      out << ordered_json{{"examples", examples.size()}, {"out", dest.string()}}.dump() << '\n';
    } else if (*eval_cmd) {
      EvalRunConfig cfg;
      cfg.backend = config.backend(backend_name);
      cfg.shots = shots;
      cfg.suite = *suite_from_name(suite);
      cfg.testset_path = testset;
      cfg.seed = eval_seed;
      cfg.output_dir = eval_out;
      cfg.mask_threshold = mask_threshold;
      out << aggregate_to_json(run_eval(cfg)) << '\n';
    } else if (*serve_cmd) {
      if (!serve_bind.empty()) config.service.bind_address = serve_bind;
      Service service(config);
      const int port = service.start(serve_port.value_or(config.service.port));
      err << "listening on http://" << config.service.bind_address << ':' << port << '\n';
      service.wait();
    }
    return kExitOk;
  } catch (const Error& e) {
    err << "error: " << error_code_name(e.code()) << ": " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUserError;
  }
}

}  // namespace reportsmith

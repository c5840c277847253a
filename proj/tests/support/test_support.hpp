#pragma once

// Shared helpers for the test binaries: fixture paths, temp dirs, independent
// oracles, random generators and in-process fake HTTP servers.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "reportsmith/dataset.hpp"
#include "reportsmith/error.hpp"
#include "reportsmith/gateway.hpp"
#include "reportsmith/metrics.hpp"
#include "reportsmith/report.hpp"

namespace rstest {

namespace fs = std::filesystem;

fs::path source_path(const std::string& rel);
std::string read_text(const fs::path& path);
std::string fixture(const std::string& rel);  // contents of fixtures/<rel>
void write_text(const fs::path& path, const std::string& content);

class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  fs::path path_;
};

// --- oracles ------------------------------------------------------------------

struct OracleRouge {
  double p = 0;
  double r = 0;
  double f = 0;
};

/// Brute force: each candidate token consumes at most one equal, unused
/// reference token.
OracleRouge oracle_rouge1(const std::vector<std::string>& candidate, const std::vector<std::string>& reference);

/// Cosine over raw term counts, accumulated in long double.
long double oracle_cosine_tf(const std::vector<std::string>& a, const std::vector<std::string>& b);

// --- scripted providers ------------------------------------------------------

// Keyed embeddings so the gates can be driven to exact similarities.
class ScriptedEmbedding : public reportsmith::EmbeddingProvider {
 public:
  explicit ScriptedEmbedding(std::map<std::string, std::vector<double>> table) : table_(std::move(table)) {}
  std::vector<double> embed(std::string_view text) const override {
    auto it = table_.find(std::string(text));
    if (it == table_.end()) throw reportsmith::Error(reportsmith::ErrorCode::ProviderUnavailable, "unscripted text");
    return it->second;
  }
  std::string name() const override { return "scripted"; }

 private:
  std::map<std::string, std::vector<double>> table_;
};

class SequenceBackend : public reportsmith::ChatBackend {
 public:
  explicit SequenceBackend(std::vector<std::string> replies) : replies_(std::move(replies)) {}
  std::string complete(const std::vector<reportsmith::Message>& messages) override {
    prompts.push_back(messages.back().content);
    return replies_.at(std::min(prompts.size() - 1, replies_.size() - 1));
  }
  std::string name() const override { return "sequence"; }
  std::vector<std::string> prompts;

 private:
  std::vector<std::string> replies_;
};

// Split sizes by integer arithmetic: floor(8N/10) to train, ceil-half of the
// rest to test.
inline reportsmith::SplitSizes oracle_split_sizes(std::size_t n) {
  reportsmith::SplitSizes s;
  s.train = 8 * n / 10;
  const std::size_t rest = n - s.train;
  s.test = (rest + 1) / 2;
  s.validation = rest - s.test;
  return s;
}

// --- generators ---------------------------------------------------------------

std::vector<std::string> random_tokens(std::mt19937_64& rng, std::size_t n, std::size_t vocab);
reportsmith::StructuredReport random_report(std::mt19937_64& rng);
/// Arbitrary text: headers, bullets, punctuation runs, UTF-8, stack frames.
std::string random_body(std::mt19937_64& rng);

// --- fake servers -------------------------------------------------------------

class FakeServer {
 public:
  FakeServer();
  virtual ~FakeServer();
  void start();
  void stop();
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  int port() const { return port_; }

 protected:
  httplib::Server server_;

 private:
  std::thread thread_;
  int port_ = 0;
};

/// Minimal Bugzilla REST endpoint.
class FakeBugzilla : public FakeServer {
 public:
  explicit FakeBugzilla(std::vector<reportsmith::BugzillaBug> bugs);

  std::set<std::int64_t> failing_comments;   // ids answering 500
  std::atomic<int> comment_delay_ms{0};
  std::atomic<int> page_requests{0};
  std::atomic<int> comment_requests{0};
  std::atomic<int> max_inflight{0};

  std::vector<std::string> last_statuses() const;
  std::string last_resolution() const;
  std::vector<std::int64_t> page_offsets() const;

 private:
  std::vector<reportsmith::BugzillaBug> bugs_;
  std::atomic<int> inflight_{0};
  mutable std::mutex mu_;
  std::vector<std::string> statuses_;
  std::string resolution_;
  std::vector<std::int64_t> offsets_;
};

/// Minimal OpenAI-compatible endpoint. The chat handler receives the request
/// JSON and returns (status, assistant content or raw body).
class FakeOpenAi : public FakeServer {
 public:
  struct Reply {
    int status = 200;
    std::string content;
    int delay_ms = 0;
  };
  using ChatHandler = std::function<Reply(const nlohmann::json& request, int call_index)>;
  using EmbedHandler = std::function<std::vector<double>(const std::string& input)>;

  FakeOpenAi(ChatHandler chat, EmbedHandler embed = {});

  std::atomic<int> chat_calls{0};
  std::atomic<int> embed_calls{0};
  std::atomic<int> max_inflight{0};
  std::string last_authorization() const;

 private:
  ChatHandler chat_;
  EmbedHandler embed_;
  std::atomic<int> inflight_{0};
  mutable std::mutex mu_;
  std::string authorization_;
};

reportsmith::BugzillaBug make_bug(std::int64_t id, const std::string& description,
                                  const std::string& status = "RESOLVED");

}  // namespace rstest

#pragma once

// Chat/embedding backends (OpenAI-compatible wire format), prompt builders,
// generation parsing and the in-process mock backend.

#include <atomic>
#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <vector>

#include "reportsmith/metrics.hpp"
#include "reportsmith/report.hpp"

namespace reportsmith {

struct BackendConfig {
  std::string name = "default";
  std::string base_url;
  std::string model_id;
  std::string api_key_ref;  // env var holding the bearer token
  int max_concurrency = 4;
  double timeout_seconds = 60.0;
  double temperature = 0.0;
  int max_retries = 3;
  double backoff_base_seconds = 1.0;  // retry k waits base * 2^k

  /// Throws Error(InvalidConfig).
  void validate() const;
  /// api_key_ref, or REPORTSMITH_API_KEY_<NAME> when unset.
  std::string api_key_env() const;
};

struct Message {
  std::string role;
  std::string content;

  bool operator==(const Message&) const = default;
};

struct Shot {
  std::string unstructured;
  StructuredReport structured;
};

struct PromptBundle {
  std::string system;
  std::string user;
  std::vector<Shot> shots;
};

struct GenerationResult {
  std::string raw_text;
  std::optional<StructuredReport> report;
  std::optional<std::string> parse_error;
  double latency_seconds = 0;
};

/// Fine-tuning hyperparameters exported as dataset metadata only.
struct TrainingRecipe {
  int lora_rank = 16;
  std::vector<std::string> target_modules = {"q_proj", "k_proj", "o_proj", "v_proj",
                                             "down_proj", "gate_proj", "up_proj"};
  int epochs = 3;
  std::map<std::string, double> learning_rate = {{"7B", 2e-4}, {"3B", 3e-3}};
  int batch_size = 8;
  int cross_validation_folds = 4;
};

std::string training_recipe_json(const TrainingRecipe& recipe);

// --- prompts -------------------------------------------------------------

inline constexpr std::string_view kAlpacaSystem =
    "You are a senior software engineer specialized in generating detailed bug reports.";

/// The instruction block shared by the Alpaca prompt and the JSONL export.
std::string_view alpaca_instruction();

std::string build_alpaca_prompt(std::string_view unstructured);
std::string build_synthesis_prompt(std::string_view structured_text);

/// Chat-form user turn: instruction, JSON output directive and input.
std::string build_user_message(std::string_view unstructured);

std::vector<Message> build_fewshot_messages(const std::vector<Shot>& shots,
                                            std::string_view unstructured);

/// Recovers the reporter text from a user turn built by the prompt builders.
std::string extract_prompt_input(std::string_view user_message);

// --- generation parsing ---------------------------------------------------

/// True for empty text and phrases such as "not provided", "missing", "n/a".
bool is_missing_phrase(std::string_view text);

/// First balanced JSON object in `raw`, tolerating fences and prose.
/// Throws Error(MalformedGeneration).
StructuredReport parse_generation(std::string_view raw);

// --- backends ---------------------------------------------------------------

struct ChatTelemetry {
  std::atomic<long> calls{0};
  std::atomic<long> retries{0};
  std::atomic<int> last_retry_count{0};
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  /// First-choice message content.
  virtual std::string complete(const std::vector<Message>& messages) = 0;
  virtual std::string name() const = 0;
  virtual int max_concurrency() const { return 1; }
};

/// OpenAI-compatible client: POST {base_url}/v1/chat/completions and
/// {base_url}/v1/embeddings with bearer auth. At most max_concurrency requests
/// are in flight per instance. Retries only timeouts and 5xx responses.
class OpenAiBackend final : public ChatBackend, public EmbeddingProvider {
 public:
  explicit OpenAiBackend(BackendConfig config);

  std::string complete(const std::vector<Message>& messages) override;
  std::string name() const override { return config_.name; }
  int max_concurrency() const override { return config_.max_concurrency; }

  std::vector<double> embed(std::string_view text) const override;

  const BackendConfig& config() const { return config_; }
  const ChatTelemetry& telemetry() const { return telemetry_; }

 private:
  std::string post(const std::string& path, const std::string& body) const;

  BackendConfig config_;
  std::string scheme_host_port_;
  std::string path_prefix_;
  std::string api_key_;
  mutable std::counting_semaphore<4096> inflight_;
  mutable ChatTelemetry telemetry_;
};

std::string chat_complete(const BackendConfig& config, const std::vector<Message>& messages);
std::vector<double> embed(const BackendConfig& config, std::string_view text);

enum class MockBehavior { perfect_extractor, flag_missing, hallucinate, echo_synthesis };

/// Deterministic in-process backend. Scripted entries are keyed by the
/// reporter text recovered from the last user turn; unknown inputs fall back
/// to the configured behaviour.
class MockBackend final : public ChatBackend {
 public:
  using Responder = std::function<std::string(std::string_view input)>;

  explicit MockBackend(MockBehavior behavior) : behavior_(behavior) {}
  MockBackend(std::map<std::string, std::string, std::less<>> table, MockBehavior fallback)
      : behavior_(fallback), table_(std::move(table)) {}
  explicit MockBackend(Responder responder, std::string name = "mock:custom")
      : responder_(std::move(responder)), name_(std::move(name)) {}

  std::string complete(const std::vector<Message>& messages) override;
  std::string name() const override;
  int max_concurrency() const override { return 8; }

  long calls() const { return calls_.load(); }

  static std::string respond(MockBehavior behavior, std::string_view input);

 private:
  MockBehavior behavior_ = MockBehavior::perfect_extractor;
  std::map<std::string, std::string, std::less<>> table_;
  Responder responder_;
  std::string name_;
  std::atomic<long> calls_{0};
};

inline constexpr std::string_view kHallucinatedStep = "Open the application";
inline constexpr std::string_view kHallucinatedExpected = "The application should work as intended.";
inline constexpr std::string_view kHallucinatedActual = "The application behaves incorrectly.";
inline constexpr std::string_view kHallucinatedInfo = "Latest version on a desktop computer.";
inline constexpr std::string_view kNotProvided = "Not provided in the original report.";

/// "perfect", "flag_missing", "hallucinate", "echo", or "script=<file.json>"
/// where the file maps reporter text to canned raw output. An optional
/// "mock:" prefix is accepted.
std::unique_ptr<ChatBackend> mock_backend(std::string_view script);

/// Sends messages, times the call and parses the result.
GenerationResult generate(ChatBackend& backend, const std::vector<Message>& messages);

}  // namespace reportsmith

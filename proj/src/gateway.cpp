#include "reportsmith/gateway.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "reportsmith/error.hpp"

namespace reportsmith {

using nlohmann::json;

void BackendConfig::validate() const {
  if (max_concurrency < 1) throw Error(ErrorCode::InvalidConfig, name + ": max_concurrency must be >= 1");
  if (!(timeout_seconds > 0)) throw Error(ErrorCode::InvalidConfig, name + ": timeout must be > 0");
  if (temperature < 0) throw Error(ErrorCode::InvalidConfig, name + ": temperature must be >= 0");
  if (max_retries < 0) throw Error(ErrorCode::InvalidConfig, name + ": max_retries must be >= 0");
}

std::string BackendConfig::api_key_env() const {
  if (!api_key_ref.empty()) return api_key_ref;
  std::string env = "REPORTSMITH_API_KEY_";
  for (char c : name) env += std::isalnum(static_cast<unsigned char>(c))
                                 ? static_cast<char>(std::toupper(static_cast<unsigned char>(c)))
                                 : '_';
  return env;
}

std::string training_recipe_json(const TrainingRecipe& recipe) {
  nlohmann::ordered_json j;
  j["lora_rank"] = recipe.lora_rank;
  j["target_modules"] = recipe.target_modules;
  j["epochs"] = recipe.epochs;
  j["learning_rate"] = recipe.learning_rate;
  j["batch_size"] = recipe.batch_size;
  j["cross_validation_folds"] = recipe.cross_validation_folds;
  return j.dump();
}

// --- prompts -------------------------------------------------------------

std::string_view alpaca_instruction() {
  return "Please create a bug report that includes the following sections:\n"
         "1. Steps to Reproduce (S2R): Detailed steps to replicate the issue.\n"
         "2. Expected Result (ER): What you expected to happen.\n"
         "3. Actual Result (AR): What actually happened.\n"
         "4. Additional Information: Include relevant details such as software version, "
         "build number, environment, etc.\n"
         "\n"
         "If any of these sections are missing from the provided report, explicitly notify the "
         "user which information is missing.";
}

namespace {

constexpr std::string_view kInputMarker = "### Input:\n";
constexpr std::string_view kResponseMarker = "\n\n### Response:";
constexpr std::string_view kSynthesisMarker = "\n\nBug report: ";

constexpr std::string_view kSynthesisTemplate =
    "Please rewrite the following bug report in a natural, conversational tone, \n"
    "as if you're explaining it to someone casually. Keep the essence of the report \n"
    "intact, but restructure it in a way that sounds like something an average \n"
    "person would write, while still using the original wording from the report as \n"
    "much as possible. Focus on maintaining the original details and key points \n"
    "without changing much. Provide only the one rewritten paragraph with everything, \n"
    "no additional explanation. \n"
    "\n"
    "Bug report: ";

constexpr std::string_view kJsonDirective =
    "Respond with a single JSON object with the keys \"title\", \"steps_to_reproduce\" (array of "
    "strings), \"expected_result\", \"actual_result\", \"additional_information\" and "
    "\"missing_fields\" (names of the sections that are missing).";

}  // namespace

std::string build_alpaca_prompt(std::string_view unstructured) {
  std::string out;
  out.reserve(unstructured.size() + 800);
  out += kAlpacaSystem;
  out += "\n### Instruction:\n";
  out += alpaca_instruction();
  out += "\n\n";
  out += kInputMarker;
  out += unstructured;
  out += kResponseMarker;
  out += "\n";
  return out;
}

std::string build_synthesis_prompt(std::string_view structured_text) {
  std::string out(kSynthesisTemplate);
  out += structured_text;
  return out;
}

std::string build_user_message(std::string_view unstructured) {
  std::string out = "### Instruction:\n";
  out += alpaca_instruction();
  out += "\n";
  out += kJsonDirective;
  out += "\n\n";
  out += kInputMarker;
  out += unstructured;
  out += kResponseMarker;
  out += "\n";
  return out;
}

std::vector<Message> build_fewshot_messages(const std::vector<Shot>& shots, std::string_view unstructured) {
  std::vector<Message> messages;
  messages.reserve(2 + 2 * shots.size());
  messages.push_back({"system", std::string(kAlpacaSystem)});
  for (const auto& shot : shots) {
    messages.push_back({"user", build_user_message(shot.unstructured)});
    messages.push_back({"assistant", report_to_json(shot.structured)});
  }
  messages.push_back({"user", build_user_message(unstructured)});
  return messages;
}

std::string extract_prompt_input(std::string_view user_message) {
  if (auto start = user_message.find(kInputMarker); start != std::string_view::npos) {
    start += kInputMarker.size();
    auto end = user_message.rfind(kResponseMarker);
    if (end == std::string_view::npos || end < start) end = user_message.size();
    return std::string(user_message.substr(start, end - start));
  }
  if (auto start = user_message.find(kSynthesisMarker); start != std::string_view::npos) {
    return std::string(user_message.substr(start + kSynthesisMarker.size()));
  }
  return std::string(user_message);
}

// --- generation parsing ---------------------------------------------------

bool is_missing_phrase(std::string_view text) {
  std::string t = detail::to_lower_ascii(detail::trim(text));
  if (t.empty()) return true;
  while (!t.empty() && (t.back() == '.' || t.back() == '!' || t.back() == ':')) t.pop_back();
  while (!t.empty() && (t.front() == '[' || t.front() == '(')) t.erase(t.begin());
  while (!t.empty() && (t.back() == ']' || t.back() == ')')) t.pop_back();
  t = detail::trim(t);
  if (t.empty()) return false;  // bare punctuation is content
  static const char* kExact[] = {"missing", "n/a", "na", "none", "unknown", "<missing>",
                                 "not provided", "not specified", "not mentioned", "not available",
                                 "information missing", "missing information"};
  for (const char* m : kExact)
    if (t == m) return true;
  static const char* kPrefix[] = {"not provided", "not specified", "not mentioned", "not available",
                                  "missing:", "missing -", "<missing>"};
  for (const char* p : kPrefix) {
    std::string_view pv(p);
    if (t.size() > pv.size() && t.compare(0, pv.size(), pv) == 0) {
      char next = t[pv.size()];
      if (!std::isalnum(static_cast<unsigned char>(next))) return true;
    }
  }
  return false;
}

namespace {

// Candidate start offsets of balanced {...} objects, string-aware.
std::optional<json> first_json_object(std::string_view raw) {
  for (std::size_t start = raw.find('{'); start != std::string_view::npos; start = raw.find('{', start + 1)) {
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = start; i < raw.size(); ++i) {
      char c = raw[i];
      if (in_string) {
        if (escaped) escaped = false;
        else if (c == '\\') escaped = true;
        else if (c == '"') in_string = false;
        continue;
      }
      if (c == '"') in_string = true;
      else if (c == '{') ++depth;
      else if (c == '}' && --depth == 0) {
        try {
          json j = json::parse(raw.substr(start, i - start + 1));
          if (j.is_object()) return j;
        } catch (const json::parse_error&) {
        }
        break;
      }
    }
  }
  return std::nullopt;
}

std::optional<SectionKind> section_from_label(const std::string& label) {
  std::string norm;
  for (char c : detail::to_lower_ascii(detail::trim(label)))
    norm += (c == ' ' || c == '-') ? '_' : c;
  if (auto k = section_from_name(norm)) return k;
  std::string spaced = detail::to_lower_ascii(detail::trim(label));
  for (const auto& [alias, kind] : HeaderAliases::builtin().entries)
    if (spaced == alias) return kind;
  return std::nullopt;
}

}  // namespace

StructuredReport parse_generation(std::string_view raw) {
  auto found = first_json_object(raw);
  if (!found) throw Error(ErrorCode::MalformedGeneration, "no JSON object in generation");
  json j = std::move(*found);

  // Coerce common model deviations into the schema before strict decoding.
  for (const char* key : {"title", "expected_result", "actual_result", "additional_information"}) {
    auto it = j.find(key);
    if (it == j.end()) continue;
    if (it->is_null()) *it = "";
    else if (it->is_array()) {
      std::string joined;
      for (const auto& e : *it) {
        if (!joined.empty()) joined += '\n';
        joined += e.is_string() ? e.get<std::string>() : e.dump();
      }
      *it = joined;
    } else if (!it->is_string()) *it = it->dump();
  }
  if (auto it = j.find("steps_to_reproduce"); it != j.end()) {
    if (it->is_string()) *it = split_step_lines(it->get<std::string>());
    else if (it->is_null()) *it = json::array();
    else if (it->is_array()) {
      json steps = json::array();
      for (const auto& e : *it) steps.push_back(e.is_string() ? e.get<std::string>() : e.dump());
      *it = steps;
    }
  }
  if (auto it = j.find("missing_fields"); it != j.end()) {
    json names = json::array();
    if (it->is_array()) {
      for (const auto& e : *it) {
        if (!e.is_string()) continue;
        if (auto kind = section_from_label(e.get<std::string>())) names.push_back(section_name(*kind));
      }
    }
    *it = names;
  }

  StructuredReport r;
  try {
    r = json_to_report(j.dump());
  } catch (const Error& e) {
    throw Error(ErrorCode::MalformedGeneration, e.what());
  }

  for (auto kind : {SectionKind::expected_result, SectionKind::actual_result,
                    SectionKind::additional_information}) {
    if (is_missing_phrase(r.section_text(kind))) {
      r.clear_section(kind);
      r.missing_fields.insert(kind);
    }
  }
  std::vector<std::string> steps;
  for (auto& s : r.steps_to_reproduce)
    if (!is_missing_phrase(s)) steps.push_back(std::move(s));
  r.steps_to_reproduce = std::move(steps);
  if (is_missing_phrase(r.title)) r.title.clear();
  return normalize_report(std::move(r));
}

// --- OpenAI-compatible backend -----------------------------------------------

namespace {

struct SplitUrl {
  std::string scheme_host_port;
  std::string path;
};

SplitUrl split_url(const std::string& url) {
  auto scheme = url.find("://");
  if (scheme == std::string::npos) throw Error(ErrorCode::InvalidConfig, "base_url needs a scheme: " + url);
  auto path = url.find('/', scheme + 3);
  SplitUrl out;
  if (path == std::string::npos) {
    out.scheme_host_port = url;
  } else {
    out.scheme_host_port = url.substr(0, path);
    out.path = url.substr(path);
    while (!out.path.empty() && out.path.back() == '/') out.path.pop_back();
  }
  return out;
}

class SemaphoreGuard {
 public:
  explicit SemaphoreGuard(std::counting_semaphore<4096>& s) : s_(s) { s_.acquire(); }
  ~SemaphoreGuard() { s_.release(); }
  SemaphoreGuard(const SemaphoreGuard&) = delete;
  SemaphoreGuard& operator=(const SemaphoreGuard&) = delete;

 private:
  std::counting_semaphore<4096>& s_;
};

}  // namespace

OpenAiBackend::OpenAiBackend(BackendConfig config)
    : config_(std::move(config)), inflight_(std::min(config_.max_concurrency, 4096)) {
  config_.validate();
  auto parts = split_url(config_.base_url);
  scheme_host_port_ = parts.scheme_host_port;
  path_prefix_ = parts.path;
  if (const char* key = std::getenv(config_.api_key_env().c_str())) api_key_ = key;
}

std::string OpenAiBackend::post(const std::string& path, const std::string& body) const {
  SemaphoreGuard guard(inflight_);
  ++telemetry_.calls;
  const auto timeout = std::chrono::duration<double>(config_.timeout_seconds);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout - secs);
  int retries = 0;
  for (int attempt = 0;; ++attempt) {
    httplib::Client cli(scheme_host_port_);
    cli.set_connection_timeout(secs.count(), usecs.count());
    cli.set_read_timeout(secs.count(), usecs.count());
    cli.set_write_timeout(secs.count(), usecs.count());
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

    auto res = cli.Post(path_prefix_ + path, headers, body, "application/json");
    ErrorCode failure;
    std::string detail;
    if (!res) {
      auto err = res.error();
      if (err != httplib::Error::Read && err != httplib::Error::ConnectionTimeout &&
          err != httplib::Error::Write) {
        throw Error(ErrorCode::ProviderUnavailable, config_.name + ": " + httplib::to_string(err));
      }
      failure = ErrorCode::TimedOut;
      detail = httplib::to_string(err);
    } else if (res->status == 401 || res->status == 403) {
      throw Error(ErrorCode::AuthFailed, config_.name + ": HTTP " + std::to_string(res->status));
    } else if (res->status >= 500) {
      failure = ErrorCode::ProviderUnavailable;
      detail = "HTTP " + std::to_string(res->status);
    } else if (res->status >= 400) {
      throw Error(ErrorCode::ProviderUnavailable,
                  config_.name + ": HTTP " + std::to_string(res->status) + " " + res->body);
    } else {
      telemetry_.last_retry_count = retries;
      return res->body;
    }
    if (attempt >= config_.max_retries) {
      telemetry_.last_retry_count = retries;
      throw Error(failure, config_.name + ": " + detail + " after " + std::to_string(attempt + 1) + " attempts");
    }
    std::this_thread::sleep_for(
        std::chrono::duration<double>(config_.backoff_base_seconds * std::pow(2.0, attempt)));
    ++retries;
    ++telemetry_.retries;
  }
}

std::string OpenAiBackend::complete(const std::vector<Message>& messages) {
  json req;
  req["model"] = config_.model_id;
  req["temperature"] = config_.temperature;
  req["messages"] = json::array();
  for (const auto& m : messages) req["messages"].push_back({{"role", m.role}, {"content", m.content}});
  std::string body = post("/v1/chat/completions", req.dump());
  try {
    auto j = json::parse(body);
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ProviderUnavailable, config_.name + ": bad completion payload: " + e.what());
  }
}

std::vector<double> OpenAiBackend::embed(std::string_view text) const {
  json req;
  req["model"] = config_.model_id;
  req["input"] = std::string(text);
  std::string body = post("/v1/embeddings", req.dump());
  try {
    auto j = json::parse(body);
    return j.at("data").at(0).at("embedding").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ProviderUnavailable, config_.name + ": bad embedding payload: " + e.what());
  }
}

std::string chat_complete(const BackendConfig& config, const std::vector<Message>& messages) {
  OpenAiBackend backend(config);
  return backend.complete(messages);
}

std::vector<double> embed(const BackendConfig& config, std::string_view text) {
  OpenAiBackend backend(config);
  return backend.embed(text);
}

// --- mock backend -------------------------------------------------------------

std::string MockBackend::respond(MockBehavior behavior, std::string_view input) {
  switch (behavior) {
    case MockBehavior::perfect_extractor: {
      StructuredReport r = parse_sections(input);
      r.missing_fields.clear();
      return report_to_json(r);
    }
    case MockBehavior::flag_missing: {
      StructuredReport r = parse_sections(input);
      json j = json::parse(report_to_json(r));
      for (auto kind : r.missing_fields) {
        if (kind != SectionKind::steps_to_reproduce) j[std::string(section_name(kind))] = kNotProvided;
      }
      return j.dump();
    }
    case MockBehavior::hallucinate: {
      StructuredReport r = parse_sections(input);
      if (r.steps_to_reproduce.empty()) r.steps_to_reproduce = {std::string(kHallucinatedStep)};
      if (r.expected_result.empty()) r.expected_result = kHallucinatedExpected;
      if (r.actual_result.empty()) r.actual_result = kHallucinatedActual;
      if (r.additional_information.empty()) r.additional_information = kHallucinatedInfo;
      r.missing_fields.clear();
      return report_to_json(r);
    }
    case MockBehavior::echo_synthesis:
      return std::string(input);
  }
  return {};
}

std::string MockBackend::complete(const std::vector<Message>& messages) {
  ++calls_;
  std::string_view user;
  for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
    if (it->role == "user") {
      user = it->content;
      break;
    }
  }
  std::string input = extract_prompt_input(user);
  if (responder_) return responder_(input);
  if (auto it = table_.find(input); it != table_.end()) return it->second;
  return respond(behavior_, input);
}

std::string MockBackend::name() const {
  if (!name_.empty()) return name_;
  std::string base;
  switch (behavior_) {
    case MockBehavior::perfect_extractor: base = "mock:perfect"; break;
    case MockBehavior::flag_missing: base = "mock:flag_missing"; break;
    case MockBehavior::hallucinate: base = "mock:hallucinate"; break;
    case MockBehavior::echo_synthesis: base = "mock:echo"; break;
  }
  return table_.empty() ? base : base + "+script";
}

std::unique_ptr<ChatBackend> mock_backend(std::string_view script) {
  if (script.rfind("mock:", 0) == 0) script.remove_prefix(5);
  if (script == "perfect" || script == "perfect_extractor")
    return std::make_unique<MockBackend>(MockBehavior::perfect_extractor);
  if (script == "flag_missing") return std::make_unique<MockBackend>(MockBehavior::flag_missing);
  if (script == "hallucinate") return std::make_unique<MockBackend>(MockBehavior::hallucinate);
  if (script == "echo") return std::make_unique<MockBackend>(MockBehavior::echo_synthesis);
  if (script.rfind("script=", 0) == 0) {
    std::string path(script.substr(7));
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot read mock script " + path);
    std::map<std::string, std::string, std::less<>> table;
    try {
      json j = json::parse(in);
      if (j.is_object()) {
        for (auto& [k, v] : j.items()) table[k] = v.get<std::string>();
      } else {
        for (const auto& e : j) table[e.at("input").get<std::string>()] = e.at("raw").get<std::string>();
      }
    } catch (const json::exception& e) {
      throw Error(ErrorCode::InvalidConfig, "bad mock script " + path + ": " + e.what());
    }
    return std::make_unique<MockBackend>(std::move(table), MockBehavior::perfect_extractor);
  }
  throw Error(ErrorCode::InvalidConfig, "unknown mock behaviour: " + std::string(script));
}

GenerationResult generate(ChatBackend& backend, const std::vector<Message>& messages) {
  GenerationResult result;
  auto t0 = std::chrono::steady_clock::now();
  result.raw_text = backend.complete(messages);
  result.latency_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  try {
    result.report = parse_generation(result.raw_text);
  } catch (const Error& e) {
    result.parse_error = e.what();
  }
  return result;
}

}  // namespace reportsmith

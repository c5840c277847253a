#include "reportsmith/service.hpp"

#include <algorithm>
#include <map>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "reportsmith/harness.hpp"

namespace reportsmith {

using nlohmann::json;
using nlohmann::ordered_json;

std::string score_text_json(const CtqrsEngine& engine, std::string_view text) {
  const StructuredReport report = parse_sections(text);
  ordered_json j = ordered_json::parse(breakdown_to_json(engine.score(report)));
  auto missing = ordered_json::array();
  for (auto kind : report.missing_fields) missing.push_back(section_name(kind));
  j["missing_fields"] = std::move(missing);
  return j.dump();
}

std::string structure_text_json(ChatBackend& backend, std::string_view backend_name, std::string_view text,
                                int shots, const std::vector<TestCase>& pool) {
  EvalContext ctx;
  ctx.shots = shots;
  TestCase target;
  target.bug_id = -1;
  target.input = std::string(text);
  GenerationResult gen = generate(backend, build_eval_messages(target, text, pool, ctx));

  ordered_json j;
  j["backend"] = backend_name;
  if (gen.report) {
    j["report"] = ordered_json::parse(report_to_json(*gen.report));
    j["parse_error"] = nullptr;
  } else {
    j["report"] = nullptr;
    j["parse_error"] = *gen.parse_error;
  }
  j["raw"] = gen.raw_text;
  return j.dump();
}

namespace {

struct HttpError {
  int status;
  std::string code;
  std::string message;
};

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::TimedOut: return 504;
    case ErrorCode::ProviderUnavailable:
    case ErrorCode::AuthFailed:
    case ErrorCode::MalformedGeneration: return 502;
    case ErrorCode::MalformedDocument:
    case ErrorCode::InvalidConfig:
    case ErrorCode::NothingToMask: return 400;
    default: return 500;
  }
}

json parse_body(const httplib::Request& req) {
  json body = json::parse(req.body, nullptr, false);
  if (body.is_discarded() || !body.is_object()) throw HttpError{400, "MalformedDocument", "body must be a JSON object"};
  return body;
}

std::string required_string(const json& body, const char* key) {
  auto it = body.find(key);
  if (it == body.end() || !it->is_string()) throw HttpError{400, "MalformedDocument", std::string(key) + " must be a string"};
  return it->get<std::string>();
}

void send_json(httplib::Response& res, int status, const std::string& body) {
  res.status = status;
  res.set_content(body, "application/json; charset=utf-8");
}

}  // namespace

struct Service::Impl {
  AppConfig config;
  CtqrsEngine engine;
  std::map<std::string, std::unique_ptr<ChatBackend>> backends;
  std::vector<TestCase> shot_pool;
  HashedBagProvider embeddings;
  httplib::Server server;
  std::thread thread;
  int port = 0;

  explicit Impl(AppConfig c) : config(std::move(c)), engine(config.engine()) {
    config.validate();
    for (const auto& [name, b] : config.backends) backends[name] = make_backend(b);
    if (config.service.shots_path) shot_pool = read_testset(*config.service.shots_path);
    routes();
  }

  bool origin_allowed(const std::string& origin) const {
    const auto& list = config.service.allowed_origins;
    return std::find(list.begin(), list.end(), "*") != list.end() ||
           std::find(list.begin(), list.end(), origin) != list.end();
  }

  template <typename F>
  httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const HttpError& e) {
        send_json(res, e.status, ordered_json{{"error", e.code}, {"message", e.message}}.dump());
      } catch (const Error& e) {
        send_json(res, status_for(e.code()), ordered_json{{"error", error_code_name(e.code())}, {"message", e.what()}}.dump());
      } catch (const std::exception& e) {
        send_json(res, 500, ordered_json{{"error", "Internal"}, {"message", e.what()}}.dump());
      }
    };
  }

  void routes() {
    server.set_payload_max_length(4 * 1024 * 1024);
    // httplib's default also sets SO_REUSEPORT, which lets a second instance
    // share the port silently.
    server.set_socket_options([](socket_t sock) {
      int yes = 1;
      ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
    });

    server.set_post_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
      const std::string origin = req.get_header_value("Origin");
      if (!origin.empty() && origin_allowed(origin)) {
        res.set_header("Access-Control-Allow-Origin", origin);
        res.set_header("Vary", "Origin");
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
      }
    });
    server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    server.Get("/api/health", guarded([this](const httplib::Request&, httplib::Response& res) {
      ordered_json j;
      j["status"] = "ok";
      auto names = ordered_json::array();
      for (const auto& [name, _] : backends) names.push_back(name);
      j["backends"] = std::move(names);
      j["default_backend"] = config.default_backend;
      j["rule_table"] = kRuleTableVersion;
      send_json(res, 200, j.dump());
    }));

    // Rule engine only; never touches a backend.
    server.Post("/api/score", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const std::string text = required_string(parse_body(req), "text");
      if (detail::trim(text).empty()) throw HttpError{400, "MalformedDocument", "text is empty"};
      send_json(res, 200, score_text_json(engine, text));
    }));

    server.Post("/api/structure", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const json body = parse_body(req);
      const std::string text = required_string(body, "text");
      if (detail::trim(text).empty()) throw HttpError{400, "MalformedDocument", "text is empty"};
      std::string backend_name = config.default_backend;
      if (body.contains("backend") && !body["backend"].is_null()) backend_name = required_string(body, "backend");
      int shots = 0;
      if (body.contains("shots") && !body["shots"].is_null()) {
        if (!body["shots"].is_number_integer()) throw HttpError{400, "MalformedDocument", "shots must be an integer"};
        shots = body["shots"].get<int>();
      }
      if (shots < 0 || static_cast<std::size_t>(shots) > shot_pool.size())
        throw HttpError{400, "InvalidConfig", "shots exceeds the configured exemplar pool"};
      auto it = backends.find(backend_name);
      if (it == backends.end()) throw HttpError{400, "InvalidConfig", "unknown backend '" + backend_name + "'"};

      send_json(res, 200, structure_text_json(*it->second, backend_name, text, shots, shot_pool));
    }));

    server.Post("/api/metrics", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const json body = parse_body(req);
      const std::string candidate = required_string(body, "candidate");
      const std::string reference = required_string(body, "reference");
      send_json(res, 200, metric_report_to_json(compute_metrics(candidate, reference, &embeddings)));
    }));
  }
};

Service::Service(AppConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

Service::~Service() { stop(); }

int Service::start(int port) {
  if (port < 0) port = impl_->config.service.port;
  const std::string& host = impl_->config.service.bind_address;
  if (port == 0) {
    impl_->port = impl_->server.bind_to_any_port(host);
    if (impl_->port < 0) throw Error(ErrorCode::IoFailure, "cannot bind " + host);
  } else {
    if (!impl_->server.bind_to_port(host, port))
      throw Error(ErrorCode::IoFailure, "cannot bind " + host + ":" + std::to_string(port));
    impl_->port = port;
  }
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return impl_->port;
}

void Service::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

void Service::wait() {
  if (impl_->thread.joinable()) impl_->thread.join();
}

int Service::port() const { return impl_->port; }

}  // namespace reportsmith

#include "reportsmith/config.hpp"

#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace reportsmith {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

[[noreturn]] void fail(int line, const std::string& what) {
  throw Error(ErrorCode::InvalidConfig, "config line " + std::to_string(line) + ": " + what);
}

// Parses the TOML subset into a JSON tree.
class TomlReader {
 public:
  explicit TomlReader(std::string_view text) : s_(text) {}

  json read() {
    json root = json::object();
    json* table = &root;
    while (true) {
      skip_blank_lines();
      if (eof()) break;
      if (peek() == '[') {
        ++i_;
        if (!eof() && peek() == '[') fail(line_, "arrays of tables are not supported");
        auto path = key_path(']');
        expect(']');
        table = &root;
        for (const auto& k : path) {
          json& next = (*table)[k];
          if (next.is_null()) next = json::object();
          if (!next.is_object()) fail(line_, "'" + k + "' is not a table");
          table = &next;
        }
      } else {
        auto path = key_path('=');
        expect('=');
        json* target = table;
        for (std::size_t k = 0; k + 1 < path.size(); ++k) {
          json& next = (*target)[path[k]];
          if (next.is_null()) next = json::object();
          if (!next.is_object()) fail(line_, "'" + path[k] + "' is not a table");
          target = &next;
        }
        if (target->contains(path.back())) fail(line_, "duplicate key '" + path.back() + "'");
        (*target)[path.back()] = value();
      }
      end_of_line();
    }
    return root;
  }

 private:
  bool eof() const { return i_ >= s_.size(); }
  char peek() const { return s_[i_]; }

  void skip_ws() {
    while (!eof() && (peek() == ' ' || peek() == '\t')) ++i_;
  }

  void skip_comment() {
    if (!eof() && peek() == '#') {
      while (!eof() && peek() != '\n') ++i_;
    }
  }

  void skip_blank_lines() {
    while (true) {
      skip_ws();
      skip_comment();
      if (eof()) return;
      if (peek() == '\r' || peek() == '\n') {
        if (peek() == '\n') ++line_;
        ++i_;
        continue;
      }
      return;
    }
  }

  void end_of_line() {
    skip_ws();
    skip_comment();
    if (eof()) return;
    if (peek() == '\r') ++i_;
    if (eof() || peek() != '\n') fail(line_, "expected end of line");
    ++i_;
    ++line_;
  }

  void expect(char c) {
    skip_ws();
    if (eof() || peek() != c) fail(line_, std::string("expected '") + c + "'");
    ++i_;
  }

  std::vector<std::string> key_path(char terminator) {
    std::vector<std::string> path;
    while (true) {
      skip_ws();
      if (eof()) fail(line_, "unexpected end of file in key");
      std::string key;
      if (peek() == '"') key = basic_string();
      else if (peek() == '\'') key = literal_string();
      else {
        while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_' || peek() == '-'))
          key += s_[i_++];
      }
      if (key.empty()) fail(line_, "empty key");
      path.push_back(std::move(key));
      skip_ws();
      if (!eof() && peek() == '.') {
        ++i_;
        continue;
      }
      if (eof() || peek() != terminator) fail(line_, std::string("expected '") + terminator + "' after key");
      return path;
    }
  }

  std::string basic_string() {
    ++i_;  // opening quote
    std::string out;
    while (true) {
      if (eof() || peek() == '\n') fail(line_, "unterminated string");
      char c = s_[i_++];
      if (c == '"') return out;
      if (c != '\\') {
        out += c;
        continue;
      }
      if (eof()) fail(line_, "unterminated escape");
      char e = s_[i_++];
      switch (e) {
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        case 'r': out += '\r'; break;
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        case 'u': {
          if (i_ + 4 > s_.size()) fail(line_, "short \\u escape");
          unsigned cp = static_cast<unsigned>(std::stoul(std::string(s_.substr(i_, 4)), nullptr, 16));
          i_ += 4;
          if (cp < 0x80) {
            out += static_cast<char>(cp);
          } else if (cp < 0x800) {
            out += static_cast<char>(0xC0 | (cp >> 6));
            out += static_cast<char>(0x80 | (cp & 0x3F));
          } else {
            out += static_cast<char>(0xE0 | (cp >> 12));
            out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
            out += static_cast<char>(0x80 | (cp & 0x3F));
          }
          break;
        }
        default: fail(line_, std::string("unsupported escape \\") + e);
      }
    }
  }

  std::string literal_string() {
    ++i_;
    auto end = s_.find('\'', i_);
    auto nl = s_.find('\n', i_);
    if (end == std::string_view::npos || (nl != std::string_view::npos && nl < end)) fail(line_, "unterminated string");
    std::string out(s_.substr(i_, end - i_));
    i_ = end + 1;
    return out;
  }

  json value() {
    skip_ws();
    if (eof()) fail(line_, "missing value");
    char c = peek();
    if (c == '"') return basic_string();
    if (c == '\'') return literal_string();
    if (c == '[') return array();
    if (s_.substr(i_, 4) == "true") {
      i_ += 4;
      return true;
    }
    if (s_.substr(i_, 5) == "false") {
      i_ += 5;
      return false;
    }
    return number();
  }

  json array() {
    ++i_;
    json arr = json::array();
    while (true) {
      skip_blank_lines();
      if (eof()) fail(line_, "unterminated array");
      if (peek() == ']') {
        ++i_;
        return arr;
      }
      arr.push_back(value());
      skip_blank_lines();
      if (!eof() && peek() == ',') {
        ++i_;
        continue;
      }
      skip_blank_lines();
      if (eof() || peek() != ']') fail(line_, "expected ',' or ']' in array");
    }
  }

  json number() {
    std::string digits;
    bool is_float = false;
    while (!eof()) {
      char c = peek();
      if (std::isdigit(static_cast<unsigned char>(c)) || c == '+' || c == '-') {
        digits += c;
      } else if (c == '.' || c == 'e' || c == 'E') {
        is_float = true;
        digits += c;
      } else if (c != '_') {
        break;
      }
      ++i_;
    }
    if (digits.empty()) fail(line_, "unsupported value");
    try {
      std::size_t used = 0;
      json out = is_float ? json(std::stod(digits, &used)) : json(std::stoll(digits, &used));
      if (used != digits.size()) fail(line_, "bad number '" + digits + "'");
      return out;
    } catch (const std::logic_error&) {
      fail(line_, "bad number '" + digits + "'");
    }
  }

  std::string_view s_;
  std::size_t i_ = 0;
  int line_ = 1;
};

void check_keys(const json& table, const std::string& where, std::initializer_list<std::string_view> allowed) {
  for (auto& [key, _] : table.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || a == key;
    if (!ok) throw Error(ErrorCode::InvalidConfig, "unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void assign(const json& table, const char* key, T& out, const std::string& where) {
  auto it = table.find(key);
  if (it == table.end()) return;
  try {
    if constexpr (std::is_floating_point_v<T>) {
      if (!it->is_number()) throw Error(ErrorCode::InvalidConfig, "");
      out = it->template get<double>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!it->is_number_integer()) throw Error(ErrorCode::InvalidConfig, "");
      out = static_cast<T>(it->template get<long long>());
    } else {
      out = it->template get<T>();
    }
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidConfig, where + "." + key + " has the wrong type");
  }
}

BackendConfig backend_from(const std::string& name, const json& t) {
  const std::string where = "backends." + name;
  if (!t.is_object()) throw Error(ErrorCode::InvalidConfig, where + " must be a table");
  check_keys(t, where,
             {"base_url", "model_id", "api_key_ref", "max_concurrency", "timeout_seconds", "temperature",
              "max_retries", "backoff_base_seconds"});
  BackendConfig b;
  b.name = name;
  assign(t, "base_url", b.base_url, where);
  assign(t, "model_id", b.model_id, where);
  assign(t, "api_key_ref", b.api_key_ref, where);
  assign(t, "max_concurrency", b.max_concurrency, where);
  assign(t, "timeout_seconds", b.timeout_seconds, where);
  assign(t, "temperature", b.temperature, where);
  assign(t, "max_retries", b.max_retries, where);
  assign(t, "backoff_base_seconds", b.backoff_base_seconds, where);
  return b;
}

BackendConfig mock_config(std::string name, std::string spec) {
  BackendConfig b;
  b.name = std::move(name);
  b.base_url = std::move(spec);
  b.model_id = "mock";
  return b;
}

}  // namespace

AppConfig AppConfig::defaults() {
  AppConfig c;
  c.backends["mock"] = mock_config("mock", "mock:perfect");
  c.default_backend = "mock";
  return c;
}

void AppConfig::validate() const {
  if (!backends.count(default_backend))
    throw Error(ErrorCode::InvalidConfig, "default_backend '" + default_backend + "' is not configured");
  for (const auto& [_, b] : backends) {
    if (b.base_url.rfind("mock:", 0) != 0) b.validate();
  }
  synthesis.validate();
  split.validate();
  if (service.port < 1 || service.port > 65535) throw Error(ErrorCode::InvalidConfig, "service.port out of range");
}

BackendConfig AppConfig::backend(std::string_view name) const {
  if (name.empty()) name = default_backend;
  if (auto it = backends.find(std::string(name)); it != backends.end()) return it->second;
  if (name.rfind("mock:", 0) == 0) return mock_config(std::string(name), std::string(name));
  throw Error(ErrorCode::InvalidConfig, "unknown backend '" + std::string(name) + "'");
}

CtqrsEngine AppConfig::engine() const {
  return lexicon_dir ? CtqrsEngine(Lexicons::load_dir(*lexicon_dir)) : CtqrsEngine();
}

AppConfig parse_config(std::string_view toml) {
  const json root = TomlReader(toml).read();
  check_keys(root, "config", {"default_backend", "lexicon_dir", "backends", "synthesis", "split", "service"});

  AppConfig c;
  if (root.contains("backends")) {
    if (!root["backends"].is_object()) throw Error(ErrorCode::InvalidConfig, "backends must be a table");
    for (auto& [name, t] : root["backends"].items()) c.backends[name] = backend_from(name, t);
  }
  assign(root, "default_backend", c.default_backend, "config");
  if (c.default_backend.empty() && c.backends.size() == 1) c.default_backend = c.backends.begin()->first;
  if (c.backends.empty()) {
    c.backends["mock"] = mock_config("mock", "mock:perfect");
    if (c.default_backend.empty()) c.default_backend = "mock";
  }
  if (root.contains("lexicon_dir")) {
    std::string dir;
    assign(root, "lexicon_dir", dir, "config");
    c.lexicon_dir = dir;
  }
  if (root.contains("synthesis")) {
    const json& t = root["synthesis"];
    check_keys(t, "synthesis", {"attempts", "embedding_min", "cosine_min"});
    assign(t, "attempts", c.synthesis.attempts, "synthesis");
    assign(t, "embedding_min", c.synthesis.embedding_min, "synthesis");
    assign(t, "cosine_min", c.synthesis.cosine_min, "synthesis");
  }
  if (root.contains("split")) {
    const json& t = root["split"];
    check_keys(t, "split", {"train", "test", "validation", "seed"});
    assign(t, "train", c.split.train, "split");
    assign(t, "test", c.split.test, "split");
    assign(t, "validation", c.split.validation, "split");
    assign(t, "seed", c.split.seed, "split");
  }
  if (root.contains("service")) {
    const json& t = root["service"];
    check_keys(t, "service", {"bind", "port", "allowed_origins", "shots_path"});
    assign(t, "bind", c.service.bind_address, "service");
    assign(t, "port", c.service.port, "service");
    assign(t, "allowed_origins", c.service.allowed_origins, "service");
    if (t.contains("shots_path")) {
      std::string p;
      assign(t, "shots_path", p, "service");
      c.service.shots_path = p;
    }
  }
  c.validate();
  return c;
}

AppConfig load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  AppConfig c = parse_config(ss.str());
  // Relative paths resolve against the config file's directory.
  auto resolve = [&](fs::path& p) {
    if (p.is_relative()) p = path.parent_path() / p;
  };
  if (c.lexicon_dir) resolve(*c.lexicon_dir);
  if (c.service.shots_path) resolve(*c.service.shots_path);
  return c;
}

}  // namespace reportsmith

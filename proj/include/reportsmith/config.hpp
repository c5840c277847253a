#pragma once

// Application configuration, read from a TOML file.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "reportsmith/ctqrs.hpp"
#include "reportsmith/dataset.hpp"
#include "reportsmith/gateway.hpp"

namespace reportsmith {

struct ServiceConfig {
  std::string bind_address = "127.0.0.1";
  int port = 8080;
  std::vector<std::string> allowed_origins = {"http://localhost:5173"};  // "*" allows any
  std::optional<std::filesystem::path> shots_path;  // testset JSONL used as few-shot pool
};

struct AppConfig {
  std::map<std::string, BackendConfig> backends;
  std::string default_backend;
  std::optional<std::filesystem::path> lexicon_dir;  // builtin lexicons when unset
  SynthesisConfig synthesis;
  SplitRatios split;
  ServiceConfig service;

  /// One mock backend named "mock"; usable without a config file.
  static AppConfig defaults();

  /// Throws Error(InvalidConfig).
  void validate() const;

  /// Named backend, the default for an empty name, or an ad-hoc mock for a
  /// "mock:..." spec. Throws Error(InvalidConfig) for unknown names.
  BackendConfig backend(std::string_view name = {}) const;

  CtqrsEngine engine() const;
};

/// The supported TOML subset: [table] and [table.sub] headers, bare or quoted
/// keys, strings, integers, floats, booleans and (multi-line) arrays of those.
AppConfig parse_config(std::string_view toml);
AppConfig load_config(const std::filesystem::path& path);

}  // namespace reportsmith

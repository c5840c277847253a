#pragma once

// HTTP JSON API for the authoring assistant.
//
//   POST /api/score      {text}                   -> breakdown + missing_fields
//   POST /api/structure  {text, backend?, shots?} -> report + raw generation
//   POST /api/metrics    {candidate, reference}   -> metric report
//   GET  /api/health                              -> {status, backends}

#include <memory>
#include <string>
#include <string_view>

#include "reportsmith/config.hpp"
#include "reportsmith/ctqrs.hpp"
#include "reportsmith/harness.hpp"

namespace reportsmith {

/// The /api/score body, also printed by `reportsmith score`.
std::string score_text_json(const CtqrsEngine& engine, std::string_view text);

/// The /api/structure body, also printed by `reportsmith structure`.
/// Shots come from `pool`; a generation that fails to parse yields a null
/// report and a parse_error string.
std::string structure_text_json(ChatBackend& backend, std::string_view backend_name, std::string_view text,
                                int shots, const std::vector<TestCase>& pool);

class Service {
 public:
  explicit Service(AppConfig config);
  ~Service();

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds and serves on a background thread. Port 0 picks a free port.
  /// Returns the bound port; throws Error(IoFailure) when binding fails.
  int start(int port = -1);
  void stop();
  /// Blocks until stop() is called.
  void wait();
  int port() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace reportsmith

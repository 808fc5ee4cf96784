#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "clear/run_config.hpp"

namespace clear {

/// Exit codes shared by every command.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFatal = 1;
inline constexpr int kExitPartial = 2;

struct RunOptions {
  std::filesystem::path config;
  Overrides overrides;
};

struct RefineOptions {
  std::filesystem::path config;
  std::string instruction;
  std::optional<std::filesystem::path> instruction_file;
  std::optional<std::string> root_text;
  Overrides overrides;
};

struct AnalyzeOptions {
  std::filesystem::path run_dir;
  bool similarity = false;
  bool cost = false;
  std::optional<std::filesystem::path> config;  // defaults to the one recorded by `run`
};

/// Benchmark run. Writes report.json, trees.jsonl, trace.jsonl and ledger.json
/// into the output directory. Returns 0, 2 on partial failure, 1 on fatal error.
int cmd_run(const RunOptions& options, std::ostream& out, std::ostream& err);

/// Single refinement of one instruction; prints the final output.
int cmd_refine(const RefineOptions& options, std::ostream& out, std::ostream& err);

/// Adds similarity and/or cost sections to an existing run's report.json.
int cmd_analyze(const AnalyzeOptions& options, std::ostream& out, std::ostream& err);

/// Deterministic report document for a finished benchmark.
nlohmann::json build_report(const RunConfig& cfg, const BenchmarkReport& report);

}  // namespace clear

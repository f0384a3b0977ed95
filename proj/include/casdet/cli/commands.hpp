#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>

namespace casdet::cli {

enum ExitCode : int {
  kOk = 0,
  kUsageError = 1,  // bad arguments or configuration
  kRuntimeError = 2,
  kVerificationFailure = 3,
};

struct CommandOptions {
  std::filesystem::path config;
  std::filesystem::path checkpoint;
  std::filesystem::path out;
  std::optional<std::uint64_t> seed;  // overrides the config seed
  int instances = 20;                 // gradcheck: random instances per op
  bool inject_fault = false;          // gradcheck: corrupt every backward pass
};

// File names written into --out.
inline constexpr const char* kCheckpointFile = "model.ckpt";
inline constexpr const char* kMetricsFile = "metrics.csv";
inline constexpr const char* kConfigFile = "config.cfg";
inline constexpr const char* kEvalFile = "eval.csv";
inline constexpr const char* kCorrelationSummaryFile = "correlation_summary.csv";
inline constexpr const char* kGradcheckFile = "gradcheck.csv";
inline constexpr const char* kSelftestFile = "selftest.csv";

// Each command validates its inputs before touching --out and writes its
// files only after the work succeeded.
int run_train(const CommandOptions& opts, std::ostream& out, std::ostream& err);
int run_eval(const CommandOptions& opts, std::ostream& out, std::ostream& err);
int run_analyze(const CommandOptions& opts, std::ostream& out, std::ostream& err);
int run_gradcheck(const CommandOptions& opts, std::ostream& out, std::ostream& err);
int run_selftest(const CommandOptions& opts, std::ostream& out, std::ostream& err);

// Parses argv (subcommand first) and dispatches.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace casdet::cli

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

#include "biaslens/report.hpp"

namespace biaslens::cli {

/// Exit codes shared by every command.
inline constexpr int kExitClean = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitFlagged = 2;

struct AuditArgs {
  std::string data;
  std::string config;
  std::optional<std::string> target_ref;
  std::optional<std::string> trusted_ref;
  std::optional<std::string> embeddings;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> format;
  report::FaultHook fault_hook;  // tests only
};

struct MitigateArgs {
  std::string data;
  std::string method;
  std::string params = "{}";  // inline JSON or a path to a JSON file
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::string> target_ref;
  std::optional<std::string> config;  // column map for CSV input
  std::optional<std::string> format;
};

struct SynthArgs {
  std::string spec;
  std::string out;
};

struct WeatArgs {
  std::string embeddings;
  std::string spec;
  std::size_t n_permutations = 1000;
  std::optional<std::uint64_t> seed;
  double alpha = 0.05;
};

struct DebiasArgs {
  std::string embeddings;
  std::string spec;
  std::string out;
};

/// Builds the report for an audit without writing anything.
report::AuditReport build_audit_report(const AuditArgs& args);

int cmd_audit(const AuditArgs& args, std::ostream& out, std::ostream& err);
int cmd_mitigate(const MitigateArgs& args, std::ostream& out, std::ostream& err);
int cmd_synth(const SynthArgs& args, std::ostream& out, std::ostream& err);
int cmd_weat(const WeatArgs& args, std::ostream& out, std::ostream& err);
int cmd_debias(const DebiasArgs& args, std::ostream& out, std::ostream& err);

/// Seed precedence: explicit flag, then BIASLENS_SEED, then the fallback.
/// Returns the seed and its source ("flag", "environment" or "config").
std::pair<std::uint64_t, std::string> resolve_seed(std::optional<std::uint64_t> flag, std::uint64_t fallback);

/// Parses a command line and dispatches to a command.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace biaslens::cli

#include "biaslens/error.hpp"

namespace biaslens {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::parse: return "parse";
    case ErrorCode::validation: return "validation";
    case ErrorCode::missing_attribute: return "missing_attribute";
    case ErrorCode::empty_distribution: return "empty_distribution";
    case ErrorCode::support_mismatch: return "support_mismatch";
    case ErrorCode::infinite_divergence: return "infinite_divergence";
    case ErrorCode::single_cell: return "single_cell";
    case ErrorCode::unresolvable_ideal: return "unresolvable_ideal";
    case ErrorCode::missing_reference: return "missing_reference";
    case ErrorCode::infeasible: return "infeasible";
    case ErrorCode::out_of_vocabulary: return "out_of_vocabulary";
    case ErrorCode::degenerate: return "degenerate";
    case ErrorCode::io: return "io";
    case ErrorCode::usage: return "usage";
  }
  return "unknown";
}

namespace {
std::string with_line(const std::string& message, std::size_t line) {
  if (line == 0) return message;
  return "line " + std::to_string(line) + ": " + message;
}
}  // namespace

Error::Error(ErrorCode code, const std::string& message, std::size_t line)
    : std::runtime_error(with_line(message, line)), code_(code), line_(line) {}

}  // namespace biaslens

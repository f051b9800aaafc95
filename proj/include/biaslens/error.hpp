#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace biaslens {

enum class ErrorCode {
  parse,
  validation,
  missing_attribute,
  empty_distribution,
  support_mismatch,
  infinite_divergence,
  single_cell,
  unresolvable_ideal,
  missing_reference,
  infeasible,
  out_of_vocabulary,
  degenerate,
  io,
  usage,
};

std::string_view to_string(ErrorCode code);

// All library failures are reported through this type. `line()` is non-zero
// only for errors tied to a position in an input stream.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::size_t line = 0);

  ErrorCode code() const noexcept { return code_; }
  std::size_t line() const noexcept { return line_; }

 private:
  ErrorCode code_;
  std::size_t line_;
};

}  // namespace biaslens

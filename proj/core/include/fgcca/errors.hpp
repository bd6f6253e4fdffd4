#ifndef FGCCA_ERRORS_HPP
#define FGCCA_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace fgcca {

enum class ErrorCode {
  invalid_grid,
  incompatible_grid,
  ill_posed_metric,
  schema_error,
  parse_error,
  range_error,
  duplicate_observation,
  insufficient_data,
  bandwidth_too_small,
  no_overlap,
  degenerate_process,
  invalid_config,
  stationary_point,
  numerical_failure,
  degenerate_component,
  normalization_error,
  sparse_data,
  extrapolation,
  dimension_mismatch,
  reconstruction_basis,
  io_error,
};

const char* error_code_name(ErrorCode code);

class FgccaError : public std::runtime_error {
 public:
  FgccaError(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code),
        detail_(message) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw FgccaError(code, message);
}

}  // namespace fgcca

#endif

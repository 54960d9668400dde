#pragma once

#include <stdexcept>
#include <string>

namespace veil {

/// Error categories surfaced at the command-line boundary.
enum class ErrorCategory { config, data, checkpoint, numeric, contract };

const char* category_name(ErrorCategory c);

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorCategory::config, w) {}
};
struct DataError : Error {
  explicit DataError(const std::string& w) : Error(ErrorCategory::data, w) {}
};
struct CheckpointError : Error {
  explicit CheckpointError(const std::string& w) : Error(ErrorCategory::checkpoint, w) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& w) : Error(ErrorCategory::numeric, w) {}
};
/// Violated precondition of an operation.
struct ContractError : Error {
  explicit ContractError(const std::string& w) : Error(ErrorCategory::contract, w) {}
};
/// Shape disagreement between operands; a kind of contract violation.
struct DimensionError : ContractError {
  explicit DimensionError(const std::string& w) : ContractError(w) {}
};

}  // namespace veil

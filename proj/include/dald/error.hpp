#pragma once

#include <stdexcept>
#include <string>

namespace dald {

/// Process exit codes used by the command-line tools.
enum class ExitCode : int {
  kSuccess = 0,
  kFailure = 1,
  kConfiguration = 2,
  kBudget = 3,
  kInputFormat = 4,
};

/// Base for every error the library throws on purpose.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what, ExitCode code = ExitCode::kFailure)
      : std::runtime_error(what), code_(code) {}
  [[nodiscard]] ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

/// A precondition of an operation was violated by the caller.
class ContractViolation : public Error {
 public:
  explicit ContractViolation(const std::string& what) : Error(what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what, ExitCode::kConfiguration) {}
};

/// More items were requested than the candidate set can supply.
class BudgetError : public Error {
 public:
  explicit BudgetError(const std::string& what) : Error(what, ExitCode::kBudget) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error(what, ExitCode::kInputFormat) {}
};

/// Replay provider asked for a sample that was never stored.
class InsufficientSamples : public Error {
 public:
  explicit InsufficientSamples(const std::string& what) : Error(what, ExitCode::kInputFormat) {}
};

/// Every pairwise distance in the bandwidth subsample was zero.
class DegenerateBandwidth : public Error {
 public:
  explicit DegenerateBandwidth(const std::string& what) : Error(what, ExitCode::kConfiguration) {}
};

/// A class id outside [0, C) reached the trainer.
class LabelError : public Error {
 public:
  explicit LabelError(const std::string& what) : Error(what, ExitCode::kInputFormat) {}
};

#define DALD_REQUIRE(cond, msg)                    \
  do {                                             \
    if (!(cond)) throw ::dald::ContractViolation(msg); \
  } while (0)

}  // namespace dald

#pragma once

#include <stdexcept>
#include <string>

namespace msloc {

enum class ErrorCode {
  kBehindCamera,
  kDegenerateBaseline,
  kDegenerateDenominator,
  kInsufficientParallax,
  kCheiralityViolation,
  kTooFewMatches,
  kNoConsensus,
  kEmptySequence,
  kTooLarge,
  kEmptyMatchSet,
  kSolverDiverged,
  kNoSeeds,
  kInvalidConfig,
  kInvalidInput,
  kNoOverlap,
  kParseError,
  kMissingInput,
};

const char* to_string(ErrorCode code);

// All library failures are reported through this type; `code()` identifies
// the failure class so callers can branch without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

// Parse failures carry the offending file and 1-based line number.
class ParseError : public Error {
 public:
  ParseError(std::string file, int line, const std::string& message)
      : Error(ErrorCode::kParseError,
              file + ":" + std::to_string(line) + ": " + message),
        file_(std::move(file)),
        line_(line) {}

  const std::string& file() const { return file_; }
  int line() const { return line_; }

 private:
  std::string file_;
  int line_;
};

}  // namespace msloc

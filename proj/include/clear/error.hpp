#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace clear {

enum class ErrorKind {
  // refinement graph
  EmptyOutput,
  UnknownNode,
  SlotOccupied,
  OrderViolation,
  ParentNotEvaluated,
  // prompts and feedback
  MissingPlaceholder,
  MalformedFeedback,
  ScoreOutOfRange,
  PreconditionViolation,
  // gateway
  Transport,
  AuthFailure,
  RateLimited,
  ContextOverflow,
  DimensionMismatch,
  ScriptExhausted,
  // search
  EmptyFrontier,
  RootEvaluationFailed,
  // tasks
  NoAnswerFound,
  QuotaExceeded,
  ParseError,
  SchemaError,
  ConfigError,
  // analysis
  ZeroVector,
  InsufficientData,
  UnpricedEndpoint,
};

std::string_view to_string(ErrorKind kind);

// Every failure the library reports is an Error carrying a kind, so callers
// can branch on the category without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind),
        detail_(message) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorKind kind_;
  std::string detail_;
};

}  // namespace clear

#include "clear/error.hpp"

namespace clear {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::EmptyOutput: return "EmptyOutput";
    case ErrorKind::UnknownNode: return "UnknownNode";
    case ErrorKind::SlotOccupied: return "SlotOccupied";
    case ErrorKind::OrderViolation: return "OrderViolation";
    case ErrorKind::ParentNotEvaluated: return "ParentNotEvaluated";
    case ErrorKind::MissingPlaceholder: return "MissingPlaceholder";
    case ErrorKind::MalformedFeedback: return "MalformedFeedback";
    case ErrorKind::ScoreOutOfRange: return "ScoreOutOfRange";
    case ErrorKind::PreconditionViolation: return "PreconditionViolation";
    case ErrorKind::Transport: return "Transport";
    case ErrorKind::AuthFailure: return "AuthFailure";
    case ErrorKind::RateLimited: return "RateLimited";
    case ErrorKind::ContextOverflow: return "ContextOverflow";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::ScriptExhausted: return "ScriptExhausted";
    case ErrorKind::EmptyFrontier: return "EmptyFrontier";
    case ErrorKind::RootEvaluationFailed: return "RootEvaluationFailed";
    case ErrorKind::NoAnswerFound: return "NoAnswerFound";
    case ErrorKind::QuotaExceeded: return "QuotaExceeded";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::SchemaError: return "SchemaError";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::ZeroVector: return "ZeroVector";
    case ErrorKind::InsufficientData: return "InsufficientData";
    case ErrorKind::UnpricedEndpoint: return "UnpricedEndpoint";
  }
  return "Unknown";
}

}  // namespace clear

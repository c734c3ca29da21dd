#include "schemaflow/error.hpp"

namespace schemaflow {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedJson: return "MalformedJson";
    case ErrorCode::MissingField: return "MissingField";
    case ErrorCode::InvalidField: return "InvalidField";
    case ErrorCode::InvalidLabel: return "InvalidLabel";
    case ErrorCode::InvalidTemplate: return "InvalidTemplate";
    case ErrorCode::DanglingGraphNode: return "DanglingGraphNode";
    case ErrorCode::DuplicateEdge: return "DuplicateEdge";
    case ErrorCode::UnknownNode: return "UnknownNode";
    case ErrorCode::MissingPlaceholderValue: return "MissingPlaceholderValue";
    case ErrorCode::IllegalEventShape: return "IllegalEventShape";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::UnknownTable: return "UnknownTable";
    case ErrorCode::UnknownField: return "UnknownField";
    case ErrorCode::TypeMismatch: return "TypeMismatch";
    case ErrorCode::NoActiveSchema: return "NoActiveSchema";
    case ErrorCode::EmptySchemaSet: return "EmptySchemaSet";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::UnknownLabel: return "UnknownLabel";
    case ErrorCode::VocabTooSmall: return "VocabTooSmall";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::Deadlock: return "Deadlock";
    case ErrorCode::EmptyHeldOut: return "EmptyHeldOut";
    case ErrorCode::UnknownTask: return "UnknownTask";
    case ErrorCode::InsufficientTasks: return "InsufficientTasks";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

namespace {

std::string compose(ErrorCode code, const std::string& subject, const std::string& detail) {
  std::string out(to_string(code));
  out += "(" + subject + ")";
  if (!detail.empty()) out += ": " + detail;
  return out;
}

std::string summarize(const std::vector<Violation>& violations) {
  std::string out = std::to_string(violations.size()) + " violation(s)";
  for (const auto& v : violations) {
    out += "\n  " + compose(v.code, v.subject, v.message);
  }
  return out;
}

}  // namespace

Error::Error(ErrorCode code, std::string subject, std::string detail)
    : std::runtime_error(compose(code, subject, detail)), code_(code), subject_(std::move(subject)) {}

ValidationError::ValidationError(std::vector<Violation> violations)
    : Error(violations.empty() ? ErrorCode::InvalidField : violations.front().code,
            violations.empty() ? std::string{} : violations.front().subject, summarize(violations)),
      violations_(std::move(violations)) {}

}  // namespace schemaflow

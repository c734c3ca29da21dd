#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace schemaflow {

enum class ErrorCode {
  MalformedJson,
  MissingField,
  InvalidField,
  InvalidLabel,
  InvalidTemplate,
  DanglingGraphNode,
  DuplicateEdge,
  UnknownNode,
  MissingPlaceholderValue,
  IllegalEventShape,
  VersionMismatch,
  UnknownTable,
  UnknownField,
  TypeMismatch,
  NoActiveSchema,
  EmptySchemaSet,
  EmptyDataset,
  UnknownLabel,
  VocabTooSmall,
  LengthMismatch,
  Deadlock,
  EmptyHeldOut,
  UnknownTask,
  InsufficientTasks,
  InvalidConfig,
  Io,
};

std::string_view to_string(ErrorCode code);

// One problem found while validating an input; `subject` names the offending
// label, field or key.
struct Violation {
  ErrorCode code;
  std::string subject;
  std::string message;
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string subject, std::string detail = {});

  ErrorCode code() const noexcept { return code_; }
  const std::string& subject() const noexcept { return subject_; }

 private:
  ErrorCode code_;
  std::string subject_;
};

// Raised when a document fails validation; carries every violation found,
// not just the first.
class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<Violation> violations);

  const std::vector<Violation>& violations() const noexcept { return violations_; }

 private:
  std::vector<Violation> violations_;
};

}  // namespace schemaflow

#pragma once

#include <stdexcept>
#include <string>

namespace xfp {

enum class ErrKind {
  Usage,        // bad argument / flag
  Io,           // file system failure
  Parse,        // malformed input bytes
  Schema,       // well-formed input violating the dataset schema
  Referential,  // dangling ids in input data
  Validation,   // document-level invariant failures surfaced as errors
  Contract,     // caller broke an API precondition
  Format,       // binary file format (checkpoints, state files)
  Diverged,     // training produced non-finite losses
  Internal,
};

class Error : public std::runtime_error {
 public:
  Error(ErrKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  ErrKind kind() const { return kind_; }

 private:
  ErrKind kind_;
};

const char* err_kind_name(ErrKind kind);

}  // namespace xfp

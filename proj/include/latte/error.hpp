#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace latte {

/// Base class for every error raised by the library. `code()` is a stable,
/// machine-readable identifier that the HTTP layer forwards verbatim.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& m) : Error("dimension_error", m) {}
};

struct LookupError : Error {
  explicit LookupError(const std::string& m) : Error("lookup_error", m) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& m) : Error("numeric_error", m) {}
};

struct TapeError : Error {
  explicit TapeError(const std::string& m) : Error("tape_error", m) {}
};

/// Text that does not follow the command grammar. `span()` holds the part of
/// the input that could not be consumed.
class ParseError : public Error {
 public:
  ParseError(const std::string& m, std::string span)
      : Error("unparseable_text", m), span_(std::move(span)) {}
  const std::string& span() const noexcept { return span_; }

 private:
  std::string span_;
};

struct ResolutionError : Error {
  explicit ResolutionError(const std::string& m) : Error("unknown_target", m) {}
};

struct PreconditionError : Error {
  explicit PreconditionError(const std::string& m) : Error("precondition_failed", m) {}
};

struct ConflictError : Error {
  explicit ConflictError(const std::string& m) : Error("conflict", m) {}
};

/// Malformed input document. Messages follow the form "... at <field path>";
/// `path()` returns that field path, or an empty string.
class SchemaError : public Error {
 public:
  explicit SchemaError(const std::string& m) : Error("schema_error", m) {
    const auto pos = m.rfind(" at ");
    if (pos != std::string::npos && m.find(' ', pos + 4) == std::string::npos) path_ = m.substr(pos + 4);
  }
  SchemaError(const std::string& m, std::string path) : Error("schema_error", m), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

struct NotFoundError : Error {
  explicit NotFoundError(const std::string& m) : Error("not_found", m) {}
};

struct IoError : Error {
  explicit IoError(const std::string& m) : Error("io_error", m) {}
};

}  // namespace latte

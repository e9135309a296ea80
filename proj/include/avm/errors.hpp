#pragma once

#include <stdexcept>
#include <string>

namespace avm {

// Base for every error raised by the library. `kind()` is a stable short tag
// used in the CLI's JSON-lines error log.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual const char* kind() const noexcept { return "error"; }
};

#define AVM_DEFINE_ERROR(Name, tag)                              \
  class Name : public Error {                                    \
   public:                                                       \
    explicit Name(const std::string& what) : Error(what) {}      \
    const char* kind() const noexcept override { return tag; }   \
  };

AVM_DEFINE_ERROR(DomainError, "domain")
AVM_DEFINE_ERROR(OutOfFieldError, "out_of_field")
AVM_DEFINE_ERROR(ProjectiveError, "projective")
AVM_DEFINE_ERROR(RankDeficiencyError, "rank_deficiency")
AVM_DEFINE_ERROR(StreamError, "stream")
AVM_DEFINE_ERROR(NumericalError, "numerical")
AVM_DEFINE_ERROR(QueryError, "query")
AVM_DEFINE_ERROR(DegenerateError, "degenerate")
AVM_DEFINE_ERROR(StructuralError, "structural")
AVM_DEFINE_ERROR(DisconnectedGraphError, "disconnected_graph")
AVM_DEFINE_ERROR(LookupError, "lookup")
AVM_DEFINE_ERROR(InputError, "input")
AVM_DEFINE_ERROR(ConfigError, "config")
AVM_DEFINE_ERROR(GenerationError, "generation")
AVM_DEFINE_ERROR(InitStarvationError, "init_starvation")

#undef AVM_DEFINE_ERROR

// Parse failure in one of the text interchange formats; carries the file and
// 1-based line number of the offending record.
class SchemaError : public Error {
 public:
  SchemaError(const std::string& file, std::size_t line, const std::string& msg)
      : Error(file + ":" + std::to_string(line) + ": " + msg), file_(file), line_(line) {}
  const char* kind() const noexcept override { return "schema"; }
  const std::string& file() const { return file_; }
  std::size_t line() const { return line_; }

 private:
  std::string file_;
  std::size_t line_;
};

}  // namespace avm

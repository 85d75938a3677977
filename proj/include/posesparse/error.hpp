#pragma once

#include <stdexcept>
#include <string>

namespace posesparse {

// Process exit codes returned by the CLI; one per error family.
enum class ErrorCode : int {
  Io = 2,
  Parse = 3,
  Schema = 4,
  Range = 5,
  Degenerate = 6,
  DimensionMismatch = 7,
  LayoutMismatch = 8,
  Shape = 9,
  UnknownMetric = 10,
  DuplicateMetric = 11,
  Numerical = 12,
  Divergence = 13,
  Config = 14,
  EmptyRow = 15,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

#define POSESPARSE_DEFINE_ERROR(Name, Code)                                    \
  class Name : public Error {                                                  \
   public:                                                                     \
    explicit Name(const std::string& what) : Error(ErrorCode::Code, what) {}   \
  };

POSESPARSE_DEFINE_ERROR(IoError, Io)
POSESPARSE_DEFINE_ERROR(ParseError, Parse)
POSESPARSE_DEFINE_ERROR(SchemaError, Schema)
POSESPARSE_DEFINE_ERROR(RangeError, Range)
POSESPARSE_DEFINE_ERROR(DegenerateError, Degenerate)
POSESPARSE_DEFINE_ERROR(DimensionMismatchError, DimensionMismatch)
POSESPARSE_DEFINE_ERROR(LayoutMismatchError, LayoutMismatch)
POSESPARSE_DEFINE_ERROR(ShapeError, Shape)
POSESPARSE_DEFINE_ERROR(UnknownMetricError, UnknownMetric)
POSESPARSE_DEFINE_ERROR(DuplicateMetricError, DuplicateMetric)
POSESPARSE_DEFINE_ERROR(NumericalError, Numerical)
POSESPARSE_DEFINE_ERROR(DivergenceError, Divergence)
POSESPARSE_DEFINE_ERROR(ConfigError, Config)
POSESPARSE_DEFINE_ERROR(EmptyRowError, EmptyRow)

#undef POSESPARSE_DEFINE_ERROR

}  // namespace posesparse

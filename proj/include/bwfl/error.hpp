#pragma once

#include <stdexcept>
#include <string>

namespace bwfl {

// Base of every error raised by the library. Callers that only need a
// diagnostic can catch this; tests match on the concrete subclasses.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define BWFL_DEFINE_ERROR(Name) \
  class Name : public Error {   \
   public:                      \
    using Error::Error;         \
  }

BWFL_DEFINE_ERROR(InvalidBitwidth);
BWFL_DEFINE_ERROR(NumericError);
BWFL_DEFINE_ERROR(ShapeError);
BWFL_DEFINE_ERROR(ArgumentError);
BWFL_DEFINE_ERROR(FormatError);
BWFL_DEFINE_ERROR(PartitionError);
BWFL_DEFINE_ERROR(InfeasibleLink);
BWFL_DEFINE_ERROR(InfeasibleAction);
BWFL_DEFINE_ERROR(EnvironmentInfeasible);
BWFL_DEFINE_ERROR(EmptySelection);
BWFL_DEFINE_ERROR(ParameterError);
BWFL_DEFINE_ERROR(EstimationFailure);
BWFL_DEFINE_ERROR(ConfigError);
BWFL_DEFINE_ERROR(ComparisonError);

#undef BWFL_DEFINE_ERROR

}  // namespace bwfl

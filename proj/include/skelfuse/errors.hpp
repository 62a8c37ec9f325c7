#pragma once

#include <stdexcept>
#include <string>

namespace skelfuse {

// Base of every error thrown by the library. CLI maps these to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "Error"; }
};

#define SKELFUSE_DEFINE_ERROR(Name)          \
  class Name : public Error {                \
   public:                                   \
    using Error::Error;                      \
    const char* kind() const noexcept override { return #Name; } \
  }

SKELFUSE_DEFINE_ERROR(ParseError);
SKELFUSE_DEFINE_ERROR(TopologyError);
SKELFUSE_DEFINE_ERROR(ArgumentError);
SKELFUSE_DEFINE_ERROR(LengthMismatch);
SKELFUSE_DEFINE_ERROR(IoError);
SKELFUSE_DEFINE_ERROR(SolveError);
SKELFUSE_DEFINE_ERROR(NotConnected);
SKELFUSE_DEFINE_ERROR(ShapeError);
SKELFUSE_DEFINE_ERROR(NotScalar);
SKELFUSE_DEFINE_ERROR(MissingGrad);
SKELFUSE_DEFINE_ERROR(MissingAssignment);
SKELFUSE_DEFINE_ERROR(EmptyCorrespondence);
SKELFUSE_DEFINE_ERROR(DimensionMismatch);
SKELFUSE_DEFINE_ERROR(ConfigError);

#undef SKELFUSE_DEFINE_ERROR

}  // namespace skelfuse

#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace stgrid {

// CLI exit-code buckets: validation = rejected inputs/config (exit 2),
// runtime = failure while processing accepted inputs (exit 3).
enum class ErrorKind { validation, runtime };

class Error : public std::runtime_error {
 public:
  Error(std::string name, ErrorKind kind, const std::string& message)
      : std::runtime_error(message), name_(std::move(name)), kind_(kind) {}

  const std::string& name() const noexcept { return name_; }
  ErrorKind kind() const noexcept { return kind_; }

 private:
  std::string name_;
  ErrorKind kind_;
};

#define STGRID_ERROR(NAME, KIND)                    \
  class NAME : public Error {                       \
   public:                                          \
    explicit NAME(const std::string& message)       \
        : Error(#NAME, ErrorKind::KIND, message) {} \
  }

// grid
STGRID_ERROR(MissingCell, validation);
STGRID_ERROR(DimensionMismatch, validation);
STGRID_ERROR(OutOfBounds, validation);
STGRID_ERROR(DegenerateGrid, validation);
STGRID_ERROR(TooFewFrames, validation);
// attention
STGRID_ERROR(DimMismatch, validation);
STGRID_ERROR(ShapeMismatch, validation);
STGRID_ERROR(NonFiniteLogit, runtime);
// flow
STGRID_ERROR(SizeMismatch, validation);
STGRID_ERROR(DegenerateTarget, validation);
STGRID_ERROR(ResolutionMismatch, validation);
// ctp
STGRID_ERROR(MissingCache, runtime);
STGRID_ERROR(EditorFailure, runtime);
STGRID_ERROR(MissingFlow, runtime);
// splat
STGRID_ERROR(DivergenceDetected, runtime);
// synth
STGRID_ERROR(SpecError, validation);
// metrics
STGRID_ERROR(AlignmentError, validation);
// cli / io
STGRID_ERROR(ConfigError, validation);
STGRID_ERROR(IoError, runtime);
// generic precondition breach
STGRID_ERROR(InvalidArgument, validation);

#undef STGRID_ERROR

}  // namespace stgrid

#pragma once

#include <stdexcept>
#include <string>

namespace ktpr {

/// Broad failure class; the CLI maps these onto exit codes.
enum class ErrorCategory { Usage, Data, Numerical };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

#define KTPR_DEFINE_ERROR(Name, Category)                           \
  class Name : public Error {                                       \
   public:                                                          \
    explicit Name(const std::string& what)                          \
        : Error(ErrorCategory::Category, #Name ": " + what) {}      \
  };

// Lie group / deformation numerics.
KTPR_DEFINE_ERROR(BranchAmbiguity, Numerical)
KTPR_DEFINE_ERROR(Diverged, Numerical)
KTPR_DEFINE_ERROR(OnSurface, Numerical)
KTPR_DEFINE_ERROR(TwistTooLarge, Numerical)

// Model and data validation.
KTPR_DEFINE_ERROR(InvalidTree, Data)
KTPR_DEFINE_ERROR(InvalidPose, Data)
KTPR_DEFINE_ERROR(DimensionMismatch, Data)
KTPR_DEFINE_ERROR(EmptyBoundary, Data)
KTPR_DEFINE_ERROR(GridTooSmall, Data)
KTPR_DEFINE_ERROR(SpecInvalid, Data)
KTPR_DEFINE_ERROR(InvalidMesh, Data)

// File formats.
KTPR_DEFINE_ERROR(MalformedHeader, Data)
KTPR_DEFINE_ERROR(SizeMismatch, Data)
KTPR_DEFINE_ERROR(IOFailure, Data)
KTPR_DEFINE_ERROR(NonTriangleFace, Data)
KTPR_DEFINE_ERROR(OpenMesh, Data)
KTPR_DEFINE_ERROR(BadIndex, Data)

#undef KTPR_DEFINE_ERROR

}  // namespace ktpr

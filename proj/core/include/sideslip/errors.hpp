#pragma once

#include <stdexcept>
#include <string>

namespace sideslip {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numerics
struct NotPositiveDefinite : Error { using Error::Error; };
struct NonFiniteGradient : Error { using Error::Error; };
struct SingularInnovation : Error { using Error::Error; };
struct NonPositiveInput : Error { using Error::Error; };
struct LengthMismatch : Error { using Error::Error; };

// Data pipeline
struct DegenerateSpeed : Error { using Error::Error; };
struct UnstableManoeuvre : Error { using Error::Error; };
struct EmptyDataset : Error { using Error::Error; };
struct EmptySplit : Error { using Error::Error; };
struct TooShort : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct ParseError : Error { using Error::Error; };

}  // namespace sideslip

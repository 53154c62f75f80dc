#pragma once

#include <stdexcept>
#include <string>

namespace mmgan {

// Base of every error thrown by the library. Each subclass names one failure
// kind so callers (and the CLI exit-code table) can dispatch on type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define MMGAN_DEFINE_ERROR(Name)                \
  class Name : public Error {                   \
   public:                                      \
    explicit Name(const std::string& what)      \
        : Error(std::string(#Name ": ") + what) {} \
  }

MMGAN_DEFINE_ERROR(InvalidScenario);
MMGAN_DEFINE_ERROR(IoError);
MMGAN_DEFINE_ERROR(ShapeMismatch);
MMGAN_DEFINE_ERROR(DegenerateVolume);
MMGAN_DEFINE_ERROR(EmptyForeground);
MMGAN_DEFINE_ERROR(BoxOutOfBounds);
MMGAN_DEFINE_ERROR(CorruptCache);
MMGAN_DEFINE_ERROR(ShapeError);
MMGAN_DEFINE_ERROR(EmptyMissingSet);
MMGAN_DEFINE_ERROR(NonFiniteLoss);
MMGAN_DEFINE_ERROR(ConstantImage);
MMGAN_DEFINE_ERROR(DegenerateSample);
MMGAN_DEFINE_ERROR(ConfigError);
MMGAN_DEFINE_ERROR(IncompatibleCheckpoint);

#undef MMGAN_DEFINE_ERROR

}  // namespace mmgan

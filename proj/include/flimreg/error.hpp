#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace flimreg {

enum class ErrorCode {
  MissingFile,
  DimensionMismatch,
  NegativeCount,
  IoFailure,
  CorruptHeader,
  WindowTooLarge,
  InsufficientSignal,
  BandOutOfRange,
  EmptyPlane,
  EmptyGroup,
  DegenerateHistogram,
  MissingIntensity,
  MissingExternalImage,
  EmptyForeground,
  SingularHomography,
  NonFiniteLoss,
  EmptyOverlap,
  CanvasTooSmall,
  KindMismatch,
  PointNotCovered,
  InvalidWindow,
  InvalidArgument,
  UnknownWsi,
  UnknownTile,
  UnknownProject,
  RectOutOfBounds,
  ValidationError,
  UnknownJob,
  JobNotDone,
  PersistFailure,
};

std::string_view to_string(ErrorCode code);

// Every engine failure surfaces as this exception. `field` names the
// offending input where one exists (used by the service's validation errors).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::optional<std::string> field = std::nullopt)
      : std::runtime_error(message), code_(code), field_(std::move(field)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::optional<std::string>& field() const noexcept { return field_; }

 private:
  ErrorCode code_;
  std::optional<std::string> field_;
};

}  // namespace flimreg

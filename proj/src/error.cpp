#include "flimreg/error.hpp"

namespace flimreg {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NegativeCount: return "NegativeCount";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::CorruptHeader: return "CorruptHeader";
    case ErrorCode::WindowTooLarge: return "WindowTooLarge";
    case ErrorCode::InsufficientSignal: return "InsufficientSignal";
    case ErrorCode::BandOutOfRange: return "BandOutOfRange";
    case ErrorCode::EmptyPlane: return "EmptyPlane";
    case ErrorCode::EmptyGroup: return "EmptyGroup";
    case ErrorCode::DegenerateHistogram: return "DegenerateHistogram";
    case ErrorCode::MissingIntensity: return "MissingIntensity";
    case ErrorCode::MissingExternalImage: return "MissingExternalImage";
    case ErrorCode::EmptyForeground: return "EmptyForeground";
    case ErrorCode::SingularHomography: return "SingularHomography";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::EmptyOverlap: return "EmptyOverlap";
    case ErrorCode::CanvasTooSmall: return "CanvasTooSmall";
    case ErrorCode::KindMismatch: return "KindMismatch";
    case ErrorCode::PointNotCovered: return "PointNotCovered";
    case ErrorCode::InvalidWindow: return "InvalidWindow";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::UnknownWsi: return "UnknownWsi";
    case ErrorCode::UnknownTile: return "UnknownTile";
    case ErrorCode::UnknownProject: return "UnknownProject";
    case ErrorCode::RectOutOfBounds: return "RectOutOfBounds";
    case ErrorCode::ValidationError: return "ValidationError";
    case ErrorCode::UnknownJob: return "UnknownJob";
    case ErrorCode::JobNotDone: return "JobNotDone";
    case ErrorCode::PersistFailure: return "PersistFailure";
  }
  return "Unknown";
}

}  // namespace flimreg

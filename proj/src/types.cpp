#include "flimreg/types.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "flimreg/error.hpp"

namespace flimreg {

std::size_t Hypercube::element_count(const Axes& a) noexcept {
  return static_cast<std::size_t>(a.width) * static_cast<std::size_t>(a.height) *
         static_cast<std::size_t>(a.spectral_bins) * static_cast<std::size_t>(a.time_bins);
}

void Hypercube::validate_axes(const Axes& a) {
  if (a.width <= 0 || a.height <= 0 || a.spectral_bins <= 0 || a.time_bins <= 0) {
    throw Error(ErrorCode::InvalidArgument, "hypercube dimensions must be positive");
  }
  if (!(a.wavelength_step_nm > 0.0) || !std::isfinite(a.wavelength_step_nm)) {
    throw Error(ErrorCode::InvalidArgument, "wavelength_step_nm must be positive");
  }
  if (!(a.time_bin_ps > 0.0) || !std::isfinite(a.time_bin_ps)) {
    throw Error(ErrorCode::InvalidArgument, "time_bin_ps must be positive");
  }
}

Hypercube::Hypercube(const Axes& axes) : axes_(axes) {
  validate_axes(axes_);
  counts_.assign(element_count(axes_), 0.0f);
}

Hypercube::Hypercube(const Axes& axes, std::vector<float> counts) : axes_(axes), counts_(std::move(counts)) {
  validate_axes(axes_);
  if (counts_.size() != element_count(axes_)) {
    throw Error(ErrorCode::DimensionMismatch,
                "hypercube holds " + std::to_string(counts_.size()) + " counts, dims declare " +
                    std::to_string(element_count(axes_)));
  }
  const auto bad = std::find_if(counts_.begin(), counts_.end(),
                                [](float c) { return !std::isfinite(c) || c < 0.0f; });
  if (bad != counts_.end()) {
    throw Error(ErrorCode::NegativeCount,
                "hypercube count at element " + std::to_string(bad - counts_.begin()) +
                    " is negative or non-finite");
  }
}

ScalarPlane::ScalarPlane(int width, int height, PlaneKind kind, std::optional<double> wavelength_nm)
    : width_(width), height_(height), kind_(kind), wavelength_nm_(wavelength_nm) {
  if (width <= 0 || height <= 0) throw Error(ErrorCode::InvalidArgument, "plane dimensions must be positive");
  values_.assign(static_cast<std::size_t>(width) * height, 0.0f);
}

ScalarPlane::ScalarPlane(int width, int height, PlaneKind kind, std::vector<float> values,
                         std::optional<double> wavelength_nm)
    : width_(width), height_(height), kind_(kind), wavelength_nm_(wavelength_nm), values_(std::move(values)) {
  if (width <= 0 || height <= 0) throw Error(ErrorCode::InvalidArgument, "plane dimensions must be positive");
  if (values_.size() != static_cast<std::size_t>(width) * height) {
    throw Error(ErrorCode::DimensionMismatch, "plane value count does not match width*height");
  }
  for (float v : values_) {
    if (!std::isfinite(v) || v < 0.0f) {
      throw Error(ErrorCode::InvalidArgument, "plane values must be finite and non-negative");
    }
  }
}

RgbImage::RgbImage(int width, int height, Rgb fill) : width_(width), height_(height) {
  if (width <= 0 || height <= 0) throw Error(ErrorCode::InvalidArgument, "image dimensions must be positive");
  data_.resize(static_cast<std::size_t>(width) * height * 3);
  for (std::size_t i = 0; i < data_.size(); i += 3) {
    data_[i] = fill.r;
    data_[i + 1] = fill.g;
    data_[i + 2] = fill.b;
  }
}

RgbImage::RgbImage(int width, int height, std::vector<std::uint8_t> interleaved)
    : width_(width), height_(height), data_(std::move(interleaved)) {
  if (width <= 0 || height <= 0) throw Error(ErrorCode::InvalidArgument, "image dimensions must be positive");
  if (data_.size() != static_cast<std::size_t>(width) * height * 3) {
    throw Error(ErrorCode::DimensionMismatch, "RGB buffer size does not match width*height*3");
  }
}

std::size_t BinaryMask::count() const noexcept {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

}  // namespace flimreg

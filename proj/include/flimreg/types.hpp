#pragma once

// Core image and data-cube types. All of them are plain values: copying is
// deep, and a const instance is safe to share between threads.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace flimreg {

/// Photon-count hypercube indexed (x, y, spectral band, time bin).
///
/// Storage is row-major over (x, y, s, t): the time axis is contiguous, so a
/// single pixel's decay at one band is a contiguous run of `time_bins` values.
class Hypercube {
 public:
  struct Axes {
    int width = 0;
    int height = 0;
    int spectral_bins = 0;
    int time_bins = 0;
    double wavelength_start_nm = 500.0;
    double wavelength_step_nm = 1.0;
    double time_bin_ps = 50.0;
  };

  Hypercube() = default;
  /// Validates every invariant; throws DimensionMismatch / NegativeCount /
  /// InvalidArgument on violation.
  Hypercube(const Axes& axes, std::vector<float> counts);
  /// All-zero cube.
  explicit Hypercube(const Axes& axes);

  const Axes& axes() const noexcept { return axes_; }
  int width() const noexcept { return axes_.width; }
  int height() const noexcept { return axes_.height; }
  int spectral_bins() const noexcept { return axes_.spectral_bins; }
  int time_bins() const noexcept { return axes_.time_bins; }
  double wavelength_start_nm() const noexcept { return axes_.wavelength_start_nm; }
  double wavelength_step_nm() const noexcept { return axes_.wavelength_step_nm; }
  double time_bin_ps() const noexcept { return axes_.time_bin_ps; }
  double wavelength_of(int band) const noexcept {
    return axes_.wavelength_start_nm + band * axes_.wavelength_step_nm;
  }

  std::size_t index(int x, int y, int s, int t) const noexcept {
    return ((static_cast<std::size_t>(x) * axes_.height + y) * axes_.spectral_bins + s) *
               axes_.time_bins + t;
  }
  float at(int x, int y, int s, int t) const noexcept { return counts_[index(x, y, s, t)]; }
  float& at(int x, int y, int s, int t) noexcept { return counts_[index(x, y, s, t)]; }

  std::span<const float> decay(int x, int y, int s) const noexcept {
    return {counts_.data() + index(x, y, s, 0), static_cast<std::size_t>(axes_.time_bins)};
  }
  std::span<const float> counts() const noexcept { return counts_; }
  std::span<float> counts() noexcept { return counts_; }

  static std::size_t element_count(const Axes& axes) noexcept;
  static void validate_axes(const Axes& axes);

 private:
  Axes axes_;
  std::vector<float> counts_;
};

enum class PlaneKind { intensity_counts, lifetime_ns };

/// Single-channel 2-D image, row-major (y * width + x). Zero means "no data".
class ScalarPlane {
 public:
  ScalarPlane() = default;
  ScalarPlane(int width, int height, PlaneKind kind, std::optional<double> wavelength_nm = std::nullopt);
  /// Throws InvalidArgument for non-finite or negative values and
  /// DimensionMismatch when the value count disagrees with width * height.
  ScalarPlane(int width, int height, PlaneKind kind, std::vector<float> values,
              std::optional<double> wavelength_nm = std::nullopt);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return values_.size(); }
  PlaneKind kind() const noexcept { return kind_; }
  const std::optional<double>& wavelength_nm() const noexcept { return wavelength_nm_; }
  void set_wavelength_nm(std::optional<double> wl) noexcept { wavelength_nm_ = wl; }

  float operator()(int x, int y) const noexcept { return values_[static_cast<std::size_t>(y) * width_ + x]; }
  float& operator()(int x, int y) noexcept { return values_[static_cast<std::size_t>(y) * width_ + x]; }

  std::span<const float> values() const noexcept { return values_; }
  std::span<float> values() noexcept { return values_; }

  bool same_dims(const ScalarPlane& other) const noexcept {
    return width_ == other.width_ && height_ == other.height_;
  }

  friend bool operator==(const ScalarPlane&, const ScalarPlane&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  PlaneKind kind_ = PlaneKind::intensity_counts;
  std::optional<double> wavelength_nm_;
  std::vector<float> values_;
};

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// Interleaved 8-bit RGB, row-major.
class RgbImage {
 public:
  RgbImage() = default;
  RgbImage(int width, int height, Rgb fill = {});
  RgbImage(int width, int height, std::vector<std::uint8_t> interleaved);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t pixel_count() const noexcept { return static_cast<std::size_t>(width_) * height_; }

  Rgb pixel(int x, int y) const noexcept {
    const std::size_t i = (static_cast<std::size_t>(y) * width_ + x) * 3;
    return {data_[i], data_[i + 1], data_[i + 2]};
  }
  void set_pixel(int x, int y, Rgb c) noexcept {
    const std::size_t i = (static_cast<std::size_t>(y) * width_ + x) * 3;
    data_[i] = c.r;
    data_[i + 1] = c.g;
    data_[i + 2] = c.b;
  }
  std::uint8_t channel(int x, int y, int c) const noexcept {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * 3 + c];
  }

  std::span<const std::uint8_t> data() const noexcept { return data_; }
  std::span<std::uint8_t> data() noexcept { return data_; }

  bool same_dims(const RgbImage& other) const noexcept {
    return width_ == other.width_ && height_ == other.height_;
  }

  friend bool operator==(const RgbImage&, const RgbImage&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> data_;
};

class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int width, int height, bool fill = false)
      : width_(width), height_(height), bits_(static_cast<std::size_t>(width) * height, fill ? 1 : 0) {}

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  bool operator()(int x, int y) const noexcept { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
  void set(int x, int y, bool v) noexcept { bits_[static_cast<std::size_t>(y) * width_ + x] = v ? 1 : 0; }
  std::size_t count() const noexcept;

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// Per-pixel contribution counts produced by stitching.
struct CountPlane {
  int width = 0;
  int height = 0;
  std::vector<std::uint32_t> counts;

  std::uint32_t operator()(int x, int y) const noexcept { return counts[static_cast<std::size_t>(y) * width + x]; }
  friend bool operator==(const CountPlane&, const CountPlane&) = default;
};

}  // namespace flimreg

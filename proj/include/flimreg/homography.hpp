#pragma once

// Projective transforms and the coordinate frames they act in.
//
// Normalized frame: an image of width W spans u in [-1, 1]; pixel column i
// has its centre at u = (2i + 1) / W - 1. Same for rows / v.
//
// Continuous pixel frame: pixel column i covers [i, i + 1), so its centre
// sits at x = i + 0.5. Conversion: x = (u + 1) * W / 2.
//
// Both frames put image edges (not pixel centres) at the boundary, so a
// homography expressed in the normalized frame means the same geometry at
// every image resolution.

#include <array>
#include <cstddef>

namespace flimreg {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

/// Plain row-major 3x3 matrix.
struct Mat3 {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Mat3 identity() { return {}; }
  static Mat3 translation(double tx, double ty) { return {{1, 0, tx, 0, 1, ty, 0, 0, 1}}; }
  static Mat3 scale(double sx, double sy) { return {{sx, 0, 0, 0, sy, 0, 0, 0, 1}}; }

  double operator()(int r, int c) const noexcept { return m[static_cast<std::size_t>(r * 3 + c)]; }
  double& operator()(int r, int c) noexcept { return m[static_cast<std::size_t>(r * 3 + c)]; }

  double determinant() const noexcept;
  /// Adjugate / determinant. Caller checks the determinant first.
  Mat3 inverse() const noexcept;
  /// Projective application; returns {nan, nan} when the point maps to infinity.
  Vec2 apply(Vec2 p) const noexcept;

  friend Mat3 operator*(const Mat3& a, const Mat3& b) noexcept;
  friend bool operator==(const Mat3&, const Mat3&) = default;
};

/// 3x3 projective transform with h22 fixed to 1, acting in the normalized frame.
class Homography {
 public:
  static constexpr double kMinAbsDeterminant = 1e-9;

  /// Identity.
  Homography() = default;
  /// Divides through by m(2,2); throws SingularHomography when that is zero
  /// or |det| <= 1e-9 after scaling.
  explicit Homography(const Mat3& m);
  /// From the 8 free entries h00 h01 h02 h10 h11 h12 h20 h21.
  static Homography from_params(const std::array<double, 8>& p);

  const Mat3& matrix() const noexcept { return m_; }
  std::array<double, 8> params() const noexcept;
  double determinant() const noexcept { return m_.determinant(); }
  Homography inverse() const;
  Vec2 apply(Vec2 p) const noexcept { return m_.apply(p); }

  /// Equivalent transform between continuous pixel frames of a source image
  /// (src_w x src_h) and a destination image (dst_w x dst_h).
  Mat3 to_pixel_frame(int src_w, int src_h, int dst_w, int dst_h) const noexcept;

  friend bool operator==(const Homography&, const Homography&) = default;

 private:
  Mat3 m_;
};

/// Continuous-pixel -> normalized conversion for a w x h image.
Mat3 pixel_to_normalized(int w, int h) noexcept;
/// Normalized -> continuous-pixel conversion for a w x h image.
Mat3 normalized_to_pixel(int w, int h) noexcept;

}  // namespace flimreg

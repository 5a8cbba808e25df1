#include "flimreg/homography.hpp"

#include <cmath>
#include <limits>

#include "flimreg/error.hpp"

namespace flimreg {

double Mat3::determinant() const noexcept {
  const auto& a = m;
  return a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6]) +
         a[2] * (a[3] * a[7] - a[4] * a[6]);
}

Mat3 Mat3::inverse() const noexcept {
  const auto& a = m;
  const double det = determinant();
  Mat3 r;
  r.m = {(a[4] * a[8] - a[5] * a[7]) / det, (a[2] * a[7] - a[1] * a[8]) / det, (a[1] * a[5] - a[2] * a[4]) / det,
         (a[5] * a[6] - a[3] * a[8]) / det, (a[0] * a[8] - a[2] * a[6]) / det, (a[2] * a[3] - a[0] * a[5]) / det,
         (a[3] * a[7] - a[4] * a[6]) / det, (a[1] * a[6] - a[0] * a[7]) / det, (a[0] * a[4] - a[1] * a[3]) / det};
  return r;
}

Vec2 Mat3::apply(Vec2 p) const noexcept {
  const double w = m[6] * p.x + m[7] * p.y + m[8];
  if (w == 0.0) {
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    return {nan, nan};
  }
  return {(m[0] * p.x + m[1] * p.y + m[2]) / w, (m[3] * p.x + m[4] * p.y + m[5]) / w};
}

Mat3 operator*(const Mat3& a, const Mat3& b) noexcept {
  Mat3 r;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      r(i, j) = a(i, 0) * b(0, j) + a(i, 1) * b(1, j) + a(i, 2) * b(2, j);
    }
  }
  return r;
}

Homography::Homography(const Mat3& m) : m_(m) {
  const double h22 = m(2, 2);
  if (h22 == 0.0 || !std::isfinite(h22)) {
    throw Error(ErrorCode::SingularHomography, "homography h22 is zero; cannot normalise to h22 = 1");
  }
  for (auto& v : m_.m) v /= h22;
  m_.m[8] = 1.0;
  for (double v : m_.m) {
    if (!std::isfinite(v)) throw Error(ErrorCode::SingularHomography, "homography has non-finite entries");
  }
  if (!(std::abs(m_.determinant()) > kMinAbsDeterminant)) {
    throw Error(ErrorCode::SingularHomography, "homography determinant is (near) zero");
  }
}

Homography Homography::from_params(const std::array<double, 8>& p) {
  return Homography(Mat3{{p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], 1.0}});
}

std::array<double, 8> Homography::params() const noexcept {
  return {m_.m[0], m_.m[1], m_.m[2], m_.m[3], m_.m[4], m_.m[5], m_.m[6], m_.m[7]};
}

Homography Homography::inverse() const { return Homography(m_.inverse()); }

Mat3 pixel_to_normalized(int w, int h) noexcept {
  return Mat3{{2.0 / w, 0, -1.0, 0, 2.0 / h, -1.0, 0, 0, 1}};
}

Mat3 normalized_to_pixel(int w, int h) noexcept {
  return Mat3{{w / 2.0, 0, w / 2.0, 0, h / 2.0, h / 2.0, 0, 0, 1}};
}

Mat3 Homography::to_pixel_frame(int src_w, int src_h, int dst_w, int dst_h) const noexcept {
  return normalized_to_pixel(dst_w, dst_h) * m_ * pixel_to_normalized(src_w, src_h);
}

}  // namespace flimreg

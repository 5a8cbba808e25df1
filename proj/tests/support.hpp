#pragma once

// Fixtures and independent reference implementations for the tests.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "flimreg/error.hpp"
#include "flimreg/homography.hpp"
#include "flimreg/registration.hpp"
#include "flimreg/types.hpp"

namespace testsupport {

using namespace flimreg;

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "flimreg-test-XXXXXX").string();
    if (!mkdtemp(tmpl.data())) std::abort();
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

/// Error code thrown by `fn`, or nullopt if it returns normally.
template <typename Fn>
std::optional<ErrorCode> error_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

struct Blob {
  double x, y, sigma;
  std::array<double, 3> color;
};

/// Smooth colour texture: a sum of Gaussian blobs over a mid-gray base.
inline RgbImage blob_texture(int w, int h, std::uint64_t seed, int blobs = 60, double min_sigma = 8.0,
                             double max_sigma = 22.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(0.0, w), uy(0.0, h), us(min_sigma, max_sigma), uc(-110.0, 110.0);
  std::vector<Blob> bs;
  for (int i = 0; i < blobs; ++i) bs.push_back({ux(rng), uy(rng), us(rng), {uc(rng), uc(rng), uc(rng)}});
  RgbImage img(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::array<double, 3> v{128, 128, 128};
      for (const auto& b : bs) {
        const double dx = x + 0.5 - b.x, dy = y + 0.5 - b.y;
        const double g = std::exp(-(dx * dx + dy * dy) / (2 * b.sigma * b.sigma));
        for (int c = 0; c < 3; ++c) v[c] += b.color[c] * g;
      }
      Rgb p;
      p.r = static_cast<std::uint8_t>(std::clamp(std::lround(v[0]), 1L, 255L));
      p.g = static_cast<std::uint8_t>(std::clamp(std::lround(v[1]), 1L, 255L));
      p.b = static_cast<std::uint8_t>(std::clamp(std::lround(v[2]), 1L, 255L));
      img.set_pixel(x, y, p);
    }
  }
  return img;
}

/// Smooth single-channel raster in [0.1, 0.9].
inline registration::Raster smooth_raster(int w, int h, int channels, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, 6.283185307179586), freq(0.5, 2.5);
  registration::Raster r(w, h, channels);
  for (int c = 0; c < channels; ++c) {
    std::array<double, 4> fx{}, fy{}, ph{};
    for (int k = 0; k < 4; ++k) {
      fx[k] = freq(rng);
      fy[k] = freq(rng);
      ph[k] = phase(rng);
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double u = (2.0 * x + 1.0) / w - 1.0, v = (2.0 * y + 1.0) / h - 1.0;
        double s = 0.0;
        for (int k = 0; k < 4; ++k) s += std::sin(fx[k] * 3.0 * u + fy[k] * 2.0 * v + ph[k]);
        r.at(x, y, c) = static_cast<float>(0.5 + 0.1 * s);
      }
    }
  }
  return r;
}

/// Solves the 8x8 system for the homography taking src[i] to dst[i].
inline Homography homography_from_points(const std::array<Vec2, 4>& src, const std::array<Vec2, 4>& dst) {
  double a[8][9] = {};
  for (int i = 0; i < 4; ++i) {
    const double x = src[i].x, y = src[i].y, u = dst[i].x, v = dst[i].y;
    double r0[9] = {x, y, 1, 0, 0, 0, -u * x, -u * y, u};
    double r1[9] = {0, 0, 0, x, y, 1, -v * x, -v * y, v};
    for (int k = 0; k < 9; ++k) {
      a[2 * i][k] = r0[k];
      a[2 * i + 1][k] = r1[k];
    }
  }
  for (int c = 0; c < 8; ++c) {
    int piv = c;
    for (int r = c + 1; r < 8; ++r) {
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    }
    for (int k = 0; k < 9; ++k) std::swap(a[c][k], a[piv][k]);
    for (int r = 0; r < 8; ++r) {
      if (r == c) continue;
      const double f = a[r][c] / a[c][c];
      for (int k = c; k < 9; ++k) a[r][k] -= f * a[c][k];
    }
  }
  std::array<double, 8> p{};
  for (int i = 0; i < 8; ++i) p[i] = a[i][8] / a[i][i];
  return Homography(Mat3{{p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], 1.0}});
}

inline const std::array<Vec2, 4>& unit_corners() {
  static const std::array<Vec2, 4> c{{{-1, -1}, {1, -1}, {1, 1}, {-1, 1}}};
  return c;
}

/// Mean distance in pixels between where two normalized-frame homographies
/// send the image corners, for an n x n image.
inline double corner_error_px(const Homography& a, const Homography& b, int n) {
  double s = 0.0;
  for (const auto& c : unit_corners()) {
    const Vec2 p = a.apply(c), q = b.apply(c);
    s += std::hypot(p.x - q.x, p.y - q.y) * n / 2.0;
  }
  return s / 4.0;
}

/// A x exp(-(t - t0)/tau) + b after the peak bin t0, b before it; bin centres
/// at (i + 0.5) * bin.
inline std::vector<float> exp_decay(int bins, double bin_ps, double tau_ns, double amplitude, double offset,
                                    int peak_bin) {
  std::vector<float> d(static_cast<std::size_t>(bins));
  for (int i = 0; i < bins; ++i) {
    const double t_ns = (i - peak_bin) * bin_ps * 1e-3;
    d[static_cast<std::size_t>(i)] =
        static_cast<float>(i < peak_bin ? offset : amplitude * std::exp(-t_ns / tau_ns) + offset);
  }
  return d;
}

inline ScalarPlane plane_from(int w, int h, PlaneKind kind, std::vector<float> v) {
  return ScalarPlane(w, h, kind, std::move(v));
}

inline ScalarPlane random_gray_plane(int w, int h, std::mt19937_64& rng, int lo = 0, int hi = 255) {
  std::uniform_int_distribution<int> d(lo, hi);
  std::vector<float> v(static_cast<std::size_t>(w) * h);
  for (auto& x : v) x = static_cast<float>(d(rng));
  return ScalarPlane(w, h, PlaneKind::intensity_counts, std::move(v));
}

inline RgbImage random_rgb(int w, int h, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(0, 255);
  RgbImage img(w, h);
  for (auto& b : img.data()) b = static_cast<std::uint8_t>(d(rng));
  return img;
}

}  // namespace testsupport

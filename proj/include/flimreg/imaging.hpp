#pragma once

// Histology preprocessing and lifetime rendering.

#include <array>
#include <optional>

#include "flimreg/types.hpp"

namespace flimreg::imaging {

/// Luma 0.299 R + 0.587 G + 0.114 B, rounded to the nearest integer level.
ScalarPlane to_grayscale(const RgbImage& img);

/// 255 - v on 8-bit planes.
ScalarPlane invert(const ScalarPlane& plane);

/// 256-bin CDF remapping: level v -> floor(255 * cdf(v) / N). Values are
/// rounded to the nearest level first.
ScalarPlane hist_equalize(const ScalarPlane& plane);

struct OtsuResult {
  int threshold = 0;
  BinaryMask mask;  // true where value > threshold
};

/// Exhaustive Otsu over all 256 thresholds, ties to the lowest. Throws
/// DegenerateHistogram for single-valued planes.
OtsuResult otsu_threshold(const ScalarPlane& plane);

struct MaskedHistology {
  RgbImage image;
  BinaryMask mask;
  int threshold = 0;
};

/// grayscale -> invert -> equalise -> Otsu -> multiply. Background (bright
/// slide glass) becomes black; foreground pixels keep their exact colour.
MaskedHistology mask_background(const RgbImage& histology);

enum class Colormap { jet, gray };
enum class Weighting { none, intensity };

struct LifetimeRenderSpec {
  double range_min_ns = 1.0;
  double range_max_ns = 3.0;
  Colormap colormap = Colormap::jet;
  Weighting weighting = Weighting::none;
};

/// Classic jet: piecewise-linear through these anchors (position, r, g, b).
inline constexpr std::array<std::array<double, 4>, 6> kJetAnchors{{
    {0.000, 0.0, 0.0, 0.5},
    {0.125, 0.0, 0.0, 1.0},
    {0.375, 0.0, 1.0, 1.0},
    {0.625, 1.0, 1.0, 0.0},
    {0.875, 1.0, 0.0, 0.0},
    {1.000, 0.5, 0.0, 0.0},
}};

Rgb colormap_lookup(Colormap map, double position);

/// Lifetime -> RGB. Zero lifetimes render black. With intensity weighting,
/// each pixel is scaled by the intensity value (expected in [0, 1]).
RgbImage render_lifetime(const ScalarPlane& lifetime, const ScalarPlane* intensity, const LifetimeRenderSpec& spec);

/// Gray RGB rendering of an intensity plane: values scaled so `max_value`
/// (default: plane maximum) maps to 255.
RgbImage render_gray(const ScalarPlane& plane, std::optional<double> max_value = std::nullopt);

/// Bilinear resampling with pixel-centre alignment and edge clamping.
RgbImage resize(const RgbImage& img, int width, int height);
ScalarPlane resize(const ScalarPlane& plane, int width, int height);

/// Crop [x, x+w) x [y, y+h); throws RectOutOfBounds if it leaves the image.
RgbImage crop(const RgbImage& img, int x, int y, int w, int h);

}  // namespace flimreg::imaging

#pragma once

// Homography regression by gradient descent on a partial photometric L1 loss
// through a differentiable bilinear warp.
//
// The optimiser works on G, the map from target (histology patch) coordinates
// to moving (false histology) coordinates, both in the normalized frame
// described in homography.hpp. Warping samples the moving image at G * q for
// every target pixel q, so no inversion is needed inside the loop. The result
// reports G^-1, the moving -> target homography.

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "flimreg/homography.hpp"
#include "flimreg/types.hpp"

namespace flimreg::registration {

/// Float image with values in [0, 1], `channels` interleaved per pixel.
struct Raster {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<float> data;

  Raster() = default;
  Raster(int w, int h, int c) : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, 0.0f) {}

  float at(int x, int y, int c) const noexcept {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  float& at(int x, int y, int c) noexcept { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  bool same_shape(const Raster& o) const noexcept {
    return width == o.width && height == o.height && channels == o.channels;
  }
};

enum class ColorMode { gray, rgb };
enum class Optimizer { gd, adam };

/// 8-bit RGB -> Raster (gray: rounded luma; rgb: three channels), / 255.
Raster to_raster(const RgbImage& img, ColorMode mode);
/// Gray plane with values on the 0..255 scale -> single-channel Raster.
Raster to_raster(const ScalarPlane& gray);
/// Rounds back to 8 bits. Single-channel rasters become gray RGB.
RgbImage to_rgb(const Raster& r);
/// Single-channel raster -> 0..255 plane (no rounding).
ScalarPlane to_gray_plane(const Raster& r);

/// out(q) = bilinear sample of `moving` at G * q, zero outside the image.
/// Throws SingularHomography if G fails the determinant check.
Raster warp(const Raster& moving, const Homography& g, int out_w, int out_h);
RgbImage warp(const RgbImage& moving, const Homography& g, int out_w, int out_h);
ScalarPlane warp(const ScalarPlane& moving, const Homography& g, int out_w, int out_h);

/// Centred window x window square of an image of the given size:
/// columns/rows [offset, offset + window).
struct Window {
  int x0 = 0, y0 = 0, size = 0;
};
Window centered_window(int width, int height, int window);

/// Mean |warped - target| over the centred window and all channels.
/// Throws DimensionMismatch for shape differences or window > min(w, h).
double partial_photometric_loss(const Raster& warped, const Raster& target, int window);

struct LossAndGradient {
  double loss = 0.0;
  std::array<double, 8> gradient{};  // d loss / d (h00 h01 h02 h10 h11 h12 h20 h21)
};

/// Loss of warp(moving, g) against target without materialising the warp.
double warped_loss(const Homography& g, const Raster& moving, const Raster& target, int window);
/// Loss and analytic gradient w.r.t. the 8 free entries of g. The warped
/// image has the target's size.
LossAndGradient loss_and_gradient(const Homography& g, const Raster& moving, const Raster& target, int window);
std::array<double, 8> loss_gradient(const Homography& g, const Raster& moving, const Raster& target, int window);

struct RegressionParams {
  int epochs = 200;
  double lr = 0.01;
  int decay_epoch = 100;
  double decay_factor = 0.1;
  int window = 200;
  ColorMode color_mode = ColorMode::gray;
  Optimizer optimizer = Optimizer::gd;
  int regression_dim = 256;
  // Recorded for provenance. Descent starts from the identity and involves
  // no sampling, so the result does not depend on it.
  std::uint64_t seed = 0;

  /// Throws ValidationError naming the offending field.
  void validate() const;
  friend bool operator==(const RegressionParams&, const RegressionParams&) = default;
};

struct SimilarityMetrics {
  double mse = 0.0;
  double nmi = 0.0;
  double ncc = 0.0;
};

struct RegressionResult {
  Homography homography;         // moving -> target, normalized frame
  Homography target_to_moving;   // the optimised map G
  std::vector<double> loss_trace;  // loss of the iterate at each epoch, before its step
  int best_epoch = 0;
  double final_loss = 0.0;  // loss_trace[best_epoch]: loss of the returned homography
  std::optional<SimilarityMetrics> metrics;  // absent when the registered pair has no mutual foreground
  RegressionParams params;

  /// The homography between continuous pixel frames of the
  /// regression_dim x regression_dim images.
  Mat3 pixel_homography() const;
};

struct ProgressEvent {
  int epoch = 0;
  double loss = 0.0;
  Homography g;  // target -> moving iterate the loss was measured at
};
using ProgressSink = std::function<void(const ProgressEvent&)>;

/// Resizes both images to regression_dim^2, converts per color_mode, and
/// descends from the identity for `epochs` steps. lr is multiplied by
/// decay_factor from decay_epoch on. Returns the best iterate seen.
/// Throws NonFiniteLoss if the loss stops being finite.
RegressionResult regress_homography(const RgbImage& moving, const RgbImage& target, const RegressionParams& params,
                                    const ProgressSink& sink = {});
/// Same, on rasters already at regression_dim^2 with matching channels.
RegressionResult regress_homography(const Raster& moving, const Raster& target, const RegressionParams& params,
                                    const ProgressSink& sink = {});

std::string to_string(ColorMode m);
std::string to_string(Optimizer o);
ColorMode color_mode_from_string(const std::string& s);
Optimizer optimizer_from_string(const std::string& s);

}  // namespace flimreg::registration

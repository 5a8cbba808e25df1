#pragma once

// Whole-slide mosaics from registered tiles.

#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "flimreg/homography.hpp"
#include "flimreg/imaging.hpp"
#include "flimreg/project.hpp"
#include "flimreg/types.hpp"

namespace flimreg::stitching {

/// Tile continuous-pixel frame -> WSI continuous-pixel frame:
///
///   translate(patch.x, patch.y)
///     * normalized_to_pixel(patch.w, patch.h)
///     * homography
///     * pixel_to_normalized(tile_w, tile_h)
///
/// i.e. the tile is normalized, carried onto the patch by the registered
/// homography, scaled to the patch size and offset to its position. Tile
/// dimensions default to regression_dim. Throws SingularHomography.
Mat3 compose_placement(const TilePlacement& p);
Mat3 compose_placement(const TilePlacement& p, int tile_w, int tile_h);

using TileImage = std::variant<ScalarPlane, RgbImage>;

struct CanvasSpec {
  int width = 0;
  int height = 0;
  double scale = 1.0;  // WSI pixels -> canvas pixels
};

/// Averaged mosaic before rendering. For scalar tiles `values` holds one
/// channel, for RGB tiles three (interleaved, 0..255).
struct Accumulation {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<double> values;  // averaged, 0 where uncovered
  CountPlane coverage;
};

/// Warps every tile into the canvas and averages foreground (non-zero)
/// contributions per pixel. Tiles are resampled with zero-aware bilinear
/// interpolation: background neighbours carry no weight, so tile edges are
/// not darkened. Per-tile partial canvases are merged in tile-id order, which
/// makes the result independent of the placement order.
///
/// Errors: CanvasTooSmall (a patch falls outside the scaled canvas),
/// KindMismatch (mixed scalar / RGB tiles), UnknownTile.
Accumulation accumulate(const std::vector<TilePlacement>& placements, const std::map<std::string, TileImage>& tiles,
                        const CanvasSpec& canvas, int workers = 1);

struct StitchResult {
  RgbImage image;
  CountPlane coverage;
  std::optional<ScalarPlane> averaged;  // scalar tiles only
};

struct StitchOptions {
  imaging::LifetimeRenderSpec render;
  // Needed for weighting = intensity: per-tile normalized intensity planes.
  const std::map<std::string, TileImage>* intensity_tiles = nullptr;
  const RgbImage* background = nullptr;  // canvas-sized; fills uncovered pixels
  int workers = 1;
};

/// Accumulates, then renders: scalar (lifetime) tiles go through
/// render_lifetime on the averaged plane; RGB tiles are rounded. Uncovered
/// pixels take the background pixel when given, black otherwise.
StitchResult stitch(const std::vector<TilePlacement>& placements, const std::map<std::string, TileImage>& tiles,
                    const CanvasSpec& canvas, const StitchOptions& opts = {});

/// alpha * stitched + (1 - alpha) * histology, per channel, rounded.
RgbImage blend(const RgbImage& stitched, const RgbImage& histology, double alpha);

struct SpectralPoint {
  double wavelength_nm = 0.0;
  double lifetime_ns = 0.0;  // 0 when no non-zero sample was found
};

struct ProbeOptions {
  double band_min_nm = 500.0;
  double band_max_nm = 680.0;
  int window = 5;
};

/// Mean lifetime in a window x window neighbourhood of a WSI pixel, per band.
/// Each neighbourhood pixel centre is mapped into every covering tile with
/// the inverse placement and read with nearest-pixel lookup; non-zero samples
/// from all covering tiles are averaged.
///
/// `lifetimes` maps tile id -> planes ordered by band; planes carry their
/// wavelength. Errors: PointNotCovered, InvalidWindow, UnknownTile.
std::vector<SpectralPoint> probe_cell(int x, int y, const std::vector<TilePlacement>& placements,
                                      const std::map<std::string, std::vector<ScalarPlane>>& lifetimes,
                                      const ProbeOptions& opts = {});

}  // namespace flimreg::stitching

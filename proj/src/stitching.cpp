#include "flimreg/stitching.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "flimreg/error.hpp"
#include "flimreg/parallel.hpp"

namespace flimreg::stitching {

Mat3 compose_placement(const TilePlacement& p) { return compose_placement(p, p.regression_dim, p.regression_dim); }

Mat3 compose_placement(const TilePlacement& p, int tile_w, int tile_h) {
  if (!(std::abs(p.homography.determinant()) > Homography::kMinAbsDeterminant)) {
    throw Error(ErrorCode::SingularHomography, "placement '" + p.tile_id + "' has a singular homography");
  }
  if (tile_w <= 0 || tile_h <= 0 || !p.patch.valid()) {
    throw Error(ErrorCode::InvalidArgument, "placement '" + p.tile_id + "' has an empty tile or patch");
  }
  return Mat3::translation(p.patch.x, p.patch.y) * normalized_to_pixel(p.patch.w, p.patch.h) *
         p.homography.matrix() * pixel_to_normalized(tile_w, tile_h);
}

namespace {

constexpr double kLatticeSnap = 1e-9;

double snap(double s) {
  const double r = std::round(s);
  return std::abs(s - r) < kLatticeSnap ? r : s;
}

struct TileView {
  int width = 0, height = 0, channels = 1;
  std::vector<double> values;  // interleaved
  bool foreground(int x, int y) const {
    const std::size_t base = (static_cast<std::size_t>(y) * width + x) * channels;
    for (int c = 0; c < channels; ++c) {
      if (values[base + c] != 0.0) return true;
    }
    return false;
  }
};

TileView view_of(const TileImage& img) {
  TileView v;
  if (const auto* p = std::get_if<ScalarPlane>(&img)) {
    v.width = p->width();
    v.height = p->height();
    v.values.assign(p->values().begin(), p->values().end());
  } else {
    const auto& rgb = std::get<RgbImage>(img);
    v.width = rgb.width();
    v.height = rgb.height();
    v.channels = 3;
    v.values.assign(rgb.data().begin(), rgb.data().end());
  }
  return v;
}

struct Partial {
  int x0 = 0, y0 = 0, w = 0, h = 0;
  std::vector<double> sum;
  std::vector<std::uint32_t> count;
};

// Zero-aware bilinear sample at pixel-centre index (sx, sy). Returns false
// when no foreground neighbour carries weight.
bool sample(const TileView& t, double sx, double sy, double* out) {
  const double fx0 = std::floor(sx), fy0 = std::floor(sy);
  const int x0 = static_cast<int>(fx0), y0 = static_cast<int>(fy0);
  const double fx = sx - fx0, fy = sy - fy0;
  const int xs[2] = {x0, x0 + 1};
  const int ys[2] = {y0, y0 + 1};
  const double wx[2] = {1.0 - fx, fx};
  const double wy[2] = {1.0 - fy, fy};
  double wsum = 0.0;
  double acc[3] = {0, 0, 0};
  for (int b = 0; b < 2; ++b) {
    for (int a = 0; a < 2; ++a) {
      const double w = wx[a] * wy[b];
      if (w == 0.0) continue;
      const int x = xs[a], y = ys[b];
      if (x < 0 || y < 0 || x >= t.width || y >= t.height || !t.foreground(x, y)) continue;
      wsum += w;
      const std::size_t base = (static_cast<std::size_t>(y) * t.width + x) * t.channels;
      for (int c = 0; c < t.channels; ++c) acc[c] += w * t.values[base + c];
    }
  }
  if (wsum <= 0.0) return false;
  for (int c = 0; c < t.channels; ++c) out[c] = wsum == 1.0 ? acc[c] : acc[c] / wsum;
  return true;
}

Partial warp_tile(const TileView& tile, const Mat3& tile_to_canvas, int canvas_w, int canvas_h) {
  Partial part;
  double min_x = INFINITY, min_y = INFINITY, max_x = -INFINITY, max_y = -INFINITY;
  for (const Vec2 corner : {Vec2{0, 0}, Vec2{static_cast<double>(tile.width), 0},
                            Vec2{0, static_cast<double>(tile.height)},
                            Vec2{static_cast<double>(tile.width), static_cast<double>(tile.height)}}) {
    const Vec2 q = tile_to_canvas.apply(corner);
    if (!std::isfinite(q.x) || !std::isfinite(q.y)) {
      min_x = min_y = 0;
      max_x = canvas_w;
      max_y = canvas_h;
      break;
    }
    min_x = std::min(min_x, q.x);
    min_y = std::min(min_y, q.y);
    max_x = std::max(max_x, q.x);
    max_y = std::max(max_y, q.y);
  }
  part.x0 = std::clamp(static_cast<int>(std::floor(min_x)) - 1, 0, canvas_w);
  part.y0 = std::clamp(static_cast<int>(std::floor(min_y)) - 1, 0, canvas_h);
  const int x1 = std::clamp(static_cast<int>(std::ceil(max_x)) + 1, 0, canvas_w);
  const int y1 = std::clamp(static_cast<int>(std::ceil(max_y)) + 1, 0, canvas_h);
  part.w = x1 - part.x0;
  part.h = y1 - part.y0;
  part.sum.assign(static_cast<std::size_t>(part.w) * part.h * tile.channels, 0.0);
  part.count.assign(static_cast<std::size_t>(part.w) * part.h, 0);

  const Mat3 inv = tile_to_canvas.inverse();
  double v[3];
  for (int y = 0; y < part.h; ++y) {
    for (int x = 0; x < part.w; ++x) {
      const Vec2 t = inv.apply({part.x0 + x + 0.5, part.y0 + y + 0.5});
      if (!std::isfinite(t.x) || !std::isfinite(t.y)) continue;
      if (!sample(tile, snap(t.x - 0.5), snap(t.y - 0.5), v)) continue;
      const std::size_t i = static_cast<std::size_t>(y) * part.w + x;
      part.count[i] = 1;
      for (int c = 0; c < tile.channels; ++c) part.sum[i * tile.channels + c] = v[c];
    }
  }
  return part;
}

}  // namespace

Accumulation accumulate(const std::vector<TilePlacement>& placements, const std::map<std::string, TileImage>& tiles,
                        const CanvasSpec& canvas, int workers) {
  if (canvas.width <= 0 || canvas.height <= 0 || !(canvas.scale > 0.0)) {
    throw Error(ErrorCode::CanvasTooSmall, "canvas must have positive size and scale");
  }
  std::vector<const TilePlacement*> order;
  for (const auto& p : placements) order.push_back(&p);
  std::stable_sort(order.begin(), order.end(), [](const TilePlacement* a, const TilePlacement* b) {
    return std::tie(a->tile_id, a->patch.x, a->patch.y, a->patch.w, a->patch.h) <
           std::tie(b->tile_id, b->patch.x, b->patch.y, b->patch.w, b->patch.h);
  });

  std::optional<std::size_t> kind;
  std::vector<TileView> views;
  std::vector<Mat3> transforms;
  for (const TilePlacement* p : order) {
    const auto it = tiles.find(p->tile_id);
    if (it == tiles.end()) throw Error(ErrorCode::UnknownTile, "no tile image for '" + p->tile_id + "'");
    if (kind && *kind != it->second.index()) throw Error(ErrorCode::KindMismatch, "tiles mix scalar and RGB images");
    kind = it->second.index();
    const double px1 = (p->patch.x + p->patch.w) * canvas.scale;
    const double py1 = (p->patch.y + p->patch.h) * canvas.scale;
    if (p->patch.x < 0 || p->patch.y < 0 || px1 > canvas.width + 1e-9 || py1 > canvas.height + 1e-9) {
      throw Error(ErrorCode::CanvasTooSmall, "patch of '" + p->tile_id + "' falls outside the canvas");
    }
    views.push_back(view_of(it->second));
    transforms.push_back(Mat3::scale(canvas.scale, canvas.scale) *
                         compose_placement(*p, views.back().width, views.back().height));
  }

  Accumulation acc;
  acc.width = canvas.width;
  acc.height = canvas.height;
  acc.channels = kind == 1u ? 3 : 1;
  const std::size_t pixels = static_cast<std::size_t>(canvas.width) * canvas.height;
  acc.values.assign(pixels * acc.channels, 0.0);
  acc.coverage = {canvas.width, canvas.height, std::vector<std::uint32_t>(pixels, 0)};

  std::vector<Partial> partials(views.size());
  parallel_for_chunks(static_cast<int>(views.size()), workers, [&](int b, int e) {
    for (int i = b; i < e; ++i) {
      partials[static_cast<std::size_t>(i)] =
          warp_tile(views[static_cast<std::size_t>(i)], transforms[static_cast<std::size_t>(i)], canvas.width,
                    canvas.height);
    }
  });

  for (const Partial& part : partials) {
    for (int y = 0; y < part.h; ++y) {
      for (int x = 0; x < part.w; ++x) {
        const std::size_t src = static_cast<std::size_t>(y) * part.w + x;
        if (!part.count[src]) continue;
        const std::size_t dst = static_cast<std::size_t>(part.y0 + y) * canvas.width + part.x0 + x;
        acc.coverage.counts[dst] += 1;
        for (int c = 0; c < acc.channels; ++c) acc.values[dst * acc.channels + c] += part.sum[src * acc.channels + c];
      }
    }
  }
  for (std::size_t i = 0; i < pixels; ++i) {
    const std::uint32_t n = acc.coverage.counts[i];
    if (n > 1) {
      for (int c = 0; c < acc.channels; ++c) acc.values[i * acc.channels + c] /= n;
    }
  }
  return acc;
}

namespace {

ScalarPlane to_plane(const Accumulation& acc, PlaneKind kind) {
  ScalarPlane p(acc.width, acc.height, kind);
  for (std::size_t i = 0; i < acc.values.size(); ++i) p.values()[i] = static_cast<float>(std::max(0.0, acc.values[i]));
  return p;
}

}  // namespace

StitchResult stitch(const std::vector<TilePlacement>& placements, const std::map<std::string, TileImage>& tiles,
                    const CanvasSpec& canvas, const StitchOptions& opts) {
  if (opts.background && (opts.background->width() != canvas.width || opts.background->height() != canvas.height)) {
    throw Error(ErrorCode::DimensionMismatch, "background does not match the canvas size");
  }
  const Accumulation acc = accumulate(placements, tiles, canvas, opts.workers);
  StitchResult out;
  out.coverage = acc.coverage;

  if (acc.channels == 1) {
    PlaneKind kind = PlaneKind::lifetime_ns;
    if (!tiles.empty()) kind = std::get<ScalarPlane>(tiles.begin()->second).kind();
    out.averaged = to_plane(acc, kind);
    std::optional<ScalarPlane> intensity;
    if (opts.render.weighting == imaging::Weighting::intensity) {
      if (!opts.intensity_tiles) throw Error(ErrorCode::MissingIntensity, "intensity weighting needs intensity tiles");
      intensity = to_plane(accumulate(placements, *opts.intensity_tiles, canvas, opts.workers),
                           PlaneKind::intensity_counts);
    }
    out.image = imaging::render_lifetime(*out.averaged, intensity ? &*intensity : nullptr, opts.render);
  } else {
    out.image = RgbImage(canvas.width, canvas.height);
    auto d = out.image.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      d[i] = static_cast<std::uint8_t>(std::clamp(std::lround(acc.values[i]), 0L, 255L));
    }
  }

  if (opts.background) {
    for (int y = 0; y < canvas.height; ++y) {
      for (int x = 0; x < canvas.width; ++x) {
        if (out.coverage(x, y) == 0) out.image.set_pixel(x, y, opts.background->pixel(x, y));
      }
    }
  }
  return out;
}

RgbImage blend(const RgbImage& stitched, const RgbImage& histology, double alpha) {
  if (!stitched.same_dims(histology)) throw Error(ErrorCode::DimensionMismatch, "blend inputs differ in size");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorCode::InvalidArgument, "alpha must lie in [0, 1]");
  RgbImage out(stitched.width(), stitched.height());
  const auto a = stitched.data();
  const auto b = histology.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    o[i] = static_cast<std::uint8_t>(std::clamp(std::lround(alpha * a[i] + (1.0 - alpha) * b[i]), 0L, 255L));
  }
  return out;
}

std::vector<SpectralPoint> probe_cell(int x, int y, const std::vector<TilePlacement>& placements,
                                      const std::map<std::string, std::vector<ScalarPlane>>& lifetimes,
                                      const ProbeOptions& opts) {
  if (opts.window <= 0 || opts.window % 2 == 0) {
    throw Error(ErrorCode::InvalidWindow, "probe window must be a positive odd number");
  }
  const int half = opts.window / 2;

  struct Acc {
    double wavelength = 0.0;
    double sum = 0.0;
    std::size_t n = 0;
  };
  std::map<int, Acc> bands;
  bool covered = false;

  for (const auto& p : placements) {
    if (!p.patch.contains(x, y)) continue;
    covered = true;
    const auto it = lifetimes.find(p.tile_id);
    if (it == lifetimes.end() || it->second.empty()) {
      throw Error(ErrorCode::UnknownTile, "no lifetime planes for '" + p.tile_id + "'");
    }
    const auto& planes = it->second;
    const Mat3 inv = compose_placement(p, planes.front().width(), planes.front().height()).inverse();
    for (int b = 0; b < static_cast<int>(planes.size()); ++b) {
      const ScalarPlane& plane = planes[static_cast<std::size_t>(b)];
      const double wl = plane.wavelength_nm().value_or(0.0);
      if (wl < opts.band_min_nm || wl > opts.band_max_nm) continue;
      Acc& a = bands[b];
      a.wavelength = wl;
      for (int dy = -half; dy <= half; ++dy) {
        for (int dx = -half; dx <= half; ++dx) {
          const Vec2 t = inv.apply({x + dx + 0.5, y + dy + 0.5});
          if (!std::isfinite(t.x) || !std::isfinite(t.y)) continue;
          const int tx = static_cast<int>(std::floor(snap(t.x)));
          const int ty = static_cast<int>(std::floor(snap(t.y)));
          if (tx < 0 || ty < 0 || tx >= plane.width() || ty >= plane.height()) continue;
          const float v = plane(tx, ty);
          if (v <= 0.0f) continue;
          a.sum += v;
          ++a.n;
        }
      }
    }
  }
  if (!covered) {
    throw Error(ErrorCode::PointNotCovered, "no placement covers (" + std::to_string(x) + ", " + std::to_string(y) + ")");
  }
  std::vector<SpectralPoint> curve;
  for (const auto& [band, a] : bands) {
    curve.push_back({a.wavelength, a.n ? a.sum / static_cast<double>(a.n) : 0.0});
  }
  return curve;
}

}  // namespace flimreg::stitching

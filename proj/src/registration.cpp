#include "flimreg/registration.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "flimreg/error.hpp"
#include "flimreg/imaging.hpp"
#include "flimreg/metrics.hpp"

namespace flimreg::registration {

namespace {

constexpr int kMaxChannels = 3;
// Sample positions this close to the lattice are treated as on it, so exact
// shifts reproduce pixels bit for bit.
constexpr double kLatticeSnap = 1e-9;
// Points whose projective denominator falls below this map "behind" the
// image and sample as background.
constexpr double kMinDenominator = 1e-12;

double snap(double s) {
  const double r = std::round(s);
  return std::abs(s - r) < kLatticeSnap ? r : s;
}

struct Sample {
  double value[kMaxChannels]{};
  double d_sx[kMaxChannels]{};
  double d_sy[kMaxChannels]{};
};

// Bilinear sample at pixel-centre index (sx, sy); neighbours outside the
// image read as zero. Derivatives use the cell [x0, x0 + 1] with
// x0 = floor(sx), i.e. right-continuous at lattice points.
template <bool WithDerivative>
void bilinear(const Raster& img, double sx, double sy, Sample& out) {
  const double fx0 = std::floor(sx);
  const double fy0 = std::floor(sy);
  const int x0 = static_cast<int>(fx0);
  const int y0 = static_cast<int>(fy0);
  const double fx = sx - fx0;
  const double fy = sy - fy0;
  const int C = img.channels;
  const bool in_x0 = x0 >= 0 && x0 < img.width;
  const bool in_x1 = x0 + 1 >= 0 && x0 + 1 < img.width;
  const bool in_y0 = y0 >= 0 && y0 < img.height;
  const bool in_y1 = y0 + 1 >= 0 && y0 + 1 < img.height;
  for (int c = 0; c < C; ++c) {
    const double v00 = in_x0 && in_y0 ? img.at(x0, y0, c) : 0.0;
    const double v10 = in_x1 && in_y0 ? img.at(x0 + 1, y0, c) : 0.0;
    const double v01 = in_x0 && in_y1 ? img.at(x0, y0 + 1, c) : 0.0;
    const double v11 = in_x1 && in_y1 ? img.at(x0 + 1, y0 + 1, c) : 0.0;
    if (fx == 0.0 && fy == 0.0) {
      out.value[c] = v00;
    } else {
      out.value[c] = (v00 * (1.0 - fx) + v10 * fx) * (1.0 - fy) + (v01 * (1.0 - fx) + v11 * fx) * fy;
    }
    if constexpr (WithDerivative) {
      out.d_sx[c] = (v10 - v00) * (1.0 - fy) + (v11 - v01) * fy;
      out.d_sy[c] = (v01 - v00) * (1.0 - fx) + (v11 - v10) * fx;
    }
  }
}

// Geometry of one output pixel under G.
struct Projection {
  double u, v;    // output pixel centre, normalized
  double mx, my;  // G * (u, v), normalized
  double m2;      // projective denominator
  double sx, sy;  // source pixel-centre index
  bool valid;
};

Projection project(const std::array<double, 9>& h, int i, int j, int out_w, int out_h, int in_w, int in_h) {
  Projection p{};
  p.u = (2.0 * i + 1.0) / out_w - 1.0;
  p.v = (2.0 * j + 1.0) / out_h - 1.0;
  p.m2 = h[6] * p.u + h[7] * p.v + h[8];
  p.valid = p.m2 > kMinDenominator;
  if (!p.valid) return p;
  p.mx = (h[0] * p.u + h[1] * p.v + h[2]) / p.m2;
  p.my = (h[3] * p.u + h[4] * p.v + h[5]) / p.m2;
  p.sx = snap(((p.mx + 1.0) * in_w - 1.0) / 2.0);
  p.sy = snap(((p.my + 1.0) * in_h - 1.0) / 2.0);
  p.valid = std::isfinite(p.sx) && std::isfinite(p.sy);
  return p;
}

void check_loss_shapes(const Raster& warped_shape_source, const Raster& target, int window) {
  if (warped_shape_source.channels != target.channels) {
    throw Error(ErrorCode::DimensionMismatch, "moving and target differ in channel count");
  }
  if (window <= 0 || window > std::min(target.width, target.height)) {
    throw Error(ErrorCode::DimensionMismatch, "loss window " + std::to_string(window) + " does not fit a " +
                                                  std::to_string(target.width) + "x" +
                                                  std::to_string(target.height) + " image");
  }
}

template <bool WithGradient>
LossAndGradient evaluate(const Homography& g, const Raster& moving, const Raster& target, int window) {
  check_loss_shapes(moving, target, window);
  const Window win = centered_window(target.width, target.height, window);
  const auto& h = g.matrix().m;
  const int C = target.channels;
  const double norm = 1.0 / (static_cast<double>(win.size) * win.size * C);
  const double half_w = moving.width / 2.0;
  const double half_h = moving.height / 2.0;

  LossAndGradient r;
  double loss = 0.0;
  std::array<double, 8> grad{};
  Sample s;
  for (int j = win.y0; j < win.y0 + win.size; ++j) {
    double row_loss = 0.0;
    for (int i = win.x0; i < win.x0 + win.size; ++i) {
      const Projection p = project(h, i, j, target.width, target.height, moving.width, moving.height);
      if (!p.valid) {
        for (int c = 0; c < C; ++c) row_loss += std::abs(static_cast<double>(target.at(i, j, c)));
        continue;
      }
      bilinear<WithGradient>(moving, p.sx, p.sy, s);
      double g_mx = 0.0, g_my = 0.0;
      for (int c = 0; c < C; ++c) {
        const double diff = s.value[c] - target.at(i, j, c);
        row_loss += std::abs(diff);
        if constexpr (WithGradient) {
          const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
          g_mx += sign * s.d_sx[c];
          g_my += sign * s.d_sy[c];
        }
      }
      if constexpr (WithGradient) {
        g_mx *= half_w;
        g_my *= half_h;
        const double inv = 1.0 / p.m2;
        grad[0] += g_mx * p.u * inv;
        grad[1] += g_mx * p.v * inv;
        grad[2] += g_mx * inv;
        grad[3] += g_my * p.u * inv;
        grad[4] += g_my * p.v * inv;
        grad[5] += g_my * inv;
        const double persp = -(g_mx * p.mx + g_my * p.my) * inv;
        grad[6] += persp * p.u;
        grad[7] += persp * p.v;
      }
    }
    loss += row_loss;
  }
  r.loss = loss * norm;
  if constexpr (WithGradient) {
    for (int k = 0; k < 8; ++k) r.gradient[static_cast<std::size_t>(k)] = grad[static_cast<std::size_t>(k)] * norm;
  }
  return r;
}

}  // namespace

Raster to_raster(const RgbImage& img, ColorMode mode) {
  if (mode == ColorMode::gray) return to_raster(imaging::to_grayscale(img));
  Raster r(img.width(), img.height(), 3);
  const auto d = img.data();
  for (std::size_t i = 0; i < d.size(); ++i) r.data[i] = d[i] / 255.0f;
  return r;
}

Raster to_raster(const ScalarPlane& gray) {
  Raster r(gray.width(), gray.height(), 1);
  const auto v = gray.values();
  for (std::size_t i = 0; i < v.size(); ++i) r.data[i] = v[i] / 255.0f;
  return r;
}

RgbImage to_rgb(const Raster& r) {
  RgbImage out(r.width, r.height);
  auto to_byte = [](float v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0f), 0L, 255L)); };
  for (int y = 0; y < r.height; ++y) {
    for (int x = 0; x < r.width; ++x) {
      if (r.channels == 1) {
        const auto g = to_byte(r.at(x, y, 0));
        out.set_pixel(x, y, {g, g, g});
      } else {
        out.set_pixel(x, y, {to_byte(r.at(x, y, 0)), to_byte(r.at(x, y, 1)), to_byte(r.at(x, y, 2))});
      }
    }
  }
  return out;
}

ScalarPlane to_gray_plane(const Raster& r) {
  if (r.channels != 1) throw Error(ErrorCode::InvalidArgument, "expected a single-channel raster");
  ScalarPlane out(r.width, r.height, PlaneKind::intensity_counts);
  for (std::size_t i = 0; i < r.data.size(); ++i) out.values()[i] = std::clamp(r.data[i], 0.0f, 1.0f) * 255.0f;
  return out;
}

Raster warp(const Raster& moving, const Homography& g, int out_w, int out_h) {
  if (!(std::abs(g.determinant()) > Homography::kMinAbsDeterminant)) {
    throw Error(ErrorCode::SingularHomography, "warp needs an invertible homography");
  }
  if (out_w <= 0 || out_h <= 0) throw Error(ErrorCode::InvalidArgument, "warp output size must be positive");
  Raster out(out_w, out_h, moving.channels);
  const auto& h = g.matrix().m;
  Sample s;
  for (int j = 0; j < out_h; ++j) {
    for (int i = 0; i < out_w; ++i) {
      const Projection p = project(h, i, j, out_w, out_h, moving.width, moving.height);
      if (!p.valid) continue;
      bilinear<false>(moving, p.sx, p.sy, s);
      for (int c = 0; c < moving.channels; ++c) out.at(i, j, c) = static_cast<float>(s.value[c]);
    }
  }
  return out;
}

RgbImage warp(const RgbImage& moving, const Homography& g, int out_w, int out_h) {
  Raster r(moving.width(), moving.height(), 3);
  const auto d = moving.data();
  std::copy(d.begin(), d.end(), r.data.begin());
  const Raster w = warp(r, g, out_w, out_h);
  RgbImage out(out_w, out_h);
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    o[i] = static_cast<std::uint8_t>(std::clamp(std::lround(w.data[i]), 0L, 255L));
  }
  return out;
}

ScalarPlane warp(const ScalarPlane& moving, const Homography& g, int out_w, int out_h) {
  Raster r(moving.width(), moving.height(), 1);
  std::copy(moving.values().begin(), moving.values().end(), r.data.begin());
  const Raster w = warp(r, g, out_w, out_h);
  ScalarPlane out(out_w, out_h, moving.kind(), moving.wavelength_nm());
  for (std::size_t i = 0; i < w.data.size(); ++i) out.values()[i] = std::max(0.0f, w.data[i]);
  return out;
}

Window centered_window(int width, int height, int window) {
  return {(width - window) / 2, (height - window) / 2, window};
}

double partial_photometric_loss(const Raster& warped, const Raster& target, int window) {
  if (!warped.same_shape(target)) throw Error(ErrorCode::DimensionMismatch, "warped and target differ in shape");
  check_loss_shapes(warped, target, window);
  const Window win = centered_window(target.width, target.height, window);
  double sum = 0.0;
  for (int j = win.y0; j < win.y0 + win.size; ++j) {
    for (int i = win.x0; i < win.x0 + win.size; ++i) {
      for (int c = 0; c < target.channels; ++c) {
        sum += std::abs(static_cast<double>(warped.at(i, j, c)) - static_cast<double>(target.at(i, j, c)));
      }
    }
  }
  return sum / (static_cast<double>(win.size) * win.size * target.channels);
}

double warped_loss(const Homography& g, const Raster& moving, const Raster& target, int window) {
  return evaluate<false>(g, moving, target, window).loss;
}

LossAndGradient loss_and_gradient(const Homography& g, const Raster& moving, const Raster& target, int window) {
  return evaluate<true>(g, moving, target, window);
}

std::array<double, 8> loss_gradient(const Homography& g, const Raster& moving, const Raster& target, int window) {
  return evaluate<true>(g, moving, target, window).gradient;
}

void RegressionParams::validate() const {
  if (epochs < 1) throw Error(ErrorCode::ValidationError, "epochs must be >= 1", "epochs");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw Error(ErrorCode::ValidationError, "lr must be positive", "lr");
  if (decay_epoch < 0) throw Error(ErrorCode::ValidationError, "decay_epoch must be >= 0", "decay_epoch");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) {
    throw Error(ErrorCode::ValidationError, "decay_factor must lie in (0, 1]", "decay_factor");
  }
  if (regression_dim < 8) throw Error(ErrorCode::ValidationError, "regression_dim must be >= 8", "regression_dim");
  if (window <= 0 || window > regression_dim) {
    throw Error(ErrorCode::ValidationError, "window must lie in (0, regression_dim]", "window");
  }
}

Mat3 RegressionResult::pixel_homography() const {
  const int n = params.regression_dim;
  return homography.to_pixel_frame(n, n, n, n);
}

RegressionResult regress_homography(const RgbImage& moving, const RgbImage& target, const RegressionParams& params,
                                    const ProgressSink& sink) {
  params.validate();
  const int n = params.regression_dim;
  return regress_homography(to_raster(imaging::resize(moving, n, n), params.color_mode),
                            to_raster(imaging::resize(target, n, n), params.color_mode), params, sink);
}

RegressionResult regress_homography(const Raster& moving, const Raster& target, const RegressionParams& params,
                                    const ProgressSink& sink) {
  params.validate();
  const int n = params.regression_dim;
  if (moving.width != n || moving.height != n || !moving.same_shape(target)) {
    throw Error(ErrorCode::DimensionMismatch, "regression inputs must both be regression_dim^2 with equal channels");
  }

  RegressionResult result;
  result.params = params;
  result.loss_trace.reserve(static_cast<std::size_t>(params.epochs));

  std::array<double, 8> theta = Homography().params();
  std::array<double, 8> m1{}, m2{};
  constexpr double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  Homography best;
  double best_loss = INFINITY;

  for (int epoch = 0; epoch < params.epochs; ++epoch) {
    const Homography g = Homography::from_params(theta);
    const LossAndGradient lg = loss_and_gradient(g, moving, target, params.window);
    if (!std::isfinite(lg.loss)) {
      throw Error(ErrorCode::NonFiniteLoss, "loss became non-finite at epoch " + std::to_string(epoch));
    }
    result.loss_trace.push_back(lg.loss);
    if (lg.loss < best_loss) {
      best_loss = lg.loss;
      best = g;
      result.best_epoch = epoch;
    }
    if (sink) sink(ProgressEvent{epoch, lg.loss, g});

    const double lr = epoch >= params.decay_epoch ? params.lr * params.decay_factor : params.lr;
    if (params.optimizer == Optimizer::gd) {
      for (std::size_t k = 0; k < 8; ++k) theta[k] -= lr * lg.gradient[k];
    } else {
      const double t = epoch + 1.0;
      for (std::size_t k = 0; k < 8; ++k) {
        m1[k] = beta1 * m1[k] + (1.0 - beta1) * lg.gradient[k];
        m2[k] = beta2 * m2[k] + (1.0 - beta2) * lg.gradient[k] * lg.gradient[k];
        const double mhat = m1[k] / (1.0 - std::pow(beta1, t));
        const double vhat = m2[k] / (1.0 - std::pow(beta2, t));
        theta[k] -= lr * mhat / (std::sqrt(vhat) + adam_eps);
      }
    }
    for (double v : theta) {
      if (!std::isfinite(v)) {
        throw Error(ErrorCode::NonFiniteLoss, "homography diverged after epoch " + std::to_string(epoch));
      }
    }
  }

  result.target_to_moving = best;
  result.homography = best.inverse();
  result.final_loss = best_loss;

  Raster moving_gray = moving, target_gray = target;
  if (moving.channels == 3) {
    moving_gray = to_raster(imaging::to_grayscale(to_rgb(moving)));
    target_gray = to_raster(imaging::to_grayscale(to_rgb(target)));
  }
  const ScalarPlane a = to_gray_plane(warp(moving_gray, best, n, n));
  const ScalarPlane b = to_gray_plane(target_gray);
  try {
    result.metrics = SimilarityMetrics{metrics::mse(a, b), metrics::nmi(a, b), metrics::ncc(a, b)};
  } catch (const Error& e) {
    if (e.code() != ErrorCode::EmptyOverlap) throw;
  }
  return result;
}

std::string to_string(ColorMode m) { return m == ColorMode::gray ? "gray" : "rgb"; }
std::string to_string(Optimizer o) { return o == Optimizer::gd ? "gd" : "adam"; }

ColorMode color_mode_from_string(const std::string& s) {
  if (s == "gray") return ColorMode::gray;
  if (s == "rgb") return ColorMode::rgb;
  throw Error(ErrorCode::ValidationError, "color_mode must be 'gray' or 'rgb'", "color_mode");
}

Optimizer optimizer_from_string(const std::string& s) {
  if (s == "gd") return Optimizer::gd;
  if (s == "adam") return Optimizer::adam;
  throw Error(ErrorCode::ValidationError, "optimizer must be 'gd' or 'adam'", "optimizer");
}

}  // namespace flimreg::registration

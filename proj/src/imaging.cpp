#include "flimreg/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "flimreg/error.hpp"

namespace flimreg::imaging {

namespace {

int level_of(float v) { return std::clamp(static_cast<int>(std::lround(v)), 0, 255); }

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

std::array<std::uint64_t, 256> histogram(const ScalarPlane& plane) {
  std::array<std::uint64_t, 256> h{};
  for (float v : plane.values()) ++h[static_cast<std::size_t>(level_of(v))];
  return h;
}

}  // namespace

ScalarPlane to_grayscale(const RgbImage& img) {
  ScalarPlane out(img.width(), img.height(), PlaneKind::intensity_counts);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const Rgb c = img.pixel(x, y);
      // Integer form of round(0.299 R + 0.587 G + 0.114 B).
      out(x, y) = static_cast<float>((299 * c.r + 587 * c.g + 114 * c.b + 500) / 1000);
    }
  }
  return out;
}

ScalarPlane invert(const ScalarPlane& plane) {
  ScalarPlane out = plane;
  for (float& v : out.values()) v = 255.0f - static_cast<float>(level_of(v));
  return out;
}

ScalarPlane hist_equalize(const ScalarPlane& plane) {
  const auto h = histogram(plane);
  const std::uint64_t n = plane.size();
  std::array<float, 256> lut{};
  std::uint64_t cdf = 0;
  for (int v = 0; v < 256; ++v) {
    cdf += h[static_cast<std::size_t>(v)];
    lut[static_cast<std::size_t>(v)] = static_cast<float>(255 * cdf / n);
  }
  ScalarPlane out = plane;
  for (float& v : out.values()) v = lut[static_cast<std::size_t>(level_of(v))];
  return out;
}

OtsuResult otsu_threshold(const ScalarPlane& plane) {
  const auto h = histogram(plane);
  if (std::count_if(h.begin(), h.end(), [](std::uint64_t c) { return c > 0; }) < 2) {
    throw Error(ErrorCode::DegenerateHistogram, "Otsu needs at least two distinct levels");
  }
  const std::uint64_t n = plane.size();
  std::uint64_t total_sum = 0;
  for (int v = 0; v < 256; ++v) total_sum += h[static_cast<std::size_t>(v)] * static_cast<std::uint64_t>(v);

  // Between-class variance up to the constant 1/N^2:
  //   (S0 * N - S * n0)^2 / (n0 * n1)
  // with class 0 = levels <= t. Numerator is exact in 128-bit integers.
  int best_t = 0;
  long double best = -1.0L;
  std::uint64_t n0 = 0, s0 = 0;
  for (int t = 0; t < 256; ++t) {
    n0 += h[static_cast<std::size_t>(t)];
    s0 += h[static_cast<std::size_t>(t)] * static_cast<std::uint64_t>(t);
    const std::uint64_t n1 = n - n0;
    long double score = 0.0L;
    if (n0 > 0 && n1 > 0) {
      const __int128 diff = static_cast<__int128>(s0) * n - static_cast<__int128>(total_sum) * n0;
      const long double d = static_cast<long double>(diff);
      score = d * d / (static_cast<long double>(n0) * static_cast<long double>(n1));
    }
    if (score > best) {
      best = score;
      best_t = t;
    }
  }

  OtsuResult r{best_t, BinaryMask(plane.width(), plane.height())};
  for (int y = 0; y < plane.height(); ++y) {
    for (int x = 0; x < plane.width(); ++x) r.mask.set(x, y, level_of(plane(x, y)) > best_t);
  }
  return r;
}

MaskedHistology mask_background(const RgbImage& histology) {
  const ScalarPlane prepared = hist_equalize(invert(to_grayscale(histology)));
  OtsuResult otsu = otsu_threshold(prepared);
  RgbImage out(histology.width(), histology.height());
  for (int y = 0; y < histology.height(); ++y) {
    for (int x = 0; x < histology.width(); ++x) {
      if (otsu.mask(x, y)) out.set_pixel(x, y, histology.pixel(x, y));
    }
  }
  return {std::move(out), std::move(otsu.mask), otsu.threshold};
}

Rgb colormap_lookup(Colormap map, double position) {
  const double p = std::clamp(position, 0.0, 1.0);
  if (map == Colormap::gray) {
    const auto g = to_byte(255.0 * p);
    return {g, g, g};
  }
  std::size_t k = 1;
  while (k + 1 < kJetAnchors.size() && p > kJetAnchors[k][0]) ++k;
  const auto& a = kJetAnchors[k - 1];
  const auto& b = kJetAnchors[k];
  const double f = (p - a[0]) / (b[0] - a[0]);
  return {to_byte(255.0 * (a[1] + f * (b[1] - a[1]))), to_byte(255.0 * (a[2] + f * (b[2] - a[2]))),
          to_byte(255.0 * (a[3] + f * (b[3] - a[3])))};
}

RgbImage render_lifetime(const ScalarPlane& lifetime, const ScalarPlane* intensity, const LifetimeRenderSpec& spec) {
  if (!(spec.range_min_ns < spec.range_max_ns)) {
    throw Error(ErrorCode::InvalidArgument, "render range must satisfy min < max");
  }
  if (spec.weighting == Weighting::intensity) {
    if (!intensity) throw Error(ErrorCode::MissingIntensity, "intensity weighting needs an intensity plane");
    if (!intensity->same_dims(lifetime)) {
      throw Error(ErrorCode::DimensionMismatch, "intensity and lifetime planes differ in size");
    }
  }
  RgbImage out(lifetime.width(), lifetime.height());
  const double span = spec.range_max_ns - spec.range_min_ns;
  for (int y = 0; y < lifetime.height(); ++y) {
    for (int x = 0; x < lifetime.width(); ++x) {
      const double tau = lifetime(x, y);
      if (tau <= 0.0) continue;
      const double pos = (std::clamp(tau, spec.range_min_ns, spec.range_max_ns) - spec.range_min_ns) / span;
      Rgb c = colormap_lookup(spec.colormap, pos);
      if (spec.weighting == Weighting::intensity) {
        const double w = std::clamp(static_cast<double>((*intensity)(x, y)), 0.0, 1.0);
        c = {to_byte(c.r * w), to_byte(c.g * w), to_byte(c.b * w)};
      }
      out.set_pixel(x, y, c);
    }
  }
  return out;
}

RgbImage render_gray(const ScalarPlane& plane, std::optional<double> max_value) {
  double peak = max_value.value_or(0.0);
  if (!max_value) {
    for (float v : plane.values()) peak = std::max(peak, static_cast<double>(v));
  }
  RgbImage out(plane.width(), plane.height());
  if (!(peak > 0.0)) return out;
  for (int y = 0; y < plane.height(); ++y) {
    for (int x = 0; x < plane.width(); ++x) {
      const auto g = to_byte(255.0 * std::min(1.0, plane(x, y) / peak));
      out.set_pixel(x, y, {g, g, g});
    }
  }
  return out;
}

namespace {

struct Tap {
  int i0, i1;
  double f;
};

// Source taps for each destination index (pixel-centre alignment, clamped).
std::vector<Tap> taps(int src, int dst) {
  std::vector<Tap> t(static_cast<std::size_t>(dst));
  const double scale = static_cast<double>(src) / dst;
  for (int i = 0; i < dst; ++i) {
    double s = (i + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(src - 1));
    const int i0 = static_cast<int>(std::floor(s));
    const int i1 = std::min(i0 + 1, src - 1);
    t[static_cast<std::size_t>(i)] = {i0, i1, s - i0};
  }
  return t;
}

template <typename Get, typename Put>
void resample(int sw, int sh, int dw, int dh, int channels, Get get, Put put) {
  const auto tx = taps(sw, dw);
  const auto ty = taps(sh, dh);
  for (int y = 0; y < dh; ++y) {
    const Tap& a = ty[static_cast<std::size_t>(y)];
    for (int x = 0; x < dw; ++x) {
      const Tap& b = tx[static_cast<std::size_t>(x)];
      for (int c = 0; c < channels; ++c) {
        const double top = get(b.i0, a.i0, c) * (1.0 - b.f) + get(b.i1, a.i0, c) * b.f;
        const double bot = get(b.i0, a.i1, c) * (1.0 - b.f) + get(b.i1, a.i1, c) * b.f;
        put(x, y, c, top * (1.0 - a.f) + bot * a.f);
      }
    }
  }
}

}  // namespace

RgbImage resize(const RgbImage& img, int width, int height) {
  if (width <= 0 || height <= 0) throw Error(ErrorCode::InvalidArgument, "resize target must be positive");
  if (width == img.width() && height == img.height()) return img;
  RgbImage out(width, height);
  auto dst = out.data();
  resample(
      img.width(), img.height(), width, height, 3,
      [&](int x, int y, int c) { return static_cast<double>(img.channel(x, y, c)); },
      [&](int x, int y, int c, double v) {
        dst[(static_cast<std::size_t>(y) * width + x) * 3 + static_cast<std::size_t>(c)] = to_byte(v);
      });
  return out;
}

ScalarPlane resize(const ScalarPlane& plane, int width, int height) {
  if (width <= 0 || height <= 0) throw Error(ErrorCode::InvalidArgument, "resize target must be positive");
  if (width == plane.width() && height == plane.height()) return plane;
  ScalarPlane out(width, height, plane.kind(), plane.wavelength_nm());
  resample(
      plane.width(), plane.height(), width, height, 1,
      [&](int x, int y, int) { return static_cast<double>(plane(x, y)); },
      [&](int x, int y, int, double v) { out(x, y) = static_cast<float>(std::max(0.0, v)); });
  return out;
}

RgbImage crop(const RgbImage& img, int x, int y, int w, int h) {
  if (w <= 0 || h <= 0 || x < 0 || y < 0 || x + w > img.width() || y + h > img.height()) {
    throw Error(ErrorCode::RectOutOfBounds, "crop rectangle leaves the image");
  }
  RgbImage out(w, h);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) out.set_pixel(c, r, img.pixel(x + c, y + r));
  }
  return out;
}

}  // namespace flimreg::imaging

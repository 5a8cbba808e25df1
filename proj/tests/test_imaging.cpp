#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>

#include "doctest.h"
#include "flimreg/imaging.hpp"
#include "support.hpp"

using namespace flimreg;
using namespace flimreg::imaging;
using testsupport::error_of;

namespace {

// Brute force: between-class variance for every threshold, ties to lowest.
int otsu_reference(const ScalarPlane& p) {
  int best = 0;
  double best_v = -1;
  const double n = static_cast<double>(p.size());
  for (int t = 0; t < 256; ++t) {
    double n0 = 0, n1 = 0, s0 = 0, s1 = 0;
    for (float v : p.values()) {
      if (v <= t) {
        n0 += 1;
        s0 += v;
      } else {
        n1 += 1;
        s1 += v;
      }
    }
    if (n0 == 0 || n1 == 0) continue;
    const double m0 = s0 / n0, m1 = s1 / n1;
    const double var = n0 / n * n1 / n * (m0 - m1) * (m0 - m1);
    if (var > best_v * (1 + 1e-12)) {
      best_v = var;
      best = t;
    }
  }
  return best;
}

}  // namespace

TEST_CASE("grayscale uses rounded BT.601 luma") {
  RgbImage img(3, 1);
  img.set_pixel(0, 0, {255, 0, 0});
  img.set_pixel(1, 0, {0, 255, 0});
  img.set_pixel(2, 0, {10, 20, 30});
  const auto g = to_grayscale(img);
  CHECK(g(0, 0) == 76.0f);   // 76.245
  CHECK(g(1, 0) == 150.0f);  // 149.685
  CHECK(g(2, 0) == 18.0f);   // 18.15
  const auto inv = invert(g);
  CHECK(inv(0, 0) == 179.0f);
  CHECK(invert(inv) == g);
}

TEST_CASE("equalisation follows floor(255 * cdf / N)") {
  const ScalarPlane p(4, 1, PlaneKind::intensity_counts, std::vector<float>{10, 10, 50, 200});
  const auto e = hist_equalize(p);
  CHECK(e(0, 0) == 127.0f);  // 255 * 2 / 4
  CHECK(e(2, 0) == 191.0f);  // 255 * 3 / 4
  CHECK(e(3, 0) == 255.0f);
}

TEST_CASE("equalisation preserves order") {
  std::mt19937_64 rng(2);
  const auto p = testsupport::random_gray_plane(20, 20, rng, 30, 90);
  const auto e = hist_equalize(p);
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t j = 0; j < p.size(); j += 17) {
      if (p.values()[i] < p.values()[j]) CHECK(e.values()[i] <= e.values()[j]);
    }
  }
}

TEST_CASE("otsu matches brute force and splits two levels between them") {
  std::mt19937_64 rng(17);
  for (int k = 0; k < 200; ++k) {
    const auto p = testsupport::random_gray_plane(12, 9, rng, k % 100, 120 + k % 100);
    CHECK(otsu_threshold(p).threshold == otsu_reference(p));
  }
  const ScalarPlane two(2, 2, PlaneKind::intensity_counts, std::vector<float>{20, 20, 200, 200});
  const auto r = otsu_threshold(two);
  CHECK(r.threshold == 20);
  CHECK(r.mask.count() == 2);
  CHECK(r.mask(0, 1));
  CHECK(error_of([] { otsu_threshold(ScalarPlane(3, 3, PlaneKind::intensity_counts)); }) ==
        ErrorCode::DegenerateHistogram);
}

TEST_CASE("background masking keeps tissue colours exactly and blacks out glass") {
  RgbImage img(8, 8, Rgb{245, 244, 247});
  for (int y = 2; y < 6; ++y)
    for (int x = 1; x < 5; ++x) img.set_pixel(x, y, {150, 60, 140});
  img.set_pixel(6, 6, {90, 30, 120});
  const auto m = mask_background(img);
  CHECK(m.mask.count() == 17);
  CHECK(m.image.pixel(2, 3) == Rgb{150, 60, 140});
  CHECK(m.image.pixel(6, 6) == Rgb{90, 30, 120});
  CHECK(m.image.pixel(0, 0) == Rgb{});
  CHECK(m.image.pixel(7, 7) == Rgb{});
}

TEST_CASE("jet anchors and clamping") {
  CHECK(colormap_lookup(Colormap::jet, 0.0) == Rgb{0, 0, 128});
  CHECK(colormap_lookup(Colormap::jet, 0.125) == Rgb{0, 0, 255});
  CHECK(colormap_lookup(Colormap::jet, 0.375) == Rgb{0, 255, 255});
  CHECK(colormap_lookup(Colormap::jet, 0.5) == Rgb{128, 255, 128});
  CHECK(colormap_lookup(Colormap::jet, 0.625) == Rgb{255, 255, 0});
  CHECK(colormap_lookup(Colormap::jet, 0.875) == Rgb{255, 0, 0});
  CHECK(colormap_lookup(Colormap::jet, 1.0) == Rgb{128, 0, 0});
  CHECK(colormap_lookup(Colormap::jet, 7.0) == Rgb{128, 0, 0});
  CHECK(colormap_lookup(Colormap::gray, 0.5) == Rgb{128, 128, 128});
}

TEST_CASE("lifetime rendering: range, zeros and intensity weighting") {
  const ScalarPlane lt(4, 1, PlaneKind::lifetime_ns, std::vector<float>{0, 1, 2, 5});
  LifetimeRenderSpec spec;
  const auto img = render_lifetime(lt, nullptr, spec);
  CHECK(img.pixel(0, 0) == Rgb{});
  CHECK(img.pixel(1, 0) == colormap_lookup(Colormap::jet, 0.0));
  CHECK(img.pixel(2, 0) == colormap_lookup(Colormap::jet, 0.5));
  CHECK(img.pixel(3, 0) == colormap_lookup(Colormap::jet, 1.0));
  spec.weighting = Weighting::intensity;
  const ScalarPlane w(4, 1, PlaneKind::intensity_counts, std::vector<float>{1, 1, 0.5f, 0});
  const auto weighted = render_lifetime(lt, &w, spec);
  CHECK(weighted.pixel(2, 0) == Rgb{64, 128, 64});
  CHECK(weighted.pixel(3, 0) == Rgb{});
  CHECK(error_of([&] { render_lifetime(lt, nullptr, spec); }) == ErrorCode::MissingIntensity);
  spec.range_min_ns = 3;
  spec.range_max_ns = 3;
  CHECK(error_of([&] { render_lifetime(lt, &w, spec); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("resize samples at pixel centres") {
  RgbImage img(2, 1);
  img.set_pixel(0, 0, {0, 0, 0});
  img.set_pixel(1, 0, {200, 100, 40});
  const auto up = resize(img, 4, 1);
  // centres at 0.25*(2*i+1) - 0.5 = -0.25, 0.25, 0.75, 1.25 (clamped)
  CHECK(up.pixel(0, 0) == Rgb{0, 0, 0});
  CHECK(up.pixel(1, 0) == Rgb{50, 25, 10});
  CHECK(up.pixel(2, 0) == Rgb{150, 75, 30});
  CHECK(up.pixel(3, 0) == Rgb{200, 100, 40});
  std::mt19937_64 rng(1);
  const auto r = testsupport::random_rgb(16, 16, rng);
  const auto half = resize(r, 8, 8);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double mean = (r.channel(2 * x, 2 * y, c) + r.channel(2 * x + 1, 2 * y, c) +
                             r.channel(2 * x, 2 * y + 1, c) + r.channel(2 * x + 1, 2 * y + 1, c)) /
                            4.0;
        CHECK(std::abs(half.channel(x, y, c) - mean) <= 0.5 + 1e-9);
      }
    }
  }
  CHECK(resize(r, 16, 16) == r);
  CHECK(error_of([&] { resize(r, 0, 3); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("crop copies exactly and checks bounds") {
  std::mt19937_64 rng(9);
  const auto img = testsupport::random_rgb(10, 8, rng);
  const auto c = crop(img, 3, 2, 4, 5);
  CHECK(c.width() == 4);
  CHECK(c.pixel(0, 0) == img.pixel(3, 2));
  CHECK(c.pixel(3, 4) == img.pixel(6, 6));
  CHECK(error_of([&] { crop(img, 7, 0, 4, 1); }) == ErrorCode::RectOutOfBounds);
  CHECK(error_of([&] { crop(img, -1, 0, 4, 1); }) == ErrorCode::RectOutOfBounds);
}

TEST_CASE("gray rendering scales to the maximum") {
  const ScalarPlane p(3, 1, PlaneKind::intensity_counts, std::vector<float>{0, 50, 100});
  const auto g = render_gray(p);
  CHECK(g.pixel(1, 0) == Rgb{128, 128, 128});
  CHECK(g.pixel(2, 0) == Rgb{255, 255, 255});
  CHECK(render_gray(p, 50.0).pixel(2, 0) == Rgb{255, 255, 255});
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "flimreg/io.hpp"
#include "flimreg/workflow.hpp"
#include "scene.hpp"

using namespace flimreg;
using namespace testsupport;
using nlohmann::json;

namespace {

Hypercube small_cube(std::uint64_t seed = 1) {
  static const Scene scene(3);
  CubeSpec c;
  c.size = 24;
  c.bands = 8;
  const TileSpec t{"t", {100, 100, 96, 96}, Homography()};
  return tile_cube(scene, t, c, seed);
}

}  // namespace

TEST_CASE("reconstruct_bands equals smoothing, reconstruction and filtering done by hand") {
  const Hypercube cube = small_cube();
  workflow::ReconstructSettings s;
  s.smooth_window = 3;
  const std::vector<int> bands{1, 4};
  const auto out = workflow::reconstruct_bands(cube, bands, s);
  REQUIRE(out.size() == 2);
  const Hypercube smoothed = reconstruction::spectral_smooth(cube, 3);
  for (std::size_t i = 0; i < 2; ++i) {
    const auto pp = reconstruction::reconstruct_planes(smoothed, bands[i]);
    const auto f = reconstruction::photon_noise_filter(pp.intensity, pp.lifetime);
    CHECK(out[i].band == bands[i]);
    CHECK(out[i].wavelength_nm == cube.wavelength_of(bands[i]));
    CHECK(out[i].filtered);
    CHECK(out[i].intensity == f.intensity);
    CHECK(out[i].lifetime == f.lifetime);
    CHECK(out[i].report.pixels_zeroed == f.report.pixels_zeroed);
  }
  s.filter = false;
  s.smooth_window = 1;
  const auto raw = workflow::reconstruct_bands(cube, std::vector<int>{2}, s);
  CHECK(raw[0].intensity == reconstruction::reconstruct_planes(cube, 2).intensity);
  CHECK_FALSE(raw[0].filtered);
}

TEST_CASE("band lookup by wavelength") {
  const Hypercube::Axes axes{4, 4, 10, 8, 500.0, 12.0, 50.0};
  CHECK(workflow::band_for_wavelength(axes, 500.0) == 0);
  CHECK(workflow::band_for_wavelength(axes, 517.0) == 1);
  CHECK(workflow::band_for_wavelength(axes, 519.0) == 2);
  CHECK(workflow::band_for_wavelength(axes, 608.0) == 9);
  CHECK(workflow::band_for_wavelength(axes, 494.5) == 0);
  CHECK(error_of([&] { workflow::band_for_wavelength(axes, 493.0); }) == ErrorCode::BandOutOfRange);
  CHECK(error_of([&] { workflow::band_for_wavelength(axes, 700.0); }) == ErrorCode::BandOutOfRange);
}

TEST_CASE("planes directories round trip") {
  TempDir dir;
  const auto bands = workflow::reconstruct_bands(small_cube(), std::vector<int>{0, 3}, {});
  workflow::write_planes_dir(dir / "planes", "tileX", bands);
  const auto back = workflow::read_planes_dir(dir / "planes");
  CHECK(back.tile_id == "tileX");
  REQUIRE(back.bands.size() == 2);
  CHECK(back.bands[1].band == 3);
  CHECK(back.bands[1].lifetime == bands[1].lifetime);
  CHECK(back.bands[1].intensity == bands[1].intensity);
  std::ifstream in(dir / "planes" / "planes.json");
  const auto j = json::parse(in);
  CHECK(j["schema"] == "flimreg.planes/1");
  CHECK(j["bands"][1]["lifetime"] == "band_003_lifetime.flp");
  CHECK(workflow::nearest_band(back.bands, 540.0) == 1);
  CHECK(error_of([&] { workflow::read_planes_dir(dir / "missing"); }) == ErrorCode::MissingFile);
}

TEST_CASE("false histology is the masked translation of the tile render") {
  TempDir dir;
  const auto b = workflow::reconstruct_bands(small_cube(), std::vector<int>{2}, {})[0];
  std::mt19937_64 rng(1);
  write_png(random_rgb(30, 30, rng), dir / "ref.png");
  const auto cfg = translation::TranslatorConfig::parse("baseline:" + (dir / "ref.png").string());
  const auto fh = workflow::false_histology(b.lifetime, b.intensity, cfg, "t");
  const auto norm = reconstruction::normalize_group(std::vector<ScalarPlane>{b.intensity});
  const auto render = imaging::render_lifetime(b.lifetime, &norm[0], workflow::translation_render_spec());
  CHECK(workflow::render_tile(b.lifetime, b.intensity) == render);
  CHECK(fh == translation::apply_intensity_mask(translation::translate(render, cfg, "t"), b.intensity));
}

TEST_CASE("registration parameters from JSON") {
  const auto p = workflow::params_from_json({{"epochs", 20}, {"lr", 0.5}, {"optimizer", "adam"}});
  CHECK(p.epochs == 20);
  CHECK(p.lr == 0.5);
  CHECK(p.optimizer == registration::Optimizer::adam);
  CHECK(p.window == 200);
  CHECK(workflow::params_from_json(workflow::params_to_json(p)) == p);
  auto field_of = [](const json& j) -> std::string {
    try {
      workflow::params_from_json(j);
    } catch (const Error& e) {
      return e.field().value_or("?");
    }
    return "";
  };
  CHECK(field_of({{"epochs", "many"}}) == "epochs");
  CHECK(field_of({{"window", 999}}) == "window");
  CHECK(field_of({{"color_mode", "cmyk"}}) == "color_mode");
  CHECK(field_of({{"lr", 0}}) == "lr");
}

TEST_CASE("result JSON carries the homographies, trace and parameters") {
  const auto img = blob_texture(32, 32, 2, 10);
  registration::RegressionParams p;
  p.regression_dim = 32;
  p.window = 24;
  p.epochs = 7;
  const auto r = registration::regress_homography(img, img, p);
  const json j = workflow::result_to_json(r);
  CHECK(j["loss_trace"].size() == 7);
  CHECK(homography_from_json(j["homography"]) == r.homography);
  CHECK(j["pixel_homography"].size() == 9);
  CHECK(j["params"]["epochs"] == 7);
  CHECK(j["best_epoch"] == r.best_epoch);
  CHECK(j["metrics"]["ncc"].get<double>() == doctest::Approx(1.0));
}

TEST_CASE("preview blends the warped moving image with the target") {
  const auto img = blob_texture(32, 32, 4, 10);
  registration::RegressionParams p;
  p.regression_dim = 32;
  p.window = 24;
  p.epochs = 1;
  const auto r = registration::regress_homography(img, img, p);
  CHECK(workflow::render_preview(r, img, img, 0.3, workflow::PreviewMode::color) == img);
  const RgbImage black(32, 32);
  const auto half = workflow::render_preview(r, img, black, 0.5, workflow::PreviewMode::color);
  CHECK(half == stitching::blend(img, black, 0.5));
  const auto gray = workflow::render_preview(r, img, img, 1.0, workflow::PreviewMode::gray);
  CHECK(gray == workflow::to_luma(img));
  CHECK(error_of([] { workflow::preview_mode_from_string("sepia"); }).has_value());
}

TEST_CASE("mosaic sidecar and canvas") {
  const auto bands = workflow::reconstruct_bands(small_cube(), std::vector<int>{0, 1, 2, 3, 4}, {});
  CHECK(error_of([] {
          workflow::ReconstructSettings s;
          s.smooth_window = 9;
          workflow::reconstruct_bands(small_cube(), std::vector<int>{0}, s);
        }) == ErrorCode::WindowTooLarge);
  std::map<std::string, std::vector<workflow::BandPlanes>> tiles{{"a", bands}, {"b", bands}};
  const std::vector<TilePlacement> ps{{"a", {0, 0, 40, 40}, Homography(), 24}, {"b", {20, 10, 40, 40}, Homography(), 24}};
  workflow::MosaicSettings m;
  m.wavelength_nm = 525;
  m.scale = 0.5;
  const RgbImage wsi(80, 60, Rgb{200, 200, 200});
  m.blend_alpha = 0.5;
  const auto mosaic = workflow::build_mosaic(ps, tiles, 80, 60, &wsi, m);
  CHECK(mosaic.image.width() == 40);
  CHECK(mosaic.image.height() == 30);
  CHECK(mosaic.sidecar["schema"] == "flimreg.mosaic/1");
  CHECK(mosaic.sidecar["bands"]["a"]["band"] == 2);
  CHECK(mosaic.sidecar["canvas"]["scale"] == 0.5);
  CHECK(mosaic.sidecar["covered_pixels"].get<int>() > 0);
  CHECK(mosaic.image.pixel(39, 29) == stitching::blend(RgbImage(1, 1), RgbImage(1, 1, Rgb{200, 200, 200}), 0.5).pixel(0, 0));
}

TEST_CASE("curve CSV format") {
  std::ostringstream os;
  workflow::write_curve_csv(os, {{500.0, 1.25}, {512.0, 0.0}});
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "wavelength_nm,lifetime_ns");
  std::getline(is, line);
  CHECK(line.rfind("500,1.25", 0) == 0);
  CHECK(workflow::weighting_from_string("none") == imaging::Weighting::none);
  CHECK(error_of([] { workflow::weighting_from_string("alpha"); }) == ErrorCode::InvalidArgument);
}

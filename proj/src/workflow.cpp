#include "flimreg/workflow.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>

#include "flimreg/error.hpp"
#include "flimreg/io.hpp"

namespace flimreg::workflow {

using nlohmann::json;
namespace fs = std::filesystem;

std::vector<BandPlanes> reconstruct_bands(const Hypercube& cube, std::span<const int> bands,
                                          const ReconstructSettings& settings) {
  const Hypercube smoothed =
      settings.smooth_window > 1 ? reconstruction::spectral_smooth(cube, settings.smooth_window) : cube;
  reconstruction::ReconstructOptions opts{settings.fit, settings.workers};
  std::vector<BandPlanes> out;
  out.reserve(bands.size());
  for (int band : bands) {
    auto planes = reconstruction::reconstruct_planes(smoothed, band, opts);
    BandPlanes b;
    b.band = band;
    b.wavelength_nm = cube.wavelength_of(band);
    if (settings.filter) {
      auto f = reconstruction::photon_noise_filter(planes.intensity, planes.lifetime);
      b.intensity = std::move(f.intensity);
      b.lifetime = std::move(f.lifetime);
      b.report = f.report;
      b.filtered = true;
    } else {
      b.intensity = std::move(planes.intensity);
      b.lifetime = std::move(planes.lifetime);
    }
    out.push_back(std::move(b));
  }
  return out;
}

int band_for_wavelength(const Hypercube::Axes& axes, double nm) {
  const double pos = (nm - axes.wavelength_start_nm) / axes.wavelength_step_nm;
  if (!std::isfinite(pos) || pos < -0.5 || pos > axes.spectral_bins - 0.5) {
    throw Error(ErrorCode::BandOutOfRange, "wavelength " + std::to_string(nm) + " nm is outside the cube");
  }
  return std::clamp(static_cast<int>(std::lround(pos)), 0, axes.spectral_bins - 1);
}

std::size_t nearest_band(const std::vector<BandPlanes>& bands, double nm) {
  if (bands.empty()) throw Error(ErrorCode::BandOutOfRange, "no reconstructed bands");
  std::size_t best = 0;
  for (std::size_t i = 1; i < bands.size(); ++i) {
    if (std::abs(bands[i].wavelength_nm - nm) < std::abs(bands[best].wavelength_nm - nm)) best = i;
  }
  return best;
}

namespace {

std::string band_file(int band, const char* what) {
  std::ostringstream s;
  s << "band_" << std::setw(3) << std::setfill('0') << band << "_" << what << ".flp";
  return s.str();
}

}  // namespace

json band_summary(const BandPlanes& b) {
  std::size_t fitted = 0;
  for (float v : b.lifetime.values()) fitted += v > 0.0f;
  json j = {{"band", b.band},
            {"wavelength_nm", b.wavelength_nm},
            {"intensity", band_file(b.band, "intensity")},
            {"lifetime", band_file(b.band, "lifetime")},
            {"fitted_pixels", fitted},
            {"filtered", b.filtered}};
  if (b.filtered) {
    j["n_hat"] = b.report.n_hat;
    j["threshold"] = b.report.threshold;
    j["pixels_zeroed"] = b.report.pixels_zeroed;
  }
  return j;
}

void write_planes_dir(const fs::path& dir, const std::string& tile_id, const std::vector<BandPlanes>& bands) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + dir.string() + ": " + ec.message());
  json index = {{"schema", "flimreg.planes/1"}, {"tile_id", tile_id}, {"bands", json::array()}};
  for (const auto& b : bands) {
    save_plane(b.intensity, dir / band_file(b.band, "intensity"));
    save_plane(b.lifetime, dir / band_file(b.band, "lifetime"));
    index["bands"].push_back(band_summary(b));
  }
  write_file_atomic(dir / "planes.json", index.dump(2) + "\n");
}

PlanesDir read_planes_dir(const fs::path& dir) {
  std::ifstream in(dir / "planes.json");
  if (!in) throw Error(ErrorCode::MissingFile, "no planes.json in " + dir.string());
  PlanesDir out;
  try {
    const json index = json::parse(in);
    out.tile_id = index.at("tile_id").get<std::string>();
    for (const auto& e : index.at("bands")) {
      BandPlanes b;
      b.band = e.at("band").get<int>();
      b.wavelength_nm = e.at("wavelength_nm").get<double>();
      b.filtered = e.value("filtered", false);
      b.intensity = load_plane(dir / e.at("intensity").get<std::string>());
      b.lifetime = load_plane(dir / e.at("lifetime").get<std::string>());
      out.bands.push_back(std::move(b));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptHeader, (dir / "planes.json").string() + ": " + e.what());
  }
  return out;
}

RgbImage render_tile(const ScalarPlane& lifetime, const ScalarPlane& intensity,
                     const imaging::LifetimeRenderSpec& spec) {
  if (spec.weighting == imaging::Weighting::none) return imaging::render_lifetime(lifetime, nullptr, spec);
  const ScalarPlane one[] = {intensity};
  const auto normalized = reconstruction::normalize_group(one);
  return imaging::render_lifetime(lifetime, &normalized.front(), spec);
}

RgbImage false_histology(const ScalarPlane& lifetime, const ScalarPlane& intensity,
                         const translation::TranslatorConfig& cfg, const std::string& tile_id,
                         const imaging::LifetimeRenderSpec& spec) {
  const RgbImage render = render_tile(lifetime, intensity, spec);
  return translation::apply_intensity_mask(translation::translate(render, cfg, tile_id), intensity);
}

imaging::MaskedHistology histology_target(const RgbImage& wsi, const PatchRect& patch) {
  return imaging::mask_background(imaging::crop(wsi, patch.x, patch.y, patch.w, patch.h));
}

PreviewMode preview_mode_from_string(const std::string& s) {
  if (s == "gray") return PreviewMode::gray;
  if (s == "color") return PreviewMode::color;
  throw Error(ErrorCode::InvalidArgument, "preview mode must be gray or color", "mode");
}

RgbImage to_luma(const RgbImage& img) {
  const ScalarPlane g = imaging::to_grayscale(img);
  RgbImage out(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const auto v = static_cast<std::uint8_t>(g(x, y));
      out.set_pixel(x, y, {v, v, v});
    }
  }
  return out;
}

RgbImage render_preview(const registration::RegressionResult& result, const RgbImage& moving, const RgbImage& target,
                        double alpha, PreviewMode mode) {
  const int n = result.params.regression_dim;
  RgbImage warped = registration::warp(imaging::resize(moving, n, n), result.target_to_moving, n, n);
  RgbImage base = imaging::resize(target, n, n);
  if (mode == PreviewMode::gray) {
    warped = to_luma(warped);
    base = to_luma(base);
  }
  return stitching::blend(warped, base, alpha);
}

json params_to_json(const registration::RegressionParams& p) {
  return {{"epochs", p.epochs},
          {"lr", p.lr},
          {"decay_epoch", p.decay_epoch},
          {"decay_factor", p.decay_factor},
          {"window", p.window},
          {"color_mode", registration::to_string(p.color_mode)},
          {"optimizer", registration::to_string(p.optimizer)},
          {"regression_dim", p.regression_dim},
          {"seed", p.seed}};
}

registration::RegressionParams params_from_json(const json& j) {
  registration::RegressionParams p;
  if (j.is_null()) return p;
  if (!j.is_object()) throw Error(ErrorCode::ValidationError, "params must be an object", "params");
  auto field = [&](const char* key, auto& dst) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(dst);
    } catch (const json::exception&) {
      throw Error(ErrorCode::ValidationError, std::string("bad value for ") + key, key);
    }
  };
  field("epochs", p.epochs);
  field("lr", p.lr);
  field("decay_epoch", p.decay_epoch);
  field("decay_factor", p.decay_factor);
  field("window", p.window);
  field("regression_dim", p.regression_dim);
  field("seed", p.seed);
  try {
    if (j.contains("color_mode")) p.color_mode = registration::color_mode_from_string(j.at("color_mode").get<std::string>());
  } catch (const std::exception&) {
    throw Error(ErrorCode::ValidationError, "color_mode must be gray or rgb", "color_mode");
  }
  try {
    if (j.contains("optimizer")) p.optimizer = registration::optimizer_from_string(j.at("optimizer").get<std::string>());
  } catch (const std::exception&) {
    throw Error(ErrorCode::ValidationError, "optimizer must be gd or adam", "optimizer");
  }
  p.validate();
  return p;
}

json result_to_json(const registration::RegressionResult& r) {
  json j = {{"homography", homography_to_json(r.homography)},
            {"target_to_moving", homography_to_json(r.target_to_moving)},
            {"pixel_homography", r.pixel_homography().m},
            {"loss_trace", r.loss_trace},
            {"best_epoch", r.best_epoch},
            {"final_loss", r.final_loss},
            {"params", params_to_json(r.params)}};
  if (r.metrics) {
    j["metrics"] = {{"mse", r.metrics->mse}, {"nmi", r.metrics->nmi}, {"ncc", r.metrics->ncc}};
  } else {
    j["metrics"] = nullptr;
  }
  return j;
}

json render_spec_to_json(const imaging::LifetimeRenderSpec& s) {
  return {{"range_min_ns", s.range_min_ns},
          {"range_max_ns", s.range_max_ns},
          {"colormap", s.colormap == imaging::Colormap::jet ? "jet" : "gray"},
          {"weighting", s.weighting == imaging::Weighting::intensity ? "intensity" : "none"}};
}

imaging::Weighting weighting_from_string(const std::string& s) {
  if (s == "none") return imaging::Weighting::none;
  if (s == "intensity") return imaging::Weighting::intensity;
  throw Error(ErrorCode::InvalidArgument, "weighting must be none or intensity", "weighting");
}

Mosaic build_mosaic(const std::vector<TilePlacement>& placements, const std::map<std::string, std::vector<BandPlanes>>& tiles,
                    int wsi_width, int wsi_height, const RgbImage* wsi, const MosaicSettings& settings) {
  if (!(settings.scale > 0.0)) throw Error(ErrorCode::InvalidArgument, "scale must be positive", "scale");
  const stitching::CanvasSpec canvas{static_cast<int>(std::lround(wsi_width * settings.scale)),
                                     static_cast<int>(std::lround(wsi_height * settings.scale)), settings.scale};

  std::map<std::string, stitching::TileImage> lifetimes;
  std::vector<std::string> ids;
  std::vector<ScalarPlane> intensities;
  json bands = json::object();
  for (const auto& p : placements) {
    if (lifetimes.count(p.tile_id)) continue;
    const auto it = tiles.find(p.tile_id);
    if (it == tiles.end()) throw Error(ErrorCode::UnknownTile, "no planes for tile '" + p.tile_id + "'");
    const BandPlanes& b = it->second[nearest_band(it->second, settings.wavelength_nm)];
    lifetimes.emplace(p.tile_id, b.lifetime);
    ids.push_back(p.tile_id);
    intensities.push_back(b.intensity);
    bands[p.tile_id] = {{"band", b.band}, {"wavelength_nm", b.wavelength_nm}};
  }

  std::map<std::string, stitching::TileImage> intensity_tiles;
  stitching::StitchOptions opts;
  opts.render = settings.render;
  opts.workers = settings.workers;
  if (settings.render.weighting == imaging::Weighting::intensity && !intensities.empty()) {
    auto normalized = reconstruction::normalize_group(intensities);
    for (std::size_t i = 0; i < ids.size(); ++i) intensity_tiles.emplace(ids[i], std::move(normalized[i]));
    opts.intensity_tiles = &intensity_tiles;
  }

  Mosaic m;
  m.stitched = stitching::stitch(placements, lifetimes, canvas, opts);
  m.image = m.stitched.image;
  if (settings.blend_alpha) {
    if (!wsi) throw Error(ErrorCode::InvalidArgument, "blending needs the whole-slide image", "blend_alpha");
    m.image = stitching::blend(m.image, imaging::resize(*wsi, canvas.width, canvas.height), *settings.blend_alpha);
  }
  std::size_t covered = 0;
  for (auto c : m.stitched.coverage.counts) covered += c > 0;
  m.sidecar = {{"schema", "flimreg.mosaic/1"},
               {"canvas", {{"width", canvas.width}, {"height", canvas.height}, {"scale", canvas.scale}}},
               {"wavelength_nm", settings.wavelength_nm},
               {"bands", bands},
               {"placements", placements},
               {"render", render_spec_to_json(settings.render)},
               {"blend_alpha", settings.blend_alpha ? json(*settings.blend_alpha) : json(nullptr)},
               {"covered_pixels", covered}};
  return m;
}

std::vector<stitching::SpectralPoint> probe(int x, int y, const std::vector<TilePlacement>& placements,
                                            const std::map<std::string, std::vector<BandPlanes>>& tiles,
                                            const stitching::ProbeOptions& opts) {
  std::map<std::string, std::vector<ScalarPlane>> lifetimes;
  for (const auto& [id, bands] : tiles) {
    auto& v = lifetimes[id];
    for (const auto& b : bands) {
      ScalarPlane l = b.lifetime;
      l.set_wavelength_nm(b.wavelength_nm);
      v.push_back(std::move(l));
    }
  }
  return stitching::probe_cell(x, y, placements, lifetimes, opts);
}

void write_curve_csv(std::ostream& out, const std::vector<stitching::SpectralPoint>& curve) {
  out << "wavelength_nm,lifetime_ns\n";
  out << std::setprecision(10);
  for (const auto& p : curve) out << p.wavelength_nm << ',' << p.lifetime_ns << '\n';
}

}  // namespace flimreg::workflow

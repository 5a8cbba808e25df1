#pragma once

// Pipeline stages shared by the CLI and the service. Each function is a
// straight composition of engine calls; nothing here keeps state.

#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "flimreg/imaging.hpp"
#include "flimreg/project.hpp"
#include "flimreg/reconstruction.hpp"
#include "flimreg/registration.hpp"
#include "flimreg/stitching.hpp"
#include "flimreg/translation.hpp"
#include "flimreg/types.hpp"
#include "json.hpp"

namespace flimreg::workflow {

// ---- reconstruction ------------------------------------------------------

struct ReconstructSettings {
  int smooth_window = 8;  // <= 1 disables spectral smoothing
  bool filter = true;
  reconstruction::FitOptions fit;
  int workers = 1;
};

struct BandPlanes {
  int band = 0;
  double wavelength_nm = 0.0;
  ScalarPlane intensity;  // photon counts, filtered when `filtered`
  ScalarPlane lifetime;
  bool filtered = false;
  reconstruction::FilterReport report;
};

/// Smooths the cube once, then reconstructs each requested band.
std::vector<BandPlanes> reconstruct_bands(const Hypercube& cube, std::span<const int> bands,
                                          const ReconstructSettings& settings);

/// Band whose centre wavelength is nearest to `nm`. BandOutOfRange when `nm`
/// lies more than half a step outside the cube's range.
int band_for_wavelength(const Hypercube::Axes& axes, double nm);

/// Index of the entry nearest to `nm`; BandOutOfRange when `bands` is empty.
std::size_t nearest_band(const std::vector<BandPlanes>& bands, double nm);

/// Planes directory: `planes.json` index plus one FLIMPLN1 file per plane.
void write_planes_dir(const std::filesystem::path& dir, const std::string& tile_id,
                      const std::vector<BandPlanes>& bands);
struct PlanesDir {
  std::string tile_id;
  std::vector<BandPlanes> bands;
};
PlanesDir read_planes_dir(const std::filesystem::path& dir);

nlohmann::json band_summary(const BandPlanes& b);

// ---- translation ---------------------------------------------------------

/// Render fed to the translator: lifetime through the colormap, weighted by
/// the tile's own normalised intensity.
inline imaging::LifetimeRenderSpec translation_render_spec() {
  imaging::LifetimeRenderSpec s;
  s.weighting = imaging::Weighting::intensity;
  return s;
}

RgbImage render_tile(const ScalarPlane& lifetime, const ScalarPlane& intensity,
                     const imaging::LifetimeRenderSpec& spec = translation_render_spec());

/// render -> translate -> intensity mask.
RgbImage false_histology(const ScalarPlane& lifetime, const ScalarPlane& intensity,
                         const translation::TranslatorConfig& cfg, const std::string& tile_id,
                         const imaging::LifetimeRenderSpec& spec = translation_render_spec());

// ---- registration --------------------------------------------------------

/// Histology side of a registration: the patch cropped from the WSI with its
/// background masked.
imaging::MaskedHistology histology_target(const RgbImage& wsi, const PatchRect& patch);

enum class PreviewMode { gray, color };
/// Gray RGB image from the luma of `img`.
RgbImage to_luma(const RgbImage& img);
PreviewMode preview_mode_from_string(const std::string& s);

/// The moving image warped onto the target frame, blended with the target at
/// alpha (1 = warped false histology only). Both are shown at regression_dim.
/// Gray mode blends luma.
RgbImage render_preview(const registration::RegressionResult& result, const RgbImage& moving,
                        const RgbImage& target, double alpha, PreviewMode mode);

nlohmann::json params_to_json(const registration::RegressionParams& p);
/// Missing keys keep their defaults. Throws ValidationError naming the field.
registration::RegressionParams params_from_json(const nlohmann::json& j);
nlohmann::json result_to_json(const registration::RegressionResult& r);

// ---- stitching -----------------------------------------------------------

struct MosaicSettings {
  double wavelength_nm = 0.0;
  double scale = 1.0;
  imaging::LifetimeRenderSpec render;
  std::optional<double> blend_alpha;  // blend with the WSI when set
  int workers = 1;
};

struct Mosaic {
  RgbImage image;  // final (blended when requested)
  stitching::StitchResult stitched;
  nlohmann::json sidecar;
};

/// Canvas is the WSI size times `scale`. Each tile contributes the band
/// nearest to the requested wavelength; intensities are normalised jointly
/// across tiles. `wsi` is needed for blending.
Mosaic build_mosaic(const std::vector<TilePlacement>& placements,
                    const std::map<std::string, std::vector<BandPlanes>>& tiles, int wsi_width, int wsi_height,
                    const RgbImage* wsi, const MosaicSettings& settings);

std::vector<stitching::SpectralPoint> probe(int x, int y, const std::vector<TilePlacement>& placements,
                                            const std::map<std::string, std::vector<BandPlanes>>& tiles,
                                            const stitching::ProbeOptions& opts);

/// CSV with header `wavelength_nm,lifetime_ns`.
void write_curve_csv(std::ostream& out, const std::vector<stitching::SpectralPoint>& curve);

nlohmann::json render_spec_to_json(const imaging::LifetimeRenderSpec& s);
/// "none" | "intensity"; InvalidArgument otherwise.
imaging::Weighting weighting_from_string(const std::string& s);

}  // namespace flimreg::workflow

#pragma once

// FLIM render -> false histology. The trained generator lives outside this
// project; its outputs come in through the external importer.

#include <filesystem>
#include <string>
#include <string_view>

#include "flimreg/types.hpp"

namespace flimreg::translation {

enum class TranslatorMode { baseline_palette, external_import };

struct TranslatorConfig {
  TranslatorMode mode = TranslatorMode::baseline_palette;
  // baseline: reference histology PNG; external: directory of <tile_id>.png
  std::filesystem::path reference;

  /// Parses "baseline:<ref.png>" or "external:<dir>".
  static TranslatorConfig parse(std::string_view spec);
  std::string to_string() const;
};

/// Baseline: per-channel histogram matching of the render's foreground
/// (non-black pixels) onto the reference's foreground; black stays black.
/// External: loads `<reference>/<tile_id>.png` and checks its size matches.
RgbImage translate(const RgbImage& flim_render, const TranslatorConfig& cfg, std::string_view tile_id);

/// Histogram matching against an in-memory reference.
RgbImage match_histograms(const RgbImage& source, const RgbImage& reference);

/// Blacks out pixels whose intensity is zero.
RgbImage apply_intensity_mask(const RgbImage& false_histology, const ScalarPlane& intensity);

}  // namespace flimreg::translation

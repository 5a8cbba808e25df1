#include "flimreg/translation.hpp"

#include <array>
#include <cstdint>

#include "flimreg/error.hpp"
#include "flimreg/io.hpp"

namespace flimreg::translation {

TranslatorConfig TranslatorConfig::parse(std::string_view spec) {
  const auto colon = spec.find(':');
  if (colon == std::string_view::npos || colon + 1 == spec.size()) {
    throw Error(ErrorCode::InvalidArgument, "translator must be 'baseline:<ref.png>' or 'external:<dir>'", "translator");
  }
  const std::string_view mode = spec.substr(0, colon);
  TranslatorConfig cfg;
  cfg.reference = std::string(spec.substr(colon + 1));
  if (mode == "baseline") {
    cfg.mode = TranslatorMode::baseline_palette;
  } else if (mode == "external") {
    cfg.mode = TranslatorMode::external_import;
  } else {
    throw Error(ErrorCode::InvalidArgument, "unknown translator mode '" + std::string(mode) + "'", "translator");
  }
  return cfg;
}

std::string TranslatorConfig::to_string() const {
  return (mode == TranslatorMode::baseline_palette ? "baseline:" : "external:") + reference.string();
}

namespace {

bool is_foreground(Rgb c) { return c.r != 0 || c.g != 0 || c.b != 0; }

}  // namespace

RgbImage match_histograms(const RgbImage& source, const RgbImage& reference) {
  std::array<std::array<std::uint64_t, 256>, 3> hs{}, hr{};
  std::uint64_t ns = 0, nr = 0;
  for (int y = 0; y < source.height(); ++y) {
    for (int x = 0; x < source.width(); ++x) {
      const Rgb c = source.pixel(x, y);
      if (!is_foreground(c)) continue;
      ++ns;
      ++hs[0][c.r];
      ++hs[1][c.g];
      ++hs[2][c.b];
    }
  }
  for (int y = 0; y < reference.height(); ++y) {
    for (int x = 0; x < reference.width(); ++x) {
      const Rgb c = reference.pixel(x, y);
      if (!is_foreground(c)) continue;
      ++nr;
      ++hr[0][c.r];
      ++hr[1][c.g];
      ++hr[2][c.b];
    }
  }
  if (ns == 0) throw Error(ErrorCode::EmptyForeground, "render has no foreground pixels");
  if (nr == 0) throw Error(ErrorCode::EmptyForeground, "reference has no foreground pixels");

  // For source level v: the smallest reference level r whose CDF reaches the
  // source CDF at v. Compared as cross-multiplied integers to stay exact.
  std::array<std::array<std::uint8_t, 256>, 3> lut{};
  for (int ch = 0; ch < 3; ++ch) {
    std::uint64_t cs = 0, cr = 0;
    int r = 0;
    cr = hr[static_cast<std::size_t>(ch)][0];
    for (int v = 0; v < 256; ++v) {
      cs += hs[static_cast<std::size_t>(ch)][static_cast<std::size_t>(v)];
      while (r < 255 && static_cast<unsigned __int128>(cr) * ns < static_cast<unsigned __int128>(cs) * nr) {
        ++r;
        cr += hr[static_cast<std::size_t>(ch)][static_cast<std::size_t>(r)];
      }
      lut[static_cast<std::size_t>(ch)][static_cast<std::size_t>(v)] = static_cast<std::uint8_t>(r);
    }
  }

  RgbImage out(source.width(), source.height());
  for (int y = 0; y < source.height(); ++y) {
    for (int x = 0; x < source.width(); ++x) {
      const Rgb c = source.pixel(x, y);
      if (!is_foreground(c)) continue;
      out.set_pixel(x, y, {lut[0][c.r], lut[1][c.g], lut[2][c.b]});
    }
  }
  return out;
}

RgbImage translate(const RgbImage& flim_render, const TranslatorConfig& cfg, std::string_view tile_id) {
  if (cfg.mode == TranslatorMode::external_import) {
    const auto path = cfg.reference / (std::string(tile_id) + ".png");
    if (!std::filesystem::exists(path)) {
      throw Error(ErrorCode::MissingExternalImage, "no external false-histology image at " + path.string());
    }
    RgbImage img = read_png(path);
    if (!img.same_dims(flim_render)) {
      throw Error(ErrorCode::DimensionMismatch, path.string() + " does not match the render size");
    }
    return img;
  }
  if (!std::filesystem::exists(cfg.reference)) {
    throw Error(ErrorCode::MissingFile, "reference histology not found: " + cfg.reference.string());
  }
  return match_histograms(flim_render, read_png(cfg.reference));
}

RgbImage apply_intensity_mask(const RgbImage& false_histology, const ScalarPlane& intensity) {
  if (false_histology.width() != intensity.width() || false_histology.height() != intensity.height()) {
    throw Error(ErrorCode::DimensionMismatch, "false histology and intensity plane differ in size");
  }
  RgbImage out = false_histology;
  for (int y = 0; y < intensity.height(); ++y) {
    for (int x = 0; x < intensity.width(); ++x) {
      if (intensity(x, y) == 0.0f) out.set_pixel(x, y, {});
    }
  }
  return out;
}

}  // namespace flimreg::translation

#pragma once

// On-disk formats.
//
// Hypercube: JSON manifest + raw little-endian blob.
//   {"width":W, "height":H, "spectral_bins":S, "time_bins":T,
//    "wavelength_start_nm":..., "wavelength_step_nm":..., "time_bin_ps":...,
//    "dtype":"u16"|"f32", "layout":"row-major x,y,s,t", "data_file":"cube.raw"}
//   data_file is resolved relative to the manifest's directory.
//
// ScalarPlane (32-byte header, then W*H little-endian float32, row-major):
//   offset 0   char[8]  magic "FLIMPLN1"
//   offset 8   u32      width
//   offset 12  u32      height
//   offset 16  u32      kind (0 = intensity_counts, 1 = lifetime_ns)
//   offset 20  u32      flags (bit 0: wavelength present)
//   offset 24  f64      wavelength_nm (0 when absent)
//
// RgbImage: 8-bit RGB PNG.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "flimreg/types.hpp"

namespace flimreg {

enum class CubeDtype { u16, f32 };

struct HypercubeManifest {
  Hypercube::Axes axes;
  CubeDtype dtype = CubeDtype::u16;
  std::filesystem::path data_file;  // as written in the manifest
  bool time_bin_defaulted = false;
};

/// Receives non-fatal loader diagnostics (e.g. a defaulted time bin).
using WarningSink = std::function<void(std::string_view)>;

HypercubeManifest read_hypercube_manifest(const std::filesystem::path& manifest_path);
/// Errors: MissingFile, DimensionMismatch, NegativeCount, CorruptHeader.
Hypercube load_hypercube(const std::filesystem::path& manifest_path, const WarningSink& warn = {});
/// Writes `<stem>.raw` next to the manifest. u16 storage rounds counts to
/// the nearest integer and saturates at 65535.
void save_hypercube(const Hypercube& cube, const std::filesystem::path& manifest_path,
                    CubeDtype dtype = CubeDtype::f32);

inline constexpr std::string_view kPlaneMagic = "FLIMPLN1";

std::string encode_plane(const ScalarPlane& plane);
void save_plane(const ScalarPlane& plane, const std::filesystem::path& path);
ScalarPlane load_plane(const std::filesystem::path& path);

RgbImage read_png(const std::filesystem::path& path);
RgbImage decode_png(std::span<const std::uint8_t> bytes);
void write_png(const RgbImage& image, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_png(const RgbImage& image);

/// Writes `bytes` to a sibling temporary file, flushes it to disk and renames
/// it over `path`, so readers only ever observe the old or the new content.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

}  // namespace flimreg

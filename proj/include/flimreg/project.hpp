#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "flimreg/homography.hpp"
#include "json.hpp"

namespace flimreg {

/// Axis-aligned rectangle in whole-slide pixels (top-left x, y).
struct PatchRect {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  bool valid() const noexcept { return w > 0 && h > 0; }
  bool within(int width, int height) const noexcept {
    return valid() && x >= 0 && y >= 0 && static_cast<long long>(x) + w <= width &&
           static_cast<long long>(y) + h <= height;
  }
  bool contains(int px, int py) const noexcept { return px >= x && py >= y && px < x + w && py < y + h; }
  friend bool operator==(const PatchRect&, const PatchRect&) = default;
};

/// Where a registered FLIM tile lands in the whole slide. The homography maps
/// the tile (moving) onto the histology patch (target), both in the
/// normalized frame of a regression_dim x regression_dim image.
struct TilePlacement {
  std::string tile_id;
  PatchRect patch;
  Homography homography;
  int regression_dim = 256;

  friend bool operator==(const TilePlacement&, const TilePlacement&) = default;
};

struct WsiRef {
  std::string path;
  int width = 0;
  int height = 0;
  friend bool operator==(const WsiRef&, const WsiRef&) = default;
};

struct HypercubeRef {
  std::string tile_id;
  std::string manifest;
  friend bool operator==(const HypercubeRef&, const HypercubeRef&) = default;
};

struct ProjectSession {
  std::optional<WsiRef> wsi;
  std::vector<HypercubeRef> hypercubes;
  std::vector<TilePlacement> placements;
  std::vector<std::string> accepted_registrations;

  const HypercubeRef* find_hypercube(const std::string& tile_id) const;
  /// Throws ValidationError if a placement names an unknown hypercube or a
  /// patch leaves the WSI bounds.
  void validate() const;

  friend bool operator==(const ProjectSession&, const ProjectSession&) = default;
};

void to_json(nlohmann::json& j, const PatchRect& r);
void from_json(const nlohmann::json& j, PatchRect& r);
void to_json(nlohmann::json& j, const TilePlacement& p);
void from_json(const nlohmann::json& j, TilePlacement& p);
void to_json(nlohmann::json& j, const ProjectSession& s);
void from_json(const nlohmann::json& j, ProjectSession& s);

nlohmann::json homography_to_json(const Homography& h);
Homography homography_from_json(const nlohmann::json& j);

/// Pretty-printed JSON, replaced atomically (write temp, fsync, rename).
void save_project(const ProjectSession& session, const std::filesystem::path& file);
/// Errors: MissingFile, CorruptHeader (unparseable), ValidationError.
ProjectSession load_project(const std::filesystem::path& file);

}  // namespace flimreg

#include "flimreg/project.hpp"

#include <fstream>

#include "flimreg/error.hpp"
#include "flimreg/io.hpp"

namespace flimreg {
using nlohmann::json;

const HypercubeRef* ProjectSession::find_hypercube(const std::string& tile_id) const {
  for (const auto& h : hypercubes) {
    if (h.tile_id == tile_id) return &h;
  }
  return nullptr;
}

void ProjectSession::validate() const {
  for (const auto& p : placements) {
    if (!find_hypercube(p.tile_id)) {
      throw Error(ErrorCode::ValidationError, "placement references unknown hypercube '" + p.tile_id + "'", "tile_id");
    }
    if (wsi && !p.patch.within(wsi->width, wsi->height)) {
      throw Error(ErrorCode::ValidationError, "placement for '" + p.tile_id + "' lies outside the WSI", "patch");
    }
  }
}

void to_json(json& j, const PatchRect& r) { j = {{"x", r.x}, {"y", r.y}, {"w", r.w}, {"h", r.h}}; }

void from_json(const json& j, PatchRect& r) {
  r.x = j.at("x").get<int>();
  r.y = j.at("y").get<int>();
  r.w = j.at("w").get<int>();
  r.h = j.at("h").get<int>();
}

json homography_to_json(const Homography& h) { return h.matrix().m; }

Homography homography_from_json(const json& j) {
  const auto m = j.get<std::array<double, 9>>();
  return Homography(Mat3{m});
}

void to_json(json& j, const TilePlacement& p) {
  j = {{"tile_id", p.tile_id},
       {"patch", p.patch},
       {"homography", homography_to_json(p.homography)},
       {"regression_dim", p.regression_dim}};
}

void from_json(const json& j, TilePlacement& p) {
  p.tile_id = j.at("tile_id").get<std::string>();
  p.patch = j.at("patch").get<PatchRect>();
  p.homography = homography_from_json(j.at("homography"));
  p.regression_dim = j.value("regression_dim", 256);
}

void to_json(json& j, const ProjectSession& s) {
  j = json::object();
  j["schema"] = "flimreg.project/1";
  if (s.wsi) {
    j["wsi"] = {{"path", s.wsi->path}, {"width", s.wsi->width}, {"height", s.wsi->height}};
  } else {
    j["wsi"] = nullptr;
  }
  j["hypercubes"] = json::array();
  for (const auto& h : s.hypercubes) j["hypercubes"].push_back({{"tile_id", h.tile_id}, {"manifest", h.manifest}});
  j["placements"] = s.placements;
  j["accepted_registrations"] = s.accepted_registrations;
}

void from_json(const json& j, ProjectSession& s) {
  s = {};
  if (j.contains("wsi") && !j["wsi"].is_null()) {
    const auto& w = j["wsi"];
    s.wsi = WsiRef{w.at("path").get<std::string>(), w.at("width").get<int>(), w.at("height").get<int>()};
  }
  for (const auto& h : j.value("hypercubes", json::array())) {
    s.hypercubes.push_back({h.at("tile_id").get<std::string>(), h.at("manifest").get<std::string>()});
  }
  s.placements = j.value("placements", std::vector<TilePlacement>{});
  s.accepted_registrations = j.value("accepted_registrations", std::vector<std::string>{});
}

void save_project(const ProjectSession& session, const std::filesystem::path& file) {
  session.validate();
  const json j = session;
  write_file_atomic(file, j.dump(2) + "\n");
}

ProjectSession load_project(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open " + file.string());
  ProjectSession s;
  try {
    s = json::parse(in).get<ProjectSession>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptHeader, file.string() + ": " + e.what());
  }
  s.validate();
  return s;
}

}  // namespace flimreg

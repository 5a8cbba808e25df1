#include "flimreg/cli.hpp"

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "flimreg/error.hpp"
#include "flimreg/io.hpp"
#include "flimreg/parallel.hpp"
#include "flimreg/service.hpp"
#include "flimreg/workflow.hpp"

namespace flimreg::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

PatchRect rect_from(const std::vector<int>& v, const char* flag) {
  if (v.size() != 4) throw UsageError(std::string(flag) + " expects x,y,w,h");
  return {v[0], v[1], v[2], v[3]};
}

void emit(std::ostream& out, bool as_json, const json& j, const std::string& human) {
  if (as_json) {
    out << j.dump(2) << "\n";
  } else {
    out << human;
  }
}

std::map<std::string, std::vector<workflow::BandPlanes>> load_planes(const std::vector<std::string>& dirs) {
  std::map<std::string, std::vector<workflow::BandPlanes>> tiles;
  for (const auto& d : dirs) {
    auto pd = workflow::read_planes_dir(d);
    tiles[pd.tile_id] = std::move(pd.bands);
  }
  return tiles;
}

imaging::LifetimeRenderSpec render_spec(const std::vector<double>& range, const std::string& weighting) {
  imaging::LifetimeRenderSpec spec;
  if (!range.empty()) {
    if (range.size() != 2 || !(range[0] < range[1])) throw UsageError("--render-range expects min,max with min < max");
    spec.range_min_ns = range[0];
    spec.range_max_ns = range[1];
  }
  spec.weighting = workflow::weighting_from_string(weighting);
  return spec;
}

// ---- reconstruct ---------------------------------------------------------

struct ReconstructArgs {
  std::string cube, out_dir, tile_id, offset_mode = "pre-peak";
  std::optional<int> band;
  bool all_bands = false;
  int smooth_window = 8;
  bool filter = true;
  int workers = default_worker_count();
};

json do_reconstruct(const ReconstructArgs& a, std::ostream& err) {
  if (a.band.has_value() == a.all_bands) throw UsageError("give exactly one of --band or --all-bands");
  const Hypercube cube = load_hypercube(a.cube, [&](std::string_view w) { err << "warning: " << w << "\n"; });
  std::vector<int> bands;
  if (a.all_bands) {
    for (int b = 0; b < cube.spectral_bins(); ++b) bands.push_back(b);
  } else {
    if (*a.band < 0 || *a.band >= cube.spectral_bins()) {
      throw Error(ErrorCode::BandOutOfRange, "band " + std::to_string(*a.band) + " is outside the cube", "band");
    }
    bands.push_back(*a.band);
  }
  workflow::ReconstructSettings s;
  s.smooth_window = a.smooth_window;
  s.filter = a.filter;
  s.workers = a.workers;
  s.fit.offset_mode =
      a.offset_mode == "free" ? reconstruction::OffsetMode::free : reconstruction::OffsetMode::pre_peak;
  const auto planes = workflow::reconstruct_bands(cube, bands, s);
  const std::string tile_id = a.tile_id.empty() ? fs::path(a.cube).stem().string() : a.tile_id;
  workflow::write_planes_dir(a.out_dir, tile_id, planes);
  json j = {{"schema", "flimreg.reconstruct/1"},
            {"tile_id", tile_id},
            {"out_dir", a.out_dir},
            {"smooth_window", a.smooth_window},
            {"filter", a.filter},
            {"offset_mode", a.offset_mode},
            {"bands", json::array()}};
  for (const auto& b : planes) j["bands"].push_back(workflow::band_summary(b));
  return j;
}

// ---- mask-bg -------------------------------------------------------------

struct MaskArgs {
  std::string in, out, mask_out;
  std::vector<int> crop;
};

json do_mask(const MaskArgs& a) {
  RgbImage img = read_png(a.in);
  if (!a.crop.empty()) {
    const PatchRect r = rect_from(a.crop, "--crop");
    img = imaging::crop(img, r.x, r.y, r.w, r.h);
  }
  const auto masked = imaging::mask_background(img);
  write_png(masked.image, a.out);
  if (!a.mask_out.empty()) {
    RgbImage m(img.width(), img.height());
    for (int y = 0; y < img.height(); ++y) {
      for (int x = 0; x < img.width(); ++x) {
        if (masked.mask(x, y)) m.set_pixel(x, y, {255, 255, 255});
      }
    }
    write_png(m, a.mask_out);
  }
  return {{"schema", "flimreg.mask_bg/1"},
          {"input", a.in},
          {"output", a.out},
          {"crop", a.crop.empty() ? json(nullptr) : json(rect_from(a.crop, "--crop"))},
          {"width", img.width()},
          {"height", img.height()},
          {"threshold", masked.threshold},
          {"foreground_pixels", masked.mask.count()}};
}

// ---- translate -----------------------------------------------------------

struct TranslateArgs {
  std::string planes, translator, out, render_out, tile_id, weighting = "intensity";
  std::optional<int> band;
  std::optional<double> wavelength;
  std::vector<double> render_range;
};

json do_translate(const TranslateArgs& a) {
  if (a.band.has_value() == a.wavelength.has_value()) throw UsageError("give exactly one of --band or --wavelength");
  const auto pd = workflow::read_planes_dir(a.planes);
  const workflow::BandPlanes* b = nullptr;
  if (a.band) {
    for (const auto& e : pd.bands) {
      if (e.band == *a.band) b = &e;
    }
    if (!b) throw Error(ErrorCode::BandOutOfRange, "band " + std::to_string(*a.band) + " was not reconstructed", "band");
  } else {
    b = &pd.bands[workflow::nearest_band(pd.bands, *a.wavelength)];
  }
  const auto cfg = translation::TranslatorConfig::parse(a.translator);
  const auto spec = render_spec(a.render_range, a.weighting);
  const std::string tile_id = a.tile_id.empty() ? pd.tile_id : a.tile_id;
  if (!a.render_out.empty()) write_png(workflow::render_tile(b->lifetime, b->intensity, spec), a.render_out);
  const RgbImage fh = workflow::false_histology(b->lifetime, b->intensity, cfg, tile_id, spec);
  write_png(fh, a.out);
  return {{"schema", "flimreg.translate/1"},
          {"tile_id", tile_id},
          {"band", b->band},
          {"wavelength_nm", b->wavelength_nm},
          {"translator", cfg.to_string()},
          {"render", workflow::render_spec_to_json(spec)},
          {"output", a.out},
          {"width", fh.width()},
          {"height", fh.height()}};
}

// ---- register ------------------------------------------------------------

struct RegisterArgs {
  std::string moving, target, out, warped_out, color_mode = "gray", optimizer = "gd";
  std::string project, tile_id, manifest, wsi;
  std::vector<int> patch;
  registration::RegressionParams params;
};

json do_register(RegisterArgs a, std::ostream& err) {
  a.params.color_mode = registration::color_mode_from_string(a.color_mode);
  a.params.optimizer = registration::optimizer_from_string(a.optimizer);
  a.params.validate();
  std::optional<PatchRect> patch;
  if (!a.project.empty()) {
    if (a.tile_id.empty() || a.patch.empty()) throw UsageError("--project needs --tile-id and --patch");
    patch = rect_from(a.patch, "--patch");
  }
  const RgbImage moving = read_png(a.moving);
  const RgbImage target = read_png(a.target);
  const auto result = registration::regress_homography(moving, target, a.params);
  json j = workflow::result_to_json(result);
  j["schema"] = "flimreg.register/1";
  j["moving"] = a.moving;
  j["target"] = a.target;
  if (!a.warped_out.empty()) {
    const int n = a.params.regression_dim;
    write_png(registration::warp(imaging::resize(moving, n, n), result.target_to_moving, n, n), a.warped_out);
  }
  if (!a.out.empty()) write_file_atomic(a.out, j.dump(2) + "\n");

  if (patch) {
    ProjectSession s;
    if (fs::exists(a.project)) s = load_project(a.project);
    if (!a.wsi.empty()) {
      const RgbImage w = read_png(a.wsi);
      s.wsi = WsiRef{fs::absolute(a.wsi).string(), w.width(), w.height()};
    }
    if (!s.find_hypercube(a.tile_id)) {
      s.hypercubes.push_back({a.tile_id, a.manifest.empty() ? "" : fs::absolute(a.manifest).string()});
    }
    std::erase_if(s.placements, [&](const TilePlacement& t) { return t.tile_id == a.tile_id; });
    s.placements.push_back({a.tile_id, *patch, result.homography, a.params.regression_dim});
    save_project(s, a.project);
    j["project"] = a.project;
    err << "recorded placement of '" << a.tile_id << "' in " << a.project << "\n";
  }
  return j;
}

// ---- stitch / probe ------------------------------------------------------

struct StitchArgs {
  std::string project, out, sidecar, wsi, weighting = "none";
  std::vector<std::string> planes;
  double wavelength = 0.0;
  double scale = 1.0;
  std::vector<double> render_range;
  std::optional<double> blend_alpha;
  int workers = default_worker_count();
};

json do_stitch(const StitchArgs& a) {
  const ProjectSession s = load_project(a.project);
  const std::string wsi_path = a.wsi.empty() ? (s.wsi ? s.wsi->path : "") : a.wsi;
  std::optional<RgbImage> wsi;
  int w = 0, h = 0;
  if (!wsi_path.empty()) {
    wsi = read_png(wsi_path);
    w = wsi->width();
    h = wsi->height();
  } else {
    throw UsageError("the project has no whole-slide image; pass --wsi");
  }
  workflow::MosaicSettings m;
  m.wavelength_nm = a.wavelength;
  m.scale = a.scale;
  m.render = render_spec(a.render_range, a.weighting);
  m.blend_alpha = a.blend_alpha;
  m.workers = a.workers;
  const auto mosaic = workflow::build_mosaic(s.placements, load_planes(a.planes), w, h, &*wsi, m);
  write_png(mosaic.image, a.out);
  const std::string sidecar = a.sidecar.empty() ? fs::path(a.out).replace_extension(".json").string() : a.sidecar;
  json j = mosaic.sidecar;
  j["output"] = a.out;
  write_file_atomic(sidecar, j.dump(2) + "\n");
  j["sidecar"] = sidecar;
  return j;
}

struct ProbeArgs {
  std::string project, out;
  std::vector<std::string> planes;
  int x = 0, y = 0;
  stitching::ProbeOptions opts;
};

json do_probe(const ProbeArgs& a, std::string& csv) {
  const ProjectSession s = load_project(a.project);
  const auto curve = workflow::probe(a.x, a.y, s.placements, load_planes(a.planes), a.opts);
  std::ostringstream os;
  workflow::write_curve_csv(os, curve);
  csv = os.str();
  if (!a.out.empty()) write_file_atomic(a.out, csv);
  json j = {{"schema", "flimreg.probe/1"},
            {"x", a.x},
            {"y", a.y},
            {"window", a.opts.window},
            {"band_min_nm", a.opts.band_min_nm},
            {"band_max_nm", a.opts.band_max_nm},
            {"curve", json::array()}};
  for (const auto& p : curve) j["curve"].push_back({{"wavelength_nm", p.wavelength_nm}, {"lifetime_ns", p.lifetime_ns}});
  return j;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"FLIM / histology co-registration workbench", "flimreg"};
  app.require_subcommand(1);
  bool as_json = false;
  app.add_flag("--json", as_json, "Print machine-readable JSON on stdout");

  ReconstructArgs ra;
  auto* rc = app.add_subcommand("reconstruct", "Hypercube -> intensity and lifetime planes");
  rc->add_option("--cube", ra.cube, "Hypercube manifest")->required();
  rc->add_option("--out-dir", ra.out_dir, "Planes directory to write")->required();
  rc->add_option("--tile-id", ra.tile_id, "Tile id (default: manifest stem)");
  auto* band_opt = rc->add_option("--band", ra.band, "Spectral band index");
  rc->add_flag("--all-bands", ra.all_bands, "Reconstruct every band")->excludes(band_opt);
  rc->add_option("--smooth-window", ra.smooth_window, "Spectral moving-mean window (<=1 disables)")
      ->capture_default_str()->check(CLI::NonNegativeNumber);
  rc->add_flag("--filter,!--no-filter", ra.filter, "Photon-noise filter")->capture_default_str();
  rc->add_option("--offset-mode", ra.offset_mode, "Decay offset handling")
      ->check(CLI::IsMember({"pre-peak", "free"}))->capture_default_str();
  rc->add_option("--workers", ra.workers, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();

  MaskArgs ma;
  auto* mb = app.add_subcommand("mask-bg", "Mask the bright background of a histology image");
  mb->add_option("--in", ma.in, "Histology PNG")->required();
  mb->add_option("--out", ma.out, "Masked PNG")->required();
  mb->add_option("--crop", ma.crop, "Crop x,y,w,h before masking")->delimiter(',')->expected(4);
  mb->add_option("--mask-out", ma.mask_out, "Write the foreground mask as PNG");

  TranslateArgs ta;
  auto* tr = app.add_subcommand("translate", "Lifetime planes -> masked false histology");
  tr->add_option("--planes", ta.planes, "Planes directory")->required();
  tr->add_option("--translator", ta.translator, "baseline:<ref.png> or external:<dir>")->required();
  tr->add_option("--out", ta.out, "False-histology PNG")->required();
  auto* tb = tr->add_option("--band", ta.band, "Band index");
  tr->add_option("--wavelength", ta.wavelength, "Use the band nearest to this wavelength (nm)")->excludes(tb);
  tr->add_option("--tile-id", ta.tile_id, "Tile id (default: from planes.json)");
  tr->add_option("--render-out", ta.render_out, "Also write the lifetime render");
  tr->add_option("--render-range", ta.render_range, "Lifetime range min,max (ns)")->delimiter(',')->expected(2);
  tr->add_option("--weighting", ta.weighting, "Render weighting")
      ->check(CLI::IsMember({"none", "intensity"}))->capture_default_str();

  RegisterArgs ga;
  auto* rg = app.add_subcommand("register", "Regress the homography between false and real histology");
  rg->add_option("--moving", ga.moving, "False-histology PNG")->required();
  rg->add_option("--target", ga.target, "Masked histology patch PNG")->required();
  rg->add_option("--out", ga.out, "Result JSON");
  rg->add_option("--warped-out", ga.warped_out, "Warped moving image PNG");
  rg->add_option("--epochs", ga.params.epochs)->capture_default_str();
  rg->add_option("--lr", ga.params.lr)->capture_default_str();
  rg->add_option("--decay-epoch", ga.params.decay_epoch)->capture_default_str();
  rg->add_option("--decay-factor", ga.params.decay_factor)->capture_default_str();
  rg->add_option("--window", ga.params.window)->capture_default_str();
  rg->add_option("--regression-dim", ga.params.regression_dim)->capture_default_str();
  rg->add_option("--color-mode", ga.color_mode)->check(CLI::IsMember({"gray", "rgb"}))->capture_default_str();
  rg->add_option("--optimizer", ga.optimizer)->check(CLI::IsMember({"gd", "adam"}))->capture_default_str();
  rg->add_option("--seed", ga.params.seed)->capture_default_str();
  rg->add_option("--project", ga.project, "Record the placement in this project file");
  rg->add_option("--tile-id", ga.tile_id, "Tile id for the placement");
  rg->add_option("--patch", ga.patch, "Patch rect x,y,w,h in the whole slide")->delimiter(',')->expected(4);
  rg->add_option("--manifest", ga.manifest, "Hypercube manifest of the tile");
  rg->add_option("--wsi", ga.wsi, "Whole-slide PNG to record in the project");

  StitchArgs sa;
  auto* st = app.add_subcommand("stitch", "Mosaic registered lifetime tiles");
  st->add_option("--project", sa.project, "Project file")->required();
  st->add_option("--planes", sa.planes, "Planes directories (one per tile)")->required();
  st->add_option("--wavelength", sa.wavelength, "Wavelength (nm)")->required();
  st->add_option("--out", sa.out, "Mosaic PNG")->required();
  st->add_option("--sidecar", sa.sidecar, "Sidecar JSON (default: next to --out)");
  st->add_option("--wsi", sa.wsi, "Whole-slide PNG (default: from the project)");
  st->add_option("--scale", sa.scale, "Canvas scale")->capture_default_str();
  st->add_option("--render-range", sa.render_range, "Lifetime range min,max (ns)")->delimiter(',')->expected(2);
  st->add_option("--weighting", sa.weighting)->check(CLI::IsMember({"none", "intensity"}))->capture_default_str();
  st->add_option("--blend-alpha", sa.blend_alpha, "Blend with the whole slide")->check(CLI::Range(0.0, 1.0));
  st->add_option("--workers", sa.workers)->check(CLI::PositiveNumber)->capture_default_str();

  ProbeArgs pa;
  auto* pr = app.add_subcommand("probe", "Spectral lifetime curve at a whole-slide pixel");
  pr->add_option("--project", pa.project, "Project file")->required();
  pr->add_option("--planes", pa.planes, "Planes directories (one per tile)")->required();
  pr->add_option("--x", pa.x)->required();
  pr->add_option("--y", pa.y)->required();
  pr->add_option("--band-min", pa.opts.band_min_nm)->capture_default_str();
  pr->add_option("--band-max", pa.opts.band_max_nm)->capture_default_str();
  pr->add_option("--window", pa.opts.window)->capture_default_str();
  pr->add_option("--out", pa.out, "CSV output file");

  service::ServeConfig sc;
  std::string addr, data;
  std::optional<int> workers;
  auto* sv = app.add_subcommand("serve", "Run the HTTP service");
  sv->add_option("--addr", addr, "host:port (env FLIMREG_ADDR)");
  sv->add_option("--data", data, "Data directory (env FLIMREG_DATA)");
  sv->add_option("--workers", workers, "Job workers (env FLIMREG_WORKERS)")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "usage error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*rc) {
      const json j = do_reconstruct(ra, err);
      emit(out, as_json, j, "reconstructed " + std::to_string(j["bands"].size()) + " band(s) into " + ra.out_dir + "\n");
    } else if (*mb) {
      const json j = do_mask(ma);
      emit(out, as_json, j, "threshold " + std::to_string(j["threshold"].get<int>()) + ", wrote " + ma.out + "\n");
    } else if (*tr) {
      emit(out, as_json, do_translate(ta), "wrote " + ta.out + "\n");
    } else if (*rg) {
      const json j = do_register(ga, err);
      emit(out, as_json, j,
           "best epoch " + std::to_string(j["best_epoch"].get<int>()) + ", loss " +
               std::to_string(j["final_loss"].get<double>()) + "\n");
    } else if (*st) {
      emit(out, as_json, do_stitch(sa), "wrote " + sa.out + "\n");
    } else if (*pr) {
      std::string csv;
      const json j = do_probe(pa, csv);
      emit(out, as_json, j, pa.out.empty() ? csv : "wrote " + pa.out + "\n");
    } else if (*sv) {
      sc = service::serve_config_from_env();
      if (!addr.empty()) {
        const auto colon = addr.rfind(':');
        if (colon == std::string::npos) throw UsageError("--addr must be host:port");
        sc.host = addr.substr(0, colon);
        sc.port = std::stoi(addr.substr(colon + 1));
      }
      if (!data.empty()) sc.workbench.data_dir = data;
      if (workers) sc.workbench.workers = *workers;
      return service::serve_forever(sc, err);
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    err << "error: " << to_string(e.code()) << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace flimreg::cli

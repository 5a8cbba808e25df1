#include "flimreg/service.hpp"

#include <csignal>
#include <fstream>
#include <ostream>
#include <regex>

#include "flimreg/io.hpp"
#include "flimreg/parallel.hpp"

namespace flimreg::service {

using nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(JobKind k) { return k == JobKind::register_tile ? "register" : "stitch"; }

std::string to_string(JobState s) {
  switch (s) {
    case JobState::queued: return "queued";
    case JobState::running: return "running";
    case JobState::done: return "done";
    case JobState::failed: return "failed";
  }
  return "unknown";
}

json JobSnapshot::to_json() const {
  json j = {{"id", id},
            {"project", project},
            {"kind", service::to_string(kind)},
            {"state", service::to_string(state)},
            {"events", events},
            {"request", request},
            {"result_ref", result_ref ? json(*result_ref) : json(nullptr)},
            {"error", error ? json(*error) : json(nullptr)},
            {"result", result}};
  if (latest) {
    j["progress"] = {{"epoch", latest->epoch}, {"loss", latest->loss}};
  } else {
    j["progress"] = nullptr;
  }
  return j;
}

struct Workbench::TileCache {
  std::mutex m;
  std::shared_ptr<const Hypercube> smoothed;
  std::map<int, workflow::BandPlanes> bands;
};

struct Workbench::Project {
  std::string id;
  fs::path dir;
  mutable std::shared_mutex session_mutex;
  ProjectSession session;

  std::mutex wsi_mutex;
  std::shared_ptr<const RgbImage> wsi;

  std::mutex cache_mutex;
  std::map<std::string, std::shared_ptr<TileCache>> tiles;

  ProjectSession snapshot() const {
    std::shared_lock lock(session_mutex);
    return session;
  }
};

struct Workbench::Job {
  std::string id;
  std::string project;
  JobKind kind = JobKind::register_tile;
  json request;

  std::string tile_id;
  PatchRect patch;
  registration::RegressionParams params;
  translation::TranslatorConfig translator;
  int band = 0;
  workflow::MosaicSettings mosaic;

  mutable std::mutex m;
  mutable std::condition_variable cv;
  JobState state = JobState::queued;
  std::vector<ProgressRecord> progress;
  std::optional<std::string> result_ref;
  std::optional<std::string> error;
  json result;
  std::optional<registration::RegressionResult> regression;
  RgbImage moving, target;
  RgbImage mosaic_image, mosaic_background;

  JobSnapshot snapshot_locked() const {
    JobSnapshot s;
    s.id = id;
    s.project = project;
    s.kind = kind;
    s.state = state;
    s.events = progress.size();
    if (!progress.empty()) s.latest = progress.back();
    s.result_ref = result_ref;
    s.error = error;
    s.request = request;
    s.result = result;
    return s;
  }
  bool finished_locked() const { return state == JobState::done || state == JobState::failed; }
};

namespace {

std::uint64_t numeric_suffix(const std::string& s, char prefix) {
  if (s.size() < 2 || s[0] != prefix) return 0;
  std::uint64_t v = 0;
  for (std::size_t i = 1; i < s.size(); ++i) {
    if (s[i] < '0' || s[i] > '9') return 0;
    v = v * 10 + static_cast<std::uint64_t>(s[i] - '0');
  }
  return v;
}

bool safe_id(const std::string& s) {
  if (s.empty() || s.size() > 128 || s == "." || s == "..") return false;
  for (char c : s) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) return false;
  }
  return true;
}

void persist(const ProjectSession& session, const fs::path& file) {
  try {
    save_project(session, file);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ValidationError) throw;
    throw Error(ErrorCode::PersistFailure, e.what());
  }
}

template <typename T>
T body_field(const json& body, const char* key) {
  if (!body.is_object() || !body.contains(key)) {
    throw Error(ErrorCode::ValidationError, std::string("missing field '") + key + "'", key);
  }
  try {
    return body.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::ValidationError, std::string("bad value for '") + key + "'", key);
  }
}

constexpr const char* kWsiId = "wsi";

}  // namespace

Workbench::Workbench(WorkbenchConfig cfg) : cfg_(std::move(cfg)) {
  std::error_code ec;
  fs::create_directories(cfg_.data_dir / "projects", ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create data directory " + cfg_.data_dir.string());
  load_existing_projects();
  const int n = std::max(1, cfg_.workers);
  for (int i = 0; i < n; ++i) workers_.emplace_back([this] { worker_loop(); });
}

Workbench::~Workbench() {
  {
    std::lock_guard lock(queue_mutex_);
    stopping_ = true;
  }
  queue_cv_.notify_all();
  for (auto& t : workers_) t.join();
}

void Workbench::load_existing_projects() {
  for (const auto& entry : fs::directory_iterator(cfg_.data_dir / "projects")) {
    if (!entry.is_directory()) continue;
    const std::string id = entry.path().filename().string();
    const fs::path file = entry.path() / "project.json";
    if (!fs::exists(file)) continue;
    auto p = std::make_shared<Project>();
    p->id = id;
    p->dir = entry.path();
    p->session = load_project(file);
    next_project_ = std::max(next_project_, numeric_suffix(id, 'p') + 1);
    for (const auto& job : p->session.accepted_registrations) {
      next_job_ = std::max(next_job_, numeric_suffix(job, 'j') + 1);
    }
    for (const char* sub : {"results", "mosaics"}) {
      if (!fs::is_directory(p->dir / sub)) continue;
      for (const auto& f : fs::directory_iterator(p->dir / sub)) {
        next_job_ = std::max(next_job_, numeric_suffix(f.path().stem().string(), 'j') + 1);
      }
    }
    projects_.emplace(id, std::move(p));
  }
}

std::shared_ptr<Workbench::Project> Workbench::find_project(const std::string& id) const {
  std::lock_guard lock(registry_mutex_);
  const auto it = projects_.find(id);
  if (it == projects_.end()) throw Error(ErrorCode::UnknownProject, "unknown project '" + id + "'");
  return it->second;
}

std::shared_ptr<Workbench::Job> Workbench::find_job(const std::string& project, const std::string& id) const {
  find_project(project);
  std::lock_guard lock(registry_mutex_);
  const auto it = jobs_.find(id);
  if (it == jobs_.end() || it->second->project != project) {
    throw Error(ErrorCode::UnknownJob, "unknown job '" + id + "'");
  }
  return it->second;
}

json Workbench::create_project(const json&) {
  auto p = std::make_shared<Project>();
  {
    std::lock_guard lock(registry_mutex_);
    p->id = "p" + std::to_string(next_project_++);
  }
  p->dir = cfg_.data_dir / "projects" / p->id;
  std::error_code ec;
  fs::create_directories(p->dir, ec);
  if (ec) throw Error(ErrorCode::PersistFailure, "cannot create " + p->dir.string());
  persist(p->session, p->dir / "project.json");
  std::lock_guard lock(registry_mutex_);
  projects_.emplace(p->id, p);
  return {{"id", p->id}};
}

json Workbench::get_project(const std::string& project) const {
  const auto p = find_project(project);
  json j = p->snapshot();
  j["id"] = p->id;
  if (j.contains("wsi") && !j["wsi"].is_null()) j["wsi"]["id"] = kWsiId;
  return j;
}

json Workbench::register_wsi(const std::string& project, const json& body) {
  const auto p = find_project(project);
  const fs::path path = fs::absolute(body_field<std::string>(body, "path"));
  auto image = std::make_shared<const RgbImage>(read_png(path));
  {
    std::unique_lock lock(p->session_mutex);
    ProjectSession next = p->session;
    next.wsi = WsiRef{path.string(), image->width(), image->height()};
    persist(next, p->dir / "project.json");
    p->session = std::move(next);
  }
  std::lock_guard lock(p->wsi_mutex);
  p->wsi = image;
  return {{"id", kWsiId}, {"path", path.string()}, {"width", image->width()}, {"height", image->height()}};
}

std::shared_ptr<const RgbImage> Workbench::wsi_image(Project& p) {
  const ProjectSession s = p.snapshot();
  if (!s.wsi) throw Error(ErrorCode::UnknownWsi, "project has no whole-slide image");
  std::lock_guard lock(p.wsi_mutex);
  if (!p.wsi) p.wsi = std::make_shared<const RgbImage>(read_png(s.wsi->path));
  return p.wsi;
}

Region Workbench::wsi_region(const std::string& project, const std::string& wsi_id, const PatchRect& rect,
                             double scale) {
  const auto p = find_project(project);
  if (wsi_id != kWsiId) throw Error(ErrorCode::UnknownWsi, "unknown whole-slide image '" + wsi_id + "'");
  if (!(scale > 0.0) || !std::isfinite(scale)) throw Error(ErrorCode::InvalidArgument, "scale must be positive", "scale");
  const auto wsi = wsi_image(*p);
  Region r;
  r.image = imaging::crop(*wsi, rect.x, rect.y, rect.w, rect.h);
  const int longest = std::max(rect.w, rect.h);
  r.applied_scale = longest * scale > cfg_.region_cap ? static_cast<double>(cfg_.region_cap) / longest : scale;
  if (r.applied_scale != 1.0) {
    const int w = std::max(1, static_cast<int>(std::lround(rect.w * r.applied_scale)));
    const int h = std::max(1, static_cast<int>(std::lround(rect.h * r.applied_scale)));
    r.image = imaging::resize(r.image, w, h);
  }
  return r;
}

json Workbench::register_tile(const std::string& project, const json& body) {
  const auto p = find_project(project);
  const auto tile_id = body_field<std::string>(body, "tile_id");
  if (!safe_id(tile_id)) {
    throw Error(ErrorCode::ValidationError, "tile_id may only hold letters, digits, '_', '-' and '.'", "tile_id");
  }
  const fs::path manifest = fs::absolute(body_field<std::string>(body, "manifest"));
  const HypercubeManifest m = read_hypercube_manifest(manifest);
  {
    std::unique_lock lock(p->session_mutex);
    ProjectSession next = p->session;
    auto it = std::find_if(next.hypercubes.begin(), next.hypercubes.end(),
                           [&](const HypercubeRef& h) { return h.tile_id == tile_id; });
    if (it == next.hypercubes.end()) {
      next.hypercubes.push_back({tile_id, manifest.string()});
    } else {
      it->manifest = manifest.string();
    }
    persist(next, p->dir / "project.json");
    p->session = std::move(next);
  }
  {
    std::lock_guard lock(p->cache_mutex);
    p->tiles.erase(tile_id);
  }
  const auto& a = m.axes;
  return {{"tile_id", tile_id},
          {"manifest", manifest.string()},
          {"width", a.width},
          {"height", a.height},
          {"spectral_bins", a.spectral_bins},
          {"time_bins", a.time_bins},
          {"wavelength_start_nm", a.wavelength_start_nm},
          {"wavelength_step_nm", a.wavelength_step_nm},
          {"time_bin_ps", a.time_bin_ps}};
}

workflow::BandPlanes Workbench::tile_band(Project& p, const std::string& tile_id, int band) {
  std::shared_ptr<TileCache> cache;
  {
    std::lock_guard lock(p.cache_mutex);
    auto& slot = p.tiles[tile_id];
    if (!slot) slot = std::make_shared<TileCache>();
    cache = slot;
  }
  std::lock_guard lock(cache->m);
  if (const auto it = cache->bands.find(band); it != cache->bands.end()) return it->second;
  if (!cache->smoothed) {
    const ProjectSession s = p.snapshot();
    const HypercubeRef* ref = s.find_hypercube(tile_id);
    if (!ref) throw Error(ErrorCode::UnknownTile, "unknown tile '" + tile_id + "'");
    Hypercube cube = load_hypercube(ref->manifest);
    if (cfg_.reconstruct.smooth_window > 1) cube = reconstruction::spectral_smooth(cube, cfg_.reconstruct.smooth_window);
    cache->smoothed = std::make_shared<const Hypercube>(std::move(cube));
  }
  if (band < 0 || band >= cache->smoothed->spectral_bins()) {
    throw Error(ErrorCode::BandOutOfRange, "band " + std::to_string(band) + " is outside the cube", "band");
  }
  workflow::ReconstructSettings settings = cfg_.reconstruct;
  settings.smooth_window = 1;
  const int bands[] = {band};
  auto planes = workflow::reconstruct_bands(*cache->smoothed, bands, settings);
  return cache->bands.emplace(band, std::move(planes.front())).first->second;
}

PlaneResponse Workbench::tile_plane(const std::string& project, const std::string& tile_id, int band,
                                    const std::string& kind, const std::string& render) {
  const auto p = find_project(project);
  if (kind != "intensity" && kind != "lifetime") {
    throw Error(ErrorCode::InvalidArgument, "kind must be intensity or lifetime", "kind");
  }
  if (render != "png" && render != "raw") throw Error(ErrorCode::InvalidArgument, "render must be png or raw", "render");
  if (!p->snapshot().find_hypercube(tile_id)) throw Error(ErrorCode::UnknownTile, "unknown tile '" + tile_id + "'");
  const auto b = tile_band(*p, tile_id, band);
  const ScalarPlane& plane = kind == "intensity" ? b.intensity : b.lifetime;
  if (render == "raw") return {"application/octet-stream", encode_plane(plane)};
  const RgbImage img =
      kind == "intensity" ? imaging::render_gray(plane) : imaging::render_lifetime(plane, nullptr, {});
  const auto bytes = encode_png(img);
  return {"image/png", std::string(bytes.begin(), bytes.end())};
}

JobSnapshot Workbench::create_registration_job(const std::string& project, const json& body) {
  const auto p = find_project(project);
  if (!body.is_object()) throw Error(ErrorCode::ValidationError, "request body must be an object", "body");
  const ProjectSession s = p->snapshot();

  auto job = std::make_shared<Job>();
  job->project = project;
  job->kind = JobKind::register_tile;
  job->tile_id = body_field<std::string>(body, "tile_id");
  const HypercubeRef* ref = s.find_hypercube(job->tile_id);
  if (!ref) throw Error(ErrorCode::ValidationError, "UnknownTile: '" + job->tile_id + "' is not registered", "tile_id");
  if (!s.wsi) throw Error(ErrorCode::ValidationError, "UnknownWsi: project has no whole-slide image", "wsi");
  job->patch = body_field<PatchRect>(body, "patch");
  if (!job->patch.within(s.wsi->width, s.wsi->height)) {
    throw Error(ErrorCode::ValidationError,
                "RectOutOfBounds: patch leaves the " + std::to_string(s.wsi->width) + "x" +
                    std::to_string(s.wsi->height) + " whole-slide image",
                "patch");
  }
  job->params = workflow::params_from_json(body.value("params", json(nullptr)));
  try {
    job->translator = body.contains("translator")
                          ? translation::TranslatorConfig::parse(body.at("translator").get<std::string>())
                          : translation::TranslatorConfig{translation::TranslatorMode::baseline_palette, s.wsi->path};
  } catch (const std::exception& e) {
    throw Error(ErrorCode::ValidationError, e.what(), "translator");
  }
  job->band = body.contains("band") ? body_field<int>(body, "band") : 0;
  try {
    const int bins = read_hypercube_manifest(ref->manifest).axes.spectral_bins;
    if (job->band < 0 || job->band >= bins) throw Error(ErrorCode::BandOutOfRange, "band outside the cube");
  } catch (const Error& e) {
    throw Error(ErrorCode::ValidationError, e.what(), "band");
  }
  job->request = {{"tile_id", job->tile_id},
                  {"patch", job->patch},
                  {"params", workflow::params_to_json(job->params)},
                  {"translator", job->translator.to_string()},
                  {"band", job->band}};
  enqueue(job);
  std::lock_guard lock(job->m);
  return job->snapshot_locked();
}

JobSnapshot Workbench::create_stitch_job(const std::string& project, const json& body) {
  const auto p = find_project(project);
  if (!body.is_object()) throw Error(ErrorCode::ValidationError, "request body must be an object", "body");
  const ProjectSession s = p->snapshot();
  if (!s.wsi) throw Error(ErrorCode::ValidationError, "UnknownWsi: project has no whole-slide image", "wsi");

  auto job = std::make_shared<Job>();
  job->project = project;
  job->kind = JobKind::stitch;
  auto& m = job->mosaic;
  m.wavelength_nm = body_field<double>(body, "wavelength_nm");
  if (body.contains("scale")) m.scale = body_field<double>(body, "scale");
  if (!(m.scale > 0.0 && m.scale <= 1.0)) throw Error(ErrorCode::ValidationError, "scale must lie in (0, 1]", "scale");
  if (body.contains("render_range")) {
    const auto r = body_field<std::array<double, 2>>(body, "render_range");
    if (!(r[0] < r[1])) throw Error(ErrorCode::ValidationError, "render_range must be increasing", "render_range");
    m.render.range_min_ns = r[0];
    m.render.range_max_ns = r[1];
  }
  if (body.contains("weighting")) {
    try {
      m.render.weighting = workflow::weighting_from_string(body_field<std::string>(body, "weighting"));
    } catch (const Error& e) {
      throw Error(ErrorCode::ValidationError, e.what(), "weighting");
    }
  }
  if (body.contains("blend_alpha") && !body.at("blend_alpha").is_null()) {
    const double a = body_field<double>(body, "blend_alpha");
    if (!(a >= 0.0 && a <= 1.0)) throw Error(ErrorCode::ValidationError, "blend_alpha must lie in [0, 1]", "blend_alpha");
    m.blend_alpha = a;
  }
  for (const auto& h : s.hypercubes) {
    try {
      workflow::band_for_wavelength(read_hypercube_manifest(h.manifest).axes, m.wavelength_nm);
    } catch (const Error& e) {
      throw Error(ErrorCode::ValidationError, h.tile_id + ": " + e.what(), "wavelength_nm");
    }
  }
  job->request = {{"wavelength_nm", m.wavelength_nm},
                  {"scale", m.scale},
                  {"render", workflow::render_spec_to_json(m.render)},
                  {"blend_alpha", m.blend_alpha ? json(*m.blend_alpha) : json(nullptr)}};
  enqueue(job);
  std::lock_guard lock(job->m);
  return job->snapshot_locked();
}

void Workbench::enqueue(std::shared_ptr<Job> job) {
  {
    std::lock_guard lock(registry_mutex_);
    job->id = "j" + std::to_string(next_job_++);
    jobs_.emplace(job->id, job);
  }
  {
    std::lock_guard lock(queue_mutex_);
    queue_.push_back(std::move(job));
  }
  queue_cv_.notify_one();
}

void Workbench::worker_loop() {
  for (;;) {
    std::shared_ptr<Job> job;
    {
      std::unique_lock lock(queue_mutex_);
      queue_cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      job = std::move(queue_.front());
      queue_.pop_front();
      ++running_;
    }
    run_job(*job);
    {
      std::lock_guard lock(queue_mutex_);
      --running_;
    }
    idle_cv_.notify_all();
  }
}

void Workbench::wait_idle() {
  std::unique_lock lock(queue_mutex_);
  idle_cv_.wait(lock, [&] { return queue_.empty() && running_ == 0; });
}

void Workbench::run_job(Job& job) {
  {
    std::lock_guard lock(job.m);
    job.state = JobState::running;
  }
  job.cv.notify_all();
  try {
    const auto p = find_project(job.project);
    if (job.kind == JobKind::register_tile) {
      run_registration(*p, job);
    } else {
      run_stitch(*p, job);
    }
  } catch (const std::exception& e) {
    std::lock_guard lock(job.m);
    job.state = JobState::failed;
    job.error = e.what();
    if (const auto* err = dynamic_cast<const Error*>(&e)) job.result = error_body(*err);
  }
  job.cv.notify_all();
}

void Workbench::run_registration(Project& p, Job& job) {
  const auto wsi = wsi_image(p);
  const workflow::BandPlanes band = tile_band(p, job.tile_id, job.band);
  RgbImage target = workflow::histology_target(*wsi, job.patch).image;
  RgbImage moving = workflow::false_histology(band.lifetime, band.intensity, job.translator, job.tile_id);

  auto result = registration::regress_homography(moving, target, job.params, [&](const registration::ProgressEvent& e) {
    {
      std::lock_guard lock(job.m);
      job.progress.push_back({e.epoch, e.loss});
    }
    job.cv.notify_all();
  });

  json j = workflow::result_to_json(result);
  j["schema"] = "flimreg.register/1";
  j["tile_id"] = job.tile_id;
  j["patch"] = job.patch;
  const std::string ref = "results/" + job.id + ".json";
  std::error_code ec;
  fs::create_directories(p.dir / "results", ec);
  write_file_atomic(p.dir / ref, j.dump(2) + "\n");

  std::lock_guard lock(job.m);
  job.regression = std::move(result);
  job.moving = std::move(moving);
  job.target = std::move(target);
  job.result = std::move(j);
  job.result_ref = ref;
  job.state = JobState::done;
}

void Workbench::run_stitch(Project& p, Job& job) {
  const auto wsi = wsi_image(p);
  const ProjectSession s = p.snapshot();
  std::map<std::string, std::vector<workflow::BandPlanes>> tiles;
  for (const auto& pl : s.placements) {
    if (tiles.count(pl.tile_id)) continue;
    const HypercubeRef* ref = s.find_hypercube(pl.tile_id);
    if (!ref) throw Error(ErrorCode::UnknownTile, "unknown tile '" + pl.tile_id + "'");
    const int band = workflow::band_for_wavelength(read_hypercube_manifest(ref->manifest).axes, job.mosaic.wavelength_nm);
    tiles[pl.tile_id].push_back(tile_band(p, pl.tile_id, band));
  }
  workflow::MosaicSettings settings = job.mosaic;
  settings.workers = std::max(1, cfg_.reconstruct.workers);
  workflow::Mosaic m = workflow::build_mosaic(s.placements, tiles, wsi->width(), wsi->height(), wsi.get(), settings);

  const std::string ref = "mosaics/" + job.id + ".png";
  std::error_code ec;
  fs::create_directories(p.dir / "mosaics", ec);
  const auto png = encode_png(m.image);
  write_file_atomic(p.dir / ref, std::string_view(reinterpret_cast<const char*>(png.data()), png.size()));
  write_file_atomic(p.dir / "mosaics" / (job.id + ".json"), m.sidecar.dump(2) + "\n");

  RgbImage background = imaging::resize(*wsi, m.image.width(), m.image.height());
  std::lock_guard lock(job.m);
  job.mosaic_image = std::move(m.stitched.image);
  job.mosaic_background = std::move(background);
  job.result = m.sidecar;
  job.result_ref = ref;
  job.state = JobState::done;
}

JobSnapshot Workbench::get_job(const std::string& project, const std::string& id) const {
  const auto job = find_job(project, id);
  std::lock_guard lock(job->m);
  return job->snapshot_locked();
}

EventBatch Workbench::wait_events(const std::string& project, const std::string& id, std::size_t from,
                                  std::chrono::milliseconds timeout) const {
  const auto job = find_job(project, id);
  std::unique_lock lock(job->m);
  job->cv.wait_for(lock, timeout, [&] { return job->progress.size() > from || job->finished_locked(); });
  EventBatch batch;
  for (std::size_t i = from; i < job->progress.size(); ++i) batch.progress.push_back(job->progress[i]);
  if (job->finished_locked()) batch.terminal = job->snapshot_locked();
  return batch;
}

RgbImage Workbench::preview(const std::string& project, const std::string& id, double alpha,
                            workflow::PreviewMode mode) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorCode::InvalidArgument, "alpha must lie in [0, 1]", "alpha");
  const auto job = find_job(project, id);
  std::lock_guard lock(job->m);
  if (job->state != JobState::done) throw Error(ErrorCode::JobNotDone, "job '" + id + "' is " + to_string(job->state));
  if (job->kind == JobKind::register_tile) {
    return workflow::render_preview(*job->regression, job->moving, job->target, alpha, mode);
  }
  if (mode == workflow::PreviewMode::gray) {
    return stitching::blend(workflow::to_luma(job->mosaic_image), workflow::to_luma(job->mosaic_background), alpha);
  }
  return stitching::blend(job->mosaic_image, job->mosaic_background, alpha);
}

json Workbench::accept(const std::string& project, const std::string& id) {
  const auto p = find_project(project);
  const auto job = find_job(project, id);
  TilePlacement placement;
  {
    std::lock_guard lock(job->m);
    if (job->kind != JobKind::register_tile) {
      throw Error(ErrorCode::InvalidArgument, "only registration jobs can be accepted", "job");
    }
    if (job->state != JobState::done) throw Error(ErrorCode::JobNotDone, "job '" + id + "' is " + to_string(job->state));
    placement = {job->tile_id, job->patch, job->regression->homography, job->params.regression_dim};
  }
  std::unique_lock lock(p->session_mutex);
  const auto& accepted = p->session.accepted_registrations;
  if (std::find(accepted.begin(), accepted.end(), id) != accepted.end()) {
    return {{"placement", placement}, {"already_accepted", true}};
  }
  ProjectSession next = p->session;
  std::erase_if(next.placements, [&](const TilePlacement& t) { return t.tile_id == placement.tile_id; });
  next.placements.push_back(placement);
  next.accepted_registrations.push_back(id);
  persist(next, p->dir / "project.json");
  p->session = std::move(next);
  return {{"placement", placement}, {"already_accepted", false}};
}

json Workbench::probe(const std::string& project, int x, int y, const stitching::ProbeOptions& opts) {
  const auto p = find_project(project);
  if (opts.window <= 0 || opts.window % 2 == 0) {
    throw Error(ErrorCode::InvalidWindow, "probe window must be a positive odd number", "window");
  }
  const ProjectSession s = p->snapshot();
  std::map<std::string, std::vector<workflow::BandPlanes>> tiles;
  for (const auto& pl : s.placements) {
    if (!pl.patch.contains(x, y) || tiles.count(pl.tile_id)) continue;
    const HypercubeRef* ref = s.find_hypercube(pl.tile_id);
    if (!ref) throw Error(ErrorCode::UnknownTile, "unknown tile '" + pl.tile_id + "'");
    const auto axes = read_hypercube_manifest(ref->manifest).axes;
    auto& bands = tiles[pl.tile_id];
    for (int b = 0; b < axes.spectral_bins; ++b) {
      const double wl = axes.wavelength_start_nm + b * axes.wavelength_step_nm;
      if (wl >= opts.band_min_nm && wl <= opts.band_max_nm) bands.push_back(tile_band(*p, pl.tile_id, b));
    }
  }
  json out = json::array();
  for (const auto& pt : workflow::probe(x, y, s.placements, tiles, opts)) {
    out.push_back({{"wavelength_nm", pt.wavelength_nm}, {"lifetime_ns", pt.lifetime_ns}});
  }
  return out;
}

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownWsi:
    case ErrorCode::UnknownTile:
    case ErrorCode::UnknownProject:
    case ErrorCode::UnknownJob: return 404;
    case ErrorCode::JobNotDone: return 409;
    case ErrorCode::PointNotCovered:
    case ErrorCode::EmptyOverlap: return 422;
    case ErrorCode::PersistFailure:
    case ErrorCode::IoFailure: return 500;
    default: return 400;
  }
}

json error_body(const Error& e) {
  json j = {{"code", std::string(to_string(e.code()))}, {"message", e.what()}};
  if (e.field()) j["field"] = *e.field();
  return j;
}

ServeConfig serve_config_from_env() {
  ServeConfig cfg;
  cfg.workbench.workers = default_worker_count();
  if (const char* addr = std::getenv("FLIMREG_ADDR")) {
    const std::string a = addr;
    const auto colon = a.rfind(':');
    if (colon == std::string::npos) throw Error(ErrorCode::InvalidArgument, "FLIMREG_ADDR must be host:port");
    cfg.host = a.substr(0, colon);
    cfg.port = std::stoi(a.substr(colon + 1));
  }
  if (const char* data = std::getenv("FLIMREG_DATA")) cfg.workbench.data_dir = data;
  if (const char* w = std::getenv("FLIMREG_WORKERS")) cfg.workbench.workers = std::max(1, std::atoi(w));
  return cfg;
}

}  // namespace flimreg::service

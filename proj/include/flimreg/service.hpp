#pragma once

// Workbench: projects, tiles, asynchronous jobs and persistence behind the
// HTTP API. The class is usable without a server; `serve` only adds routing.
//
// Layout under the data directory:
//   projects/<p>/project.json
//   projects/<p>/results/<job>.json      accepted-able registration results
//   projects/<p>/mosaics/<job>.png|.json stitch outputs

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include "flimreg/error.hpp"
#include "flimreg/project.hpp"
#include "flimreg/registration.hpp"
#include "flimreg/types.hpp"
#include "flimreg/workflow.hpp"
#include "json.hpp"

namespace flimreg::service {

enum class JobKind { register_tile, stitch };
enum class JobState { queued, running, done, failed };

std::string to_string(JobKind k);
std::string to_string(JobState s);

struct ProgressRecord {
  int epoch = 0;
  double loss = 0.0;
};

struct JobSnapshot {
  std::string id;
  std::string project;
  JobKind kind = JobKind::register_tile;
  JobState state = JobState::queued;
  std::size_t events = 0;  // progress events emitted so far
  std::optional<ProgressRecord> latest;
  std::optional<std::string> result_ref;
  std::optional<std::string> error;
  nlohmann::json request;
  nlohmann::json result;  // null until done

  nlohmann::json to_json() const;
};

/// Events after `from`, plus the terminal snapshot once the job has finished
/// and every progress event has been handed out.
struct EventBatch {
  std::vector<ProgressRecord> progress;
  std::optional<JobSnapshot> terminal;
};

struct Region {
  RgbImage image;
  double applied_scale = 1.0;
};

struct PlaneResponse {
  std::string content_type;
  std::string body;
};

struct WorkbenchConfig {
  std::filesystem::path data_dir = "flimreg-data";
  int workers = 1;
  int region_cap = 4096;  // longest side of a served region
  workflow::ReconstructSettings reconstruct;
};

class Workbench {
 public:
  explicit Workbench(WorkbenchConfig cfg);
  ~Workbench();
  Workbench(const Workbench&) = delete;
  Workbench& operator=(const Workbench&) = delete;

  const WorkbenchConfig& config() const noexcept { return cfg_; }

  /// Returns {"id": ...}.
  nlohmann::json create_project(const nlohmann::json& body);
  nlohmann::json get_project(const std::string& project) const;

  /// body {"path": png}. Returns {"id", "width", "height"}.
  nlohmann::json register_wsi(const std::string& project, const nlohmann::json& body);
  /// Errors: UnknownWsi, RectOutOfBounds, InvalidArgument (scale).
  Region wsi_region(const std::string& project, const std::string& wsi_id, const PatchRect& rect, double scale);

  /// body {"tile_id", "manifest"}. Returns the tile summary.
  nlohmann::json register_tile(const std::string& project, const nlohmann::json& body);
  /// kind: intensity | lifetime; render: png | raw.
  PlaneResponse tile_plane(const std::string& project, const std::string& tile_id, int band, const std::string& kind,
                           const std::string& render);

  /// body {"tile_id", "patch", "params"?, "translator"?, "band"?}. Returns the
  /// queued snapshot. Every problem is a ValidationError naming the field.
  JobSnapshot create_registration_job(const std::string& project, const nlohmann::json& body);
  /// body {"wavelength_nm", "scale"?, "render_range"?, "weighting"?, "blend_alpha"?}.
  JobSnapshot create_stitch_job(const std::string& project, const nlohmann::json& body);

  JobSnapshot get_job(const std::string& project, const std::string& job) const;
  /// Blocks up to `timeout` for something new.
  EventBatch wait_events(const std::string& project, const std::string& job, std::size_t from,
                         std::chrono::milliseconds timeout) const;
  /// Errors: JobNotDone.
  RgbImage preview(const std::string& project, const std::string& job, double alpha, workflow::PreviewMode mode);
  /// Idempotent. Errors: JobNotDone, PersistFailure.
  nlohmann::json accept(const std::string& project, const std::string& job);

  /// Returns [{"wavelength_nm", "lifetime_ns"}...].
  nlohmann::json probe(const std::string& project, int x, int y, const stitching::ProbeOptions& opts);

  /// Blocks until the queue is empty and no job is running.
  void wait_idle();

 private:
  struct Project;
  struct Job;
  struct TileCache;

  std::shared_ptr<Project> find_project(const std::string& id) const;
  std::shared_ptr<Job> find_job(const std::string& project, const std::string& id) const;
  std::shared_ptr<const RgbImage> wsi_image(Project& p);
  workflow::BandPlanes tile_band(Project& p, const std::string& tile_id, int band);
  void enqueue(std::shared_ptr<Job> job);
  void worker_loop();
  void run_job(Job& job);
  void run_registration(Project& p, Job& job);
  void run_stitch(Project& p, Job& job);
  void load_existing_projects();

  WorkbenchConfig cfg_;

  mutable std::mutex registry_mutex_;
  std::map<std::string, std::shared_ptr<Project>> projects_;
  std::map<std::string, std::shared_ptr<Job>> jobs_;
  std::uint64_t next_project_ = 1;
  std::uint64_t next_job_ = 1;

  std::mutex queue_mutex_;
  std::condition_variable queue_cv_;
  std::condition_variable idle_cv_;
  std::deque<std::shared_ptr<Job>> queue_;
  int running_ = 0;
  bool stopping_ = false;
  std::vector<std::thread> workers_;
};

int status_for(ErrorCode code);
nlohmann::json error_body(const Error& e);

struct ServeConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  WorkbenchConfig workbench;
};

/// Reads FLIMREG_ADDR (host:port), FLIMREG_DATA and FLIMREG_WORKERS over
/// the defaults.
ServeConfig serve_config_from_env();

class Server {
 public:
  explicit Server(Workbench& wb);
  ~Server();
  /// Binds and serves on a background thread; returns the bound port.
  int start(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Blocks until the process is signalled.
int serve_forever(const ServeConfig& cfg, std::ostream& log);

}  // namespace flimreg::service

#include <csignal>
#include <ostream>
#include <thread>

#include "flimreg/io.hpp"
#include "flimreg/service.hpp"
#include "httplib.h"

namespace flimreg::service {

using nlohmann::json;

namespace {

void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_png(httplib::Response& res, const RgbImage& img) {
  const auto bytes = encode_png(img);
  res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    return json::parse(req.body);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ValidationError, std::string("request body is not JSON: ") + e.what(), "body");
  }
}

std::optional<std::string> query(const httplib::Request& req, const char* key) {
  if (!req.has_param(key)) return std::nullopt;
  return req.get_param_value(key);
}

double number_param(const httplib::Request& req, const char* key, std::optional<double> fallback = std::nullopt) {
  const auto v = query(req, key);
  if (!v) {
    if (fallback) return *fallback;
    throw Error(ErrorCode::ValidationError, std::string("missing query parameter '") + key + "'", key);
  }
  try {
    std::size_t used = 0;
    const double d = std::stod(*v, &used);
    if (used != v->size() || !std::isfinite(d)) throw std::invalid_argument(key);
    return d;
  } catch (const std::exception&) {
    throw Error(ErrorCode::ValidationError, std::string("query parameter '") + key + "' is not a number", key);
  }
}

int int_param(const httplib::Request& req, const char* key, std::optional<int> fallback = std::nullopt) {
  const double d = number_param(req, key, fallback ? std::optional<double>(*fallback) : std::nullopt);
  if (d != std::floor(d) || std::abs(d) > 1e9) {
    throw Error(ErrorCode::ValidationError, std::string("query parameter '") + key + "' must be an integer", key);
  }
  return static_cast<int>(d);
}

template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const Error& e) {
      send_json(res, error_body(e), status_for(e.code()));
    } catch (const json::exception& e) {
      send_json(res, {{"code", "ValidationError"}, {"message", e.what()}}, 400);
    } catch (const std::exception& e) {
      send_json(res, {{"code", "Internal"}, {"message", e.what()}}, 500);
    }
  };
}

std::string sse(const char* event, const json& data) {
  return std::string("event: ") + event + "\ndata: " + data.dump() + "\n\n";
}

}  // namespace

struct Server::Impl {
  Workbench& wb;
  httplib::Server http;
  std::thread thread;

  explicit Impl(Workbench& w) : wb(w) { routes(); }

  void routes() {
    const std::string P = "/projects/([^/]+)";

    http.Post("/projects", guarded([this](const auto& req, auto& res) {
      send_json(res, wb.create_project(parse_body(req)), 201);
    }));
    http.Get(P, guarded([this](const auto& req, auto& res) { send_json(res, wb.get_project(req.matches[1])); }));
    http.Post(P + "/wsi", guarded([this](const auto& req, auto& res) {
      send_json(res, wb.register_wsi(req.matches[1], parse_body(req)), 201);
    }));
    http.Get(P + "/wsi/([^/]+)/region", guarded([this](const auto& req, auto& res) {
      const PatchRect rect{int_param(req, "x"), int_param(req, "y"), int_param(req, "w"), int_param(req, "h")};
      const Region r = wb.wsi_region(req.matches[1], req.matches[2], rect, number_param(req, "scale", 1.0));
      res.set_header("X-Applied-Scale", std::to_string(r.applied_scale));
      send_png(res, r.image);
    }));
    http.Post(P + "/tiles", guarded([this](const auto& req, auto& res) {
      send_json(res, wb.register_tile(req.matches[1], parse_body(req)), 201);
    }));
    http.Get(P + "/tiles/([^/]+)/plane", guarded([this](const auto& req, auto& res) {
      const auto out = wb.tile_plane(req.matches[1], req.matches[2], int_param(req, "band", 0),
                                     query(req, "kind").value_or("lifetime"), query(req, "render").value_or("png"));
      res.set_content(out.body, out.content_type);
    }));
    http.Post(P + "/jobs", guarded([this](const auto& req, auto& res) {
      send_json(res, wb.create_registration_job(req.matches[1], parse_body(req)).to_json(), 202);
    }));
    http.Post(P + "/stitch", guarded([this](const auto& req, auto& res) {
      send_json(res, wb.create_stitch_job(req.matches[1], parse_body(req)).to_json(), 202);
    }));
    http.Get(P + "/jobs/([^/]+)", guarded([this](const auto& req, auto& res) {
      send_json(res, wb.get_job(req.matches[1], req.matches[2]).to_json());
    }));
    http.Get(P + "/jobs/([^/]+)/events", guarded([this](const auto& req, auto& res) {
      const std::string project = req.matches[1];
      const std::string job = req.matches[2];
      wb.get_job(project, job);
      res.set_header("Cache-Control", "no-cache");
      auto next = std::make_shared<std::size_t>(0);
      res.set_chunked_content_provider("text/event-stream", [this, project, job, next](std::size_t,
                                                                                        httplib::DataSink& sink) {
        const EventBatch batch = wb.wait_events(project, job, *next, std::chrono::milliseconds(500));
        for (const auto& e : batch.progress) {
          const std::string msg = sse("progress", {{"epoch", e.epoch}, {"loss", e.loss}});
          if (!sink.write(msg.data(), msg.size())) return false;
        }
        *next += batch.progress.size();
        if (batch.terminal) {
          const std::string msg = sse(to_string(batch.terminal->state).c_str(), batch.terminal->to_json());
          if (!sink.write(msg.data(), msg.size())) return false;
          sink.done();
        } else if (batch.progress.empty()) {
          static const std::string keepalive = ": keepalive\n\n";
          if (!sink.write(keepalive.data(), keepalive.size())) return false;
        }
        return true;
      });
    }));
    http.Get(P + "/jobs/([^/]+)/preview", guarded([this](const auto& req, auto& res) {
      const auto mode = workflow::preview_mode_from_string(query(req, "mode").value_or("color"));
      send_png(res, wb.preview(req.matches[1], req.matches[2], number_param(req, "alpha", 0.5), mode));
    }));
    http.Post(P + "/jobs/([^/]+)/accept", guarded([this](const auto& req, auto& res) {
      send_json(res, wb.accept(req.matches[1], req.matches[2]));
    }));
    http.Get(P + "/probe", guarded([this](const auto& req, auto& res) {
      stitching::ProbeOptions opts;
      opts.band_min_nm = number_param(req, "band_min", opts.band_min_nm);
      opts.band_max_nm = number_param(req, "band_max", opts.band_max_nm);
      opts.window = int_param(req, "window", opts.window);
      send_json(res, wb.probe(req.matches[1], int_param(req, "x"), int_param(req, "y"), opts));
    }));
  }
};

Server::Server(Workbench& wb) : impl_(std::make_unique<Impl>(wb)) {}

Server::~Server() { stop(); }

int Server::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->http.bind_to_any_port(host);
  } else if (!impl_->http.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw Error(ErrorCode::IoFailure, "cannot listen on " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->http.listen_after_bind(); });
  impl_->http.wait_until_ready();
  return bound;
}

void Server::stop() {
  if (!impl_) return;
  impl_->http.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

int serve_forever(const ServeConfig& cfg, std::ostream& log) {
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  Workbench wb(cfg.workbench);
  Server server(wb);
  const int port = server.start(cfg.host, cfg.port);
  log << "listening on " << cfg.host << ":" << port << " (data " << cfg.workbench.data_dir.string() << ", "
      << cfg.workbench.workers << " workers)" << std::endl;
  int sig = 0;
  sigwait(&signals, &sig);
  server.stop();
  return 0;
}

}  // namespace flimreg::service

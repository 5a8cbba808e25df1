// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "../scene.hpp"
#include "../support.hpp"
#include "flimreg/imaging.hpp"
#include "flimreg/io.hpp"
#include "flimreg/metrics.hpp"
#include "flimreg/project.hpp"
#include "flimreg/reconstruction.hpp"
#include "flimreg/registration.hpp"
#include "flimreg/stitching.hpp"

#ifndef FLIMREG_CLI_PATH
#error "FLIMREG_CLI_PATH must point at the flimreg executable"
#endif

using namespace testsupport;
using namespace flimreg;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(const std::string& name, const std::function<Outcome()>& fn) {
  Outcome o;
  try {
    o = fn();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::cout << (o.pass ? "PASS" : "FAIL") << "  " << name << "  " << o.detail << std::endl;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---- homography recovery -------------------------------------------------

Outcome homography_recovery() {
  constexpr int kTrials = 50;
  int good = 0;
  double worst_time = 0.0, worst_err = 0.0;
  std::vector<double> errs;
  for (int t = 0; t < kTrials; ++t) {
    std::mt19937_64 rng(1000 + t);
    std::uniform_real_distribution<double> jitter(-16.0, 16.0);
    std::array<Vec2, 4> dst;
    for (int i = 0; i < 4; ++i) {
      dst[i] = {unit_corners()[i].x + jitter(rng) / 128.0, unit_corners()[i].y + jitter(rng) / 128.0};
    }
    const Homography truth = homography_from_points(unit_corners(), dst);
    const RgbImage moving = blob_texture(256, 256, 5000 + t);
    const RgbImage target = registration::warp(moving, truth.inverse(), 256, 256);
    const auto t0 = Clock::now();
    const auto r = registration::regress_homography(moving, target, registration::RegressionParams{});
    const double dt = seconds_since(t0);
    const double err = corner_error_px(r.homography, truth, 256);
    errs.push_back(err);
    worst_time = std::max(worst_time, dt);
    worst_err = std::max(worst_err, err);
    if (err < 2.0) ++good;
  }
  std::sort(errs.begin(), errs.end());
  const bool pass = good >= 45 && worst_time < 60.0;
  return {pass, fmt("%d/%d trials < 2 px (median %.3f px, worst %.3f px), slowest trial %.2f s", good, kTrials,
                    errs[errs.size() / 2], worst_err, worst_time)};
}

// ---- gradient ------------------------------------------------------------

// Moving images carry a photometric ramp and stay brighter than the target,
// so the residual keeps its sign and central differences at 1e-4 are not
// thrown off by the kinks of |.|.
Outcome gradient_correctness() {
  constexpr double kEps = 1e-4;
  constexpr int n = 256;
  double worst = 0.0;
  int configs = 0;
  for (int k = 0; k < 20; ++k) {
    std::mt19937_64 rng(77 + k);
    std::uniform_real_distribution<double> d(-0.05, 0.05), dp(-0.03, 0.03);
    const int channels = k % 2 == 0 ? 1 : 3;
    auto moving = smooth_raster(n, n, channels, 300 + k);
    auto target = smooth_raster(n, n, channels, 900 + k);
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        const double u = (2.0 * x + 1) / n - 1, v = (2.0 * y + 1) / n - 1;
        for (int c = 0; c < channels; ++c) {
          moving.at(x, y, c) = static_cast<float>(0.5 + 0.15 * u + 0.1 * v + 0.1 * u * v + 0.25 * (moving.at(x, y, c) - 0.5));
          target.at(x, y, c) *= 0.05f;
        }
      }
    }
    const std::array<double, 8> p{1 + d(rng), d(rng), d(rng), d(rng), 1 + d(rng), d(rng), dp(rng), dp(rng)};
    const Homography g = Homography::from_params(p);
    const int window = n * 3 / 4;
    const auto grad = registration::loss_gradient(g, moving, target, window);
    for (int i = 0; i < 8; ++i) {
      auto plus = p, minus = p;
      plus[static_cast<std::size_t>(i)] += kEps;
      minus[static_cast<std::size_t>(i)] -= kEps;
      const double fd = (registration::warped_loss(Homography::from_params(plus), moving, target, window) -
                         registration::warped_loss(Homography::from_params(minus), moving, target, window)) /
                        (2 * kEps);
      const double a = grad[static_cast<std::size_t>(i)];
      const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6});
      worst = std::max(worst, rel);
    }
    ++configs;
  }
  return {worst < 1e-3, fmt("%d configurations, worst per-component relative error %.2e", configs, worst)};
}

// ---- lifetime fit --------------------------------------------------------

Outcome lifetime_fit() {
  const auto t0 = Clock::now();
  double worst_clean = 0.0;
  for (double tau : {0.5, 1.0, 2.0, 3.0, 5.0}) {
    struct Setup {
      int bins;
      double bin_ps;
      double offset;
      int peak;
    };
    for (const Setup s : {Setup{256, 50.0, 0.0, 0}, Setup{64, 200.0, 0.0, 0}, Setup{32, 50.0, 0.0, 0},
                          Setup{64, 200.0, 12.0, 4}}) {
      const auto decay = exp_decay(s.bins, s.bin_ps, tau, 1000.0, s.offset, s.peak);
      const auto fit = reconstruction::fit_lifetime(decay, s.bin_ps);
      worst_clean = std::max(worst_clean, std::abs(fit.tau_ns - tau) / tau);
    }
  }
  std::mt19937_64 rng(2024);
  std::vector<double> rel;
  const auto clean = exp_decay(32, 50.0, 1.5, 500.0, 0.0, 0);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<float> noisy(clean.size());
    for (std::size_t i = 0; i < clean.size(); ++i) {
      noisy[i] = static_cast<float>(std::poisson_distribution<int>(clean[i])(rng));
    }
    rel.push_back(std::abs(reconstruction::fit_lifetime(noisy, 50.0).tau_ns - 1.5) / 1.5);
  }
  std::nth_element(rel.begin(), rel.begin() + 500, rel.end());
  const double median = rel[500];
  const double dt = seconds_since(t0);
  const bool pass = worst_clean < 1e-3 && median < 0.03 && dt < 30.0;
  return {pass, fmt("noiseless worst %.2e, Poisson median %.2f%% (1000 trials), sweep %.3f s", worst_clean,
                    100 * median, dt)};
}

// ---- Otsu ----------------------------------------------------------------

int otsu_exhaustive(const ScalarPlane& p) {
  std::array<long long, 256> hist{};
  for (float v : p.values()) ++hist[static_cast<std::size_t>(std::lround(v))];
  const long long n = static_cast<long long>(p.size());
  long long total = 0;
  for (int v = 0; v < 256; ++v) total += v * hist[static_cast<std::size_t>(v)];
  int best = -1;
  long double best_score = -1.0L;
  for (int t = 0; t < 256; ++t) {
    long long n0 = 0, s0 = 0;
    for (int v = 0; v <= t; ++v) {
      n0 += hist[static_cast<std::size_t>(v)];
      s0 += v * hist[static_cast<std::size_t>(v)];
    }
    const long long n1 = n - n0;
    if (n0 == 0 || n1 == 0) continue;
    const long double m0 = static_cast<long double>(s0) / n0;
    const long double m1 = static_cast<long double>(total - s0) / n1;
    const long double score = static_cast<long double>(n0) * n1 * (m0 - m1) * (m0 - m1);
    if (score > best_score * (1 + 1e-15L)) {
      best_score = score;
      best = t;
    }
  }
  return best;
}

Outcome otsu_exactness() {
  std::mt19937_64 rng(31337);
  int mismatches = 0, tested = 0;
  for (int i = 0; i < 1000; ++i) {
    std::uniform_int_distribution<int> dim(4, 48);
    const int w = dim(rng), h = dim(rng);
    ScalarPlane p;
    switch (i % 3) {
      case 0:
        p = random_gray_plane(w, h, rng);
        break;
      case 1: {
        std::normal_distribution<double> a(60, 20), b(180, 25);
        std::bernoulli_distribution pick(0.35);
        std::vector<float> v(static_cast<std::size_t>(w) * h);
        for (auto& x : v) x = static_cast<float>(std::clamp(std::lround(pick(rng) ? a(rng) : b(rng)), 0L, 255L));
        p = ScalarPlane(w, h, PlaneKind::intensity_counts, std::move(v));
        break;
      }
      default: {
        std::uniform_int_distribution<int> lo(0, 200);
        const int l = lo(rng);
        p = random_gray_plane(w, h, rng, l, l + std::uniform_int_distribution<int>(1, 55)(rng));
      }
    }
    const int want = otsu_exhaustive(p);
    if (want < 0) continue;
    ++tested;
    if (imaging::otsu_threshold(p).threshold != want) ++mismatches;
  }
  return {mismatches == 0 && tested == 1000, fmt("%d images, %d mismatches", tested, mismatches)};
}

// ---- metrics -------------------------------------------------------------

struct MetricOracle {
  double mse, nmi, ncc;
};

MetricOracle metric_oracle(const ScalarPlane& a, const ScalarPlane& b) {
  std::vector<std::pair<double, double>> px;
  for (int y = 0; y < a.height(); ++y) {
    for (int x = 0; x < a.width(); ++x) {
      if (a(x, y) != 0 && b(x, y) != 0) px.emplace_back(a(x, y), b(x, y));
    }
  }
  const double n = static_cast<double>(px.size());
  double se = 0, sa = 0, sb = 0;
  for (auto [u, v] : px) {
    se += (u / 255 - v / 255) * (u / 255 - v / 255);
    sa += u;
    sb += v;
  }
  const double ma = sa / n, mb = sb / n;
  double cab = 0, caa = 0, cbb = 0;
  for (auto [u, v] : px) {
    cab += (u - ma) * (v - mb);
    caa += (u - ma) * (u - ma);
    cbb += (v - mb) * (v - mb);
  }
  std::map<int, double> ha, hb;
  std::map<std::pair<int, int>, double> hab;
  for (auto [u, v] : px) {
    const int bu = std::min(63, static_cast<int>(std::floor(u / 4))), bv = std::min(63, static_cast<int>(std::floor(v / 4)));
    ha[bu] += 1;
    hb[bv] += 1;
    hab[{bu, bv}] += 1;
  }
  auto ent = [n](const auto& m) {
    double e = 0;
    for (const auto& [k, c] : m) e -= c / n * std::log2(c / n);
    return e;
  };
  const double joint = ent(hab);
  return {se / n, joint == 0 ? 2.0 : (ent(ha) + ent(hb)) / joint,
          caa == 0 || cbb == 0 ? 0.0 : cab / std::sqrt(caa) / std::sqrt(cbb)};
}

Outcome metric_oracles() {
  std::mt19937_64 rng(4242);
  double worst = 0.0, worst_identity = 0.0;
  for (int i = 0; i < 100; ++i) {
    const ScalarPlane a = random_gray_plane(16, 16, rng, 0, 255);
    const ScalarPlane b = random_gray_plane(16, 16, rng, 0, 255);
    const MetricOracle o = metric_oracle(a, b);
    worst = std::max({worst, std::abs(metrics::mse(a, b) - o.mse), std::abs(metrics::nmi(a, b) - o.nmi),
                      std::abs(metrics::ncc(a, b) - o.ncc)});
    worst_identity = std::max({worst_identity, std::abs(metrics::mse(a, a)), std::abs(metrics::nmi(a, a) - 2.0),
                               std::abs(metrics::ncc(a, a) - 1.0)});
  }
  return {worst < 1e-9 && worst_identity < 1e-9,
          fmt("100 pairs: worst oracle deviation %.2e, worst identity deviation %.2e", worst, worst_identity)};
}

// ---- photon filter -------------------------------------------------------

// Planes are built from pairs (x, 2m - x), so the mean is exactly m and the
// threshold exactly sqrt(m).
Outcome photon_filter() {
  std::mt19937_64 rng(99);
  int cases = 0, wrong = 0;
  bool idempotent = true;
  for (int k = 0; k < 50; ++k) {
    const int w = 10, h = 10;
    const int root = 4 + k;
    const int mean = root * root;
    std::uniform_int_distribution<int> u(0, 2 * mean);
    std::vector<float> v;
    for (int x : {root, root + 1, root - 1, 0}) {
      v.push_back(static_cast<float>(x));
      v.push_back(static_cast<float>(2 * mean - x));
    }
    while (v.size() < static_cast<std::size_t>(w * h)) {
      const int x = u(rng);
      v.push_back(static_cast<float>(x));
      v.push_back(static_cast<float>(2 * mean - x));
    }
    std::shuffle(v.begin(), v.end(), rng);
    ++cases;
    const ScalarPlane in(w, h, PlaneKind::intensity_counts, v);
    std::vector<float> lt(v.size());
    for (std::size_t i = 0; i < lt.size(); ++i) lt[i] = 1.0f + static_cast<float>(i % 7) * 0.25f;
    const ScalarPlane life(w, h, PlaneKind::lifetime_ns, lt);
    const auto f = reconstruction::photon_noise_filter(in, life);
    for (std::size_t i = 0; i < v.size(); ++i) {
      const bool should_zero = v[i] <= root;
      const bool zeroed = f.intensity.values()[i] == 0.0f && f.lifetime.values()[i] == 0.0f;
      const bool kept = f.intensity.values()[i] == v[i] && f.lifetime.values()[i] == lt[i];
      if (should_zero ? !zeroed : !kept) ++wrong;
    }
    if (f.report.n_hat != mean || f.report.threshold != root) ++wrong;
    const auto again = reconstruction::photon_noise_filter(f.intensity, f.lifetime);
    if (!(again.intensity == f.intensity && again.lifetime == f.lifetime)) idempotent = false;
  }
  return {wrong == 0 && idempotent,
          fmt("%d planes, %d misclassified pixels, idempotent: %s", cases, wrong, idempotent ? "yes" : "no")};
}

// ---- stitching -----------------------------------------------------------

Outcome stitching_constant_tiles() {
  const int n = 64;
  std::map<std::string, stitching::TileImage> tiles;
  tiles["a"] = ScalarPlane(n, n, PlaneKind::lifetime_ns, std::vector<float>(n * n, 2.0f));
  tiles["b"] = ScalarPlane(n, n, PlaneKind::lifetime_ns, std::vector<float>(n * n, 4.0f));
  std::vector<TilePlacement> order1{{"a", {0, 0, n, n}, Homography(), n}, {"b", {n / 2, 0, n, n}, Homography(), n}};
  std::vector<TilePlacement> order2{order1[1], order1[0]};
  const stitching::CanvasSpec canvas{n + n / 2, n, 1.0};
  const auto r1 = stitching::accumulate(order1, tiles, canvas);
  const auto r2 = stitching::accumulate(order2, tiles, canvas);
  int bad_values = 0, bad_coverage = 0;
  for (int y = 0; y < canvas.height; ++y) {
    for (int x = 0; x < canvas.width; ++x) {
      const double want = x < n / 2 ? 2.0 : x < n ? 3.0 : 4.0;
      const std::uint32_t cover = x < n / 2 || x >= n ? 1u : 2u;
      if (r1.values[static_cast<std::size_t>(y) * canvas.width + x] != want) ++bad_values;
      if (r1.coverage(x, y) != cover) ++bad_coverage;
    }
  }
  const bool identical = r1.values == r2.values && r1.coverage == r2.coverage;
  return {bad_values == 0 && bad_coverage == 0 && identical,
          fmt("%d wrong values, %d wrong coverage counts, permutation bit-identical: %s", bad_values, bad_coverage,
              identical ? "yes" : "no")};
}

// ---- end to end ----------------------------------------------------------

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + FLIMREG_CLI_PATH + "\" " + args + " >>\"" + log.string() + "\" 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

Outcome end_to_end() {
  TempDir dir;
  const fs::path log = dir / "cli.log";
  const Scene scene(7);
  const auto layout = microarray_layout(11);
  const auto t0 = Clock::now();
  write_png(scene.histology(), dir / "wsi.png");
  const CubeSpec spec;
  for (std::size_t k = 0; k < layout.size(); ++k) {
    save_hypercube(tile_cube(scene, layout[k], spec, 100 + k), dir / (layout[k].id + ".json"), CubeDtype::u16);
  }
  const double gen_time = seconds_since(t0);
  const auto t1 = Clock::now();
  const std::string d = "\"" + dir.path().string() + "/";
  std::vector<double> corner_err;
  std::string planes_args;
  for (const auto& t : layout) {
    const auto& p = t.patch;
    const std::string rect = std::to_string(p.x) + "," + std::to_string(p.y) + "," + std::to_string(p.w) + "," +
                             std::to_string(p.h);
    const std::vector<std::string> steps{
        "reconstruct --cube " + d + t.id + ".json\" --out-dir " + d + t.id + "_planes\" --all-bands",
        "mask-bg --in " + d + "wsi.png\" --crop " + rect + " --out " + d + t.id + "_target.png\"",
        "translate --planes " + d + t.id + "_planes\" --translator baseline:" + dir.path().string() + "/" + t.id +
            "_target.png --wavelength 580 --out " + d + t.id + "_moving.png\"",
        "register --moving " + d + t.id + "_moving.png\" --target " + d + t.id + "_target.png\" --out " + d + t.id +
            "_reg.json\" --project " + d + "project.json\" --tile-id " + t.id + " --patch " + rect +
            " --manifest " + d + t.id + ".json\" --wsi " + d + "wsi.png\"",
    };
    for (const auto& s : steps) {
      if (const int rc = run_cli(s, log); rc != 0) return {false, fmt("CLI step failed (exit %d): %s", rc, s.c_str())};
    }
    planes_args += " " + d + t.id + "_planes\"";
    std::ifstream in(dir / (t.id + "_reg.json"));
    const auto j = nlohmann::json::parse(in);
    corner_err.push_back(corner_error_px(homography_from_json(j["homography"]), t.truth, 256));
  }
  if (const int rc = run_cli("stitch --project " + d + "project.json\" --planes" + planes_args +
                                 " --wavelength 580 --out " + d + "mosaic.png\"",
                             log);
      rc != 0) {
    return {false, fmt("stitch failed (exit %d)", rc)};
  }
  const std::string probe_cmd = "probe --project " + d + "project.json\" --planes" + planes_args + " --x " +
                                std::to_string(static_cast<int>(scene.probe.x)) + " --y " +
                                std::to_string(static_cast<int>(scene.probe.y)) + " --out " + d + "curve.csv\"";
  if (const int rc = run_cli(probe_cmd, log); rc != 0) return {false, fmt("probe failed (exit %d)", rc)};
  const double pipeline_time = seconds_since(t1);

  std::ifstream csv(dir / "curve.csv");
  std::string line;
  std::getline(csv, line);
  int bands = 0;
  double worst = 0.0;
  while (std::getline(csv, line)) {
    std::istringstream ls(line);
    double wl = 0, tau = 0;
    char comma = 0;
    ls >> wl >> comma >> tau;
    worst = std::max(worst, std::abs(tau - scene.tau_left));
    ++bands;
  }
  const bool pass = bands == spec.bands && worst < 0.05 && seconds_since(t0) < 300.0;
  return {pass, fmt("%d bands, worst |tau - %.2f| = %.4f ns; corner errors %.2f %.2f %.2f %.2f px; "
                    "data %.1f s, CLI pipeline %.1f s",
                    bands, scene.tau_left, worst, corner_err[0], corner_err[1], corner_err[2], corner_err[3],
                    gen_time, pipeline_time)};
}

// ---- persistence ---------------------------------------------------------

ProjectSession session_of_size(int n) {
  ProjectSession s;
  s.wsi = WsiRef{"/slides/wsi.png", 4096, 4096};
  for (int i = 0; i < n; ++i) {
    const std::string id = "tile" + std::to_string(i);
    s.hypercubes.push_back({id, "/cubes/" + id + ".json"});
    s.placements.push_back({id, {i, i, 256, 256}, Homography(), 256});
  }
  return s;
}

Outcome persistence() {
  TempDir dir;
  const fs::path file = dir / "project.json";
  const ProjectSession small = session_of_size(2), large = session_of_size(400);
  save_project(small, file);
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> delay_us(200, 20000);
  int kills = 0, bad = 0;
  for (int round = 0; round < 40; ++round) {
    const pid_t pid = fork();
    if (pid == 0) {
      for (int i = 0;; ++i) save_project(i % 2 ? small : large, file);
    }
    usleep(static_cast<useconds_t>(delay_us(rng)));
    kill(pid, SIGKILL);
    waitpid(pid, nullptr, 0);
    ++kills;
    try {
      const ProjectSession s = load_project(file);
      if (!(s == small || s == large)) ++bad;
    } catch (const std::exception&) {
      ++bad;
    }
  }
  return {bad == 0, fmt("%d SIGKILLs during writes, %d unloadable or torn states", kills, bad)};
}

}  // namespace

int main() {
  report("homography-recovery", homography_recovery);
  report("gradient-vs-finite-differences", gradient_correctness);
  report("lifetime-fit", lifetime_fit);
  report("otsu-exhaustive", otsu_exactness);
  report("metric-oracles", metric_oracles);
  report("photon-noise-filter", photon_filter);
  report("stitching-constant-tiles", stitching_constant_tiles);
  report("end-to-end-cli", end_to_end);
  report("persistence-under-kill", persistence);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures;
}

#include "flimreg/reconstruction.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>

#include "flimreg/error.hpp"
#include "flimreg/parallel.hpp"

namespace flimreg::reconstruction {

Hypercube spectral_smooth(const Hypercube& cube, int window) {
  const int S = cube.spectral_bins();
  const int T = cube.time_bins();
  if (window < 1) throw Error(ErrorCode::InvalidArgument, "smoothing window must be >= 1");
  if (window > S) {
    throw Error(ErrorCode::WindowTooLarge,
                "smoothing window " + std::to_string(window) + " exceeds " + std::to_string(S) + " spectral bins");
  }
  Hypercube out(cube.axes());
  const int before = window / 2;
  const int after = (window + 1) / 2 - 1;
  std::vector<double> prefix(static_cast<std::size_t>(S + 1) * T);

  for (int x = 0; x < cube.width(); ++x) {
    for (int y = 0; y < cube.height(); ++y) {
      std::fill(prefix.begin(), prefix.begin() + T, 0.0);
      for (int s = 0; s < S; ++s) {
        const auto d = cube.decay(x, y, s);
        for (int t = 0; t < T; ++t) {
          prefix[static_cast<std::size_t>(s + 1) * T + t] = prefix[static_cast<std::size_t>(s) * T + t] + d[t];
        }
      }
      for (int s = 0; s < S; ++s) {
        const int lo = std::max(0, s - before);
        const int hi = std::min(S - 1, s + after);
        const double n = hi - lo + 1;
        for (int t = 0; t < T; ++t) {
          const double sum =
              prefix[static_cast<std::size_t>(hi + 1) * T + t] - prefix[static_cast<std::size_t>(lo) * T + t];
          out.at(x, y, s, t) = static_cast<float>(std::max(0.0, sum / n));
        }
      }
    }
  }
  return out;
}

namespace {

// Solves the n x n system a * x = b (n <= 3) by Gaussian elimination with
// partial pivoting. Returns false when singular.
template <int N>
bool solve(std::array<std::array<double, N>, N> a, std::array<double, N> b, std::array<double, N>& x) {
  for (int c = 0; c < N; ++c) {
    int piv = c;
    for (int r = c + 1; r < N; ++r) {
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    }
    if (!(std::abs(a[piv][c]) > 0.0)) return false;
    std::swap(a[c], a[piv]);
    std::swap(b[c], b[piv]);
    for (int r = c + 1; r < N; ++r) {
      const double f = a[r][c] / a[c][c];
      for (int k = c; k < N; ++k) a[r][k] -= f * a[c][k];
      b[r] -= f * b[c];
    }
  }
  for (int r = N - 1; r >= 0; --r) {
    double s = b[r];
    for (int k = r + 1; k < N; ++k) s -= a[r][k] * x[k];
    x[r] = s / a[r][r];
  }
  return true;
}

// params: [A, tau, b]; only the first N are free, b is fixed when N == 2.
template <int N>
DecayFit levenberg_marquardt(std::span<const double> t, std::span<const double> y, std::array<double, 3> p,
                             const FitOptions& opts) {
  const std::size_t n = t.size();
  auto cost_of = [&](const std::array<double, 3>& q) {
    double c = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = y[i] - (q[0] * std::exp(-t[i] / q[1]) + q[2]);
      c += r * r;
    }
    return c;
  };

  double cost = cost_of(p);
  double lambda = 1e-3;
  DecayFit fit;
  bool converged = false;
  int iter = 0;
  for (; iter < opts.max_iterations && !converged; ++iter) {
    std::array<std::array<double, N>, N> jtj{};
    std::array<double, N> jtr{};
    for (std::size_t i = 0; i < n; ++i) {
      const double e = std::exp(-t[i] / p[1]);
      const double r = y[i] - (p[0] * e + p[2]);
      std::array<double, 3> g{e, p[0] * e * t[i] / (p[1] * p[1]), 1.0};
      for (int a = 0; a < N; ++a) {
        jtr[a] += g[a] * r;
        for (int b = 0; b < N; ++b) jtj[a][b] += g[a] * g[b];
      }
    }
    // Inner loop: raise damping until a step lowers the cost.
    bool accepted = false;
    for (int attempt = 0; attempt < 30 && !accepted; ++attempt) {
      auto damped = jtj;
      for (int a = 0; a < N; ++a) damped[a][a] += lambda * std::max(jtj[a][a], 1e-12);
      std::array<double, N> delta{};
      if (!solve<N>(damped, jtr, delta)) {
        lambda *= 10.0;
        continue;
      }
      std::array<double, 3> trial = p;
      for (int a = 0; a < N; ++a) trial[a] += delta[a];
      const double trial_cost = trial[1] > 0.0 ? cost_of(trial) : INFINITY;
      if (std::isfinite(trial_cost) && trial_cost <= cost) {
        double max_rel = 0.0;
        // The offset is measured against a one-count floor; it is often ~0.
        constexpr std::array<double, 3> floor{1e-12, 1e-12, 1.0};
        for (int a = 0; a < N; ++a) max_rel = std::max(max_rel, std::abs(delta[a]) / (std::abs(p[a]) + floor[a]));
        p = trial;
        cost = trial_cost;
        lambda = std::max(lambda / 10.0, 1e-12);
        accepted = true;
        if (max_rel < opts.relative_tolerance) converged = true;
      } else {
        lambda *= 10.0;
      }
    }
    // No descent direction left: we are at a (numerical) minimum.
    if (!accepted) converged = true;
  }
  fit.amplitude = p[0];
  fit.tau_ns = p[1];
  fit.offset = p[2];
  fit.residual_rms = std::sqrt(cost / static_cast<double>(n));
  fit.converged = converged;
  fit.iterations = iter;
  return fit;
}

}  // namespace

DecayFit fit_lifetime(std::span<const float> decay, double time_bin_ps, const FitOptions& opts) {
  const int T = static_cast<int>(decay.size());
  if (T < 4) throw Error(ErrorCode::InvalidArgument, "decay needs at least 4 time bins");
  if (!(time_bin_ps > 0.0)) throw Error(ErrorCode::InvalidArgument, "time bin must be positive");

  double total = 0.0;
  for (float v : decay) total += v;
  if (!(total >= opts.min_total_counts)) {
    throw Error(ErrorCode::InsufficientSignal, "decay holds " + std::to_string(total) + " counts");
  }

  const int peak = static_cast<int>(std::max_element(decay.begin(), decay.end()) - decay.begin());
  if (T - peak < 3) throw Error(ErrorCode::InsufficientSignal, "too few bins after the decay peak");

  // Baseline = bins before the rising edge (first bin at half the peak),
  // excluding the bin right before the edge, which is usually part-risen.
  const float half = 0.5f * decay[static_cast<std::size_t>(peak)];
  const int edge = static_cast<int>(std::find_if(decay.begin(), decay.end(), [&](float v) { return v >= half; }) -
                                    decay.begin());
  double background = 0.0;
  if (edge >= 2) {
    for (int i = 0; i < edge - 1; ++i) background += decay[static_cast<std::size_t>(i)];
    background /= edge - 1;
  }

  const double bin_ns = time_bin_ps / 1000.0;
  std::vector<double> t, y;
  for (int i = peak; i < T; ++i) {
    t.push_back((i - peak) * bin_ns);
    y.push_back(decay[static_cast<std::size_t>(i)]);
  }

  // Log-linear seed on the background-subtracted decay, weighted by counts.
  double sw = 0, st = 0, sz = 0, stt = 0, stz = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double v = y[i] - background;
    if (v <= 0.0) continue;
    const double z = std::log(v);
    sw += v;
    st += v * t[i];
    sz += v * z;
    stt += v * t[i] * t[i];
    stz += v * t[i] * z;
  }
  const double span_ns = t.back() > 0.0 ? t.back() : bin_ns;
  double tau0 = span_ns;
  double amp0 = std::max(y.front() - background, 1.0);
  const double den = sw * stt - st * st;
  if (sw > 0.0 && den > 0.0) {
    const double slope = (sw * stz - st * sz) / den;
    const double icept = (sz - slope * st) / sw;
    if (slope < 0.0 && std::isfinite(slope)) {
      tau0 = std::clamp(-1.0 / slope, 0.05 * bin_ns, 1000.0 * span_ns);
      amp0 = std::exp(icept);
    }
  }

  if (opts.offset_mode == OffsetMode::free) {
    return levenberg_marquardt<3>(t, y, {amp0, tau0, background}, opts);
  }
  return levenberg_marquardt<2>(t, y, {amp0, tau0, background}, opts);
}

PlanePair reconstruct_planes(const Hypercube& cube, int band, const ReconstructOptions& opts) {
  if (band < 0 || band >= cube.spectral_bins()) {
    throw Error(ErrorCode::BandOutOfRange,
                "band " + std::to_string(band) + " outside [0, " + std::to_string(cube.spectral_bins()) + ")");
  }
  const double wl = cube.wavelength_of(band);
  PlanePair out{ScalarPlane(cube.width(), cube.height(), PlaneKind::intensity_counts, wl),
                ScalarPlane(cube.width(), cube.height(), PlaneKind::lifetime_ns, wl)};

  parallel_for_chunks(cube.height(), opts.workers, [&](int y0, int y1) {
    for (int y = y0; y < y1; ++y) {
      for (int x = 0; x < cube.width(); ++x) {
        const auto d = cube.decay(x, y, band);
        double sum = 0.0;
        for (float v : d) sum += v;
        out.intensity(x, y) = static_cast<float>(sum);
        float tau = 0.0f;
        try {
          const DecayFit f = fit_lifetime(d, cube.time_bin_ps(), opts.fit);
          if (std::isfinite(f.tau_ns) && f.tau_ns > 0.0) tau = static_cast<float>(f.tau_ns);
        } catch (const Error& e) {
          if (e.code() != ErrorCode::InsufficientSignal) throw;
        }
        out.lifetime(x, y) = tau;
      }
    }
  });
  return out;
}

FilteredPlanes photon_noise_filter(const ScalarPlane& intensity, const ScalarPlane& lifetime) {
  if (!intensity.same_dims(lifetime)) {
    throw Error(ErrorCode::DimensionMismatch, "intensity and lifetime planes differ in size");
  }
  if (intensity.kind() != PlaneKind::intensity_counts) {
    throw Error(ErrorCode::InvalidArgument, "first plane must be an intensity plane");
  }
  double sum = 0.0;
  std::size_t nonzero = 0;
  for (float v : intensity.values()) {
    sum += v;
    if (v > 0.0f) ++nonzero;
  }
  if (nonzero == 0) throw Error(ErrorCode::EmptyPlane, "intensity plane has no signal");

  FilteredPlanes out{intensity, lifetime, {}};
  out.report.n_hat = sum / static_cast<double>(intensity.size());
  out.report.threshold = std::sqrt(out.report.n_hat);
  auto iv = out.intensity.values();
  auto lv = out.lifetime.values();
  for (std::size_t i = 0; i < iv.size(); ++i) {
    if (static_cast<double>(iv[i]) <= out.report.threshold) {
      if (iv[i] > 0.0f || lv[i] > 0.0f) ++out.report.pixels_zeroed;
      iv[i] = 0.0f;
      lv[i] = 0.0f;
    }
  }
  return out;
}

double percentile_sorted(std::span<const float> sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double f = pos - static_cast<double>(lo);
  return static_cast<double>(sorted[lo]) + f * (static_cast<double>(sorted[hi]) - static_cast<double>(sorted[lo]));
}

std::vector<ScalarPlane> normalize_group(std::span<const ScalarPlane> planes) {
  if (planes.empty()) throw Error(ErrorCode::EmptyGroup, "normalisation group is empty");
  const auto& first = planes.front();
  std::vector<float> pool;
  for (const auto& p : planes) {
    if (!p.same_dims(first)) throw Error(ErrorCode::DimensionMismatch, "group planes differ in size");
    if (p.wavelength_nm() != first.wavelength_nm()) {
      throw Error(ErrorCode::InvalidArgument, "group planes differ in wavelength");
    }
    for (float v : p.values()) {
      if (v > 0.0f) pool.push_back(v);
    }
  }
  std::sort(pool.begin(), pool.end());
  const double lo = percentile_sorted(pool, 1.0);
  const double hi = percentile_sorted(pool, 99.0);
  const double span = hi - lo;

  std::vector<ScalarPlane> out;
  out.reserve(planes.size());
  for (const auto& p : planes) {
    ScalarPlane n = p;
    for (float& v : n.values()) {
      if (v <= 0.0f) continue;
      double u = span > 0.0 ? (static_cast<double>(v) - lo) / span : 1.0;
      u = kNormalizeFloor + (1.0 - kNormalizeFloor) * u;
      v = static_cast<float>(std::clamp(u, static_cast<double>(kNormalizeFloor), 1.0));
    }
    out.push_back(std::move(n));
  }
  return out;
}

}  // namespace flimreg::reconstruction

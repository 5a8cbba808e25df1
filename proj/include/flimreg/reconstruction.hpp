#pragma once

// Hypercube -> per-wavelength intensity and lifetime planes.

#include <span>
#include <utility>
#include <vector>

#include "flimreg/types.hpp"

namespace flimreg::reconstruction {

struct DecayFit {
  double tau_ns = 0.0;
  double amplitude = 0.0;
  double offset = 0.0;
  double residual_rms = 0.0;
  bool converged = false;
  int iterations = 0;
};

enum class OffsetMode {
  // Offset estimated from the baseline bins before the rising edge (zero when
  // the decay starts at its maximum) and held fixed; amplitude and lifetime
  // are fitted.
  pre_peak,
  // Offset fitted jointly with amplitude and lifetime.
  free,
};

struct FitOptions {
  double min_total_counts = 25.0;
  int max_iterations = 100;
  double relative_tolerance = 1e-6;
  OffsetMode offset_mode = OffsetMode::pre_peak;
};

/// Least-squares fit of A * exp(-t / tau) + b to the post-peak part of a decay
/// (Levenberg-Marquardt, seeded by a log-linear fit).
///
/// Throws InsufficientSignal when the decay holds fewer than
/// `min_total_counts` photons or too few post-peak bins, and InvalidArgument
/// when fewer than 4 bins are given. Hitting the iteration cap is reported
/// through `converged`, not thrown.
DecayFit fit_lifetime(std::span<const float> decay, double time_bin_ps, const FitOptions& opts = {});

/// Moving mean along the spectral axis over [s - w/2, s + ceil(w/2) - 1],
/// clamped to the valid band range (the divisor is the clamped count).
Hypercube spectral_smooth(const Hypercube& cube, int window = 8);

struct ReconstructOptions {
  FitOptions fit;
  int workers = 1;
};

struct PlanePair {
  ScalarPlane intensity;
  ScalarPlane lifetime;
};

/// Intensity = sum over time bins; lifetime = fitted tau (0 where the fit is
/// impossible or yields a non-physical value). Deterministic for any worker
/// count.
PlanePair reconstruct_planes(const Hypercube& cube, int band, const ReconstructOptions& opts = {});

struct FilterReport {
  double n_hat = 0.0;
  double threshold = 0.0;
  std::size_t pixels_zeroed = 0;
};

struct FilteredPlanes {
  ScalarPlane intensity;
  ScalarPlane lifetime;
  FilterReport report;
};

/// Photon-noise filter: zeroes both planes wherever intensity <= sqrt(N),
/// N being the mean intensity over the whole plane.
FilteredPlanes photon_noise_filter(const ScalarPlane& intensity, const ScalarPlane& lifetime);

/// Lower bound of the normalised range, so foreground never collapses to 0.
inline constexpr float kNormalizeFloor = 1.0f / 255.0f;

/// Joint 1st/99th-percentile normalisation of intensity planes sharing one
/// wavelength (one microarray). Non-zero values map affinely to
/// [kNormalizeFloor, 1] and are clipped; zeros stay zero.
std::vector<ScalarPlane> normalize_group(std::span<const ScalarPlane> planes);

/// Linear-interpolation percentile (q in [0, 100]) of an ascending range.
double percentile_sorted(std::span<const float> sorted, double q);

}  // namespace flimreg::reconstruction

#pragma once

#include <span>
#include <vector>

#include "levisim/environment.hpp"
#include "levisim/state.hpp"

namespace levisim {

/// Position variance after releasing a thermal state for tau:
/// z_zp^2 (2 nbar + 1)(1 + omega^2 tau^2).
double free_expansion_variance(double nbar, double omega, double mass, double tau);

/// Mean mode energy after release for tau under a constant force F:
/// E0 [1 + omega^2 tau^2 / 2] + F^2 tau^2 / (2m) [1 + omega^2 tau^2 / 4].
double mean_energy_after_release(double e0, double force, double tau, double omega, double mass);

/// Position variance at time t back in the trap after a free flight of tau:
/// sigma_z^2(0)[1 + omega tau sin(2 omega t)] + sigma_p^2(0) tau^2/m^2 cos^2(omega t).
double recapture_variance(double sigma_z0_sq, double sigma_p0_sq, double tau, double t,
                          double omega, double mass);

/// Maximum of recapture_variance over one trap period.
double recapture_variance_max(double sigma_z0_sq, double sigma_p0_sq, double tau, double omega,
                              double mass);

struct EllipseAngle {
  double theta = 0.0;   // rad, to the position axis
  bool degenerate = false;  // tau = 0: isotropic state has no axis
};

/// Rotation angle of the sheared phase-space ellipse after free flight tau,
/// from the dimensionless covariance [[1+(wt)^2, wt], [wt, 1]]:
/// theta = atan2(2 w tau, (w tau)^2) / 2.
EllipseAngle ellipse_angle(double omega, double tau);

/// Trap pulse duration recompressing the position variance: 2 theta/omega + n pi/omega.
double recompression_time(double tau, double omega, int n);

/// Mean displacement from a voltage offset: C_NV dV tau^2 / (2 m).
double displacement_from_voltage(double cnv, double dv, double tau, double mass);

struct ScanPrediction {
  double parabola_scale = 0.0;  // J/V^2
  double v_opt = 0.0;           // V
  double offset = 0.0;          // J
};

/// Parabola a(V - V_opt)^2 + b expected from a compensation scan:
/// a = (C_NV^2 tau^2 / 2m)(1 + omega^2 tau^2 / 4); the tau^4/tau^2 coefficient
/// ratio of a(tau) is omega^2/4.
ScanPrediction expected_scan_parabola(double cnv, double tau, double omega, double mass,
                                      double e0 = 0.0, double v_opt = 0.0);

enum class SegmentLabel { kFree, kTrapped };

/// Constant-coefficient segment of dSigma/dt = A Sigma + Sigma A^T + D.
/// A couples position to momentum per axis only: dr/dt = p/m,
/// dp/dt = -m omega^2 r (trapped) - gamma p.
struct SegmentModel {
  Mat6 drift = Mat6::Zero();
  Mat6 diffusion = Mat6::Zero();
  double duration = 0.0;
  SegmentLabel label = SegmentLabel::kFree;
  // per-axis parameters retained for the closed-form flow; only segments from
  // the builders carry them (canonical), hand-built ones integrate generically
  bool canonical = false;
  double mass = 0.0;
  Vec3 omega = Vec3::Zero();
  Vec3 gamma = Vec3::Zero();
  double rate_scale = 0.0;  // max(omega, gamma), sets the integration step

  static SegmentModel free_flight(double duration, const Particle& particle,
                                  const Environment& env);
  /// extra_damping adds per-axis feedback damping to the gas rate.
  static SegmentModel trapped(double duration, const Particle& particle, const TrapField& trap,
                              const Environment& env, const Vec3& extra_damping = Vec3::Zero());
};

/// Propagates the covariance through the segments: closed-form linear flow for
/// diffusion-free segments, fixed-step RK4 with step <= 1/(50 rate) otherwise.
CovarianceState lyapunov_propagate(const CovarianceState& initial,
                                   std::span<const SegmentModel> segments);

}  // namespace levisim

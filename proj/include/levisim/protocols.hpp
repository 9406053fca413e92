#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "levisim/analysis.hpp"
#include "levisim/analytics.hpp"
#include "levisim/simulate.hpp"

namespace levisim {

/// Raised when a protocol cannot proceed because the particle left the trap
/// in too many repetitions.
struct ParticleLostError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Stream-id namespace for protocol substreams: every repetition draws from
/// derive(seed, {protocol, call, repetition}).
enum class ProtocolId : std::uint64_t {
  kSimulate = 1,
  kScan,
  kCrossTalk,
  kCompensate3d,
  kTauScan,
  kRecompression,
  kReheating,
  kNonlinearity,
  kCharge,
};

struct ProtocolContext {
  SystemConfig system;
  std::uint64_t seed = 1;
  int threads = 0;  // 0: worker_count()
};

/// One cool -> release(tau) -> recapture repetition.
struct ReleaseRecaptureSettings {
  double tau = 100e-6;
  double settle = 20e-6;        // trap+feedback on before release
  double pre_window = 40e-6;    // pre-release energy window
  double post_window = 40e-6;   // post-recapture variance window
  double fit_window = 25e-6;    // post-recapture sine-fit span
  double buffer = 2e-6;         // detector-response guard after recapture
  int measure_axis = 2;
  Vec3 dc_voltages = Vec3::Zero();
};

struct ReleaseRecaptureRep {
  SineFit pre_fit;
  SineFit post_fit;
  double energy_pre = 0.0;        // J, from windowed variance of the z channel
  double energy_post = 0.0;
  double displacement_z = 0.0;    // m, true state at recapture minus pre-release equilibrium
  bool lost = false;
};

ReleaseRecaptureRep release_recapture_rep(const SystemConfig& system,
                                          const ReleaseRecaptureSettings& settings,
                                          std::optional<StateVector> initial_state,
                                          RngStream& rng);

/// Standardizes a sampled thermal ensemble to the exact target moments per
/// axis (zero mean, exact variances, zero position-momentum correlation).
/// Classic Monte-Carlo variance reduction: removes the finite-ensemble
/// sampling noise of the initial state without touching the dynamics.
void moment_match_ensemble(std::vector<StateVector>& states, const Vec3& nbar,
                           const TrapField& trap, const Particle& particle);

enum class ScanEnergyMethod { kWindowedVariance, kSineFit };

struct ScanSettings {
  int axis = 2;
  double v_min = -1.0;
  double v_max = 1.0;
  int n_points = 9;
  int repetitions = 5;
  double tau = 10e-6;
  Vec3 base_voltages = Vec3::Zero();   // electrode-space offset added to every point
  bool crosstalk_corrected = true;     // apply the normalized C^-1 column
  ScanEnergyMethod method = ScanEnergyMethod::kWindowedVariance;
  /// Moment-match the per-point repetition ensembles (see
  /// moment_match_ensemble); sharpens the parabola at fixed repetitions.
  bool moment_matched_init = false;
  ReleaseRecaptureSettings sequence;
  std::uint64_t call_index = 0;        // decorrelates repeated scans under one seed
};

struct ScanResult {
  int axis = 2;
  double tau = 0.0;
  int repetitions = 0;
  std::vector<double> voltages;               // scanned magnitude on the axis
  std::vector<std::vector<double>> energies;  // [point][repetition], J
  std::vector<double> mean_energy;            // per point, valid reps only
  std::vector<double> sem_energy;
  std::vector<int> valid_repetitions;
  ParabolaFit fit;
  double v_opt = 0.0;
  bool v_opt_in_range = true;
};

/// Compensation scan: post-recapture energy versus DC bias, parabola minimum
/// at the force-nulling voltage. Lost-particle points are excluded from the fit.
ScanResult compensation_scan(const ProtocolContext& ctx, const ScanSettings& settings);

struct CrossTalkSettings {
  /// Reference cooling rate. Strong cross-routes drive the off-axis modes in
  /// proportion to this gain and contaminate the detection through the
  /// cross-weights, so moderate values keep the ratio estimates clean.
  double gamma_fb_ref = 800.0;
  double settle_factor = 8.0;     // settle time in damping times
  double measure_factor = 20.0;   // measurement window in damping times
  double match_tolerance = 0.02;  // steady-variance matching
  int max_iterations = 30;
  std::uint64_t call_index = 0;
};

struct CrossTalkEstimate {
  Mat3 normalized_inverse_hat = Mat3::Identity();
  Mat3 uncertainty = Mat3::Zero();   // propagated from the matching tolerance
  Mat3 gain_ratios = Mat3::Identity();  // drive ratio matching axis i via electrode j
};

/// Cross-cooling determination of the normalized C^-1: cool each mode through
/// each electrode, match the steady-state variance to the own-electrode
/// reference by a secant search on the drive gain (sign flip on heating), and
/// solve the ratio equations. Calibration-free: only gain ratios enter.
CrossTalkEstimate cross_cool_calibrate(const ProtocolContext& ctx,
                                       const CrossTalkSettings& settings);

struct Compensate3dSettings {
  std::vector<double> tau_schedule = {10e-6, 20e-6, 50e-6, 100e-6};
  Vec3 initial_range = Vec3(60.0, 60.0, 2.0);  // scan half-width per axis, V
  int n_points = 9;
  int repetitions = 5;
  ReleaseRecaptureSettings sequence;
};

struct Compensate3dResult {
  Vec3 voltages = Vec3::Zero();  // electrode-space compensation vector
  std::vector<ScanResult> scans;
  std::vector<Vec3> stage_voltages;  // compensation after each tau stage
};

/// Iterative 3D compensation: axes z, x, y per tau with increasing tau,
/// feeding each v_opt forward through the cross-talk-corrected combination.
Compensate3dResult compensate_3d(const ProtocolContext& ctx, const Compensate3dSettings& settings);

struct TauScanSettings {
  std::vector<double> taus = {5e-6, 10e-6, 20e-6, 30e-6, 40e-6, 50e-6};
  ScanSettings scan;  // voltage grid for the longest tau
  /// Widen the grid as 1/tau around its midpoint so every scan probes a
  /// comparable displacement range (uniform per-point significance).
  bool scale_range_with_tau = true;
};

struct TauScanResult {
  std::vector<ScanResult> scans;
  TauScalingFit scaling;          // parabola scale a(tau) on {tau^2, tau^4}
  double vopt_slope = 0.0;        // weighted linear trend of v_opt(tau)
  double vopt_slope_ci = 0.0;     // 95%
  bool vopt_flat = false;         // slope consistent with zero
};

TauScanResult tau_scan(const ProtocolContext& ctx, const TauScanSettings& settings);

struct RecompressionSettings {
  double tau = 5e-6;
  std::vector<double> tp_values;  // trap pulse durations to scan
  int repetitions = 150;
  int n_recompression = 1;        // n in 2 theta/omega + n pi/omega
  double fit_window = 25e-6;
  double instrument_offset = 0.0; // subtracted from schedule t_p when comparing
  /// Standardize the sampled initial ensemble to the exact target moments
  /// (removes estimator shot noise from the variance curve).
  bool moment_matched = true;
  std::uint64_t call_index = 0;
};

struct RecompressionResult {
  std::vector<double> tp;        // schedule values minus instrument offset
  std::vector<double> sigma_z;   // ensemble std at the end of the second flight
  double sigma_z0 = 0.0;
  double tp_min_empirical = 0.0;
  double tp_min_predicted = 0.0;
};

/// free(tau) -> trap(t_p) -> free(tau) -> recapture; position spread versus
/// t_p with the minimum at the recompression time.
RecompressionResult recompression_experiment(const ProtocolContext& ctx,
                                             const RecompressionSettings& settings);

struct ReheatingSettings {
  std::vector<Vec3> bias_voltages = {Vec3::Zero()};
  double duration = 2e-3;
  int repetitions = 300;
  double window = 40e-6;
  double settle = 100e-6;  // cooling settle before feedback is cut
  std::uint64_t call_index = 0;
};

struct ReheatingCurve {
  Vec3 bias = Vec3::Zero();
  std::vector<double> times;
  std::vector<double> energy;    // J, ensemble-averaged moving variance * m omega^2
  double rate = 0.0;             // J/s linear fit
  double rate_error = 0.0;       // 1 sigma
};

struct ReheatingResult {
  std::vector<ReheatingCurve> curves;
};

/// Disables feedback and tracks the variance growth of the axial mode for
/// each DC bias; the heating rate separates gas/recoil from supply noise.
ReheatingResult reheating_experiment(const ProtocolContext& ctx, const ReheatingSettings& settings);

struct NonlinearitySettings {
  double v_min = -80.0;
  double v_max = 80.0;
  int n_points = 33;
  int repetitions = 5;
  double tau = 15e-6;
  double parabola_halfwidth = 15.0;  // V, inner points used for the parabola
  ReleaseRecaptureSettings sequence;
};

struct NonlinearityResult {
  ScanResult scan;
  GaussianFit gaussian;
  double onset_voltage = 0.0;       // first sustained > 3 sigma parabola deviation
  double onset_displacement = 0.0;  // via displacement_from_voltage
  bool onset_detected = false;
};

/// Wide compensation scan deliberately probing trap anharmonicity; the
/// parabola holds near the minimum, a Gaussian describes the saturating wings.
NonlinearityResult nonlinearity_scan(const ProtocolContext& ctx,
                                     const NonlinearitySettings& settings);

struct ChargeMeasureSettings {
  double drive_amplitude = 1.0;   // V
  double drive_frequency = 120e3; // Hz, detuned from all modes
  double duration = 4e-3;
  std::vector<int> charge_states;  // when set, repeat per state for the histogram
  std::uint64_t call_index = 0;
};

struct ChargeMeasureResult {
  double amplitude = 0.0;         // m, demodulated response
  double inferred_charge = 0.0;   // |q| in elementary charges
  std::vector<double> state_amplitudes;
  double single_e_response = 0.0; // m per elementary charge (histogram spacing)
};

/// Sinusoidal drive on the z electrode, demodulated in the z detection;
/// |q| follows from the damped-oscillator susceptibility.
ChargeMeasureResult charge_measure(const ProtocolContext& ctx,
                                   const ChargeMeasureSettings& settings);

/// Relaxes the axial stray component along the configured drift law,
/// expressed in volt-equivalents through C_zz.
Environment apply_environment_drift(const Environment& env, const ElectrodeSystem& electrodes,
                                    const Particle& particle, double session_time);

}  // namespace levisim

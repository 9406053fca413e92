#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace levisim {

/// Sample variance of the first floor(window/dt) points of the trace.
/// For a sinusoid over integer periods this is a^2/2, proportional to the
/// mean mode energy.
double windowed_variance(std::span<const double> trace, double dt, double window);

/// Centered moving variance, edge-truncated to the available samples.
std::vector<double> moving_variance(std::span<const double> trace, double dt, double window);

struct SineFit {
  double amplitude = 0.0;  // >= 0, channel units
  double phase = 0.0;      // rad, in (-pi, pi]
  double drift = 0.0;      // units/s
  double offset = 0.0;
  double omega = 0.0;      // rad/s actually used
  double residual_rms = 0.0;
  bool converged = true;
};

/// Least squares of a sin(w t + phi) + b t + c. Linear in the coefficients at
/// fixed w; w is refined by golden-section search within +-refine_frac of the
/// guess (trap frequencies drift slightly after recapture).
SineFit fit_sine(std::span<const double> trace, double dt, double omega_guess,
                 double refine_frac = 0.02);

struct ParabolaFit {
  double scale = 0.0;     // a
  double v_opt = 0.0;
  double offset = 0.0;    // b
  double scale_ci = 0.0;  // 95% half-widths
  double v_opt_ci = 0.0;
  double offset_ci = 0.0;
  bool has_minimum = true;  // false when a <= 0
};

/// Fits a (V - V_opt)^2 + b by linear least squares on the monomial basis.
ParabolaFit fit_parabola(std::span<const double> voltages, std::span<const double> energies);

struct GaussianFit {
  double amplitude = 0.0;
  double center = 0.0;
  double width = 0.0;
  double offset = 0.0;
  bool converged = true;
};

/// Levenberg-Marquardt fit of A exp(-(V-mu)^2 / 2w^2) + c, seeded from the
/// parabola fit.
GaussianFit fit_gaussian(std::span<const double> voltages, std::span<const double> energies);

struct ExponentialDriftFit {
  double v_f = 0.0;
  double v_0 = 0.0;
  double rc = 0.0;
  bool converged = true;
};

/// Fits V_f + V_0 exp(-t/RC) with a log-linear initialization.
ExponentialDriftFit fit_exponential_drift(std::span<const double> times,
                                          std::span<const double> values);

struct TauScalingFit {
  double c2 = 0.0;
  double c4 = 0.0;
};

/// Linear least squares on the basis {tau^2, tau^4}; optional per-point
/// standard deviations for weighting.
TauScalingFit fit_tau_scaling(std::span<const double> taus, std::span<const double> scales,
                              std::span<const double> sigmas = {});

struct Psd {
  std::vector<double> frequency;  // Hz, one-sided
  std::vector<double> power;      // units^2/Hz
  double df = 0.0;
};

/// Welch periodogram: Hann window, averaged segments, normalized so the
/// integral over frequency equals the trace variance.
Psd psd_welch(std::span<const double> trace, double sample_rate, std::size_t segment_length = 16384,
              double overlap = 0.5);

/// Trapezoidal band integral minus a median-floor baseline.
double integrate_peak(const Psd& psd, double f_lo, double f_hi);

/// Detector gain from a thermalized trace: sqrt(var_V / (k_B T / m omega^2)).
double equipartition_calibrate(std::span<const double> trace_volts, double temperature,
                               double omega, double mass);

struct EnsembleStats {
  double mean_energy = 0.0;              // J, m omega^2 <a^2> / 2
  std::vector<double> trace_times;       // s, one trap period
  std::vector<double> variance_trace;    // m^2 across the ensemble
  double max_std = 0.0;                  // sqrt(max variance)
  double max_std_error = 0.0;            // SEM from n_bins sub-ensembles
};

/// Statistics of sine-fitted post-recapture trajectories: the ensemble
/// variance of the reconstructions versus time, its maximum, and a binned
/// standard error.
EnsembleStats ensemble_stats(std::span<const SineFit> fits, double mass, double omega,
                             int n_bins = 10);

}  // namespace levisim

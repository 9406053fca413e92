#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "levisim/detector.hpp"
#include "levisim/electrodes.hpp"
#include "levisim/environment.hpp"
#include "levisim/feedback.hpp"
#include "levisim/forces.hpp"
#include "levisim/rng.hpp"
#include "levisim/schedule.hpp"
#include "levisim/state.hpp"

namespace levisim {

/// DC supply noise applied to the bias setpoints. The absolute term is white
/// with the given amplitude spectral density; the fractional term scales with
/// the setpoint (relative supply stability) and is low-passed at corner_hz.
struct SupplyNoiseModel {
  bool enabled = false;
  double abs_density = 1e-7;   // V/sqrt(Hz)
  double fractional = 1e-6;    // (V/V)/sqrt(Hz)
  double corner_hz = 1e6;
};

/// Sinusoidal voltage added to one electrode (charge measurements).
struct HarmonicDrive {
  bool enabled = false;
  int electrode = 2;
  double amplitude = 0.0;   // V
  double frequency = 120e3; // Hz
};

/// Full physical configuration of one simulation run.
struct SystemConfig {
  Particle particle;
  TrapField trap;
  ElectrodeSystem electrodes;
  Environment environment;
  DetectorModel detector;
  FeedbackConfig feedback;
  SupplyNoiseModel supply_noise;
  HarmonicDrive drive;
  ScheduleTimings timings;
  double dt = 5e-9;                 // integrator step
  double loss_radius_factor = 5.0;  // excursion limit in units of z_R
  Vec3 nbar = Vec3(1000.0, 1000.0, 117.0);

  void validate() const;
  /// Reference-setup defaults: 156 nm silica, [302, 268, 92] kHz trap,
  /// measured cross-talk matrix, UHV environment.
  static SystemConfig defaults();
};

/// Gaussian phase-space sample with per-axis occupation nbar, zero
/// cross-correlations, centered at the origin.
StateVector sample_thermal_state(const Vec3& nbar, const TrapField& trap, const Particle& particle,
                                 RngStream& rng);

/// One step of m r_ddot = F - gamma p + xi, BAOAB splitting: symplectic
/// kick-drift around an exact Ornstein-Uhlenbeck damping+noise update.
/// dp_intensity is the white-noise intensity per axis, <xi xi'> = D delta.
template <typename ForceFn>
inline void langevin_step(StateVector& s, double t, double h, double mass, double gamma,
                          const Vec3& dp_intensity, ForceFn&& force, RngStream& rng) {
  const Vec3 f0 = force(s, t);
  s.momentum += 0.5 * h * f0;
  s.position += (0.5 * h / mass) * s.momentum;
  const double c1 = std::exp(-gamma * h);
  const Vec3 xi = rng.normal3();
  for (int i = 0; i < 3; ++i) {
    // exact OU variance; gamma -> 0 limit is D h
    const double var = gamma > 0.0 ? dp_intensity[i] * (1.0 - c1 * c1) / (2.0 * gamma)
                                   : dp_intensity[i] * h;
    s.momentum[i] = c1 * s.momentum[i] + std::sqrt(var) * xi[i];
  }
  s.position += (0.5 * h / mass) * s.momentum;
  const Vec3 f1 = force(s, t + h);
  s.momentum += 0.5 * h * f1;
}

struct SimulationOptions {
  bool record_states = true;
  bool trap_initially_on = true;
  bool feedback_initially_on = true;
  Vec3 initial_dc_voltages = Vec3::Zero();
  /// When unset, a thermal state is sampled and centered at the static
  /// equilibrium under the initial voltages.
  std::optional<StateVector> initial_state;
};

struct Trajectory {
  double sample_dt = 0.0;
  std::vector<double> times;
  std::vector<StateVector> states;  // empty unless record_states
  std::array<std::vector<double>, 3> detector_channels;
  std::vector<double> envelope;
  bool particle_lost = false;
  double loss_time = 0.0;
};

/// Integrates the particle through the schedule; bit-reproducible for a fixed
/// stream. Detector channels are sampled at detector.sample_rate; an excursion
/// beyond loss_radius_factor * z_R sets particle_lost and ends the run.
Trajectory simulate(const SystemConfig& config, const PulseSchedule& schedule,
                    const SimulationOptions& options, RngStream& rng);

}  // namespace levisim

#include "levisim/simulate.hpp"

#include <stdexcept>

#include "levisim/constants.hpp"

namespace levisim {

namespace {

// Measured cross-talk matrix of the reference electrode assembly.
Mat3 measured_normalized_inverse() {
  Mat3 n;
  n << 1.0, 0.32, -37.0,
       0.36, 1.0, 4.4,
       0.0011, -0.0012, 1.0;
  return n;
}

}  // namespace

void SystemConfig::validate() const {
  particle.validate();
  trap.validate(particle.mass);
  electrodes.validate();
  environment.validate();
  detector.validate(trap.omega_max());
  for (int i = 0; i < 3; ++i) feedback.axes[i].validate(trap.omega[i]);
  if (!(dt > 0.0)) throw std::domain_error("SystemConfig: dt must be > 0");
  if (!(dt * trap.omega_max() <= 0.1))
    throw std::domain_error("SystemConfig: dt too coarse, require dt * omega_max <= 0.1");
  for (int i = 0; i < 3; ++i) {
    if (!(nbar[i] >= 0.0)) throw std::domain_error("SystemConfig: nbar must be >= 0");
  }
}

SystemConfig SystemConfig::defaults() {
  SystemConfig c;
  c.particle = Particle::from_geometry(156e-9, 2000.0, 45);
  const double two_pi = 2.0 * constants::pi;
  c.trap = TrapField::gaussian_beam(Vec3(two_pi * 302e3, two_pi * 268e3, two_pi * 92e3),
                                    c.particle.mass);
  c.electrodes = ElectrodeSystem::from_normalized_inverse(measured_normalized_inverse(),
                                                          Vec3(1e-18, 1e-18, 1e-16), c.particle);
  c.environment = Environment{};
  c.environment.gamma = epstein_gamma(c.environment.pressure, c.environment.gas_temperature,
                                      c.particle.diameter, c.particle.mass);
  // radial gains hold the closed-loop radial occupation near 1e3 so that
  // 100 us free expansions stay within the linear radial trap region
  for (int i = 0; i < 3; ++i) {
    auto& ax = c.feedback.axes[i];
    ax.enabled = true;
    ax.gain = i == 2 ? 200.0 : 6000.0;
    ax.routing_electrode = i;
  }
  return c;
}

StateVector sample_thermal_state(const Vec3& nbar, const TrapField& trap, const Particle& particle,
                                 RngStream& rng) {
  StateVector s;
  for (int i = 0; i < 3; ++i) {
    if (!(nbar[i] >= 0.0)) throw std::domain_error("sample_thermal_state: nbar must be >= 0");
    const double zzp = zero_point_motion(particle.mass, trap.omega[i]);
    const double occ = std::sqrt(2.0 * nbar[i] + 1.0);
    s.position[i] = zzp * occ * rng.normal();
    s.momentum[i] = particle.mass * trap.omega[i] * zzp * occ * rng.normal();
  }
  return s;
}

Trajectory simulate(const SystemConfig& config, const PulseSchedule& schedule,
                    const SimulationOptions& options, RngStream& rng) {
  config.validate();
  const ScheduleProgram program(schedule, options.trap_initially_on,
                                options.feedback_initially_on, options.initial_dc_voltages);

  const double dt = config.dt;
  const auto stride =
      static_cast<std::size_t>(std::max(1.0, std::round(1.0 / (config.detector.sample_rate * dt))));
  const double sample_dt = stride * dt;
  const auto n_steps = static_cast<std::size_t>(std::llround(schedule.total_duration / dt));
  const std::size_t n_samples = n_steps / stride + 1;

  StateVector state;
  if (options.initial_state) {
    state = *options.initial_state;
  } else {
    state = sample_thermal_state(config.nbar, config.trap, config.particle, rng);
    state.position += static_equilibrium(config.particle, config.trap, config.electrodes,
                                         config.environment, options.initial_dc_voltages);
  }

  const Particle& particle = config.particle;
  const double mass = particle.mass;
  const double gamma = config.environment.gamma;
  const Vec3 f_const = constant_external_force(particle, config.environment);
  const Vec3 dp_gas = Vec3::Constant(2.0 * mass * gamma * constants::boltzmann *
                                     config.environment.gas_temperature);
  const double loss_radius = config.loss_radius_factor * config.trap.rayleigh_range;

  ColdDampingController controller(config.feedback, config.detector, config.electrodes, mass);

  // Fractional supply noise: per-electrode OU processes whose in-band density
  // is fractional * |V_dc| per sqrt(Hz) below the corner.
  const double omega_c = 2.0 * constants::pi * config.supply_noise.corner_hz;
  const double ou_decay = std::exp(-omega_c * dt);
  const double ou_sigma_unit = std::sqrt(omega_c / 4.0);  // stationary sigma for unit density
  const double ou_kick = ou_sigma_unit * std::sqrt(1.0 - ou_decay * ou_decay);
  const double white_sigma = std::sqrt(1.0 / (2.0 * dt));  // unit-density white sample
  Vec3 ou_state = Vec3::Zero();

  Trajectory traj;
  traj.sample_dt = sample_dt;
  traj.times.reserve(n_samples);
  if (options.record_states) traj.states.reserve(n_samples);
  for (auto& ch : traj.detector_channels) ch.reserve(n_samples);
  traj.envelope.reserve(n_samples);

  Vec3 fb_voltages = Vec3::Zero();

  const auto force_at = [&](const StateVector& s, const Vec3& voltages, double env) -> Vec3 {
    return trap_force(s.position, config.trap, mass, env) + config.electrodes.force(voltages) +
           f_const;
  };

  for (std::size_t k = 0; k <= n_steps; ++k) {
    const double t = static_cast<double>(k) * dt;
    const double env = program.envelope(t);

    if (k % stride == 0) {
      // detector sample + controller update on the sampling clock
      Vec3 sample;
      for (int c = 0; c < 3; ++c) {
        const auto& ch = config.detector.channels[c];
        const double noise_sigma = std::sqrt(ch.noise_psd * config.detector.sample_rate / 2.0);
        sample[c] = ch.gain * ch.weights.dot(state.position) + noise_sigma * rng.normal();
      }
      const auto cmd = controller.update(sample, program.feedback_on(t));
      fb_voltages = cmd.voltages;

      traj.times.push_back(t);
      if (options.record_states) traj.states.push_back(state);
      for (int c = 0; c < 3; ++c) traj.detector_channels[c].push_back(sample[c]);
      traj.envelope.push_back(env);

      if (state.position.cwiseAbs().maxCoeff() > loss_radius) {
        traj.particle_lost = true;
        traj.loss_time = t;
        break;
      }
      if (!state.finite())
        throw std::runtime_error("simulate: non-finite state at t=" + std::to_string(t));
    }
    if (k == n_steps) break;

    Vec3 v_dc = program.dc_voltages(t);
    if (config.drive.enabled)
      v_dc[config.drive.electrode] +=
          config.drive.amplitude *
          std::sin(2.0 * constants::pi * config.drive.frequency * t);
    if (config.supply_noise.enabled) {
      const Vec3 xi_ou = rng.normal3();
      const Vec3 xi_w = rng.normal3();
      for (int i = 0; i < 3; ++i) {
        const double frac_density = config.supply_noise.fractional * std::abs(v_dc[i]);
        ou_state[i] = ou_decay * ou_state[i] + ou_kick * xi_ou[i];
        v_dc[i] += frac_density * ou_state[i] +
                   config.supply_noise.abs_density * white_sigma * xi_w[i];
      }
    }
    const Vec3 voltages = v_dc + fb_voltages;

    // recoil diffusion follows the optical power
    const Vec3 dp_total = dp_gas + env * config.environment.recoil_dp;
    langevin_step(
        state, t, dt, mass, gamma, dp_total,
        [&](const StateVector& s, double tt) { return force_at(s, voltages, program.envelope(tt)); },
        rng);
  }
  return traj;
}

}  // namespace levisim

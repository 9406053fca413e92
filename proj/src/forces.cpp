#include "levisim/forces.hpp"

namespace levisim {

Vec3 total_force(const StateVector& state, const Particle& particle, const TrapField& trap,
                 const ElectrodeSystem& electrodes, const Environment& env, const Vec3& voltages,
                 double envelope, const Vec3& feedback_force) {
  return trap_force(state.position, trap, particle.mass, envelope) +
         electrodes.force(voltages) + constant_external_force(particle, env) + feedback_force;
}

Vec3 static_equilibrium(const Particle& particle, const TrapField& trap,
                        const ElectrodeSystem& electrodes, const Environment& env,
                        const Vec3& voltages) {
  const Vec3 f_const = electrodes.force(voltages) + constant_external_force(particle, env);
  Vec3 r = Vec3::Zero();
  for (int iter = 0; iter < 8; ++iter) {
    const Vec3 residual = trap_force(r, trap, particle.mass, 1.0) + f_const;
    Vec3 dr;
    for (int i = 0; i < 3; ++i)
      dr[i] = residual[i] / (particle.mass * trap.omega[i] * trap.omega[i]);
    r += dr;
    if (dr.cwiseAbs().maxCoeff() < 1e-18) break;
  }
  return r;
}

}  // namespace levisim

#pragma once

#include "levisim/electrodes.hpp"
#include "levisim/environment.hpp"
#include "levisim/state.hpp"
#include "levisim/trap.hpp"

namespace levisim {

/// Deterministic force budget: trap + C V + q e E_stray + F_ne + m g + feedback.
/// Stochastic terms live in the integrator, not here.
Vec3 total_force(const StateVector& state, const Particle& particle, const TrapField& trap,
                 const ElectrodeSystem& electrodes, const Environment& env, const Vec3& voltages,
                 double envelope, const Vec3& feedback_force);

/// Static equilibrium position under trap + constant forces at the given
/// voltages (envelope 1); Newton iteration from the harmonic solution.
Vec3 static_equilibrium(const Particle& particle, const TrapField& trap,
                        const ElectrodeSystem& electrodes, const Environment& env,
                        const Vec3& voltages);

}  // namespace levisim

#pragma once

#include <optional>

#include "levisim/linalg.hpp"
#include "levisim/particle.hpp"

namespace levisim {

/// Slow exponential relaxation of the axial stray force after charging events,
/// expressed in volt-equivalents through C_zz: v(t) = v_f + v_0 exp(-t/rc).
struct DriftModel {
  double v_f = 0.3;      // V
  double v_0 = 0.7;      // V
  double rc = 18000.0;   // s (300 min)
};

/// Residual gas, stray fields and other constant forces acting on the particle.
struct Environment {
  double pressure = 6e-8;          // mbar, informational unless gamma is derived
  double gas_temperature = 300.0;  // K
  double gamma = 2.913e-4;         // 1/s, momentum damping rate
  /// Momentum diffusion from photon recoil per axis (N^2 s), active only while
  /// the trap is on; default matches the gas rate at 1e-7 mbar.
  Vec3 recoil_dp = Vec3::Constant(1.599e-41);
  Vec3 stray_field = Vec3::Zero();            // V/m, trap basis
  Vec3 nonelectrostatic_force = Vec3::Zero(); // N
  Vec3 gravity = Vec3(-9.80665, 0.0, 0.0);    // m/s^2, default along -x
  std::optional<DriftModel> drift;

  void validate() const;
};

/// Free-molecular (Epstein, diffuse reflection) drag rate for a sphere.
/// A convenience only; the authoritative path is a direct gamma input.
double epstein_gamma(double pressure_mbar, double gas_temperature, double particle_diameter,
                     double particle_mass);

/// Constant external force q e E_stray + F_nonelectrostatic + m g.
Vec3 constant_external_force(const Particle& particle, const Environment& env);

}  // namespace levisim

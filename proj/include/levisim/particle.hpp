#pragma once

#include "levisim/constants.hpp"

namespace levisim {

/// Sphere mass from diameter and bulk density, rho*pi*d^3/6.
double derive_mass(double diameter, double density);

/// Ground-state position spread sqrt(hbar / (2 m omega)) of a harmonic mode.
double zero_point_motion(double mass, double omega);

/// Trapped silica sphere carrying an integer number of elementary charges.
struct Particle {
  double diameter = 156e-9;   // m
  double density = 2000.0;    // kg/m^3
  double mass = 0.0;          // kg
  int charge_count = 45;      // signed, units of e

  double charge() const { return charge_count * constants::elementary_charge; }

  /// Mass derived from geometry.
  static Particle from_geometry(double diameter, double density, int charge_count);
  /// Explicit mass (diameter/density kept only as metadata).
  static Particle with_mass(double mass, int charge_count);

  void validate() const;
};

}  // namespace levisim

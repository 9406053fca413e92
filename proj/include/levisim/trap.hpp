#pragma once

#include "levisim/linalg.hpp"

namespace levisim {

enum class TrapShape { kHarmonic, kGaussianBeam };

/// Optical trap described by its three mechanical frequencies plus a beam
/// geometry derived from them. The depth U0 is a free scale; waists and
/// Rayleigh range follow from
///   omega_x^2 = 4 U0 / (m w_x^2),  omega_y^2 = 4 U0 / (m w_y^2),
///   omega_z^2 = 2 U0 / (m z_R^2).
/// The diffraction relation z_R = pi w^2 / lambda is deliberately not
/// enforced; real traps are aberrated.
struct TrapField {
  Vec3 omega = Vec3::Zero();  // rad/s, axes (x, y, z)
  double depth = kDefaultDepth;
  double waist_x = 0.0;
  double waist_y = 0.0;
  double rayleigh_range = 0.0;
  TrapShape shape = TrapShape::kHarmonic;

  static constexpr double kDefaultDepth = 1e-19;  // J, a few k_B T at room temperature

  static TrapField harmonic(const Vec3& omega, double mass, double depth = kDefaultDepth);
  static TrapField gaussian_beam(const Vec3& omega, double mass, double depth = kDefaultDepth);

  /// Potential energy at position r relative to the trap center (envelope 1).
  double potential(const Vec3& r, double mass) const;

  double omega_max() const { return omega.maxCoeff(); }

  void validate(double mass) const;
};

/// Restoring force on the particle; envelope in [0,1] scales the optical power.
Vec3 trap_force(const Vec3& position, const TrapField& trap, double mass, double envelope);

/// Displacement along one axis at which the harmonic potential energy reaches
/// the given fraction of the trap depth: the common per-axis scale on which
/// anharmonicity becomes comparable between axes. Ratios between axes equal
/// omega_z / omega_i regardless of the fraction.
double nonlinearity_equivalent_displacement(const TrapField& trap, double mass, int axis,
                                            double depth_fraction);

}  // namespace levisim

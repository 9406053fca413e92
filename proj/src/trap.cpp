#include "levisim/trap.hpp"

#include <cmath>
#include <stdexcept>

namespace levisim {

namespace {

void derive_geometry(TrapField& t, double mass) {
  t.waist_x = std::sqrt(4.0 * t.depth / (mass * t.omega[0] * t.omega[0]));
  t.waist_y = std::sqrt(4.0 * t.depth / (mass * t.omega[1] * t.omega[1]));
  t.rayleigh_range = std::sqrt(2.0 * t.depth / (mass * t.omega[2] * t.omega[2]));
}

}  // namespace

TrapField TrapField::harmonic(const Vec3& omega, double mass, double depth) {
  TrapField t;
  t.omega = omega;
  t.depth = depth;
  t.shape = TrapShape::kHarmonic;
  t.validate(mass);
  derive_geometry(t, mass);
  return t;
}

TrapField TrapField::gaussian_beam(const Vec3& omega, double mass, double depth) {
  TrapField t = harmonic(omega, mass, depth);
  t.shape = TrapShape::kGaussianBeam;
  return t;
}

void TrapField::validate(double mass) const {
  if (!(mass > 0.0)) throw std::domain_error("TrapField: mass must be > 0");
  for (int i = 0; i < 3; ++i) {
    if (!(omega[i] > 0.0)) throw std::domain_error("TrapField: omega must be > 0 on all axes");
  }
  if (!(depth > 0.0)) throw std::domain_error("TrapField: depth must be > 0");
}

double TrapField::potential(const Vec3& r, double mass) const {
  if (shape == TrapShape::kHarmonic) {
    double u = 0.0;
    for (int i = 0; i < 3; ++i) u += 0.5 * mass * omega[i] * omega[i] * r[i] * r[i];
    return u - depth;  // offset so the minimum sits at -U0, matching the beam model
  }
  const double zeta = r[2] / rayleigh_range;
  const double s = 1.0 / (1.0 + zeta * zeta);
  const double rho2 = (r[0] / waist_x) * (r[0] / waist_x) + (r[1] / waist_y) * (r[1] / waist_y);
  return -depth * s * std::exp(-2.0 * rho2 * s);
}

Vec3 trap_force(const Vec3& position, const TrapField& trap, double mass, double envelope) {
  if (envelope == 0.0) return Vec3::Zero();
  if (trap.shape == TrapShape::kHarmonic) {
    Vec3 f;
    for (int i = 0; i < 3; ++i)
      f[i] = -envelope * mass * trap.omega[i] * trap.omega[i] * position[i];
    return f;
  }
  const double zeta = position[2] / trap.rayleigh_range;
  const double s = 1.0 / (1.0 + zeta * zeta);
  const double rho2 = (position[0] / trap.waist_x) * (position[0] / trap.waist_x) +
                      (position[1] / trap.waist_y) * (position[1] / trap.waist_y);
  const double g = std::exp(-2.0 * rho2 * s);
  const double u0 = envelope * trap.depth;
  Vec3 f;
  f[0] = -4.0 * u0 * position[0] * s * s * g / (trap.waist_x * trap.waist_x);
  f[1] = -4.0 * u0 * position[1] * s * s * g / (trap.waist_y * trap.waist_y);
  f[2] = -2.0 * u0 * position[2] * s * s * g * (1.0 - 2.0 * rho2 * s) /
         (trap.rayleigh_range * trap.rayleigh_range);
  return f;
}

double nonlinearity_equivalent_displacement(const TrapField& trap, double mass, int axis,
                                            double depth_fraction) {
  if (axis < 0 || axis > 2) throw std::domain_error("axis must be 0, 1 or 2");
  if (!(depth_fraction > 0.0)) throw std::domain_error("depth_fraction must be > 0");
  return std::sqrt(2.0 * depth_fraction * trap.depth / (mass * trap.omega[axis] * trap.omega[axis]));
}

}  // namespace levisim

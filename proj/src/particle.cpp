#include "levisim/particle.hpp"

#include <cmath>
#include <stdexcept>

namespace levisim {

double derive_mass(double diameter, double density) {
  if (!(diameter > 0.0)) throw std::domain_error("derive_mass: diameter must be > 0");
  if (!(density > 0.0)) throw std::domain_error("derive_mass: density must be > 0");
  return density * constants::pi * diameter * diameter * diameter / 6.0;
}

double zero_point_motion(double mass, double omega) {
  if (!(mass > 0.0)) throw std::domain_error("zero_point_motion: mass must be > 0");
  if (!(omega > 0.0)) throw std::domain_error("zero_point_motion: omega must be > 0");
  return std::sqrt(constants::hbar / (2.0 * mass * omega));
}

Particle Particle::from_geometry(double diameter, double density, int charge_count) {
  Particle p;
  p.diameter = diameter;
  p.density = density;
  p.mass = derive_mass(diameter, density);
  p.charge_count = charge_count;
  return p;
}

Particle Particle::with_mass(double mass, int charge_count) {
  Particle p;
  p.mass = mass;
  p.charge_count = charge_count;
  if (!(mass > 0.0)) throw std::domain_error("Particle: mass must be > 0");
  return p;
}

void Particle::validate() const {
  if (!(mass > 0.0)) throw std::domain_error("Particle: mass must be > 0");
}

}  // namespace levisim

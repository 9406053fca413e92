#include "levisim/environment.hpp"

#include <cmath>
#include <stdexcept>

#include "levisim/constants.hpp"

namespace levisim {

void Environment::validate() const {
  if (!(gamma >= 0.0)) throw std::domain_error("Environment: gamma must be >= 0");
  if (!(gas_temperature >= 0.0)) throw std::domain_error("Environment: gas_temperature must be >= 0");
  for (int i = 0; i < 3; ++i) {
    if (!(recoil_dp[i] >= 0.0)) throw std::domain_error("Environment: recoil_dp must be >= 0");
  }
}

double epstein_gamma(double pressure_mbar, double gas_temperature, double particle_diameter,
                     double particle_mass) {
  if (!(pressure_mbar >= 0.0)) throw std::domain_error("epstein_gamma: pressure must be >= 0");
  const double p_pa = pressure_mbar * 100.0;
  const double mg = constants::air_molecule_mass;
  const double rho_gas = p_pa * mg / (constants::boltzmann * gas_temperature);
  const double vbar = std::sqrt(8.0 * constants::boltzmann * gas_temperature / (constants::pi * mg));
  const double a = 0.5 * particle_diameter;
  return (1.0 + constants::pi / 8.0) * (4.0 * constants::pi / 3.0) * rho_gas * vbar * a * a /
         particle_mass;
}

Vec3 constant_external_force(const Particle& particle, const Environment& env) {
  return particle.charge() * env.stray_field + env.nonelectrostatic_force +
         particle.mass * env.gravity;
}

}  // namespace levisim

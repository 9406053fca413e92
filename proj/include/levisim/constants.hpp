#pragma once

namespace levisim::constants {

// CODATA 2018 exact / recommended values, SI.
inline constexpr double hbar = 1.054571817e-34;        // J s
inline constexpr double boltzmann = 1.380649e-23;      // J/K
inline constexpr double elementary_charge = 1.602176634e-19;  // C
inline constexpr double standard_gravity = 9.80665;    // m/s^2
inline constexpr double pi = 3.141592653589793238462643383279502884;
inline constexpr double atomic_mass = 1.66053906660e-27;  // kg

// Mean molar mass of air, used by the free-molecular drag helper.
inline constexpr double air_molecule_mass = 28.97 * atomic_mass;  // kg

}  // namespace levisim::constants

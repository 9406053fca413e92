#pragma once

#include <array>

#include "levisim/linalg.hpp"

namespace levisim {

/// Linear optical readout: volts = gain * (weights . position) + additive
/// white noise of the given one-sided PSD.
struct DetectorChannel {
  double gain = 1e7;             // V/m
  Vec3 weights = Vec3::Zero();   // dimensionless projection of motion
  double noise_psd = 1e-14;      // V^2/Hz
};

/// Three channels: homodyne (z-dominant) plus two forward split detections,
/// each dominated by one axis as the cross-cooling method requires.
struct DetectorModel {
  std::array<DetectorChannel, 3> channels = {
      DetectorChannel{1e7, Vec3(1.0, 0.05, 0.05), 1e-14},
      DetectorChannel{1e7, Vec3(0.05, 1.0, 0.05), 1e-14},
      DetectorChannel{1e7, Vec3(0.01, 0.01, 1.0), 1e-14},
  };
  double sample_rate = 1e7;  // Hz

  void validate(double omega_max) const;
};

}  // namespace levisim

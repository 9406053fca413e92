#pragma once

#include "levisim/linalg.hpp"
#include "levisim/particle.hpp"
#include "levisim/trap.hpp"

namespace levisim {

/// Phase-space point, ordering (x, y, z) / (px, py, pz).
struct StateVector {
  Vec3 position = Vec3::Zero();  // m
  Vec3 momentum = Vec3::Zero();  // kg m/s

  bool finite() const { return position.allFinite() && momentum.allFinite(); }
};

/// 6x6 second-moment matrix over (x, y, z, px, py, pz), validated symmetric
/// and positive semi-definite at construction.
class CovarianceState {
 public:
  explicit CovarianceState(const Mat6& sigma);

  const Mat6& sigma() const { return sigma_; }
  double position_variance(int axis) const { return sigma_(axis, axis); }
  double momentum_variance(int axis) const { return sigma_(axis + 3, axis + 3); }

  /// Diagonal thermal state: sigma_r^2 = z_zp^2 (2 nbar + 1),
  /// sigma_p^2 = (m omega z_zp)^2 (2 nbar + 1) per axis.
  static CovarianceState thermal(const Vec3& nbar, const TrapField& trap, const Particle& particle);

 private:
  Mat6 sigma_;
};

}  // namespace levisim

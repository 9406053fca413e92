#include "levisim/state.hpp"

#include <stdexcept>

namespace levisim {

CovarianceState::CovarianceState(const Mat6& sigma) : sigma_(sigma) {
  const double scale = sigma.cwiseAbs().maxCoeff();
  if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (scale > 0 ? scale : 1.0))
    throw std::domain_error("CovarianceState: matrix not symmetric");
  sigma_ = 0.5 * (sigma + sigma.transpose());
  Eigen::SelfAdjointEigenSolver<Mat6> es(sigma_, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-12 * sigma_.trace())
    throw std::domain_error("CovarianceState: matrix not positive semi-definite");
}

CovarianceState CovarianceState::thermal(const Vec3& nbar, const TrapField& trap,
                                         const Particle& particle) {
  Mat6 s = Mat6::Zero();
  for (int i = 0; i < 3; ++i) {
    if (!(nbar[i] >= 0.0)) throw std::domain_error("thermal: nbar must be >= 0");
    const double zzp = zero_point_motion(particle.mass, trap.omega[i]);
    const double occ = 2.0 * nbar[i] + 1.0;
    s(i, i) = zzp * zzp * occ;
    const double sp = particle.mass * trap.omega[i] * zzp;
    s(i + 3, i + 3) = sp * sp * occ;
  }
  return CovarianceState(s);
}

}  // namespace levisim

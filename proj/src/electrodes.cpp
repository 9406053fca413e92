#include "levisim/electrodes.hpp"

#include <stdexcept>

namespace levisim {

namespace {

void check_invertible(const Mat3& m, const char* what) {
  Eigen::JacobiSVD<Mat3> svd(m);
  const double smin = svd.singularValues().minCoeff();
  const double smax = svd.singularValues().maxCoeff();
  if (!(smin > 0.0) || smax / smin > 1e12)
    throw std::domain_error(std::string(what) + ": matrix is singular or ill-conditioned");
}

}  // namespace

Mat3 normalized_inverse(const Mat3& c) {
  check_invertible(c, "normalized_inverse");
  Mat3 inv = c.inverse();
  Mat3 out;
  for (int j = 0; j < 3; ++j) {
    const double d = inv(j, j);
    if (d == 0.0) throw std::domain_error("normalized_inverse: zero diagonal in C^-1");
    out.col(j) = inv.col(j) / d;
  }
  return out;
}

ElectrodeSystem ElectrodeSystem::from_geometry(const Mat3& g, const Particle& particle) {
  ElectrodeSystem e;
  e.geometry = g;
  e.transduction = particle.charge() * g;
  e.validate();
  return e;
}

ElectrodeSystem ElectrodeSystem::from_transduction(const Mat3& c, const Particle& particle) {
  ElectrodeSystem e;
  e.transduction = c;
  e.geometry = c / particle.charge();
  e.validate();
  return e;
}

ElectrodeSystem ElectrodeSystem::from_normalized_inverse(const Mat3& n_inv, const Vec3& cnv_diag,
                                                         const Particle& particle) {
  check_invertible(n_inv, "from_normalized_inverse");
  const Mat3 b = n_inv.inverse();
  Mat3 c;
  for (int i = 0; i < 3; ++i) {
    if (cnv_diag[i] == 0.0)
      throw std::domain_error("from_normalized_inverse: zero diagonal transduction");
    c.row(i) = b.row(i) * (cnv_diag[i] / b(i, i));
  }
  return from_transduction(c, particle);
}

Vec3 ElectrodeSystem::cnv_diag() const {
  return transduction.diagonal().cwiseAbs();
}

Vec3 ElectrodeSystem::force(const Vec3& voltages) const {
  return transduction * voltages;
}

Mat3 ElectrodeSystem::corrected_basis() const {
  return normalized_inverse(transduction);
}

Vec3 ElectrodeSystem::correction_column(int axis) const {
  if (axis < 0 || axis > 2) throw std::domain_error("correction_column: axis must be 0..2");
  return corrected_basis().col(axis);
}

void ElectrodeSystem::validate() const {
  check_invertible(geometry, "ElectrodeSystem");
}

}  // namespace levisim

#pragma once

#include "levisim/linalg.hpp"
#include "levisim/particle.hpp"

namespace levisim {

/// Inverse of C with each column scaled by its own diagonal element, leaving a
/// unit diagonal. Column j gives the electrode voltage ratios that produce a
/// force along trap axis j only, per volt on electrode j.
Mat3 normalized_inverse(const Mat3& c);

/// Electrode pair geometry and the voltage-to-force map in the trap basis.
/// Rows index trap axes, columns index electrodes; C = q e G.
struct ElectrodeSystem {
  Mat3 geometry = Mat3::Identity();      // (V/m)/V
  Mat3 transduction = Mat3::Identity();  // N/V

  static ElectrodeSystem from_geometry(const Mat3& g, const Particle& particle);
  static ElectrodeSystem from_transduction(const Mat3& c, const Particle& particle);
  /// Reconstructs C from a unit-diagonal inverse and target diagonal
  /// magnitudes; signs of cnv_diag carry the diagonal signs.
  static ElectrodeSystem from_normalized_inverse(const Mat3& n_inv, const Vec3& cnv_diag,
                                                 const Particle& particle);

  Vec3 cnv_diag() const;                        // |C_ii|
  Vec3 force(const Vec3& voltages) const;       // C V
  Mat3 corrected_basis() const;                 // normalized_inverse(C)
  /// Electrode voltage combination pushing along one trap axis, normalized to
  /// one volt on that axis' own electrode.
  Vec3 correction_column(int axis) const;

  void validate() const;
};

}  // namespace levisim

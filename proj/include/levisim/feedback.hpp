#pragma once

#include <array>
#include <optional>
#include <vector>

#include "levisim/detector.hpp"
#include "levisim/electrodes.hpp"
#include "levisim/linalg.hpp"

namespace levisim {

/// Band-limited velocity (cold damping) feedback for one axis. The commanded
/// voltage targets an intended force of -m gamma_fb v_hat through
/// C(axis, routing_electrode); the physical force the electrodes apply is C V
/// with all cross-talk terms included.
struct AxisFeedback {
  bool enabled = false;
  double gain = 0.0;            // gamma_fb equivalent, 1/s
  int routing_electrode = -1;   // -1: the axis' own electrode
  double bandwidth = 2e6;       // Hz, velocity-estimator low-pass
  double extra_delay = 0.0;     // s, rounded to detector samples
  /// Calibration dial: when set, the commanded voltage is
  /// -drive_volts_per_velocity * v_hat and the transduction is not consulted.
  std::optional<double> drive_volts_per_velocity;

  void validate(double omega) const;
};

struct FeedbackConfig {
  std::array<AxisFeedback, 3> axes;
};

class ColdDampingController {
 public:
  ColdDampingController(const FeedbackConfig& config, const DetectorModel& detector,
                        const ElectrodeSystem& electrodes, double particle_mass);

  struct Command {
    Vec3 voltages = Vec3::Zero();
    Vec3 intended_force = Vec3::Zero();
  };

  /// Consumes one detector sample (all three channels, volts). Estimators run
  /// regardless of `active`; the commanded voltage is zero while inactive.
  Command update(const Vec3& detector_sample, bool active);
  void reset();

 private:
  struct AxisState {
    double x_prev = 0.0;
    double v_filt = 0.0;
    bool primed = false;
    std::vector<double> delay_line;
    std::size_t delay_pos = 0;
  };

  FeedbackConfig config_;
  const DetectorModel* detector_;
  Mat3 transduction_;
  double mass_;
  double sample_dt_;
  std::array<AxisState, 3> state_;
  std::array<double, 3> alpha_{};  // low-pass coefficient per axis
};

}  // namespace levisim

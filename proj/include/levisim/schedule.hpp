#pragma once

#include <vector>

#include "levisim/linalg.hpp"

namespace levisim {

enum class ScheduleAction { kTrapOff, kTrapOn, kFeedbackOff, kFeedbackOn, kSetDcVoltages };

/// Switching characteristics shared by every schedule a protocol builds.
struct ScheduleTimings {
  double trap_rise_fall = 170e-9;
  double trap_trigger_delay = 380e-9;
  double trap_on_extra_delay = 0.0;
  double feedback_switch_delay = 50e-9;
};

struct ScheduleEvent {
  double time = 0.0;
  ScheduleAction action = ScheduleAction::kTrapOff;
  Vec3 voltages = Vec3::Zero();  // kSetDcVoltages only
};

/// Timed trap/feedback/voltage events with the switching characteristics of
/// the optical and electronic chains: the trap envelope ramps linearly over
/// trap_rise_fall starting trap_trigger_delay after the trigger, feedback
/// toggles feedback_switch_delay after its trigger.
struct PulseSchedule {
  std::vector<ScheduleEvent> events;
  double trap_rise_fall = 170e-9;
  double trap_trigger_delay = 380e-9;
  /// Extra delay applied to TRAP_ON edges only (rise/fall asymmetry knob).
  double trap_on_extra_delay = 0.0;
  double feedback_switch_delay = 50e-9;
  double total_duration = 0.0;

  void validate() const;
  void set_timings(const ScheduleTimings& t);

  /// cool -> release at t_release for tau -> recapture, running to `total`.
  static PulseSchedule release_recapture(double t_release, double tau, double total);
};

/// Compiled, queryable form of a schedule.
class ScheduleProgram {
 public:
  ScheduleProgram(const PulseSchedule& schedule, bool trap_initially_on = true,
                  bool feedback_initially_on = true, const Vec3& initial_voltages = Vec3::Zero());

  /// Trap power envelope in [0,1]; piecewise linear.
  double envelope(double t) const;
  bool feedback_on(double t) const;
  Vec3 dc_voltages(double t) const;

 private:
  struct Ramp {
    double t0, t1;   // ramp interval
    double v0, v1;   // envelope endpoints
  };
  std::vector<Ramp> ramps_;                    // sorted by t0; constant between ramps
  std::vector<std::pair<double, bool>> fb_;    // feedback switch times
  std::vector<std::pair<double, Vec3>> dc_;    // voltage set times
  bool fb_initial_;
  Vec3 dc_initial_;
  double env_initial_;
};

}  // namespace levisim

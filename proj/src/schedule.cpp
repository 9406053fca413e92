#include "levisim/schedule.hpp"

#include <algorithm>
#include <stdexcept>

namespace levisim {

void PulseSchedule::validate() const {
  double prev = -1.0;
  for (const auto& ev : events) {
    if (!(ev.time > prev)) throw std::domain_error("PulseSchedule: event times must be strictly increasing");
    prev = ev.time;
  }
  if (!events.empty() && total_duration < events.back().time)
    throw std::domain_error("PulseSchedule: total_duration must cover all events");
}

void PulseSchedule::set_timings(const ScheduleTimings& t) {
  trap_rise_fall = t.trap_rise_fall;
  trap_trigger_delay = t.trap_trigger_delay;
  trap_on_extra_delay = t.trap_on_extra_delay;
  feedback_switch_delay = t.feedback_switch_delay;
}

PulseSchedule PulseSchedule::release_recapture(double t_release, double tau, double total) {
  PulseSchedule s;
  s.events = {
      {t_release, ScheduleAction::kTrapOff, Vec3::Zero()},
      {t_release + 1e-12, ScheduleAction::kFeedbackOff, Vec3::Zero()},
      {t_release + tau, ScheduleAction::kTrapOn, Vec3::Zero()},
  };
  // keep event times strictly increasing while switching trap and feedback
  // effectively together
  s.events[1].time = t_release + 1e-9;
  s.total_duration = total;
  s.validate();
  return s;
}

ScheduleProgram::ScheduleProgram(const PulseSchedule& schedule, bool trap_initially_on,
                                 bool feedback_initially_on, const Vec3& initial_voltages)
    : fb_initial_(feedback_initially_on),
      dc_initial_(initial_voltages),
      env_initial_(trap_initially_on ? 1.0 : 0.0) {
  schedule.validate();
  double level = env_initial_;
  for (const auto& ev : schedule.events) {
    switch (ev.action) {
      case ScheduleAction::kTrapOff: {
        const double t0 = ev.time + schedule.trap_trigger_delay;
        ramps_.push_back({t0, t0 + schedule.trap_rise_fall, level, 0.0});
        level = 0.0;
        break;
      }
      case ScheduleAction::kTrapOn: {
        const double t0 = ev.time + schedule.trap_trigger_delay + schedule.trap_on_extra_delay;
        ramps_.push_back({t0, t0 + schedule.trap_rise_fall, level, 1.0});
        level = 1.0;
        break;
      }
      case ScheduleAction::kFeedbackOff:
        fb_.emplace_back(ev.time + schedule.feedback_switch_delay, false);
        break;
      case ScheduleAction::kFeedbackOn:
        fb_.emplace_back(ev.time + schedule.feedback_switch_delay, true);
        break;
      case ScheduleAction::kSetDcVoltages:
        dc_.emplace_back(ev.time, ev.voltages);
        break;
    }
  }
  for (std::size_t i = 1; i < ramps_.size(); ++i) {
    if (ramps_[i].t0 < ramps_[i - 1].t1)
      throw std::domain_error("PulseSchedule: overlapping trap ramps");
  }
}

double ScheduleProgram::envelope(double t) const {
  // last ramp with t0 <= t decides; before any ramp, the initial level holds
  auto it = std::upper_bound(ramps_.begin(), ramps_.end(), t,
                             [](double v, const Ramp& r) { return v < r.t0; });
  if (it == ramps_.begin()) return env_initial_;
  const Ramp& r = *(it - 1);
  if (t >= r.t1) return r.v1;
  if (r.t1 == r.t0) return r.v1;
  return r.v0 + (r.v1 - r.v0) * (t - r.t0) / (r.t1 - r.t0);
}

bool ScheduleProgram::feedback_on(double t) const {
  auto it = std::upper_bound(fb_.begin(), fb_.end(), t,
                             [](double v, const auto& p) { return v < p.first; });
  if (it == fb_.begin()) return fb_initial_;
  return (it - 1)->second;
}

Vec3 ScheduleProgram::dc_voltages(double t) const {
  auto it = std::upper_bound(dc_.begin(), dc_.end(), t,
                             [](double v, const auto& p) { return v < p.first; });
  if (it == dc_.begin()) return dc_initial_;
  return (it - 1)->second;
}

}  // namespace levisim

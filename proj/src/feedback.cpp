#include "levisim/feedback.hpp"

#include <cmath>
#include <stdexcept>

#include "levisim/constants.hpp"

namespace levisim {

void AxisFeedback::validate(double omega) const {
  if (!(gain >= 0.0)) throw std::domain_error("AxisFeedback: gain must be >= 0");
  if (enabled && !(2.0 * constants::pi * bandwidth > omega))
    throw std::domain_error("AxisFeedback: bandwidth must exceed the cooled mode frequency");
}

void DetectorModel::validate(double omega_max) const {
  if (!(sample_rate >= 10.0 * omega_max / (2.0 * constants::pi)))
    throw std::domain_error("DetectorModel: sample_rate must be >= 10x the highest mode frequency");
}

ColdDampingController::ColdDampingController(const FeedbackConfig& config,
                                             const DetectorModel& detector,
                                             const ElectrodeSystem& electrodes,
                                             double particle_mass)
    : config_(config),
      detector_(&detector),
      transduction_(electrodes.transduction),
      mass_(particle_mass),
      sample_dt_(1.0 / detector.sample_rate) {
  for (int i = 0; i < 3; ++i) {
    const auto& ax = config_.axes[i];
    alpha_[i] = 1.0 - std::exp(-2.0 * constants::pi * ax.bandwidth * sample_dt_);
    const auto n_delay = static_cast<std::size_t>(std::llround(ax.extra_delay / sample_dt_));
    state_[i].delay_line.assign(n_delay, 0.0);
  }
}

void ColdDampingController::reset() {
  for (auto& s : state_) {
    s.x_prev = 0.0;
    s.v_filt = 0.0;
    s.primed = false;
    std::fill(s.delay_line.begin(), s.delay_line.end(), 0.0);
    s.delay_pos = 0;
  }
}

ColdDampingController::Command ColdDampingController::update(const Vec3& detector_sample,
                                                             bool active) {
  Command cmd;
  for (int i = 0; i < 3; ++i) {
    const auto& ax = config_.axes[i];
    if (!ax.enabled) continue;
    auto& st = state_[i];
    const double x = detector_sample[i] / detector_->channels[i].gain;
    if (!st.primed) {
      st.x_prev = x;
      st.primed = true;
      continue;
    }
    const double v_raw = (x - st.x_prev) / sample_dt_;
    st.x_prev = x;
    st.v_filt += alpha_[i] * (v_raw - st.v_filt);

    double v_hat = st.v_filt;
    if (!st.delay_line.empty()) {
      const double delayed = st.delay_line[st.delay_pos];
      st.delay_line[st.delay_pos] = v_hat;
      st.delay_pos = (st.delay_pos + 1) % st.delay_line.size();
      v_hat = delayed;
    }
    if (!active) continue;

    const int route = ax.routing_electrode < 0 ? i : ax.routing_electrode;
    double volts;
    if (ax.drive_volts_per_velocity) {
      volts = -(*ax.drive_volts_per_velocity) * v_hat;
    } else {
      const double c = transduction_(i, route);
      if (c == 0.0) throw std::domain_error("ColdDampingController: zero transduction on route");
      volts = -mass_ * ax.gain * v_hat / c;
    }
    cmd.voltages[route] += volts;
    cmd.intended_force[i] += -mass_ * ax.gain * v_hat;
  }
  return cmd;
}

}  // namespace levisim

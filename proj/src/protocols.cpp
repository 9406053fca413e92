#include "levisim/protocols.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "levisim/constants.hpp"
#include "levisim/parallel.hpp"

namespace levisim {

namespace {

constexpr std::uint64_t id(ProtocolId p) { return static_cast<std::uint64_t>(p); }

std::span<const double> window_span(const std::vector<double>& trace, double sample_dt,
                                    double t_start, double length) {
  const auto i0 = static_cast<std::size_t>(std::llround(t_start / sample_dt));
  const auto n = static_cast<std::size_t>(std::llround(length / sample_dt));
  if (i0 + n > trace.size()) throw std::runtime_error("window beyond trace end");
  return {trace.data() + i0, n};
}

double energy_from_variance(double var_volts, double gain, double mass, double omega) {
  // var(z) = a^2/2 for a sinusoid, so E = 1/2 m w^2 a^2 = m w^2 var
  return mass * omega * omega * var_volts / (gain * gain);
}

double energy_from_amplitude(double amp_volts, double gain, double mass, double omega) {
  const double a = amp_volts / gain;
  return 0.5 * mass * omega * omega * a * a;
}

}  // namespace

void moment_match_ensemble(std::vector<StateVector>& states, const Vec3& nbar,
                           const TrapField& trap, const Particle& particle) {
  const auto n = static_cast<double>(states.size());
  if (states.size() < 3) return;
  for (int ax = 0; ax < 3; ++ax) {
    double mz = 0.0, mp = 0.0;
    for (const auto& s : states) {
      mz += s.position[ax];
      mp += s.momentum[ax];
    }
    mz /= n;
    mp /= n;
    double szz = 0.0, spp = 0.0, szp = 0.0;
    for (const auto& s : states) {
      const double dz = s.position[ax] - mz;
      const double dp = s.momentum[ax] - mp;
      szz += dz * dz;
      spp += dp * dp;
      szp += dz * dp;
    }
    szz /= n;
    spp /= n;
    szp /= n;
    Eigen::Matrix2d sample;
    sample << szz, szp, szp, spp;
    const double zzp = zero_point_motion(particle.mass, trap.omega[ax]);
    const double occ = 2.0 * nbar[ax] + 1.0;
    Eigen::Matrix2d target = Eigen::Matrix2d::Zero();
    target(0, 0) = zzp * zzp * occ;
    target(1, 1) = std::pow(particle.mass * trap.omega[ax] * zzp, 2) * occ;
    const Eigen::Matrix2d lt = target.llt().matrixL();
    const Eigen::Matrix2d ls = sample.llt().matrixL();
    const Eigen::Matrix2d tf = lt * ls.inverse();
    for (auto& s : states) {
      Eigen::Vector2d v(s.position[ax] - mz, s.momentum[ax] - mp);
      v = tf * v;
      s.position[ax] = v(0);
      s.momentum[ax] = v(1);
    }
  }
}

ReleaseRecaptureRep release_recapture_rep(const SystemConfig& system,
                                          const ReleaseRecaptureSettings& settings,
                                          std::optional<StateVector> initial_state,
                                          RngStream& rng) {
  // variance windows snap to whole oscillation periods; fractional periods
  // leave a phase-dependent few-percent bias on the inferred energy
  const double period = 2.0 * constants::pi / system.trap.omega[settings.measure_axis];
  const auto whole_periods = [&](double window) {
    return std::max(1.0, std::round(window / period)) * period;
  };
  const double pre_window = whole_periods(settings.pre_window);
  const double post_window = whole_periods(settings.post_window);

  const double t_release = settings.settle + pre_window;
  const double t_rec = t_release + settings.tau;
  const double post_span = settings.buffer + std::max(post_window, settings.fit_window);
  PulseSchedule schedule = PulseSchedule::release_recapture(t_release, settings.tau,
                                                            t_rec + post_span + 2e-6);
  schedule.set_timings(system.timings);
  SimulationOptions options;
  options.initial_dc_voltages = settings.dc_voltages;
  if (initial_state) {
    StateVector s = *initial_state;
    s.position += static_equilibrium(system.particle, system.trap, system.electrodes,
                                     system.environment, settings.dc_voltages);
    options.initial_state = s;
  }
  const Trajectory traj = simulate(system, schedule, options, rng);

  ReleaseRecaptureRep rep;
  rep.lost = traj.particle_lost;
  if (rep.lost) return rep;

  const int ax = settings.measure_axis;
  const auto& channel = traj.detector_channels[static_cast<std::size_t>(ax)];
  const double gain = system.detector.channels[static_cast<std::size_t>(ax)].gain;
  const double omega = system.trap.omega[ax];
  const double mass = system.particle.mass;
  const double dt = traj.sample_dt;

  const auto pre = window_span(channel, dt, settings.settle, pre_window);
  rep.energy_pre = energy_from_variance(windowed_variance(pre, dt, pre_window), gain, mass, omega);
  const double pre_fit_span = std::min(settings.fit_window, pre_window);
  const auto pre_fit_win =
      window_span(channel, dt, t_release - pre_fit_span, pre_fit_span);
  rep.pre_fit = fit_sine(pre_fit_win, dt, omega);

  const auto post = window_span(channel, dt, t_rec + settings.buffer, post_window);
  rep.energy_post = energy_from_variance(windowed_variance(post, dt, post_window), gain, mass,
                                         omega);
  const auto post_fit_win = window_span(channel, dt, t_rec + settings.buffer, settings.fit_window);
  rep.post_fit = fit_sine(post_fit_win, dt, omega);

  if (!traj.states.empty()) {
    const auto i_rec = std::min(traj.states.size() - 1,
                                static_cast<std::size_t>(std::llround(t_rec / dt)));
    const Vec3 eq = static_equilibrium(system.particle, system.trap, system.electrodes,
                                       system.environment, settings.dc_voltages);
    rep.displacement_z = traj.states[i_rec].position[ax] - eq[ax];
  }
  return rep;
}

ScanResult compensation_scan(const ProtocolContext& ctx, const ScanSettings& settings) {
  if (settings.n_points < 4) throw std::domain_error("compensation_scan: need >= 4 points");
  if (settings.axis < 0 || settings.axis > 2)
    throw std::domain_error("compensation_scan: axis must be 0..2");

  const Vec3 column = settings.crosstalk_corrected
                          ? ctx.system.electrodes.correction_column(settings.axis)
                          : Vec3::Unit(settings.axis);

  ScanResult result;
  result.axis = settings.axis;
  result.tau = settings.tau;
  result.repetitions = settings.repetitions;
  result.voltages.resize(static_cast<std::size_t>(settings.n_points));
  for (int p = 0; p < settings.n_points; ++p) {
    result.voltages[static_cast<std::size_t>(p)] =
        settings.v_min + (settings.v_max - settings.v_min) * p /
                             std::max(1, settings.n_points - 1);
  }

  const auto n_runs = static_cast<std::size_t>(settings.n_points) *
                      static_cast<std::size_t>(settings.repetitions);
  std::vector<double> energies(n_runs, 0.0);
  std::vector<char> lost(n_runs, 0);

  // optional per-point moment matching of the repetition ensembles
  std::vector<std::vector<StateVector>> matched;
  if (settings.moment_matched_init) {
    matched.resize(result.voltages.size());
    for (std::size_t p = 0; p < matched.size(); ++p) {
      matched[p].resize(static_cast<std::size_t>(settings.repetitions));
      for (std::size_t r = 0; r < matched[p].size(); ++r) {
        RngStream rng = RngStream::derive(ctx.seed,
                                          {id(ProtocolId::kScan), settings.call_index, p, r});
        matched[p][r] =
            sample_thermal_state(ctx.system.nbar, ctx.system.trap, ctx.system.particle, rng);
      }
      moment_match_ensemble(matched[p], ctx.system.nbar, ctx.system.trap, ctx.system.particle);
    }
  }

  parallel_for(
      n_runs,
      [&](std::size_t run) {
        const auto p = run / static_cast<std::size_t>(settings.repetitions);
        const auto r = run % static_cast<std::size_t>(settings.repetitions);
        // every (voltage, repetition) draws its own thermal state; sharing
        // draws across voltages would let the ensemble's residual thermal
        // deflection masquerade as a constant force and bias v_opt
        RngStream rng = RngStream::derive(
            ctx.seed, {id(ProtocolId::kScan), settings.call_index, p,
                       static_cast<std::uint64_t>(r), settings.moment_matched_init ? 1u : 0u});
        ReleaseRecaptureSettings seq = settings.sequence;
        seq.tau = settings.tau;
        seq.measure_axis = settings.axis;
        seq.dc_voltages = settings.base_voltages + result.voltages[p] * column;
        std::optional<StateVector> init;
        if (settings.moment_matched_init) init = matched[p][r];
        const auto rep = release_recapture_rep(ctx.system, seq, init, rng);
        if (rep.lost) {
          lost[run] = 1;
          return;
        }
        const double e =
            settings.method == ScanEnergyMethod::kSineFit
                ? energy_from_amplitude(
                      rep.post_fit.amplitude,
                      ctx.system.detector.channels[static_cast<std::size_t>(settings.axis)].gain,
                      ctx.system.particle.mass, ctx.system.trap.omega[settings.axis])
                : rep.energy_post;
        energies[run] = e;
      },
      ctx.threads > 0 ? ctx.threads : worker_count());

  result.energies.resize(result.voltages.size());
  std::vector<double> fit_v, fit_e;
  for (std::size_t p = 0; p < result.voltages.size(); ++p) {
    auto& point = result.energies[p];
    int valid = 0;
    double sum = 0.0, sum2 = 0.0;
    bool any_lost = false;
    for (int r = 0; r < settings.repetitions; ++r) {
      const std::size_t run = p * static_cast<std::size_t>(settings.repetitions) +
                              static_cast<std::size_t>(r);
      if (lost[run]) {
        any_lost = true;
        continue;
      }
      point.push_back(energies[run]);
      sum += energies[run];
      sum2 += energies[run] * energies[run];
      ++valid;
    }
    result.valid_repetitions.push_back(valid);
    const double mean = valid > 0 ? sum / valid : 0.0;
    result.mean_energy.push_back(mean);
    result.sem_energy.push_back(
        valid > 1 ? std::sqrt(std::max(0.0, (sum2 / valid - mean * mean) / (valid - 1))) : 0.0);
    if (!any_lost && valid > 0) {
      fit_v.push_back(result.voltages[p]);
      fit_e.push_back(mean);
    }
  }

  if (fit_v.size() < 4)
    throw ParticleLostError("compensation_scan: fewer than 4 valid voltage points");
  result.fit = fit_parabola(fit_v, fit_e);
  result.v_opt = result.fit.v_opt;
  result.v_opt_in_range = result.v_opt >= settings.v_min && result.v_opt <= settings.v_max;
  return result;
}

namespace {

struct SteadyVarianceProbe {
  const ProtocolContext& ctx;
  const CrossTalkSettings& settings;
  int axis;

  double operator()(int route, double drive) const {
    SystemConfig system = ctx.system;
    auto& ax = system.feedback.axes[static_cast<std::size_t>(axis)];
    ax.enabled = true;
    ax.routing_electrode = route;
    ax.drive_volts_per_velocity = drive;
    const double gamma_tot = settings.gamma_fb_ref + system.environment.gamma;
    const double settle = settings.settle_factor / gamma_tot;
    const double measure = settings.measure_factor / gamma_tot;
    PulseSchedule schedule;
    schedule.total_duration = settle + measure;
    // one stream per axis, reused across evaluations: common random numbers
    // make the variance a smooth function of the drive gain
    RngStream rng = RngStream::derive(
        ctx.seed, {id(ProtocolId::kCrossTalk), settings.call_index,
                   static_cast<std::uint64_t>(axis)});
    SimulationOptions options;
    options.record_states = false;
    const Trajectory traj = simulate(system, schedule, options, rng);
    if (traj.particle_lost) throw ParticleLostError("cross_cool_calibrate: particle lost");
    const auto& channel = traj.detector_channels[static_cast<std::size_t>(axis)];
    const auto win = window_span(channel, traj.sample_dt, settle, measure);
    return windowed_variance(win, traj.sample_dt, measure);
  }
};

}  // namespace

CrossTalkEstimate cross_cool_calibrate(const ProtocolContext& ctx,
                                       const CrossTalkSettings& settings) {
  Mat3 chat = Mat3::Identity();
  Mat3 ratios = Mat3::Identity();

  std::array<std::array<double, 3>, 3> ratio_store{};
  parallel_for(
      3,
      [&](std::size_t axis_idx) {
        const int i = static_cast<int>(axis_idx);
        SteadyVarianceProbe probe{ctx, settings, i};
        const double c_ii = ctx.system.electrodes.transduction(i, i);
        const double d_ref = ctx.system.particle.mass * settings.gamma_fb_ref / c_ii;
        const double var_ref = probe(i, d_ref);

        // a wrong-sign drive anti-damps the mode; the particle escaping is a
        // legitimate outcome that simply marks that sign as heating
        const auto eval = [&](int route, double drive) -> double {
          try {
            return probe(route, drive);
          } catch (const ParticleLostError&) {
            return std::numeric_limits<double>::infinity();
          }
        };

        for (int j = 0; j < 3; ++j) {
          if (j == i) {
            ratio_store[axis_idx][static_cast<std::size_t>(j)] = 1.0;
            continue;
          }
          // sign first: with a shared noise realization the cooler phase has
          // the strictly smaller variance, and an escape marks the heating
          // phase outright (the 180 degree flip of the feedback phase)
          double sign = 0.0;
          for (double mag = 16.0 * std::abs(d_ref); sign == 0.0 && mag > 1e-4 * std::abs(d_ref);
               mag /= 8.0) {
            const double vp = eval(j, mag);
            const double vm = eval(j, -mag);
            if (std::isinf(vp) && std::isinf(vm)) continue;  // both unstable: weaker probe
            if (std::isinf(vp)) {
              sign = -1.0;
            } else if (std::isinf(vm)) {
              sign = 1.0;
            } else {
              sign = vp < vm ? 1.0 : -1.0;
            }
          }
          if (sign == 0.0) sign = 1.0;

          double mag = std::abs(d_ref);
          bool matched = false;
          for (int flip = 0; flip < 2 && !matched; ++flip) {
            // bracket the matching gain on the log axis; on the cooling phase
            // a lost particle means the loop was overdriven, i.e. gain above
            // the match point
            double lo_mag = mag, hi_mag = mag;
            double var_lo = eval(j, sign * lo_mag);
            double var_hi = var_lo;
            int guard = 0;
            while ((var_lo < var_ref || std::isinf(var_lo)) && guard++ < 16) {
              lo_mag /= 4.0;
              var_lo = eval(j, sign * lo_mag);
            }
            guard = 0;
            while (!(var_hi < var_ref) && !std::isinf(var_hi) && guard++ < 16) {
              hi_mag *= 4.0;
              var_hi = eval(j, sign * hi_mag);
            }
            const bool hi_ok = var_hi < var_ref || std::isinf(var_hi);
            if (!(var_lo >= var_ref) || !hi_ok) {
              sign = -sign;  // heating response: retry with the phase flipped
              continue;
            }
            // secant on log gain between finite endpoints, plain bisection
            // whenever one side of the bracket is an escape
            double a = std::log(lo_mag), b = std::log(hi_mag);
            double va = var_lo, vb = var_hi;
            for (int it = 0; it < settings.max_iterations; ++it) {
              double mid;
              if (std::isfinite(va) && std::isfinite(vb)) {
                const double fa = std::log(va / var_ref);
                const double fb = std::log(vb / var_ref);
                mid = fa != fb ? a - fa * (b - a) / (fb - fa) : 0.5 * (a + b);
                if (!(mid > std::min(a, b) && mid < std::max(a, b))) mid = 0.5 * (a + b);
              } else {
                mid = 0.5 * (a + b);
              }
              const double vm = eval(j, sign * std::exp(mid));
              mag = std::exp(mid);
              if (std::isfinite(vm) &&
                  std::abs(vm - var_ref) <= 0.25 * settings.match_tolerance * var_ref)
                break;
              if (!std::isfinite(vm) || vm < var_ref) {
                b = mid;
                vb = vm;
              } else {
                a = mid;
                va = vm;
              }
            }
            matched = true;
          }
          if (!matched)
            throw std::runtime_error("cross_cool_calibrate: no cooling response on either phase");
          ratio_store[axis_idx][static_cast<std::size_t>(j)] = sign * mag / d_ref;
        }
      },
      ctx.threads > 0 ? ctx.threads : worker_count());

  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      ratios(i, j) = ratio_store[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      // matched cooling means d_j C_ij = d_ref C_ii, so C_ij / C_ii = d_ref/d_j
      chat(i, j) = 1.0 / ratios(i, j);
    }
  }

  CrossTalkEstimate estimate;
  estimate.gain_ratios = ratios;
  estimate.normalized_inverse_hat = normalized_inverse(chat);

  // linearized uncertainty: perturb each measured ratio by the matching
  // tolerance and accumulate the response in quadrature
  Mat3 var_acc = Mat3::Zero();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      if (i == j) continue;
      Mat3 perturbed = chat;
      perturbed(i, j) *= 1.0 + settings.match_tolerance;
      const Mat3 diff = normalized_inverse(perturbed) - estimate.normalized_inverse_hat;
      var_acc += diff.cwiseProduct(diff);
    }
  }
  estimate.uncertainty = var_acc.cwiseSqrt();
  return estimate;
}

Compensate3dResult compensate_3d(const ProtocolContext& ctx,
                                 const Compensate3dSettings& settings) {
  Compensate3dResult result;
  Vec3 halfwidth = settings.initial_range;
  std::uint64_t call = 0;
  for (std::size_t stage = 0; stage < settings.tau_schedule.size(); ++stage) {
    const double tau = settings.tau_schedule[stage];
    for (int axis : {2, 0, 1}) {
      double hw = halfwidth[axis];
      for (int attempt = 0; attempt < 3; ++attempt) {
        ScanSettings scan;
        scan.axis = axis;
        scan.tau = tau;
        scan.v_min = -hw;
        scan.v_max = hw;
        scan.n_points = settings.n_points;
        scan.repetitions = settings.repetitions;
        scan.base_voltages = result.voltages;
        scan.sequence = settings.sequence;
        scan.call_index = call++;
        ScanResult sr = compensation_scan(ctx, scan);
        // a radial scan at short tau may simply lack sensitivity (the weak
        // transduction needs long flights); accept only conclusive minima and
        // otherwise leave the axis for a later, longer-tau stage
        const bool conclusive =
            sr.fit.has_minimum && sr.v_opt_in_range && sr.fit.v_opt_ci < hw;
        if (conclusive) {
          result.voltages += sr.v_opt * ctx.system.electrodes.correction_column(axis);
          halfwidth[axis] = std::min(
              settings.initial_range[axis],
              std::max(8.0 * sr.fit.v_opt_ci, 0.02 * settings.initial_range[axis]));
          result.scans.push_back(std::move(sr));
          break;
        }
        const bool out_of_range = sr.fit.has_minimum && !sr.v_opt_in_range;
        result.scans.push_back(std::move(sr));
        if (!out_of_range) break;  // insensitive: widening will not help
        hw = std::min(2.0 * hw, settings.initial_range[axis]);
      }
    }
    result.stage_voltages.push_back(result.voltages);
  }
  return result;
}

TauScanResult tau_scan(const ProtocolContext& ctx, const TauScanSettings& settings) {
  TauScanResult result;
  const double tau_ref =
      *std::max_element(settings.taus.begin(), settings.taus.end());
  std::vector<double> taus, scales, scale_sigmas, vopts, vopt_sigmas;
  for (std::size_t k = 0; k < settings.taus.size(); ++k) {
    ScanSettings scan = settings.scan;
    scan.tau = settings.taus[k];
    scan.call_index = settings.scan.call_index + k;  // independent noise per tau
    if (settings.scale_range_with_tau) {
      const double mid = 0.5 * (settings.scan.v_min + settings.scan.v_max);
      const double half = 0.5 * (settings.scan.v_max - settings.scan.v_min);
      const double widen = tau_ref / settings.taus[k];
      scan.v_min = mid - half * widen;
      scan.v_max = mid + half * widen;
    }
    ScanResult sr = compensation_scan(ctx, scan);
    taus.push_back(settings.taus[k]);
    scales.push_back(sr.fit.scale);
    scale_sigmas.push_back(std::max(sr.fit.scale_ci / 1.96, 1e-300));
    vopts.push_back(sr.v_opt);
    vopt_sigmas.push_back(std::max(sr.fit.v_opt_ci / 1.96, 1e-300));
    result.scans.push_back(std::move(sr));
  }
  result.scaling = fit_tau_scaling(taus, scales, scale_sigmas);

  // weighted straight-line trend of v_opt(tau)
  double sw = 0, swx = 0, swy = 0, swxx = 0, swxy = 0;
  for (std::size_t k = 0; k < taus.size(); ++k) {
    const double w = 1.0 / (vopt_sigmas[k] * vopt_sigmas[k]);
    sw += w;
    swx += w * taus[k];
    swy += w * vopts[k];
    swxx += w * taus[k] * taus[k];
    swxy += w * taus[k] * vopts[k];
  }
  const double denom = sw * swxx - swx * swx;
  result.vopt_slope = (sw * swxy - swx * swy) / denom;
  result.vopt_slope_ci = 1.96 * std::sqrt(sw / denom);
  result.vopt_flat = std::abs(result.vopt_slope) <= result.vopt_slope_ci;
  return result;
}

RecompressionResult recompression_experiment(const ProtocolContext& ctx,
                                             const RecompressionSettings& settings) {
  const double omega = ctx.system.trap.omega[2];
  RecompressionResult result;
  result.tp_min_predicted = recompression_time(settings.tau, omega, settings.n_recompression);

  std::vector<double> tp_values = settings.tp_values;
  if (tp_values.empty()) {
    // default grid: coarse sweep plus integration-step refinement at the
    // predicted minimum
    const double center = result.tp_min_predicted;
    for (int k = -12; k <= 12; ++k) tp_values.push_back(center + k * 100e-9);
    for (int k = -10; k <= 10; ++k) tp_values.push_back(center + k * ctx.system.dt);
    std::sort(tp_values.begin(), tp_values.end());
    tp_values.erase(std::unique(tp_values.begin(), tp_values.end()), tp_values.end());
  }

  // one shared initial ensemble across all pulse durations
  const auto n_reps = static_cast<std::size_t>(settings.repetitions);
  std::vector<StateVector> initial(n_reps);
  for (std::size_t r = 0; r < n_reps; ++r) {
    RngStream rng = RngStream::derive(ctx.seed, {id(ProtocolId::kRecompression),
                                                 settings.call_index, r});
    initial[r] = sample_thermal_state(ctx.system.nbar, ctx.system.trap, ctx.system.particle, rng);
  }
  if (settings.moment_matched)
    moment_match_ensemble(initial, ctx.system.nbar, ctx.system.trap, ctx.system.particle);

  const double settle = 2e-6;
  const double buffer = 2e-6;
  result.tp.resize(tp_values.size());
  result.sigma_z.resize(tp_values.size());

  const double zzp = zero_point_motion(ctx.system.particle.mass, omega);
  result.sigma_z0 = zzp * std::sqrt(2.0 * ctx.system.nbar[2] + 1.0);

  parallel_for(
      tp_values.size(),
      [&](std::size_t ti) {
        const double tp = tp_values[ti];
        std::vector<SineFit> fits(n_reps);
        for (std::size_t r = 0; r < n_reps; ++r) {
          const double t0 = settle;
          PulseSchedule schedule;
          schedule.events = {
              {t0, ScheduleAction::kTrapOff, Vec3::Zero()},
              {t0 + 1e-9, ScheduleAction::kFeedbackOff, Vec3::Zero()},
              {t0 + settings.tau, ScheduleAction::kTrapOn, Vec3::Zero()},
              {t0 + settings.tau + tp, ScheduleAction::kTrapOff, Vec3::Zero()},
              {t0 + 2.0 * settings.tau + tp, ScheduleAction::kTrapOn, Vec3::Zero()},
          };
          const double t_rec = t0 + 2.0 * settings.tau + tp;
          schedule.total_duration = t_rec + buffer + settings.fit_window + 2e-6;
          schedule.set_timings(ctx.system.timings);
          RngStream rng = RngStream::derive(
              ctx.seed, {id(ProtocolId::kRecompression), settings.call_index, r, ti + 1});
          SimulationOptions options;
          options.record_states = false;
          options.initial_state = initial[r];
          const Trajectory traj = simulate(ctx.system, schedule, options, rng);
          if (traj.particle_lost) throw ParticleLostError("recompression: particle lost");
          const auto& channel = traj.detector_channels[2];
          const auto win = window_span(channel, traj.sample_dt, t_rec + buffer,
                                       settings.fit_window);
          fits[r] = fit_sine(win, traj.sample_dt, omega);
          // back to meters
          fits[r].amplitude /= ctx.system.detector.channels[2].gain;
        }
        // peak of the ensemble variance over the trap phase, i.e. the major
        // axis of the recaptured state; its minimum over t_p sits exactly at
        // the recompression time
        const auto stats = ensemble_stats(fits, ctx.system.particle.mass, omega);
        result.tp[ti] = tp - settings.instrument_offset;
        result.sigma_z[ti] = stats.max_std;
      },
      ctx.threads > 0 ? ctx.threads : worker_count());

  const auto it = std::min_element(result.sigma_z.begin(), result.sigma_z.end());
  result.tp_min_empirical =
      result.tp[static_cast<std::size_t>(std::distance(result.sigma_z.begin(), it))];
  return result;
}

ReheatingResult reheating_experiment(const ProtocolContext& ctx,
                                     const ReheatingSettings& settings) {
  ReheatingResult result;
  const double omega = ctx.system.trap.omega[2];
  const double mass = ctx.system.particle.mass;
  const double gain = ctx.system.detector.channels[2].gain;

  for (const Vec3& bias : settings.bias_voltages) {
    PulseSchedule schedule;
    schedule.events = {{settings.settle, ScheduleAction::kFeedbackOff, Vec3::Zero()}};
    schedule.total_duration = settings.settle + settings.duration;
    schedule.set_timings(ctx.system.timings);

    const auto n_reps = static_cast<std::size_t>(settings.repetitions);
    std::vector<std::vector<double>> traces(n_reps);
    parallel_for(
        n_reps,
        [&](std::size_t r) {
          // repetition streams shared across bias settings: rate differences
          // are not masked by sampling noise
          RngStream rng = RngStream::derive(ctx.seed,
                                            {id(ProtocolId::kReheating), settings.call_index, r});
          SimulationOptions options;
          options.record_states = false;
          options.initial_dc_voltages = bias;
          const Trajectory traj = simulate(ctx.system, schedule, options, rng);
          if (traj.particle_lost) throw ParticleLostError("reheating: particle lost");
          const auto& channel = traj.detector_channels[2];
          std::vector<double> meters(channel.size());
          for (std::size_t i = 0; i < channel.size(); ++i) meters[i] = channel[i] / gain;
          traces[r] = moving_variance(meters, traj.sample_dt, settings.window);
        },
        ctx.threads > 0 ? ctx.threads : worker_count());

    ReheatingCurve curve;
    curve.bias = bias;
    const std::size_t n_samples = traces[0].size();
    curve.energy.assign(n_samples, 0.0);
    for (const auto& tr : traces)
      for (std::size_t i = 0; i < n_samples; ++i) curve.energy[i] += tr[i];
    const double dt_s = 1.0 / ctx.system.detector.sample_rate;
    curve.times.resize(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) {
      curve.energy[i] = curve.energy[i] / static_cast<double>(n_reps) * mass * omega * omega;
      curve.times[i] = static_cast<double>(i) * dt_s;
    }

    // linear heating-rate fit on the feedback-off span, skipping one window at
    // each edge of the moving variance
    const auto i0 = static_cast<std::size_t>(
        std::llround((settings.settle + settings.window) / dt_s));
    const auto i1 = n_samples - static_cast<std::size_t>(std::llround(settings.window / dt_s));
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(i1 - i0);
    for (std::size_t i = i0; i < i1; ++i) {
      sx += curve.times[i];
      sy += curve.energy[i];
      sxx += curve.times[i] * curve.times[i];
      sxy += curve.times[i] * curve.energy[i];
    }
    const double denom = n * sxx - sx * sx;
    curve.rate = (n * sxy - sx * sy) / denom;
    const double intercept = (sy - curve.rate * sx) / n;
    double sse = 0.0;
    for (std::size_t i = i0; i < i1; ++i) {
      const double r = curve.energy[i] - (intercept + curve.rate * curve.times[i]);
      sse += r * r;
    }
    // effective sample count: the moving variance decorrelates on the window
    // scale, not the sample scale
    const double n_eff = std::max(4.0, (curve.times[i1 - 1] - curve.times[i0]) / settings.window);
    curve.rate_error = std::sqrt(sse / (n - 2.0) / denom * n) * std::sqrt(n / n_eff);
    result.curves.push_back(std::move(curve));
  }
  return result;
}

NonlinearityResult nonlinearity_scan(const ProtocolContext& ctx,
                                     const NonlinearitySettings& settings) {
  ScanSettings scan;
  scan.axis = 2;
  scan.tau = settings.tau;
  scan.v_min = settings.v_min;
  scan.v_max = settings.v_max;
  scan.n_points = settings.n_points;
  scan.repetitions = settings.repetitions;
  scan.sequence = settings.sequence;

  NonlinearityResult result;
  // the wide scan tolerates lost extremes; the parabola is refit on the inner
  // points below
  result.scan = compensation_scan(ctx, scan);

  std::vector<double> inner_v, inner_e, all_v, all_e;
  for (std::size_t p = 0; p < result.scan.voltages.size(); ++p) {
    if (result.scan.valid_repetitions[p] < settings.repetitions) continue;
    all_v.push_back(result.scan.voltages[p]);
    all_e.push_back(result.scan.mean_energy[p]);
  }
  const double center = result.scan.v_opt;
  for (std::size_t k = 0; k < all_v.size(); ++k) {
    if (std::abs(all_v[k] - center) <= settings.parabola_halfwidth) {
      inner_v.push_back(all_v[k]);
      inner_e.push_back(all_e[k]);
    }
  }
  if (inner_v.size() >= 4) result.scan.fit = fit_parabola(inner_v, inner_e);
  result.gaussian = fit_gaussian(all_v, all_e);

  // onset: first sustained deviation beyond 3 sigma from the inner parabola
  const auto deviates = [&](std::size_t p) {
    const double v = result.scan.voltages[p] - result.scan.fit.v_opt;
    const double pred = result.scan.fit.scale * v * v + result.scan.fit.offset;
    const double sem = std::max(result.scan.sem_energy[p], 1e-300);
    return std::abs(result.scan.mean_energy[p] - pred) > 3.0 * sem;
  };
  double onset = std::numeric_limits<double>::infinity();
  for (int dir : {-1, +1}) {
    // walk outward; the onset is the innermost point from which the deviation
    // persists to the scan edge
    std::vector<std::size_t> order;
    for (std::size_t p = 0; p < result.scan.voltages.size(); ++p) {
      if (result.scan.valid_repetitions[p] < settings.repetitions) continue;
      const double dv = result.scan.voltages[p] - result.scan.fit.v_opt;
      if (dir * dv > 0) order.push_back(p);
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return std::abs(result.scan.voltages[a] - result.scan.fit.v_opt) <
             std::abs(result.scan.voltages[b] - result.scan.fit.v_opt);
    });
    std::size_t first_sustained = order.size();
    for (std::size_t k = order.size(); k-- > 0;) {
      if (deviates(order[k]))
        first_sustained = k;
      else
        break;
    }
    if (first_sustained < order.size())
      onset = std::min(
          onset, std::abs(result.scan.voltages[order[first_sustained]] - result.scan.fit.v_opt));
  }
  if (std::isfinite(onset)) {
    result.onset_detected = true;
    result.onset_voltage = onset;
    result.onset_displacement = displacement_from_voltage(
        ctx.system.electrodes.cnv_diag()[2], onset, settings.tau, ctx.system.particle.mass);
  }
  return result;
}

ChargeMeasureResult charge_measure(const ProtocolContext& ctx,
                                   const ChargeMeasureSettings& settings) {
  const double omega = ctx.system.trap.omega[2];
  const double omega_d = 2.0 * constants::pi * settings.drive_frequency;
  for (int i = 0; i < 3; ++i) {
    if (std::abs(omega_d - ctx.system.trap.omega[i]) < 0.05 * ctx.system.trap.omega[i])
      throw std::domain_error("charge_measure: drive too close to a mechanical mode");
  }

  const auto measure_amp = [&](const SystemConfig& system, std::uint64_t sub) {
    SystemConfig cfg = system;
    cfg.drive.enabled = true;
    cfg.drive.electrode = 2;
    cfg.drive.amplitude = settings.drive_amplitude;
    cfg.drive.frequency = settings.drive_frequency;
    PulseSchedule schedule;
    schedule.total_duration = settings.duration;
    RngStream rng =
        RngStream::derive(ctx.seed, {id(ProtocolId::kCharge), settings.call_index, sub});
    SimulationOptions options;
    options.record_states = false;
    const Trajectory traj = simulate(cfg, schedule, options, rng);
    if (traj.particle_lost) throw ParticleLostError("charge_measure: particle lost");
    const auto& channel = traj.detector_channels[2];
    // demodulate over an integer number of drive cycles, past the ring-up
    const double settle = 1e-3;
    const double dt = traj.sample_dt;
    const double span = settings.duration - settle;
    const double n_cycles = std::floor(span * settings.drive_frequency);
    if (n_cycles < 10) throw std::domain_error("charge_measure: duration too short");
    const double window = n_cycles / settings.drive_frequency;
    const auto i0 = static_cast<std::size_t>(std::llround(settle / dt));
    const auto n = static_cast<std::size_t>(std::llround(window / dt));
    double in_phase = 0.0, quadrature = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double t = static_cast<double>(i0 + k) * dt;
      const double v = channel[i0 + k];
      in_phase += v * std::sin(omega_d * t);
      quadrature += v * std::cos(omega_d * t);
    }
    const double amp_volts =
        2.0 * std::hypot(in_phase, quadrature) / static_cast<double>(n);
    return amp_volts / ctx.system.detector.channels[2].gain;
  };

  ChargeMeasureResult result;
  result.amplitude = measure_amp(ctx.system, 0);

  // invert the damped-oscillator response for |q|
  const double gamma_tot = ctx.system.environment.gamma + (ctx.system.feedback.axes[2].enabled
                                                               ? ctx.system.feedback.axes[2].gain
                                                               : 0.0);
  const double mass = ctx.system.particle.mass;
  const double chi_inv = mass * std::hypot(omega * omega - omega_d * omega_d, gamma_tot * omega_d);
  const double g_zz = std::abs(ctx.system.electrodes.geometry(2, 2));
  result.inferred_charge = result.amplitude * chi_inv /
                           (constants::elementary_charge * g_zz * settings.drive_amplitude);

  if (!settings.charge_states.empty()) {
    for (std::size_t k = 0; k < settings.charge_states.size(); ++k) {
      SystemConfig cfg = ctx.system;
      cfg.particle.charge_count = settings.charge_states[k];
      cfg.electrodes = ElectrodeSystem::from_geometry(ctx.system.electrodes.geometry, cfg.particle);
      result.state_amplitudes.push_back(measure_amp(cfg, k + 1));
    }
    // histogram spacing of consecutive single-e steps
    std::vector<double> diffs;
    for (std::size_t k = 1; k < result.state_amplitudes.size(); ++k) {
      const int dq = std::abs(settings.charge_states[k] - settings.charge_states[k - 1]);
      if (dq > 0)
        diffs.push_back(std::abs(result.state_amplitudes[k] - result.state_amplitudes[k - 1]) / dq);
    }
    if (!diffs.empty()) {
      double s = 0.0;
      for (double d : diffs) s += d;
      result.single_e_response = s / static_cast<double>(diffs.size());
    }
  }
  return result;
}

Environment apply_environment_drift(const Environment& env, const ElectrodeSystem& electrodes,
                                    const Particle& particle, double session_time) {
  if (!env.drift) return env;
  Environment out = env;
  const auto& d = *env.drift;
  const double volt_equivalent = d.v_f + d.v_0 * std::exp(-session_time / d.rc);
  const double c_zz = electrodes.transduction(2, 2);
  out.stray_field[2] = c_zz * volt_equivalent / particle.charge();
  return out;
}

}  // namespace levisim

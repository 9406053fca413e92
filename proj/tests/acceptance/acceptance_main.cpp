// Acceptance suite: quantitative reproduction of the force-compensation
// experiment's theory curves and protocol behaviors, each checked against an
// independent closed form or ground truth. One line per criterion.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "levisim/analysis.hpp"
#include "levisim/analytics.hpp"
#include "levisim/constants.hpp"
#include "levisim/parallel.hpp"
#include "levisim/protocols.hpp"

using namespace levisim;

namespace {

constexpr double kTwoPi = 2.0 * constants::pi;

int g_failures = 0;

void report(int criterion, bool pass, const std::string& what, const std::string& detail) {
  std::printf("[%s] criterion %2d: %s (%s)\n", pass ? "PASS" : "FAIL", criterion, what.c_str(),
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof buf, f, args);
  va_end(args);
  return buf;
}

struct RepSample {
  double e_pre = 0.0;
  double e_post = 0.0;
  SineFit post_fit;          // amplitude in meters
  double displacement = 0.0;
};

/// Release-recapture ensemble with every constant force nulled exactly by the
/// DC bias, the configuration the 3D-compensated experiment realizes. The
/// initial ensemble is moment-matched: the comparisons against the analytic
/// second moments are then limited by the dynamics, not by the chi-squared
/// scatter of the finite thermal sample.
std::vector<RepSample> compensated_ensemble(const SystemConfig& base, double tau, int reps,
                                            std::uint64_t seed, std::uint64_t call,
                                            double extra_force_z = 0.0) {
  SystemConfig system = base;
  system.environment.nonelectrostatic_force[2] += extra_force_z;
  const Vec3 f_ext = constant_external_force(system.particle, base.environment);
  const Vec3 v_null = system.electrodes.transduction.colPivHouseholderQr().solve(-f_ext);

  ReleaseRecaptureSettings settings;
  settings.tau = tau;
  settings.dc_voltages = v_null;

  const double gain = system.detector.channels[2].gain;
  const double omega = system.trap.omega[2];
  const double mass = system.particle.mass;

  std::vector<StateVector> initial(static_cast<std::size_t>(reps));
  for (std::size_t r = 0; r < initial.size(); ++r) {
    RngStream rng = RngStream::derive(seed, {100, call, r});
    initial[r] = sample_thermal_state(system.nbar, system.trap, system.particle, rng);
  }
  moment_match_ensemble(initial, system.nbar, system.trap, system.particle);

  std::vector<RepSample> samples(static_cast<std::size_t>(reps));
  parallel_for(samples.size(), [&](std::size_t r) {
    RngStream rng = RngStream::derive(seed, {100, call, r, 1});
    const auto rep = release_recapture_rep(system, settings, initial[r], rng);
    if (rep.lost) throw ParticleLostError("acceptance: particle lost in compensated ensemble");
    RepSample s;
    const auto energy = [&](const SineFit& f) {
      const double a = f.amplitude / gain;
      return 0.5 * mass * omega * omega * a * a;
    };
    s.e_pre = energy(rep.pre_fit);
    s.e_post = energy(rep.post_fit);
    s.post_fit = rep.post_fit;
    s.post_fit.amplitude /= gain;
    s.displacement = rep.displacement_z;
    samples[r] = s;
  });
  return samples;
}

struct MeanRatio {
  double value = 0.0;
  double se = 0.0;
};

/// Ratio of ensemble means with a delta-method standard error honoring the
/// per-repetition correlation between numerator and denominator.
MeanRatio energy_ratio(const std::vector<RepSample>& samples) {
  const double n = static_cast<double>(samples.size());
  double mp = 0.0, m0 = 0.0;
  for (const auto& s : samples) {
    mp += s.e_post;
    m0 += s.e_pre;
  }
  mp /= n;
  m0 /= n;
  double vpp = 0.0, v00 = 0.0, vp0 = 0.0;
  for (const auto& s : samples) {
    vpp += (s.e_post - mp) * (s.e_post - mp);
    v00 += (s.e_pre - m0) * (s.e_pre - m0);
    vp0 += (s.e_post - mp) * (s.e_pre - m0);
  }
  vpp /= n - 1;
  v00 /= n - 1;
  vp0 /= n - 1;
  MeanRatio out;
  out.value = mp / m0;
  out.se = out.value *
           std::sqrt(std::max(0.0, vpp / (mp * mp) + v00 / (m0 * m0) - 2.0 * vp0 / (mp * m0)) / n);
  return out;
}

void criterion_1(const SystemConfig& base) {
  const double omega = base.trap.omega[2];
  const double mass = base.particle.mass;
  const double s0 = std::sqrt(free_expansion_variance(117.0, omega, mass, 0.0));
  const double s100 = std::sqrt(free_expansion_variance(117.0, omega, mass, 100e-6));
  const double ratio = s100 / s0;
  bool pass = std::abs(s0 - 74e-12) / 74e-12 < 0.05 && ratio > 54.0 && ratio < 60.0;

  // Monte-Carlo cross-check: 1e4 sampled states through an exact free flight
  RngStream rng = RngStream::derive(1, {101});
  const int n = 10000;
  double acc0 = 0.0, acc1 = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto s = sample_thermal_state(Vec3(0, 0, 117), base.trap, base.particle, rng);
    const double z1 = s.position[2] + s.momentum[2] * 100e-6 / mass;
    acc0 += s.position[2] * s.position[2];
    acc1 += z1 * z1;
  }
  const double mc0 = std::sqrt(acc0 / n), mc1 = std::sqrt(acc1 / n);
  pass = pass && std::abs(mc0 - s0) / s0 < 0.05 && std::abs(mc1 - s100) / s100 < 0.05;
  report(1, pass, "free-expansion variance law",
         fmt("sigma0=%.1f pm, growth x%.1f, MC x%.1f", s0 * 1e12, ratio, mc1 / mc0));
}

void criteria_2_and_4(const SystemConfig& base) {
  const double omega = base.trap.omega[2];
  const double mass = base.particle.mass;
  const double zzp = zero_point_motion(mass, omega);
  const double sz0 = zzp * zzp * (2.0 * 117.0 + 1.0);
  const double sp0 = sz0 * mass * mass * omega * omega;

  bool pass2 = true, pass4 = true;
  std::string worst2 = "-", worst4 = "-";
  double worst2_pull = 0.0, worst4_pull = 0.0;
  double ratio100 = 0.0, max_std_100 = 0.0, sem_100 = 0.0;

  for (int k = 1; k <= 10; ++k) {
    const double tau = 10e-6 * k;
    const auto samples = compensated_ensemble(base, tau, 150, 1, static_cast<std::uint64_t>(k));

    const auto ratio = energy_ratio(samples);
    const double theory2 = 1.0 + 0.5 * omega * omega * tau * tau;
    const double pull2 = std::abs(ratio.value - theory2) / ratio.se;
    if (pull2 > worst2_pull) {
      worst2_pull = pull2;
      worst2 = fmt("tau=%.0fus pull=%.2f", tau * 1e6, pull2);
    }
    if (pull2 > 3.0) pass2 = false;
    if (k == 10) ratio100 = ratio.value;

    std::vector<SineFit> fits;
    fits.reserve(samples.size());
    for (const auto& s : samples) fits.push_back(s.post_fit);
    const auto stats = ensemble_stats(fits, mass, omega);
    const double theory4 = std::sqrt(recapture_variance_max(sz0, sp0, tau, omega, mass));
    const double pull4 = std::abs(stats.max_std - theory4) / stats.max_std_error;
    if (pull4 > worst4_pull) {
      worst4_pull = pull4;
      worst4 = fmt("tau=%.0fus pull=%.2f", tau * 1e6, pull4);
    }
    if (pull4 > 3.0) pass4 = false;
    if (k == 10) {
      max_std_100 = stats.max_std;
      sem_100 = stats.max_std_error;
    }
  }
  pass2 = pass2 && std::abs(ratio100 - 1.67e3) / 1.67e3 < 0.10;
  report(2, pass2, "mean-energy growth follows 1 + w^2 t^2/2",
         fmt("ratio(100us)=%.0f, worst %s", ratio100, worst2.c_str()));

  pass4 = pass4 && std::abs(max_std_100 - 4.3e-9) / 4.3e-9 < 0.10;
  report(4, pass4, "max ensemble spread matches the covariance theory",
         fmt("sigma_max(100us)=%.2f nm +- %.2f, worst %s", max_std_100 * 1e9, sem_100 * 1e9,
             worst4.c_str()));
}

void criterion_3(const SystemConfig& base) {
  const auto samples = compensated_ensemble(base, 100e-6, 300, 1, 50, 2e-18);
  double mean = 0.0;
  for (const auto& s : samples) mean += s.displacement;
  mean /= static_cast<double>(samples.size());
  double var = 0.0;
  for (const auto& s : samples) var += (s.displacement - mean) * (s.displacement - mean);
  const double sem = std::sqrt(var / (samples.size() - 1.0) / samples.size());
  const double expected = 2e-18 * 1e-8 / (2.0 * base.particle.mass);
  const bool pass = std::abs(mean - 2.5e-9) / 2.5e-9 < 0.15;
  report(3, pass, "2e-18 N residual force displaces 2.5 nm over 100 us",
         fmt("mean=%.2f nm +- %.2f (exact %.2f)", mean * 1e9, sem * 1e9, expected * 1e9));
}

void criterion_5(const SystemConfig& base) {
  SystemConfig system = base;
  system.trap = TrapField::harmonic(base.trap.omega, base.particle.mass);
  system.environment.gamma = 340.0;  // calibration pressure ~7e-2 mbar
  system.environment.recoil_dp = Vec3::Zero();
  system.environment.gravity = Vec3::Zero();
  system.dt = 2e-8;
  system.detector.channels[0].weights = Vec3(1.0, 0.02, 0.02);
  system.detector.channels[1].weights = Vec3(0.02, 1.0, 0.02);

  Mat3 expected;
  expected << 1.0, 0.32, -37.0, 0.36, 1.0, 4.4, 0.0011, -0.0012, 1.0;

  bool pass = true;
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    ProtocolContext ctx{system, seed, 0};
    CrossTalkSettings settings;
    const auto estimate = cross_cool_calibrate(ctx, settings);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        if (i == j) continue;
        const double rel =
            std::abs(estimate.normalized_inverse_hat(i, j) - expected(i, j)) /
            std::abs(expected(i, j));
        worst = std::max(worst, rel);
        if (rel > 0.10) pass = false;
      }
    }
  }
  report(5, pass, "cross-cooling recovers the cross-talk matrix on 5 seeds",
         fmt("worst off-diagonal error %.1f%%", worst * 100.0));
}

void criterion_6(const SystemConfig& base) {
  SystemConfig system = base;
  system.timings = ScheduleTimings{0.0, 0.0, 0.0, 0.0};
  const Mat3 inv = system.electrodes.transduction.inverse();
  system.environment.stray_field[2] =
      -(1.0 / inv(2, 2)) * 0.12 / system.particle.charge();

  ProtocolContext ctx{system, 1, 0};
  TauScanSettings settings;
  settings.taus = {5e-6, 14e-6, 23e-6, 32e-6, 41e-6, 50e-6};
  settings.scan.axis = 2;
  settings.scan.v_min = -0.48;
  settings.scan.v_max = 0.72;
  settings.scan.n_points = 9;
  settings.scan.repetitions = 60;
  settings.scan.moment_matched_init = true;
  const auto result = tau_scan(ctx, settings);

  const double omega = system.trap.omega[2];
  const double expected = omega * omega / 4.0;
  const double ratio = result.scaling.c4 / result.scaling.c2;
  const bool pass = std::abs(ratio - expected) / expected < 0.10 && result.vopt_flat;
  report(6, pass, "parabola scales fit tau^2 + tau^4 with c4/c2 = w^2/4",
         fmt("c4/c2=%.3e vs %.3e (%.1f%%), v_opt slope %.2e +- %.2e V/s", ratio, expected,
             100.0 * (ratio - expected) / expected, result.vopt_slope, result.vopt_slope_ci));
}

void criterion_7(const SystemConfig& base) {
  const double omega = base.trap.omega[2];
  const double tau = 5e-6;
  const double tp_star = recompression_time(tau, omega, 1);

  // covariance-level identity
  Environment quiet;
  quiet.gamma = 0.0;
  quiet.gas_temperature = 0.0;
  quiet.recoil_dp = Vec3::Zero();
  quiet.gravity = Vec3::Zero();
  const TrapField trap = TrapField::harmonic(base.trap.omega, base.particle.mass);
  const CovarianceState initial =
      CovarianceState::thermal(Vec3(4000, 4000, 117), trap, base.particle);
  const std::vector<SegmentModel> segments = {
      SegmentModel::free_flight(tau, base.particle, quiet),
      SegmentModel::trapped(tp_star, base.particle, trap, quiet),
      SegmentModel::free_flight(tau, base.particle, quiet),
  };
  const double var_back = lyapunov_propagate(initial, segments).position_variance(2);
  const double identity_err = std::abs(var_back / initial.position_variance(2) - 1.0);

  // Monte-Carlo minimum on an integration-step grid
  ProtocolContext ctx{base, 1, 0};
  RecompressionSettings settings;
  settings.tau = tau;
  settings.repetitions = 150;
  for (int k = -10; k <= 10; ++k) settings.tp_values.push_back(tp_star + k * base.dt);
  const auto result = recompression_experiment(ctx, settings);
  const double miss = std::abs(result.tp_min_empirical - tp_star);

  const bool pass = identity_err < 1e-6 && miss <= base.dt + 1e-15;
  report(7, pass, "recompression at 2 theta/w + pi/w",
         fmt("covariance identity err %.1e, MC minimum off by %.1f steps (t_p*=%.3f us)",
             identity_err, miss / base.dt, tp_star * 1e6));
}

void criterion_8(const SystemConfig& base) {
  const auto& trap = base.trap;
  const double mass = base.particle.mass;
  bool pass = true;
  std::string detail;
  // equivalent-nonlinearity displacement ratio per radial axis, evaluated on
  // the actual potential by bisection at a fixed depth fraction
  for (int axis : {0, 1}) {
    const auto solve = [&](int ax) {
      const double guess = nonlinearity_equivalent_displacement(trap, mass, ax, 0.01);
      double lo = 0.0, hi = 3.0 * guess;
      for (int it = 0; it < 100; ++it) {
        const double mid = 0.5 * (lo + hi);
        Vec3 r = Vec3::Zero();
        r[ax] = mid;
        const double du = trap.potential(r, mass) - trap.potential(Vec3::Zero(), mass);
        (du < 0.01 * trap.depth ? lo : hi) = mid;
      }
      return 0.5 * (lo + hi);
    };
    const double ratio = solve(2) / solve(axis);
    const double expected = trap.omega[axis] / trap.omega[2];
    if (std::abs(ratio - expected) / expected > 0.05) pass = false;
    if (axis == 1) detail = fmt("radial-y ratio %.3f vs %.3f", ratio, expected);
  }
  // required compensation accuracy: 1 V axial and 20 V radial stay below the
  // respective onsets
  const double axial = displacement_from_voltage(1e-16, 1.0, 100e-6, mass);
  const double radial = displacement_from_voltage(1e-18, 20.0, 100e-6, mass);
  const double radial_onset = 170e-9 / (trap.omega[1] / trap.omega[2]);
  pass = pass && axial < 170e-9 && std::abs(axial - 126e-9) / 126e-9 < 0.02 &&
         radial < radial_onset;
  report(8, pass, "nonlinearity geometry and compensation accuracy",
         fmt("%s; 1 V axial -> %.0f nm < 170 nm, 20 V radial -> %.0f nm < %.0f nm",
             detail.c_str(), axial * 1e9, radial * 1e9, radial_onset * 1e9));
}

void criterion_9(const SystemConfig& base) {
  SystemConfig system = base;
  system.trap = TrapField::harmonic(base.trap.omega, base.particle.mass);
  system.timings = ScheduleTimings{0.0, 0.0, 0.0, 0.0};
  system.environment.gravity = Vec3::Zero();
  system.environment.recoil_dp = Vec3::Zero();
  for (auto& ax : system.feedback.axes) ax.enabled = false;
  system.nbar = Vec3(300, 300, 300);

  struct Mix {
    double gamma;
    double t_trap1, tau, t_trap2;
  };
  const std::vector<Mix> mixes = {
      {0.5, 12e-6, 40e-6, 9e-6},
      {50.0, 5e-6, 80e-6, 13e-6},
      {5000.0, 25e-6, 20e-6, 20e-6},
  };

  bool pass = true;
  double worst = 0.0;
  for (std::size_t mi = 0; mi < mixes.size(); ++mi) {
    SystemConfig cfg = system;
    cfg.environment.gamma = mixes[mi].gamma;
    PulseSchedule schedule;
    schedule.events = {{mixes[mi].t_trap1, ScheduleAction::kTrapOff, Vec3::Zero()},
                       {mixes[mi].t_trap1 + mixes[mi].tau, ScheduleAction::kTrapOn, Vec3::Zero()}};
    schedule.total_duration = mixes[mi].t_trap1 + mixes[mi].tau + mixes[mi].t_trap2;
    schedule.set_timings(cfg.timings);

    const std::size_t n = 500;
    std::vector<Vec6> finals(n);
    parallel_for(n, [&](std::size_t r) {
      RngStream rng = RngStream::derive(1, {109, mi, r});
      SimulationOptions options;
      const Trajectory traj = simulate(cfg, schedule, options, rng);
      if (traj.particle_lost) throw ParticleLostError("criterion 9: lost");
      finals[r] << traj.states.back().position, traj.states.back().momentum;
    });
    Vec6 mean = Vec6::Zero();
    for (const auto& v : finals) mean += v;
    mean /= static_cast<double>(n);
    Mat6 cov = Mat6::Zero();
    for (const auto& v : finals) cov += (v - mean) * (v - mean).transpose();
    cov /= static_cast<double>(n - 1);

    const CovarianceState initial = CovarianceState::thermal(cfg.nbar, cfg.trap, cfg.particle);
    const std::vector<SegmentModel> segs = {
        SegmentModel::trapped(mixes[mi].t_trap1, cfg.particle, cfg.trap, cfg.environment),
        SegmentModel::free_flight(mixes[mi].tau, cfg.particle, cfg.environment),
        SegmentModel::trapped(mixes[mi].t_trap2, cfg.particle, cfg.trap, cfg.environment),
    };
    const Mat6 predicted = lyapunov_propagate(initial, segs).sigma();
    for (int i = 0; i < 6; ++i) {
      for (int j = i; j < 6; ++j) {
        const double se = std::sqrt(
            (predicted(i, i) * predicted(j, j) + predicted(i, j) * predicted(i, j)) /
            static_cast<double>(n - 1));
        const double pull = std::abs(cov(i, j) - predicted(i, j)) / se;
        worst = std::max(worst, pull);
        if (pull > 5.0) pass = false;
      }
    }
  }
  report(9, pass, "ensemble covariance matches the Lyapunov propagation",
         fmt("3 schedules x 21 entries, worst pull %.2f sigma", worst));
}

void criterion_10(const SystemConfig& base) {
  // gas-only rate
  SystemConfig gas_only = base;
  gas_only.trap = TrapField::harmonic(base.trap.omega, base.particle.mass);
  gas_only.environment.recoil_dp = Vec3::Zero();
  gas_only.dt = 1e-8;
  bool pass = true;
  std::string gas_detail;
  {
    ProtocolContext ctx{gas_only, 1, 0};
    ReheatingSettings settings;
    settings.duration = 2e-3;
    settings.repetitions = 500;
    const auto result = reheating_experiment(ctx, settings);
    const double expected = gas_only.environment.gamma * constants::boltzmann *
                            gas_only.environment.gas_temperature;
    const double rel = std::abs(result.curves[0].rate - expected) / expected;
    pass = rel < 0.15;
    gas_detail = fmt("gas rate %.2e vs %.2e J/s (%.0f%%)", result.curves[0].rate, expected,
                     100.0 * rel);
  }

  // supply-noise model: indistinguishable at <= 10 V, clearly above at >= 75 V
  SystemConfig noisy = gas_only;
  noisy.environment.recoil_dp = Vec3::Constant(1.599e-41);
  noisy.supply_noise.enabled = true;
  ProtocolContext ctx{noisy, 1, 0};
  ReheatingSettings settings;
  settings.duration = 1.2e-3;
  settings.repetitions = 300;
  settings.bias_voltages = {Vec3(0, 0, 0), Vec3(0, 0, 10), Vec3(0, 0, 75), Vec3(0, 0, 100)};
  const auto result = reheating_experiment(ctx, settings);
  const auto& curves = result.curves;
  const double base_rate = curves[0].rate;
  const auto excess = [&](std::size_t k) { return curves[k].rate - base_rate; };
  const auto sigma = [&](std::size_t k) {
    return std::hypot(curves[k].rate_error, curves[0].rate_error);
  };
  const bool low_clean = std::abs(excess(1)) < 2.0 * sigma(1);
  const bool high_hot = excess(2) > 3.0 * sigma(2) && excess(3) > 3.0 * sigma(3);
  const double v_scaling = excess(3) / excess(2);
  const bool scaling_ok = v_scaling > 0.8 * (100.0 * 100.0) / (75.0 * 75.0) &&
                          v_scaling < 1.25 * (100.0 * 100.0) / (75.0 * 75.0);
  pass = pass && low_clean && high_hot && scaling_ok;
  report(10, pass, "reheating: gas-limited baseline, supply noise only above 50 V",
         fmt("%s; 10V excess %.1f sigma, 75V %.1f sigma, 100/75 ratio %.2f (expect %.2f)",
             gas_detail.c_str(), excess(1) / sigma(1), excess(2) / sigma(2), v_scaling,
             100.0 * 100.0 / (75.0 * 75.0)));
}

void criterion_11() {
  namespace fs = std::filesystem;
  const fs::path dir_a = fs::temp_directory_path() / "levisim_accept_det_a";
  const fs::path dir_b = fs::temp_directory_path() / "levisim_accept_det_b";
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
  fs::create_directories(dir_a);
  fs::create_directories(dir_b);
  const fs::path cfg = dir_a / "config.json";
  {
    std::ofstream out(cfg);
    out << R"({"seed": 17, "repetitions": 4,
               "protocol": {"axis": 2, "v_min_v": -0.4, "v_max_v": 0.4, "points": 6,
                            "tau_s": 1e-5}})";
  }
  const auto run = [&](const fs::path& out_dir) {
    const std::string cmd = std::string(LEVISIM_CLI_PATH) + " scan --config " + cfg.string() +
                            " --out " + out_dir.string() + " >/dev/null 2>&1";
    return std::system(cmd.c_str()) == 0;
  };
  const auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  bool pass = run(dir_a) && run(dir_b);
  std::string detail = "scan run twice";
  if (pass) {
    const auto a = slurp(dir_a / "scan_data.csv");
    const auto b = slurp(dir_b / "scan_data.csv");
    pass = !a.empty() && a == b;
    detail = fmt("%zu bytes, %s", a.size(), pass ? "identical" : "differ");
  }
  report(11, pass, "protocol re-runs emit byte-identical CSV", detail);
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();
  const SystemConfig base = SystemConfig::defaults();

  criterion_1(base);
  criteria_2_and_4(base);
  criterion_3(base);
  criterion_5(base);
  criterion_6(base);
  criterion_7(base);
  criterion_8(base);
  criterion_9(base);
  criterion_10(base);
  criterion_11();

  const auto dt = std::chrono::duration_cast<std::chrono::seconds>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
  std::printf("%s: %d criteria failed (total %llds)\n", g_failures == 0 ? "SUCCESS" : "FAILURE",
              g_failures, static_cast<long long>(dt));
  return g_failures == 0 ? 0 : 1;
}

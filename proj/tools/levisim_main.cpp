// levisim: trap-release-recapture simulation and calibration toolkit CLI.
//
// Every subcommand reads a JSON config, runs one protocol (or the analytic
// predictor / offline fits), and writes CSV data, a JSON summary and a run
// manifest into the output directory. Runs are pure functions of
// (config, seed): identical inputs give byte-identical CSV output.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "levisim/analysis.hpp"
#include "levisim/analytics.hpp"
#include "levisim/config.hpp"
#include "levisim/constants.hpp"
#include "levisim/csv.hpp"
#include "levisim/manifest.hpp"
#include "levisim/parallel.hpp"
#include "levisim/protocols.hpp"

namespace {

using levisim::Vec3;
using nlohmann::json;

struct RunPaths {
  std::filesystem::path dir;
  levisim::RunManifest manifest;

  explicit RunPaths(const levisim::ExperimentConfig& cfg, const std::string& subcommand,
                    const std::string& out_override) {
    dir = out_override.empty() ? cfg.output_dir : out_override;
    std::filesystem::create_directories(dir);
    manifest.config_hash = levisim::config_hash(cfg.canonical);
    manifest.seed = cfg.seed;
    manifest.started_utc = levisim::utc_timestamp();
    (void)subcommand;
  }

  std::string file(const std::string& name) {
    manifest.outputs.push_back(name);
    return (dir / name).string();
  }

  void finish(const json& summary, const std::string& summary_name) {
    std::ofstream out(dir / summary_name);
    out << summary.dump(2) << "\n";
    manifest.outputs.push_back(summary_name);
    manifest.finished_utc = levisim::utc_timestamp();
    manifest.write((dir / "manifest.json").string());
  }
};

json summary_envelope(const levisim::ExperimentConfig& cfg, const std::string& protocol) {
  return {{"protocol", protocol},
          {"seed", cfg.seed},
          {"config_hash", levisim::config_hash(cfg.canonical)},
          {"tool_version", levisim::kToolVersion},
          {"results", json::object()}};
}

double proto_num(const json& p, const std::string& key, double fallback) {
  if (!p.contains(key)) return fallback;
  if (!p[key].is_number()) throw levisim::ConfigError("config error at /protocol/" + key + ": expected a number");
  return p[key].get<double>();
}

std::vector<double> proto_list(const json& p, const std::string& key,
                               std::vector<double> fallback) {
  if (!p.contains(key)) return fallback;
  std::vector<double> out;
  for (const auto& v : p[key]) out.push_back(v.get<double>());
  return out;
}

json vec3_json(const Vec3& v) { return json::array({v[0], v[1], v[2]}); }

json scan_points_json(const levisim::ScanResult& scan) {
  json points = json::array();
  for (std::size_t p = 0; p < scan.voltages.size(); ++p) {
    points.push_back({{"voltage_v", scan.voltages[p]},
                      {"mean_energy_j", scan.mean_energy[p]},
                      {"sem_energy_j", scan.sem_energy[p]},
                      {"valid_repetitions", scan.valid_repetitions[p]}});
  }
  return points;
}

void write_scan_csv(levisim::CsvTable& table, const levisim::ScanResult& scan) {
  std::vector<double> reps(scan.voltages.size());
  for (std::size_t p = 0; p < scan.voltages.size(); ++p)
    reps[p] = static_cast<double>(scan.valid_repetitions[p]);
  table.add_column("voltage_v", scan.voltages);
  table.add_column("mean_energy_j", scan.mean_energy);
  table.add_column("sem_energy_j", scan.sem_energy);
  table.add_column("valid_repetitions", reps);
}

json parabola_json(const levisim::ParabolaFit& fit) {
  return {{"scale_j_per_v2", fit.scale},     {"scale_ci", fit.scale_ci},
          {"v_opt_v", fit.v_opt},            {"v_opt_ci", fit.v_opt_ci},
          {"offset_j", fit.offset},          {"offset_ci", fit.offset_ci},
          {"has_minimum", fit.has_minimum}};
}

int run_simulate(const levisim::ExperimentConfig& cfg, RunPaths& paths) {
  const auto& p = cfg.protocol;
  const double tau = proto_num(p, "tau_s", 0.0);
  const double duration = proto_num(p, "duration_s", 500e-6);
  const double release_at = proto_num(p, "release_at_s", 100e-6);

  levisim::PulseSchedule schedule;
  schedule.total_duration = duration;
  schedule.set_timings(cfg.system.timings);
  if (tau > 0.0) {
    schedule = levisim::PulseSchedule::release_recapture(release_at, tau, duration);
    schedule.set_timings(cfg.system.timings);
  }
  levisim::RngStream rng = levisim::RngStream::derive(
      cfg.seed, {static_cast<std::uint64_t>(levisim::ProtocolId::kSimulate), 0, 0});
  levisim::SimulationOptions options;
  const auto traj = simulate(cfg.system, schedule, options, rng);

  levisim::CsvTable table;
  table.add_column("time_s", traj.times);
  const char* names[6] = {"x_m", "y_m", "z_m", "px_kg_m_s", "py_kg_m_s", "pz_kg_m_s"};
  for (int k = 0; k < 6; ++k) {
    std::vector<double> col(traj.states.size());
    for (std::size_t i = 0; i < traj.states.size(); ++i)
      col[i] = k < 3 ? traj.states[i].position[k] : traj.states[i].momentum[k - 3];
    table.add_column(names[k], col);
  }
  table.add_column("det_x_v", traj.detector_channels[0]);
  table.add_column("det_y_v", traj.detector_channels[1]);
  table.add_column("det_z_v", traj.detector_channels[2]);
  table.add_column("trap_envelope", traj.envelope);
  table.write(paths.file("simulate_data.csv"));

  json summary = summary_envelope(cfg, "simulate");
  summary["results"] = {{"samples", traj.times.size()},
                        {"sample_dt_s", traj.sample_dt},
                        {"particle_lost", traj.particle_lost},
                        {"loss_time_s", traj.loss_time}};
  paths.finish(summary, "simulate_summary.json");
  return traj.particle_lost ? 4 : 0;
}

levisim::ScanSettings scan_settings_from(const levisim::ExperimentConfig& cfg) {
  const auto& p = cfg.protocol;
  levisim::ScanSettings s;
  s.axis = static_cast<int>(proto_num(p, "axis", 2));
  s.v_min = proto_num(p, "v_min_v", -1.0);
  s.v_max = proto_num(p, "v_max_v", 1.0);
  s.n_points = static_cast<int>(proto_num(p, "points", 9));
  s.repetitions = cfg.repetitions > 0 ? cfg.repetitions : 5;
  s.tau = proto_num(p, "tau_s", 10e-6);
  s.crosstalk_corrected = !p.contains("raw_axis") || !p["raw_axis"].get<bool>();
  s.base_voltages = Vec3(proto_num(p, "base_vx_v", 0.0), proto_num(p, "base_vy_v", 0.0),
                         proto_num(p, "base_vz_v", 0.0));
  return s;
}

int run_scan(const levisim::ExperimentConfig& cfg, RunPaths& paths, int threads) {
  const levisim::ProtocolContext ctx{cfg.system, cfg.seed, threads};
  const auto settings = scan_settings_from(cfg);
  const auto result = compensation_scan(ctx, settings);

  levisim::CsvTable table;
  write_scan_csv(table, result);
  table.write(paths.file("scan_data.csv"));

  json summary = summary_envelope(cfg, "scan");
  summary["results"] = {{"axis", result.axis},
                        {"tau_s", result.tau},
                        {"repetitions", result.repetitions},
                        {"v_opt_v", result.v_opt},
                        {"parabola", parabola_json(result.fit)},
                        {"points", scan_points_json(result)}};
  paths.finish(summary, "scan_summary.json");
  return 0;
}

int run_crosstalk(const levisim::ExperimentConfig& cfg, RunPaths& paths, int threads) {
  const levisim::ProtocolContext ctx{cfg.system, cfg.seed, threads};
  levisim::CrossTalkSettings settings;
  settings.gamma_fb_ref = proto_num(cfg.protocol, "gamma_fb_ref_s", settings.gamma_fb_ref);
  const auto estimate = cross_cool_calibrate(ctx, settings);

  levisim::CsvTable table;
  std::vector<double> row_i, col_j, value, sigma, ratio;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      row_i.push_back(i);
      col_j.push_back(j);
      value.push_back(estimate.normalized_inverse_hat(i, j));
      sigma.push_back(estimate.uncertainty(i, j));
      ratio.push_back(estimate.gain_ratios(i, j));
    }
  }
  table.add_column("row", row_i);
  table.add_column("col", col_j);
  table.add_column("normalized_inverse", value);
  table.add_column("uncertainty", sigma);
  table.add_column("gain_ratio", ratio);
  table.write(paths.file("calibrate-crosstalk_data.csv"));

  json matrix = json::array(), unc = json::array();
  for (int i = 0; i < 3; ++i) {
    matrix.push_back(json::array({estimate.normalized_inverse_hat(i, 0),
                                  estimate.normalized_inverse_hat(i, 1),
                                  estimate.normalized_inverse_hat(i, 2)}));
    unc.push_back(json::array({estimate.uncertainty(i, 0), estimate.uncertainty(i, 1),
                               estimate.uncertainty(i, 2)}));
  }
  json summary = summary_envelope(cfg, "calibrate-crosstalk");
  summary["results"] = {{"normalized_inverse", matrix}, {"uncertainty", unc}};
  paths.finish(summary, "calibrate-crosstalk_summary.json");
  return 0;
}

int run_compensate3d(const levisim::ExperimentConfig& cfg, RunPaths& paths, int threads) {
  const levisim::ProtocolContext ctx{cfg.system, cfg.seed, threads};
  levisim::Compensate3dSettings settings;
  settings.tau_schedule =
      proto_list(cfg.protocol, "tau_schedule_s", settings.tau_schedule);
  if (cfg.repetitions > 0) settings.repetitions = cfg.repetitions;
  const auto result = compensate_3d(ctx, settings);

  levisim::CsvTable table;
  std::vector<double> tau, axis, vopt, ci;
  for (const auto& s : result.scans) {
    tau.push_back(s.tau);
    axis.push_back(s.axis);
    vopt.push_back(s.v_opt);
    ci.push_back(s.fit.v_opt_ci);
  }
  table.add_column("tau_s", tau);
  table.add_column("axis", axis);
  table.add_column("v_opt_v", vopt);
  table.add_column("v_opt_ci_v", ci);
  table.write(paths.file("compensate3d_data.csv"));

  json summary = summary_envelope(cfg, "compensate3d");
  summary["results"] = {{"voltages_v", vec3_json(result.voltages)},
                        {"scan_count", result.scans.size()}};
  paths.finish(summary, "compensate3d_summary.json");
  return 0;
}

int run_tau_scan(const levisim::ExperimentConfig& cfg, RunPaths& paths, int threads) {
  const levisim::ProtocolContext ctx{cfg.system, cfg.seed, threads};
  levisim::TauScanSettings settings;
  settings.taus = proto_list(cfg.protocol, "taus_s", settings.taus);
  settings.scan = scan_settings_from(cfg);
  const auto result = tau_scan(ctx, settings);

  levisim::CsvTable table;
  std::vector<double> tau, scale, scale_ci, vopt, vopt_ci;
  for (const auto& s : result.scans) {
    tau.push_back(s.tau);
    scale.push_back(s.fit.scale);
    scale_ci.push_back(s.fit.scale_ci);
    vopt.push_back(s.v_opt);
    vopt_ci.push_back(s.fit.v_opt_ci);
  }
  table.add_column("tau_s", tau);
  table.add_column("parabola_scale_j_per_v2", scale);
  table.add_column("parabola_scale_ci", scale_ci);
  table.add_column("v_opt_v", vopt);
  table.add_column("v_opt_ci_v", vopt_ci);
  table.write(paths.file("tau-scan_data.csv"));

  json summary = summary_envelope(cfg, "tau-scan");
  summary["results"] = {{"c2_j_per_v2_s2", result.scaling.c2},
                        {"c4_j_per_v2_s4", result.scaling.c4},
                        {"c4_over_c2", result.scaling.c4 / result.scaling.c2},
                        {"omega_sq_over_4", cfg.system.trap.omega[2] * cfg.system.trap.omega[2] / 4.0},
                        {"v_opt_slope_v_per_s", result.vopt_slope},
                        {"v_opt_slope_ci", result.vopt_slope_ci},
                        {"v_opt_flat", result.vopt_flat}};
  paths.finish(summary, "tau-scan_summary.json");
  return 0;
}

int run_recompress(const levisim::ExperimentConfig& cfg, RunPaths& paths, int threads) {
  const levisim::ProtocolContext ctx{cfg.system, cfg.seed, threads};
  levisim::RecompressionSettings settings;
  settings.tau = proto_num(cfg.protocol, "tau_s", settings.tau);
  settings.tp_values = proto_list(cfg.protocol, "tp_values_s", {});
  settings.instrument_offset =
      proto_num(cfg.protocol, "instrument_offset_s", settings.instrument_offset);
  if (cfg.repetitions > 0) settings.repetitions = cfg.repetitions;
  const auto result = recompression_experiment(ctx, settings);

  levisim::CsvTable table;
  table.add_column("tp_s", result.tp);
  table.add_column("sigma_z_m", result.sigma_z);
  table.write(paths.file("recompress_data.csv"));

  json summary = summary_envelope(cfg, "recompress");
  summary["results"] = {{"tau_s", settings.tau},
                        {"sigma_z0_m", result.sigma_z0},
                        {"tp_min_empirical_s", result.tp_min_empirical},
                        {"tp_min_predicted_s", result.tp_min_predicted}};
  paths.finish(summary, "recompress_summary.json");
  return 0;
}

int run_reheat(const levisim::ExperimentConfig& cfg, RunPaths& paths, int threads) {
  const levisim::ProtocolContext ctx{cfg.system, cfg.seed, threads};
  levisim::ReheatingSettings settings;
  settings.duration = proto_num(cfg.protocol, "duration_s", settings.duration);
  if (cfg.repetitions > 0) settings.repetitions = cfg.repetitions;
  if (cfg.protocol.contains("bias_voltages_v")) {
    settings.bias_voltages.clear();
    for (const auto& b : cfg.protocol["bias_voltages_v"])
      settings.bias_voltages.push_back(Vec3(b[0].get<double>(), b[1].get<double>(),
                                            b[2].get<double>()));
  }
  const auto result = reheating_experiment(ctx, settings);

  levisim::CsvTable table;
  table.add_column("time_s", result.curves.front().times);
  for (std::size_t k = 0; k < result.curves.size(); ++k)
    table.add_column("energy_j_bias" + std::to_string(k), result.curves[k].energy);
  table.write(paths.file("reheat_data.csv"));

  json curves = json::array();
  for (const auto& c : result.curves) {
    curves.push_back({{"bias_v", vec3_json(c.bias)},
                      {"rate_j_per_s", c.rate},
                      {"rate_error_j_per_s", c.rate_error}});
  }
  json summary = summary_envelope(cfg, "reheat");
  summary["results"] = {{"curves", curves}};
  paths.finish(summary, "reheat_summary.json");
  return 0;
}

int run_nonlinearity(const levisim::ExperimentConfig& cfg, RunPaths& paths, int threads) {
  const levisim::ProtocolContext ctx{cfg.system, cfg.seed, threads};
  levisim::NonlinearitySettings settings;
  settings.v_min = proto_num(cfg.protocol, "v_min_v", settings.v_min);
  settings.v_max = proto_num(cfg.protocol, "v_max_v", settings.v_max);
  settings.n_points = static_cast<int>(proto_num(cfg.protocol, "points", settings.n_points));
  settings.tau = proto_num(cfg.protocol, "tau_s", settings.tau);
  if (cfg.repetitions > 0) settings.repetitions = cfg.repetitions;
  const auto result = nonlinearity_scan(ctx, settings);

  levisim::CsvTable table;
  write_scan_csv(table, result.scan);
  table.write(paths.file("nonlinearity_data.csv"));

  json summary = summary_envelope(cfg, "nonlinearity");
  summary["results"] = {{"onset_detected", result.onset_detected},
                        {"onset_voltage_v", result.onset_voltage},
                        {"onset_displacement_m", result.onset_displacement},
                        {"parabola", parabola_json(result.scan.fit)},
                        {"gaussian", {{"amplitude_j", result.gaussian.amplitude},
                                      {"center_v", result.gaussian.center},
                                      {"width_v", result.gaussian.width},
                                      {"offset_j", result.gaussian.offset},
                                      {"converged", result.gaussian.converged}}}};
  paths.finish(summary, "nonlinearity_summary.json");
  return 0;
}

int run_charge(const levisim::ExperimentConfig& cfg, RunPaths& paths, int threads) {
  const levisim::ProtocolContext ctx{cfg.system, cfg.seed, threads};
  levisim::ChargeMeasureSettings settings;
  settings.drive_amplitude = proto_num(cfg.protocol, "drive_amplitude_v", settings.drive_amplitude);
  settings.drive_frequency = proto_num(cfg.protocol, "drive_frequency_hz", settings.drive_frequency);
  settings.duration = proto_num(cfg.protocol, "duration_s", settings.duration);
  if (cfg.protocol.contains("charge_states")) {
    for (const auto& q : cfg.protocol["charge_states"])
      settings.charge_states.push_back(q.get<int>());
  }
  const auto result = charge_measure(ctx, settings);

  if (!result.state_amplitudes.empty()) {
    levisim::CsvTable table;
    std::vector<double> states(settings.charge_states.begin(), settings.charge_states.end());
    table.add_column("charge_e", states);
    table.add_column("amplitude_m", result.state_amplitudes);
    table.write(paths.file("charge_data.csv"));
  }
  json summary = summary_envelope(cfg, "charge");
  summary["results"] = {{"amplitude_m", result.amplitude},
                        {"inferred_charge_e", result.inferred_charge},
                        {"single_e_response_m", result.single_e_response}};
  paths.finish(summary, "charge_summary.json");
  return 0;
}

int run_predict(const levisim::ExperimentConfig& cfg, RunPaths& paths) {
  const auto& sys = cfg.system;
  const double tau = proto_num(cfg.protocol, "tau_s", 100e-6);
  const double omega = sys.trap.omega[2];
  const double mass = sys.particle.mass;
  const double nbar = sys.nbar[2];

  const double var0 = levisim::free_expansion_variance(nbar, omega, mass, 0.0);
  const double var_tau = levisim::free_expansion_variance(nbar, omega, mass, tau);
  const double sp0 = var0 * mass * mass * omega * omega;
  const double e0 = (nbar + 0.5) * levisim::constants::hbar * omega;
  const double cnv = sys.electrodes.cnv_diag()[2];
  const auto angle = levisim::ellipse_angle(omega, tau);

  json summary = summary_envelope(cfg, "predict");
  summary["results"] = {
      {"tau_s", tau},
      {"sigma_z0_m", std::sqrt(var0)},
      {"sigma_z_tau_m", std::sqrt(var_tau)},
      {"expansion_factor", std::sqrt(var_tau / var0)},
      {"relative_energy", levisim::mean_energy_after_release(e0, 0.0, tau, omega, mass) / e0},
      {"max_std_m", std::sqrt(levisim::recapture_variance_max(var0, sp0, tau, omega, mass))},
      {"ellipse_angle_rad", angle.theta},
      {"ellipse_degenerate", angle.degenerate},
      {"recompression_time_n1_s", levisim::recompression_time(tau, omega, 1)},
      {"parabola_scale_j_per_v2",
       levisim::expected_scan_parabola(cnv, tau, omega, mass).parabola_scale},
      {"displacement_per_volt_m", levisim::displacement_from_voltage(cnv, 1.0, tau, mass)},
  };
  paths.finish(summary, "predict_summary.json");
  return 0;
}

int run_analyze(const levisim::ExperimentConfig& cfg, RunPaths& paths, const std::string& input,
                const std::string& fit_kind, const std::string& column, double omega_guess) {
  const auto table = levisim::CsvTable::read(input);
  json summary = summary_envelope(cfg, "analyze");
  json& res = summary["results"];
  res["fit"] = fit_kind;
  res["input"] = input;

  if (fit_kind == "sine") {
    const auto& t = table.column("time_s");
    const auto& y = table.column(column);
    if (t.size() < 2) throw std::runtime_error("analyze: trace too short");
    const double dt = t[1] - t[0];
    const double guess = omega_guess > 0 ? omega_guess : cfg.system.trap.omega[2];
    const auto fit = levisim::fit_sine(y, dt, guess);
    res["sine"] = {{"amplitude", fit.amplitude}, {"phase_rad", fit.phase},
                   {"drift_per_s", fit.drift},   {"offset", fit.offset},
                   {"omega_rad_s", fit.omega},   {"residual_rms", fit.residual_rms},
                   {"converged", fit.converged}};
  } else if (fit_kind == "parabola") {
    const auto fit = levisim::fit_parabola(table.column("voltage_v"), table.column("energy"));
    res["parabola"] = parabola_json(fit);
  } else if (fit_kind == "gaussian") {
    const auto fit = levisim::fit_gaussian(table.column("voltage_v"), table.column("energy"));
    res["gaussian"] = {{"amplitude", fit.amplitude}, {"center_v", fit.center},
                       {"width_v", fit.width},       {"offset", fit.offset},
                       {"converged", fit.converged}};
  } else if (fit_kind == "expdrift") {
    const auto fit = levisim::fit_exponential_drift(table.column("time_s"), table.column(column));
    res["exponential"] = {{"v_f", fit.v_f}, {"v_0", fit.v_0}, {"rc_s", fit.rc},
                          {"converged", fit.converged}};
  } else if (fit_kind == "tau") {
    const auto fit = levisim::fit_tau_scaling(table.column("tau_s"), table.column(column));
    res["tau_scaling"] = {{"c2", fit.c2}, {"c4", fit.c4}, {"c4_over_c2", fit.c4 / fit.c2}};
  } else if (fit_kind == "variance") {
    const auto& t = table.column("time_s");
    const auto& y = table.column(column);
    const double dt = t[1] - t[0];
    res["variance"] = {{"value", levisim::windowed_variance(
                                     y, dt, dt * static_cast<double>(y.size()))}};
  } else if (fit_kind == "psd") {
    const auto& t = table.column("time_s");
    const auto& y = table.column(column);
    const double dt = t[1] - t[0];
    const auto psd = levisim::psd_welch(y, 1.0 / dt, std::min<std::size_t>(16384, y.size()));
    levisim::CsvTable out;
    out.add_column("frequency_hz", psd.frequency);
    out.add_column("psd", psd.power);
    out.write(paths.file("analyze_psd.csv"));
    res["psd"] = {{"df_hz", psd.df}, {"bins", psd.power.size()}};
  } else {
    throw levisim::ConfigError("analyze: unknown fit kind '" + fit_kind + "'");
  }
  paths.finish(summary, "analyze_summary.json");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"levisim: levitated-nanoparticle force-compensation simulator"};
  app.require_subcommand(1);

  std::string config_path, out_dir, input_csv, fit_kind = "sine", column = "det_z_v";
  std::uint64_t seed_override = 0;
  bool seed_set = false;
  int reps_override = 0, threads = 0;
  double omega_guess = 0.0;

  app.add_option("--config", config_path, "JSON configuration file");
  app.add_flag("--version", "print version and exit");
  for (const char* name :
       {"simulate", "scan", "calibrate-crosstalk", "compensate3d", "tau-scan", "recompress",
        "reheat", "nonlinearity", "charge", "predict", "analyze"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "JSON configuration file");
    sub->add_option("--seed", seed_override, "override the config seed")
        ->each([&](const std::string&) { seed_set = true; });
    sub->add_option("--reps", reps_override, "override the repetition count");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--threads", threads, "worker threads (default: LEVISIM_THREADS or cores)");
    if (std::string(name) == "analyze") {
      sub->add_option("--input", input_csv, "CSV trace to analyze")->required();
      sub->add_option("--fit", fit_kind, "sine|parabola|gaussian|expdrift|tau|variance|psd");
      sub->add_option("--column", column, "data column name");
      sub->add_option("--omega-guess", omega_guess, "sine fit frequency guess (rad/s)");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    levisim::ExperimentConfig cfg =
        config_path.empty() ? levisim::config_from_json(nlohmann::json::object())
                            : levisim::load_config(config_path);
    if (seed_set) {
      cfg.seed = seed_override;
      cfg.canonical["seed"] = cfg.seed;
    }
    if (reps_override > 0) {
      cfg.repetitions = reps_override;
      cfg.canonical["repetitions"] = cfg.repetitions;
    }

    const std::string sub = app.get_subcommands().front()->get_name();
    RunPaths paths(cfg, sub, out_dir);

    if (sub == "simulate") return run_simulate(cfg, paths);
    if (sub == "scan") return run_scan(cfg, paths, threads);
    if (sub == "calibrate-crosstalk") return run_crosstalk(cfg, paths, threads);
    if (sub == "compensate3d") return run_compensate3d(cfg, paths, threads);
    if (sub == "tau-scan") return run_tau_scan(cfg, paths, threads);
    if (sub == "recompress") return run_recompress(cfg, paths, threads);
    if (sub == "reheat") return run_reheat(cfg, paths, threads);
    if (sub == "nonlinearity") return run_nonlinearity(cfg, paths, threads);
    if (sub == "charge") return run_charge(cfg, paths, threads);
    if (sub == "predict") return run_predict(cfg, paths);
    if (sub == "analyze") return run_analyze(cfg, paths, input_csv, fit_kind, column, omega_guess);
    std::cerr << "unknown subcommand\n";
    return 1;
  } catch (const levisim::ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const levisim::ParticleLostError& e) {
    std::cerr << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}

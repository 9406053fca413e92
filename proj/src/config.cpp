#include "levisim/config.hpp"

#include <fstream>
#include <set>

#include "levisim/constants.hpp"

namespace levisim {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw ConfigError("config error at " + (path.empty() ? "/" : path) + ": " + what);
}

void require_keys(const json& obj, const std::string& path, const std::set<std::string>& allowed) {
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (!allowed.count(key)) fail(path + "/" + key, "unknown key");
  }
}

double get_number(const json& obj, const std::string& path, const std::string& key,
                  double fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_number()) fail(path + "/" + key, "expected a number");
  return obj[key].get<double>();
}

bool get_bool(const json& obj, const std::string& path, const std::string& key, bool fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_boolean()) fail(path + "/" + key, "expected a boolean");
  return obj[key].get<bool>();
}

Vec3 get_vec3(const json& obj, const std::string& path, const std::string& key,
              const Vec3& fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& arr = obj[key];
  if (!arr.is_array() || arr.size() != 3) fail(path + "/" + key, "expected an array of 3 numbers");
  Vec3 v;
  for (int i = 0; i < 3; ++i) {
    if (!arr[static_cast<std::size_t>(i)].is_number())
      fail(path + "/" + key, "expected an array of 3 numbers");
    v[i] = arr[static_cast<std::size_t>(i)].get<double>();
  }
  return v;
}

Mat3 get_mat3(const json& obj, const std::string& path, const std::string& key) {
  const auto& rows = obj[key];
  if (!rows.is_array() || rows.size() != 3) fail(path + "/" + key, "expected a 3x3 array");
  Mat3 m;
  for (int i = 0; i < 3; ++i) {
    const auto& row = rows[static_cast<std::size_t>(i)];
    if (!row.is_array() || row.size() != 3) fail(path + "/" + key, "expected a 3x3 array");
    for (int j = 0; j < 3; ++j) m(i, j) = row[static_cast<std::size_t>(j)].get<double>();
  }
  return m;
}

json vec3_to_json(const Vec3& v) { return json::array({v[0], v[1], v[2]}); }

json mat3_to_json(const Mat3& m) {
  json rows = json::array();
  for (int i = 0; i < 3; ++i) rows.push_back(json::array({m(i, 0), m(i, 1), m(i, 2)}));
  return rows;
}

Particle parse_particle(const json& node, const std::string& path) {
  require_keys(node, path, {"diameter_m", "density_kg_m3", "mass_kg", "charge_e"});
  const double diameter = get_number(node, path, "diameter_m", 156e-9);
  const double density = get_number(node, path, "density_kg_m3", 2000.0);
  int charge = 45;
  if (node.contains("charge_e")) {
    if (!node["charge_e"].is_number_integer())
      fail(path + "/charge_e", "charge must be an integer count of elementary charges");
    charge = node["charge_e"].get<int>();
  }
  try {
    if (node.contains("mass_kg")) {
      Particle p = Particle::with_mass(node["mass_kg"].get<double>(), charge);
      p.diameter = diameter;
      p.density = density;
      return p;
    }
    return Particle::from_geometry(diameter, density, charge);
  } catch (const std::domain_error& e) {
    fail(path, e.what());
  }
}

}  // namespace

ExperimentConfig config_from_json(const json& root) {
  if (!root.is_object()) fail("", "top level must be an object");
  require_keys(root, "",
               {"particle", "trap", "electrodes", "environment", "detector", "feedback",
                "supply_noise", "schedule", "integration", "nbar", "seed", "repetitions",
                "output_dir", "protocol"});

  ExperimentConfig cfg;
  SystemConfig sys;

  const json particle_node = root.value("particle", json::object());
  sys.particle = parse_particle(particle_node, "/particle");

  {
    const json node = root.value("trap", json::object());
    const std::string path = "/trap";
    require_keys(node, path, {"frequencies_hz", "shape", "depth_j"});
    const Vec3 freq = get_vec3(node, path, "frequencies_hz", Vec3(302e3, 268e3, 92e3));
    const double depth = get_number(node, path, "depth_j", TrapField::kDefaultDepth);
    std::string shape = "gaussian_beam";
    if (node.contains("shape")) {
      if (!node["shape"].is_string()) fail(path + "/shape", "expected a string");
      shape = node["shape"].get<std::string>();
    }
    const Vec3 omega = 2.0 * constants::pi * freq;
    try {
      if (shape == "gaussian_beam") {
        sys.trap = TrapField::gaussian_beam(omega, sys.particle.mass, depth);
      } else if (shape == "harmonic") {
        sys.trap = TrapField::harmonic(omega, sys.particle.mass, depth);
      } else {
        fail(path + "/shape", "expected 'harmonic' or 'gaussian_beam'");
      }
    } catch (const std::domain_error& e) {
      fail(path, e.what());
    }
  }

  {
    const json node = root.value("electrodes", json::object());
    const std::string path = "/electrodes";
    require_keys(node, path, {"geometry_v_per_m_per_v", "normalized_inverse", "cnv_diag_n_per_v"});
    try {
      if (node.contains("geometry_v_per_m_per_v")) {
        sys.electrodes = ElectrodeSystem::from_geometry(get_mat3(node, path, "geometry_v_per_m_per_v"),
                                                        sys.particle);
      } else {
        Mat3 n_inv;
        if (node.contains("normalized_inverse")) {
          n_inv = get_mat3(node, path, "normalized_inverse");
        } else {
          n_inv << 1.0, 0.32, -37.0, 0.36, 1.0, 4.4, 0.0011, -0.0012, 1.0;
        }
        const Vec3 cnv = get_vec3(node, path, "cnv_diag_n_per_v", Vec3(1e-18, 1e-18, 1e-16));
        sys.electrodes = ElectrodeSystem::from_normalized_inverse(n_inv, cnv, sys.particle);
      }
    } catch (const std::domain_error& e) {
      fail(path, e.what());
    }
  }

  {
    const json node = root.value("environment", json::object());
    const std::string path = "/environment";
    require_keys(node, path,
                 {"pressure_mbar", "gas_temperature_k", "gamma_s", "recoil_dp_n2s",
                  "stray_field_v_per_m", "nonelectrostatic_force_n", "gravity_m_s2", "drift"});
    Environment env;
    env.pressure = get_number(node, path, "pressure_mbar", env.pressure);
    env.gas_temperature = get_number(node, path, "gas_temperature_k", env.gas_temperature);
    if (node.contains("gamma_s")) {
      env.gamma = get_number(node, path, "gamma_s", env.gamma);
    } else {
      env.gamma = epstein_gamma(env.pressure, env.gas_temperature, sys.particle.diameter,
                                sys.particle.mass);
    }
    if (node.contains("recoil_dp_n2s")) {
      if (node["recoil_dp_n2s"].is_number()) {
        env.recoil_dp = Vec3::Constant(node["recoil_dp_n2s"].get<double>());
      } else {
        env.recoil_dp = get_vec3(node, path, "recoil_dp_n2s", env.recoil_dp);
      }
    }
    env.stray_field = get_vec3(node, path, "stray_field_v_per_m", env.stray_field);
    env.nonelectrostatic_force = get_vec3(node, path, "nonelectrostatic_force_n",
                                          env.nonelectrostatic_force);
    env.gravity = get_vec3(node, path, "gravity_m_s2", env.gravity);
    if (node.contains("drift")) {
      const json& dn = node["drift"];
      require_keys(dn, path + "/drift", {"enabled", "v_f_v", "v_0_v", "rc_s"});
      if (get_bool(dn, path + "/drift", "enabled", true)) {
        DriftModel d;
        d.v_f = get_number(dn, path + "/drift", "v_f_v", d.v_f);
        d.v_0 = get_number(dn, path + "/drift", "v_0_v", d.v_0);
        d.rc = get_number(dn, path + "/drift", "rc_s", d.rc);
        env.drift = d;
      }
    }
    try {
      env.validate();
    } catch (const std::domain_error& e) {
      fail(path, e.what());
    }
    sys.environment = env;
  }

  {
    const json node = root.value("detector", json::object());
    const std::string path = "/detector";
    require_keys(node, path, {"sample_rate_hz", "channels"});
    sys.detector.sample_rate = get_number(node, path, "sample_rate_hz", sys.detector.sample_rate);
    if (node.contains("channels")) {
      const auto& arr = node["channels"];
      if (!arr.is_array() || arr.size() != 3) fail(path + "/channels", "expected 3 channels");
      for (int c = 0; c < 3; ++c) {
        const json& cn = arr[static_cast<std::size_t>(c)];
        const std::string cpath = path + "/channels/" + std::to_string(c);
        require_keys(cn, cpath, {"gain_v_per_m", "weights", "noise_psd_v2_hz"});
        auto& ch = sys.detector.channels[static_cast<std::size_t>(c)];
        ch.gain = get_number(cn, cpath, "gain_v_per_m", ch.gain);
        ch.weights = get_vec3(cn, cpath, "weights", ch.weights);
        ch.noise_psd = get_number(cn, cpath, "noise_psd_v2_hz", ch.noise_psd);
      }
    }
  }

  {
    const json node = root.value("feedback", json::object());
    const std::string path = "/feedback";
    require_keys(node, path, {"axes"});
    // defaults on: each axis cooled through its own electrode
    for (int i = 0; i < 3; ++i) {
      auto& ax = sys.feedback.axes[static_cast<std::size_t>(i)];
      ax.enabled = true;
      ax.gain = i == 2 ? 200.0 : 6000.0;
      ax.routing_electrode = i;
    }
    if (node.contains("axes")) {
      const auto& arr = node["axes"];
      if (!arr.is_array() || arr.size() != 3) fail(path + "/axes", "expected 3 axes");
      for (int i = 0; i < 3; ++i) {
        const json& an = arr[static_cast<std::size_t>(i)];
        const std::string apath = path + "/axes/" + std::to_string(i);
        require_keys(an, apath,
                     {"enabled", "gain_s", "routing_electrode", "bandwidth_hz", "extra_delay_s"});
        auto& ax = sys.feedback.axes[static_cast<std::size_t>(i)];
        ax.enabled = get_bool(an, apath, "enabled", ax.enabled);
        ax.gain = get_number(an, apath, "gain_s", ax.gain);
        ax.routing_electrode =
            static_cast<int>(get_number(an, apath, "routing_electrode", ax.routing_electrode));
        ax.bandwidth = get_number(an, apath, "bandwidth_hz", ax.bandwidth);
        ax.extra_delay = get_number(an, apath, "extra_delay_s", ax.extra_delay);
      }
    }
  }

  {
    const json node = root.value("supply_noise", json::object());
    const std::string path = "/supply_noise";
    require_keys(node, path, {"enabled", "abs_density_v_rthz", "fractional_per_rthz", "corner_hz"});
    sys.supply_noise.enabled = get_bool(node, path, "enabled", false);
    sys.supply_noise.abs_density =
        get_number(node, path, "abs_density_v_rthz", sys.supply_noise.abs_density);
    sys.supply_noise.fractional =
        get_number(node, path, "fractional_per_rthz", sys.supply_noise.fractional);
    sys.supply_noise.corner_hz = get_number(node, path, "corner_hz", sys.supply_noise.corner_hz);
  }

  {
    const json node = root.value("schedule", json::object());
    const std::string path = "/schedule";
    require_keys(node, path,
                 {"trap_rise_fall_s", "trap_trigger_delay_s", "trap_on_extra_delay_s",
                  "feedback_switch_delay_s"});
    sys.timings.trap_rise_fall = get_number(node, path, "trap_rise_fall_s", 170e-9);
    sys.timings.trap_trigger_delay = get_number(node, path, "trap_trigger_delay_s", 380e-9);
    sys.timings.trap_on_extra_delay = get_number(node, path, "trap_on_extra_delay_s", 0.0);
    sys.timings.feedback_switch_delay = get_number(node, path, "feedback_switch_delay_s", 50e-9);
  }

  {
    const json node = root.value("integration", json::object());
    const std::string path = "/integration";
    require_keys(node, path, {"dt_s", "loss_radius_factor"});
    sys.dt = get_number(node, path, "dt_s", sys.dt);
    sys.loss_radius_factor = get_number(node, path, "loss_radius_factor", sys.loss_radius_factor);
  }

  sys.nbar = get_vec3(root, "", "nbar", sys.nbar);

  if (root.contains("seed")) {
    if (!root["seed"].is_number_integer()) fail("/seed", "expected an integer");
    cfg.seed = root["seed"].get<std::uint64_t>();
  }
  if (root.contains("repetitions")) {
    if (!root["repetitions"].is_number_integer() || root["repetitions"].get<int>() < 0)
      fail("/repetitions", "expected a non-negative integer");
    cfg.repetitions = root["repetitions"].get<int>();
  }
  if (root.contains("output_dir")) {
    if (!root["output_dir"].is_string()) fail("/output_dir", "expected a string");
    cfg.output_dir = root["output_dir"].get<std::string>();
  }
  if (root.contains("protocol")) {
    if (!root["protocol"].is_object()) fail("/protocol", "expected an object");
    cfg.protocol = root["protocol"];
  }

  try {
    sys.validate();
  } catch (const std::domain_error& e) {
    fail("", e.what());
  }
  cfg.system = sys;

  // canonical form with every default materialized
  json canon;
  canon["particle"] = {{"diameter_m", sys.particle.diameter},
                       {"density_kg_m3", sys.particle.density},
                       {"mass_kg", sys.particle.mass},
                       {"charge_e", sys.particle.charge_count}};
  canon["trap"] = {{"frequencies_hz", vec3_to_json(sys.trap.omega / (2.0 * constants::pi))},
                   {"shape", sys.trap.shape == TrapShape::kGaussianBeam ? "gaussian_beam"
                                                                        : "harmonic"},
                   {"depth_j", sys.trap.depth}};
  canon["electrodes"] = {{"transduction_n_per_v", mat3_to_json(sys.electrodes.transduction)}};
  canon["environment"] = {{"pressure_mbar", sys.environment.pressure},
                          {"gas_temperature_k", sys.environment.gas_temperature},
                          {"gamma_s", sys.environment.gamma},
                          {"recoil_dp_n2s", vec3_to_json(sys.environment.recoil_dp)},
                          {"stray_field_v_per_m", vec3_to_json(sys.environment.stray_field)},
                          {"nonelectrostatic_force_n",
                           vec3_to_json(sys.environment.nonelectrostatic_force)},
                          {"gravity_m_s2", vec3_to_json(sys.environment.gravity)}};
  if (sys.environment.drift) {
    canon["environment"]["drift"] = {{"v_f_v", sys.environment.drift->v_f},
                                     {"v_0_v", sys.environment.drift->v_0},
                                     {"rc_s", sys.environment.drift->rc}};
  }
  json channels = json::array();
  for (const auto& ch : sys.detector.channels) {
    channels.push_back({{"gain_v_per_m", ch.gain},
                        {"weights", vec3_to_json(ch.weights)},
                        {"noise_psd_v2_hz", ch.noise_psd}});
  }
  canon["detector"] = {{"sample_rate_hz", sys.detector.sample_rate}, {"channels", channels}};
  json axes = json::array();
  for (const auto& ax : sys.feedback.axes) {
    axes.push_back({{"enabled", ax.enabled},
                    {"gain_s", ax.gain},
                    {"routing_electrode", ax.routing_electrode},
                    {"bandwidth_hz", ax.bandwidth},
                    {"extra_delay_s", ax.extra_delay}});
  }
  canon["feedback"] = {{"axes", axes}};
  canon["supply_noise"] = {{"enabled", sys.supply_noise.enabled},
                           {"abs_density_v_rthz", sys.supply_noise.abs_density},
                           {"fractional_per_rthz", sys.supply_noise.fractional},
                           {"corner_hz", sys.supply_noise.corner_hz}};
  canon["schedule"] = {{"trap_rise_fall_s", sys.timings.trap_rise_fall},
                       {"trap_trigger_delay_s", sys.timings.trap_trigger_delay},
                       {"trap_on_extra_delay_s", sys.timings.trap_on_extra_delay},
                       {"feedback_switch_delay_s", sys.timings.feedback_switch_delay}};
  canon["integration"] = {{"dt_s", sys.dt}, {"loss_radius_factor", sys.loss_radius_factor}};
  canon["nbar"] = vec3_to_json(sys.nbar);
  canon["seed"] = cfg.seed;
  canon["repetitions"] = cfg.repetitions;
  canon["protocol"] = cfg.protocol;
  cfg.canonical = canon;
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config error: cannot open " + path);
  json root;
  try {
    root = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config error: ") + e.what());
  }
  return config_from_json(root);
}

std::string config_hash(const json& canonical) {
  const std::string dump = canonical.dump();
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace levisim

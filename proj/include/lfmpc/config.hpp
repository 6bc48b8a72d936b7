#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "lfmpc/building.hpp"
#include "lfmpc/common.hpp"
#include "lfmpc/kernels.hpp"
#include "lfmpc/mpc.hpp"
#include "lfmpc/occupancy.hpp"

namespace lfmpc::config {

using nlohmann::json;

namespace detail {

inline void require_keys(const json& j, std::initializer_list<const char*> allowed,
                         const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* a : allowed)
      if (item.key() == a) {
        known = true;
        break;
      }
    if (!known) throw ConfigError(where + ": unknown key '" + item.key() + "'");
  }
}

template <class T>
T get_or(const json& j, const char* key, const T& def, const std::string& where) {
  if (!j.contains(key)) return def;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

inline std::array<double, 2> get_pair(const json& j, const char* key,
                                      std::array<double, 2> def, const std::string& where) {
  if (!j.contains(key)) return def;
  const auto& a = j.at(key);
  if (!a.is_array() || a.size() != 2 || !a[0].is_number() || !a[1].is_number())
    throw ConfigError(where + "." + key + ": expected [number, number]");
  return {a[0].get<double>(), a[1].get<double>()};
}

}  // namespace detail

struct ZoneConfig {
  std::string name = "zone";
  building::ZoneParams params;       // couplings filled from the couplings list
  building::OccupantProfile occupants;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  std::string start_date = "2026-01-05";  // a Monday
  int train_days = 21;
  int span_days = 14;
  std::string scenario = "LFM";
  std::vector<std::string> scenarios{"None", "Exact", "LFM", "ExactPreComfort",
                                     "LfmPreComfort"};

  // data sources (empty = synthetic)
  std::string co2_csv, occupancy_csv, weather_csv;
  bool co2_in_ppm = true;

  // building
  double supply_air_temp = 16.0;
  double supply_water_temp = 50.0;
  double co2_supply_ppm = 400.0;
  double co2_generation_rate = 6.2e-6;
  double model_mismatch_pct = 0.0;
  int plant_substeps = 1;
  std::vector<ZoneConfig> zones;
  struct CouplingConfig {
    int a = 0, b = 0;
    double resistance = 0.0;
  };
  std::vector<CouplingConfig> couplings;

  building::AmbientParams ambient;

  // occupancy kernel template
  double kernel_sigma2 = 6.0;
  double kernel_ell_periodic = 0.7;
  double kernel_ell_damping = 96.0;
  int kernel_degree = 10;

  bool bank_fit = false;
  double bank_noise_var = 0.25;
  int bank_fit_iterations = 200;

  occupancy::UkfParams estimation;   // noise fields in kg/kg units
  lfm::ObserverParams observer;

  double sensor_temp_noise_sd = 0.05;
  double sensor_co2_noise_sd = 3.0 * occupancy::kPpmToMassFraction;

  mpc::OcpConfig ocp;
  mpc::ComfortSchedule comfort;

  double vent_min_day = 0.1;
  double train_vent_day = 0.25;
  double train_vent_night = 0.05;
  Eigen::Vector3d initial_thermal{20.0, 15.0, 30.0};

  double t0_hours() const {
    std::string s = start_date;
    if (s.size() == 10) s += "T00:00:00";
    return parse_timestamp(s);
  }
};

inline std::vector<ZoneConfig> default_zones() {
  std::vector<ZoneConfig> zs(3);
  zs[0].name = "south";
  zs[1].name = "north";
  zs[2].name = "hall";
  zs[2].params.C_z = 2.0e6;
  zs[2].params.m_z = 160.0;
  zs[2].occupants.max_occupants = 2;
  zs[2].occupants.presence_prob = 0.5;
  return zs;
}

inline std::vector<ExperimentConfig::CouplingConfig> default_couplings() {
  return {{0, 2, 0.02}, {1, 2, 0.02}};
}

// ---------------------------------------------------------------------------

inline ExperimentConfig parse_config(const json& j) {
  ExperimentConfig c;
  detail::require_keys(j,
                       {"seed", "out_dir", "start_date", "train_days", "span_days", "scenario",
                        "scenarios", "data", "building", "ambient", "kernel", "bank",
                        "estimation", "observer", "sensors", "mpc", "comfort", "training",
                        "initial"},
                       "config");

  c.seed = detail::get_or<std::uint64_t>(j, "seed", c.seed, "config");
  c.out_dir = detail::get_or<std::string>(j, "out_dir", c.out_dir, "config");
  c.start_date = detail::get_or<std::string>(j, "start_date", c.start_date, "config");
  c.train_days = detail::get_or<int>(j, "train_days", c.train_days, "config");
  c.span_days = detail::get_or<int>(j, "span_days", c.span_days, "config");
  c.scenario = detail::get_or<std::string>(j, "scenario", c.scenario, "config");
  c.scenarios = detail::get_or<std::vector<std::string>>(j, "scenarios", c.scenarios, "config");

  if (j.contains("data")) {
    const auto& d = j.at("data");
    detail::require_keys(d, {"co2_csv", "occupancy_csv", "weather_csv", "co2_in_ppm"},
                         "config.data");
    c.co2_csv = detail::get_or<std::string>(d, "co2_csv", "", "config.data");
    c.occupancy_csv = detail::get_or<std::string>(d, "occupancy_csv", "", "config.data");
    c.weather_csv = detail::get_or<std::string>(d, "weather_csv", "", "config.data");
    c.co2_in_ppm = detail::get_or<bool>(d, "co2_in_ppm", true, "config.data");
  }

  if (j.contains("building")) {
    const auto& b = j.at("building");
    detail::require_keys(b,
                         {"supply_air_temp", "supply_water_temp", "co2_supply_ppm",
                          "co2_generation_rate", "model_mismatch_pct", "plant_substeps",
                          "zones", "couplings"},
                         "config.building");
    c.supply_air_temp = detail::get_or<double>(b, "supply_air_temp", c.supply_air_temp,
                                               "config.building");
    c.supply_water_temp = detail::get_or<double>(b, "supply_water_temp", c.supply_water_temp,
                                                 "config.building");
    c.co2_supply_ppm = detail::get_or<double>(b, "co2_supply_ppm", c.co2_supply_ppm,
                                              "config.building");
    c.co2_generation_rate = detail::get_or<double>(b, "co2_generation_rate",
                                                   c.co2_generation_rate, "config.building");
    c.model_mismatch_pct = detail::get_or<double>(b, "model_mismatch_pct", 0.0,
                                                  "config.building");
    c.plant_substeps = detail::get_or<int>(b, "plant_substeps", 1, "config.building");
    if (b.contains("zones")) {
      if (!b.at("zones").is_array() || b.at("zones").empty())
        throw ConfigError("config.building.zones: expected a non-empty array");
      c.zones.clear();
      int zi = 0;
      for (const auto& zj : b.at("zones")) {
        std::string where = "config.building.zones[" + std::to_string(zi) + "]";
        detail::require_keys(zj,
                             {"name", "C_z", "C_w", "C_r", "R_zw", "R_zr", "R_wa", "c_a",
                              "c_w", "Q_occ", "m_z", "occupants"},
                             where);
        ZoneConfig zc;
        zc.name = detail::get_or<std::string>(zj, "name", "zone" + std::to_string(zi), where);
        auto& p = zc.params;
        p.C_z = detail::get_or<double>(zj, "C_z", p.C_z, where);
        p.C_w = detail::get_or<double>(zj, "C_w", p.C_w, where);
        p.C_r = detail::get_or<double>(zj, "C_r", p.C_r, where);
        p.R_zw = detail::get_or<double>(zj, "R_zw", p.R_zw, where);
        p.R_zr = detail::get_or<double>(zj, "R_zr", p.R_zr, where);
        p.R_wa = detail::get_or<double>(zj, "R_wa", p.R_wa, where);
        p.c_a = detail::get_or<double>(zj, "c_a", p.c_a, where);
        p.c_w = detail::get_or<double>(zj, "c_w", p.c_w, where);
        p.Q_occ = detail::get_or<double>(zj, "Q_occ", p.Q_occ, where);
        p.m_z = detail::get_or<double>(zj, "m_z", p.m_z, where);
        if (zj.contains("occupants")) {
          const auto& oj = zj.at("occupants");
          detail::require_keys(oj,
                               {"max", "presence_prob", "arrival_mean", "arrival_sd",
                                "duration_mean", "duration_sd"},
                               where + ".occupants");
          auto& o = zc.occupants;
          o.max_occupants = detail::get_or<int>(oj, "max", o.max_occupants, where);
          o.presence_prob = detail::get_or<double>(oj, "presence_prob", o.presence_prob, where);
          o.arrival_mean = detail::get_or<double>(oj, "arrival_mean", o.arrival_mean, where);
          o.arrival_sd = detail::get_or<double>(oj, "arrival_sd", o.arrival_sd, where);
          o.duration_mean = detail::get_or<double>(oj, "duration_mean", o.duration_mean, where);
          o.duration_sd = detail::get_or<double>(oj, "duration_sd", o.duration_sd, where);
        }
        c.zones.push_back(std::move(zc));
        ++zi;
      }
    }
    if (b.contains("couplings")) {
      if (!b.at("couplings").is_array())
        throw ConfigError("config.building.couplings: expected an array");
      c.couplings.clear();
      int ci = 0;
      for (const auto& cj : b.at("couplings")) {
        std::string where = "config.building.couplings[" + std::to_string(ci) + "]";
        detail::require_keys(cj, {"zones", "resistance"}, where);
        if (!cj.contains("zones") || !cj.at("zones").is_array() || cj.at("zones").size() != 2)
          throw ConfigError(where + ".zones: expected [a, b]");
        ExperimentConfig::CouplingConfig cc;
        cc.a = cj.at("zones")[0].get<int>();
        cc.b = cj.at("zones")[1].get<int>();
        cc.resistance = detail::get_or<double>(cj, "resistance", 0.0, where);
        c.couplings.push_back(cc);
        ++ci;
      }
    }
  }
  if (c.zones.empty()) {
    c.zones = default_zones();
    if (c.couplings.empty() && !j.contains("building")) c.couplings = default_couplings();
    else if (c.couplings.empty() && !j.at("building").contains("couplings"))
      c.couplings = default_couplings();
  }

  if (j.contains("ambient")) {
    const auto& a = j.at("ambient");
    detail::require_keys(a, {"mean", "daily_amplitude", "annual_amplitude", "noise_sd",
                             "noise_rho"},
                         "config.ambient");
    c.ambient.mean = detail::get_or<double>(a, "mean", c.ambient.mean, "config.ambient");
    c.ambient.daily_amplitude = detail::get_or<double>(a, "daily_amplitude",
                                                       c.ambient.daily_amplitude, "config.ambient");
    c.ambient.annual_amplitude = detail::get_or<double>(a, "annual_amplitude",
                                                        c.ambient.annual_amplitude, "config.ambient");
    c.ambient.noise_sd = detail::get_or<double>(a, "noise_sd", c.ambient.noise_sd, "config.ambient");
    c.ambient.noise_rho = detail::get_or<double>(a, "noise_rho", c.ambient.noise_rho, "config.ambient");
  }

  if (j.contains("kernel")) {
    const auto& k = j.at("kernel");
    detail::require_keys(k, {"sigma2", "ell_periodic", "ell_damping", "degree"}, "config.kernel");
    c.kernel_sigma2 = detail::get_or<double>(k, "sigma2", c.kernel_sigma2, "config.kernel");
    c.kernel_ell_periodic = detail::get_or<double>(k, "ell_periodic", c.kernel_ell_periodic,
                                                   "config.kernel");
    c.kernel_ell_damping = detail::get_or<double>(k, "ell_damping", c.kernel_ell_damping,
                                                  "config.kernel");
    c.kernel_degree = detail::get_or<int>(k, "degree", c.kernel_degree, "config.kernel");
  }

  if (j.contains("bank")) {
    const auto& b = j.at("bank");
    detail::require_keys(b, {"fit", "noise_var", "fit_iterations"}, "config.bank");
    c.bank_fit = detail::get_or<bool>(b, "fit", c.bank_fit, "config.bank");
    c.bank_noise_var = detail::get_or<double>(b, "noise_var", c.bank_noise_var, "config.bank");
    c.bank_fit_iterations = detail::get_or<int>(b, "fit_iterations", c.bank_fit_iterations,
                                                "config.bank");
  }

  if (j.contains("estimation")) {
    const auto& e = j.at("estimation");
    detail::require_keys(e,
                         {"alpha", "beta", "kappa", "process_noise_concentration",
                          "process_noise_gain", "measurement_noise_ppm"},
                         "config.estimation");
    c.estimation.alpha = detail::get_or<double>(e, "alpha", c.estimation.alpha, "config.estimation");
    c.estimation.beta = detail::get_or<double>(e, "beta", c.estimation.beta, "config.estimation");
    c.estimation.kappa = detail::get_or<double>(e, "kappa", c.estimation.kappa, "config.estimation");
    c.estimation.process_noise_concentration =
        detail::get_or<double>(e, "process_noise_concentration",
                               c.estimation.process_noise_concentration, "config.estimation");
    c.estimation.process_noise_gain = detail::get_or<double>(
        e, "process_noise_gain", c.estimation.process_noise_gain, "config.estimation");
    double mn_ppm = detail::get_or<double>(e, "measurement_noise_ppm", 3.0, "config.estimation");
    c.estimation.measurement_noise =
        (mn_ppm * occupancy::kPpmToMassFraction) * (mn_ppm * occupancy::kPpmToMassFraction);
  }

  if (j.contains("observer")) {
    const auto& o = j.at("observer");
    detail::require_keys(o,
                         {"temp_noise_sd", "co2_noise_sd_ppm", "process_noise_temp",
                          "process_noise_co2_ppm", "substeps"},
                         "config.observer");
    double tsd = detail::get_or<double>(o, "temp_noise_sd", 0.01, "config.observer");
    double xsd = detail::get_or<double>(o, "co2_noise_sd_ppm", 3.0, "config.observer") *
                 occupancy::kPpmToMassFraction;
    double qt = detail::get_or<double>(o, "process_noise_temp", 1e-6, "config.observer");
    double qx = detail::get_or<double>(o, "process_noise_co2_ppm", 0.5, "config.observer") *
                occupancy::kPpmToMassFraction;
    c.observer.temp_meas_var = tsd * tsd;
    c.observer.co2_meas_var = xsd * xsd;
    c.observer.mech_process_noise = Eigen::Vector4d{qt, qt, qt, qx * qx};
    c.observer.substeps = detail::get_or<int>(o, "substeps", 4, "config.observer");
  }

  if (j.contains("sensors")) {
    const auto& s = j.at("sensors");
    detail::require_keys(s, {"temp_noise_sd", "co2_noise_sd_ppm"}, "config.sensors");
    c.sensor_temp_noise_sd = detail::get_or<double>(s, "temp_noise_sd", c.sensor_temp_noise_sd,
                                                    "config.sensors");
    c.sensor_co2_noise_sd = detail::get_or<double>(s, "co2_noise_sd_ppm", 3.0, "config.sensors") *
                            occupancy::kPpmToMassFraction;
  }

  if (j.contains("mpc")) {
    const auto& m = j.at("mpc");
    detail::require_keys(m,
                         {"horizon_hours", "control_weight", "penalty_weight", "u_min", "u_max",
                          "iterations", "vent_min_day"},
                         "config.mpc");
    c.ocp.horizon_hours = detail::get_or<double>(m, "horizon_hours", c.ocp.horizon_hours,
                                                 "config.mpc");
    auto cw = detail::get_pair(m, "control_weight",
                               {c.ocp.control_weight(0), c.ocp.control_weight(1)}, "config.mpc");
    c.ocp.control_weight = Eigen::Vector2d{cw[0], cw[1]};
    c.ocp.penalty_weight = detail::get_or<double>(m, "penalty_weight", c.ocp.penalty_weight,
                                                  "config.mpc");
    auto umin = detail::get_pair(m, "u_min", {c.ocp.u_min(0), c.ocp.u_min(1)}, "config.mpc");
    auto umax = detail::get_pair(m, "u_max", {c.ocp.u_max(0), c.ocp.u_max(1)}, "config.mpc");
    c.ocp.u_min = Eigen::Vector2d{umin[0], umin[1]};
    c.ocp.u_max = Eigen::Vector2d{umax[0], umax[1]};
    c.ocp.max_iterations = detail::get_or<int>(m, "iterations", c.ocp.max_iterations,
                                               "config.mpc");
    c.vent_min_day = detail::get_or<double>(m, "vent_min_day", c.vent_min_day, "config.mpc");
  }

  if (j.contains("comfort")) {
    const auto& cf = j.at("comfort");
    detail::require_keys(cf,
                         {"comfort", "pre_comfort", "economy", "occupancy_threshold",
                          "day_start", "day_end"},
                         "config.comfort");
    auto set_band = [&](const char* key, mpc::ModeBounds& b) {
      auto v = detail::get_pair(cf, key, {b.lower, b.upper}, "config.comfort");
      b = {v[0], v[1]};
    };
    set_band("comfort", c.comfort.comfort);
    set_band("pre_comfort", c.comfort.pre_comfort);
    set_band("economy", c.comfort.economy);
    c.comfort.occupancy_threshold = detail::get_or<double>(cf, "occupancy_threshold",
                                                           c.comfort.occupancy_threshold,
                                                           "config.comfort");
    c.comfort.day_start = detail::get_or<double>(cf, "day_start", c.comfort.day_start,
                                                 "config.comfort");
    c.comfort.day_end = detail::get_or<double>(cf, "day_end", c.comfort.day_end, "config.comfort");
  }

  if (j.contains("training")) {
    const auto& t = j.at("training");
    detail::require_keys(t, {"vent_day", "vent_night"}, "config.training");
    c.train_vent_day = detail::get_or<double>(t, "vent_day", c.train_vent_day, "config.training");
    c.train_vent_night = detail::get_or<double>(t, "vent_night", c.train_vent_night,
                                                "config.training");
  }

  if (j.contains("initial")) {
    const auto& i = j.at("initial");
    detail::require_keys(i, {"T_z", "T_w", "T_r"}, "config.initial");
    c.initial_thermal(0) = detail::get_or<double>(i, "T_z", c.initial_thermal(0), "config.initial");
    c.initial_thermal(1) = detail::get_or<double>(i, "T_w", c.initial_thermal(1), "config.initial");
    c.initial_thermal(2) = detail::get_or<double>(i, "T_r", c.initial_thermal(2), "config.initial");
  }
  return c;
}

inline void validate_config(const ExperimentConfig& c) {
  auto band_ok = [](const mpc::ModeBounds& b) { return b.lower < b.upper; };
  if (!band_ok(c.comfort.comfort)) throw ConfigError("comfort.comfort: lower must be < upper");
  if (!band_ok(c.comfort.pre_comfort))
    throw ConfigError("comfort.pre_comfort: lower must be < upper");
  if (!band_ok(c.comfort.economy)) throw ConfigError("comfort.economy: lower must be < upper");
  if (c.comfort.occupancy_threshold < 0.0)
    throw ConfigError("comfort.occupancy_threshold: must be >= 0");
  if (!(c.comfort.day_start >= 0.0 && c.comfort.day_end <= 24.0 &&
        c.comfort.day_start < c.comfort.day_end))
    throw ConfigError("comfort.day_start/day_end: need 0 <= start < end <= 24");
  if (c.ocp.horizon_hours <= 0.0) throw ConfigError("mpc.horizon_hours: must be > 0");
  if (c.ocp.max_iterations < 1) throw ConfigError("mpc.iterations: must be >= 1");
  for (int i = 0; i < 2; ++i)
    if (!(c.ocp.u_min(i) <= c.ocp.u_max(i)))
      throw ConfigError("mpc.u_min/u_max: min must be <= max");
  if (c.vent_min_day < 0.0 || c.vent_min_day > c.ocp.u_max(0))
    throw ConfigError("mpc.vent_min_day: must be in [0, u_max air]");
  if (c.train_days < 7) throw ConfigError("train_days: must be >= 7");
  if (c.span_days < 1) throw ConfigError("span_days: must be >= 1");
  if (!(c.kernel_sigma2 > 0.0)) throw ConfigError("kernel.sigma2: must be > 0");
  if (!(c.kernel_ell_periodic > 0.0)) throw ConfigError("kernel.ell_periodic: must be > 0");
  if (!(c.kernel_ell_damping > 0.0)) throw ConfigError("kernel.ell_damping: must be > 0");
  if (c.kernel_degree < 1) throw ConfigError("kernel.degree: must be >= 1");
  if (!(c.bank_noise_var > 0.0)) throw ConfigError("bank.noise_var: must be > 0");
  if (!(c.co2_generation_rate > 0.0))
    throw ConfigError("building.co2_generation_rate: must be > 0");
  if (c.plant_substeps < 1) throw ConfigError("building.plant_substeps: must be >= 1");
  if (c.model_mismatch_pct < 0.0 || c.model_mismatch_pct > 50.0)
    throw ConfigError("building.model_mismatch_pct: must be in [0, 50]");
  for (size_t i = 0; i < c.couplings.size(); ++i) {
    const auto& cp = c.couplings[i];
    int nz = static_cast<int>(c.zones.size());
    if (cp.a < 0 || cp.a >= nz || cp.b < 0 || cp.b >= nz || cp.a == cp.b)
      throw ConfigError("building.couplings[" + std::to_string(i) + "]: bad zone pair");
    if (!(cp.resistance > 0.0))
      throw ConfigError("building.couplings[" + std::to_string(i) +
                        "].resistance: must be > 0");
  }
  double t0 = c.t0_hours();
  if (weekday(t0) != 0 || day_phase(t0) != 0.0)
    throw ConfigError("start_date: must be a Monday");
  try {
    mpc::parse_scenario(c.scenario);
    for (const auto& s : c.scenarios) mpc::parse_scenario(s);
  } catch (const UsageError& e) {
    throw ConfigError(std::string("scenario: ") + e.what());
  }
  // Referenced input files must exist up front, not at first use.
  auto check_file = [](const std::string& key, const std::string& path) {
    if (!path.empty() && !std::filesystem::exists(path))
      throw DataError("data." + key + ": file '" + path + "' does not exist");
  };
  check_file("co2_csv", c.co2_csv);
  check_file("occupancy_csv", c.occupancy_csv);
  check_file("weather_csv", c.weather_csv);
}

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::string> scenario;
  std::optional<int> span_days;
  bool strict = false;
};

inline ExperimentConfig load_config(const std::string& path, const Overrides& ov = {}) {
  json j = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw ConfigError("config '" + path + "': " + e.what());
    }
  }
  ExperimentConfig c = parse_config(j);
  if (ov.seed) c.seed = *ov.seed;
  if (ov.out_dir) c.out_dir = *ov.out_dir;
  if (ov.scenario) c.scenario = *ov.scenario;
  if (ov.span_days) c.span_days = *ov.span_days;
  validate_config(c);
  return c;
}

// ---------------------------------------------------------------------------
// Canonical serialization of the effective configuration. nlohmann::json
// keeps keys sorted, so the dump is stable and hashable.

inline json to_json(const ExperimentConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  j["start_date"] = c.start_date;
  j["train_days"] = c.train_days;
  j["span_days"] = c.span_days;
  j["scenario"] = c.scenario;
  j["scenarios"] = c.scenarios;
  j["data"] = {{"co2_csv", c.co2_csv},
               {"occupancy_csv", c.occupancy_csv},
               {"weather_csv", c.weather_csv},
               {"co2_in_ppm", c.co2_in_ppm}};
  json zones = json::array();
  for (const auto& z : c.zones) {
    zones.push_back({{"name", z.name},
                     {"C_z", z.params.C_z},
                     {"C_w", z.params.C_w},
                     {"C_r", z.params.C_r},
                     {"R_zw", z.params.R_zw},
                     {"R_zr", z.params.R_zr},
                     {"R_wa", z.params.R_wa},
                     {"c_a", z.params.c_a},
                     {"c_w", z.params.c_w},
                     {"Q_occ", z.params.Q_occ},
                     {"m_z", z.params.m_z},
                     {"occupants",
                      {{"max", z.occupants.max_occupants},
                       {"presence_prob", z.occupants.presence_prob},
                       {"arrival_mean", z.occupants.arrival_mean},
                       {"arrival_sd", z.occupants.arrival_sd},
                       {"duration_mean", z.occupants.duration_mean},
                       {"duration_sd", z.occupants.duration_sd}}}});
  }
  json couplings = json::array();
  for (const auto& cp : c.couplings)
    couplings.push_back({{"zones", {cp.a, cp.b}}, {"resistance", cp.resistance}});
  j["building"] = {{"supply_air_temp", c.supply_air_temp},
                   {"supply_water_temp", c.supply_water_temp},
                   {"co2_supply_ppm", c.co2_supply_ppm},
                   {"co2_generation_rate", c.co2_generation_rate},
                   {"model_mismatch_pct", c.model_mismatch_pct},
                   {"plant_substeps", c.plant_substeps},
                   {"zones", zones},
                   {"couplings", couplings}};
  j["ambient"] = {{"mean", c.ambient.mean},
                  {"daily_amplitude", c.ambient.daily_amplitude},
                  {"annual_amplitude", c.ambient.annual_amplitude},
                  {"noise_sd", c.ambient.noise_sd},
                  {"noise_rho", c.ambient.noise_rho}};
  j["kernel"] = {{"sigma2", c.kernel_sigma2},
                 {"ell_periodic", c.kernel_ell_periodic},
                 {"ell_damping", c.kernel_ell_damping},
                 {"degree", c.kernel_degree}};
  j["bank"] = {{"fit", c.bank_fit},
               {"noise_var", c.bank_noise_var},
               {"fit_iterations", c.bank_fit_iterations}};
  j["estimation"] = {{"alpha", c.estimation.alpha},
                     {"beta", c.estimation.beta},
                     {"kappa", c.estimation.kappa},
                     {"process_noise_concentration", c.estimation.process_noise_concentration},
                     {"process_noise_gain", c.estimation.process_noise_gain},
                     {"measurement_noise", c.estimation.measurement_noise}};
  j["observer"] = {{"temp_meas_var", c.observer.temp_meas_var},
                   {"co2_meas_var", c.observer.co2_meas_var},
                   {"process_noise",
                    {c.observer.mech_process_noise(0), c.observer.mech_process_noise(1),
                     c.observer.mech_process_noise(2), c.observer.mech_process_noise(3)}},
                   {"substeps", c.observer.substeps}};
  j["sensors"] = {{"temp_noise_sd", c.sensor_temp_noise_sd},
                  {"co2_noise_sd", c.sensor_co2_noise_sd}};
  j["mpc"] = {{"horizon_hours", c.ocp.horizon_hours},
              {"control_weight", {c.ocp.control_weight(0), c.ocp.control_weight(1)}},
              {"penalty_weight", c.ocp.penalty_weight},
              {"u_min", {c.ocp.u_min(0), c.ocp.u_min(1)}},
              {"u_max", {c.ocp.u_max(0), c.ocp.u_max(1)}},
              {"iterations", c.ocp.max_iterations},
              {"vent_min_day", c.vent_min_day}};
  j["comfort"] = {{"comfort", {c.comfort.comfort.lower, c.comfort.comfort.upper}},
                  {"pre_comfort", {c.comfort.pre_comfort.lower, c.comfort.pre_comfort.upper}},
                  {"economy", {c.comfort.economy.lower, c.comfort.economy.upper}},
                  {"occupancy_threshold", c.comfort.occupancy_threshold},
                  {"day_start", c.comfort.day_start},
                  {"day_end", c.comfort.day_end}};
  j["training"] = {{"vent_day", c.train_vent_day}, {"vent_night", c.train_vent_night}};
  j["initial"] = {{"T_z", c.initial_thermal(0)},
                  {"T_w", c.initial_thermal(1)},
                  {"T_r", c.initial_thermal(2)}};
  return j;
}

inline std::string config_hash(const ExperimentConfig& c) {
  std::uint64_t h = fnv1a64(to_json(c).dump());
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Assembly into the runnable closed-loop setup. A nonzero mismatch percentage
// perturbs the controller-side building parameters with a seeded stream.

inline building::BuildingModel make_building(const ExperimentConfig& c) {
  building::BuildingModel b;
  b.T_supply_air = c.supply_air_temp;
  b.T_supply_water = c.supply_water_temp;
  b.co2_supply = c.co2_supply_ppm * occupancy::kPpmToMassFraction;
  b.co2_gen_rate = c.co2_generation_rate;
  for (const auto& z : c.zones) {
    building::ZoneParams p = z.params;
    p.name = z.name;
    p.couplings.clear();
    b.zones.push_back(p);
  }
  for (const auto& cp : c.couplings) {
    b.zones[static_cast<size_t>(cp.a)].couplings.push_back({cp.b, cp.resistance});
    b.zones[static_cast<size_t>(cp.b)].couplings.push_back({cp.a, cp.resistance});
  }
  b.validate();
  return b;
}

inline building::BuildingModel perturb_building(const building::BuildingModel& b, double pct,
                                                std::uint64_t seed) {
  if (pct == 0.0) return b;
  building::BuildingModel m = b;
  auto rng = substream(seed, "model-mismatch");
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  auto tweak = [&](double& v) { v *= 1.0 + pct / 100.0 * unif(rng); };
  for (auto& z : m.zones) {
    tweak(z.C_z);
    tweak(z.C_w);
    tweak(z.C_r);
    tweak(z.R_zw);
    tweak(z.R_zr);
    tweak(z.R_wa);
    tweak(z.m_z);
    for (auto& cp : z.couplings) tweak(cp.resistance);
  }
  return m;
}

inline kernels::KernelSpec make_kernel_template(const ExperimentConfig& c) {
  kernels::PeriodicParams per;
  per.sigma2 = c.kernel_sigma2;
  per.ell = c.kernel_ell_periodic;
  per.omega0 = 2.0 * M_PI / 24.0;
  per.degree = c.kernel_degree;
  return kernels::KernelSpec::make_quasi_periodic(per, 0, c.kernel_ell_damping);
}

inline mpc::ClosedLoopConfig make_closed_loop(const ExperimentConfig& c) {
  mpc::ClosedLoopConfig cl;
  cl.plant = make_building(c);
  cl.model = perturb_building(cl.plant, c.model_mismatch_pct, c.seed);
  cl.bank_template = make_kernel_template(c);
  cl.bank_noise_var = c.bank_noise_var;
  cl.bank_fit = c.bank_fit;
  cl.bank_fit_iters = c.bank_fit_iterations;
  cl.co2_ukf = c.estimation;
  cl.observer = c.observer;
  cl.ocp = c.ocp;
  cl.comfort = c.comfort;
  cl.t0 = c.t0_hours();
  cl.train_days = c.train_days;
  cl.eval_days = c.span_days;
  cl.plant_substeps = c.plant_substeps;
  cl.vent_min_day = c.vent_min_day;
  cl.train_vent_day = c.train_vent_day;
  cl.train_vent_night = c.train_vent_night;
  cl.meas_noise_sd_T = c.sensor_temp_noise_sd;
  cl.meas_noise_sd_X = c.sensor_co2_noise_sd;
  cl.ambient = c.ambient;
  for (const auto& z : c.zones) cl.occupants.push_back(z.occupants);
  cl.x0_thermal = c.initial_thermal;
  return cl;
}

}  // namespace lfmpc::config

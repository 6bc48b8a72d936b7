#pragma once

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lfmpc/config.hpp"
#include "lfmpc/csv.hpp"
#include "lfmpc/lfm.hpp"
#include "lfmpc/mpc.hpp"
#include "lfmpc/occupancy.hpp"

namespace lfmpc::harness {

constexpr const char* kVersion = "0.1.0";

struct CliOptions {
  std::string subcommand;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::string> scenario;
  std::optional<int> span_days;
  bool strict = false;
};

struct RunContext {
  config::ExperimentConfig cfg;
  std::string out_dir;
  std::string config_hash;
  bool strict = false;
  std::vector<std::string> outputs;
  std::vector<std::string> warnings;
};

namespace detail {

inline std::string hash_hex(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return hash_hex(fnv1a64(buf.str()));
}

inline std::string now_iso8601() {
  auto now = std::chrono::system_clock::now();
  std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::filesystem::path out_path(RunContext& ctx, const std::string& name) {
  ctx.outputs.push_back(name);
  return std::filesystem::path(ctx.out_dir) / name;
}

inline void write_text(const std::filesystem::path& p, const std::string& body) {
  std::ofstream out(p);
  if (!out) throw DataError("cannot write '" + p.string() + "'");
  out << body;
  if (!out) throw DataError("write failed for '" + p.string() + "'");
}

}  // namespace detail

inline RunContext make_context(const CliOptions& opt) {
  config::Overrides ov;
  ov.seed = opt.seed;
  ov.out_dir = opt.out_dir;
  ov.scenario = opt.scenario;
  ov.span_days = opt.span_days;
  ov.strict = opt.strict;
  RunContext ctx;
  ctx.cfg = config::load_config(opt.config_path, ov);
  ctx.out_dir = ctx.cfg.out_dir;
  ctx.strict = opt.strict;
  ctx.config_hash = opt.config_path.empty()
                        ? config::config_hash(ctx.cfg)
                        : detail::file_hash(opt.config_path);
  std::error_code ec;
  std::filesystem::create_directories(ctx.out_dir, ec);
  if (ec) throw DataError("cannot create output directory '" + ctx.out_dir + "'");
  return ctx;
}

inline void write_manifest(RunContext& ctx, const std::string& subcommand) {
  nlohmann::json m;
  m["config_hash"] = ctx.config_hash;
  m["created"] = detail::now_iso8601();
  m["outputs"] = ctx.outputs;
  m["seed"] = ctx.cfg.seed;
  m["subcommand"] = subcommand;
  m["versions"] = {{"lfmpc", kVersion},
                   {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                 std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                 std::to_string(EIGEN_MINOR_VERSION)}};
  if (!ctx.warnings.empty()) m["warnings"] = ctx.warnings;
  detail::write_text(std::filesystem::path(ctx.out_dir) / "manifest.json", m.dump(2) + "\n");
}

inline void finish(RunContext& ctx, const std::string& subcommand) {
  write_manifest(ctx, subcommand);
  for (const auto& w : ctx.warnings) std::cerr << "warning: " << w << "\n";
  if (ctx.strict && !ctx.warnings.empty())
    throw NumericError("strict mode: " + std::to_string(ctx.warnings.size()) +
                       " warning(s) escalated");
}

// ---------------------------------------------------------------------------
// Data acquisition. CSV inputs are used when configured; otherwise the
// synthetic training window is generated from the seed.

inline double scheduled_vent(double t, const config::ExperimentConfig& c) {
  double ph = day_phase(t);
  bool day = !is_weekend(t) && ph >= c.comfort.day_start && ph < c.comfort.day_end;
  return day ? c.train_vent_day : c.train_vent_night;
}

// Maps table columns onto config zones: by name when the sets match, by
// position when only the counts do.
inline std::vector<int> map_columns(const csv::Table& t, const config::ExperimentConfig& c,
                                    const std::string& what) {
  const int nz = static_cast<int>(c.zones.size());
  std::vector<int> col_of_zone(static_cast<size_t>(nz), -1);
  bool by_name = true;
  for (int z = 0; z < nz; ++z) {
    int found = -1;
    for (size_t j = 0; j < t.columns.size(); ++j)
      if (t.columns[j] == c.zones[static_cast<size_t>(z)].name) found = static_cast<int>(j);
    if (found < 0) {
      by_name = false;
      break;
    }
    col_of_zone[static_cast<size_t>(z)] = found;
  }
  if (by_name) return col_of_zone;
  if (static_cast<int>(t.columns.size()) != nz)
    throw DataError(what + ": has " + std::to_string(t.columns.size()) +
                    " value columns but the config defines " + std::to_string(nz) + " zones");
  for (int z = 0; z < nz; ++z) col_of_zone[static_cast<size_t>(z)] = z;
  return col_of_zone;
}

inline std::vector<occupancy::OccupancySeries> estimates_from_co2_csv(
    const config::ExperimentConfig& c) {
  csv::Table t = csv::read_table(c.co2_csv);
  std::vector<int> cols = map_columns(t, c, "co2 csv '" + c.co2_csv + "'");
  const double unit = c.co2_in_ppm ? occupancy::kPpmToMassFraction : 1.0;
  std::vector<occupancy::OccupancySeries> out;
  for (size_t z = 0; z < c.zones.size(); ++z) {
    occupancy::Co2Series s;
    s.times = t.times;
    s.supply_concentration = c.co2_supply_ppm * occupancy::kPpmToMassFraction;
    s.zone_air_mass = c.zones[z].params.m_z;
    s.concentration.resize(t.times.size());
    s.air_flow.resize(t.times.size());
    for (size_t k = 0; k < t.times.size(); ++k) {
      s.concentration[k] = t.values(static_cast<long>(k), cols[z]) * unit;
      s.air_flow[k] = scheduled_vent(t.times[k], c);
    }
    out.push_back(occupancy::ukf_estimate(s, c.co2_generation_rate, c.estimation));
  }
  return out;
}

inline std::vector<occupancy::OccupancySeries> estimates_from_occupancy_csv(
    const config::ExperimentConfig& c) {
  csv::Table t = csv::read_table(c.occupancy_csv);
  std::vector<int> cols = map_columns(t, c, "occupancy csv '" + c.occupancy_csv + "'");
  std::vector<occupancy::OccupancySeries> out;
  for (size_t z = 0; z < c.zones.size(); ++z) {
    occupancy::OccupancySeries s;
    s.times = t.times;
    s.count.resize(t.times.size());
    s.variance.assign(t.times.size(), c.bank_noise_var);
    for (size_t k = 0; k < t.times.size(); ++k)
      s.count[k] = t.values(static_cast<long>(k), cols[z]);
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<occupancy::OccupancySeries> synthetic_estimates(
    const config::ExperimentConfig& c) {
  mpc::ClosedLoopConfig cl = config::make_closed_loop(c);
  mpc::SharedInputs in = mpc::prepare_inputs(cl, c.seed);
  return in.train_estimates;
}

// estimate reads CO2; fit and predict read occupancy estimates, falling back
// to the UKF output of the synthetic training window.
inline std::vector<occupancy::OccupancySeries> acquire_estimates(
    const config::ExperimentConfig& c) {
  if (!c.occupancy_csv.empty()) return estimates_from_occupancy_csv(c);
  if (!c.co2_csv.empty()) return estimates_from_co2_csv(c);
  return synthetic_estimates(c);
}

// ---------------------------------------------------------------------------
// Subcommands.

inline void cmd_estimate(RunContext& ctx) {
  const auto& c = ctx.cfg;
  std::vector<occupancy::OccupancySeries> est =
      c.co2_csv.empty() ? synthetic_estimates(c) : estimates_from_co2_csv(c);

  csv::Table counts, vars;
  counts.times = est[0].times;
  vars.times = est[0].times;
  const long n = static_cast<long>(est[0].times.size());
  counts.values.resize(n, static_cast<long>(est.size()));
  vars.values.resize(n, static_cast<long>(est.size()));
  for (size_t z = 0; z < est.size(); ++z) {
    counts.columns.push_back(c.zones[z].name);
    vars.columns.push_back(c.zones[z].name);
    for (long k = 0; k < n; ++k) {
      counts.values(k, static_cast<long>(z)) = est[z].count[static_cast<size_t>(k)];
      vars.values(k, static_cast<long>(z)) = est[z].variance[static_cast<size_t>(k)];
    }
  }
  csv::write_table(detail::out_path(ctx, "occupancy_estimates.csv").string(), counts);
  csv::write_table(detail::out_path(ctx, "occupancy_variance.csv").string(), vars);
  std::cout << "estimated occupancy for " << est.size() << " zone(s), " << n << " steps\n";
}

inline void cmd_fit(RunContext& ctx) {
  const auto& c = ctx.cfg;
  std::vector<occupancy::OccupancySeries> est = acquire_estimates(c);
  kernels::KernelSpec tmpl = config::make_kernel_template(c);

  nlohmann::json zones = nlohmann::json::array();
  for (size_t z = 0; z < est.size(); ++z) {
    occupancy::WeekdayBank bank =
        occupancy::build_bank(est[z], tmpl, c.bank_noise_var, true, c.bank_fit_iterations);
    nlohmann::json weekdays = nlohmann::json::array();
    for (int wd = 0; wd < 5; ++wd) {
      const auto& wm = bank.model(wd);
      nlohmann::json w;
      w["weekday"] = wd;
      w["fitted"] = wm.fitted;
      w["sigma2"] = wm.spec.periodic.sigma2;
      w["ell_periodic"] = wm.spec.periodic.ell;
      w["ell_damping"] = wm.spec.matern.ell;
      w["noise_var"] = wm.noise_var;
      if (wm.fitted) {
        w["nlml"] = wm.fit_info.nlml;
        w["iterations"] = wm.fit_info.iterations;
        w["converged"] = wm.fit_info.converged;
        if (!wm.fit_info.converged)
          ctx.warnings.push_back("fit hit the iteration cap (zone " + c.zones[z].name +
                                 ", weekday " + std::to_string(wd) + ")");
      }
      weekdays.push_back(std::move(w));
    }
    zones.push_back({{"name", c.zones[z].name}, {"weekdays", std::move(weekdays)}});
  }
  nlohmann::json out{{"zones", std::move(zones)}};
  detail::write_text(detail::out_path(ctx, "fitted_params.json"), out.dump(2) + "\n");
  std::cout << "fitted weekday models for " << est.size() << " zone(s)\n";
}

inline void cmd_predict(RunContext& ctx) {
  const auto& c = ctx.cfg;
  std::vector<occupancy::OccupancySeries> est = acquire_estimates(c);
  kernels::KernelSpec tmpl = config::make_kernel_template(c);

  std::ostringstream body;
  body << "zone,predictor,rmse\n";
  std::ostringstream table;
  table << "horizon " << c.ocp.horizon_hours << " h\n";
  for (size_t z = 0; z < est.size(); ++z) {
    occupancy::RmseResult r = occupancy::prediction_rmse(est[z], tmpl, c.bank_noise_var,
                                                         c.ocp.horizon_hours, c.bank_fit);
    body << c.zones[z].name << ",lfm," << csv::detail::format_value(r.model_rmse) << "\n";
    body << c.zones[z].name << ",baseline," << csv::detail::format_value(r.baseline_rmse)
         << "\n";
    char line[160];
    std::snprintf(line, sizeof(line), "%-12s lfm %10.4f   baseline %10.4f\n",
                  c.zones[z].name.c_str(), r.model_rmse, r.baseline_rmse);
    table << line;
  }
  detail::write_text(detail::out_path(ctx, "prediction_rmse.csv"), body.str());
  std::cout << table.str();
}

inline csv::Table trajectory_table(const mpc::ClosedLoopResult& r,
                                   const config::ExperimentConfig& c) {
  const int nz = static_cast<int>(c.zones.size());
  const long steps = static_cast<long>(r.times.size());
  csv::Table t;
  t.times = r.times;
  const char* suffix[10] = {"T_zone",    "T_wall",    "T_rad",      "co2_ppm",
                            "vent_kgps", "water_kgps", "occupants", "occupants_est",
                            "bound_lower", "bound_upper"};
  for (int z = 0; z < nz; ++z)
    for (const char* s : suffix) t.columns.push_back(c.zones[static_cast<size_t>(z)].name + "_" + s);
  t.values.resize(steps, 10 * nz);
  for (long k = 0; k < steps; ++k)
    for (int z = 0; z < nz; ++z) {
      long b = 10 * z;
      t.values(k, b + 0) = r.states(k, 4 * z + 0);
      t.values(k, b + 1) = r.states(k, 4 * z + 1);
      t.values(k, b + 2) = r.states(k, 4 * z + 2);
      t.values(k, b + 3) = r.states(k, 4 * z + 3) / occupancy::kPpmToMassFraction;
      t.values(k, b + 4) = r.controls(k, 2 * z + 0);
      t.values(k, b + 5) = r.controls(k, 2 * z + 1);
      t.values(k, b + 6) = r.occ_true(k, z);
      t.values(k, b + 7) = r.occ_estimated(k, z);
      t.values(k, b + 8) = r.active_lower(k, z);
      t.values(k, b + 9) = r.active_upper(k, z);
    }
  return t;
}

inline std::string metrics_rows(const mpc::BenchmarkRow& row,
                                const config::ExperimentConfig& c, bool with_reduction) {
  std::ostringstream s;
  std::string sc = mpc::to_string(row.scenario);
  for (size_t z = 0; z < c.zones.size(); ++z) {
    s << sc << "," << c.zones[z].name << ",energy_kwh,"
      << csv::detail::format_value(row.energy_kwh(static_cast<long>(z))) << "\n";
    s << sc << "," << c.zones[z].name << ",discomfort_kh,"
      << csv::detail::format_value(row.discomfort_kh(static_cast<long>(z))) << "\n";
  }
  s << sc << ",total,energy_kwh," << csv::detail::format_value(row.total_energy) << "\n";
  s << sc << ",total,discomfort_kh," << csv::detail::format_value(row.total_discomfort) << "\n";
  if (with_reduction)
    s << sc << ",total,reduction_pct," << csv::detail::format_value(row.reduction_pct) << "\n";
  return s.str();
}

inline void cmd_simulate(RunContext& ctx) {
  const auto& c = ctx.cfg;
  mpc::Scenario sc = mpc::parse_scenario(c.scenario);
  mpc::ClosedLoopConfig cl = config::make_closed_loop(c);
  mpc::SharedInputs in = mpc::prepare_inputs(cl, c.seed);
  mpc::ClosedLoopResult r = mpc::run_closed_loop(cl, sc, in);

  csv::write_table(detail::out_path(ctx, "trajectory_" + mpc::to_string(sc) + ".csv").string(),
                   trajectory_table(r, c));

  mpc::BenchmarkRow row;
  row.scenario = sc;
  row.energy_kwh = r.energy_kwh;
  row.discomfort_kh = r.discomfort_kh;
  row.total_energy = r.energy_kwh.sum();
  row.total_discomfort = r.discomfort_kh.sum();
  detail::write_text(detail::out_path(ctx, "metrics.csv"),
                     "scenario,zone,metric,value\n" + metrics_rows(row, c, false));
  char line[160];
  std::snprintf(line, sizeof(line), "%s: energy %.3f kWh, discomfort %.4f Kh\n",
                mpc::to_string(sc).c_str(), row.total_energy, row.total_discomfort);
  std::cout << line;
}

inline void cmd_benchmark(RunContext& ctx) {
  const auto& c = ctx.cfg;
  std::vector<mpc::Scenario> scenarios;
  for (const auto& s : c.scenarios) scenarios.push_back(mpc::parse_scenario(s));
  mpc::ClosedLoopConfig cl = config::make_closed_loop(c);
  std::vector<mpc::BenchmarkRow> rows = mpc::benchmark_scenarios(cl, c.seed, scenarios);

  std::string body = "scenario,zone,metric,value\n";
  for (const auto& row : rows) body += metrics_rows(row, c, true);
  detail::write_text(detail::out_path(ctx, "benchmark.csv"), body);

  std::ostringstream sum;
  char line[160];
  std::snprintf(line, sizeof(line), "%-18s %14s %16s %14s\n", "scenario", "energy [kWh]",
                "discomfort [Kh]", "reduction [%]");
  sum << line;
  for (const auto& row : rows) {
    std::snprintf(line, sizeof(line), "%-18s %14.3f %16.4f %14.2f\n",
                  mpc::to_string(row.scenario).c_str(), row.total_energy,
                  row.total_discomfort, row.reduction_pct);
    sum << line;
  }
  detail::write_text(detail::out_path(ctx, "summary.txt"), sum.str());
  std::cout << sum.str();
}

// ---------------------------------------------------------------------------
// verify: fast oracle and invariant checks over every module.

namespace checks {

struct Outcome {
  std::string name;
  bool ok = false;
  std::string detail;
};

template <class Fn>
inline Outcome run_check(const std::string& name, Fn&& fn) {
  Outcome o;
  o.name = name;
  try {
    std::string d = fn();
    o.ok = d.empty();
    o.detail = d;
  } catch (const std::exception& e) {
    o.ok = false;
    o.detail = e.what();
  }
  return o;
}

inline std::string matern_reconstruction() {
  for (int p : {0, 1, 2}) {
    kernels::LtiSde m = kernels::matern_to_ss(p, 1.3, 2.0);
    for (double tau = 0.0; tau <= 6.0; tau += 0.5) {
      double k_ss = kernels::reconstruct_kernel(m, tau);
      double k_cf = kernels::matern_eval({p, 1.3, 2.0}, tau);
      if (std::abs(k_ss - k_cf) > 1e-8)
        return "p=" + std::to_string(p) + " tau=" + std::to_string(tau) + " error " +
               std::to_string(std::abs(k_ss - k_cf));
    }
  }
  return "";
}

inline std::string quasi_periodic_dimension() {
  kernels::PeriodicParams per;
  per.degree = 10;
  auto sde = kernels::to_ss(kernels::KernelSpec::make_quasi_periodic(per, 0, 96.0));
  if (sde.dim() != 22) return "dim " + std::to_string(sde.dim()) + " != 22";
  return "";
}

inline std::string periodic_truncation() {
  kernels::PeriodicParams per;
  per.sigma2 = 1.0;
  per.ell = 1.0;
  double prev = 1e300;
  for (int J : {2, 6, 10}) {
    per.degree = J;
    kernels::LtiSde m = kernels::periodic_to_ss(per.sigma2, per.ell, per.omega0, J);
    double worst = 0.0;
    for (double tau = 0.0; tau <= 24.0; tau += 0.25) {
      double err = std::abs(kernels::reconstruct_kernel(m, tau) -
                            kernels::periodic_eval(per, tau));
      worst = std::max(worst, err);
    }
    if (worst > prev + 1e-12) return "error not monotone in J";
    prev = worst;
    if (J == 10 && worst > 1e-3) return "J=10 error " + std::to_string(worst);
  }
  return "";
}

inline std::string lyapunov_residual() {
  kernels::PeriodicParams per;
  auto sde = kernels::to_ss(kernels::KernelSpec::make_quasi_periodic(per, 0, 96.0));
  double r = kernels::lyapunov_residual(sde);
  if (r > 1e-8) return "residual " + std::to_string(r);
  return "";
}

inline std::string filter_matches_gp() {
  auto spec = kernels::KernelSpec::make_matern(1, 1.5, 2.0);
  auto rng = substream(7, "verify-gp");
  std::normal_distribution<double> nd(0.0, 1.0);
  ssm::TimeSeries data;
  for (int i = 0; i < 40; ++i) {
    data.times.push_back(0.25 * i);
    data.values.push_back(std::sin(0.3 * i) + 0.1 * nd(rng));
  }
  auto m = ssm::discretize(kernels::to_ss(spec), 0.25, 0.01);
  auto fr = ssm::kf_filter(m, {Vec::Zero(2), kernels::to_ss(spec).Pinf}, data);
  auto sm = ssm::rts_smooth(m, fr);
  auto gp = ssm::gp_regress(spec, data, 0.01, data.times);
  double H0_scale = std::abs(gp.mean.cwiseAbs().maxCoeff()) + 1.0;
  for (size_t k = 0; k < data.times.size(); ++k) {
    double mu = sm.smoothed[k].mean(0);
    double v = sm.smoothed[k].cov(0, 0);
    if (std::abs(mu - gp.mean(static_cast<long>(k))) > 1e-6 * H0_scale)
      return "mean mismatch at step " + std::to_string(k);
    if (std::abs(v - gp.var(static_cast<long>(k))) > 1e-6 * (gp.var(static_cast<long>(k)) + 1.0))
      return "variance mismatch at step " + std::to_string(k);
  }
  return "";
}

inline std::string smoother_tightens() {
  auto spec = kernels::KernelSpec::make_matern(0, 2.0, 3.0);
  auto m = ssm::discretize(kernels::to_ss(spec), 0.25, 0.05);
  auto rng = substream(3, "verify-smooth");
  std::normal_distribution<double> nd(0.0, 1.0);
  ssm::TimeSeries data;
  for (int i = 0; i < 60; ++i) {
    data.times.push_back(0.25 * i);
    data.values.push_back(nd(rng));
  }
  auto fr = ssm::kf_filter(m, {Vec::Zero(1), kernels::to_ss(spec).Pinf}, data);
  auto sm = ssm::rts_smooth(m, fr);
  for (size_t k = 0; k < data.times.size(); ++k)
    if (sm.smoothed[k].cov(0, 0) > fr.filtered[k].cov(0, 0) + 1e-10)
      return "smoothed variance exceeds filtered at step " + std::to_string(k);
  return "";
}

inline std::string stationary_riccati() {
  ssm::DiscreteModel m;
  m.A = Mat::Constant(1, 1, 0.5);
  m.Q = Mat::Constant(1, 1, 0.75);
  m.H = Mat::Constant(1, 1, 1.0);
  m.R = 1.0;
  auto st = ssm::stationary_gain(m);
  double expect = std::sqrt(0.75);  // solves P = 0.25 P/(P+1) + 0.75
  if (std::abs(st.P_pred(0, 0) - expect) > 1e-8)
    return "predicted variance " + std::to_string(st.P_pred(0, 0));
  return "";
}

inline std::string sigma_point_consistency() {
  Vec mean(3);
  mean << 1.0, -2.0, 0.5;
  Mat cov(3, 3);
  cov << 2.0, 0.3, 0.1, 0.3, 1.5, -0.2, 0.1, -0.2, 1.0;
  auto sp = occupancy::detail::make_sigma_points(mean, cov, 0.1, 2.0, 0.0);
  if (std::abs(sp.weights.sum() - 1.0) > 1e-12) return "weights do not sum to one";
  Vec m2;
  Mat c2;
  occupancy::detail::unscented_moments(sp, sp.points, Mat::Zero(3, 3), m2, c2);
  if ((m2 - mean).cwiseAbs().maxCoeff() > 1e-9) return "identity transform moves the mean";
  if ((c2 - cov).cwiseAbs().maxCoeff() > 1e-9) return "identity transform distorts covariance";
  return "";
}

inline building::BuildingModel verify_building() {
  building::BuildingModel b;
  b.zones.resize(1);
  b.zones[0].name = "z";
  return b;
}

inline std::string thermal_equilibrium() {
  building::BuildingModel b = verify_building();
  const auto& z = b.zones[0];
  // zero flows, ambient leak only: equilibrium is everything at T_amb
  double Ta = 10.0;
  Vec x0(4);
  x0 << Ta, Ta, Ta, b.co2_supply;
  building::DisturbanceTrace d;
  int n = 96;
  d.times.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) d.times[static_cast<size_t>(i)] = 0.25 * i;
  d.ambient.assign(static_cast<size_t>(n), Ta);
  d.occupants = Mat::Zero(n, 1);
  Mat u = Mat::Zero(n, 2);
  Mat traj = building::simulate(b, x0, u, d, 0.25, 1);
  double drift = (traj.bottomRows(1).leftCols(3).array() - Ta).abs().maxCoeff();
  (void)z;
  if (drift > 1e-12) return "equilibrium drift " + std::to_string(drift);
  return "";
}

inline std::string rk4_order() {
  building::BuildingModel b = verify_building();
  Vec x0(4);
  x0 << 19.0, 12.0, 19.0, b.co2_supply;
  building::DisturbanceTrace d;
  d.times = {0.0};
  d.ambient = {2.0};
  d.occupants = Mat::Constant(1, 1, 3.0);
  Mat u(1, 2);
  u << 0.2, 0.05;
  auto run = [&](int sub) { return building::simulate(b, x0, u, d, 0.25, sub); };
  Mat f1 = run(1), f2 = run(2), f4 = run(4);
  double e1 = (f1.row(1) - f4.row(1)).cwiseAbs().maxCoeff();
  double e2 = (f2.row(1) - f4.row(1)).cwiseAbs().maxCoeff();
  // Richardson: halving the step should shrink error by about 2^4
  double order = std::log2(e1 / e2) ;
  if (!(order >= 3.5)) return "observed order " + std::to_string(order);
  return "";
}

inline std::string co2_steady_state() {
  building::BuildingModel b = verify_building();
  const auto& z = b.zones[0];
  double m_dot = 0.12, N = 4.0;
  double X = b.co2_supply;
  for (int i = 0; i < 4000; ++i)
    X = occupancy::detail::co2_step(X, b.co2_gen_rate * N, m_dot, b.co2_supply, z.m_z, 900.0);
  double expect = b.co2_supply + b.co2_gen_rate * N / m_dot;
  if (std::abs(X - expect) / expect > 1e-3)
    return "steady state off by " + std::to_string(std::abs(X - expect) / expect);
  return "";
}

inline mpc::OcpProblem verify_ocp(std::mt19937_64& rng, int N) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  mpc::OcpProblem p;
  p.zone = building::ZoneParams{};
  p.x0 = Eigen::Vector3d{18.0 + 4.0 * u01(rng), 10.0 + 5.0 * u01(rng), 18.0 + 10.0 * u01(rng)};
  p.dhat.assign(static_cast<size_t>(N), 0.0);
  p.ambient.assign(static_cast<size_t>(N), 5.0);
  p.bounds.assign(static_cast<size_t>(N), {19.0, 25.0});
  for (int k = 0; k < N; ++k) {
    p.dhat[static_cast<size_t>(k)] = 5.0 * u01(rng);
    p.ambient[static_cast<size_t>(k)] = 10.0 * u01(rng);
  }
  return p;
}

inline std::string ocp_gradient() {
  auto rng = substream(11, "verify-ocp");
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  mpc::OcpConfig cfg;
  cfg.horizon_hours = 2.0;
  mpc::OcpProblem p = verify_ocp(rng, cfg.steps());
  Mat u(cfg.steps(), 2);
  for (int k = 0; k < cfg.steps(); ++k) {
    u(k, 0) = cfg.u_max(0) * u01(rng);
    u(k, 1) = cfg.u_max(1) * u01(rng);
  }
  Mat grad;
  mpc::ocp_evaluate(p, cfg, u, &grad);
  double h = 1e-6;
  for (int k = 0; k < cfg.steps(); ++k)
    for (int j = 0; j < 2; ++j) {
      Mat up = u, dn = u;
      up(k, j) += h;
      dn(k, j) -= h;
      double fd = (mpc::ocp_evaluate(p, cfg, up) - mpc::ocp_evaluate(p, cfg, dn)) / (2 * h);
      double scale = std::max({std::abs(fd), std::abs(grad(k, j)), 1e-6});
      if (std::abs(fd - grad(k, j)) / scale > 1e-4)
        return "gradient mismatch at (" + std::to_string(k) + "," + std::to_string(j) + ")";
    }
  return "";
}

inline std::string ocp_box() {
  auto rng = substream(13, "verify-box");
  mpc::OcpConfig cfg;
  mpc::OcpProblem p = verify_ocp(rng, cfg.steps());
  auto sol = mpc::solve_ocp(p, cfg);
  for (int k = 0; k < cfg.steps(); ++k)
    for (int j = 0; j < 2; ++j)
      if (sol.u(k, j) < cfg.u_min(j) - 1e-12 || sol.u(k, j) > cfg.u_max(j) + 1e-12)
        return "control outside the box";
  for (size_t i = 1; i < sol.cost_history.size(); ++i)
    if (sol.cost_history[i] > sol.cost_history[i - 1] + 1e-12) return "cost increased";
  return "";
}

inline std::string penalty_band() {
  mpc::ModeBounds b{19.0, 25.0};
  for (double T = 19.0; T <= 25.0; T += 0.5)
    if (mpc::penalty(T, b) != 0.0) return "penalty nonzero inside the band";
  if (mpc::penalty(18.0, b) <= 0.0 || mpc::penalty(26.0, b) <= 0.0)
    return "penalty zero outside the band";
  if (std::abs(mpc::penalty(26.0, b) - 0.5) > 1e-12) return "quadratic coefficient wrong";
  return "";
}

inline std::string energy_arithmetic() {
  building::BuildingModel b = verify_building();
  Mat states = Mat::Zero(5, 4);
  states.col(2).setConstant(b.T_supply_water - 1.0);  // radiator 1 K below supply
  states.col(0).setConstant(b.T_supply_air);           // no air-side term
  Mat controls = Mat::Zero(4, 2);
  controls.col(1).setConstant(1.0);
  Vec e = building::energy_consumed(states, controls, b, 0.25);
  double expect = 4.0 * 0.25 * b.zones[0].c_w / 1000.0;  // 4.186 kWh
  if (std::abs(e(0) - expect) > 1e-9) return "expected " + std::to_string(expect);
  return "";
}

}  // namespace checks

inline int cmd_verify(RunContext& ctx) {
  using checks::run_check;
  std::vector<checks::Outcome> res;
  res.push_back(run_check("matern-kernel-reconstruction", checks::matern_reconstruction));
  res.push_back(run_check("quasi-periodic-dimension", checks::quasi_periodic_dimension));
  res.push_back(run_check("periodic-truncation", checks::periodic_truncation));
  res.push_back(run_check("lyapunov-residual", checks::lyapunov_residual));
  res.push_back(run_check("filter-matches-gp-regression", checks::filter_matches_gp));
  res.push_back(run_check("smoother-tightens-variance", checks::smoother_tightens));
  res.push_back(run_check("stationary-riccati-fixed-point", checks::stationary_riccati));
  res.push_back(run_check("sigma-point-consistency", checks::sigma_point_consistency));
  res.push_back(run_check("thermal-equilibrium", checks::thermal_equilibrium));
  res.push_back(run_check("rk4-convergence-order", checks::rk4_order));
  res.push_back(run_check("co2-steady-state", checks::co2_steady_state));
  res.push_back(run_check("ocp-adjoint-gradient", checks::ocp_gradient));
  res.push_back(run_check("ocp-box-constraints", checks::ocp_box));
  res.push_back(run_check("penalty-band", checks::penalty_band));
  res.push_back(run_check("energy-arithmetic", checks::energy_arithmetic));

  int failures = 0;
  for (const auto& o : res) {
    if (o.ok) {
      std::cout << "PASS " << o.name << "\n";
    } else {
      std::cout << "FAIL " << o.name << ": " << o.detail << "\n";
      ++failures;
    }
  }
  std::cout << (failures == 0 ? "all checks passed" : std::to_string(failures) + " check(s) failed")
            << "\n";
  (void)ctx;
  return failures == 0 ? 0 : 4;
}

// ---------------------------------------------------------------------------

inline int run(const CliOptions& opt) {
  RunContext ctx = make_context(opt);
  if (opt.subcommand == "fit") {
    cmd_fit(ctx);
  } else if (opt.subcommand == "estimate") {
    cmd_estimate(ctx);
  } else if (opt.subcommand == "predict") {
    cmd_predict(ctx);
  } else if (opt.subcommand == "simulate") {
    cmd_simulate(ctx);
  } else if (opt.subcommand == "benchmark") {
    cmd_benchmark(ctx);
  } else if (opt.subcommand == "verify") {
    int rc = cmd_verify(ctx);
    finish(ctx, opt.subcommand);
    return rc;
  } else {
    throw UsageError("unknown subcommand '" + opt.subcommand + "'");
  }
  finish(ctx, opt.subcommand);
  return 0;
}

inline int dispatch(const CliOptions& opt) {
  try {
    return run(opt);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
}

}  // namespace lfmpc::harness

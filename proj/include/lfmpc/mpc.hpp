#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "lfmpc/building.hpp"
#include "lfmpc/common.hpp"
#include "lfmpc/lfm.hpp"
#include "lfmpc/occupancy.hpp"
#include "lfmpc/ssm.hpp"

namespace lfmpc::mpc {

// Controller scenarios: what the MPC knows about occupancy (nothing, the
// truth, or the latent force model) and whether unoccupied daytime hours may
// relax to the pre-comfort band.
enum class Scenario { None, Exact, Lfm, ExactPreComfort, LfmPreComfort };

inline bool uses_precomfort(Scenario s) {
  return s == Scenario::ExactPreComfort || s == Scenario::LfmPreComfort;
}
inline bool uses_lfm(Scenario s) {
  return s == Scenario::Lfm || s == Scenario::LfmPreComfort;
}
inline bool knows_occupancy(Scenario s) {
  return s == Scenario::Exact || s == Scenario::ExactPreComfort;
}

inline std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::None: return "None";
    case Scenario::Exact: return "Exact";
    case Scenario::Lfm: return "LFM";
    case Scenario::ExactPreComfort: return "ExactPreComfort";
    case Scenario::LfmPreComfort: return "LfmPreComfort";
  }
  return "?";
}

inline Scenario parse_scenario(const std::string& s) {
  if (s == "None") return Scenario::None;
  if (s == "Exact") return Scenario::Exact;
  if (s == "LFM" || s == "Lfm") return Scenario::Lfm;
  if (s == "ExactPreComfort") return Scenario::ExactPreComfort;
  if (s == "LfmPreComfort") return Scenario::LfmPreComfort;
  throw UsageError("unknown scenario '" + s +
                   "' (expected None, Exact, LFM, ExactPreComfort, LfmPreComfort)");
}

struct ModeBounds {
  double lower = 17.0;
  double upper = 28.0;
};

struct ComfortSchedule {
  ModeBounds comfort{21.0, 24.0};
  ModeBounds pre_comfort{19.0, 25.0};
  ModeBounds economy{17.0, 28.0};
  double occupancy_threshold = 0.5;  // persons
  double day_start = 6.0;            // hours past midnight
  double day_end = 18.0;
};

inline bool is_daytime(double t, const ComfortSchedule& cs) {
  if (is_weekend(t)) return false;
  double ph = day_phase(t);
  return ph >= cs.day_start && ph < cs.day_end;
}

// Bounds applying over the interval starting at t. Nights and weekends run
// economy; pre-comfort scenarios relax daytime intervals whose occupancy
// signal is below threshold.
inline ModeBounds interval_bounds(double t, double occupancy_signal, Scenario sc,
                                  const ComfortSchedule& cs) {
  if (!is_daytime(t, cs)) return cs.economy;
  if (uses_precomfort(sc) && occupancy_signal < cs.occupancy_threshold)
    return cs.pre_comfort;
  return cs.comfort;
}

// Soft comfort penalty: zero inside the band, quadratic outside, C1 at the
// edges.
inline double penalty(double T, const ModeBounds& b) {
  if (T > b.upper) return 0.5 * (T - b.upper) * (T - b.upper);
  if (T < b.lower) return 0.5 * (b.lower - T) * (b.lower - T);
  return 0.0;
}

inline double penalty_grad(double T, const ModeBounds& b) {
  if (T > b.upper) return T - b.upper;
  if (T < b.lower) return T - b.lower;
  return 0.0;
}

// ---------------------------------------------------------------------------
// Per-zone optimal control problem over the horizon. States are the three
// zone temperatures; CO2 does not enter the objective. Neighbor zone
// temperatures are frozen at their current estimates, ambient is the known
// forecast, dhat the (non-negative) occupancy forecast.

struct OcpConfig {
  double horizon_hours = 6.0;
  double dt = kStepHours;
  Eigen::Vector2d control_weight{0.01, 0.01};
  double penalty_weight = 0.01;
  Eigen::Vector2d u_min{0.0, 0.0};
  Eigen::Vector2d u_max{0.5, 0.2};
  int max_iterations = 40;
  double armijo_c = 1e-4;
  int max_backtracks = 30;

  int steps() const { return static_cast<int>(std::lround(horizon_hours / dt)); }
};

struct OcpProblem {
  building::ZoneParams zone;
  double T_supply_air = 16.0;
  double T_supply_water = 50.0;
  Eigen::Vector3d x0{20.0, 15.0, 20.0};
  std::vector<double> dhat;
  std::vector<double> ambient;
  std::vector<double> neighbor_Tz;   // aligned with zone.couplings
  std::vector<ModeBounds> bounds;    // bounds[k] applies to T_z at step end k+1
  std::vector<double> vent_floor;    // optional per-step air-flow minimum
};

struct OcpSolution {
  Mat u;  // N x 2
  double cost = 0.0;
  int iterations = 0;
  double stationarity = 0.0;
  std::vector<double> cost_history;
};

namespace detail {

struct StepDynamics {
  Eigen::Matrix3d A;
  Eigen::Vector3d b;
};

inline StepDynamics step_dynamics(const OcpProblem& p, const Eigen::Vector2d& u,
                                  double dhat, double Ta) {
  const auto& z = p.zone;
  double couple_g = 0.0, couple_q = 0.0;
  for (size_t i = 0; i < z.couplings.size(); ++i) {
    couple_g += 1.0 / z.couplings[i].resistance;
    couple_q += p.neighbor_Tz[i] / z.couplings[i].resistance;
  }
  StepDynamics d;
  d.A.setZero();
  d.A(0, 0) = -(1.0 / z.R_zw + 1.0 / z.R_zr + u(0) * z.c_a + couple_g) / z.C_z;
  d.A(0, 1) = 1.0 / (z.R_zw * z.C_z);
  d.A(0, 2) = 1.0 / (z.R_zr * z.C_z);
  d.A(1, 0) = 1.0 / (z.R_zw * z.C_w);
  d.A(1, 1) = -(1.0 / z.R_zw + 1.0 / z.R_wa) / z.C_w;
  d.A(2, 0) = 1.0 / (z.R_zr * z.C_r);
  d.A(2, 2) = -(1.0 / z.R_zr + u(1) * z.c_w) / z.C_r;
  d.b(0) = (u(0) * z.c_a * p.T_supply_air + z.Q_occ * dhat + couple_q) / z.C_z;
  d.b(1) = Ta / (z.R_wa * z.C_w);
  d.b(2) = u(1) * z.c_w * p.T_supply_water / z.C_r;
  return d;
}

// RK4 over one step of the affine dynamics is exactly the degree-4 Taylor
// polynomial: x+ = Phi x + Psi b with Phi = sum (hA)^i/i!, i<=4, and
// Psi = h sum (hA)^i/(i+1)!, i<=3.
struct StepMaps {
  Eigen::Matrix3d Phi;
  Eigen::Matrix3d Psi;
};

inline StepMaps step_maps(const Eigen::Matrix3d& A, double h) {
  Eigen::Matrix3d M = h * A;
  Eigen::Matrix3d M2 = M * M;
  Eigen::Matrix3d M3 = M2 * M;
  Eigen::Matrix3d M4 = M2 * M2;
  StepMaps m;
  m.Phi = Eigen::Matrix3d::Identity() + M + M2 / 2.0 + M3 / 6.0 + M4 / 24.0;
  m.Psi = h * (Eigen::Matrix3d::Identity() + M / 2.0 + M2 / 6.0 + M3 / 24.0);
  return m;
}

// d(x+)/du_j through the RK4 stages. g_j(x) = dA/du_j x + db/du_j is rank
// one for both controls of this zone model.
inline Eigen::Matrix<double, 3, 2> control_jacobian(const OcpProblem& p,
                                                    const Eigen::Matrix3d& A,
                                                    const Eigen::Vector3d& b,
                                                    const Eigen::Vector3d& x, double h) {
  const auto& z = p.zone;
  Eigen::Vector3d k1 = A * x + b;
  Eigen::Vector3d x2 = x + 0.5 * h * k1;
  Eigen::Vector3d k2 = A * x2 + b;
  Eigen::Vector3d x3 = x + 0.5 * h * k2;
  Eigen::Vector3d k3 = A * x3 + b;
  Eigen::Vector3d x4 = x + h * k3;

  Eigen::Matrix<double, 3, 2> J;
  for (int j = 0; j < 2; ++j) {
    auto g = [&](const Eigen::Vector3d& xs) {
      Eigen::Vector3d v = Eigen::Vector3d::Zero();
      if (j == 0)
        v(0) = z.c_a * (p.T_supply_air - xs(0)) / z.C_z;
      else
        v(2) = z.c_w * (p.T_supply_water - xs(2)) / z.C_r;
      return v;
    };
    Eigen::Vector3d s1 = g(x);
    Eigen::Vector3d s2 = 0.5 * h * (A * s1) + g(x2);
    Eigen::Vector3d s3 = 0.5 * h * (A * s2) + g(x3);
    Eigen::Vector3d s4 = h * (A * s3) + g(x4);
    J.col(j) = h / 6.0 * (s1 + 2.0 * s2 + 2.0 * s3 + s4);
  }
  return J;
}

}  // namespace detail

// Objective and (optionally) its exact gradient for a control sequence.
inline double ocp_evaluate(const OcpProblem& p, const OcpConfig& cfg, const Mat& u,
                           Mat* grad = nullptr) {
  const int N = static_cast<int>(p.bounds.size());
  const double h = 3600.0 * cfg.dt;  // seconds per step
  const double c = cfg.penalty_weight;

  std::vector<Eigen::Vector3d> xs(static_cast<size_t>(N) + 1);
  std::vector<Eigen::Matrix3d> Phis;
  std::vector<Eigen::Matrix<double, 3, 2>> Jus;
  if (grad != nullptr) {
    Phis.resize(static_cast<size_t>(N));
    Jus.resize(static_cast<size_t>(N));
  }

  xs[0] = p.x0;
  double cost = 0.0;
  for (int k = 0; k < N; ++k) {
    Eigen::Vector2d uk = u.row(k).transpose();
    auto dyn = detail::step_dynamics(p, uk, p.dhat[static_cast<size_t>(k)],
                                     p.ambient[static_cast<size_t>(k)]);
    auto maps = detail::step_maps(dyn.A, h);
    if (grad != nullptr) {
      Phis[static_cast<size_t>(k)] = maps.Phi;
      Jus[static_cast<size_t>(k)] = detail::control_jacobian(p, dyn.A, dyn.b, xs[static_cast<size_t>(k)], h);
    }
    xs[static_cast<size_t>(k) + 1] = maps.Phi * xs[static_cast<size_t>(k)] + maps.Psi * dyn.b;
    double Tz_end = xs[static_cast<size_t>(k) + 1](0);
    cost += cfg.dt * (uk.dot(cfg.control_weight.cwiseProduct(uk)) +
                      c * penalty(Tz_end, p.bounds[static_cast<size_t>(k)]));
  }

  if (grad != nullptr) {
    grad->resize(N, 2);
    Eigen::Vector3d lambda = Eigen::Vector3d::Zero();
    lambda(0) = cfg.dt * c * penalty_grad(xs[static_cast<size_t>(N)](0),
                                          p.bounds[static_cast<size_t>(N) - 1]);
    for (int k = N - 1; k >= 0; --k) {
      Eigen::Vector2d uk = u.row(k).transpose();
      Eigen::Vector2d gu = 2.0 * cfg.dt * cfg.control_weight.cwiseProduct(uk) +
                           Jus[static_cast<size_t>(k)].transpose() * lambda;
      grad->row(k) = gu.transpose();
      lambda = Phis[static_cast<size_t>(k)].transpose() * lambda;
      if (k >= 1)
        lambda(0) += cfg.dt * c * penalty_grad(xs[static_cast<size_t>(k)](0),
                                               p.bounds[static_cast<size_t>(k) - 1]);
    }
  }
  return cost;
}

// Projected gradient with Armijo backtracking; the objective is convex
// (affine dynamics, convex stage costs), so this converges to the box-
// constrained optimum. Accepted iterates never increase the cost.
inline OcpSolution solve_ocp(const OcpProblem& p, const OcpConfig& cfg,
                             const Mat* warm_start = nullptr) {
  const int N = static_cast<int>(p.bounds.size());
  if (static_cast<int>(p.dhat.size()) != N || static_cast<int>(p.ambient.size()) != N)
    throw std::invalid_argument("ocp: dhat/ambient/bounds lengths differ");
  if (p.neighbor_Tz.size() != p.zone.couplings.size())
    throw std::invalid_argument("ocp: neighbor temperatures do not match couplings");
  for (double d : p.dhat)
    if (d < 0.0) throw std::invalid_argument("ocp: occupancy forecast must be non-negative");
  if (!p.vent_floor.empty() && static_cast<int>(p.vent_floor.size()) != N)
    throw std::invalid_argument("ocp: vent_floor length differs from horizon");

  auto air_lo = [&](int k) {
    return p.vent_floor.empty() ? cfg.u_min(0)
                                : std::max(cfg.u_min(0), p.vent_floor[static_cast<size_t>(k)]);
  };
  auto clamp = [&](Mat m) {
    for (int k = 0; k < m.rows(); ++k) {
      m(k, 0) = std::clamp(m(k, 0), air_lo(k), cfg.u_max(0));
      m(k, 1) = std::clamp(m(k, 1), cfg.u_min(1), cfg.u_max(1));
    }
    return m;
  };

  OcpSolution sol;
  sol.u = warm_start != nullptr && warm_start->rows() == N ? clamp(*warm_start)
                                                           : Mat::Zero(N, 2);
  Mat grad;
  sol.cost = ocp_evaluate(p, cfg, sol.u, &grad);
  sol.cost_history.push_back(sol.cost);

  double alpha = 1.0;
  for (int it = 0; it < cfg.max_iterations; ++it) {
    sol.stationarity = (sol.u - clamp(sol.u - grad)).cwiseAbs().maxCoeff();
    if (sol.stationarity < 1e-10) break;

    bool accepted = false;
    double step = alpha;
    for (int bt = 0; bt < cfg.max_backtracks; ++bt) {
      Mat ut = clamp(sol.u - step * grad);
      double Jt = ocp_evaluate(p, cfg, ut);
      double decrease = (grad.array() * (ut - sol.u).array()).sum();
      if (Jt <= sol.cost + cfg.armijo_c * decrease) {
        sol.u = ut;
        sol.cost = Jt;
        alpha = std::min(step * 2.0, 1e3);
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    sol.iterations = it + 1;
    sol.cost_history.push_back(sol.cost);
    if (!accepted) break;  // no descent step left: stationary
    sol.cost = ocp_evaluate(p, cfg, sol.u, &grad);
  }
  sol.stationarity = (sol.u - clamp(sol.u - grad)).cwiseAbs().maxCoeff();
  return sol;
}

// ---------------------------------------------------------------------------
// Closed loop: per-zone observers and OCPs around the multi-zone plant.

struct ClosedLoopConfig {
  building::BuildingModel plant;
  building::BuildingModel model;  // controller/observer side
  kernels::KernelSpec bank_template;
  double bank_noise_var = 0.25;
  bool bank_fit = false;
  int bank_fit_iters = 200;
  occupancy::UkfParams co2_ukf;
  lfm::ObserverParams observer;
  OcpConfig ocp;
  ComfortSchedule comfort;
  double t0 = 0.0;  // must be a Monday midnight
  int train_days = 21;
  int eval_days = 14;
  double dt = kStepHours;
  int plant_substeps = 1;
  double train_vent_day = 0.25;
  double train_vent_night = 0.05;
  double meas_noise_sd_T = 0.0;
  double meas_noise_sd_X = 0.0;
  building::AmbientParams ambient;
  std::vector<building::OccupantProfile> occupants;
  double vent_min_day = 0.1;  // fresh-air floor during scheduled day hours
  Eigen::Vector3d x0_thermal{20.0, 15.0, 30.0};  // initial [T_z, T_w, T_r] everywhere
  Eigen::Vector4d prior_var{0.25, 1.0, 0.25, 2.3e-10};

  void validate() const {
    plant.validate();
    model.validate();
    if (weekday(t0) != 0 || day_phase(t0) != 0.0)
      throw ConfigError("closed loop: start time must be a Monday midnight");
    if (static_cast<int>(occupants.size()) != plant.n_zones())
      throw ConfigError("closed loop: occupant profiles must match zone count");
    if (model.n_zones() != plant.n_zones())
      throw ConfigError("closed loop: model zone count differs from plant");
    if (train_days < 7) throw ConfigError("closed loop: need at least one training week");
    if (eval_days < 1) throw ConfigError("closed loop: need at least one eval day");
  }
};

struct SharedInputs {
  building::DisturbanceTrace trace;  // spans train + eval + one margin day
  std::vector<occupancy::OccupancySeries> train_estimates;
  std::vector<occupancy::WeekdayBank> banks;
  Mat noise_T, noise_X;              // eval steps x zones
  Vec train_final_co2;               // per zone, plant X at eval start
};

inline SharedInputs prepare_inputs(const ClosedLoopConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const int nz = cfg.plant.n_zones();
  const int per_day = static_cast<int>(std::lround(24.0 / cfg.dt));
  const int total_days = cfg.train_days + cfg.eval_days + 1;  // horizon margin
  const int total_steps = total_days * per_day;
  const int train_steps = cfg.train_days * per_day;
  const int eval_steps = cfg.eval_days * per_day;

  SharedInputs in;
  in.trace.times.resize(static_cast<size_t>(total_steps));
  for (int k = 0; k < total_steps; ++k)
    in.trace.times[static_cast<size_t>(k)] = cfg.t0 + k * cfg.dt;
  in.trace.occupants = building::generate_occupancy(seed, cfg.t0, total_days, cfg.occupants, cfg.dt);
  in.trace.ambient = building::generate_ambient(seed, cfg.t0, total_steps, cfg.dt, cfg.ambient);

  // Training phase: CO2-only simulation under a fixed ventilation schedule,
  // then occupancy estimation and one bank per zone.
  in.train_final_co2 = Vec::Constant(nz, cfg.plant.co2_supply);
  const double dt_s = 3600.0 * cfg.dt;
  for (int z = 0; z < nz; ++z) {
    auto rng = substream(seed, "train-co2/zone" + std::to_string(z));
    std::normal_distribution<double> gauss(0.0, 1.0);
    occupancy::Co2Series series;
    series.supply_concentration = cfg.plant.co2_supply;
    series.zone_air_mass = cfg.plant.zones[static_cast<size_t>(z)].m_z;
    series.times.resize(static_cast<size_t>(train_steps));
    series.concentration.resize(static_cast<size_t>(train_steps));
    series.air_flow.resize(static_cast<size_t>(train_steps));
    double X = cfg.plant.co2_supply;
    for (int k = 0; k < train_steps; ++k) {
      double t = cfg.t0 + k * cfg.dt;
      double vent = (!is_weekend(t) && day_phase(t) >= 6.0 && day_phase(t) < 18.0)
                        ? cfg.train_vent_day
                        : cfg.train_vent_night;
      series.times[static_cast<size_t>(k)] = t;
      series.air_flow[static_cast<size_t>(k)] = vent;
      series.concentration[static_cast<size_t>(k)] =
          X + cfg.meas_noise_sd_X * gauss(rng);
      double u_g = cfg.plant.co2_gen_rate * in.trace.occupants(k, z);
      X = occupancy::detail::co2_step(X, u_g, vent, cfg.plant.co2_supply,
                                      series.zone_air_mass, dt_s);
    }
    in.train_final_co2(z) = X;
    in.train_estimates.push_back(
        occupancy::ukf_estimate(series, cfg.plant.co2_gen_rate, cfg.co2_ukf));
    in.banks.push_back(occupancy::build_bank(in.train_estimates.back(), cfg.bank_template,
                                             cfg.bank_noise_var, cfg.bank_fit,
                                             cfg.bank_fit_iters));
  }

  in.noise_T = Mat::Zero(eval_steps, nz);
  in.noise_X = Mat::Zero(eval_steps, nz);
  for (int z = 0; z < nz; ++z) {
    auto rt = substream(seed, "meas-noise-T/zone" + std::to_string(z));
    auto rx = substream(seed, "meas-noise-X/zone" + std::to_string(z));
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int k = 0; k < eval_steps; ++k) {
      in.noise_T(k, z) = cfg.meas_noise_sd_T * gauss(rt);
      in.noise_X(k, z) = cfg.meas_noise_sd_X * gauss(rx);
    }
  }
  return in;
}

struct ClosedLoopResult {
  Scenario scenario = Scenario::None;
  std::vector<double> times;     // eval step starts
  Mat states;                    // (steps+1) x 4nz, plant truth
  Mat controls;                  // steps x 2nz
  Mat active_lower, active_upper;  // steps x nz
  Mat dhat_now;                  // steps x nz, first-step occupancy forecast
  Mat occ_true;                  // steps x nz
  Mat occ_estimated;             // steps x nz, observer's current estimate
  Vec energy_kwh;                // per zone
  Vec discomfort_kh;             // per zone
  double mean_ocp_iterations = 0.0;
};

inline ClosedLoopResult run_closed_loop(const ClosedLoopConfig& cfg, Scenario sc,
                                        const SharedInputs& in) {
  cfg.validate();
  const int nz = cfg.plant.n_zones();
  const int per_day = static_cast<int>(std::lround(24.0 / cfg.dt));
  const int train_steps = cfg.train_days * per_day;
  const int steps = cfg.eval_days * per_day;
  const int N = cfg.ocp.steps();
  const double te0 = cfg.t0 + 24.0 * cfg.train_days;

  // Per-zone observer models: mechanistic-only plus, for LFM scenarios, one
  // augmented model per weekday.
  std::vector<lfm::AugmentedModel> mech(static_cast<size_t>(nz));
  std::vector<std::array<lfm::AugmentedModel, 5>> aug(static_cast<size_t>(nz));
  std::vector<occupancy::WeekdayBank> banks = in.banks;  // mutated per run
  for (int z = 0; z < nz; ++z) {
    mech[static_cast<size_t>(z)] =
        lfm::augment(cfg.model.zones[static_cast<size_t>(z)], cfg.model, nullptr, cfg.dt);
    if (uses_lfm(sc))
      for (int wd = 0; wd < 5; ++wd)
        aug[static_cast<size_t>(z)][static_cast<size_t>(wd)] =
            lfm::augment(cfg.model.zones[static_cast<size_t>(z)], cfg.model,
                         &banks[static_cast<size_t>(z)].model(wd).sde, cfg.dt);
  }

  // Plant and observer initial states.
  Vec x = Vec::Zero(4 * nz);
  std::vector<ssm::GaussianState> est(static_cast<size_t>(nz));
  for (int z = 0; z < nz; ++z) {
    x(building::state_index(z, 0)) = cfg.x0_thermal(0);
    x(building::state_index(z, 1)) = cfg.x0_thermal(1);
    x(building::state_index(z, 2)) = cfg.x0_thermal(2);
    x(building::state_index(z, 3)) = in.train_final_co2(z);
    est[static_cast<size_t>(z)].mean = x.segment(4 * z, 4);
    est[static_cast<size_t>(z)].cov = Mat(cfg.prior_var.asDiagonal());
  }

  // Attach the active weekday latent (advanced to `t`) to a mechanistic
  // marginal, cross-covariance zero.
  auto load_latent = [&](int z, int wd, double t) {
    occupancy::bank_update(banks[static_cast<size_t>(z)], t,
                           std::numeric_limits<double>::quiet_NaN());
    const auto& wm = banks[static_cast<size_t>(z)].model(wd);
    const auto& mech_state = est[static_cast<size_t>(z)];
    int nl = wm.sde.dim();
    ssm::GaussianState s;
    s.mean = Vec::Zero(4 + nl);
    s.cov = Mat::Zero(4 + nl, 4 + nl);
    s.mean.head(4) = mech_state.mean.head(4);
    s.cov.topLeftCorner(4, 4) = mech_state.cov.topLeftCorner(4, 4);
    s.mean.tail(nl) = wm.state.mean;
    s.cov.bottomRightCorner(nl, nl) = wm.state.cov;
    est[static_cast<size_t>(z)] = s;
  };

  // Store the latent marginal back into the bank at time t (a day end).
  auto store_latent = [&](int z, int wd, double t) {
    auto& wm = banks[static_cast<size_t>(z)].model(wd);
    int nl = wm.sde.dim();
    const auto& s = est[static_cast<size_t>(z)];
    wm.state.mean = s.mean.tail(nl);
    wm.state.cov = s.cov.bottomRightCorner(nl, nl);
    // t is the midnight after wd's day, so every finished occurrence counts
    wm.clock = 24.0 * static_cast<double>(occurrences_before(wd, day_index(t)));
    est[static_cast<size_t>(z)].mean = s.mean.head(4).eval();
    est[static_cast<size_t>(z)].cov = s.cov.topLeftCorner(4, 4).eval();
  };

  ClosedLoopResult r;
  r.scenario = sc;
  r.times.resize(static_cast<size_t>(steps));
  r.states = Mat::Zero(steps + 1, 4 * nz);
  r.states.row(0) = x.transpose();
  r.controls = Mat::Zero(steps, 2 * nz);
  r.active_lower = Mat::Zero(steps, nz);
  r.active_upper = Mat::Zero(steps, nz);
  r.dhat_now = Mat::Zero(steps, nz);
  r.occ_true = Mat::Zero(steps, nz);
  r.occ_estimated = Mat::Zero(steps, nz);
  r.energy_kwh = Vec::Zero(nz);
  r.discomfort_kh = Vec::Zero(nz);

  std::vector<Mat> warm(static_cast<size_t>(nz), Mat::Zero(N, 2));
  int active_wd = -1;  // weekday whose latent is attached, -1 = none
  long ocp_iters_total = 0;

  for (int k = 0; k < steps; ++k) {
    const double t = te0 + k * cfg.dt;
    const int gk = train_steps + k;
    const int wd = weekday(t);
    r.times[static_cast<size_t>(k)] = t;

    // Rotate weekday latents at day boundaries.
    if (uses_lfm(sc)) {
      int want = wd < 5 ? wd : -1;
      if (want != active_wd) {
        if (active_wd >= 0)
          for (int z = 0; z < nz; ++z) store_latent(z, active_wd, t);
        if (want >= 0)
          for (int z = 0; z < nz; ++z) load_latent(z, want, t);
        active_wd = want;
      }
    }

    // Occupancy forecasts and comfort bounds per zone, then the OCPs.
    Mat u_now(nz, 2);
    for (int z = 0; z < nz; ++z) {
      std::vector<double> dhat(static_cast<size_t>(N), 0.0);
      if (knows_occupancy(sc)) {
        for (int j = 0; j < N; ++j) dhat[static_cast<size_t>(j)] = in.trace.occupants(gk + j, z);
      } else if (uses_lfm(sc)) {
        if (active_wd >= 0) {
          int nl = banks[static_cast<size_t>(z)].model(active_wd).sde.dim();
          ssm::GaussianState latent{est[static_cast<size_t>(z)].mean.tail(nl),
                                    est[static_cast<size_t>(z)].cov.bottomRightCorner(nl, nl)};
          dhat = lfm::disturbance_trajectory(banks[static_cast<size_t>(z)], latent, t,
                                             cfg.ocp.horizon_hours);
        } else {
          ssm::GaussianState none{Vec::Zero(1), Mat::Zero(1, 1)};
          dhat = lfm::disturbance_trajectory(banks[static_cast<size_t>(z)], none, t,
                                             cfg.ocp.horizon_hours);
        }
      }

      OcpProblem prob;
      prob.zone = cfg.model.zones[static_cast<size_t>(z)];
      prob.T_supply_air = cfg.model.T_supply_air;
      prob.T_supply_water = cfg.model.T_supply_water;
      prob.x0 = est[static_cast<size_t>(z)].mean.head(3);
      prob.dhat = dhat;
      prob.ambient.resize(static_cast<size_t>(N));
      for (int j = 0; j < N; ++j)
        prob.ambient[static_cast<size_t>(j)] = in.trace.ambient[static_cast<size_t>(gk + j)];
      for (const auto& cpl : prob.zone.couplings)
        prob.neighbor_Tz.push_back(est[static_cast<size_t>(cpl.neighbor)].mean(0));
      prob.bounds.resize(static_cast<size_t>(N));
      prob.vent_floor.resize(static_cast<size_t>(N));
      for (int j = 0; j < N; ++j) {
        prob.bounds[static_cast<size_t>(j)] =
            interval_bounds(t + j * cfg.dt, dhat[static_cast<size_t>(j)], sc, cfg.comfort);
        prob.vent_floor[static_cast<size_t>(j)] =
            is_daytime(t + j * cfg.dt, cfg.comfort) ? cfg.vent_min_day : 0.0;
      }

      OcpSolution sol = solve_ocp(prob, cfg.ocp, &warm[static_cast<size_t>(z)]);
      ocp_iters_total += sol.iterations;

      u_now(z, 0) = sol.u(0, 0);
      u_now(z, 1) = sol.u(0, 1);
      r.controls(k, 2 * z) = sol.u(0, 0);
      r.controls(k, 2 * z + 1) = sol.u(0, 1);
      r.active_lower(k, z) = prob.bounds[0].lower;
      r.active_upper(k, z) = prob.bounds[0].upper;
      r.dhat_now(k, z) = dhat[0];
      r.occ_true(k, z) = in.trace.occupants(gk, z);
      r.occ_estimated(k, z) =
          uses_lfm(sc) && active_wd >= 0
              ? std::max(0.0, (banks[static_cast<size_t>(z)].model(active_wd).model.H *
                               est[static_cast<size_t>(z)].mean.tail(
                                   banks[static_cast<size_t>(z)].model(active_wd).sde.dim()))(0))
              : dhat[0];

      // next step's warm start: shift by one interval
      Mat& w = warm[static_cast<size_t>(z)];
      w.topRows(N - 1) = sol.u.bottomRows(N - 1).eval();
      w.row(N - 1) = sol.u.row(N - 1);
    }

    // Plant step with the true disturbances.
    {
      building::DisturbanceTrace one;
      one.times = {t};
      one.ambient = {in.trace.ambient[static_cast<size_t>(gk)]};
      one.occupants = in.trace.occupants.row(gk);
      Mat ctrl = Mat::Zero(1, 2 * nz);
      ctrl.row(0) = r.controls.row(k);
      Mat sim = building::simulate(cfg.plant, x, ctrl, one, cfg.dt, cfg.plant_substeps);
      x = sim.row(1).transpose();
    }
    r.states.row(k + 1) = x.transpose();

    // Observer update per zone with the new measurements.
    for (int z = 0; z < nz; ++z) {
      const lfm::AugmentedModel& om =
          (uses_lfm(sc) && active_wd >= 0)
              ? aug[static_cast<size_t>(z)][static_cast<size_t>(active_wd)]
              : mech[static_cast<size_t>(z)];
      double known = knows_occupancy(sc) ? in.trace.occupants(gk, z) : 0.0;
      building::ZoneInput u{r.controls(k, 2 * z), r.controls(k, 2 * z + 1)};
      std::vector<double> nb;
      for (const auto& cpl : cfg.model.zones[static_cast<size_t>(z)].couplings)
        nb.push_back(est[static_cast<size_t>(cpl.neighbor)].mean(0));
      Eigen::Vector2d y{x(building::state_index(z, 0)) + in.noise_T(k, z),
                        x(building::state_index(z, 3)) + in.noise_X(k, z)};
      est[static_cast<size_t>(z)] = lfm::observe(om, est[static_cast<size_t>(z)], u,
                                                 in.trace.ambient[static_cast<size_t>(gk)], nb,
                                                 known, y, cfg.observer);
    }

    // Discomfort at the step end against the interval's active bounds.
    for (int z = 0; z < nz; ++z) {
      double Tz1 = r.states(k + 1, building::state_index(z, 0));
      double viol = std::max(0.0, Tz1 - r.active_upper(k, z)) +
                    std::max(0.0, r.active_lower(k, z) - Tz1);
      r.discomfort_kh(z) += viol * cfg.dt;
    }
  }
  r.energy_kwh = building::energy_consumed(r.states, r.controls, cfg.plant, cfg.dt);

  // Flush the attached latents so the bank state is consistent at the end.
  if (uses_lfm(sc) && active_wd >= 0)
    for (int z = 0; z < nz; ++z) store_latent(z, active_wd, te0 + steps * cfg.dt);

  r.mean_ocp_iterations =
      static_cast<double>(ocp_iters_total) / std::max(1, steps * nz);
  return r;
}

// ---------------------------------------------------------------------------
// Scenario benchmark: shared disturbances and training, one closed loop per
// scenario, energy reductions relative to the None baseline.

struct BenchmarkRow {
  Scenario scenario = Scenario::None;
  Vec energy_kwh;
  Vec discomfort_kh;
  double total_energy = 0.0;
  double total_discomfort = 0.0;
  double reduction_pct = 0.0;  // vs None
};

inline std::vector<BenchmarkRow> benchmark_scenarios(
    const ClosedLoopConfig& cfg, std::uint64_t seed,
    const std::vector<Scenario>& scenarios) {
  SharedInputs in = prepare_inputs(cfg, seed);
  std::vector<BenchmarkRow> rows;
  double none_energy = -1.0;
  for (Scenario sc : scenarios) {
    ClosedLoopResult res = run_closed_loop(cfg, sc, in);
    BenchmarkRow row;
    row.scenario = sc;
    row.energy_kwh = res.energy_kwh;
    row.discomfort_kh = res.discomfort_kh;
    row.total_energy = res.energy_kwh.sum();
    row.total_discomfort = res.discomfort_kh.sum();
    if (sc == Scenario::None) none_energy = row.total_energy;
    rows.push_back(std::move(row));
  }
  if (none_energy > 0.0)
    for (auto& row : rows)
      row.reduction_pct = 100.0 * (none_energy - row.total_energy) / none_energy;
  return rows;
}

}  // namespace lfmpc::mpc

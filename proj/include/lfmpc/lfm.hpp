#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "lfmpc/building.hpp"
#include "lfmpc/common.hpp"
#include "lfmpc/kernels.hpp"
#include "lfmpc/occupancy.hpp"
#include "lfmpc/ssm.hpp"

namespace lfmpc::lfm {

// One zone's mechanistic state [T_z, T_w, T_r, X] augmented with the latent
// occupancy process z. The latent output drives heat (Q_occ * max(0, Hz))
// and CO2 generation (g * max(0, Hz)); its block advances by the exactly
// discretized kernel transition while the mechanistic block is integrated
// with the latent output held over the step. n_latent = 0 gives the plain
// mechanistic model (occupancy supplied as a known input, or zero).
struct AugmentedModel {
  building::ZoneParams zone;
  double T_supply_air = 16.0;
  double T_supply_water = 50.0;
  double co2_supply = 6.1e-4;
  double co2_gen_rate = 6.2e-6;
  double dt = kStepHours;  // hours

  Mat H_latent;  // 1 x n_latent (empty when mechanistic only)
  Mat A_latent;
  Mat Q_latent;

  int n_latent() const { return static_cast<int>(A_latent.rows()); }
  int dim() const { return 4 + n_latent(); }

  double latent_output(const Vec& xa) const {
    if (n_latent() == 0) return 0.0;
    return (H_latent * xa.tail(n_latent()))(0);
  }

  // Deterministic one-step propagation used by the observer's sigma points.
  Vec step(const Vec& xa, const building::ZoneInput& u, double T_amb,
           std::span<const double> neighbor_Tz, double known_occupancy,
           int substeps = 4) const {
    double occ = std::max(0.0, latent_output(xa)) + known_occupancy;
    Vec mech = xa.head(4);
    const double h = 3600.0 * dt / substeps;
    for (int s = 0; s < substeps; ++s) {
      auto rhs = [&](const Vec& m) {
        building::ThermalDeriv d = building::zone_derivative(
            zone, m(0), m(1), m(2), u, T_supply_air, T_supply_water, T_amb, occ, neighbor_Tz);
        Vec dm(4);
        dm << d.dTz, d.dTw, d.dTr,
            building::co2_derivative(zone, m(3), u.m_dot_air, co2_supply, occ, co2_gen_rate);
        return dm;
      };
      Vec k1 = rhs(mech);
      Vec k2 = rhs(mech + 0.5 * h * k1);
      Vec k3 = rhs(mech + 0.5 * h * k2);
      Vec k4 = rhs(mech + h * k3);
      mech += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    Vec out(dim());
    out.head(4) = mech;
    if (n_latent() > 0) out.tail(n_latent()) = A_latent * xa.tail(n_latent());
    return out;
  }
};

inline AugmentedModel augment(const building::ZoneParams& zone, const building::BuildingModel& b,
                              const kernels::LtiSde* latent, double dt = kStepHours) {
  AugmentedModel m;
  m.zone = zone;
  m.T_supply_air = b.T_supply_air;
  m.T_supply_water = b.T_supply_water;
  m.co2_supply = b.co2_supply;
  m.co2_gen_rate = b.co2_gen_rate;
  m.dt = dt;
  if (latent != nullptr) {
    ssm::DiscreteModel d = ssm::discretize(*latent, dt);
    m.H_latent = latent->H;
    m.A_latent = d.A;
    m.Q_latent = d.Q;
  } else {
    m.H_latent = Mat(1, 0);
    m.A_latent = Mat(0, 0);
    m.Q_latent = Mat(0, 0);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Joint UKF step: predict through AugmentedModel::step, then update with the
// available measurements y = [T_z, X]. Process noise is block diagonal:
// configured mechanistic variances plus the latent's exact discrete noise.

struct ObserverParams {
  double alpha = 0.1;
  double beta = 2.0;
  double kappa = 0.0;
  Eigen::Vector4d mech_process_noise{1e-6, 1e-6, 1e-6, 5.8e-13};  // per step
  double temp_meas_var = 1e-4;
  double co2_meas_var = 2.1e-11;
  int substeps = 4;
};

inline ssm::GaussianState observe(const AugmentedModel& m, const ssm::GaussianState& prior,
                                  const building::ZoneInput& u, double T_amb,
                                  std::span<const double> neighbor_Tz, double known_occupancy,
                                  const std::optional<Eigen::Vector2d>& y,
                                  const ObserverParams& op) {
  const int n = m.dim();
  if (prior.mean.size() != n) throw std::invalid_argument("observe: prior dimension mismatch");

  Mat Qa = Mat::Zero(n, n);
  Qa.topLeftCorner(4, 4) = Mat(op.mech_process_noise.asDiagonal());
  if (m.n_latent() > 0) Qa.bottomRightCorner(m.n_latent(), m.n_latent()) = m.Q_latent;

  auto sp = occupancy::detail::make_sigma_points(prior.mean, prior.cov, op.alpha, op.beta,
                                                 op.kappa);
  Mat prop(n, sp.points.cols());
  for (int i = 0; i < sp.points.cols(); ++i)
    prop.col(i) = m.step(sp.points.col(i), u, T_amb, neighbor_Tz, known_occupancy, op.substeps);

  ssm::GaussianState s;
  occupancy::detail::unscented_moments(sp, prop, Qa, s.mean, s.cov);
  if (!y.has_value()) return s;

  auto sp2 = occupancy::detail::make_sigma_points(s.mean, s.cov, op.alpha, op.beta, op.kappa);
  Mat obs(2, sp2.points.cols());
  obs.row(0) = sp2.points.row(0);  // T_z
  obs.row(1) = sp2.points.row(3);  // X
  Mat R = Eigen::Vector2d{op.temp_meas_var, op.co2_meas_var}.asDiagonal();
  Vec ymean;
  Mat S;
  occupancy::detail::unscented_moments(sp2, obs, R, ymean, S);
  Mat C = Mat::Zero(n, 2);
  for (int i = 0; i < sp2.points.cols(); ++i)
    C += sp2.weights(i) * (sp2.points.col(i) - s.mean) * (obs.col(i) - ymean).transpose();
  C += sp2.central_correction * (sp2.points.col(0) - s.mean) * (obs.col(0) - ymean).transpose();

  Mat K = S.ldlt().solve(C.transpose()).transpose();
  s.mean += K * (*y - ymean);
  s.cov -= K * S * K.transpose();
  s.cov = 0.5 * (s.cov + s.cov.transpose()).eval();
  return s;
}

// ---------------------------------------------------------------------------
// Disturbance forecasts for the controller.

// Pure latent rollout: ignores weekday structure, propagates the given
// latent marginal with the model's own transition.
inline std::vector<double> disturbance_trajectory(const AugmentedModel& m,
                                                  const ssm::GaussianState& latent,
                                                  int n_steps) {
  std::vector<double> d(static_cast<size_t>(n_steps), 0.0);
  if (m.n_latent() == 0) return d;
  Vec z = latent.mean;
  for (int k = 0; k < n_steps; ++k) {
    d[static_cast<size_t>(k)] = std::max(0.0, (m.H_latent * z)(0));
    z = m.A_latent * z;
  }
  return d;
}

// Calendar-aware rollout through the weekday bank; shares the prediction
// path the estimation side uses, clamped for the controller.
inline std::vector<double> disturbance_trajectory(const occupancy::WeekdayBank& bank,
                                                  const ssm::GaussianState& latent, double now,
                                                  double horizon_hours) {
  auto traj = occupancy::predict_occupancy(bank, now, horizon_hours, &latent, true);
  return traj.clamped();
}

}  // namespace lfmpc::lfm

#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "lfmpc/building.hpp"
#include "lfmpc/common.hpp"
#include "lfmpc/kernels.hpp"
#include "lfmpc/ssm.hpp"

namespace lfmpc::occupancy {

// 1 ppm of CO2 as a mass fraction at typical indoor air density.
constexpr double kPpmToMassFraction = 1.519e-6;

// CO2 measurements for one zone on a fixed grid. NaN = missing sample.
struct Co2Series {
  std::vector<double> times;       // hours
  std::vector<double> concentration;  // kg/kg
  std::vector<double> air_flow;    // kg/s per step (zero-order hold)
  double supply_concentration = 6.1e-4;
  double zone_air_mass = 250.0;

  void validate() const {
    if (concentration.size() != times.size() || air_flow.size() != times.size())
      throw DataError("co2 series: inconsistent lengths");
    for (size_t i = 1; i < times.size(); ++i)
      if (!(times[i] > times[i - 1]))
        throw DataError("co2 series: timestamps not strictly increasing");
    if (!(zone_air_mass > 0.0)) throw DataError("co2 series: zone air mass must be positive");
    for (double m : air_flow)
      if (m < 0.0) throw DataError("co2 series: negative air flow");
  }
};

struct OccupancySeries {
  std::vector<double> times;
  std::vector<double> count;     // estimated persons, clamped at zero
  std::vector<double> variance;  // posterior variance of the count
};

// ---------------------------------------------------------------------------
// UKF over [X, u_g] where u_g = g * N_occ is the CO2 generation rate treated
// as a random walk. The scaled sigma-point set uses one weight vector
// (summing to 1) for mean and covariance plus the Gaussian-optimal rank-one
// correction (1 - alpha^2 + beta) on the central deviation.

struct UkfParams {
  double alpha = 0.1;
  double beta = 2.0;
  double kappa = 0.0;
  double process_noise_concentration = 5.8e-13;  // per 15-min step, (kg/kg)^2
  double process_noise_gain = -1.0;              // <0: default (g * 1 person)^2
  double measurement_noise = 2.1e-11;            // (kg/kg)^2, ~3 ppm sensor
};

namespace detail {

struct SigmaPoints {
  Mat points;       // n x (2n+1)
  Vec weights;      // sums to 1
  double central_correction = 0.0;
};

inline SigmaPoints make_sigma_points(const Vec& mean, const Mat& cov, double alpha,
                                     double beta, double kappa) {
  const int n = static_cast<int>(mean.size());
  const double lam = alpha * alpha * (n + kappa) - n;
  const double c = n + lam;

  Eigen::LLT<Mat> llt(c * cov);
  Mat S;
  if (llt.info() == Eigen::Success) {
    S = llt.matrixL();
  } else {
    Mat jittered = c * cov + 1e-12 * std::max(1.0, cov.trace()) * Mat::Identity(n, n);
    Eigen::LLT<Mat> llt2(jittered);
    if (llt2.info() != Eigen::Success)
      throw NumericError("sigma points: covariance not positive semi-definite");
    S = llt2.matrixL();
  }

  SigmaPoints sp;
  sp.points.resize(n, 2 * n + 1);
  sp.points.col(0) = mean;
  for (int i = 0; i < n; ++i) {
    sp.points.col(1 + i) = mean + S.col(i);
    sp.points.col(1 + n + i) = mean - S.col(i);
  }
  sp.weights.resize(2 * n + 1);
  sp.weights(0) = lam / c;
  for (int i = 1; i <= 2 * n; ++i) sp.weights(i) = 0.5 / c;
  sp.central_correction = 1.0 - alpha * alpha + beta;
  return sp;
}

// Mean and covariance of transformed points, with additive noise.
inline void unscented_moments(const SigmaPoints& sp, const Mat& transformed, const Mat& noise,
                              Vec& mean, Mat& cov) {
  mean = transformed * sp.weights;
  const int m = static_cast<int>(transformed.rows());
  cov = Mat::Zero(m, m);
  for (int i = 0; i < transformed.cols(); ++i) {
    Vec d = transformed.col(i) - mean;
    cov += sp.weights(i) * d * d.transpose();
  }
  Vec d0 = transformed.col(0) - mean;
  cov += sp.central_correction * d0 * d0.transpose();
  cov += noise;
  cov = 0.5 * (cov + cov.transpose()).eval();
}

// Exact one-step map of the CO2 balance with constant inputs over the step.
inline double co2_step(double X, double u_g, double m_dot, double X_sup, double m_z,
                       double dt_seconds) {
  if (m_dot < 1e-12)
    return X + dt_seconds * (u_g + m_dot * (X_sup - X)) / m_z;
  double decay = -std::expm1(-m_dot * dt_seconds / m_z);  // 1 - exp(-a dt)
  return X + decay * (X_sup + u_g / m_dot - X);
}

}  // namespace detail

inline OccupancySeries ukf_estimate(const Co2Series& data, double g, const UkfParams& up) {
  data.validate();
  if (data.times.size() < 2) throw DataError("ukf: need at least two samples");
  if (!(g > 0.0)) throw std::invalid_argument("ukf: generation rate must be positive");
  const double dt_h = data.times[1] - data.times[0];
  for (size_t i = 1; i < data.times.size(); ++i)
    if (std::abs(data.times[i] - data.times[i - 1] - dt_h) > 1e-9)
      throw DataError("ukf: series must be on a uniform grid");
  const double dt_s = 3600.0 * dt_h;

  const double q_gain = up.process_noise_gain >= 0.0 ? up.process_noise_gain : g * g;
  Mat Q = Vec{{up.process_noise_concentration, q_gain}}.asDiagonal();
  Mat R = Mat::Constant(1, 1, up.measurement_noise);

  Vec m(2);
  m << (std::isfinite(data.concentration[0]) ? data.concentration[0]
                                             : data.supply_concentration),
      0.0;
  Mat P = Vec{{up.measurement_noise, 4.0 * g * g}}.asDiagonal();

  OccupancySeries out;
  out.times = data.times;
  out.count.resize(data.times.size());
  out.variance.resize(data.times.size());

  for (size_t k = 0; k < data.times.size(); ++k) {
    if (k > 0) {
      auto sp = detail::make_sigma_points(m, P, up.alpha, up.beta, up.kappa);
      Mat prop(2, sp.points.cols());
      for (int i = 0; i < sp.points.cols(); ++i) {
        prop(0, i) = detail::co2_step(sp.points(0, i), sp.points(1, i),
                                      data.air_flow[k - 1], data.supply_concentration,
                                      data.zone_air_mass, dt_s);
        prop(1, i) = sp.points(1, i);
      }
      detail::unscented_moments(sp, prop, Q, m, P);
    }
    if (std::isfinite(data.concentration[k])) {
      auto sp = detail::make_sigma_points(m, P, up.alpha, up.beta, up.kappa);
      Mat obs = sp.points.row(0);  // measurement is the concentration state
      Vec ymean;
      Mat S;
      detail::unscented_moments(sp, obs, R, ymean, S);
      Mat C = Mat::Zero(2, 1);
      for (int i = 0; i < sp.points.cols(); ++i)
        C += sp.weights(i) * (sp.points.col(i) - m) * (obs.col(i) - ymean).transpose();
      C += sp.central_correction * (sp.points.col(0) - m) * (obs.col(0) - ymean).transpose();
      Vec K = C / S(0, 0);
      m += K * (data.concentration[k] - ymean(0));
      P -= K * S(0, 0) * K.transpose();
      P = 0.5 * (P + P.transpose()).eval();
    }
    out.count[k] = std::max(0.0, m(1) / g);
    out.variance[k] = P(1, 1) / (g * g);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Weekday bank: one quasi-periodic occupancy GP per weekday. Each weekday
// lives on its own compressed clock where consecutive occurrences of that
// weekday are adjacent 24 h periods, so Monday 23:45 is one step before the
// following Monday 00:00 and the latent state carries across weeks.

inline double compressed_hours(int wd, double t) {
  long d = day_index(t);
  double c = 24.0 * static_cast<double>(occurrences_before(wd, d));
  if (weekday(t) == wd) c += day_phase(t);
  return c;
}

struct WeekdayModel {
  kernels::KernelSpec spec;
  double noise_var = 0.0;
  kernels::LtiSde sde;
  ssm::DiscreteModel model;
  ssm::GaussianState state;  // latent at `clock` on the compressed axis
  double clock = 0.0;
  bool has_data = false;
  ssm::FitResult fit_info;
  bool fitted = false;
};

struct WeekdayBank {
  std::array<WeekdayModel, 5> models;
  double dt = kStepHours;

  const WeekdayModel& model(int wd) const { return models[static_cast<size_t>(wd)]; }
  WeekdayModel& model(int wd) { return models[static_cast<size_t>(wd)]; }
};

inline void validate_bank_template(const kernels::KernelSpec& spec) {
  spec.validate();
  if (spec.family != kernels::KernelFamily::QuasiPeriodic)
    throw std::invalid_argument("weekday bank: template must be quasi-periodic");
  if (spec.matern.p != 0)
    throw std::invalid_argument("weekday bank: damping must be exponential (p = 0)");
  if (std::abs(spec.periodic.omega0 - 2.0 * M_PI / 24.0) > 1e-9)
    throw std::invalid_argument("weekday bank: fundamental period must be 24 h");
}

// Pulls the samples of one weekday out of an absolute-time series and maps
// them onto that weekday's compressed clock.
inline ssm::TimeSeries weekday_series(const OccupancySeries& est, int wd) {
  ssm::TimeSeries s;
  for (size_t i = 0; i < est.times.size(); ++i) {
    if (weekday(est.times[i]) != wd) continue;
    s.times.push_back(compressed_hours(wd, est.times[i]));
    s.values.push_back(est.count[i]);
  }
  return s;
}

inline WeekdayBank build_bank(const OccupancySeries& estimates,
                              const kernels::KernelSpec& tmpl, double noise_var,
                              bool fit = false, int fit_iters = 300) {
  validate_bank_template(tmpl);
  WeekdayBank bank;
  for (int wd = 0; wd < 5; ++wd) {
    WeekdayModel& wm = bank.model(wd);
    wm.spec = tmpl;
    wm.noise_var = noise_var;
    ssm::TimeSeries s = weekday_series(estimates, wd);
    if (fit && s.count_observed() >= 8) {
      wm.fit_info = ssm::fit_hyperparameters(tmpl, s, noise_var, bank.dt, fit_iters);
      wm.spec = wm.fit_info.spec;
      wm.noise_var = wm.fit_info.noise_var;
      wm.fitted = true;
    }
    wm.sde = kernels::to_ss(wm.spec);
    wm.model = ssm::discretize(wm.sde, bank.dt, wm.noise_var);
    wm.state = {Vec::Zero(wm.sde.dim()), wm.sde.Pinf};
    wm.clock = 0.0;
    if (!s.times.empty()) {
      auto fr = ssm::kf_filter(wm.model, wm.state, s);
      wm.state = fr.filtered.back();
      wm.clock = fr.times.back();
      wm.has_data = true;
    }
  }
  return bank;
}

// Filters one estimate into the bank at absolute time t (weekdays only;
// weekend samples are ignored). Advances the stored clock, predict-only over
// any gap.
inline void bank_update(WeekdayBank& bank, double t, double value) {
  int wd = weekday(t);
  if (wd >= 5) return;
  WeekdayModel& wm = bank.model(wd);
  double target = compressed_hours(wd, t);
  long steps = std::lround((target - wm.clock) / bank.dt);
  if (steps < 0) throw std::invalid_argument("bank update: time went backwards");
  for (long i = 0; i < steps; ++i) {
    wm.state.mean = wm.model.A * wm.state.mean;
    wm.state.cov = wm.model.A * wm.state.cov * wm.model.A.transpose() + wm.model.Q;
  }
  wm.clock = target;
  if (std::isfinite(value)) {
    double ll = 0.0;
    ssm::detail::kf_update(wm.model, wm.state, value, ll);
    wm.has_data = true;
  }
}

// ---------------------------------------------------------------------------
// Occupancy prediction over a horizon. Steps are emitted at now + k*dt for
// k = 0..horizon/dt-1 (the value holding over each interval). Weekend steps
// are zero with zero variance. `latent` optionally replaces the stored state
// of the weekday active at `now` (the observer's current posterior).

struct PredictionTrajectory {
  std::vector<double> times;
  std::vector<double> mean;      // raw latent output, may be negative
  std::vector<double> variance;

  std::vector<double> clamped() const {
    std::vector<double> c(mean.size());
    for (size_t i = 0; i < mean.size(); ++i) c[i] = std::max(0.0, mean[i]);
    return c;
  }
};

inline PredictionTrajectory predict_occupancy(const WeekdayBank& bank, double now,
                                              double horizon_hours,
                                              const ssm::GaussianState* latent = nullptr,
                                              bool mean_only = false) {
  if (!(horizon_hours > 0.0)) throw std::invalid_argument("predict: horizon must be positive");
  const int n = static_cast<int>(std::lround(horizon_hours / bank.dt));

  std::array<ssm::GaussianState, 5> states;
  std::array<double, 5> clocks;
  for (int wd = 0; wd < 5; ++wd) {
    states[static_cast<size_t>(wd)] = bank.model(wd).state;
    clocks[static_cast<size_t>(wd)] = bank.model(wd).clock;
  }
  if (latent != nullptr && weekday(now) < 5) {
    int wd = weekday(now);
    states[static_cast<size_t>(wd)] = *latent;
    clocks[static_cast<size_t>(wd)] = compressed_hours(wd, now);
  }

  PredictionTrajectory out;
  out.times.resize(static_cast<size_t>(n));
  out.mean.resize(static_cast<size_t>(n));
  out.variance.resize(static_cast<size_t>(n));

  for (int k = 0; k < n; ++k) {
    double t = now + k * bank.dt;
    out.times[static_cast<size_t>(k)] = t;
    int wd = weekday(t);
    if (wd >= 5) {
      out.mean[static_cast<size_t>(k)] = 0.0;
      out.variance[static_cast<size_t>(k)] = 0.0;
      continue;
    }
    auto& st = states[static_cast<size_t>(wd)];
    auto& ck = clocks[static_cast<size_t>(wd)];
    const auto& wm = bank.model(wd);
    double target = compressed_hours(wd, t);
    long steps = std::lround((target - ck) / bank.dt);
    if (steps < 0) throw NumericError("predict: non-monotone clock");
    for (long i = 0; i < steps; ++i) {
      st.mean = wm.model.A * st.mean;
      if (!mean_only) {
        st.cov = wm.model.A * st.cov * wm.model.A.transpose() + wm.model.Q;
        st.cov = 0.5 * (st.cov + st.cov.transpose()).eval();
      }
    }
    ck = target;
    out.mean[static_cast<size_t>(k)] = (wm.model.H * st.mean)(0);
    out.variance[static_cast<size_t>(k)] =
        mean_only ? 0.0 : (wm.model.H * st.cov * wm.model.H.transpose())(0, 0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rolling horizon RMSE: at every step the predictor is asked for the next
// `horizon` of means, scored against the realized estimates, then the new
// estimate is filtered in. The predictor interface is generic so tests can
// inject oracles; the two production predictors are the bank and a
// zero-order hold of the last estimate.

struct RmseResult {
  double model_rmse = 0.0;
  double baseline_rmse = 0.0;
  long count = 0;
};

// pred(k, n_ahead) returns means for steps k+1 .. k+n_ahead.
template <class PredictFn, class UpdateFn>
inline std::pair<double, long> horizon_rmse(const OccupancySeries& realized,
                                            double horizon_hours, double dt,
                                            PredictFn&& pred, UpdateFn&& update) {
  const int n_ahead = static_cast<int>(std::lround(horizon_hours / dt));
  const long n = static_cast<long>(realized.times.size());
  double sq = 0.0;
  long count = 0;
  for (long k = 0; k < n; ++k) {
    update(static_cast<size_t>(k));
    long avail = std::min<long>(n_ahead, n - 1 - k);
    if (avail <= 0) continue;
    std::vector<double> p = pred(static_cast<size_t>(k), static_cast<int>(avail));
    for (long j = 0; j < avail; ++j) {
      double truth = realized.count[static_cast<size_t>(k + 1 + j)];
      if (!std::isfinite(truth)) continue;
      double err = p[static_cast<size_t>(j)] - truth;
      sq += err * err;
      ++count;
    }
  }
  return {count > 0 ? std::sqrt(sq / static_cast<double>(count)) : 0.0, count};
}

inline RmseResult prediction_rmse(const OccupancySeries& estimates,
                                  const kernels::KernelSpec& tmpl, double noise_var,
                                  double horizon_hours, bool fit = false) {
  if (estimates.times.size() < 2) throw DataError("prediction rmse: series too short");
  const double dt = estimates.times[1] - estimates.times[0];

  // Hyperparameters from the full series; latent states are rebuilt online.
  WeekdayBank bank = build_bank(estimates, tmpl, noise_var, fit);
  for (int wd = 0; wd < 5; ++wd) {
    WeekdayModel& wm = bank.model(wd);
    wm.state = {Vec::Zero(wm.sde.dim()), wm.sde.Pinf};
    wm.clock = 0.0;
    wm.has_data = false;
  }

  auto bank_pred = [&](size_t k, int n_ahead) {
    auto traj = predict_occupancy(bank, estimates.times[k] + dt, n_ahead * dt, nullptr, true);
    return traj.clamped();
  };
  auto bank_upd = [&](size_t k) { bank_update(bank, estimates.times[k], estimates.count[k]); };

  double held = 0.0;
  auto zoh_pred = [&](size_t, int n_ahead) {
    return std::vector<double>(static_cast<size_t>(n_ahead), held);
  };
  auto zoh_upd = [&](size_t k) {
    if (std::isfinite(estimates.count[k])) held = estimates.count[k];
  };

  RmseResult r;
  auto [m_rmse, m_count] = horizon_rmse(estimates, horizon_hours, dt, bank_pred, bank_upd);
  auto [b_rmse, b_count] = horizon_rmse(estimates, horizon_hours, dt, zoh_pred, zoh_upd);
  r.model_rmse = m_rmse;
  r.baseline_rmse = b_rmse;
  r.count = m_count;
  (void)b_count;
  return r;
}

}  // namespace lfmpc::occupancy

#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "lfmpc/common.hpp"
#include "lfmpc/kernels.hpp"

namespace lfmpc::ssm {

struct DiscreteModel {
  Mat A;
  Mat Q;
  Mat H;       // 1 x n observation row
  double R = 0.0;
  double dt = 0.0;

  int dim() const { return static_cast<int>(A.rows()); }
};

struct GaussianState {
  Vec mean;
  Mat cov;
};

// Scalar series on a fixed grid; NaN marks a missing value, and times may
// also simply skip grid points.
struct TimeSeries {
  std::vector<double> times;
  std::vector<double> values;

  void validate() const {
    if (times.size() != values.size())
      throw DataError("time series: times/values length mismatch");
    for (size_t i = 1; i < times.size(); ++i)
      if (!(times[i] > times[i - 1]))
        throw DataError("time series: timestamps not strictly increasing at index " +
                        std::to_string(i));
  }

  size_t count_observed() const {
    size_t n = 0;
    for (double v : values)
      if (std::isfinite(v)) ++n;
    return n;
  }
};

// ---------------------------------------------------------------------------
// Exact discretization of the LTI SDE over a step dt. A = expm(F dt); for
// strictly stable F the process noise follows from stationarity,
// Q = Pinf - A Pinf A'. Otherwise (undamped resonators) the Van Loan block
// exponential is used: E = expm([[-F, LqL'], [0, F']] dt), A = E22', Q = A E12.

inline DiscreteModel discretize(const kernels::LtiSde& m, double dt, double obs_noise = 0.0) {
  if (!(dt > 0.0)) throw std::invalid_argument("discretize: dt must be > 0");
  const int n = m.dim();
  DiscreteModel d;
  d.A = (m.F * dt).exp();
  d.H = m.H;
  d.R = obs_noise;
  d.dt = dt;

  double max_re = -std::numeric_limits<double>::infinity();
  for (const auto& ev : m.F.eigenvalues()) max_re = std::max(max_re, ev.real());

  if (max_re < -1e-9) {
    d.Q = m.Pinf - d.A * m.Pinf * d.A.transpose();
  } else {
    Mat W = m.L * m.q * m.L.transpose();
    Mat M = Mat::Zero(2 * n, 2 * n);
    M.topLeftCorner(n, n) = -m.F * dt;
    M.topRightCorner(n, n) = W * dt;
    M.bottomRightCorner(n, n) = m.F.transpose() * dt;
    Mat E = M.exp();
    d.Q = d.A * E.topRightCorner(n, n);
  }
  d.Q = 0.5 * (d.Q + d.Q.transpose()).eval();
  return d;
}

// ---------------------------------------------------------------------------
// Kalman filter on the full grid spanned by the data. Missing values (grid
// gaps or NaN) get predict-only steps. Joseph-form update keeps covariances
// symmetric PSD.

struct FilterResult {
  std::vector<double> times;
  std::vector<GaussianState> predicted;  // before the update at each step
  std::vector<GaussianState> filtered;   // after the update (or = predicted)
  std::vector<double> step_loglik;       // NaN where no observation
  double loglik = 0.0;
};

namespace detail {

inline void kf_update(const DiscreteModel& m, GaussianState& s, double y, double& ll) {
  Vec PHt = s.cov * m.H.transpose();
  double S = (m.H * PHt)(0) + m.R;
  if (!(S > 0.0) || !std::isfinite(S))
    throw NumericError("kalman update: innovation variance not positive");
  double v = y - (m.H * s.mean)(0);
  Vec K = PHt / S;
  s.mean += K * v;
  Mat IKH = Mat::Identity(m.dim(), m.dim()) - K * m.H;
  s.cov = IKH * s.cov * IKH.transpose() + K * m.R * K.transpose();
  s.cov = 0.5 * (s.cov + s.cov.transpose()).eval();
  ll = -0.5 * (std::log(2.0 * M_PI * S) + v * v / S);
}

inline long grid_slot(double t, double t0, double dt) {
  double raw = (t - t0) / dt;
  long k = std::lround(raw);
  if (std::abs(raw - static_cast<double>(k)) > 1e-6)
    throw DataError("timestamp " + std::to_string(t) + " is off the dt=" +
                    std::to_string(dt) + " grid");
  return k;
}

}  // namespace detail

inline FilterResult kf_filter(const DiscreteModel& m, const GaussianState& prior,
                              const TimeSeries& data) {
  data.validate();
  if (data.times.empty()) throw DataError("kalman filter: empty series");
  const double t0 = data.times.front();
  const long steps = detail::grid_slot(data.times.back(), t0, m.dt);

  // observation lookup per grid slot
  std::vector<double> obs(static_cast<size_t>(steps) + 1,
                          std::numeric_limits<double>::quiet_NaN());
  for (size_t i = 0; i < data.times.size(); ++i)
    obs[static_cast<size_t>(detail::grid_slot(data.times[i], t0, m.dt))] = data.values[i];

  FilterResult r;
  r.times.resize(obs.size());
  r.predicted.resize(obs.size());
  r.filtered.resize(obs.size());
  r.step_loglik.assign(obs.size(), std::numeric_limits<double>::quiet_NaN());

  GaussianState s = prior;
  for (size_t k = 0; k < obs.size(); ++k) {
    if (k > 0) {
      s.mean = m.A * s.mean;
      s.cov = m.A * s.cov * m.A.transpose() + m.Q;
      s.cov = 0.5 * (s.cov + s.cov.transpose()).eval();
    }
    r.times[k] = t0 + static_cast<double>(k) * m.dt;
    r.predicted[k] = s;
    if (std::isfinite(obs[k])) {
      double ll = 0.0;
      detail::kf_update(m, s, obs[k], ll);
      r.step_loglik[k] = ll;
      r.loglik += ll;
    }
    r.filtered[k] = s;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Rauch-Tung-Striebel smoother. Near-singular predicted covariances get a
// 1e-10 jitter retry, reported through the regularized flag.

struct SmootherResult {
  std::vector<GaussianState> smoothed;
  bool regularized = false;
};

inline SmootherResult rts_smooth(const DiscreteModel& m, const FilterResult& fr) {
  const size_t n = fr.filtered.size();
  SmootherResult r;
  r.smoothed.resize(n);
  if (n == 0) return r;
  r.smoothed[n - 1] = fr.filtered[n - 1];

  for (size_t k = n - 1; k-- > 0;) {
    const Mat& Pf = fr.filtered[k].cov;
    const Mat& Pp = fr.predicted[k + 1].cov;
    Mat PfAt = Pf * m.A.transpose();
    Mat G = Pp.ldlt().solve(PfAt.transpose()).transpose();
    double scale = std::max(1.0, Pp.cwiseAbs().maxCoeff());
    if (!G.allFinite() || (G * Pp - PfAt).cwiseAbs().maxCoeff() > 1e-6 * scale) {
      Mat Pj = Pp + 1e-10 * scale * Mat::Identity(m.dim(), m.dim());
      G = Pj.ldlt().solve(PfAt.transpose()).transpose();
      r.regularized = true;
    }
    r.smoothed[k].mean = fr.filtered[k].mean + G * (r.smoothed[k + 1].mean - fr.predicted[k + 1].mean);
    r.smoothed[k].cov = Pf + G * (r.smoothed[k + 1].cov - Pp) * G.transpose();
    r.smoothed[k].cov = 0.5 * (r.smoothed[k].cov + r.smoothed[k].cov.transpose()).eval();
  }
  return r;
}

// ---------------------------------------------------------------------------
// Steady-state filter for a fully observed grid: iterate the Riccati map on
// the predicted covariance to a fixed point.

struct StationaryFilter {
  Mat P_pred;
  Mat P_filt;
  Vec gain;
  double innovation_var = 0.0;
  int iterations = 0;
};

inline StationaryFilter stationary_gain(const DiscreteModel& m, int max_iters = 10000,
                                        double tol = 1e-10) {
  const int n = m.dim();
  Mat P = m.Q;
  double diff = std::numeric_limits<double>::infinity();
  int it = 0;
  for (; it < max_iters; ++it) {
    Vec PHt = P * m.H.transpose();
    double S = (m.H * PHt)(0) + m.R;
    if (!(S > 0.0)) throw NumericError("stationary filter: innovation variance not positive");
    Mat Pf = P - PHt * PHt.transpose() / S;
    Mat Pn = m.A * Pf * m.A.transpose() + m.Q;
    Pn = 0.5 * (Pn + Pn.transpose()).eval();
    diff = (Pn - P).norm();
    P = Pn;
    if (diff < tol) break;
  }
  if (diff >= tol)
    throw NumericError("stationary filter did not converge (residual " +
                       std::to_string(diff) + " after " + std::to_string(max_iters) +
                       " iterations)");
  StationaryFilter r;
  r.P_pred = P;
  Vec PHt = P * m.H.transpose();
  r.innovation_var = (m.H * PHt)(0) + m.R;
  r.gain = PHt / r.innovation_var;
  r.P_filt = P - PHt * PHt.transpose() / r.innovation_var;
  r.iterations = it + 1;
  return r;
}

// ---------------------------------------------------------------------------
// Dense GP regression (zero mean). Quadratic-memory reference path; the
// filter/smoother must reproduce it on the same data.

struct GpPosterior {
  Vec mean;
  Vec var;
};

inline GpPosterior gp_regress(const kernels::KernelSpec& spec, const TimeSeries& train,
                              double noise_var, const std::vector<double>& test_times) {
  train.validate();
  std::vector<double> xs, ys;
  for (size_t i = 0; i < train.times.size(); ++i) {
    if (std::isfinite(train.values[i])) {
      xs.push_back(train.times[i]);
      ys.push_back(train.values[i]);
    }
  }
  const int n = static_cast<int>(xs.size());
  const int nt = static_cast<int>(test_times.size());
  const double var0 = kernels::kernel_eval(spec, 0.0);

  GpPosterior post;
  post.mean = Vec::Zero(nt);
  post.var = Vec::Constant(nt, var0);
  if (n == 0) return post;

  Mat K(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) K(i, j) = K(j, i) = kernels::kernel_eval(spec, xs[i] - xs[j]);
  K.diagonal().array() += noise_var;

  Eigen::LLT<Mat> llt(K);
  if (llt.info() != Eigen::Success) {
    K.diagonal().array() += 1e-8 * var0;
    llt.compute(K);
    if (llt.info() != Eigen::Success)
      throw NumericError("gp regression: covariance not positive definite");
  }
  Vec y = Eigen::Map<const Vec>(ys.data(), n);
  Vec alpha = llt.solve(y);

  for (int t = 0; t < nt; ++t) {
    Vec ks(n);
    for (int i = 0; i < n; ++i) ks(i) = kernels::kernel_eval(spec, test_times[t] - xs[i]);
    post.mean(t) = ks.dot(alpha);
    Vec v = llt.matrixL().solve(ks);
    post.var(t) = var0 - v.squaredNorm();
  }
  return post;
}

// ---------------------------------------------------------------------------
// Negative log marginal likelihood through the filter's prediction-error
// decomposition. Prior is the stationary distribution.

inline double nlml(const kernels::KernelSpec& spec, const TimeSeries& data,
                   double noise_var, double dt) {
  kernels::LtiSde sde = kernels::to_ss(spec);
  DiscreteModel m = discretize(sde, dt, noise_var);
  GaussianState prior{Vec::Zero(sde.dim()), sde.Pinf};
  return -kf_filter(m, prior, data).loglik;
}

// ---------------------------------------------------------------------------
// Hyperparameter fit: Nelder-Mead over log-parameters. Frequency, harmonic
// count and Matern order stay fixed; variances, lengthscales and the
// observation noise are free.

struct FitResult {
  kernels::KernelSpec spec;
  double noise_var = 0.0;
  double nlml = 0.0;
  int iterations = 0;
  bool converged = false;
};

namespace detail {

inline Vec pack_params(const kernels::KernelSpec& s, double noise_var) {
  switch (s.family) {
    case kernels::KernelFamily::Matern:
      return Vec{{std::log(s.matern.sigma2), std::log(s.matern.ell), std::log(noise_var)}};
    case kernels::KernelFamily::Periodic:
      return Vec{{std::log(s.periodic.sigma2), std::log(s.periodic.ell), std::log(noise_var)}};
    case kernels::KernelFamily::QuasiPeriodic:
      return Vec{{std::log(s.periodic.sigma2), std::log(s.periodic.ell),
                  std::log(s.matern.ell), std::log(noise_var)}};
  }
  throw std::invalid_argument("unknown kernel family");
}

inline void unpack_params(const Vec& th, kernels::KernelSpec& s, double& noise_var) {
  switch (s.family) {
    case kernels::KernelFamily::Matern:
      s.matern.sigma2 = std::exp(th(0));
      s.matern.ell = std::exp(th(1));
      noise_var = std::exp(th(2));
      break;
    case kernels::KernelFamily::Periodic:
      s.periodic.sigma2 = std::exp(th(0));
      s.periodic.ell = std::exp(th(1));
      noise_var = std::exp(th(2));
      break;
    case kernels::KernelFamily::QuasiPeriodic:
      s.periodic.sigma2 = std::exp(th(0));
      s.periodic.ell = std::exp(th(1));
      s.matern.ell = std::exp(th(2));
      noise_var = std::exp(th(3));
      break;
  }
}

}  // namespace detail

inline FitResult fit_hyperparameters(const kernels::KernelSpec& init, const TimeSeries& data,
                                     double init_noise_var, double dt, int max_iters = 500) {
  data.validate();
  if (data.count_observed() == 0) throw DataError("fit: no observed values");

  auto objective = [&](const Vec& th) -> double {
    if (th.cwiseAbs().maxCoeff() > 25.0) return std::numeric_limits<double>::infinity();
    kernels::KernelSpec s = init;
    double nv = 0.0;
    detail::unpack_params(th, s, nv);
    try {
      return nlml(s, data, nv, dt);
    } catch (const std::exception&) {
      return std::numeric_limits<double>::infinity();
    }
  };

  // Nelder-Mead with standard coefficients.
  const Vec x0 = detail::pack_params(init, init_noise_var);
  const int n = static_cast<int>(x0.size());
  std::vector<Vec> xs(n + 1, x0);
  std::vector<double> fs(n + 1);
  for (int i = 1; i <= n; ++i) xs[i](i - 1) += 0.4;
  for (int i = 0; i <= n; ++i) fs[i] = objective(xs[i]);

  auto order = [&] {
    std::vector<int> idx(n + 1);
    for (int i = 0; i <= n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](int a, int b) { return fs[a] < fs[b]; });
    std::vector<Vec> xs2(n + 1);
    std::vector<double> fs2(n + 1);
    for (int i = 0; i <= n; ++i) {
      xs2[i] = xs[idx[i]];
      fs2[i] = fs[idx[i]];
    }
    xs = std::move(xs2);
    fs = std::move(fs2);
  };

  int it = 0;
  bool converged = false;
  for (; it < max_iters; ++it) {
    order();
    double spread = std::abs(fs[n] - fs[0]);
    double diam = 0.0;
    for (int i = 1; i <= n; ++i) diam = std::max(diam, (xs[i] - xs[0]).cwiseAbs().maxCoeff());
    if (spread < 1e-7 * (1.0 + std::abs(fs[0])) && diam < 1e-5) {
      converged = true;
      break;
    }
    Vec centroid = Vec::Zero(n);
    for (int i = 0; i < n; ++i) centroid += xs[i];
    centroid /= n;

    Vec xr = centroid + (centroid - xs[n]);
    double fr = objective(xr);
    if (fr < fs[0]) {
      Vec xe = centroid + 2.0 * (centroid - xs[n]);
      double fe = objective(xe);
      if (fe < fr) {
        xs[n] = xe;
        fs[n] = fe;
      } else {
        xs[n] = xr;
        fs[n] = fr;
      }
    } else if (fr < fs[n - 1]) {
      xs[n] = xr;
      fs[n] = fr;
    } else {
      Vec xc = centroid + 0.5 * ((fr < fs[n] ? xr : xs[n]) - centroid);
      double fc = objective(xc);
      if (fc < std::min(fr, fs[n])) {
        xs[n] = xc;
        fs[n] = fc;
      } else {
        for (int i = 1; i <= n; ++i) {
          xs[i] = xs[0] + 0.5 * (xs[i] - xs[0]);
          fs[i] = objective(xs[i]);
        }
      }
    }
  }
  order();
  if (!converged)
    log_info("hyperparameter fit hit the iteration cap (" + std::to_string(max_iters) + ")");

  FitResult r;
  r.spec = init;
  detail::unpack_params(xs[0], r.spec, r.noise_var);
  r.nlml = fs[0];
  r.iterations = it;
  r.converged = converged;
  return r;
}

// ---------------------------------------------------------------------------
// Draws one output trajectory y_k = H x_k + sqrt(R) e_k from the model,
// starting at the prior. Uses an eigendecomposition square root so singular
// process noise (resonator blocks) is fine.

inline std::vector<double> sample_output(const DiscreteModel& m, const GaussianState& prior,
                                         int n_steps, std::mt19937_64& rng) {
  const int n = m.dim();
  auto sqrt_psd = [&](const Mat& P) {
    Eigen::SelfAdjointEigenSolver<Mat> es(P);
    Vec ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return Mat(es.eigenvectors() * ev.asDiagonal());
  };
  Mat Lp = sqrt_psd(prior.cov), Lq = sqrt_psd(m.Q);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto draw = [&](int k) {
    Vec e(k);
    for (int i = 0; i < k; ++i) e(i) = gauss(rng);
    return e;
  };
  Vec x = prior.mean + Lp * draw(n);
  std::vector<double> out(static_cast<size_t>(n_steps));
  for (int k = 0; k < n_steps; ++k) {
    if (k > 0) x = m.A * x + Lq * draw(n);
    out[static_cast<size_t>(k)] = (m.H * x)(0) + std::sqrt(std::max(0.0, m.R)) * gauss(rng);
  }
  return out;
}

}  // namespace lfmpc::ssm

#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/KroneckerProduct>
#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <stdexcept>

#include "lfmpc/common.hpp"

namespace lfmpc::kernels {

enum class KernelFamily { Matern, Periodic, QuasiPeriodic };

// Matern smoothness is nu = p + 1/2, so p is the number of mean-square
// derivatives of the process.
struct MaternParams {
  int p = 0;
  double sigma2 = 1.0;
  double ell = 1.0;
};

struct PeriodicParams {
  double sigma2 = 1.0;
  double ell = 1.0;      // lengthscale on the warped circle
  double omega0 = 2.0 * M_PI / 24.0;
  int degree = 10;       // highest resonator harmonic J
};

struct KernelSpec {
  KernelFamily family = KernelFamily::Matern;
  MaternParams matern{};
  PeriodicParams periodic{};

  static KernelSpec make_matern(int p, double sigma2, double ell) {
    KernelSpec s;
    s.family = KernelFamily::Matern;
    s.matern = {p, sigma2, ell};
    s.validate();
    return s;
  }

  static KernelSpec make_periodic(double sigma2, double ell, double omega0, int degree) {
    KernelSpec s;
    s.family = KernelFamily::Periodic;
    s.periodic = {sigma2, ell, omega0, degree};
    s.validate();
    return s;
  }

  // Product of a periodic kernel and a Matern damping kernel. The damping
  // variance is fixed to 1 so the product variance is carried by the
  // periodic part alone.
  static KernelSpec make_quasi_periodic(const PeriodicParams& per, int damping_p,
                                        double damping_ell) {
    KernelSpec s;
    s.family = KernelFamily::QuasiPeriodic;
    s.periodic = per;
    s.matern = {damping_p, 1.0, damping_ell};
    s.validate();
    return s;
  }

  void validate() const {
    auto check_matern = [&] {
      if (matern.p < 0 || matern.p > 10)
        throw std::invalid_argument("matern p must be in [0, 10]");
      if (!(matern.sigma2 > 0.0)) throw std::invalid_argument("matern sigma2 must be > 0");
      if (!(matern.ell > 0.0)) throw std::invalid_argument("matern ell must be > 0");
    };
    auto check_periodic = [&] {
      if (!(periodic.sigma2 > 0.0)) throw std::invalid_argument("periodic sigma2 must be > 0");
      if (!(periodic.ell > 0.0)) throw std::invalid_argument("periodic ell must be > 0");
      if (!(periodic.omega0 > 0.0)) throw std::invalid_argument("omega0 must be > 0");
      if (periodic.degree < 1) throw std::invalid_argument("periodic degree must be >= 1");
    };
    switch (family) {
      case KernelFamily::Matern: check_matern(); break;
      case KernelFamily::Periodic: check_periodic(); break;
      case KernelFamily::QuasiPeriodic:
        check_periodic();
        check_matern();
        if (matern.sigma2 != 1.0)
          throw std::invalid_argument("quasi-periodic damping variance must be 1");
        break;
    }
  }
};

// A stationary GP written as dx = F x dt + L dW with E[dW dW'] = q dt,
// output f = H x, and stationary covariance Pinf.
struct LtiSde {
  Mat F;
  Mat L;
  Mat H;     // 1 x n output row
  Mat q;     // diffusion spectral density, nw x nw
  Mat Pinf;

  int dim() const { return static_cast<int>(F.rows()); }
};

// ---------------------------------------------------------------------------
// Closed-form kernel evaluation (the ground truth the SDE forms must match).

inline double matern_eval(const MaternParams& mp, double tau) {
  const double lambda = std::sqrt(2.0 * (mp.p + 0.5)) / mp.ell;
  const double s = lambda * std::abs(tau);
  // k(tau) = sigma2 * exp(-s) * p!/(2p)! * sum_i (p+i)!/(i!(p-i)!) (2s)^(p-i)
  double fact_p = 1.0, fact_2p = 1.0;
  for (int i = 2; i <= mp.p; ++i) fact_p *= i;
  for (int i = 2; i <= 2 * mp.p; ++i) fact_2p *= i;
  double sum = 0.0;
  for (int i = 0; i <= mp.p; ++i) {
    double coeff = 1.0;  // (p+i)! / (i! (p-i)!)
    for (int k = mp.p - i + 1; k <= mp.p + i; ++k) coeff *= k;  // (p+i)!/(p-i)!
    for (int k = 2; k <= i; ++k) coeff /= k;
    sum += coeff * std::pow(2.0 * s, mp.p - i);
  }
  return mp.sigma2 * std::exp(-s) * (fact_p / fact_2p) * sum;
}

inline double periodic_eval(const PeriodicParams& pp, double tau) {
  const double sn = std::sin(0.5 * pp.omega0 * tau);
  return pp.sigma2 * std::exp(-2.0 * sn * sn / (pp.ell * pp.ell));
}

inline double kernel_eval(const KernelSpec& spec, double tau) {
  switch (spec.family) {
    case KernelFamily::Matern: return matern_eval(spec.matern, tau);
    case KernelFamily::Periodic: return periodic_eval(spec.periodic, tau);
    case KernelFamily::QuasiPeriodic:
      return periodic_eval(spec.periodic, tau) * matern_eval(spec.matern, tau);
  }
  return 0.0;
}

// Modified Bessel function of the first kind, integer order. Power series
// with relative term cutoff 1e-16; x is small here (1/ell^2 of the warped
// periodic kernel) so the series is short.
inline double bessel_i(int order, double x) {
  if (order < 0) throw std::invalid_argument("bessel order must be >= 0");
  const double half = 0.5 * x;
  double term = 1.0;
  for (int k = 1; k <= order; ++k) term *= half / k;  // (x/2)^order / order!
  double sum = term;
  const double quarter2 = half * half;
  for (int k = 1; k < 500; ++k) {
    term *= quarter2 / (static_cast<double>(k) * (k + order));
    sum += term;
    if (term < 1e-16 * sum) break;
  }
  return sum;
}

// ---------------------------------------------------------------------------
// Lyapunov solve F P + P F' + W = 0 by Kronecker vectorization. Dimensions
// here are tiny (n <= 22), so a dense solve is plenty.

inline Mat solve_lyapunov(const Mat& F, const Mat& W) {
  const int n = static_cast<int>(F.rows());
  Mat I = Mat::Identity(n, n);
  Mat M = Eigen::kroneckerProduct(I, F) + Eigen::kroneckerProduct(F, I);
  Eigen::Map<const Vec> w(W.data(), n * n);
  Vec p = M.colPivHouseholderQr().solve(-w);
  double resid = (M * p + w).cwiseAbs().maxCoeff();
  double scale = std::max(1.0, W.cwiseAbs().maxCoeff());
  if (!p.allFinite() || resid > 1e-8 * scale)
    throw NumericError("lyapunov solve failed (residual " + std::to_string(resid) + ")");
  Mat P = Eigen::Map<const Mat>(p.data(), n, n);
  return 0.5 * (P + P.transpose());
}

// ---------------------------------------------------------------------------
// Matern -> state space. Companion form with characteristic polynomial
// (s + lambda)^(p+1), white-noise input on the last state.

inline LtiSde matern_to_ss(int p, double sigma2, double ell) {
  KernelSpec::make_matern(p, sigma2, ell);  // reuse parameter validation
  const int n = p + 1;
  const double lambda = std::sqrt(2.0 * (p + 0.5)) / ell;

  LtiSde m;
  m.F = Mat::Zero(n, n);
  for (int i = 0; i + 1 < n; ++i) m.F(i, i + 1) = 1.0;
  double binom = 1.0;  // C(n, k)
  for (int k = 0; k < n; ++k) {
    if (k == 0)
      binom = 1.0;
    else
      binom = binom * (n - k + 1) / k;
    m.F(n - 1, k) = -binom * std::pow(lambda, n - k);
  }

  m.L = Mat::Zero(n, 1);
  m.L(n - 1, 0) = 1.0;
  m.H = Mat::Zero(1, n);
  m.H(0, 0) = 1.0;

  // Spectral density of the driving noise: q = 2 sigma2 (p!)^2 4^p / (2p)! * lambda^(2p+1)
  double fact_p = 1.0, fact_2p = 1.0;
  for (int i = 2; i <= p; ++i) fact_p *= i;
  for (int i = 2; i <= 2 * p; ++i) fact_2p *= i;
  double qval = 2.0 * sigma2 * fact_p * fact_p * std::pow(4.0, p) / fact_2p *
                std::pow(lambda, 2 * p + 1);
  m.q = Mat::Constant(1, 1, qval);

  m.Pinf = solve_lyapunov(m.F, m.L * m.q * m.L.transpose());
  return m;
}

// ---------------------------------------------------------------------------
// Periodic -> state space. Truncated resonator expansion: harmonics
// j = 0..J, each a 2-state undamped oscillator at frequency j*omega0 with
// variance from the Bessel expansion of the warped kernel, normalized so the
// truncated variances sum to sigma2 exactly.

inline LtiSde periodic_to_ss(double sigma2, double ell, double omega0, int degree) {
  KernelSpec::make_periodic(sigma2, ell, omega0, degree);
  const int J = degree;
  const int n = 2 * (J + 1);
  const double x = 1.0 / (ell * ell);

  Vec w(J + 1);
  for (int j = 0; j <= J; ++j) w(j) = (j == 0 ? 1.0 : 2.0) * bessel_i(j, x);
  w *= sigma2 / w.sum();

  LtiSde m;
  m.F = Mat::Zero(n, n);
  m.H = Mat::Zero(1, n);
  m.Pinf = Mat::Zero(n, n);
  for (int j = 0; j <= J; ++j) {
    const int r = 2 * j;
    m.F(r, r + 1) = -j * omega0;
    m.F(r + 1, r) = j * omega0;
    m.H(0, r) = 1.0;
    m.Pinf(r, r) = w(j);
    m.Pinf(r + 1, r + 1) = w(j);
  }
  m.L = Mat::Identity(n, n);
  m.q = Mat::Zero(n, n);
  return m;
}

// ---------------------------------------------------------------------------
// Product kernel -> state space via Kronecker sums. With the periodic factor
// noise-free, the product process needs diffusion Pinf_p (x) (Lq qq Lq') to
// keep kron(Pinf_p, Pinf_q) stationary.

inline LtiSde product_to_ss(const LtiSde& per, const LtiSde& damp) {
  const int np = per.dim(), nq = damp.dim();
  Mat Ip = Mat::Identity(np, np), Iq = Mat::Identity(nq, nq);

  LtiSde m;
  m.F = Eigen::kroneckerProduct(per.F, Iq) + Eigen::kroneckerProduct(Ip, damp.F);
  m.H = Eigen::kroneckerProduct(per.H, damp.H);
  m.Pinf = Eigen::kroneckerProduct(per.Pinf, damp.Pinf);
  m.L = Mat::Identity(np * nq, np * nq);
  Mat Wq = damp.L * damp.q * damp.L.transpose();
  m.q = Eigen::kroneckerProduct(per.Pinf, Wq);
  return m;
}

inline LtiSde to_ss(const KernelSpec& spec) {
  spec.validate();
  switch (spec.family) {
    case KernelFamily::Matern:
      return matern_to_ss(spec.matern.p, spec.matern.sigma2, spec.matern.ell);
    case KernelFamily::Periodic:
      return periodic_to_ss(spec.periodic.sigma2, spec.periodic.ell,
                            spec.periodic.omega0, spec.periodic.degree);
    case KernelFamily::QuasiPeriodic: {
      LtiSde per = periodic_to_ss(spec.periodic.sigma2, spec.periodic.ell,
                                  spec.periodic.omega0, spec.periodic.degree);
      LtiSde damp = matern_to_ss(spec.matern.p, 1.0, spec.matern.ell);
      return product_to_ss(per, damp);
    }
  }
  throw std::invalid_argument("unknown kernel family");
}

// Stationary covariance the state-space form implies at lag tau; must match
// kernel_eval up to resonator truncation.
inline double reconstruct_kernel(const LtiSde& m, double tau) {
  Mat A = (m.F * std::abs(tau)).exp();
  return (m.H * A * m.Pinf * m.H.transpose())(0, 0);
}

// Max-abs residual of F Pinf + Pinf F' + L q L' = 0.
inline double lyapunov_residual(const LtiSde& m) {
  Mat R = m.F * m.Pinf + m.Pinf * m.F.transpose() + m.L * m.q * m.L.transpose();
  return R.cwiseAbs().maxCoeff();
}

}  // namespace lfmpc::kernels

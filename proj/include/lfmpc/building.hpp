#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lfmpc/common.hpp"

namespace lfmpc::building {

// Lumped RC zone: air node T_z, envelope node T_w, radiator node T_r, plus
// the CO2 mass fraction X of the zone air. Parameters are SI (J/K, K/W, kg);
// derivatives are per second. Grid steps elsewhere are in hours, so
// integrators convert.
struct Coupling {
  int neighbor = -1;
  double resistance = 0.0;  // K/W between the two zone air nodes
};

struct ZoneParams {
  std::string name;
  double C_z = 3.0e6;   // zone air + furniture heat capacity
  double C_w = 1.5e7;   // envelope heat capacity
  double C_r = 4.0e5;   // radiator water heat capacity
  double R_zw = 0.005;  // zone <-> envelope
  double R_zr = 0.008;  // zone <-> radiator
  double R_wa = 0.012;  // envelope <-> ambient
  double c_a = 1005.0;  // J/(kg K) air
  double c_w = 4186.0;  // J/(kg K) water
  double Q_occ = 195.0; // W of heat per occupant
  double m_z = 250.0;   // kg of zone air (CO2 balance)
  std::vector<Coupling> couplings;
};

struct ZoneInput {
  double m_dot_air = 0.0;    // kg/s ventilation
  double m_dot_water = 0.0;  // kg/s radiator water
};

struct ThermalDeriv {
  double dTz = 0.0, dTw = 0.0, dTr = 0.0;  // K/s
};

// Thermal balance of one zone. neighbor_Tz pairs with p.couplings.
inline ThermalDeriv zone_derivative(const ZoneParams& p, double Tz, double Tw, double Tr,
                                    const ZoneInput& u, double T_sup_air, double T_sup_water,
                                    double T_amb, double n_occ,
                                    std::span<const double> neighbor_Tz) {
  if (neighbor_Tz.size() != p.couplings.size())
    throw std::invalid_argument("zone_derivative: neighbor temperatures do not match couplings");
  double qz = (Tw - Tz) / p.R_zw + (Tr - Tz) / p.R_zr +
              u.m_dot_air * p.c_a * (T_sup_air - Tz) + p.Q_occ * n_occ;
  for (size_t i = 0; i < p.couplings.size(); ++i)
    qz += (neighbor_Tz[i] - Tz) / p.couplings[i].resistance;
  ThermalDeriv d;
  d.dTz = qz / p.C_z;
  d.dTw = ((Tz - Tw) / p.R_zw + (T_amb - Tw) / p.R_wa) / p.C_w;
  d.dTr = ((Tz - Tr) / p.R_zr + u.m_dot_water * p.c_w * (T_sup_water - Tr)) / p.C_r;
  return d;
}

// CO2 mass-fraction balance: ventilation exchange plus occupant generation
// g kg/s per person. Returns d(X)/dt in 1/s.
inline double co2_derivative(const ZoneParams& p, double X, double m_dot_air,
                             double X_supply, double n_occ, double g) {
  return (m_dot_air * (X_supply - X) + g * n_occ) / p.m_z;
}

struct BuildingModel {
  std::vector<ZoneParams> zones;
  double T_supply_air = 16.0;   // C
  double T_supply_water = 50.0; // C
  double co2_supply = 6.1e-4;   // kg/kg (~400 ppm)
  double co2_gen_rate = 6.2e-6; // kg/s per person

  int n_zones() const { return static_cast<int>(zones.size()); }
  int state_dim() const { return 4 * n_zones(); }

  void validate() const {
    for (size_t z = 0; z < zones.size(); ++z) {
      const auto& p = zones[z];
      if (!(p.C_z > 0 && p.C_w > 0 && p.C_r > 0 && p.m_z > 0))
        throw ConfigError("zone " + std::to_string(z) + ": capacities must be positive");
      if (!(p.R_zw > 0 && p.R_zr > 0 && p.R_wa > 0))
        throw ConfigError("zone " + std::to_string(z) + ": resistances must be positive");
      for (const auto& c : p.couplings) {
        if (c.neighbor < 0 || c.neighbor >= n_zones() || c.neighbor == static_cast<int>(z))
          throw ConfigError("zone " + std::to_string(z) + ": bad coupling neighbor");
        if (!(c.resistance > 0))
          throw ConfigError("zone " + std::to_string(z) + ": coupling resistance must be positive");
      }
    }
  }
};

// State layout: [T_z, T_w, T_r, X] per zone, zones stacked.
inline int state_index(int zone, int comp) { return 4 * zone + comp; }

struct DisturbanceTrace {
  std::vector<double> times;    // hours, uniform grid
  std::vector<double> ambient;  // C, per step
  Mat occupants;                // steps x zones

  void validate(int n_zones) const {
    if (ambient.size() != times.size() ||
        occupants.rows() != static_cast<Eigen::Index>(times.size()) ||
        occupants.cols() != n_zones)
      throw DataError("disturbance trace: inconsistent dimensions");
  }
};

namespace detail {

inline Vec building_rhs(const BuildingModel& b, const Vec& x, const Mat& u_row,
                        double T_amb, const Eigen::RowVectorXd& occ) {
  const int nz = b.n_zones();
  Vec dx(b.state_dim());
  std::vector<double> nb;
  for (int z = 0; z < nz; ++z) {
    const auto& p = b.zones[static_cast<size_t>(z)];
    nb.clear();
    for (const auto& c : p.couplings) nb.push_back(x(state_index(c.neighbor, 0)));
    ZoneInput uz{u_row(z, 0), u_row(z, 1)};
    ThermalDeriv d = zone_derivative(p, x(state_index(z, 0)), x(state_index(z, 1)),
                                     x(state_index(z, 2)), uz, b.T_supply_air,
                                     b.T_supply_water, T_amb, occ(z), nb);
    dx(state_index(z, 0)) = d.dTz;
    dx(state_index(z, 1)) = d.dTw;
    dx(state_index(z, 2)) = d.dTr;
    dx(state_index(z, 3)) = co2_derivative(p, x(state_index(z, 3)), uz.m_dot_air,
                                           b.co2_supply, occ(z), b.co2_gen_rate);
  }
  return dx;
}

}  // namespace detail

// Fixed-step RK4 with zero-order-hold controls and disturbances. controls is
// steps x (2 * n_zones) with columns [m_dot_air, m_dot_water] per zone.
// Returns (steps+1) x state_dim including the initial row.
inline Mat simulate(const BuildingModel& b, const Vec& x0, const Mat& controls,
                    const DisturbanceTrace& dist, double dt_hours, int substeps = 1) {
  b.validate();
  const int nz = b.n_zones();
  const int steps = static_cast<int>(controls.rows());
  if (x0.size() != b.state_dim()) throw std::invalid_argument("simulate: x0 dimension");
  if (controls.cols() != 2 * nz) throw std::invalid_argument("simulate: controls dimension");
  if (static_cast<int>(dist.times.size()) < steps)
    throw DataError("simulate: disturbance trace shorter than horizon");
  if (substeps < 1) throw std::invalid_argument("simulate: substeps must be >= 1");

  Mat out(steps + 1, b.state_dim());
  out.row(0) = x0.transpose();
  Vec x = x0;
  const double h = 3600.0 * dt_hours / substeps;  // seconds

  for (int k = 0; k < steps; ++k) {
    Mat u(nz, 2);
    for (int z = 0; z < nz; ++z) {
      u(z, 0) = controls(k, 2 * z);
      u(z, 1) = controls(k, 2 * z + 1);
    }
    Eigen::RowVectorXd occ = dist.occupants.row(k);
    double Ta = dist.ambient[static_cast<size_t>(k)];
    for (int s = 0; s < substeps; ++s) {
      Vec k1 = detail::building_rhs(b, x, u, Ta, occ);
      Vec k2 = detail::building_rhs(b, x + 0.5 * h * k1, u, Ta, occ);
      Vec k3 = detail::building_rhs(b, x + 0.5 * h * k2, u, Ta, occ);
      Vec k4 = detail::building_rhs(b, x + h * k3, u, Ta, occ);
      x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    if (!x.allFinite())
      throw NumericError("simulation diverged at step " + std::to_string(k));
    out.row(k + 1) = x.transpose();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic occupancy: per weekday and person, presence is Bernoulli, arrival
// and duration are truncated normals. Weekends are empty.

struct OccupantProfile {
  int max_occupants = 5;
  double presence_prob = 0.85;
  double arrival_mean = 8.0;   // hours past midnight
  double arrival_sd = 0.75;
  double duration_mean = 8.5;  // hours
  double duration_sd = 0.75;
};

inline Mat generate_occupancy(std::uint64_t seed, double t0_hours, int n_days,
                              const std::vector<OccupantProfile>& profiles,
                              double dt_hours = kStepHours) {
  if (day_phase(t0_hours) != 0.0)
    throw std::invalid_argument("generate_occupancy: start must be midnight");
  const int per_day = static_cast<int>(std::lround(24.0 / dt_hours));
  const int nz = static_cast<int>(profiles.size());
  Mat occ = Mat::Zero(n_days * per_day, nz);

  for (int z = 0; z < nz; ++z) {
    auto rng = substream(seed, "occupancy/zone" + std::to_string(z));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const auto& pf = profiles[static_cast<size_t>(z)];

    for (int d = 0; d < n_days; ++d) {
      bool weekend = is_weekend(t0_hours + 24.0 * d);
      for (int person = 0; person < pf.max_occupants; ++person) {
        // keep the stream aligned across day types
        double u_presence = unif(rng);
        double g_arr = gauss(rng);
        double duration = pf.duration_mean + pf.duration_sd * gauss(rng);
        for (int attempt = 0; attempt < 10 && duration <= 0.0; ++attempt)
          duration = pf.duration_mean + pf.duration_sd * gauss(rng);
        if (weekend || u_presence > pf.presence_prob) continue;
        double arrival = std::clamp(pf.arrival_mean + pf.arrival_sd * g_arr, 0.0, 24.0 - 1e-9);
        duration = std::max(duration, 0.0);
        double depart = std::min(arrival + duration, 24.0);
        for (int s = 0; s < per_day; ++s) {
          double phase = s * dt_hours;
          if (phase >= arrival && phase < depart) occ(d * per_day + s, z) += 1.0;
        }
      }
    }
  }
  return occ;
}

// Ambient temperature: daily and annual sinusoids plus AR(1) noise.
struct AmbientParams {
  double mean = 8.0;
  double daily_amplitude = 4.0;
  double annual_amplitude = 6.0;
  double noise_sd = 0.3;
  double noise_rho = 0.95;
};

inline std::vector<double> generate_ambient(std::uint64_t seed, double t0_hours, int n_steps,
                                            double dt_hours, const AmbientParams& ap) {
  auto rng = substream(seed, "weather-noise");
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> out(static_cast<size_t>(n_steps));
  double e = 0.0;
  const double innov = ap.noise_sd * std::sqrt(1.0 - ap.noise_rho * ap.noise_rho);
  for (int k = 0; k < n_steps; ++k) {
    double t = t0_hours + k * dt_hours;
    double daily = ap.daily_amplitude * std::sin(2.0 * M_PI * (day_phase(t) - 9.0) / 24.0);
    double annual = -ap.annual_amplitude * std::cos(2.0 * M_PI * (t - t0_hours) / 8760.0);
    e = ap.noise_rho * e + innov * gauss(rng);
    out[static_cast<size_t>(k)] = ap.mean + daily + annual + e;
  }
  return out;
}

// Delivered thermal energy per zone in kWh: both supply streams, magnitudes.
inline Vec energy_consumed(const Mat& states, const Mat& controls, const BuildingModel& b,
                           double dt_hours) {
  const int nz = b.n_zones();
  const int steps = static_cast<int>(controls.rows());
  if (states.rows() < steps) throw std::invalid_argument("energy: states/controls mismatch");
  Vec e = Vec::Zero(nz);
  for (int k = 0; k < steps; ++k) {
    for (int z = 0; z < nz; ++z) {
      const auto& p = b.zones[static_cast<size_t>(z)];
      double Tz = states(k, state_index(z, 0));
      double Tr = states(k, state_index(z, 2));
      double w = controls(k, 2 * z) * p.c_a * std::abs(b.T_supply_air - Tz) +
                 controls(k, 2 * z + 1) * p.c_w * std::abs(b.T_supply_water - Tr);
      e(z) += w * dt_hours / 1000.0;
    }
  }
  return e;
}

}  // namespace lfmpc::building

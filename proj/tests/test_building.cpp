#include "catch2/catch_amalgamated.hpp"

#include <cmath>

#include "lfmpc/building.hpp"

using namespace lfmpc;
using namespace lfmpc::building;
using Catch::Approx;

namespace {

BuildingModel one_zone() {
  BuildingModel b;
  b.zones.push_back(ZoneParams{});
  b.zones[0].name = "test";
  return b;
}

// Steady state of one uncoupled zone under constant inputs, from the linear
// balance written out by hand: unknowns (T_z, T_w, T_r).
Eigen::Vector3d hand_equilibrium(const ZoneParams& p, const ZoneInput& u, double T_sup_a,
                                 double T_sup_w, double T_amb, double n_occ) {
  Eigen::Matrix3d A;
  Eigen::Vector3d rhs;
  A << 1.0 / p.R_zw + 1.0 / p.R_zr + u.m_dot_air * p.c_a, -1.0 / p.R_zw, -1.0 / p.R_zr,
      -1.0 / p.R_zw, 1.0 / p.R_zw + 1.0 / p.R_wa, 0.0,
      -1.0 / p.R_zr, 0.0, 1.0 / p.R_zr + u.m_dot_water * p.c_w;
  rhs << u.m_dot_air * p.c_a * T_sup_a + p.Q_occ * n_occ, T_amb / p.R_wa,
      u.m_dot_water * p.c_w * T_sup_w;
  return A.colPivHouseholderQr().solve(rhs);
}

}  // namespace

TEST_CASE("zone derivative balances the hand-written heat flows", "[building]") {
  ZoneParams p;
  ZoneInput u{0.3, 0.1};
  const double Tz = 21.0, Tw = 14.0, Tr = 35.0, Ta = 2.0, occ = 3.0;
  ThermalDeriv d = zone_derivative(p, Tz, Tw, Tr, u, 16.0, 50.0, Ta, occ, {});

  double qz = (Tw - Tz) / p.R_zw + (Tr - Tz) / p.R_zr + 0.3 * p.c_a * (16.0 - Tz) +
              p.Q_occ * occ;
  double qw = (Tz - Tw) / p.R_zw + (Ta - Tw) / p.R_wa;
  double qr = (Tz - Tr) / p.R_zr + 0.1 * p.c_w * (50.0 - Tr);
  CHECK(d.dTz == Approx(qz / p.C_z).epsilon(1e-14));
  CHECK(d.dTw == Approx(qw / p.C_w).epsilon(1e-14));
  CHECK(d.dTr == Approx(qr / p.C_r).epsilon(1e-14));

  std::vector<double> nb{25.0};
  CHECK_THROWS_AS(zone_derivative(p, Tz, Tw, Tr, u, 16.0, 50.0, Ta, occ, nb),
                  std::invalid_argument);
}

TEST_CASE("derivatives vanish at the equilibrium point", "[building]") {
  ZoneParams p;
  ZoneInput u{0.2, 0.05};
  Eigen::Vector3d eq = hand_equilibrium(p, u, 16.0, 50.0, 5.0, 1.5);
  ThermalDeriv d = zone_derivative(p, eq(0), eq(1), eq(2), u, 16.0, 50.0, 5.0, 1.5, {});
  CHECK(std::abs(d.dTz) <= 1e-12);
  CHECK(std::abs(d.dTw) <= 1e-12);
  CHECK(std::abs(d.dTr) <= 1e-12);
}

TEST_CASE("equal coupled zones behave like uncoupled ones", "[building]") {
  // Identical states on both sides of a coupling exchange nothing.
  ZoneParams p;
  ZoneParams pc = p;
  pc.couplings.push_back({1, 0.02});
  ZoneInput u{0.1, 0.08};
  const double Tz = 20.0;
  std::vector<double> nb{Tz};
  ThermalDeriv plain = zone_derivative(p, Tz, 15.0, 30.0, u, 16.0, 50.0, 0.0, 2.0, {});
  ThermalDeriv coupled = zone_derivative(pc, Tz, 15.0, 30.0, u, 16.0, 50.0, 0.0, 2.0, nb);
  CHECK(coupled.dTz == Approx(plain.dTz).margin(1e-16));

  // A warmer neighbor adds exactly dT / (R C_z).
  nb[0] = Tz + 3.0;
  ThermalDeriv warmer = zone_derivative(pc, Tz, 15.0, 30.0, u, 16.0, 50.0, 0.0, 2.0, nb);
  CHECK(warmer.dTz - plain.dTz == Approx(3.0 / (0.02 * p.C_z)).epsilon(1e-12));
}

TEST_CASE("co2 balance signs and steady state", "[building]") {
  ZoneParams p;
  const double g = 6.2e-6, Xs = 6.1e-4;
  // occupants raise concentration, ventilation pulls it to the supply level
  CHECK(co2_derivative(p, Xs, 0.0, Xs, 2.0, g) == Approx(2.0 * g / p.m_z).epsilon(1e-14));
  CHECK(co2_derivative(p, 2.0 * Xs, 0.3, Xs, 0.0, g) < 0.0);

  // analytic fixed point X = Xs + g n / m_dot
  const double m_dot = 0.25, n_occ = 3.0;
  double X_ss = Xs + g * n_occ / m_dot;
  CHECK(co2_derivative(p, X_ss, m_dot, Xs, n_occ, g) == Approx(0.0).margin(1e-20));

  // and the simulation settles onto it within 0.1 %
  BuildingModel b = one_zone();
  const int steps = 24 * 8;
  Mat controls = Mat::Zero(steps, 2);
  controls.col(0).setConstant(m_dot);
  DisturbanceTrace dist;
  dist.times.resize(steps);
  for (int k = 0; k < steps; ++k) dist.times[static_cast<size_t>(k)] = k * 0.25;
  dist.ambient.assign(steps, 10.0);
  dist.occupants = Mat::Constant(steps, 1, n_occ);
  Vec x0(4);
  x0 << 20.0, 15.0, 30.0, Xs;
  Mat out = simulate(b, x0, controls, dist, 0.25, 1);
  CHECK(out(steps, 3) == Approx(X_ss).epsilon(1e-3));
}

TEST_CASE("integration error shrinks at fourth order", "[building]") {
  // Richardson estimate on the step-doubling ratio; RK4 should give
  // error ~ h^4, observed order clearly above 3.5.
  BuildingModel b = one_zone();
  b.zones[0].couplings.clear();
  const int steps = 8;
  Mat controls(steps, 2);
  for (int k = 0; k < steps; ++k) {
    controls(k, 0) = 0.1 + 0.05 * k;  // vary inputs so the trajectory bends
    controls(k, 1) = 0.15 - 0.01 * k;
  }
  DisturbanceTrace dist;
  dist.times.resize(steps);
  for (int k = 0; k < steps; ++k) dist.times[static_cast<size_t>(k)] = k * 0.25;
  dist.ambient.assign(steps, -5.0);
  dist.occupants = Mat::Constant(steps, 1, 2.0);
  Vec x0(4);
  x0 << 18.0, 10.0, 45.0, 8e-4;

  auto final_state = [&](int sub) { return Vec(simulate(b, x0, controls, dist, 0.25, sub).row(steps)); };
  Vec fine = final_state(16);
  double e1 = (final_state(1) - fine).head(3).cwiseAbs().maxCoeff();
  double e2 = (final_state(2) - fine).head(3).cwiseAbs().maxCoeff();
  double order = std::log2(e1 / e2);
  CHECK(order >= 3.5);
}

TEST_CASE("simulation guards its inputs", "[building]") {
  BuildingModel b = one_zone();
  DisturbanceTrace dist;
  dist.times = {0.0, 0.25};
  dist.ambient = {0.0, 0.0};
  dist.occupants = Mat::Zero(2, 1);
  Vec x0 = Vec::Zero(4);

  CHECK_THROWS_AS(simulate(b, Vec::Zero(3), Mat::Zero(2, 2), dist, 0.25), std::invalid_argument);
  CHECK_THROWS_AS(simulate(b, x0, Mat::Zero(2, 3), dist, 0.25), std::invalid_argument);
  CHECK_THROWS_AS(simulate(b, x0, Mat::Zero(4, 2), dist, 0.25), DataError);
  CHECK_THROWS_AS(simulate(b, x0, Mat::Zero(2, 2), dist, 0.25, 0), std::invalid_argument);

  BuildingModel bad = one_zone();
  bad.zones[0].couplings.push_back({5, 0.02});
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.zones[0].couplings[0] = {0, 0.02};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.zones[0].couplings.clear();
  bad.zones[0].C_z = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  DisturbanceTrace short_trace;
  short_trace.times = {0.0};
  short_trace.ambient = {0.0, 0.0};
  short_trace.occupants = Mat::Zero(1, 1);
  CHECK_THROWS_AS(short_trace.validate(1), DataError);
}

TEST_CASE("synthetic occupancy is seeded and calendar aware", "[building]") {
  std::vector<OccupantProfile> profiles(2);
  profiles[1].max_occupants = 2;
  // t0 = 0 is a Monday midnight by convention
  Mat a = generate_occupancy(1, 0.0, 14, profiles, 0.25);
  Mat b = generate_occupancy(1, 0.0, 14, profiles, 0.25);
  Mat c = generate_occupancy(2, 0.0, 14, profiles, 0.25);
  REQUIRE(a.rows() == 14 * 96);
  REQUIRE(a.cols() == 2);
  CHECK(a == b);
  CHECK(a != c);

  // weekends empty, counts integral and bounded by the profile
  bool weekday_presence = false;
  for (int k = 0; k < a.rows(); ++k) {
    double t = 0.25 * k;
    for (int z = 0; z < 2; ++z) {
      double v = a(k, z);
      CHECK(v >= 0.0);
      CHECK(v <= profiles[static_cast<size_t>(z)].max_occupants);
      CHECK(v == std::floor(v));
      if (is_weekend(t)) {
        CHECK(v == 0.0);
      } else if (v > 0.0) {
        weekday_presence = true;
      }
    }
  }
  CHECK(weekday_presence);

  CHECK_THROWS_AS(generate_occupancy(1, 3.5, 7, profiles, 0.25), std::invalid_argument);
}

TEST_CASE("ambient generator is seeded with the documented shape", "[building]") {
  AmbientParams ap;
  auto a = generate_ambient(9, 0.0, 96 * 7, 0.25, ap);
  auto b = generate_ambient(9, 0.0, 96 * 7, 0.25, ap);
  auto c = generate_ambient(10, 0.0, 96 * 7, 0.25, ap);
  CHECK(a == b);
  CHECK(a != c);

  // noiseless shape: daily sinusoid peaking at 15:00, annual dip at the start
  AmbientParams quiet = ap;
  quiet.noise_sd = 0.0;
  auto q = generate_ambient(1, 0.0, 96, 0.25, quiet);
  int argmax = 0;
  for (int k = 1; k < 96; ++k)
    if (q[static_cast<size_t>(k)] > q[static_cast<size_t>(argmax)]) argmax = k;
  CHECK(argmax * 0.25 == Approx(15.0).margin(0.25));
  CHECK(q[0] == Approx(ap.mean + ap.daily_amplitude * std::sin(-2.0 * M_PI * 9.0 / 24.0) -
                       ap.annual_amplitude)
                    .margin(1e-12));

  // all values stay inside mean +- (amplitudes + generous noise band)
  for (double v : a) {
    CHECK(v <= ap.mean + ap.daily_amplitude + ap.annual_amplitude + 5.0 * ap.noise_sd);
    CHECK(v >= ap.mean - ap.daily_amplitude - ap.annual_amplitude - 5.0 * ap.noise_sd);
  }
}

TEST_CASE("energy accounting over a constant stretch", "[building]") {
  // 4 quarter-hour steps at fixed flows and temperatures: the kWh total is
  // plain arithmetic on both supply streams.
  BuildingModel b = one_zone();
  const auto& p = b.zones[0];
  const double Tz = 20.0, Tr = 40.0;
  Mat states = Mat::Zero(5, 4);
  states.col(0).setConstant(Tz);
  states.col(2).setConstant(Tr);
  Mat controls = Mat::Zero(4, 2);
  controls.col(0).setConstant(0.2);
  controls.col(1).setConstant(0.05);

  double per_step_w = 0.2 * p.c_a * std::abs(b.T_supply_air - Tz) +
                      0.05 * p.c_w * std::abs(b.T_supply_water - Tr);
  Vec e = energy_consumed(states, controls, b, 0.25);
  REQUIRE(e.size() == 1);
  CHECK(e(0) == Approx(4.0 * per_step_w * 0.25 / 1000.0).epsilon(1e-12));

  CHECK_THROWS_AS(energy_consumed(Mat::Zero(3, 4), controls, b, 0.25), std::invalid_argument);
}

TEST_CASE("runaway states raise a numeric error", "[building]") {
  // Negative capacity sneaks past validate only if we bypass it; instead
  // drive the instability with an absurd coupling to a fixed neighbor and a
  // giant step so RK4 overflows to non-finite values.
  BuildingModel b = one_zone();
  b.zones[0].C_z = 1e-9;  // almost no thermal mass
  b.zones[0].R_zr = 1e-9; // glued to the radiator
  const int steps = 50;
  Mat controls = Mat::Zero(steps, 2);
  controls.col(1).setConstant(0.5);
  DisturbanceTrace dist;
  dist.times.resize(steps);
  for (int k = 0; k < steps; ++k) dist.times[static_cast<size_t>(k)] = k * 1.0;
  dist.ambient.assign(steps, 0.0);
  dist.occupants = Mat::Zero(steps, 1);
  Vec x0(4);
  x0 << 20.0, 15.0, 30.0, 6.1e-4;
  CHECK_THROWS_AS(simulate(b, x0, controls, dist, 1.0, 1), NumericError);
}

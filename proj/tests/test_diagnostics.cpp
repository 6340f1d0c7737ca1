#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <numeric>
#include <vector>

#include "scduff/diagnostics.hpp"

using namespace scduff;

namespace {

constexpr double half_pi = std::numbers::pi / 2;

IntegratorConfig config(int transient, int total, int spp) {
  IntegratorConfig c;
  c.transient_periods = transient;
  c.total_periods = total;
  c.steps_per_period = spp;
  return c;
}

ModelParams classical(double beta, double gamma, double g) {
  ModelParams m(beta, gamma, g, 1.0, 0.0);
  m.classical = true;
  m.freeze_spread = true;
  return m;
}

}  // namespace

TEST(BatchMeans, ConstantSeriesHasZeroError) {
  const std::vector<double> logs(100, -0.5);
  const auto [rate, se] = batch_mean_rate(logs, 2.0, 20);
  EXPECT_DOUBLE_EQ(rate, -0.25);
  EXPECT_EQ(se, 0.0);
}

TEST(BatchMeans, KnownBlockSpread) {
  // Two blocks with means 0 and 2: rate 1, block sd sqrt(2), se 1.
  const std::vector<double> logs{0, 0, 2, 2};
  const auto [rate, se] = batch_mean_rate(logs, 1.0, 2);
  EXPECT_DOUBLE_EQ(rate, 1.0);
  EXPECT_DOUBLE_EQ(se, 1.0);
}

// At the bottom of a well with no drive, the classical centroid is a damped
// linear oscillator x'' = -2 x - 2 Gamma x', whose exponent is -Gamma.
// Explicit Euler biases it by about +h, small at the default step.
TEST(Lyapunov, LinearOscillatorOracle) {
  for (double gamma : {0.05, 0.1}) {
    const ModelParams m = classical(0.1, gamma, 0.0);
    const LyapunovEstimate e = lyapunov(m, config(0, 2000, 4000), NoiseStream(1, 0));
    ASSERT_TRUE(e.valid) << e.failure;
    EXPECT_NEAR(e.lambda, -gamma, 0.05 * gamma);
    EXPECT_EQ(e.n_renorm, 2000);
    EXPECT_EQ(e.n_blocks, 20);
    EXPECT_EQ(e.regime(), LyapunovEstimate::Regime::regular);
    EXPECT_TRUE(e.converged);
  }
}

TEST(Lyapunov, InvariantUnderSeparationAndInterval) {
  const ModelParams m = classical(0.1, 0.1, 0.3);
  const IntegratorConfig c = config(50, 650, 1000);
  const LyapunovEstimate base = lyapunov(m, c, NoiseStream(1, 0));
  LyapunovOptions small;
  small.d0 = default_separation(m) / 10;
  const LyapunovEstimate a = lyapunov(m, c, NoiseStream(1, 0), small);
  LyapunovOptions longer;
  longer.renorm_steps = 2 * c.steps_per_period;
  const LyapunovEstimate b = lyapunov(m, c, NoiseStream(1, 0), longer);
  ASSERT_TRUE(base.valid && a.valid && b.valid);
  EXPECT_GT(base.lambda, 3 * base.standard_error);
  EXPECT_LE(std::abs(a.lambda - base.lambda), std::hypot(a.standard_error, base.standard_error));
  EXPECT_LE(std::abs(b.lambda - base.lambda), std::hypot(b.standard_error, base.standard_error));
  EXPECT_EQ(b.n_renorm, 300);
}

TEST(Lyapunov, FiducialMatchesPlainIntegration) {
  const ModelParams m(0.15, 0.05, 0.3, 1.0, half_pi);
  IntegratorConfig c = config(5, 20, 1000);
  c.keep_increments = true;
  Trajectory fid;
  const LyapunovEstimate e = lyapunov(default_initial(m.beta), m, c, NoiseStream(9, 4), {}, &fid);
  ASSERT_TRUE(e.valid);
  const Trajectory plain = integrate(default_initial(m.beta), m, c, NoiseStream(9, 4));
  ASSERT_EQ(fid.samples.size(), plain.samples.size());
  for (std::size_t i = 0; i < fid.samples.size(); ++i) ASSERT_EQ(fid.samples[i].state, plain.samples[i].state);
  // Common noise: the increments consumed are exactly the stream's.
  NoiseStream replay(9, 4);
  for (double dw : fid.increments) ASSERT_EQ(dw, replay.wiener_increment(fid.h));
}

TEST(Lyapunov, Deterministic) {
  const ModelParams m(0.05, 0.1, 0.3, 1.0, 0.0);
  const IntegratorConfig c = config(10, 60, 1000);
  const LyapunovEstimate a = lyapunov(m, c, NoiseStream(3, 3));
  const LyapunovEstimate b = lyapunov(m, c, NoiseStream(3, 3));
  EXPECT_EQ(a.lambda, b.lambda);
  EXPECT_EQ(a.standard_error, b.standard_error);
}

TEST(Lyapunov, AbortInvalidatesEstimate) {
  ModelParams m = classical(0.1, 0.0, 1e9);
  const LyapunovEstimate e = lyapunov(m, config(0, 5, 100), NoiseStream(1, 1));
  EXPECT_FALSE(e.valid);
  EXPECT_NE(e.failure.find("escape"), std::string::npos);
  EXPECT_EQ(e.regime(), LyapunovEstimate::Regime::inconclusive);
}

TEST(Lyapunov, NeedsPostTransientWindow) {
  const LyapunovEstimate e = lyapunov(classical(0.1, 0.1, 0.3), config(5, 5, 100), NoiseStream(1, 1));
  EXPECT_FALSE(e.valid);
}

TEST(Poincare, OnePointPerSteadyPeriod) {
  const ModelParams m(0.1, 0.1, 0.3, 1.0, 0.0);
  IntegratorConfig c = config(10, 50, 400);
  c.record_stride = 4;
  const Trajectory tr = integrate(default_initial(0.1), m, c, NoiseStream(1, 1));
  const auto sec = poincare(tr, 0.0);
  ASSERT_EQ(sec.size(), 40u);
  for (std::size_t i = 0; i < sec.size(); ++i) {
    EXPECT_EQ(sec[i].period_index, static_cast<std::int64_t>(i));
    EXPECT_NEAR(std::fmod(sec[i].state.t, m.period()), 0.0, 1e-9);
  }
  const auto shifted = poincare(tr, two_pi);
  ASSERT_EQ(shifted.size(), sec.size());
  for (std::size_t i = 0; i < sec.size(); ++i) EXPECT_EQ(shifted[i].state, sec[i].state);
  const auto quarter = poincare(tr, half_pi);
  ASSERT_EQ(quarter.size(), 40u);
  EXPECT_NEAR(std::fmod(quarter[0].state.t, m.period()), m.period() / 4, 1e-9);
  c.record_stride = 3;
  const Trajectory coarse = integrate(default_initial(0.1), m, c, NoiseStream(1, 1));
  EXPECT_THROW(poincare(coarse, 0.0), std::invalid_argument);
}

TEST(Poincare, EmptyWhenNoSteadyState) {
  const ModelParams m(0.1, 0.1, 0.3, 1.0, 0.0);
  Trajectory tr = integrate(default_initial(0.1), m, config(10, 10, 100), NoiseStream(1, 1));
  EXPECT_TRUE(poincare(tr, 0.0).empty());
}

TEST(Poincare, RegularSectionIsStationary) {
  const Trajectory tr = integrate(default_initial(0.1), classical(0.1, 0.05, 0.3), config(200, 600, 1000), NoiseStream(1, 1));
  const auto sec = poincare(tr, 0.0);
  const std::vector<SectionPoint> first(sec.begin(), sec.begin() + sec.size() / 2);
  const std::vector<SectionPoint> second(sec.begin() + sec.size() / 2, sec.end());
  const BoundingBox a = bounding_box(first), b = bounding_box(second);
  const BoundingBox all = bounding_box(sec);
  // Overlap after dilating each box by 20% of the combined extent.
  const double dx = 0.2 * (all.x_max - all.x_min), dp = 0.2 * (all.p_max - all.p_min);
  EXPECT_LE(a.x_min - dx, b.x_max + dx);
  EXPECT_LE(b.x_min - dx, a.x_max + dx);
  EXPECT_LE(a.p_min - dp, b.p_max + dp);
  EXPECT_LE(b.p_min - dp, a.p_max + dp);
  EXPECT_LT(cluster_diameter(sec), 1e-3);
}

TEST(EnergyLedger, ClosureIsExact) {
  const ModelParams m(0.15, 0.05, 0.3, 1.0, half_pi);
  const Trajectory tr = integrate(default_initial(m.beta), m, config(5, 30, 1000), NoiseStream(2, 2));
  const EnergyLedger L = energy_ledger(tr);
  ASSERT_EQ(L.size(), tr.samples.size() - 1);
  for (std::size_t i = 0; i < L.size(); ++i)
    ASSERT_EQ(((L.d_hamiltonian[i] + L.d_drive[i]) + L.d_dissipation[i]) + L.d_noise[i], 0.0);
  EXPECT_EQ(L.max_closure, 0.0);
  EXPECT_EQ(L.n_steps, 25 * 1000);
}

TEST(EnergyLedger, DeterministicResidualIsSecondOrder) {
  // Gamma = 0 switches the noise off; the residual channel then holds only
  // the Euler discretisation error. A weak drive keeps the orbit in the well.
  const ModelParams m(0.1, 0.0, 0.05, 1.0, 0.0);
  auto worst = [&](int spp) {
    const Trajectory tr = integrate(default_initial(m.beta), m, config(0, 5, spp), NoiseStream(1, 1));
    const EnergyLedger L = energy_ledger(tr);
    double w = 0;
    for (double v : L.d_noise) w = std::max(w, std::abs(v));
    const double h = tr.h;
    return std::pair{w / (h * h), std::abs(L.sum_hamiltonian + L.sum_drive)};
  };
  const auto [c1, gap1] = worst(2000);
  const auto [c2, gap2] = worst(4000);
  EXPECT_LE(c1, 10.0);
  EXPECT_LE(c2, 10.0);
  EXPECT_NEAR(c1 / c2, 1.0, 0.4);
  EXPECT_NEAR(gap1 / gap2, 2.0, 0.4);
}

TEST(EnergyLedger, ObserverMatchesStoredTrajectory) {
  const ModelParams m(0.05, 0.1, 0.3, 1.0, 0.0);
  const IntegratorConfig c = config(5, 20, 1000);
  LedgerAccumulator acc(m, c);
  const Trajectory tr = integrate(default_initial(m.beta), m, c, NoiseStream(4, 4), acc);
  const EnergyLedger a = acc.result(), b = energy_ledger(tr);
  EXPECT_EQ(a.size(), 0u);
  EXPECT_EQ(a.sum_drive, b.sum_drive);
  EXPECT_EQ(a.sum_dissipation, b.sum_dissipation);
  EXPECT_EQ(a.sum_noise, b.sum_noise);
  EXPECT_EQ(a.sum_hamiltonian, b.sum_hamiltonian);
  EXPECT_EQ(a.window, b.window);
}

TEST(EnergyLedger, HamiltonianChannelTelescopes) {
  const ModelParams m(0.05, 0.1, 0.3, 1.0, 0.0);
  const IntegratorConfig c = config(20, 220, 2000);
  LedgerAccumulator acc(m, c);
  const Trajectory tr = integrate(default_initial(m.beta), m, c, NoiseStream(4, 4), acc);
  ASSERT_TRUE(tr.ok());
  const EnergyLedger L = acc.result();
  EXPECT_LE(std::abs(L.mean_hamiltonian), (L.h0_max - L.h0_min) / L.window);
  const State& a = tr.samples[tr.first_steady()].state;
  const State& b = tr.samples.back().state;
  EXPECT_NEAR(L.sum_hamiltonian, ledger_energy(b, m) - ledger_energy(a, m), 1e-8 * (L.h0_max - L.h0_min));
}

TEST(EnergyLedger, ClassicalDriveBalancesDissipation) {
  const ModelParams m = classical(0.1, 0.1, 0.3);
  LedgerAccumulator acc(m, config(100, 1100, 1000));
  const Trajectory tr = integrate(default_initial(0.1), m, config(100, 1100, 1000), NoiseStream(1, 1), acc);
  ASSERT_TRUE(tr.ok());
  const EnergyLedger L = acc.result();
  EXPECT_LT(L.mean_drive, 0.0);  // drive feeds energy in: dE_g = -P_g dt < 0 on average
  EXPECT_LE(L.balance_error(), 0.05);
}

TEST(TrajectoryStats, ConstantSequence) {
  const ModelParams m(0.1, 0.0, 0.0, 1.0, 0.0);
  Trajectory tr;
  tr.params = m;
  tr.config = config(0, 1, 10);
  const State s{0, 3, 0.5, 1.2, -0.4};
  for (int k = 0; k <= 10; ++k) tr.samples.push_back({k, s});
  const TrajectoryStats st = trajectory_stats(tr);
  const PotentialTerms u = potential_terms(s, m);
  EXPECT_DOUBLE_EQ(st.u1_bar, u.u1);
  EXPECT_DOUBLE_EQ(st.u2_bar, u.u2);
  EXPECT_DOUBLE_EQ(st.u12_bar, u.u12);
  EXPECT_DOUBLE_EQ(st.h_bar, hamiltonian(s, m));
  EXPECT_NEAR(st.delta_h, 0.0, 1e-14);
  EXPECT_EQ(st.chi_q05, 1.2);
  EXPECT_EQ(st.chi_q95, 1.2);
  EXPECT_EQ(st.chi_range, 0.0);
  EXPECT_EQ(st.n_samples, 11u);
}

TEST(TrajectoryStats, QuantilesAndWindow) {
  const ModelParams m(0.1, 0.0, 0.0, 1.0, 0.0);
  Trajectory tr;
  tr.params = m;
  tr.config = config(1, 2, 100);
  for (int k = 0; k <= 200; ++k) tr.samples.push_back({k, State{0, 0, 0, k < 100 ? 50.0 : 1.0 + (k - 100) / 100.0, 0}});
  const TrajectoryStats st = trajectory_stats(tr);
  EXPECT_EQ(st.n_samples, 101u);
  EXPECT_NEAR(st.chi_q05, 1.05, 1e-12);
  EXPECT_NEAR(st.chi_q50, 1.5, 1e-12);
  EXPECT_NEAR(st.chi_q95, 1.95, 1e-12);
  EXPECT_NEAR(st.chi_range, 0.9, 1e-12);
  EXPECT_GE(st.u12_bar, 0.0);
  tr.config = config(3, 3, 100);
  EXPECT_THROW(trajectory_stats(tr), std::invalid_argument);
}

// Halving the step moves the ensemble averages by less than their
// seed-to-seed spread.
TEST(TrajectoryStats, StepHalvingSelfConsistency) {
  const ModelParams m(0.05, 0.1, 0.3, 1.0, 0.0);
  const int seeds = 12;
  auto run = [&](int spp) {
    std::vector<double> hb, u2;
    for (int s = 0; s < seeds; ++s) {
      const Trajectory tr = integrate(default_initial(m.beta), m, [&] {
        IntegratorConfig c = config(50, 300, spp);
        c.record_stride = spp / 100;
        return c;
      }(), NoiseStream(100, static_cast<std::uint64_t>(s)));
      EXPECT_TRUE(tr.ok());
      const TrajectoryStats st = trajectory_stats(tr);
      hb.push_back(st.h_bar);
      u2.push_back(st.u2_bar);
    }
    return std::pair{hb, u2};
  };
  auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
  auto sd = [&](const std::vector<double>& v) {
    const double mu = mean(v);
    double ss = 0;
    for (double x : v) ss += (x - mu) * (x - mu);
    return std::sqrt(ss / (v.size() - 1));
  };
  const auto [h1, u1] = run(4000);
  const auto [h2, u2] = run(8000);
  EXPECT_LT(std::abs(mean(h1) - mean(h2)), std::max(sd(h1), sd(h2)));
  EXPECT_LT(std::abs(mean(u1) - mean(u2)), std::max(sd(u1), sd(u2)));
}

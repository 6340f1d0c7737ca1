#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

#include "scduff/harness.hpp"

using namespace scduff;
namespace fs = std::filesystem;

namespace {

IntegratorConfig quick_config() {
  IntegratorConfig c;
  c.steps_per_period = 400;
  c.transient_periods = 10;
  c.total_periods = 50;
  c.record_stride = 10;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

fs::path scratch_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("scduff_harness_" + name);
  fs::remove_all(d);
  return d;
}

}  // namespace

TEST(SweepSpec, CellOrderIsGammaMajor) {
  SweepSpec s;
  s.gammas = {0.05, 0.1};
  s.betas = {0.01, 0.05, 0.15};
  s.phis = {0.0, std::numbers::pi / 2};
  s.seeds = 3;
  EXPECT_EQ(s.cell_count(), 12u);
  EXPECT_EQ(s.task_count(), 36u);
  std::size_t c = 0;
  for (double gm : s.gammas)
    for (double b : s.betas)
      for (double ph : s.phis) {
        const ModelParams m = s.cell_params(c++);
        EXPECT_EQ(m.gamma, gm);
        EXPECT_EQ(m.beta, b);
        EXPECT_EQ(m.phi, ph);
        EXPECT_EQ(m.g, calibrated_g);
        EXPECT_FALSE(m.classical);
      }
}

TEST(SweepSpec, StreamPolicy) {
  SweepSpec s;
  s.gammas = {0.1};
  s.betas = {0.1};
  s.phis = {0.0, 1.0};
  EXPECT_EQ(s.stream_id(0, 4), 4u);
  EXPECT_EQ(s.stream_id(1, 4), 4u);
  s.paired_noise = false;
  EXPECT_EQ(s.stream_id(0, 4), 4u);
  EXPECT_EQ(s.stream_id(1, 4), (std::uint64_t{1} << 32) | 4u);
}

TEST(SweepSpec, FreezeOnlyInClassicalMode) {
  SweepSpec s;
  s.gammas = {0.1};
  s.betas = {0.1};
  s.phis = {0.0};
  EXPECT_FALSE(s.cell_params(0).freeze_spread);
  s.classical_mode = true;
  EXPECT_TRUE(s.cell_params(0).classical);
  EXPECT_TRUE(s.cell_params(0).freeze_spread);
}

TEST(SweepSpec, ValidateRejects) {
  SweepSpec ok;
  ok.gammas = {0.1};
  ok.betas = {0.1};
  ok.phis = {0.0};
  EXPECT_NO_THROW(ok.validate());
  auto bad = ok;
  bad.betas.clear();
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = ok;
  bad.seeds = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = ok;
  bad.workers = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = ok;
  bad.betas = {-0.1};
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = ok;
  bad.config.steps_per_period = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_THROW(run_sweep(bad), ConfigError);
}

TEST(RunSweep, SingleCellEqualsDirectRun) {
  SweepSpec s;
  s.gammas = {0.1};
  s.betas = {0.15};
  s.phis = {std::numbers::pi / 2};
  s.base_seed = 77;
  s.config = quick_config();
  s.config.record_stride = 1;
  const auto recs = run_sweep(s);
  ASSERT_EQ(recs.size(), 1u);
  const SweepRecord& r = recs[0];
  ASSERT_TRUE(r.ok()) << r.abort_reason;

  const ModelParams m(0.15, 0.1, calibrated_g, calibrated_omega, std::numbers::pi / 2);
  const NoiseStream stream(77, 0);
  Trajectory tr;
  const LyapunovEstimate l = lyapunov(default_initial(m.beta), m, s.config, stream, {}, &tr);
  EXPECT_EQ(r.lyapunov.lambda, l.lambda);
  EXPECT_EQ(r.lyapunov.standard_error, l.standard_error);

  const Trajectory plain = integrate(default_initial(m.beta), m, s.config, stream);
  const TrajectoryStats st = trajectory_stats(plain);
  EXPECT_EQ(r.stats->u2_bar, st.u2_bar);
  EXPECT_EQ(r.stats->chi_range, st.chi_range);
  const EnergyLedger e = energy_ledger(plain);
  EXPECT_NEAR(r.energy->mean_drive, e.mean_drive, 1e-12 * std::abs(e.mean_drive));
  EXPECT_NEAR(r.energy->mean_dissipation, e.mean_dissipation, 1e-12 * std::abs(e.mean_dissipation));
  EXPECT_EQ(r.section_points, poincare(plain, 0.0).size());
}

TEST(RunSweep, ByteIdenticalAcrossWorkerCounts) {
  SweepSpec s;
  s.gammas = {0.05, 0.1};
  s.betas = {0.15};
  s.phis = {0.0, std::numbers::pi / 2};
  s.seeds = 2;
  s.config = quick_config();
  const fs::path a = scratch_dir("w1"), b = scratch_dir("w3");
  s.out_dir = a;
  s.workers = 1;
  run_sweep(s);
  s.out_dir = b;
  s.workers = 3;
  run_sweep(s);
  EXPECT_EQ(slurp(a / "summary.csv"), slurp(b / "summary.csv"));
  EXPECT_EQ(slurp(a / "manifest.json"), slurp(b / "manifest.json"));
  int files = 0;
  for (const auto& e : fs::directory_iterator(a / "cells")) {
    ++files;
    EXPECT_EQ(slurp(e.path()), slurp(b / "cells" / e.path().filename())) << e.path();
  }
  EXPECT_EQ(files, 8);
  EXPECT_TRUE(fs::exists(a / "timing.csv"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(RunSweep, ManifestRecordsSeedsAndCalibration) {
  SweepSpec s;
  s.gammas = {0.1};
  s.betas = {0.1};
  s.phis = {0.0, 1.0};
  s.seeds = 2;
  s.base_seed = 9;
  s.paired_noise = false;
  const json j = sweep_manifest(s);
  EXPECT_EQ(j["calibrated"]["g"], calibrated_g);
  EXPECT_EQ(j["calibrated"]["omega"], calibrated_omega);
  EXPECT_EQ(j["version"], version_string);
  ASSERT_EQ(j["streams"].size(), 4u);
  EXPECT_EQ(j["streams"][3]["seed"], 9u);
  EXPECT_EQ(j["streams"][3]["stream_id"], (std::uint64_t{1} << 32) | 1u);
  EXPECT_FALSE(j["model"].contains("beta"));
}

TEST(RunSweep, PartialFailureIsRecorded) {
  SweepSpec s;
  s.gammas = {1.0, 20.0};
  s.betas = {0.1};
  s.phis = {0.0};
  s.config = quick_config();
  s.config.steps_per_period = 200;
  s.config.max_halvings = 0;
  s.config.record_stride = 1;
  const fs::path d = scratch_dir("partial");
  s.out_dir = d;
  const auto recs = run_sweep(s);
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_TRUE(recs[0].ok());
  EXPECT_FALSE(recs[1].ok());
  EXPECT_EQ(recs[1].status, RunStatus::singularity);
  EXPECT_FALSE(recs[1].stats.has_value());
  EXPECT_TRUE(fs::exists(d / "cells" / "cell0_seed0_poincare.csv"));
  EXPECT_FALSE(fs::exists(d / "cells" / "cell1_seed0_poincare.csv"));

  std::istringstream is(slurp(d / "summary.csv"));
  std::string header, row0, row1;
  std::getline(is, header);
  std::getline(is, row0);
  std::getline(is, row1);
  const auto commas = [](const std::string& l) { return std::count(l.begin(), l.end(), ','); };
  EXPECT_EQ(commas(row0), commas(header));
  EXPECT_EQ(commas(row1), commas(header));
  EXPECT_NE(row1.find(",singularity,singularity at t="), std::string::npos) << row1;
  fs::remove_all(d);
}

TEST(RunSweep, IoErrorWhenOutputBlocked) {
  const fs::path d = scratch_dir("blocked");
  fs::create_directories(d);
  std::ofstream(d / "file") << "x";
  SweepSpec s;
  s.gammas = {0.1};
  s.betas = {0.1};
  s.phis = {0.0};
  s.config = quick_config();
  s.out_dir = d / "file" / "out";
  EXPECT_THROW(run_sweep(s), IoError);
  fs::remove_all(d);
}

TEST(ClassicalReference, BetaInvariance) {
  IntegratorConfig c = quick_config();
  c.record_stride = 1;
  const CellResult a = classical_reference(0.1, calibrated_g, calibrated_omega, c, 3, 0.1);
  const CellResult b = classical_reference(0.1, calibrated_g, calibrated_omega, c, 3, 0.05);
  ASSERT_TRUE(a.record.ok());
  ASSERT_TRUE(b.record.ok());
  ASSERT_EQ(a.trajectory.samples.size(), b.trajectory.samples.size());
  for (std::size_t i = 0; i < a.trajectory.samples.size(); ++i) {
    const State& sa = a.trajectory.samples[i].state;
    const State& sb = b.trajectory.samples[i].state;
    EXPECT_NEAR(sb.x, 2 * sa.x, 1e-9 * std::abs(sb.x) + 1e-12);
    EXPECT_NEAR(sb.p, 2 * sa.p, 1e-9 * std::abs(sb.p) + 1e-12);
  }
  const double se = std::hypot(a.record.lyapunov.standard_error, b.record.lyapunov.standard_error);
  EXPECT_LE(std::abs(a.record.lyapunov.lambda - b.record.lyapunov.lambda), se);
}

TEST(ClassicalReference, SpreadFrozenOrPassive) {
  IntegratorConfig c = quick_config();
  c.chi_step_tol = 0.0;
  const CellResult frozen = classical_reference(0.1, calibrated_g, calibrated_omega, c, 1);
  const CellResult passive = classical_reference(0.1, calibrated_g, calibrated_omega, c, 1, 0.1, false);
  ASSERT_TRUE(frozen.record.ok());
  ASSERT_TRUE(passive.record.ok());
  EXPECT_EQ(frozen.record.stats->chi_range, 0.0);
  EXPECT_GT(passive.record.stats->chi_range, 0.0);
  ASSERT_EQ(passive.record.refined_steps, 0);
  // The centroid does not see the spread in classical mode.
  EXPECT_EQ(frozen.trajectory.samples.back().state.x, passive.trajectory.samples.back().state.x);
}

TEST(Calibrate, PinnedAmplitudePasses) {
  IntegratorConfig c;
  c.steps_per_period = 1000;
  c.transient_periods = 200;
  c.total_periods = 600;
  c.record_stride = 10;
  const CalibrationResult r = calibrate(calibrated_g, calibrated_g, 1, calibrated_omega, c);
  ASSERT_EQ(r.rows.size(), 1u);
  EXPECT_TRUE(r.rows[0].pass) << "high " << r.rows[0].high.lambda << " low " << r.rows[0].low.lambda << " ratio "
                              << r.rows[0].cluster_ratio;
  ASSERT_TRUE(r.chosen_g.has_value());
  EXPECT_EQ(*r.chosen_g, calibrated_g);
  EXPECT_THROW(calibrate(0.4, 0.2, 3, 1.0, c), ConfigError);
}

#pragma once

// Sweep engine: runs a (gamma, beta, phi) grid times a seed ensemble on a
// pool of workers, writes per-cell Poincare sections as cells finish and a
// summary table plus manifest in deterministic cell order at the end.
//
// Seed policy: every trajectory uses NoiseStream(base_seed, stream_id). With
// paired_noise (the default) stream_id is the seed index, so all cells that
// share a seed index see the same Wiener realisation and phi = 0 vs pi/2
// comparisons are paired. Without it, stream_id = (cell << 32) | seed_index.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "scduff/diagnostics.hpp"
#include "scduff/integrator.hpp"
#include "scduff/io.hpp"
#include "scduff/model.hpp"
#include "scduff/random.hpp"

namespace scduff {

/// Drive parameters pinned by the calibration scan (classical baselines:
/// Gamma = 0.10 chaotic, Gamma = 0.05 on a periodic inter-well orbit).
inline constexpr double calibrated_g = 0.3;
inline constexpr double calibrated_omega = 1.0;

struct SweepSpec {
  std::vector<double> gammas;
  std::vector<double> betas;
  std::vector<double> phis;
  int seeds = 1;
  std::uint64_t base_seed = 1;
  double g = calibrated_g;
  double omega = calibrated_omega;
  CouplingSign coupling_sign = CouplingSign::hamiltonian;
  MomentumDamping momentum_damping = MomentumDamping::momentum;
  bool classical_mode = false;
  bool freeze_spread = true;  // only meaningful in classical mode
  bool paired_noise = true;
  IntegratorConfig config;
  LyapunovOptions lyapunov;
  std::optional<State> initial;  // default: default_initial(beta) per cell
  double section_phase = 0.0;
  std::filesystem::path out_dir;  // empty: keep everything in memory
  bool write_sections = true;
  int workers = 1;

  std::size_t cell_count() const { return gammas.size() * betas.size() * phis.size(); }
  std::size_t task_count() const { return cell_count() * static_cast<std::size_t>(std::max(seeds, 0)); }

  void validate() const {
    if (gammas.empty() || betas.empty() || phis.empty()) throw ConfigError("sweep grids must be non-empty");
    if (seeds < 1) throw ConfigError("seeds must be >= 1");
    if (workers < 1) throw ConfigError("workers must be >= 1");
    try {
      config.validate();
      for (double gm : gammas)
        for (double b : betas)
          for (double ph : phis) ModelParams(b, gm, g, omega, ph).validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }

  /// Model parameters of cell `c` (gamma-major, then beta, then phi).
  ModelParams cell_params(std::size_t c) const {
    const std::size_t np = phis.size(), nb = betas.size();
    ModelParams m(betas[(c / np) % nb], gammas[c / (np * nb)], g, omega, phis[c % np]);
    m.coupling_sign = coupling_sign;
    m.momentum_damping = momentum_damping;
    m.classical = classical_mode;
    m.freeze_spread = classical_mode && freeze_spread;
    return m;
  }

  std::uint64_t stream_id(std::size_t cell, int seed_index) const {
    const auto s = static_cast<std::uint64_t>(seed_index);
    return paired_noise ? s : (static_cast<std::uint64_t>(cell) << 32) | s;
  }
};

struct SweepRecord {
  std::size_t cell = 0;
  double gamma = 0, beta = 0, phi = 0;
  bool classical = false;
  int seed_index = 0;
  std::uint64_t seed = 0;
  std::uint64_t stream_id = 0;
  RunStatus status = RunStatus::completed;
  std::string abort_reason;  // empty when the run is usable
  LyapunovEstimate lyapunov;
  std::optional<TrajectoryStats> stats;
  std::optional<EnergyLedger> energy;  // sums and means only
  std::size_t section_points = 0;
  double section_diameter = 0;  // largest (x, p) distance between section points
  double section_diagonal = 0;  // (x, p) bounding-box diagonal of the section
  std::int64_t refined_steps = 0;
  std::size_t guard_events = 0;
  double wall_seconds = 0;

  bool ok() const { return abort_reason.empty(); }
};

/// Everything a single cell produces; the section is kept for callers that
/// want the points themselves.
struct CellResult {
  SweepRecord record;
  std::vector<SectionPoint> section;
  Trajectory trajectory;  // fiducial, recorded at config.record_stride
};

/// Integrate one trajectory with its Lyapunov shadow and reduce it.
inline CellResult run_cell(const ModelParams& m, const IntegratorConfig& config, const NoiseStream& stream,
                           const LyapunovOptions& lopts, const std::optional<State>& initial = std::nullopt,
                           double section_phase = 0.0) {
  const auto t0 = std::chrono::steady_clock::now();
  CellResult out;
  SweepRecord& r = out.record;
  r.gamma = m.gamma;
  r.beta = m.beta;
  r.phi = m.phi;
  r.classical = m.classical;
  r.seed = stream.seed();
  r.stream_id = stream.stream_id();

  LedgerAccumulator ledger(m, config);
  const State x0 = initial.value_or(default_initial(m.beta));
  r.lyapunov = lyapunov(x0, m, config, stream, lopts, &out.trajectory, ledger);
  const Trajectory& tr = out.trajectory;
  r.status = tr.status;
  r.refined_steps = tr.refined_steps;
  for (const Event& e : tr.events)
    if (e.kind == EventKind::guard) ++r.guard_events;

  if (!tr.ok()) {
    r.abort_reason = std::string(to_string(tr.status)) + " at t=" + fmt(tr.abort_time.value_or(0.0));
  } else if (!r.lyapunov.valid) {
    r.abort_reason = r.lyapunov.failure;
  } else {
    r.stats = trajectory_stats(tr);
    r.energy = ledger.result();
    out.section = poincare(tr, section_phase);
    r.section_points = out.section.size();
    r.section_diameter = cluster_diameter(out.section);
    r.section_diagonal = bounding_box(out.section).diagonal();
  }
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

inline std::string cell_file_stem(const SweepRecord& r) {
  return "cell" + std::to_string(r.cell) + "_seed" + std::to_string(r.seed_index);
}

inline void write_summary_csv(std::ostream& os, const std::vector<SweepRecord>& records) {
  os << "cell,gamma,beta,phi,seed_index,seed,stream_id,status,abort_reason,lambda,lambda_se,n_blocks,converged,"
        "regime,u1_bar,u2_bar,u12_bar,h_bar,delta_h,chi_q05,chi_q50,chi_q95,chi_range,mean_dE_g,mean_dE_Gamma,"
        "mean_dE_sqrtGamma,mean_dE_H,balance_error,section_points,section_diameter,section_diagonal,"
        "refined_steps,guard_events\n";
  for (const SweepRecord& r : records) {
    os << r.cell << ',' << fmt(r.gamma) << ',' << fmt(r.beta) << ',' << fmt(r.phi) << ',' << r.seed_index << ','
       << r.seed << ',' << r.stream_id << ',' << to_string(r.status) << ',' << r.abort_reason << ',';
    if (r.ok()) {
      const auto& l = r.lyapunov;
      const auto& s = *r.stats;
      const auto& e = *r.energy;
      os << fmt(l.lambda) << ',' << fmt(l.standard_error) << ',' << l.n_blocks << ',' << (l.converged ? 1 : 0)
         << ',' << to_string(l.regime()) << ',' << fmt(s.u1_bar) << ',' << fmt(s.u2_bar) << ','
         << fmt(s.u12_bar) << ',' << fmt(s.h_bar) << ',' << fmt(s.delta_h) << ',' << fmt(s.chi_q05) << ','
         << fmt(s.chi_q50) << ',' << fmt(s.chi_q95) << ',' << fmt(s.chi_range) << ',' << fmt(e.mean_drive)
         << ',' << fmt(e.mean_dissipation) << ',' << fmt(e.mean_noise) << ',' << fmt(e.mean_hamiltonian) << ','
         << fmt(e.balance_error()) << ',';
    } else {
      os << ",,,,,,,,,,,,,,,,,,,";
    }
    os << r.section_points << ',' << fmt(r.section_diameter) << ',' << fmt(r.section_diagonal) << ','
       << r.refined_steps << ',' << r.guard_events << '\n';
  }
}

inline json sweep_manifest(const SweepSpec& spec) {
  json seeds = json::array();
  for (std::size_t c = 0; c < spec.cell_count(); ++c)
    for (int s = 0; s < spec.seeds; ++s)
      seeds.push_back({{"cell", c}, {"seed_index", s}, {"seed", spec.base_seed}, {"stream_id", spec.stream_id(c, s)}});
  ModelParams proto = spec.cell_params(0);
  json model = to_json(proto);
  model.erase("beta");
  model.erase("gamma");
  model.erase("phi");
  return json{{"version", version_string},
              {"noise_version", noise_version},
              {"calibrated", {{"g", spec.g}, {"omega", spec.omega}}},
              {"model", model},
              {"integrator", to_json(spec.config)},
              {"lyapunov",
               {{"d0", spec.lyapunov.d0}, {"renorm_steps", spec.lyapunov.renorm_steps},
                {"n_blocks", spec.lyapunov.n_blocks}}},
              {"sweep",
               {{"gammas", spec.gammas}, {"betas", spec.betas}, {"phis", spec.phis}, {"seeds", spec.seeds},
                {"base_seed", spec.base_seed}, {"paired_noise", spec.paired_noise},
                {"classical_mode", spec.classical_mode}, {"freeze_spread", spec.freeze_spread},
                {"section_phase", spec.section_phase}}},
              {"initial", spec.initial ? to_json(*spec.initial) : json("default")},
              {"streams", seeds}};
}

/// Run every cell x seed. Records come back in task order regardless of the
/// worker count. Simulation aborts are recorded per task; I/O failures throw
/// IoError once all workers have stopped.
inline std::vector<SweepRecord> run_sweep(const SweepSpec& spec) {
  spec.validate();
  const std::size_t n_tasks = spec.task_count();
  std::vector<SweepRecord> records(n_tasks);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> io_failed{false};
  std::mutex err_mu;
  std::string io_error;

  if (!spec.out_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(spec.out_dir / "cells", ec);
    if (ec) throw IoError("cannot create " + (spec.out_dir / "cells").string() + ": " + ec.message());
  }

  auto work = [&] {
    for (;;) {
      const std::size_t task = next.fetch_add(1);
      if (task >= n_tasks || io_failed.load()) return;
      const std::size_t cell = task / static_cast<std::size_t>(spec.seeds);
      const int seed_index = static_cast<int>(task % static_cast<std::size_t>(spec.seeds));
      const ModelParams m = spec.cell_params(cell);
      const NoiseStream stream(spec.base_seed, spec.stream_id(cell, seed_index));
      CellResult res = run_cell(m, spec.config, stream, spec.lyapunov, spec.initial, spec.section_phase);
      res.record.cell = cell;
      res.record.seed_index = seed_index;
      if (!spec.out_dir.empty() && spec.write_sections && res.record.ok()) {
        try {
          const auto path = spec.out_dir / "cells" / (cell_file_stem(res.record) + "_poincare.csv");
          auto os = open_out(path);
          write_poincare_csv(os, res.section);
          check_written(os, path);
        } catch (const IoError& e) {
          std::lock_guard lk(err_mu);
          io_error = e.what();
          io_failed = true;
        }
      }
      records[task] = std::move(res.record);
    }
  };

  const int n_workers = std::max(1, std::min<int>(spec.workers, static_cast<int>(n_tasks)));
  if (n_workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(static_cast<std::size_t>(n_workers));
    for (int i = 0; i < n_workers; ++i) pool.emplace_back(work);
  }
  if (io_failed) throw IoError(io_error);

  if (!spec.out_dir.empty()) {
    const auto summary = spec.out_dir / "summary.csv";
    auto os = open_out(summary);
    write_summary_csv(os, records);
    check_written(os, summary);

    const auto manifest = spec.out_dir / "manifest.json";
    auto ms = open_out(manifest);
    ms << sweep_manifest(spec).dump(2) << '\n';
    check_written(ms, manifest);

    // Wall-clock lives apart from the deterministic outputs.
    const auto timing = spec.out_dir / "timing.csv";
    auto ts = open_out(timing);
    ts << "cell,seed_index,wall_seconds,workers\n";
    for (const auto& r : records) ts << r.cell << ',' << r.seed_index << ',' << fmt(r.wall_seconds) << ',' << n_workers << '\n';
    check_written(ts, timing);
  }
  return records;
}

/// Classical damped driven Duffing baseline: no chi-to-centroid force, no
/// centroid noise, spread frozen unless `freeze_spread` is false.
inline CellResult classical_reference(double gamma, double g, double omega, const IntegratorConfig& config,
                                      std::uint64_t seed, double beta = 0.1, bool freeze_spread = true,
                                      const LyapunovOptions& lopts = {}) {
  ModelParams m(beta, gamma, g, omega, 0.0);
  m.classical = true;
  m.freeze_spread = freeze_spread;
  return run_cell(m, config, NoiseStream(seed, 0), lopts);
}

// ---------------------------------------------------------------- calibration

struct CalibrationRow {
  double g = 0;
  LyapunovEstimate high;  // Gamma = 0.10
  LyapunovEstimate low;   // Gamma = 0.05
  double cluster_ratio = 0;  // low-Gamma section diameter / high-Gamma section diagonal
  bool pass = false;
};

struct CalibrationResult {
  std::vector<CalibrationRow> rows;
  std::optional<double> chosen_g;  // passing g closest to the preferred value
  double omega = 1.0;
};

/// Scan drive amplitudes for the one that reproduces the classical regimes:
/// Gamma = 0.10 chaotic, Gamma = 0.05 regular with a collapsed section
/// (diameter below 5% of the chaotic section's diagonal).
inline CalibrationResult calibrate(double g_lo, double g_hi, int n_points, double omega,
                                   const IntegratorConfig& config, double preferred_g = calibrated_g,
                                   double beta = 0.1, int workers = 1) {
  if (n_points < 1 || !(g_hi >= g_lo)) throw ConfigError("calibrate: need n_points >= 1 and g_hi >= g_lo");
  CalibrationResult res;
  res.omega = omega;
  res.rows.resize(static_cast<std::size_t>(n_points));
  std::atomic<int> next{0};
  auto work = [&] {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= n_points) return;
      CalibrationRow& row = res.rows[static_cast<std::size_t>(i)];
      row.g = n_points == 1 ? g_lo : grid_point(g_lo, g_hi, i, n_points);
      const CellResult hi = classical_reference(0.10, row.g, omega, config, 0, beta);
      const CellResult lo = classical_reference(0.05, row.g, omega, config, 0, beta);
      row.high = hi.record.lyapunov;
      row.low = lo.record.lyapunov;
      const double diag = hi.record.section_diagonal;
      row.cluster_ratio = diag > 0.0 ? lo.record.section_diameter / diag : INFINITY;
      row.pass = hi.record.ok() && lo.record.ok() &&
                 row.high.regime() == LyapunovEstimate::Regime::chaotic &&
                 row.low.regime() == LyapunovEstimate::Regime::regular && row.cluster_ratio < 0.05;
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (int i = 0; i < std::min(workers, n_points); ++i) pool.emplace_back(work);
  }
  for (const auto& row : res.rows)
    if (row.pass && (!res.chosen_g || std::abs(row.g - preferred_g) < std::abs(*res.chosen_g - preferred_g)))
      res.chosen_g = row.g;
  return res;
}

}  // namespace scduff

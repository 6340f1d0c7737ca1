// scduff: command-line front end for single trajectories, diagnostics,
// sweeps and the drive calibration scan.
//
// Exit status: 0 success, 1 usage or configuration error, 2 I/O error,
// 3 nothing usable was produced (every sweep task failed, the single run
// aborted, or calibration found no passing amplitude).

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "scduff/harness.hpp"

namespace fs = std::filesystem;
using namespace scduff;

namespace {

constexpr int exit_config = 1;
constexpr int exit_io = 2;
constexpr int exit_nothing = 3;

struct Overrides {
  std::string config_file;
  std::optional<std::uint64_t> seed, stream;
  std::optional<int> workers;
  std::optional<std::string> out_dir;

  std::optional<double> beta, gamma, g, omega, phi;
  std::optional<std::string> coupling_sign, momentum_damping;
  std::optional<bool> classical, freeze_spread;

  std::optional<int> steps_per_period, transient, periods, record_stride, max_halvings;
  std::optional<double> chi_min, chi_step_tol;

  std::optional<double> d0;
  std::optional<int> renorm_steps, n_blocks;
};

struct Setup {
  ModelParams model;
  IntegratorConfig config;
  std::optional<State> initial;
  LyapunovOptions lyapunov;
  json sweep = json::object();
  std::uint64_t seed = 1;
  std::uint64_t stream = 0;
  int workers = 1;
  fs::path out_dir = ".";

  State start() const { return initial.value_or(default_initial(model.beta)); }
  NoiseStream noise() const { return NoiseStream(seed, stream); }
};

template <class T>
void set_if(const std::optional<T>& v, T& out) {
  if (v) out = *v;
}

Setup resolve(const Overrides& o) {
  Setup s;
  json file = json::object();
  if (!o.config_file.empty()) file = read_json_file(o.config_file);
  if (!file.is_object()) throw ConfigError("config file must hold a JSON object");
  const auto section = [&](const char* key) {
    if (!file.contains(key)) return json::object();
    if (!file.at(key).is_object()) throw ConfigError(std::string("config section '") + key + "' must be an object");
    return file.at(key);
  };

  apply_json(section("model"), s.model);
  apply_json(section("integrator"), s.config);
  if (file.contains("initial")) {
    State st = default_initial(s.model.beta);
    apply_json(section("initial"), st);
    s.initial = st;
  }
  const json ly = section("lyapunov");
  detail::read_field(ly, "d0", s.lyapunov.d0);
  detail::read_field(ly, "renorm_steps", s.lyapunov.renorm_steps);
  detail::read_field(ly, "n_blocks", s.lyapunov.n_blocks);
  s.sweep = section("sweep");
  detail::read_field(file, "seed", s.seed);
  detail::read_field(file, "stream", s.stream);
  detail::read_field(file, "workers", s.workers);
  if (file.contains("out_dir")) s.out_dir = detail::read_string(file, "out_dir");

  set_if(o.seed, s.seed);
  set_if(o.stream, s.stream);
  set_if(o.workers, s.workers);
  if (o.out_dir) s.out_dir = *o.out_dir;

  set_if(o.beta, s.model.beta);
  set_if(o.gamma, s.model.gamma);
  set_if(o.g, s.model.g);
  set_if(o.omega, s.model.omega);
  if (o.phi) s.model.set_phi(*o.phi);
  if (o.coupling_sign) apply_json(json{{"coupling_sign", *o.coupling_sign}}, s.model);
  if (o.momentum_damping) apply_json(json{{"momentum_damping", *o.momentum_damping}}, s.model);
  set_if(o.classical, s.model.classical);
  set_if(o.freeze_spread, s.model.freeze_spread);

  set_if(o.steps_per_period, s.config.steps_per_period);
  set_if(o.transient, s.config.transient_periods);
  set_if(o.periods, s.config.total_periods);
  set_if(o.record_stride, s.config.record_stride);
  set_if(o.max_halvings, s.config.max_halvings);
  set_if(o.chi_min, s.config.chi_min);
  set_if(o.chi_step_tol, s.config.chi_step_tol);

  set_if(o.d0, s.lyapunov.d0);
  set_if(o.renorm_steps, s.lyapunov.renorm_steps);
  set_if(o.n_blocks, s.lyapunov.n_blocks);

  if (s.workers < 1) throw ConfigError("workers must be >= 1");
  try {
    s.model.validate();
    s.config.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return s;
}

void write_file(const fs::path& path, const auto& writer) {
  auto os = open_out(path);
  writer(os);
  check_written(os, path);
  std::cout << path.string() << '\n';
}

int report_abort(const Trajectory& tr) {
  std::cerr << "run aborted: " << to_string(tr.status) << " at t=" << fmt(tr.abort_time.value_or(0.0)) << '\n';
  return exit_nothing;
}

// ---------------------------------------------------------------- simulate

struct GridOptions {
  bool potential = false, force = false;
  std::vector<double> x_range, chi_range, pi_range, force_chi_range;
  int nx = 101, nchi = 101, npi = 41, nforce_chi = 41;
  double t = 0.0;
};

int cmd_simulate(const Setup& s, bool binary, const GridOptions& grid) {
  if (grid.potential || grid.force) {
    if (grid.potential) {
      const double b = s.model.beta;
      const std::vector<double> xr = grid.x_range.empty() ? std::vector<double>{-2 / b, 2 / b} : grid.x_range;
      const std::vector<double> cr = grid.chi_range.empty() ? std::vector<double>{0.1, 1.5 / b} : grid.chi_range;
      write_file(s.out_dir / "potential_grid.csv", [&](std::ostream& os) {
        write_potential_grid_csv(os, s.model, grid.t, xr[0], xr[1], cr[0], cr[1], grid.nx, grid.nchi);
      });
    }
    if (grid.force) {
      const std::vector<double> cr =
          grid.force_chi_range.empty() ? std::vector<double>{0.2, 3.0} : grid.force_chi_range;
      const std::vector<double> pr = grid.pi_range.empty() ? std::vector<double>{-2.0, 2.0} : grid.pi_range;
      write_file(s.out_dir / "force_grid.csv", [&](std::ostream& os) {
        write_force_grid_csv(os, cr[0], cr[1], pr[0], pr[1], grid.nforce_chi, grid.npi);
      });
    }
    return 0;
  }

  const Trajectory tr = integrate(s.start(), s.model, s.config, s.noise());
  if (binary) {
    const fs::path path = s.out_dir / "trajectory.bin";
    auto os = open_out(path, std::ios::out | std::ios::binary);
    write_trajectory_binary(os, tr);
    check_written(os, path);
    std::cout << path.string() << '\n';
  } else {
    write_file(s.out_dir / "trajectory.csv", [&](std::ostream& os) { write_trajectory_csv(os, tr); });
  }
  if (!tr.ok()) return report_abort(tr);
  write_file(s.out_dir / "stats.csv", [&](std::ostream& os) { write_stats_csv(os, trajectory_stats(tr)); });
  return 0;
}

// ---------------------------------------------------------------- diagnostics

int cmd_poincare(const Setup& s, double phase) {
  const Trajectory tr = integrate(s.start(), s.model, s.config, s.noise());
  if (!tr.ok()) return report_abort(tr);
  write_file(s.out_dir / "poincare.csv", [&](std::ostream& os) { write_poincare_csv(os, poincare(tr, phase)); });
  return 0;
}

int cmd_lyapunov(const Setup& s) {
  const LyapunovEstimate l = lyapunov(s.start(), s.model, s.config, s.noise(), s.lyapunov);
  if (!l.valid) {
    std::cerr << "lyapunov estimate invalid: " << l.failure << '\n';
    return exit_nothing;
  }
  const json out{{"lambda", l.lambda},
                 {"standard_error", l.standard_error},
                 {"n_blocks", l.n_blocks},
                 {"n_renorm", l.n_renorm},
                 {"converged", l.converged},
                 {"regime", to_string(l.regime())},
                 {"seed", s.seed},
                 {"stream_id", s.stream}};
  std::cout << out.dump(2) << '\n';
  return 0;
}

int cmd_energy(const Setup& s) {
  LedgerAccumulator acc(s.model, s.config);
  const Trajectory tr = integrate(s.start(), s.model, s.config, s.noise(), acc);
  if (!tr.ok()) return report_abort(tr);
  write_file(s.out_dir / "ledger.csv", [&](std::ostream& os) { write_ledger_csv(os, energy_ledger(tr)); });
  const EnergyLedger e = acc.result();
  const json out{{"mean_dE_g", e.mean_drive},
                 {"mean_dE_Gamma", e.mean_dissipation},
                 {"mean_dE_sqrtGamma", e.mean_noise},
                 {"mean_dE_H", e.mean_hamiltonian},
                 {"balance_error", e.balance_error()},
                 {"max_closure", e.max_closure},
                 {"window", e.window},
                 {"steps", e.n_steps}};
  std::cout << out.dump(2) << '\n';
  return 0;
}

// ---------------------------------------------------------------- sweep

struct SweepFlags {
  std::vector<double> gammas, betas, phis;
  std::optional<int> seeds;
  std::optional<bool> classical, unpaired, no_sections;
  std::optional<double> phase;
};

SweepSpec sweep_spec(const Setup& s, const SweepFlags& f) {
  SweepSpec spec;
  const json& j = s.sweep;
  const auto list = [&](const char* key, std::vector<double>& out) {
    if (!j.contains(key)) return;
    if (!j.at(key).is_array()) throw ConfigError(std::string("sweep.") + key + " must be an array");
    for (const auto& v : j.at(key)) {
      if (!v.is_number()) throw ConfigError(std::string("sweep.") + key + " must hold numbers");
      out.push_back(v.get<double>());
    }
  };
  list("gammas", spec.gammas);
  list("betas", spec.betas);
  list("phis", spec.phis);
  detail::read_field(j, "seeds", spec.seeds);
  detail::read_field(j, "paired_noise", spec.paired_noise);
  detail::read_field(j, "classical_mode", spec.classical_mode);
  detail::read_field(j, "freeze_spread", spec.freeze_spread);
  detail::read_field(j, "section_phase", spec.section_phase);
  detail::read_field(j, "write_sections", spec.write_sections);

  if (!f.gammas.empty()) spec.gammas = f.gammas;
  if (!f.betas.empty()) spec.betas = f.betas;
  if (!f.phis.empty()) spec.phis = f.phis;
  set_if(f.seeds, spec.seeds);
  set_if(f.classical, spec.classical_mode);
  if (f.unpaired) spec.paired_noise = !*f.unpaired;
  if (f.no_sections) spec.write_sections = !*f.no_sections;
  set_if(f.phase, spec.section_phase);

  spec.base_seed = s.seed;
  spec.g = s.model.g;
  spec.omega = s.model.omega;
  spec.coupling_sign = s.model.coupling_sign;
  spec.momentum_damping = s.model.momentum_damping;
  spec.config = s.config;
  spec.lyapunov = s.lyapunov;
  spec.initial = s.initial;
  spec.out_dir = s.out_dir;
  spec.workers = s.workers;
  return spec;
}

int cmd_sweep(const Setup& s, const SweepFlags& f) {
  const SweepSpec spec = sweep_spec(s, f);
  const auto records = run_sweep(spec);
  std::size_t ok = 0, chaotic = 0;
  for (const auto& r : records) {
    if (!r.ok()) continue;
    ++ok;
    if (r.lyapunov.regime() == LyapunovEstimate::Regime::chaotic) ++chaotic;
  }
  std::cout << "tasks " << records.size() << ", completed " << ok << ", chaotic " << chaotic << '\n'
            << (spec.out_dir / "summary.csv").string() << '\n';
  return ok == 0 ? exit_nothing : 0;
}

// ---------------------------------------------------------------- calibrate

int cmd_calibrate(const Setup& s, double g_lo, double g_hi, int points) {
  const CalibrationResult res =
      calibrate(g_lo, g_hi, points, s.model.omega, s.config, calibrated_g, s.model.beta, s.workers);
  write_file(s.out_dir / "calibration.csv", [&](std::ostream& os) {
    os << "g,lambda_high,se_high,lambda_low,se_low,cluster_ratio,pass\n";
    for (const auto& r : res.rows)
      os << fmt(r.g) << ',' << fmt(r.high.lambda) << ',' << fmt(r.high.standard_error) << ','
         << fmt(r.low.lambda) << ',' << fmt(r.low.standard_error) << ',' << fmt(r.cluster_ratio) << ','
         << (r.pass ? 1 : 0) << '\n';
  });
  if (!res.chosen_g) {
    std::cerr << "no amplitude in [" << fmt(g_lo) << ", " << fmt(g_hi) << "] reproduces both regimes\n";
    return exit_nothing;
  }
  std::cout << json{{"g", *res.chosen_g}, {"omega", res.omega}}.dump() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semiclassical driven Duffing oscillator under continuous measurement"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", version_string);

  Overrides o;
  app.add_option("--config", o.config_file, "JSON config (sections model, integrator, initial, lyapunov, sweep)")
      ->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "base seed");
  app.add_option("--stream", o.stream, "stream id for single runs");
  app.add_option("--workers", o.workers, "worker threads");
  app.add_option("--out-dir", o.out_dir, "output directory");

  auto* model = app.add_option_group("model");
  model->add_option("--beta", o.beta);
  model->add_option("--gamma", o.gamma);
  model->add_option("--g", o.g, "drive amplitude");
  model->add_option("--omega", o.omega, "drive frequency");
  model->add_option("--phi", o.phi, "measurement angle");
  model->add_option("--coupling-sign", o.coupling_sign)->check(CLI::IsMember({"hamiltonian", "printed"}));
  model->add_option("--momentum-damping", o.momentum_damping)->check(CLI::IsMember({"momentum", "literal"}));
  model->add_option("--classical", o.classical);
  model->add_option("--freeze-spread", o.freeze_spread);

  auto* integ = app.add_option_group("integrator");
  integ->add_option("--steps-per-period", o.steps_per_period);
  integ->add_option("--transient", o.transient, "transient periods");
  integ->add_option("--periods", o.periods, "total periods");
  integ->add_option("--record-stride", o.record_stride);
  integ->add_option("--max-halvings", o.max_halvings);
  integ->add_option("--chi-min", o.chi_min);
  integ->add_option("--chi-step-tol", o.chi_step_tol);

  auto* lyap = app.add_option_group("lyapunov");
  lyap->add_option("--d0", o.d0, "initial separation");
  lyap->add_option("--renorm-steps", o.renorm_steps);
  lyap->add_option("--blocks", o.n_blocks, "batch-means blocks");

  auto* sim = app.add_subcommand("simulate", "integrate one trajectory, or export model grids");
  bool binary = false;
  GridOptions grid;
  sim->add_flag("--binary", binary, "write trajectory.bin instead of trajectory.csv");
  sim->add_flag("--emit-potential-grid", grid.potential, "write potential_grid.csv and skip integration");
  sim->add_flag("--emit-force-grid", grid.force, "write force_grid.csv and skip integration");
  sim->add_option("--x-range", grid.x_range)->expected(2);
  sim->add_option("--chi-range", grid.chi_range)->expected(2);
  sim->add_option("--nx", grid.nx);
  sim->add_option("--nchi", grid.nchi);
  sim->add_option("--grid-time", grid.t, "drive time for the potential grid");
  sim->add_option("--force-chi-range", grid.force_chi_range)->expected(2);
  sim->add_option("--pi-range", grid.pi_range)->expected(2);
  sim->add_option("--force-nchi", grid.nforce_chi);
  sim->add_option("--npi", grid.npi);

  auto* poin = app.add_subcommand("poincare", "stroboscopic section of one trajectory");
  double phase = 0.0;
  poin->add_option("--phase", phase, "drive phase of the section");

  auto* lyp = app.add_subcommand("lyapunov", "common-noise Lyapunov exponent of one trajectory");
  auto* energy = app.add_subcommand("energy", "energy ledger of one trajectory");

  auto* sweep = app.add_subcommand("sweep", "gamma x beta x phi grid over a seed ensemble");
  SweepFlags sf;
  sweep->add_option("--gammas", sf.gammas);
  sweep->add_option("--betas", sf.betas);
  sweep->add_option("--phis", sf.phis);
  sweep->add_option("--seeds", sf.seeds, "seeds per cell");
  sweep->add_option("--classical-mode", sf.classical);
  sweep->add_option("--unpaired", sf.unpaired, "independent noise per cell");
  sweep->add_option("--no-sections", sf.no_sections);
  sweep->add_option("--section-phase", sf.phase);

  auto* cal = app.add_subcommand("calibrate", "scan the drive amplitude against the classical regimes");
  double g_lo = 0.2, g_hi = 0.4;
  int points = 11;
  cal->add_option("--g-lo", g_lo);
  cal->add_option("--g-hi", g_hi);
  cal->add_option("--points", points);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : exit_config;
  }

  try {
    const Setup s = resolve(o);
    if (*sim) return cmd_simulate(s, binary, grid);
    if (*poin) return cmd_poincare(s, phase);
    if (*lyp) return cmd_lyapunov(s);
    if (*energy) return cmd_energy(s);
    if (*sweep) return cmd_sweep(s, sf);
    if (*cal) return cmd_calibrate(s, g_lo, g_hi, points);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_io;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return exit_config;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return exit_config;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_config;
  }
  return 0;
}

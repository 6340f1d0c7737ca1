#pragma once

// Chaos and energetics analysis of trajectories: common-noise Lyapunov
// exponent, stroboscopic sections, the four-channel energy ledger and
// time-averaged potential statistics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "scduff/integrator.hpp"
#include "scduff/model.hpp"
#include "scduff/random.hpp"

namespace scduff {

// ---------------------------------------------------------------- Lyapunov

struct LyapunovEstimate {
  double lambda = 0.0;
  double standard_error = 0.0;
  int n_blocks = 0;
  bool converged = false;
  std::int64_t n_renorm = 0;
  bool valid = true;
  std::string failure;  // set when !valid

  enum class Regime { chaotic, regular, inconclusive };

  /// lambda beyond +-3 SE decides; anything in between is inconclusive.
  Regime regime() const {
    if (!valid) return Regime::inconclusive;
    if (lambda > 3.0 * standard_error) return Regime::chaotic;
    if (lambda < -3.0 * standard_error) return Regime::regular;
    return Regime::inconclusive;
  }
};

inline std::string to_string(LyapunovEstimate::Regime r) {
  switch (r) {
    case LyapunovEstimate::Regime::chaotic: return "chaotic";
    case LyapunovEstimate::Regime::regular: return "regular";
    case LyapunovEstimate::Regime::inconclusive: return "inconclusive";
  }
  return "unknown";
}

struct LyapunovOptions {
  double d0 = 0.0;        // <= 0 selects 1e-7 * max(1, 1/beta)
  int renorm_steps = 0;   // <= 0 selects one drive period
  int n_blocks = 20;
};

inline double default_separation(const ModelParams& m) { return 1e-7 * std::max(1.0, 1.0 / m.beta); }

/// Mean and batch-means standard error of a series of per-interval log
/// stretches, scaled to a rate by `interval`.
inline std::pair<double, double> batch_mean_rate(const std::vector<double>& logs, double interval,
                                                 int n_blocks) {
  const std::size_t n = logs.size();
  if (n == 0) return {0.0, 0.0};
  const double mean = std::accumulate(logs.begin(), logs.end(), 0.0) / static_cast<double>(n) / interval;
  const std::size_t nb = std::min<std::size_t>(static_cast<std::size_t>(std::max(n_blocks, 2)), n);
  if (nb < 2) return {mean, 0.0};
  const std::size_t len = n / nb;
  std::vector<double> means(nb);
  for (std::size_t b = 0; b < nb; ++b) {
    double acc = 0.0;
    for (std::size_t i = b * len; i < (b + 1) * len; ++i) acc += logs[i];
    means[b] = acc / static_cast<double>(len) / interval;
  }
  const double mu = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(nb);
  double ss = 0.0;
  for (double v : means) ss += (v - mu) * (v - mu);
  const double sd = std::sqrt(ss / static_cast<double>(nb - 1));
  return {mean, sd / std::sqrt(static_cast<double>(nb))};
}

/// Benettin two-trajectory estimate under common noise.
///
/// The fiducial runs through the transient alone; a shadow is then placed d0
/// away along a random direction and both are advanced with the same Wiener
/// increments; the shadow replays the fiducial's step subdivisions so both
/// see the same discretisation and the same Brownian path.
/// Every renormalisation interval the separation is logged and rescaled to d0.
/// If `fiducial` is non-null it receives the fiducial trajectory; `observe`
/// sees every fiducial step as in integrate().
template <class Observer = NoObserver>
LyapunovEstimate lyapunov(const State& initial, const ModelParams& params, const IntegratorConfig& config,
                          NoiseStream stream, const LyapunovOptions& opts = {}, Trajectory* fiducial = nullptr,
                          Observer&& observe = Observer{}) {
  params.validate();
  config.validate();
  if (!initial.valid() || !(initial.chi > config.chi_min))
    throw std::invalid_argument("lyapunov: invalid initial state");
  const double d0 = opts.d0 > 0.0 ? opts.d0 : default_separation(params);
  const int renorm = opts.renorm_steps > 0 ? opts.renorm_steps : config.steps_per_period;
  const bool spread_frozen = params.classical && params.freeze_spread;

  Trajectory tr;
  tr.params = params;
  tr.config = config;
  tr.seed = stream.seed();
  tr.stream_id = stream.stream_id();
  tr.h = config.step_size(params);
  const double h = tr.h;
  const std::int64_t n = config.total_steps();
  const std::int64_t n_transient = config.transient_steps();
  tr.samples.reserve(static_cast<std::size_t>(n / config.record_stride + 1));
  if (config.keep_increments) tr.increments.reserve(static_cast<std::size_t>(n));
  tr.samples.push_back({0, initial});

  LyapunovEstimate est;
  const std::uint64_t first = stream.counter();
  GuardedStepper stepper(params, config, stream);

  auto fail = [&](RunStatus st, std::int64_t k, double t, int depth, const char* who) {
    tr.status = st;
    tr.abort_time = t;
    tr.events.push_back({st == RunStatus::escape ? EventKind::escape : EventKind::singularity, k, t, depth});
    est.valid = false;
    est.failure = std::string(who) + " " + std::string(to_string(st)) + " at t=" + std::to_string(t);
  };

  State fid = initial;
  State shadow{};
  bool shadow_live = false;
  std::vector<double> logs;
  logs.reserve(static_cast<std::size_t>((n - n_transient) / renorm + 1));

  auto separation = [&](const State& a, const State& b) {
    const double dx = b.x - a.x, dp = b.p - a.p, dc = b.chi - a.chi, dq = b.pi - a.pi;
    return std::sqrt(dx * dx + dp * dp + dc * dc + dq * dq);
  };

  auto place_shadow = [&](std::uint64_t at) {
    // Random unit direction drawn from a reserved node range of this stream.
    double u[4];
    for (std::uint32_t i = 0; i < 4; ++i) u[i] = stream.normal_at(at, 0xFF00u + i);
    if (spread_frozen) u[2] = u[3] = 0.0;
    double norm = std::sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2] + u[3] * u[3]);
    shadow = fid;
    shadow.x += d0 * u[0] / norm;
    shadow.p += d0 * u[1] / norm;
    shadow.chi += d0 * u[2] / norm;
    shadow.pi += d0 * u[3] / norm;
    shadow_live = true;
  };

  if (n_transient == 0) place_shadow(first);
  std::int64_t since = 0;
  RefinementPlan plan;
  for (std::int64_t k = 0; k < n; ++k) {
    const std::uint64_t idx = first + static_cast<std::uint64_t>(k);
    const double dw = stream.wiener_increment(h);
    if (config.keep_increments) tr.increments.push_back(dw);
    const double t_end = initial.t + static_cast<double>(k + 1) * h;
    const auto f = stepper.advance(fid, idx, dw, h, t_end, &plan);
    if (f.depth > 0) ++tr.refined_steps;
    if (f.guard_hit) tr.events.push_back({EventKind::guard, k, fid.t, f.depth});
    if (f.status != RunStatus::completed) {
      fail(f.status, k, fid.t, f.depth, "fiducial");
      break;
    }
    if (shadow_live) {
      const auto s = stepper.replay(shadow, idx, dw, h, t_end, plan);
      if (s.status != RunStatus::completed) {
        est.valid = false;
        est.failure = "shadow " + std::string(to_string(s.status)) + " at t=" + std::to_string(shadow.t);
        shadow_live = false;
      } else {
        shadow = s.state;
      }
    }
    observe(k, fid, f.state);
    fid = f.state;
    if ((k + 1) % config.record_stride == 0) tr.samples.push_back({k + 1, fid});

    if (k + 1 == n_transient) {
      place_shadow(idx + 1);
      since = 0;
      continue;
    }
    if (shadow_live && ++since == renorm) {
      since = 0;
      const double d = separation(fid, shadow);
      if (!(d > 0.0) || !std::isfinite(d)) {
        est.valid = false;
        est.failure = "degenerate separation at t=" + std::to_string(fid.t);
        shadow_live = false;
        continue;
      }
      logs.push_back(std::log(d / d0));
      const double r = d0 / d;
      shadow.x = fid.x + r * (shadow.x - fid.x);
      shadow.p = fid.p + r * (shadow.p - fid.p);
      shadow.chi = fid.chi + r * (shadow.chi - fid.chi);
      shadow.pi = fid.pi + r * (shadow.pi - fid.pi);
    }
  }

  const double interval = renorm * h;
  est.n_renorm = static_cast<std::int64_t>(logs.size());
  if (logs.empty()) {
    if (est.valid) {
      est.valid = false;
      est.failure = "no renormalisation intervals after the transient";
    }
  } else {
    const auto [lam, se] = batch_mean_rate(logs, interval, opts.n_blocks);
    est.lambda = lam;
    est.standard_error = se;
    est.n_blocks = std::min<int>(std::max(opts.n_blocks, 2), static_cast<int>(logs.size()));
    // Converged when the estimate over the first three quarters agrees with the
    // full-window estimate.
    const std::size_t q = logs.size() * 3 / 4;
    if (q > 0) {
      const double early = std::accumulate(logs.begin(), logs.begin() + static_cast<long>(q), 0.0) /
                           static_cast<double>(q) / interval;
      est.converged = std::abs(early - lam) <= std::max(3.0 * se, 1e-3);
    }
  }
  if (fiducial) *fiducial = std::move(tr);
  return est;
}

inline LyapunovEstimate lyapunov(const ModelParams& params, const IntegratorConfig& config, NoiseStream stream,
                                 const LyapunovOptions& opts = {}) {
  return lyapunov(default_initial(params.beta), params, config, stream, opts);
}

// ---------------------------------------------------------------- Poincare

struct SectionPoint {
  State state;
  std::int64_t period_index;  // periods elapsed since the end of the transient
};

/// Post-transient samples at drive phase `phase` (omega t = phase mod 2pi).
/// Assumes the trajectory started on the drive grid (omega t0 a multiple of 2pi).
inline std::vector<SectionPoint> poincare(const Trajectory& tr, double phase) {
  if (!std::isfinite(phase)) throw std::invalid_argument("poincare: phase must be finite");
  const int spp = tr.config.steps_per_period;
  const auto offset = static_cast<std::int64_t>(std::llround(wrap_angle(phase) / two_pi * spp)) % spp;
  if (offset % tr.config.record_stride != 0 || spp % tr.config.record_stride != 0)
    throw std::invalid_argument("poincare: record stride does not land on the section phase");
  const std::int64_t begin = tr.config.transient_steps();
  const std::int64_t end = tr.config.total_steps();
  std::vector<SectionPoint> out;
  for (const Sample& s : tr.samples) {
    if (s.step < begin || s.step >= end) continue;
    if ((s.step - offset) % spp != 0) continue;
    out.push_back({s.state, (s.step - begin) / spp});
  }
  return out;
}

struct BoundingBox {
  double x_min = 0, x_max = 0, p_min = 0, p_max = 0;
  double diagonal() const { return std::hypot(x_max - x_min, p_max - p_min); }
};

/// (x, p) bounding box of a section.
inline BoundingBox bounding_box(const std::vector<SectionPoint>& pts) {
  BoundingBox b;
  if (pts.empty()) return b;
  b.x_min = b.x_max = pts.front().state.x;
  b.p_min = b.p_max = pts.front().state.p;
  for (const auto& q : pts) {
    b.x_min = std::min(b.x_min, q.state.x);
    b.x_max = std::max(b.x_max, q.state.x);
    b.p_min = std::min(b.p_min, q.state.p);
    b.p_max = std::max(b.p_max, q.state.p);
  }
  return b;
}

/// Largest pairwise (x, p) distance in a section.
inline double cluster_diameter(const std::vector<SectionPoint>& pts) {
  double d = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j)
      d = std::max(d, std::hypot(pts[i].state.x - pts[j].state.x, pts[i].state.p - pts[j].state.p));
  return d;
}

// ---------------------------------------------------------------- energy

/// Energy counted by the ledger: the Hamiltonian without the drive term. In classical
/// mode the spread does not act back on the centroid, so only p^2/2 + U1 counts.
inline double ledger_energy(const State& s, const ModelParams& m) {
  if (m.classical) {
    const double b2 = m.beta * m.beta, x2 = s.x * s.x;
    return 0.5 * s.p * s.p - 0.5 * x2 + 0.25 * b2 * x2 * x2;
  }
  return undriven_hamiltonian(s, m);
}

/// Power delivered by the drive, p * F_drive.
inline double drive_power(const State& s, const ModelParams& m) { return s.p * drive_force(s.t, m); }

/// Power of the Gamma-proportional forces acting on the ledger energy:
/// Gamma (F_p p + F_chi dU/dchi + F_Pi Pi).
inline double dissipation_power(const State& s, const ModelParams& m) {
  double pw = momentum_force(s, m) * s.p;
  if (!m.classical) {
    const SpreadForce f = dissipative_force(s, m);
    pw += f.f_chi * (-spread_restoring_force(s, m)) + f.f_pi * s.pi;
  }
  return m.gamma * pw;
}

/// Increments of the four energy channels over one step from `a` to `b`.
/// The noise channel is the residual, so the four sum to exactly zero when
/// added in the order ((hamiltonian + drive) + dissipation) + noise.
struct LedgerStep {
  double drive, dissipation, noise, hamiltonian;

  double closure() const { return ((hamiltonian + drive) + dissipation) + noise; }
};

inline LedgerStep ledger_step(const State& a, const State& b, double dt, const ModelParams& m) {
  LedgerStep s;
  s.hamiltonian = ledger_energy(b, m) - ledger_energy(a, m);
  s.drive = -drive_power(a, m) * dt;
  s.dissipation = -dissipation_power(a, m) * dt;
  s.noise = -((s.hamiltonian + s.drive) + s.dissipation);
  return s;
}

struct EnergyLedger {
  // Per-step series; left empty when the ledger was accumulated on the fly.
  std::vector<double> t;              // time at the start of each step
  std::vector<double> d_drive;        // dE_g
  std::vector<double> d_dissipation;  // dE_Gamma
  std::vector<double> d_noise;        // dE_sqrtGamma (residual)
  std::vector<double> d_hamiltonian;  // dE_H
  std::vector<bool> steady;           // step lies after the transient

  // Running sums over the post-transient window.
  double sum_drive = 0, sum_dissipation = 0, sum_noise = 0, sum_hamiltonian = 0;
  // Time averages (powers) over the post-transient window.
  double mean_drive = 0, mean_dissipation = 0, mean_noise = 0, mean_hamiltonian = 0;
  double window = 0;              // post-transient time span
  double h0_min = 0, h0_max = 0;  // range of the ledger energy in the window
  double max_closure = 0;         // largest |sum of the four channels| of any step
  std::int64_t n_steps = 0;       // post-transient steps

  std::size_t size() const { return t.size(); }

  /// |mean_g + mean_Gamma| / |mean_g|.
  double balance_error() const {
    return mean_drive == 0.0 ? 0.0 : std::abs(mean_drive + mean_dissipation) / std::abs(mean_drive);
  }
};

/// Step observer that builds an EnergyLedger while a trajectory is integrated,
/// at full step resolution and without storing the trajectory.
class LedgerAccumulator {
 public:
  LedgerAccumulator(const ModelParams& m, const IntegratorConfig& cfg, bool keep_series = false)
      : m_(m), cut_(cfg.transient_steps()), h_(cfg.step_size(m)), keep_(keep_series) {}

  /// Called with the grid step index k and the states at steps k and k + 1.
  void operator()(std::int64_t k, const State& a, const State& b) { add(k, a, b, h_); }

  void add(std::int64_t k, const State& a, const State& b, double dt) {
    const LedgerStep s = ledger_step(a, b, dt, m_);
    const bool steady = k >= cut_;
    L_.max_closure = std::max(L_.max_closure, std::abs(s.closure()));
    if (keep_) {
      L_.t.push_back(a.t);
      L_.d_drive.push_back(s.drive);
      L_.d_dissipation.push_back(s.dissipation);
      L_.d_noise.push_back(s.noise);
      L_.d_hamiltonian.push_back(s.hamiltonian);
      L_.steady.push_back(steady);
    }
    if (!steady) return;
    L_.sum_drive += s.drive;
    L_.sum_dissipation += s.dissipation;
    L_.sum_noise += s.noise;
    L_.sum_hamiltonian += s.hamiltonian;
    L_.window += dt;
    ++L_.n_steps;
    const double ea = ledger_energy(a, m_), eb = ledger_energy(b, m_);
    if (!seen_) {
      L_.h0_min = L_.h0_max = ea;
      seen_ = true;
    }
    L_.h0_min = std::min({L_.h0_min, ea, eb});
    L_.h0_max = std::max({L_.h0_max, ea, eb});
  }

  EnergyLedger result() const {
    EnergyLedger L = L_;
    if (L.window > 0.0) {
      L.mean_drive = L.sum_drive / L.window;
      L.mean_dissipation = L.sum_dissipation / L.window;
      L.mean_noise = L.sum_noise / L.window;
      L.mean_hamiltonian = L.sum_hamiltonian / L.window;
    }
    return L;
  }

 private:
  ModelParams m_;
  std::int64_t cut_;
  double h_;
  bool keep_;
  bool seen_ = false;
  EnergyLedger L_;
};

/// Ledger over consecutive recorded samples of a stored trajectory. Exact per
/// integration step when the trajectory was recorded with stride 1.
inline EnergyLedger energy_ledger(const Trajectory& tr) {
  LedgerAccumulator acc(tr.params, tr.config, true);
  for (std::size_t i = 0; i + 1 < tr.samples.size(); ++i) {
    const Sample& a = tr.samples[i];
    const Sample& b = tr.samples[i + 1];
    acc.add(a.step, a.state, b.state, static_cast<double>(b.step - a.step) * tr.h);
  }
  return acc.result();
}

// ---------------------------------------------------------------- stats

struct TrajectoryStats {
  double u1_bar = 0, u2_bar = 0, u12_bar = 0;
  double h_bar = 0;
  double delta_h = 0;  // standard deviation of H
  double chi_q05 = 0, chi_q50 = 0, chi_q95 = 0;
  double chi_range = 0;  // q95 - q05
  std::size_t n_samples = 0;
};

/// Linear-interpolation quantile of sorted data.
inline double sorted_quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double w = pos - static_cast<double>(lo);
  return sorted[lo] + w * (sorted[hi] - sorted[lo]);
}

inline TrajectoryStats trajectory_stats(const Trajectory& tr) {
  const std::size_t begin = tr.first_steady();
  if (begin >= tr.samples.size()) throw std::invalid_argument("trajectory_stats: empty post-transient window");
  const ModelParams& m = tr.params;
  TrajectoryStats st;
  st.n_samples = tr.samples.size() - begin;
  std::vector<double> chis;
  chis.reserve(st.n_samples);
  std::vector<double> hs;
  hs.reserve(st.n_samples);
  double s1 = 0, s2 = 0, s12 = 0, sh = 0;
  for (std::size_t i = begin; i < tr.samples.size(); ++i) {
    const State& s = tr.samples[i].state;
    const PotentialTerms u = potential_terms(s, m);
    const double H = 0.5 * s.p * s.p + 0.5 * s.pi * s.pi + u.total();
    s1 += u.u1;
    s2 += u.u2;
    s12 += u.u12;
    sh += H;
    hs.push_back(H);
    chis.push_back(s.chi);
  }
  const double nn = static_cast<double>(st.n_samples);
  st.u1_bar = s1 / nn;
  st.u2_bar = s2 / nn;
  st.u12_bar = s12 / nn;
  st.h_bar = sh / nn;
  double ss = 0.0;
  for (double H : hs) ss += (H - st.h_bar) * (H - st.h_bar);
  st.delta_h = std::sqrt(ss / nn);
  std::sort(chis.begin(), chis.end());
  st.chi_q05 = sorted_quantile(chis, 0.05);
  st.chi_q50 = sorted_quantile(chis, 0.50);
  st.chi_q95 = sorted_quantile(chis, 0.95);
  st.chi_range = st.chi_q95 - st.chi_q05;
  return st;
}

}  // namespace scduff

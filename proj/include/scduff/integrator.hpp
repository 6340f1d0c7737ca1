#pragma once

// Fixed-step Euler-Maruyama integration of the Ito equations of motion, with
// a step-halving guard near the chi = 0 singularity.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "scduff/model.hpp"
#include "scduff/random.hpp"

namespace scduff {

struct IntegratorConfig {
  int steps_per_period = 4000;
  double chi_min = 1e-4;
  /// A step that moves chi by more than this fraction of its value is also
  /// refined; Euler steps against the 1/chi^3 wall otherwise pump energy.
  /// Zero disables the check.
  double chi_step_tol = 0.05;
  int max_halvings = 8;
  int transient_periods = 100;
  int total_periods = 400;
  int record_stride = 1;
  /// Keep the per-step Wiener increments in the trajectory.
  bool keep_increments = false;

  double step_size(const ModelParams& m) const { return m.period() / steps_per_period; }
  std::int64_t total_steps() const { return std::int64_t{total_periods} * steps_per_period; }
  std::int64_t transient_steps() const { return std::int64_t{transient_periods} * steps_per_period; }

  void validate() const {
    if (steps_per_period < 1) throw std::invalid_argument("steps_per_period must be >= 1");
    if (!(chi_min > 0.0)) throw std::invalid_argument("chi_min must be > 0");
    if (!(chi_step_tol >= 0.0)) throw std::invalid_argument("chi_step_tol must be >= 0");
    if (max_halvings < 0 || max_halvings > 14)
      throw std::invalid_argument("max_halvings must lie in [0, 14]");
    if (transient_periods < 0) throw std::invalid_argument("transient_periods must be >= 0");
    if (total_periods < transient_periods)
      throw std::invalid_argument("total_periods must be >= transient_periods");
    if (record_stride < 1) throw std::invalid_argument("record_stride must be >= 1");
  }
};

/// guard: a step landed at chi <= chi_min and was refined.
enum class EventKind { guard, singularity, escape };

inline std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::guard: return "guard";
    case EventKind::singularity: return "singularity";
    case EventKind::escape: return "escape";
  }
  return "unknown";
}

struct Event {
  EventKind kind;
  std::int64_t step;
  double t;
  int depth;  // halving depth reached
};

enum class RunStatus { completed, singularity, escape };

inline std::string_view to_string(RunStatus s) {
  switch (s) {
    case RunStatus::completed: return "completed";
    case RunStatus::singularity: return "singularity";
    case RunStatus::escape: return "escape";
  }
  return "unknown";
}

struct Sample {
  std::int64_t step;  // integration step index (t = t0 + step * h)
  State state;
};

struct Trajectory {
  ModelParams params;
  IntegratorConfig config;
  std::uint64_t seed = 0;
  std::uint64_t stream_id = 0;
  double h = 0.0;
  std::vector<Sample> samples;
  std::vector<double> increments;  // dW per step, if requested
  std::vector<Event> events;
  std::int64_t refined_steps = 0;  // grid steps that needed halving
  RunStatus status = RunStatus::completed;
  std::optional<double> abort_time;

  bool ok() const { return status == RunStatus::completed; }

  /// Index of the first sample past the transient.
  std::size_t first_steady() const {
    const std::int64_t cut = config.transient_steps();
    std::size_t i = 0;
    while (i < samples.size() && samples[i].step < cut) ++i;
    return i;
  }
};

/// Ito Euler-Maruyama update y + a(t, y) h + b(t, y) dW for a scalar Wiener
/// process and any fixed-size state.
template <std::size_t N, class Drift, class Diffusion>
std::array<double, N> euler_maruyama(const std::array<double, N>& y, double t, Drift&& a, Diffusion&& b,
                                     double dw, double h) {
  const std::array<double, N> fa = a(t, y);
  const std::array<double, N> fb = b(t, y);
  std::array<double, N> out;
  for (std::size_t i = 0; i < N; ++i) out[i] = y[i] + fa[i] * h + fb[i] * dw;
  return out;
}

/// One Euler-Maruyama step of the model: X + drift(X) h + diffusion(X) dW.
inline State step(const State& s, const ModelParams& m, double dw, double h) {
  auto as_state = [](double t, const Vec4& y) { return State{t, y[0], y[1], y[2], y[3]}; };
  const Vec4 y = euler_maruyama(
      s.vec(), s.t, [&](double t, const Vec4& v) { return drift(as_state(t, v), m); },
      [&](double t, const Vec4& v) { return diffusion(as_state(t, v), m); }, dw, h);
  return State{s.t + h, y[0], y[1], y[2], y[3]};
}

/// Classical fourth-order Runge-Kutta step of the deterministic drift only.
/// Reference for conservation checks; not used by integrate().
inline State rk4_step(const State& s, const ModelParams& m, double h) {
  auto shift = [&](double c, const Vec4& k) {
    return State{s.t + c, s.x + c * k[0], s.p + c * k[1], s.chi + c * k[2], s.pi + c * k[3]};
  };
  const Vec4 k1 = drift(s, m);
  const Vec4 k2 = drift(shift(0.5 * h, k1), m);
  const Vec4 k3 = drift(shift(0.5 * h, k2), m);
  const Vec4 k4 = drift(shift(h, k3), m);
  Vec4 y = s.vec();
  for (std::size_t i = 0; i < 4; ++i) y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  return State{s.t + h, y[0], y[1], y[2], y[3]};
}

/// Escape threshold on |x|, |p|.
inline double escape_bound(const ModelParams& m) { return 1e6 / m.beta; }

inline bool escaped(const State& s, const ModelParams& m) {
  const double lim = escape_bound(m);
  return !s.finite() || std::abs(s.x) > lim || std::abs(s.p) > lim;
}

/// Preorder record of how one grid step was subdivided: true = split node.
using RefinementPlan = std::vector<bool>;

/// Advances one grid step while honoring the chi guard. Sub-increments come
/// from the stream's Brownian-bridge tree for this step, so any caller that
/// refines the same step sees the same path.
class GuardedStepper {
 public:
  struct Outcome {
    State state;
    RunStatus status = RunStatus::completed;
    int depth = 0;  // deepest halving level used
    bool guard_hit = false;  // some trial step landed at chi <= chi_min
  };

  GuardedStepper(const ModelParams& m, const IntegratorConfig& cfg, const NoiseStream& noise)
      : m_(m), cfg_(cfg), noise_(noise) {}

  /// Integrate from `s` over [t, t + h] given the step's full increment dw.
  /// `end_time` is assigned to the result exactly to keep the grid drift-free.
  /// If `plan` is non-null the subdivision used is written to it.
  Outcome advance(const State& s, std::uint64_t step_index, double dw, double h, double end_time,
                  RefinementPlan* plan = nullptr) const {
    Outcome out;
    out.state = s;
    if (plan) plan->clear();
    out.status = refine(out.state, step_index, 1, 0, dw, h, out, plan);
    return finish(out, end_time);
  }

  /// Same as advance, but subdivide exactly as `plan` says; leaves may still
  /// be split further if they hit the chi_min guard.
  Outcome replay(const State& s, std::uint64_t step_index, double dw, double h, double end_time,
                 const RefinementPlan& plan) const {
    Outcome out;
    out.state = s;
    std::size_t pos = 0;
    out.status = follow(out.state, step_index, 1, 0, dw, h, out, plan, pos);
    return finish(out, end_time);
  }

 private:
  Outcome& finish(Outcome& out, double end_time) const {
    if (out.status == RunStatus::completed) {
      out.state.t = end_time;
      if (escaped(out.state, m_)) out.status = RunStatus::escape;
    }
    return out;
  }

  bool at_floor(std::uint32_t node, int depth) const {
    return depth >= cfg_.max_halvings || node > NoiseStream::max_node / 2;
  }

  RunStatus split(State& s, std::uint64_t step_index, std::uint32_t node, int depth, double dw, double h,
                  Outcome& out, RefinementPlan* plan) const {
    out.depth = std::max(out.depth, depth + 1);
    const double first = noise_.bridge_split(step_index, node, dw, h);
    const double half = 0.5 * h;
    RunStatus r = refine(s, step_index, 2 * node, depth + 1, first, half, out, plan);
    if (r != RunStatus::completed) return r;
    return refine(s, step_index, 2 * node + 1, depth + 1, dw - first, half, out, plan);
  }

  RunStatus refine(State& s, std::uint64_t step_index, std::uint32_t node, int depth, double dw, double h,
                   Outcome& out, RefinementPlan* plan) const {
    const State next = step(s, m_, dw, h);
    if (!next.finite()) return RunStatus::escape;
    bool accept = true;
    if (!(m_.classical && m_.freeze_spread)) {
      if (next.chi <= cfg_.chi_min) {
        out.guard_hit = true;
        if (at_floor(node, depth)) return RunStatus::singularity;
        accept = false;
      } else if (cfg_.chi_step_tol > 0.0 && std::abs(next.chi - s.chi) > cfg_.chi_step_tol * s.chi) {
        accept = at_floor(node, depth);
      }
    }
    if (plan) plan->push_back(!accept);
    if (accept) {
      s = next;
      return RunStatus::completed;
    }
    return split(s, step_index, node, depth, dw, h, out, plan);
  }

  RunStatus follow(State& s, std::uint64_t step_index, std::uint32_t node, int depth, double dw, double h,
                   Outcome& out, const RefinementPlan& plan, std::size_t& pos) const {
    const bool do_split = pos < plan.size() ? plan[pos++] : false;
    if (!do_split) {
      const State next = step(s, m_, dw, h);
      if (!next.finite()) return RunStatus::escape;
      if (!(m_.classical && m_.freeze_spread) && next.chi <= cfg_.chi_min) {
        out.guard_hit = true;
        if (at_floor(node, depth)) return RunStatus::singularity;
        return split(s, step_index, node, depth, dw, h, out, nullptr);
      }
      s = next;
      return RunStatus::completed;
    }
    out.depth = std::max(out.depth, depth + 1);
    const double first = noise_.bridge_split(step_index, node, dw, h);
    const double half = 0.5 * h;
    RunStatus r = follow(s, step_index, 2 * node, depth + 1, first, half, out, plan, pos);
    if (r != RunStatus::completed) return r;
    return follow(s, step_index, 2 * node + 1, depth + 1, dw - first, half, out, plan, pos);
  }

  const ModelParams& m_;
  const IntegratorConfig& cfg_;
  const NoiseStream& noise_;
};

/// Per-step observer that ignores everything.
struct NoObserver {
  void operator()(std::int64_t, const State&, const State&) const {}
};

/// Integrate `total_periods` drive periods from `initial`. The stream's
/// counter is taken as the index of the first step. `observe(k, before,
/// after)` is called for every completed grid step.
template <class Observer = NoObserver>
Trajectory integrate(const State& initial, const ModelParams& params, const IntegratorConfig& config,
                     NoiseStream stream, Observer&& observe = Observer{}) {
  params.validate();
  config.validate();
  if (!initial.valid()) throw std::invalid_argument("integrate: initial state must be finite with chi > 0");
  if (!(initial.chi > config.chi_min)) throw std::invalid_argument("integrate: initial chi must exceed chi_min");

  Trajectory tr;
  tr.params = params;
  tr.config = config;
  tr.seed = stream.seed();
  tr.stream_id = stream.stream_id();
  tr.h = config.step_size(params);

  const std::int64_t n = config.total_steps();
  tr.samples.reserve(static_cast<std::size_t>(n / config.record_stride + 1));
  if (config.keep_increments) tr.increments.reserve(static_cast<std::size_t>(n));
  tr.samples.push_back({0, initial});

  const std::uint64_t first = stream.counter();
  GuardedStepper stepper(params, config, stream);
  State s = initial;
  for (std::int64_t k = 0; k < n; ++k) {
    const std::uint64_t idx = first + static_cast<std::uint64_t>(k);
    const double dw = stream.wiener_increment(tr.h);
    if (config.keep_increments) tr.increments.push_back(dw);
    const auto out = stepper.advance(s, idx, dw, tr.h, initial.t + static_cast<double>(k + 1) * tr.h);
    if (out.depth > 0) ++tr.refined_steps;
    if (out.guard_hit) tr.events.push_back({EventKind::guard, k, s.t, out.depth});
    if (out.status != RunStatus::completed) {
      tr.status = out.status;
      tr.abort_time = s.t;
      tr.events.push_back({out.status == RunStatus::escape ? EventKind::escape : EventKind::singularity, k,
                           s.t, out.depth});
      break;
    }
    observe(k, s, out.state);
    s = out.state;
    if ((k + 1) % config.record_stride == 0) tr.samples.push_back({k + 1, s});
  }
  return tr;
}

}  // namespace scduff

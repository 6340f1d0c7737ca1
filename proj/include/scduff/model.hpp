#pragma once

// Closed-form evaluation of the semiclassical Duffing model: centroid (x, p)
// coupled to the wavepacket spread (chi, Pi), with homodyne back-action.
// Everything here is a pure function of (state, params).

#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace scduff {

inline constexpr double two_pi = 2.0 * std::numbers::pi;

/// Reduce an angle into [0, 2pi).
inline double wrap_angle(double a) {
  double r = std::fmod(a, two_pi);
  if (r < 0.0) r += two_pi;
  if (r >= two_pi) r = 0.0;
  return r;
}

/// Which sign the x-chi coupling force takes in the centroid momentum equation.
///   hamiltonian: -3 beta^2 x chi^2, the gradient of U12 (default)
///   printed:     +3 beta^2 x chi^2, kept for comparison runs only
enum class CouplingSign { hamiltonian, printed };

/// Reading of the centroid damping force F_p.
///   momentum: F_p = -2 p (damped Duffing limit, default)
///   literal:  F_p = -2 Gamma, a constant force with no damping
enum class MomentumDamping { momentum, literal };

struct ModelParams {
  double beta = 0.1;
  double gamma = 0.0;
  double g = 0.3;
  double omega = 1.0;
  double phi = 0.0;  // kept in [0, 2pi)

  CouplingSign coupling_sign = CouplingSign::hamiltonian;
  MomentumDamping momentum_damping = MomentumDamping::momentum;
  /// Classical limit: drop the chi-to-centroid force and the centroid noise.
  bool classical = false;
  /// In classical mode, also hold (chi, Pi) fixed instead of evolving them.
  bool freeze_spread = false;

  ModelParams() = default;
  ModelParams(double beta_, double gamma_, double g_, double omega_, double phi_)
      : beta(beta_), gamma(gamma_), g(g_), omega(omega_), phi(wrap_angle(phi_)) {
    validate();
  }

  void set_phi(double a) { phi = wrap_angle(a); }

  double period() const { return two_pi / omega; }

  void validate() const {
    if (!(beta > 0.0) || !std::isfinite(beta))
      throw std::invalid_argument("beta must be finite and > 0, got " + std::to_string(beta));
    if (!(omega > 0.0) || !std::isfinite(omega))
      throw std::invalid_argument("omega must be finite and > 0, got " + std::to_string(omega));
    if (!(gamma >= 0.0) || !std::isfinite(gamma))
      throw std::invalid_argument("gamma must be finite and >= 0, got " + std::to_string(gamma));
    if (!(g >= 0.0) || !std::isfinite(g))
      throw std::invalid_argument("g must be finite and >= 0, got " + std::to_string(g));
    if (!std::isfinite(phi))
      throw std::invalid_argument("phi must be finite");
  }
};

/// Point in the 4D semiclassical phase space plus time.
struct State {
  double t = 0.0;
  double x = 0.0;
  double p = 0.0;
  double chi = 1.0 / std::numbers::sqrt2;
  double pi = 0.0;

  bool finite() const {
    return std::isfinite(t) && std::isfinite(x) && std::isfinite(p) && std::isfinite(chi) &&
           std::isfinite(pi);
  }
  bool valid() const { return finite() && chi > 0.0; }

  std::array<double, 4> vec() const { return {x, p, chi, pi}; }

  friend bool operator==(const State&, const State&) = default;
};

/// Classical well minimum with a vacuum spread.
inline State default_initial(double beta) {
  return State{0.0, 1.0 / beta, 0.0, 1.0 / std::numbers::sqrt2, 0.0};
}

using Vec4 = std::array<double, 4>;

struct Noise {
  double nx = 0.0;
  double np = 0.0;
};

struct SpreadForce {
  double f_chi = 0.0;
  double f_pi = 0.0;
};

/// phi-independent pieces of the spread dissipation:
/// F(phi) = fc cos 2phi + fs sin 2phi + f0.
struct ForceDecomposition {
  double f0_chi = 0.0, f0_pi = 0.0;
  double fc_chi = 0.0, fc_pi = 0.0;
  double fs_chi = 0.0, fs_pi = 0.0;

  SpreadForce combine(double phi) const {
    const double c = std::cos(2.0 * phi), s = std::sin(2.0 * phi);
    return {fc_chi * c + fs_chi * s + f0_chi, fc_pi * c + fs_pi * s + f0_pi};
  }
};

struct PotentialTerms {
  double u1 = 0.0;
  double u2 = 0.0;
  double u12 = 0.0;

  double total() const { return u1 + u2 + u12; }
};

struct Variances {
  double vx = 0.0;
  double vxp = 0.0;
  double vp = 0.0;
};

inline Variances variances_from_spread(double chi, double pi) {
  return {chi * chi, chi * pi, 1.0 / (4.0 * chi * chi) + pi * pi};
}

inline ForceDecomposition force_decomposition(const State& s) {
  const double c = s.chi, P = s.pi;
  const double c2 = c * c, c3 = c2 * c, P2 = P * P;
  ForceDecomposition d;
  d.fc_chi = c - c3 + c * P2 - 1.0 / (4.0 * c);
  d.fs_chi = -P * (-1.0 + 2.0 * c2);
  d.f0_chi = c - c3 - c * P2 + 1.0 / (4.0 * c);

  d.fc_pi = P2 * P - P + 3.0 * P / (4.0 * c2) - P * c2;
  d.fs_pi = -1.0 / (4.0 * c3) + 1.0 / c - c + 2.0 * c * P2;
  d.f0_pi = -P2 * P - P - 3.0 * P / (4.0 * c2) - P * c2;
  return d;
}

/// Homodyne dissipation on the spread pair (F_chi, F_Pi), without the Gamma prefactor.
inline SpreadForce dissipative_force(const State& s, const ModelParams& m) {
  const double c = s.chi, P = s.pi;
  const double c2 = c * c, c3 = c2 * c, P2 = P * P;
  const double cos2 = std::cos(2.0 * m.phi), sin2 = std::sin(2.0 * m.phi);
  const double f_chi = (c - c3 + c * P2 - 1.0 / (4.0 * c)) * cos2 - P * (-1.0 + 2.0 * c2) * sin2 +
                       c - c3 - c * P2 + 1.0 / (4.0 * c);
  const double f_pi = (P2 * P - P + 3.0 * P / (4.0 * c2) - P * c2) * cos2 +
                      (-1.0 / (4.0 * c3) + 1.0 / c - c + 2.0 * c * P2) * sin2 +
                      (-P2 * P - P - 3.0 * P / (4.0 * c2) - P * c2);
  return {f_chi, f_pi};
}

/// Centroid dissipation F_p (without the Gamma prefactor).
inline double momentum_force(const State& s, const ModelParams& m) {
  return m.momentum_damping == MomentumDamping::momentum ? -2.0 * s.p : -2.0 * m.gamma;
}

/// Measurement back-action coefficients (N_x, N_p); N_chi = N_Pi = 0.
inline Noise noise_coefficients(const State& s, const ModelParams& m) {
  const double c = s.chi, P = s.pi;
  const double cp = std::cos(m.phi), sp = std::sin(m.phi);
  return {2.0 * (c * c - 0.5) * cp - 2.0 * c * P * sp,
          -2.0 * (1.0 / (4.0 * c * c) + P * P - 0.5) * sp + 2.0 * c * P * cp};
}

inline double drive_force(double t, const ModelParams& m) {
  return -(m.g / m.beta) * std::cos(m.omega * t);
}

inline PotentialTerms potential_terms(const State& s, const ModelParams& m) {
  const double b2 = m.beta * m.beta;
  const double x2 = s.x * s.x, c2 = s.chi * s.chi;
  PotentialTerms u;
  u.u1 = -0.5 * x2 + 0.25 * b2 * x2 * x2 + (m.g / m.beta) * s.x * std::cos(m.omega * s.t);
  u.u2 = 0.75 * b2 * c2 * c2 - 0.5 * c2 + 1.0 / (8.0 * c2);
  u.u12 = 1.5 * b2 * x2 * c2;
  return u;
}

inline double hamiltonian(const State& s, const ModelParams& m) {
  return 0.5 * s.p * s.p + 0.5 * s.pi * s.pi + potential_terms(s, m).total();
}

/// Energy with the drive term of U1 removed; the ledger's conserved quantity.
inline double undriven_hamiltonian(const State& s, const ModelParams& m) {
  return hamiltonian(s, m) - (m.g / m.beta) * s.x * std::cos(m.omega * s.t);
}

/// x-force from the spread, -dU12/dx (sign per the configured convention).
inline double coupling_force(const State& s, const ModelParams& m) {
  if (m.classical) return 0.0;
  const double f = 3.0 * m.beta * m.beta * s.x * s.chi * s.chi;
  return m.coupling_sign == CouplingSign::hamiltonian ? -f : f;
}

/// -dU/dchi.
inline double spread_restoring_force(const State& s, const ModelParams& m) {
  const double b2 = m.beta * m.beta;
  const double c = s.chi;
  return c * (1.0 - 3.0 * b2 * (s.x * s.x + c * c)) + 1.0 / (4.0 * c * c * c);
}

/// Deterministic part of (dx, dp, dchi, dPi)/dt.
inline Vec4 drift(const State& s, const ModelParams& m) {
  const double b2 = m.beta * m.beta;
  Vec4 d;
  d[0] = s.p;
  d[1] = s.x - b2 * s.x * s.x * s.x + coupling_force(s, m) + drive_force(s.t, m) +
         m.gamma * momentum_force(s, m);
  if (m.classical && m.freeze_spread) {
    d[2] = 0.0;
    d[3] = 0.0;
    return d;
  }
  const SpreadForce f = dissipative_force(s, m);
  d[2] = s.pi + m.gamma * f.f_chi;
  d[3] = spread_restoring_force(s, m) + m.gamma * f.f_pi;
  return d;
}

/// Diffusion vector multiplying dW: sqrt(Gamma) (N_x, N_p, 0, 0).
inline Vec4 diffusion(const State& s, const ModelParams& m) {
  if (m.classical || m.gamma == 0.0) return {0.0, 0.0, 0.0, 0.0};
  const Noise n = noise_coefficients(s, m);
  const double sg = std::sqrt(m.gamma);
  return {sg * n.nx, sg * n.np, 0.0, 0.0};
}

}  // namespace scduff

#pragma once

// File formats: CSV tables (UTF-8, header row), the binary trajectory format
// and JSON run configuration.
//
// Binary trajectory layout (all little-endian):
//   char[8]  magic "SCDTRAJ\0"
//   u32      format version (1)
//   f64 x5   beta, gamma, g, omega, phi
//   u32      flags: bit0 printed coupling sign, bit1 literal F_p,
//                   bit2 classical, bit3 frozen spread
//   i32 x5   steps_per_period, max_halvings, transient_periods,
//            total_periods, record_stride
//   f64      chi_min, chi_step_tol
//   u64      seed, stream_id
//   f64      step size h
//   u32      status (0 completed, 1 singularity, 2 escape)
//   u64      record count n
//   n x { f64 t, f64 x, f64 p, f64 chi, f64 pi, f64 step }

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <ios>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "scduff/diagnostics.hpp"
#include "scduff/integrator.hpp"
#include "scduff/model.hpp"

namespace scduff {

inline constexpr const char* version_string = "1.0.0";

/// Raised for unreadable or unwritable files; maps to exit status 2.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Raised for malformed configuration; maps to exit status 1.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------- CSV

/// Shortest round-trip formatting so CSV output is stable and exact.
inline std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode = std::ios::out) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream os(path, mode | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  return os;
}

inline void check_written(std::ostream& os, const std::filesystem::path& path) {
  os.flush();
  if (!os) throw IoError("write failed for " + path.string());
}

inline void write_trajectory_csv(std::ostream& os, const Trajectory& tr) {
  os << "t,x,p,chi,pi\n";
  for (const Sample& s : tr.samples)
    os << fmt(s.state.t) << ',' << fmt(s.state.x) << ',' << fmt(s.state.p) << ',' << fmt(s.state.chi) << ','
       << fmt(s.state.pi) << '\n';
}

inline void write_poincare_csv(std::ostream& os, const std::vector<SectionPoint>& pts) {
  os << "x,p,chi,pi,period_index\n";
  for (const auto& q : pts)
    os << fmt(q.state.x) << ',' << fmt(q.state.p) << ',' << fmt(q.state.chi) << ',' << fmt(q.state.pi) << ','
       << q.period_index << '\n';
}

inline void write_ledger_csv(std::ostream& os, const EnergyLedger& L) {
  os << "t,dE_g,dE_Gamma,dE_sqrtGamma,dE_H,steady\n";
  for (std::size_t i = 0; i < L.size(); ++i)
    os << fmt(L.t[i]) << ',' << fmt(L.d_drive[i]) << ',' << fmt(L.d_dissipation[i]) << ',' << fmt(L.d_noise[i])
       << ',' << fmt(L.d_hamiltonian[i]) << ',' << (L.steady[i] ? 1 : 0) << '\n';
}

inline void write_stats_csv(std::ostream& os, const TrajectoryStats& st) {
  os << "u1_bar,u2_bar,u12_bar,h_bar,delta_h,chi_q05,chi_q50,chi_q95,chi_range,n_samples\n";
  os << fmt(st.u1_bar) << ',' << fmt(st.u2_bar) << ',' << fmt(st.u12_bar) << ',' << fmt(st.h_bar) << ','
     << fmt(st.delta_h) << ',' << fmt(st.chi_q05) << ',' << fmt(st.chi_q50) << ',' << fmt(st.chi_q95) << ','
     << fmt(st.chi_range) << ',' << st.n_samples << '\n';
}

/// i-th of n evenly spaced points on [lo, hi], endpoints exact.
inline double grid_point(double lo, double hi, int i, int n) {
  if (i == 0) return lo;
  if (i == n - 1) return hi;
  return (lo * (n - 1 - i) + hi * i) / (n - 1);
}

/// Potential surface U1, U2, U12 on an (x, chi) grid at time t.
inline void write_potential_grid_csv(std::ostream& os, const ModelParams& m, double t, double x_lo, double x_hi,
                                     double chi_lo, double chi_hi, int nx, int nchi) {
  if (nx < 2 || nchi < 2 || !(chi_lo > 0.0) || !(x_hi > x_lo) || !(chi_hi > chi_lo))
    throw ConfigError("potential grid: need nx, nchi >= 2, x_hi > x_lo, chi_hi > chi_lo > 0");
  os << "x,chi,u1,u2,u12,u\n";
  for (int i = 0; i < nx; ++i) {
    const double x = grid_point(x_lo, x_hi, i, nx);
    for (int j = 0; j < nchi; ++j) {
      const double chi = grid_point(chi_lo, chi_hi, j, nchi);
      const PotentialTerms u = potential_terms(State{t, x, 0.0, chi, 0.0}, m);
      os << fmt(x) << ',' << fmt(chi) << ',' << fmt(u.u1) << ',' << fmt(u.u2) << ',' << fmt(u.u12) << ','
         << fmt(u.total()) << '\n';
    }
  }
}

/// F0, Fc, Fs on a (chi, Pi) grid.
inline void write_force_grid_csv(std::ostream& os, double chi_lo, double chi_hi, double pi_lo, double pi_hi,
                                 int nchi, int npi) {
  if (nchi < 2 || npi < 2 || !(chi_lo > 0.0) || !(chi_hi > chi_lo) || !(pi_hi > pi_lo))
    throw ConfigError("force grid: need nchi, npi >= 2, chi_hi > chi_lo > 0, pi_hi > pi_lo");
  os << "chi,pi,f0_chi,f0_pi,fc_chi,fc_pi,fs_chi,fs_pi\n";
  for (int i = 0; i < nchi; ++i) {
    const double chi = grid_point(chi_lo, chi_hi, i, nchi);
    for (int j = 0; j < npi; ++j) {
      const double pi = grid_point(pi_lo, pi_hi, j, npi);
      const ForceDecomposition d = force_decomposition(State{0.0, 0.0, 0.0, chi, pi});
      os << fmt(chi) << ',' << fmt(pi) << ',' << fmt(d.f0_chi) << ',' << fmt(d.f0_pi) << ',' << fmt(d.fc_chi)
         << ',' << fmt(d.fc_pi) << ',' << fmt(d.fs_chi) << ',' << fmt(d.fs_pi) << '\n';
    }
  }
}

// ---------------------------------------------------------------- binary

namespace detail {

template <class T>
void put(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T get(std::istream& is) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) throw IoError("truncated trajectory file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace detail

inline constexpr char binary_magic[8] = {'S', 'C', 'D', 'T', 'R', 'A', 'J', '\0'};
inline constexpr std::uint32_t binary_version = 1;

inline void write_trajectory_binary(std::ostream& os, const Trajectory& tr) {
  using detail::put;
  os.write(binary_magic, 8);
  put<std::uint32_t>(os, binary_version);
  const ModelParams& m = tr.params;
  for (double v : {m.beta, m.gamma, m.g, m.omega, m.phi}) put<double>(os, v);
  std::uint32_t flags = 0;
  if (m.coupling_sign == CouplingSign::printed) flags |= 1u;
  if (m.momentum_damping == MomentumDamping::literal) flags |= 2u;
  if (m.classical) flags |= 4u;
  if (m.freeze_spread) flags |= 8u;
  put<std::uint32_t>(os, flags);
  const IntegratorConfig& c = tr.config;
  for (int v : {c.steps_per_period, c.max_halvings, c.transient_periods, c.total_periods, c.record_stride})
    put<std::int32_t>(os, v);
  put<double>(os, c.chi_min);
  put<double>(os, c.chi_step_tol);
  put<std::uint64_t>(os, tr.seed);
  put<std::uint64_t>(os, tr.stream_id);
  put<double>(os, tr.h);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(tr.status));
  put<std::uint64_t>(os, tr.samples.size());
  for (const Sample& s : tr.samples) {
    for (double v : {s.state.t, s.state.x, s.state.p, s.state.chi, s.state.pi, static_cast<double>(s.step)})
      put<double>(os, v);
  }
}

inline Trajectory read_trajectory_binary(std::istream& is) {
  using detail::get;
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, binary_magic, 8) != 0) throw IoError("not a trajectory file");
  const auto ver = get<std::uint32_t>(is);
  if (ver != binary_version) throw IoError("unsupported trajectory format version " + std::to_string(ver));
  Trajectory tr;
  ModelParams& m = tr.params;
  m.beta = get<double>(is);
  m.gamma = get<double>(is);
  m.g = get<double>(is);
  m.omega = get<double>(is);
  m.phi = get<double>(is);
  const auto flags = get<std::uint32_t>(is);
  m.coupling_sign = (flags & 1u) ? CouplingSign::printed : CouplingSign::hamiltonian;
  m.momentum_damping = (flags & 2u) ? MomentumDamping::literal : MomentumDamping::momentum;
  m.classical = (flags & 4u) != 0;
  m.freeze_spread = (flags & 8u) != 0;
  IntegratorConfig& c = tr.config;
  c.steps_per_period = get<std::int32_t>(is);
  c.max_halvings = get<std::int32_t>(is);
  c.transient_periods = get<std::int32_t>(is);
  c.total_periods = get<std::int32_t>(is);
  c.record_stride = get<std::int32_t>(is);
  c.chi_min = get<double>(is);
  c.chi_step_tol = get<double>(is);
  tr.seed = get<std::uint64_t>(is);
  tr.stream_id = get<std::uint64_t>(is);
  tr.h = get<double>(is);
  const auto status = get<std::uint32_t>(is);
  if (status > 2) throw IoError("bad status field in trajectory file");
  tr.status = static_cast<RunStatus>(status);
  const auto n = get<std::uint64_t>(is);
  tr.samples.reserve(static_cast<std::size_t>(n));
  for (std::uint64_t i = 0; i < n; ++i) {
    Sample s;
    s.state.t = get<double>(is);
    s.state.x = get<double>(is);
    s.state.p = get<double>(is);
    s.state.chi = get<double>(is);
    s.state.pi = get<double>(is);
    s.step = static_cast<std::int64_t>(get<double>(is));
    tr.samples.push_back(s);
  }
  return tr;
}

// ---------------------------------------------------------------- JSON

using json = nlohmann::json;

inline json to_json(const ModelParams& m) {
  return json{{"beta", m.beta},
              {"gamma", m.gamma},
              {"g", m.g},
              {"omega", m.omega},
              {"phi", m.phi},
              {"coupling_sign", m.coupling_sign == CouplingSign::printed ? "printed" : "hamiltonian"},
              {"momentum_damping", m.momentum_damping == MomentumDamping::literal ? "literal" : "momentum"},
              {"classical", m.classical},
              {"freeze_spread", m.freeze_spread}};
}

inline json to_json(const IntegratorConfig& c) {
  return json{{"steps_per_period", c.steps_per_period}, {"chi_min", c.chi_min},
              {"chi_step_tol", c.chi_step_tol},         {"max_halvings", c.max_halvings},
              {"transient_periods", c.transient_periods}, {"total_periods", c.total_periods},
              {"record_stride", c.record_stride}};
}

inline json to_json(const State& s) {
  return json{{"t", s.t}, {"x", s.x}, {"p", s.p}, {"chi", s.chi}, {"pi", s.pi}};
}

namespace detail {

template <class T>
void read_field(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  bool ok = true;
  if constexpr (std::is_same_v<T, bool>) ok = v.is_boolean();
  else if constexpr (std::is_integral_v<T>) ok = v.is_number_integer();
  else if constexpr (std::is_floating_point_v<T>) ok = v.is_number();
  if (!ok) throw ConfigError(std::string("config field '") + key + "' has the wrong type");
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

inline std::string read_string(const json& j, const char* key) {
  if (!j.at(key).is_string()) throw ConfigError(std::string("config field '") + key + "' must be a string");
  return j.at(key).get<std::string>();
}

}  // namespace detail

/// Overlay fields present in `j` onto `m` (absent fields keep their value).
inline void apply_json(const json& j, ModelParams& m) {
  using detail::read_field;
  read_field(j, "beta", m.beta);
  read_field(j, "gamma", m.gamma);
  read_field(j, "g", m.g);
  read_field(j, "omega", m.omega);
  double phi = m.phi;
  read_field(j, "phi", phi);
  m.set_phi(phi);
  if (j.contains("coupling_sign")) {
    const auto s = detail::read_string(j, "coupling_sign");
    if (s == "hamiltonian") m.coupling_sign = CouplingSign::hamiltonian;
    else if (s == "printed") m.coupling_sign = CouplingSign::printed;
    else throw ConfigError("coupling_sign must be 'hamiltonian' or 'printed'");
  }
  if (j.contains("momentum_damping")) {
    const auto s = detail::read_string(j, "momentum_damping");
    if (s == "momentum") m.momentum_damping = MomentumDamping::momentum;
    else if (s == "literal") m.momentum_damping = MomentumDamping::literal;
    else throw ConfigError("momentum_damping must be 'momentum' or 'literal'");
  }
  read_field(j, "classical", m.classical);
  read_field(j, "freeze_spread", m.freeze_spread);
}

inline void apply_json(const json& j, IntegratorConfig& c) {
  using detail::read_field;
  read_field(j, "steps_per_period", c.steps_per_period);
  read_field(j, "chi_min", c.chi_min);
  read_field(j, "chi_step_tol", c.chi_step_tol);
  read_field(j, "max_halvings", c.max_halvings);
  read_field(j, "transient_periods", c.transient_periods);
  read_field(j, "total_periods", c.total_periods);
  read_field(j, "record_stride", c.record_stride);
}

inline void apply_json(const json& j, State& s) {
  using detail::read_field;
  read_field(j, "t", s.t);
  read_field(j, "x", s.x);
  read_field(j, "p", s.p);
  read_field(j, "chi", s.chi);
  read_field(j, "pi", s.pi);
}

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace scduff

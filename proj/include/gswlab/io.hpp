#pragma once
// Serialization. Everything renders to std::string so callers can buffer outputs and commit
// them only once a run has finished (or failed numerically).
//
// Snapshot binary layout (all integers and doubles little-endian, independent of the host):
//   bytes 0..7   "GSWSNAP1"
//   bytes 8..11  uint32 n, length of the JSON header that follows
//   n bytes      JSON header {format, version, dims, h, topology, origin, kind, group, stencil,
//                sites, fields, byte_order}
//   then         u as 4 doubles (h0, h1, h2, h3) per site in site order (x0 fastest),
//                then, for U(1), a as 4 doubles per site (directions 0..3; absent box links 0).
// The JSON snapshot carries the same header under "header" and arrays "u" and "a".
//
// Sparse triplets: a line "# rows cols nnz", then one "i j v" line per nonzero, 0-based,
// row-major order, values printed with %.17g.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "gswlab/checks.hpp"
#include "gswlab/deformation.hpp"
#include "gswlab/frequency.hpp"
#include "gswlab/moduli_geom.hpp"
#include "gswlab/version.hpp"

namespace gswlab::io {

using nlohmann::json;

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Minimal CSV builder; doubles always go through %.17g.
class Csv {
 public:
  explicit Csv(const std::vector<std::string>& header) : cols_(header.size()) { row_strings(header); }

  Csv& row(const std::vector<double>& v) {
    if (v.size() != cols_) throw ValidationError("csv row has the wrong number of columns");
    for (std::size_t k = 0; k < v.size(); ++k) {
      if (k) out_ += ',';
      out_ += fmt(v[k]);
    }
    out_ += '\n';
    return *this;
  }
  const std::string& str() const { return out_; }

 private:
  void row_strings(const std::vector<std::string>& v) {
    for (std::size_t k = 0; k < v.size(); ++k) {
      if (k) out_ += ',';
      out_ += v[k];
    }
    out_ += '\n';
  }
  std::size_t cols_;
  std::string out_;
};

// ---------------------------------------------------------------------------------------------
// enum parsing

inline Topology parse_topology(std::string_view s) {
  if (s == "Torus") return Topology::Torus;
  if (s == "Box") return Topology::Box;
  throw ValidationError("unknown topology '" + std::string(s) + "'");
}
inline TargetKind parse_kind(std::string_view s) {
  if (s == "FlatH") return TargetKind::FlatH;
  if (s == "ConeHmodZ2") return TargetKind::ConeHmodZ2;
  throw ValidationError("unknown target kind '" + std::string(s) + "'");
}
inline Group parse_group(std::string_view s) {
  if (s == "Trivial") return Group::Trivial;
  if (s == "U1") return Group::U1;
  throw ValidationError("unknown group '" + std::string(s) + "'");
}
inline Stencil parse_stencil(std::string_view s) {
  if (s == "Forward") return Stencil::Forward;
  if (s == "Centered") return Stencil::Centered;
  throw ValidationError("unknown stencil '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------------------------
// snapshots

inline json snapshot_header(const Configuration& c) {
  const auto& g = c.geom;
  json fields = json::array({"u"});
  if (c.group() == Group::U1) fields.push_back("a");
  return {{"format", "gswlab-snapshot"},
          {"version", kSnapshotVersion},
          {"dims", g.dims},
          {"h", g.h},
          {"topology", to_string(g.topology)},
          {"origin", g.origin},
          {"kind", to_string(c.kind())},
          {"group", to_string(c.group())},
          {"stencil", to_string(c.stencil)},
          {"sites", g.sites()},
          {"fields", fields},
          {"byte_order", "little-endian"}};
}

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}
inline void put_double(std::string& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }
inline std::uint64_t get_u64(std::string_view s, std::size_t at) {
  std::uint64_t v = 0;
  for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[at + b])) << (8 * b);
  return v;
}

inline Configuration config_from_header(const json& h) {
  if (h.value("format", "") != "gswlab-snapshot" || h.value("version", 0) != kSnapshotVersion)
    throw ValidationError("not a gswlab snapshot (version 1)");
  LatticeGeom g(h.at("dims").get<std::array<int, 4>>(), h.at("h").get<double>(),
                parse_topology(h.at("topology").get<std::string>()), h.at("origin").get<Vec4>());
  if (h.at("sites").get<std::size_t>() != g.sites()) throw ValidationError("snapshot site count does not match dims");
  Configuration c;
  c.geom = g;
  c.stencil = parse_stencil(h.at("stencil").get<std::string>());
  c.u = SpinorField{parse_kind(h.at("kind").get<std::string>()), {}};
  c.A = parse_group(h.at("group").get<std::string>()) == Group::U1 ? ConnectionField::zero_u1(g) : ConnectionField::trivial();
  return c;
}

}  // namespace detail

inline std::string snapshot_binary(const Configuration& c) {
  c.validate();
  const std::string hdr = snapshot_header(c).dump();
  std::string out = "GSWSNAP1";
  const auto n = static_cast<std::uint32_t>(hdr.size());
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((n >> (8 * b)) & 0xff));
  out += hdr;
  out.reserve(out.size() + 8 * 8 * c.geom.sites());
  for (const auto& q : c.u.q)
    for (int a = 0; a < 4; ++a) detail::put_double(out, q[a]);
  for (double v : c.A.a) detail::put_double(out, v);
  return out;
}

inline Configuration read_snapshot_binary(std::string_view bytes) {
  if (bytes.size() < 12 || bytes.substr(0, 8) != "GSWSNAP1") throw ValidationError("bad snapshot magic");
  std::uint32_t n = 0;
  for (int b = 0; b < 4; ++b) n |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[8 + b])) << (8 * b);
  if (bytes.size() < 12 + static_cast<std::size_t>(n)) throw ValidationError("truncated snapshot header");
  json h;
  try {
    h = json::parse(bytes.substr(12, n));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("snapshot header: ") + e.what());
  }
  Configuration c = detail::config_from_header(h);
  const std::size_t sites = c.geom.sites();
  const std::size_t per = c.group() == Group::U1 ? 8 : 4;
  std::size_t at = 12 + n;
  if (bytes.size() != at + 8 * per * sites) throw ValidationError("snapshot payload has the wrong length");
  std::vector<Quaternion> q(sites);
  for (auto& x : q)
    for (int a = 0; a < 4; ++a, at += 8) x[a] = std::bit_cast<double>(detail::get_u64(bytes, at));
  for (auto& v : c.A.a) {
    v = std::bit_cast<double>(detail::get_u64(bytes, at));
    at += 8;
  }
  c.u = make_spinor(c.kind(), std::move(q));
  c.validate();
  return c;
}

inline std::string snapshot_json(const Configuration& c) {
  c.validate();
  json u = json::array();
  for (const auto& q : c.u.q) u.push_back({q.h0, q.h1, q.h2, q.h3});
  json a = json::array();
  for (Site x = 0; x < c.A.a.size() / 4; ++x) a.push_back({c.A.a[4 * x], c.A.a[4 * x + 1], c.A.a[4 * x + 2], c.A.a[4 * x + 3]});
  return json{{"header", snapshot_header(c)}, {"u", u}, {"a", a}}.dump(1) + "\n";
}

inline Configuration read_snapshot_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
    Configuration c = detail::config_from_header(j.at("header"));
    const auto& u = j.at("u");
    if (u.size() != c.geom.sites()) throw ValidationError("snapshot u has the wrong length");
    std::vector<Quaternion> q;
    q.reserve(u.size());
    for (const auto& e : u) {
      const auto v = e.get<std::array<double, 4>>();
      q.emplace_back(v[0], v[1], v[2], v[3]);
    }
    const auto& a = j.at("a");
    if (c.group() == Group::U1) {
      if (a.size() != c.geom.sites()) throw ValidationError("snapshot a has the wrong length");
      for (Site x = 0; x < a.size(); ++x) {
        const auto v = a[x].get<std::array<double, 4>>();
        for (int i = 0; i < 4; ++i) c.A.a[4 * x + i] = v[i];
      }
    } else if (!a.empty()) {
      throw ValidationError("trivial-group snapshot carries a connection");
    }
    c.u = make_spinor(c.kind(), std::move(q));
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("snapshot: ") + e.what());
  }
}

// ---------------------------------------------------------------------------------------------
// sources

inline std::string sources_json(const Sources& s) {
  const auto quats = [](const std::vector<Quaternion>& v) {
    json a = json::array();
    for (const auto& q : v) a.push_back({q.h0, q.h1, q.h2, q.h3});
    return a;
  };
  json eta = json::array();
  for (const auto& c : s.eta.c) eta.push_back(c);
  return json{{"format", "gswlab-sources"}, {"version", kSnapshotVersion}, {"S", quats(s.S)}, {"psi", quats(s.psi)}, {"eta", eta}}.dump(1) +
         "\n";
}

inline Sources read_sources_json(std::string_view text, const Configuration& c) {
  try {
    const json j = json::parse(text);
    if (j.value("format", "") != "gswlab-sources") throw ValidationError("not a gswlab sources file");
    const auto quats = [&](const json& a) {
      std::vector<Quaternion> v;
      for (const auto& e : a) {
        const auto x = e.get<std::array<double, 4>>();
        v.emplace_back(x[0], x[1], x[2], x[3]);
      }
      if (!v.empty() && v.size() != c.geom.sites()) throw ValidationError("source field has the wrong length");
      return v;
    };
    Sources s{quats(j.at("S")), quats(j.at("psi")), {}};
    for (const auto& e : j.at("eta")) s.eta.c.push_back(e.get<std::array<double, 3>>());
    if (!s.eta.c.empty() && s.eta.c.size() != c.geom.sites()) throw ValidationError("eta has the wrong length");
    return s;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("sources: ") + e.what());
  }
}

// ---------------------------------------------------------------------------------------------
// reports

inline std::string triplets(const Eigen::MatrixXd& M) {
  std::size_t nnz = 0;
  for (Eigen::Index i = 0; i < M.rows(); ++i)
    for (Eigen::Index j = 0; j < M.cols(); ++j) nnz += M(i, j) != 0.0;
  std::string out = "# " + std::to_string(M.rows()) + " " + std::to_string(M.cols()) + " " + std::to_string(nnz) + "\n";
  for (Eigen::Index i = 0; i < M.rows(); ++i)
    for (Eigen::Index j = 0; j < M.cols(); ++j)
      if (M(i, j) != 0.0) out += std::to_string(i) + " " + std::to_string(j) + " " + fmt(M(i, j)) + "\n";
  return out;
}

inline std::string newton_trace_csv(const std::vector<NewtonStep>& trace) {
  Csv csv({"iter", "residual_norm", "step_norm"});
  for (const auto& s : trace) csv.row({static_cast<double>(s.iter), s.residual_norm, s.step_norm});
  return csv.str();
}

// JSON has no infinity; a gap with nothing above it is written as the string "inf"
inline json finite_or_inf(double v) { return std::isfinite(v) ? json(v) : json("inf"); }

inline json to_json(const CohomologyReport& r) {
  return {{"h0", r.h0},
          {"h1", r.h1},
          {"h2", r.h2},
          {"index", r.index},
          {"index_from_shape", r.index_from_shape},
          {"h2_direct", r.h2_direct},
          {"margin_gauge", finite_or_inf(r.margin_gauge)},
          {"margin_elliptic", finite_or_inf(r.margin_elliptic)},
          {"margin_fsw", finite_or_inf(r.margin_fsw)},
          {"ill_conditioned", r.ill_conditioned},
          {"warnings", r.warnings}};
}

inline json to_json(const ComplexCheck& c) {
  return {{"norm", c.norm}, {"residual_norm", c.residual_norm}, {"on_shell", c.on_shell}};
}

inline json to_json(const KuranishiReport& r) {
  json samples = json::array();
  for (const auto& p : r.samples)
    samples.push_back({{"xi", std::vector<double>(p.xi.data(), p.xi.data() + p.xi.size())},
                       {"kappa", std::vector<double>(p.kappa.data(), p.kappa.data() + p.kappa.size())},
                       {"iterations", p.iterations},
                       {"defect", p.defect},
                       {"converged", p.converged}});
  return {{"h0", r.h0},         {"h1", r.h1},           {"h2", r.h2},
          {"regular", r.regular}, {"smooth", r.smooth}, {"failures", r.failures},
          {"max_kappa", r.max_kappa}, {"samples", samples}};
}

inline json to_json(const TargetMargins& m) {
  return {{"samples", m.samples},
          {"fd_step", m.fd_step},
          {"tolerance_algebraic", TargetMargins::kAlgebraTol},
          {"tolerance_fd", TargetMargins::kFdTol},
          {"norm_multiplicative", m.norm_multiplicative},
          {"complex_structure", m.complex_structure},
          {"permuting", m.permuting},
          {"isometry_commute", m.isometry_commute},
          {"omega_antisymmetry", m.omega_antisymmetry},
          {"moment_fd", m.moment_fd},
          {"moment_equivariance", m.moment_equivariance},
          {"chi2", m.chi2},
          {"chi0_diagonal", m.chi0_diagonal},
          {"rho0_exact_failures", m.rho0_exact_failures},
          {"grad_rho0_exact_failures", m.grad_rho0_exact_failures},
          {"pass", m.pass()}};
}

struct CurvatureRow {
  int sample_id = 0;
  CurvatureSample s;
};

inline std::string curvature_csv(const std::vector<CurvatureRow>& rows) {
  Csv csv({"sample_id", "K_C", "bracket_norm_sq", "K_B", "gauss_terms", "K_M", "oracle_K", "rel_err"});
  for (const auto& r : rows)
    csv.row({static_cast<double>(r.sample_id), r.s.K_C, r.s.bracket_norm_sq, r.s.K_B, r.s.gauss_terms, r.s.K_M,
             r.s.oracle_K, r.s.rel_err});
  return csv.str();
}

// N is written as nan where the frequency is undefined (f below the profile floor).
inline std::string profile_csv(const RadialProfile& P, const OdeReport& ode) {
  Csv csv({"r", "F", "f", "N", "sigma", "kappa", "f_prime_check", "kappa_prime_check"});
  for (std::size_t k = 0; k < P.size(); ++k)
    csv.row({P.r[k], P.F[k], P.f[k], P.N_defined[k] ? P.N[k] : std::numeric_limits<double>::quiet_NaN(), P.sigma[k],
             P.kappa[k], ode.f_prime_dev[k], ode.kappa_prime_dev[k]});
  return csv.str();
}

inline std::string sequence_csv(const SequenceReport& r) {
  Csv csv({"n", "sup_diff_Xprime", "sup_diff_center", "Lp1", "Lp2", "Lp4", "integral_rho"});
  for (const auto& s : r.steps)
    csv.row({static_cast<double>(s.n), s.sup_diff_xprime, s.sup_diff_center, s.lp_diffs[0], s.lp_diffs[1], s.lp_diffs[2],
             s.integral_rho});
  return csv.str();
}

inline json to_json(const MonotonicityReport& m) {
  return {{"worst_F_drop", m.worst_F_drop}, {"worst_f_drop", m.worst_f_drop}, {"max_ball_ratio", m.max_ball_ratio},
          {"F_monotone", m.F_monotone},     {"f_monotone", m.f_monotone},     {"ball_shell_ok", m.ball_shell_ok},
          {"pass", m.pass()}};
}

inline json to_json(const SequenceReport& r) {
  return {{"members", r.integral_rho.size()},
          {"integral_rho", r.integral_rho},
          {"xprime_sites", r.xprime_sites},
          {"xprime_empty", r.xprime_empty},
          {"xprime_decay_factor", finite_or_inf(r.xprime_decay_factor)},
          {"xprime_decays", r.xprime_decays},
          {"center_non_decay", r.center_non_decay},
          {"lp_decays", {{"p1", r.lp_decays[0]}, {"p2", r.lp_decays[1]}, {"p4", r.lp_decays[2]}}},
          {"warnings", r.warnings}};
}

}  // namespace gswlab::io

#pragma once
// The GSW residual (D_A u - S u - psi, F_A^+ + Phi4(u) - eta), its gauge action, manufactured
// sources and a slice-constrained Newton solver.
//
// Sources: S is a site field of quaternions acting by LEFT multiplication.  Left multiplication
// commutes with the right U(1) action, so with S fixed the equations stay gauge invariant and the
// deformation complex closes on shell.  psi is an additive Dirac source kept for completeness;
// it transforms with the gauge and manufacture() only uses it where u vanishes.

#include <Eigen/Dense>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "gswlab/lattice.hpp"

namespace gswlab {

struct Configuration {
  LatticeGeom geom;
  ConnectionField A;
  SpinorField u;
  Stencil stencil = Stencil::Forward;

  Group group() const { return A.group; }
  TargetKind kind() const { return u.kind; }

  void validate() const {
    geom.validate();
    if (u.q.size() != geom.sites()) throw ValidationError("spinor field size does not match the lattice");
    if (A.group == Group::U1 && A.a.size() != 4 * geom.sites())
      throw ValidationError("connection size does not match the lattice");
    if (A.group == Group::Trivial && !A.a.empty()) throw ValidationError("trivial group carries no connection");
  }
};

struct Sources {
  std::vector<Quaternion> S;    // left multiplier; empty = 0
  std::vector<Quaternion> psi;  // additive tangent source; empty = 0
  SelfDualForm eta;             // empty = 0
};

struct Residual {
  std::vector<Quaternion> dirac;
  SelfDualForm sd;  // empty for the trivial group
};

inline double norm_l2(const LatticeGeom& g, const Residual& r) {
  double s = inner_spinor(g, r.dirac, r.dirac);
  if (!r.sd.c.empty()) s += inner_selfdual(g, r.sd, r.sd);
  return std::sqrt(s);
}

inline double norm_sup(const Residual& r) {
  double m = 0;
  for (const auto& q : r.dirac) m = std::max(m, q.norm());
  for (const auto& c : r.sd.c)
    for (double v : c) m = std::max(m, std::abs(v));
  return m;
}

// Coefficient of eta_l in Phi4(u) at a cell is <mu(u), zeta_l (x) xi> with xi the unit generator.
inline SelfDualForm phi4(const LatticeGeom& g, const SpinorField& u, Group group) {
  auto out = SelfDualForm::zeros(g);
  if (group == Group::Trivial) return out;
  for (Site x = 0; x < g.sites(); ++x) {
    if (!g.is_cell(x)) continue;
    for (int l = 0; l < 3; ++l) out.c[x][l] = moment_map(u.at(x), ImQuaternion::basis(l), GLieAlg::u1(1.0));
  }
  return out;
}

inline Residual residual(const Configuration& c, const Sources& s) {
  Residual r{dirac(c.geom, c.u, c.A, c.stencil), {}};
  for (Site x = 0; x < c.geom.sites(); ++x) {
    if (!s.S.empty()) r.dirac[x] -= s.S[x] * c.u.q[x];
    if (!s.psi.empty()) r.dirac[x] -= s.psi[x];
  }
  if (c.group() == Group::U1) {
    r.sd = selfdual(c.geom, plaquette_curvature(c.geom, c.A));
    const auto p = phi4(c.geom, c.u, c.group());
    for (Site x = 0; x < c.geom.sites(); ++x)
      for (int l = 0; l < 3; ++l) r.sd.c[x][l] += p.c[x][l] - (s.eta.c.empty() ? 0.0 : s.eta.c[x][l]);
  }
  return r;
}

// ---------------------------------------------------------------------------------------------
// Gauge action

inline Configuration gauge_apply(const GaugeElement& g, const Configuration& c) {
  if (!g.theta.empty() && c.group() == Group::Trivial) throw ValidationError("gauge transformation needs group U1");
  if (!g.theta.empty() && g.theta.size() != c.geom.sites()) throw ValidationError("gauge element size mismatch");
  return {c.geom, gauge_connection(c.geom, g, c.A), gauge_spinor(g, c.u), c.stencil};
}

// Sources move with the configuration c they refer to (psi is a tangent at u).
inline Sources gauge_apply(const GaugeElement& g, const Configuration& c, const Sources& s) {
  Sources out = s;
  if (!s.psi.empty()) out.psi = gauge_tangent(g, c.u, s.psi);
  return out;
}

inline Residual gauge_apply(const GaugeElement& g, const Configuration& c, const Residual& r) {
  return {gauge_tangent(g, c.u, r.dirac), r.sd};
}

// Below this norm u(x) cannot carry a multiplier and the Dirac defect goes into psi.
inline constexpr double kManufactureFloor = 1e-9;

inline Sources manufacture(const Configuration& c) {
  Sources s;
  const auto Du = dirac(c.geom, c.u, c.A, c.stencil);
  s.S.assign(c.geom.sites(), Quaternion());
  std::vector<Quaternion> psi(c.geom.sites());
  bool any_psi = false;
  for (Site x = 0; x < c.geom.sites(); ++x) {
    const Quaternion& q = c.u.q[x];
    if (q.norm() >= kManufactureFloor) {
      s.S[x] = Du[x] * q.inverse();
      // S u reproduces Du only up to rounding; keep the remainder so the residual is tight
      const Quaternion rem = Du[x] - s.S[x] * q;
      if (rem.norm2() > 0) psi[x] = rem, any_psi = true;
    } else if (Du[x].norm2() > 0) {
      psi[x] = Du[x];
      any_psi = true;
    }
  }
  if (any_psi) s.psi = std::move(psi);
  if (c.group() == Group::U1) {
    s.eta = selfdual(c.geom, plaquette_curvature(c.geom, c.A));
    const auto p = phi4(c.geom, c.u, c.group());
    for (Site x = 0; x < c.geom.sites(); ++x)
      for (int l = 0; l < 3; ++l) s.eta.c[x][l] += p.c[x][l];
  }
  return s;
}

// ---------------------------------------------------------------------------------------------
// Flat coordinates for tangent, equation and gauge spaces.
//
// tangent  = [ b on existing links | v (4 reals per site) ]      weight h^4
// equation = [ Dirac rows (4 per site) | self-dual (3 per cell) ] weights h^4, 2 h^4
// gauge    = [ xi per site ]                                      weight h^4
// The trivial group has no b, no self-dual rows and no gauge space.

struct TangentConfig {
  std::vector<double> b;  // 4 per site, zero on missing links; empty for the trivial group
  std::vector<Quaternion> v;
};

class Layout {
 public:
  Layout() = default;
  Layout(const LatticeGeom& g, Group group) : g_(g), group_(group) {
    if (group == Group::U1) {
      for (Site x = 0; x < g.sites(); ++x) {
        for (int i = 0; i < 4; ++i)
          if (g.has_link(x, i)) links_.push_back(g.link_id(x, i));
        if (g.is_cell(x)) cells_.push_back(x);
      }
    }
    const double w = g.volume_weight();
    w_tan_ = Eigen::VectorXd::Constant(n_tangent(), w);
    w_eq_ = Eigen::VectorXd::Constant(n_eq(), w);
    w_eq_.tail(3 * cells_.size()).setConstant(2 * w);
    w_gauge_ = Eigen::VectorXd::Constant(n_gauge(), w);
  }

  const LatticeGeom& geom() const { return g_; }
  Group group() const { return group_; }
  std::size_t n_links() const { return links_.size(); }
  std::size_t n_cells() const { return cells_.size(); }
  std::size_t n_tangent() const { return links_.size() + 4 * g_.sites(); }
  std::size_t n_eq() const { return 4 * g_.sites() + 3 * cells_.size(); }
  std::size_t n_gauge() const { return group_ == Group::U1 ? g_.sites() : 0; }
  const Eigen::VectorXd& w_tangent() const { return w_tan_; }
  const Eigen::VectorXd& w_eq() const { return w_eq_; }
  const Eigen::VectorXd& w_gauge() const { return w_gauge_; }
  const std::vector<std::size_t>& links() const { return links_; }
  const std::vector<Site>& cells() const { return cells_; }

  Eigen::VectorXd pack(const TangentConfig& t) const {
    Eigen::VectorXd out(n_tangent());
    std::size_t k = 0;
    for (auto l : links_) out[k++] = t.b.empty() ? 0.0 : t.b[l];
    for (const auto& q : t.v)
      for (int a = 0; a < 4; ++a) out[k++] = q[a];
    return out;
  }
  TangentConfig unpack_tangent(const Eigen::VectorXd& x) const {
    TangentConfig t;
    if (group_ == Group::U1) t.b.assign(4 * g_.sites(), 0.0);
    std::size_t k = 0;
    for (auto l : links_) t.b[l] = x[k++];
    t.v.resize(g_.sites());
    for (auto& q : t.v)
      for (int a = 0; a < 4; ++a) q[a] = x[k++];
    return t;
  }
  Eigen::VectorXd pack(const Residual& r) const {
    Eigen::VectorXd out(n_eq());
    std::size_t k = 0;
    for (const auto& q : r.dirac)
      for (int a = 0; a < 4; ++a) out[k++] = q[a];
    for (auto x : cells_)
      for (int l = 0; l < 3; ++l) out[k++] = r.sd.c[x][l];
    return out;
  }
  Residual unpack_eq(const Eigen::VectorXd& y) const {
    Residual r{std::vector<Quaternion>(g_.sites()), {}};
    std::size_t k = 0;
    for (auto& q : r.dirac)
      for (int a = 0; a < 4; ++a) q[a] = y[k++];
    if (group_ == Group::U1) {
      r.sd = SelfDualForm::zeros(g_);
      for (auto x : cells_)
        for (int l = 0; l < 3; ++l) r.sd.c[x][l] = y[k++];
    }
    return r;
  }
  Eigen::VectorXd pack_gauge(const std::vector<double>& xi) const {
    return Eigen::Map<const Eigen::VectorXd>(xi.data(), static_cast<Eigen::Index>(xi.size()));
  }
  std::vector<double> unpack_gauge(const Eigen::VectorXd& z) const { return {z.data(), z.data() + z.size()}; }

  double inner_tangent(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const { return (a.array() * b.array() * w_tan_.array()).sum(); }
  double inner_eq(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const { return (a.array() * b.array() * w_eq_.array()).sum(); }
  double inner_gauge(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const { return (a.array() * b.array() * w_gauge_.array()).sum(); }

 private:
  LatticeGeom g_;
  Group group_ = Group::Trivial;
  std::vector<std::size_t> links_;
  std::vector<Site> cells_;
  Eigen::VectorXd w_tan_, w_eq_, w_gauge_;
};

// ---------------------------------------------------------------------------------------------
// Linearisations (matrix-free).  Adjoints are exact under the weighted inner products above.

// D xi = (d xi, -K_xi|u) with K_xi|u = u xi i.
inline TangentConfig gauge_lin(const Configuration& c, const std::vector<double>& xi) {
  TangentConfig t;
  if (c.group() == Group::Trivial) {
    t.v.assign(c.geom.sites(), Quaternion());
    return t;
  }
  t.b = d0(c.geom, xi);
  t.v.resize(c.geom.sites());
  for (Site x = 0; x < c.geom.sites(); ++x) t.v[x] = -(c.u.q[x] * Quaternion(0, xi[x]));
  return t;
}

// D^* (b, v) = d^* b - <u i, v>.
inline std::vector<double> gauge_lin_adjoint(const Configuration& c, const TangentConfig& t) {
  if (c.group() == Group::Trivial) return {};
  auto out = d_star(c.geom, t.b);
  for (Site x = 0; x < c.geom.sites(); ++x) out[x] -= dot(c.u.q[x] * Quaternion::i(), t.v[x]);
  return out;
}

// Same map written as d^* b + d mu_zeta(I_zeta v) for a unit imaginary zeta.
inline std::vector<double> gauge_lin_adjoint_formula(const Configuration& c, const TangentConfig& t, const ImQuaternion& zeta) {
  if (c.group() == Group::Trivial) return {};
  auto out = d_star(c.geom, t.b);
  const Quaternion z = zeta.q();
  for (Site x = 0; x < c.geom.sites(); ++x) out[x] += moment_map_diff(c.u.q[x], z, z * t.v[x]);
  return out;
}

// (b, v) -> (D^lin v + c4(K_b) - S v, d^+ b + d Phi4(v)).
inline Residual fsw_lin(const Configuration& c, const Sources& s, const TangentConfig& t) {
  Residual r{dirac_lin(c.geom, c.u, c.A, c.stencil, c.group() == Group::U1 ? t.b : std::vector<double>{}, t.v), {}};
  if (!s.S.empty())
    for (Site x = 0; x < c.geom.sites(); ++x) r.dirac[x] -= s.S[x] * t.v[x];
  if (c.group() == Group::U1) {
    r.sd = d_plus(c.geom, t.b);
    for (Site x = 0; x < c.geom.sites(); ++x) {
      if (!c.geom.is_cell(x)) continue;
      for (int l = 0; l < 3; ++l) r.sd.c[x][l] += moment_map_diff(c.u.q[x], ImQuaternion::basis(l).q(), t.v[x]);
    }
  }
  return r;
}

inline TangentConfig fsw_lin_adjoint(const Configuration& c, const Sources& s, const Residual& r) {
  const auto& g = c.geom;
  TangentConfig t;
  t.v = dirac_lin_adjoint(g, c.u, c.A, c.stencil, r.dirac);
  if (!s.S.empty())
    for (Site x = 0; x < g.sites(); ++x) t.v[x] -= s.S[x].conj() * r.dirac[x];
  if (c.group() == Group::Trivial) return t;
  t.b.assign(4 * g.sites(), 0.0);
  // c4(K_b) part
  const Quaternion iq = Quaternion::i();
  for (Site x = 0; x < g.sites(); ++x)
    for (int i = 0; i < 4; ++i) {
      const auto terms = stencil_terms(g, c.A, c.stencil, x, i);
      for (int k = 0; k < terms.n; ++k) {
        const auto& tm = terms.t[k];
        if (tm.dsign == 0) continue;
        const Quaternion tq = transport_phase(c.u.q[tm.y], tm.theta);
        const double sgn = align_sign(c.u.kind, tq, c.u.q[x]);
        t.b[tm.link] += tm.c * sgn * tm.dsign * g.h * dot(Quaternion::unit(i) * (tq * iq), r.dirac[x]);
      }
    }
  // d^+ and d Phi4 parts; the factor 2 is |eta_l|^2
  const Quaternion i = Quaternion::i();
  for (Site x = 0; x < g.sites(); ++x) {
    if (!g.is_cell(x)) continue;
    const auto E = selfdual_expand(r.sd.c[x]);
    for (int p = 0; p < 6; ++p) {
      const int a = kPlanes[p][0], b = kPlanes[p][1];
      const double v = E[p] / g.h;
      t.b[4 * g.neighbor(x, a, +1) + b] += v;
      t.b[4 * x + b] -= v;
      t.b[4 * g.neighbor(x, b, +1) + a] -= v;
      t.b[4 * x + a] += v;
    }
    for (int l = 0; l < 3; ++l) t.v[x] -= (2.0 * r.sd.c[x][l]) * (ImQuaternion::basis(l).q() * c.u.q[x] * i);
  }
  return t;
}

// Move a configuration along a tangent: a + b, u + v (re-canonicalised on the cone).
inline Configuration displace(const Configuration& c, const TangentConfig& t, double step = 1.0) {
  Configuration out = c;
  if (c.group() == Group::U1 && !t.b.empty())
    for (std::size_t l = 0; l < out.A.a.size(); ++l) out.A.a[l] += step * t.b[l];
  for (Site x = 0; x < c.geom.sites(); ++x) {
    if (c.kind() == TargetKind::ConeHmodZ2 && segment_distance_to_origin(c.u.q[x], step * t.v[x]) < kConeGuard)
      throw NumericalError("cone target: displacement passes through the cone point");
    out.u.q[x] = c.u.q[x] + step * t.v[x];
  }
  out.u = make_spinor(c.kind(), std::move(out.u.q));
  return out;
}

// ---------------------------------------------------------------------------------------------
// Least squares by CGLS in weighted coordinates; started from 0 it returns the minimum-norm
// least-squares solution.

struct CglsResult {
  Eigen::VectorXd x;
  int iterations = 0;
  double normal_residual = 0;  // |A^* r| / |A^* b|
};

template <class Apply, class Adjoint>
CglsResult cgls(const Apply& A, const Adjoint& At, const Eigen::VectorXd& rhs, const Eigen::VectorXd& w_in,
                const Eigen::VectorXd& w_out, double rtol, int max_iter) {
  const auto ip_in = [&](const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return (a.array() * b.array() * w_in.array()).sum(); };
  const auto ip_out = [&](const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return (a.array() * b.array() * w_out.array()).sum(); };
  CglsResult res;
  res.x = Eigen::VectorXd::Zero(w_in.size());
  Eigen::VectorXd r = rhs;
  Eigen::VectorXd s = At(r);
  Eigen::VectorXd p = s;
  double gamma = ip_in(s, s);
  const double gamma0 = gamma;
  if (gamma0 == 0) return res;
  for (int it = 0; it < max_iter; ++it) {
    const Eigen::VectorXd q = A(p);
    const double qq = ip_out(q, q);
    if (qq == 0) break;
    const double alpha = gamma / qq;
    res.x += alpha * p;
    r -= alpha * q;
    s = At(r);
    const double gnew = ip_in(s, s);
    res.iterations = it + 1;
    res.normal_residual = std::sqrt(gnew / gamma0);
    if (res.normal_residual <= rtol) break;
    p = s + (gnew / gamma) * p;
    gamma = gnew;
  }
  return res;
}

// ---------------------------------------------------------------------------------------------
// Newton on the slice-augmented system  [F(c + t); D^*_c t] = 0.

struct NewtonStep {
  int iter = 0;
  double residual_norm = 0;
  double step_norm = 0;
  int linear_iterations = 0;
};

struct NewtonResult {
  Configuration config;
  std::vector<NewtonStep> trace;
  bool converged = false;
};

struct NewtonOptions {
  double tol = 1e-10;
  int max_iter = 20;
  double linear_rtol = 1e-13;
  int linear_max_iter = 0;  // 0: 4 x unknowns
  bool throw_on_failure = true;  // otherwise return with converged = false and the trace
};

inline NewtonResult solve_newton(const Configuration& init, const Sources& s, const NewtonOptions& opt = {}) {
  init.validate();
  const Layout L(init.geom, init.group());
  NewtonResult out{init, {}, false};
  double step = 0;
  int lin_it = 0;
  for (int it = 0;; ++it) {
    const auto& c = out.config;
    const Residual r = residual(c, s);
    const double rn = norm_l2(c.geom, r);
    out.trace.push_back({it, rn, step, lin_it});
    if (!std::isfinite(rn)) throw NumericalError("Newton: residual is not finite");
    if (rn <= opt.tol) {
      out.converged = true;
      return out;
    }
    if (it >= opt.max_iter) break;
    const Eigen::VectorXd w_rows = [&] {
      Eigen::VectorXd w(L.n_eq() + L.n_gauge());
      w << L.w_eq(), L.w_gauge();
      return w;
    }();
    const auto A = [&](const Eigen::VectorXd& x) {
      const auto t = L.unpack_tangent(x);
      Eigen::VectorXd y(L.n_eq() + L.n_gauge());
      y << L.pack(fsw_lin(c, s, t)), L.pack_gauge(gauge_lin_adjoint(c, t));
      return y;
    };
    const auto At = [&](const Eigen::VectorXd& y) {
      const auto e = L.unpack_eq(y.head(L.n_eq()));
      auto t = fsw_lin_adjoint(c, s, e);
      if (L.n_gauge() > 0) {
        const auto dg = gauge_lin(c, L.unpack_gauge(y.tail(L.n_gauge())));
        for (std::size_t l = 0; l < t.b.size(); ++l) t.b[l] += dg.b[l];
        for (Site x = 0; x < c.geom.sites(); ++x) t.v[x] += dg.v[x];
      }
      return L.pack(t);
    };
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(L.n_eq() + L.n_gauge());
    rhs.head(L.n_eq()) = -L.pack(r);
    const int max_lin = opt.linear_max_iter > 0 ? opt.linear_max_iter : static_cast<int>(4 * L.n_tangent());
    const auto sol = cgls(A, At, rhs, L.w_tangent(), w_rows, opt.linear_rtol, max_lin);
    lin_it = sol.iterations;
    step = std::sqrt(L.inner_tangent(sol.x, sol.x));
    out.config = displace(c, L.unpack_tangent(sol.x));
  }
  if (!opt.throw_on_failure) return out;
  throw NumericalError("Newton: no convergence after " + std::to_string(opt.max_iter) +
                       " iterations, final residual " + std::to_string(out.trace.back().residual_norm));
}

}  // namespace gswlab

#pragma once
// Discrete calculus on a flat 4-torus or 4-box.
//
// Sites are numbered x0 fastest.  Link (x, i) joins x and x + e_i and carries a real a_i(x);
// its transport is right multiplication by e^{i h a_i(x)}.  On a box the link exists only for
// x_i < n_i - 1 and faces use one-sided stencils.
//
// Inner products: weight h^4 per site, per link, per plaquette; self-dual coefficients carry 2 h^4
// because |eta_l|^2 = 2.  The self-dual part lives on cells (sites whose six plaquettes exist).

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <vector>

#include "gswlab/quat_target.hpp"

namespace gswlab {

enum class Topology { Torus, Box };
enum class Stencil { Forward, Centered };

inline const char* to_string(Topology t) { return t == Topology::Torus ? "Torus" : "Box"; }
inline const char* to_string(Stencil s) { return s == Stencil::Forward ? "Forward" : "Centered"; }

using Vec4 = std::array<double, 4>;
using Site = std::size_t;
inline constexpr Site kNoSite = static_cast<Site>(-1);

// plane p <-> (i, j), i < j
inline constexpr std::array<std::array<int, 2>, 6> kPlanes{{{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}}};
inline constexpr int plane_index(int i, int j) {
  // i < j
  return i == 0 ? j - 1 : (i == 1 ? j + 1 : 5);
}

struct LatticeGeom {
  std::array<int, 4> dims{1, 1, 1, 1};
  double h = 1.0;
  Topology topology = Topology::Torus;
  Vec4 origin{0, 0, 0, 0};
  std::vector<double> s_X;  // scalar curvature slot; empty means identically 0

  LatticeGeom() = default;
  LatticeGeom(std::array<int, 4> d, double spacing, Topology t, Vec4 o = {0, 0, 0, 0})
      : dims(d), h(spacing), topology(t), origin(o) {
    validate();
  }

  // Box centred on the origin of R^4.
  static LatticeGeom centered_box(int n, double spacing) {
    const double o = -0.5 * (n - 1) * spacing;
    return LatticeGeom({n, n, n, n}, spacing, Topology::Box, {o, o, o, o});
  }

  void validate() const {
    if (!(h > 0) || !std::isfinite(h)) throw ValidationError("lattice spacing h must be positive");
    for (int d : dims)
      if (d < 1) throw ValidationError("lattice dims must be positive");
    if (!s_X.empty() && s_X.size() != sites()) throw ValidationError("s_X field has wrong size");
  }

  std::size_t sites() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2] * dims[3];
  }
  std::size_t stride(int i) const {
    std::size_t s = 1;
    for (int a = 0; a < i; ++a) s *= dims[a];
    return s;
  }
  Site index(const std::array<int, 4>& x) const {
    return x[0] + dims[0] * (x[1] + static_cast<std::size_t>(dims[1]) * (x[2] + static_cast<std::size_t>(dims[2]) * x[3]));
  }
  std::array<int, 4> coords(Site s) const {
    std::array<int, 4> x{};
    for (int a = 0; a < 4; ++a) {
      x[a] = static_cast<int>(s % dims[a]);
      s /= dims[a];
    }
    return x;
  }
  int coord(Site s, int i) const { return static_cast<int>((s / stride(i)) % dims[i]); }

  // x + dir e_i, or kNoSite outside a box.
  Site neighbor(Site s, int i, int dir) const {
    const int c = coord(s, i);
    const std::size_t st = stride(i);
    int nc = c + dir;
    if (nc < 0 || nc >= dims[i]) {
      if (topology == Topology::Box) return kNoSite;
      nc = (nc + dims[i]) % dims[i];
    }
    return s + (static_cast<std::ptrdiff_t>(nc) - c) * static_cast<std::ptrdiff_t>(st);
  }
  bool has_link(Site s, int i) const {
    return topology == Topology::Torus ? true : coord(s, i) < dims[i] - 1;
  }
  std::size_t link_id(Site s, int i) const { return 4 * s + i; }
  bool has_plaquette(Site s, int i, int j) const { return has_link(s, i) && has_link(s, j); }
  bool is_cell(Site s) const {
    if (topology == Topology::Torus) return true;
    for (int a = 0; a < 4; ++a)
      if (!has_link(s, a)) return false;
    return true;
  }
  std::size_t link_count() const {
    std::size_t n = 0;
    for (Site s = 0; s < sites(); ++s)
      for (int i = 0; i < 4; ++i) n += has_link(s, i);
    return n;
  }
  std::size_t cell_count() const {
    std::size_t n = 0;
    for (Site s = 0; s < sites(); ++s) n += is_cell(s);
    return n;
  }
  Vec4 position(Site s) const {
    const auto x = coords(s);
    return {origin[0] + h * x[0], origin[1] + h * x[1], origin[2] + h * x[2], origin[3] + h * x[3]};
  }
  double scalar_curvature(Site s) const { return s_X.empty() ? 0.0 : s_X[s]; }
  double volume_weight() const { return h * h * h * h; }

  // Injectivity-radius analogue: half the smallest box width (period on a torus).
  double delta0() const {
    double m = 1e300;
    for (int a = 0; a < 4; ++a)
      m = std::min(m, 0.5 * h * (topology == Topology::Box ? dims[a] - 1 : dims[a]));
    return m;
  }
};

struct SpinorField {
  TargetKind kind = TargetKind::FlatH;
  std::vector<Quaternion> q;

  static SpinorField zeros(const LatticeGeom& g, TargetKind k = TargetKind::FlatH) {
    return {k, std::vector<Quaternion>(g.sites())};
  }
  TargetPoint at(Site s) const { return {q[s], kind}; }
};

// Canonicalise every site (cone target) and reject points inside the guard radius.
inline SpinorField make_spinor(TargetKind kind, std::vector<Quaternion> q) {
  if (kind == TargetKind::ConeHmodZ2)
    for (auto& x : q) x = TargetPoint::make(x, kind).rep;
  return {kind, std::move(q)};
}

inline SpinorField sample_spinor(const LatticeGeom& g, TargetKind kind, const std::function<Quaternion(const Vec4&)>& f) {
  std::vector<Quaternion> q(g.sites());
  for (Site s = 0; s < g.sites(); ++s) q[s] = f(g.position(s));
  return make_spinor(kind, std::move(q));
}

struct ConnectionField {
  Group group = Group::Trivial;
  std::vector<double> a;  // 4 per site for U(1); entries on missing box links stay 0

  static ConnectionField trivial() { return {Group::Trivial, {}}; }
  static ConnectionField zero_u1(const LatticeGeom& g) { return {Group::U1, std::vector<double>(4 * g.sites(), 0.0)}; }
  double at(Site s, int i) const { return a.empty() ? 0.0 : a[4 * s + i]; }
};

struct VectorField1Form {
  std::vector<std::array<Quaternion, 4>> d;
};

struct TwoForm {
  std::vector<std::array<double, 6>> F;
};

struct SelfDualForm {
  std::vector<std::array<double, 3>> c;  // coefficients of eta_1..3; zero off cells
  static SelfDualForm zeros(const LatticeGeom& g) { return {std::vector<std::array<double, 3>>(g.sites(), {0, 0, 0})}; }
};

// ---------------------------------------------------------------------------------------------
// Stencils

// One term of (d_A phi)_i(x) = sum c * s * phi(y) * e^{i theta}.  theta = dsign * h * a(link).
struct StencilTerm {
  Site y = kNoSite;
  double c = 0;
  double theta = 0;
  std::size_t link = 0;
  double dsign = 0;  // 0: no link dependence
};

struct StencilTerms {
  std::array<StencilTerm, 3> t;
  int n = 0;
  void push(const StencilTerm& s) { t[n++] = s; }
};

inline StencilTerms stencil_terms(const LatticeGeom& g, const ConnectionField& A, Stencil st, Site x, int i) {
  StencilTerms out;
  const bool fwd = g.has_link(x, i);
  const Site xm = g.neighbor(x, i, -1);
  const bool bwd = xm != kNoSite && g.has_link(xm, i);
  const double ih = 1.0 / g.h;
  const auto forward = [&](double w) {
    const Site y = g.neighbor(x, i, +1);
    out.push({y, w * ih, g.h * A.at(x, i), g.link_id(x, i), +1.0});
    out.push({x, -w * ih, 0.0, 0, 0.0});
  };
  const auto backward = [&](double w) {
    out.push({x, w * ih, 0.0, 0, 0.0});
    out.push({xm, -w * ih, -g.h * A.at(xm, i), g.link_id(xm, i), -1.0});
  };
  if (st == Stencil::Forward || !(fwd && bwd)) {
    if (fwd)
      forward(1.0);
    else if (bwd)
      backward(1.0);
    return out;
  }
  // centred: the two x terms cancel
  const Site y = g.neighbor(x, i, +1);
  out.push({y, 0.5 * ih, g.h * A.at(x, i), g.link_id(x, i), +1.0});
  out.push({xm, -0.5 * ih, -g.h * A.at(xm, i), g.link_id(xm, i), -1.0});
  return out;
}

// Cone alignment: pick the representative of the transported neighbour nearest the base value.
inline double align_sign(TargetKind kind, const Quaternion& transported, const Quaternion& base) {
  if (kind == TargetKind::FlatH) return 1.0;
  return dot(transported, base) >= 0 ? 1.0 : -1.0;
}

inline Quaternion transport_phase(const Quaternion& q, double theta) {
  return theta == 0.0 ? q : mul_complex_right(q, std::cos(theta), std::sin(theta));
}

inline Quaternion diff_at(const LatticeGeom& g, const SpinorField& u, const ConnectionField& A, Stencil st, Site x, int i) {
  const auto terms = stencil_terms(g, A, st, x, i);
  Quaternion r;
  for (int k = 0; k < terms.n; ++k) {
    const auto& t = terms.t[k];
    const Quaternion tq = transport_phase(u.q[t.y], t.theta);
    r += (t.c * (t.y == x ? 1.0 : align_sign(u.kind, tq, u.q[x]))) * tq;
  }
  return r;
}

inline VectorField1Form covariant_diff(const LatticeGeom& g, const SpinorField& u, const ConnectionField& A,
                                       Stencil st = Stencil::Forward) {
  VectorField1Form out{std::vector<std::array<Quaternion, 4>>(g.sites())};
  for (Site x = 0; x < g.sites(); ++x)
    for (int i = 0; i < 4; ++i) out.d[x][i] = diff_at(g, u, A, st, x, i);
  return out;
}

// ---------------------------------------------------------------------------------------------
// Clifford multiplication and the Dirac operator

struct SpinorPair {
  Quaternion plus, minus;
};

// c(h)(v+, v-) = (-conj(h) v-, h v+)
inline SpinorPair clifford(const Quaternion& hdir, const SpinorPair& p) {
  return {-(hdir.conj() * p.minus), hdir * p.plus};
}

inline Quaternion dirac_at(const LatticeGeom& g, const SpinorField& u, const ConnectionField& A, Stencil st, Site x) {
  Quaternion r;
  for (int i = 0; i < 4; ++i) r += Quaternion::unit(i) * diff_at(g, u, A, st, x, i);
  return r;
}

inline std::vector<Quaternion> dirac(const LatticeGeom& g, const SpinorField& u, const ConnectionField& A,
                                     Stencil st = Stencil::Forward) {
  std::vector<Quaternion> out(g.sites());
  for (Site x = 0; x < g.sites(); ++x) out[x] = dirac_at(g, u, A, st, x);
  return out;
}

// Linearisation at (A, u) along (b, v): D^lin_A v + c4(K_b).  Empty b means no link direction.
inline std::vector<Quaternion> dirac_lin(const LatticeGeom& g, const SpinorField& u, const ConnectionField& A, Stencil st,
                                         const std::vector<double>& b, const std::vector<Quaternion>& v) {
  std::vector<Quaternion> out(g.sites());
  const Quaternion iq = Quaternion::i();
  for (Site x = 0; x < g.sites(); ++x) {
    Quaternion r;
    for (int i = 0; i < 4; ++i) {
      const auto terms = stencil_terms(g, A, st, x, i);
      Quaternion di;
      for (int k = 0; k < terms.n; ++k) {
        const auto& t = terms.t[k];
        const double s = t.y == x ? 1.0 : align_sign(u.kind, transport_phase(u.q[t.y], t.theta), u.q[x]);
        if (!v.empty()) di += (t.c * s) * transport_phase(v[t.y], t.theta);
        if (!b.empty() && t.dsign != 0)
          di += (t.c * s * t.dsign * g.h * b[t.link]) * (transport_phase(u.q[t.y], t.theta) * iq);
      }
      r += Quaternion::unit(i) * di;
    }
    out[x] = r;
  }
  return out;
}

// Exact transpose of v -> D^lin_A v (site weights cancel).
inline std::vector<Quaternion> dirac_lin_adjoint(const LatticeGeom& g, const SpinorField& u, const ConnectionField& A,
                                                 Stencil st, const std::vector<Quaternion>& psi) {
  std::vector<Quaternion> out(g.sites());
  for (Site x = 0; x < g.sites(); ++x) {
    for (int i = 0; i < 4; ++i) {
      const auto terms = stencil_terms(g, A, st, x, i);
      const Quaternion ep = Quaternion::unit(i).conj() * psi[x];
      for (int k = 0; k < terms.n; ++k) {
        const auto& t = terms.t[k];
        const double s = t.y == x ? 1.0 : align_sign(u.kind, transport_phase(u.q[t.y], t.theta), u.q[x]);
        out[t.y] += (t.c * s) * transport_phase(ep, -t.theta);
      }
    }
  }
  return out;
}

// Transpose of w -> (d_A w)_i as a map from sites to site 1-forms (forward/one-sided stencil pairing).
inline std::vector<Quaternion> covariant_diff_adjoint(const LatticeGeom& g, const SpinorField& u, const ConnectionField& A,
                                                      Stencil st, const VectorField1Form& w) {
  std::vector<Quaternion> out(g.sites());
  for (Site x = 0; x < g.sites(); ++x) {
    for (int i = 0; i < 4; ++i) {
      const auto terms = stencil_terms(g, A, st, x, i);
      for (int k = 0; k < terms.n; ++k) {
        const auto& t = terms.t[k];
        const double s = t.y == x ? 1.0 : align_sign(u.kind, transport_phase(u.q[t.y], t.theta), u.q[x]);
        out[t.y] += (t.c * s) * transport_phase(w.d[x][i], -t.theta);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------------------------
// Scalar fields and forms

inline std::vector<double> d0(const LatticeGeom& g, const std::vector<double>& f) {
  std::vector<double> b(4 * g.sites(), 0.0);
  for (Site x = 0; x < g.sites(); ++x)
    for (int i = 0; i < 4; ++i)
      if (g.has_link(x, i)) b[4 * x + i] = (f[g.neighbor(x, i, +1)] - f[x]) / g.h;
  return b;
}

// Exact adjoint of d0: <d0 f, b> = <f, d_star b>.
inline std::vector<double> d_star(const LatticeGeom& g, const std::vector<double>& b) {
  std::vector<double> f(g.sites(), 0.0);
  for (Site x = 0; x < g.sites(); ++x)
    for (int i = 0; i < 4; ++i)
      if (g.has_link(x, i)) {
        const double v = b[4 * x + i] / g.h;
        f[g.neighbor(x, i, +1)] += v;
        f[x] -= v;
      }
  return f;
}

// d of a link 1-form: F_ij = (b_j(x+e_i) - b_j(x))/h - (b_i(x+e_j) - b_i(x))/h.
inline TwoForm exterior_d1(const LatticeGeom& g, const std::vector<double>& b) {
  TwoForm F{std::vector<std::array<double, 6>>(g.sites(), std::array<double, 6>{})};
  if (b.empty()) return F;
  for (Site x = 0; x < g.sites(); ++x)
    for (int p = 0; p < 6; ++p) {
      const int i = kPlanes[p][0], j = kPlanes[p][1];
      if (!g.has_plaquette(x, i, j)) continue;
      const Site xi = g.neighbor(x, i, +1), xj = g.neighbor(x, j, +1);
      F.F[x][p] = (b[4 * xi + j] - b[4 * x + j] - b[4 * xj + i] + b[4 * x + i]) / g.h;
    }
  return F;
}

inline TwoForm plaquette_curvature(const LatticeGeom& g, const ConnectionField& A) {
  if (A.group == Group::Trivial) return {std::vector<std::array<double, 6>>(g.sites(), std::array<double, 6>{})};
  return exterior_d1(g, A.a);
}

// Largest |dF| over cubes; zero up to rounding for any F = d b.
inline double bianchi_defect(const LatticeGeom& g, const TwoForm& F) {
  double m = 0;
  for (Site x = 0; x < g.sites(); ++x)
    for (int i = 0; i < 4; ++i)
      for (int j = i + 1; j < 4; ++j)
        for (int k = j + 1; k < 4; ++k) {
          if (!(g.has_link(x, i) && g.has_link(x, j) && g.has_link(x, k))) continue;
          const Site xi = g.neighbor(x, i, +1), xj = g.neighbor(x, j, +1), xk = g.neighbor(x, k, +1);
          const int jk = plane_index(j, k), ik = plane_index(i, k), ij = plane_index(i, j);
          const double v = (F.F[xi][jk] - F.F[x][jk]) - (F.F[xj][ik] - F.F[x][ik]) + (F.F[xk][ij] - F.F[x][ij]);
          m = std::max(m, std::abs(v) / g.h);
        }
  return m;
}

// eta_1 = dx01 + dx23, eta_2 = dx02 + dx31, eta_3 = dx03 + dx12; coefficient c_l = <F, eta_l>/2.
inline std::array<double, 3> selfdual_coeffs(const std::array<double, 6>& F) {
  return {0.5 * (F[0] + F[5]), 0.5 * (F[1] - F[4]), 0.5 * (F[2] + F[3])};
}

inline SelfDualForm selfdual(const LatticeGeom& g, const TwoForm& F) {
  auto out = SelfDualForm::zeros(g);
  for (Site x = 0; x < g.sites(); ++x)
    if (g.is_cell(x)) out.c[x] = selfdual_coeffs(F.F[x]);
  return out;
}

inline std::array<double, 6> selfdual_expand(const std::array<double, 3>& c) {
  return {c[0], c[1], c[2], c[2], -c[1], c[0]};
}

// F -> F^+ as a two-form (idempotent).
inline TwoForm selfdual_project(const LatticeGeom& g, const TwoForm& F) {
  TwoForm out{std::vector<std::array<double, 6>>(g.sites(), std::array<double, 6>{})};
  for (Site x = 0; x < g.sites(); ++x)
    if (g.is_cell(x)) out.F[x] = selfdual_expand(selfdual_coeffs(F.F[x]));
  return out;
}

inline SelfDualForm d_plus(const LatticeGeom& g, const std::vector<double>& b) { return selfdual(g, exterior_d1(g, b)); }

inline double inner_sites(const LatticeGeom& g, const std::vector<double>& f, const std::vector<double>& k) {
  double s = 0;
  for (Site x = 0; x < g.sites(); ++x) s += f[x] * k[x];
  return s * g.volume_weight();
}
inline double inner_links(const LatticeGeom& g, const std::vector<double>& b, const std::vector<double>& c) {
  double s = 0;
  for (Site x = 0; x < g.sites(); ++x)
    for (int i = 0; i < 4; ++i)
      if (g.has_link(x, i)) s += b[4 * x + i] * c[4 * x + i];
  return s * g.volume_weight();
}
inline double inner_spinor(const LatticeGeom& g, const std::vector<Quaternion>& v, const std::vector<Quaternion>& w) {
  double s = 0;
  for (Site x = 0; x < g.sites(); ++x) s += dot(v[x], w[x]);
  return s * g.volume_weight();
}
inline double inner_selfdual(const LatticeGeom& g, const SelfDualForm& a, const SelfDualForm& b) {
  double s = 0;
  for (Site x = 0; x < g.sites(); ++x)
    if (g.is_cell(x)) s += a.c[x][0] * b.c[x][0] + a.c[x][1] * b.c[x][1] + a.c[x][2] * b.c[x][2];
  return 2.0 * s * g.volume_weight();
}

// ---------------------------------------------------------------------------------------------
// Lattice U(1) gauge transformations: u -> u e^{-i theta}, a -> a + d theta.

struct GaugeElement {
  std::vector<double> theta;  // phase angle per site; empty = identity
  static GaugeElement identity() { return {}; }
  GaugeElement compose(const GaugeElement& o) const {  // (this * o)
    if (theta.empty()) return o;
    if (o.theta.empty()) return *this;
    GaugeElement r{theta};
    for (std::size_t s = 0; s < r.theta.size(); ++s) r.theta[s] += o.theta[s];
    return r;
  }
};

inline SpinorField gauge_spinor(const GaugeElement& g, const SpinorField& u) {
  if (g.theta.empty()) return u;
  std::vector<Quaternion> q(u.q.size());
  for (std::size_t s = 0; s < q.size(); ++s) q[s] = transport_phase(u.q[s], -g.theta[s]);
  return make_spinor(u.kind, std::move(q));
}

inline ConnectionField gauge_connection(const LatticeGeom& geo, const GaugeElement& g, const ConnectionField& A) {
  if (g.theta.empty() || A.group == Group::Trivial) return A;
  ConnectionField out = A;
  const auto dt = d0(geo, g.theta);
  for (std::size_t l = 0; l < out.a.size(); ++l) out.a[l] += dt[l];
  return out;
}

// Tangent vectors at u(x) move with the gauge: v -> v e^{-i theta}, sign-matched to the new representative.
inline std::vector<Quaternion> gauge_tangent(const GaugeElement& g, const SpinorField& u, const std::vector<Quaternion>& v) {
  if (g.theta.empty()) return v;
  std::vector<Quaternion> out(v.size());
  for (std::size_t s = 0; s < v.size(); ++s) {
    out[s] = transport_phase(v[s], -g.theta[s]);
    if (u.kind == TargetKind::ConeHmodZ2) {
      const Quaternion moved = transport_phase(u.q[s], -g.theta[s]);
      if (!(canonical_cone_rep(moved) == moved)) out[s] = -out[s];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------------------------
// Quadrature on balls and 3-spheres

struct BallSpec {
  Vec4 center{0, 0, 0, 0};
  double r = 0;
  int resolution = 0;  // Gauss-Legendre nodes per polar angle; 0 = automatic
};

// Gauss-Legendre nodes/weights on [-1, 1].
inline void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
  x.assign(n, 0.0);
  w.assign(n, 0.0);
  for (int k = 0; k < n; ++k) {
    double t = std::cos(std::numbers::pi * (k + 0.75) / (n + 0.5));
    for (int it = 0; it < 100; ++it) {
      const double p = std::legendre(n, t), pm = std::legendre(n - 1, t);
      const double dp = n * (t * p - pm) / (t * t - 1.0);
      const double dt = p / dp;
      t -= dt;
      if (std::abs(dt) < 1e-16) break;
    }
    const double p = std::legendre(n, t), pm = std::legendre(n - 1, t);
    const double dp = n * (t * p - pm) / (t * t - 1.0);
    x[k] = t;
    w[k] = 2.0 / ((1.0 - t * t) * dp * dp);
  }
}

namespace detail {

inline void check_ball(const LatticeGeom& g, const BallSpec& b, double pad) {
  if (!(b.r > 0)) throw ValidationError("ball radius must be positive");
  if (b.r > g.delta0() * (1 + 1e-12)) throw ValidationError("ball radius exceeds delta0");
  if (g.topology == Topology::Box)
    for (int a = 0; a < 4; ++a) {
      const double lo = g.origin[a], hi = g.origin[a] + g.h * (g.dims[a] - 1);
      if (b.center[a] - b.r - pad < lo - 1e-12 * g.h || b.center[a] + b.r + pad > hi + 1e-12 * g.h)
        throw ValidationError("ball leaves the lattice box");
    }
}

inline int wrap_coord(const LatticeGeom& g, int a, int c) {
  if (g.topology == Topology::Box) return c;
  const int n = g.dims[a];
  return ((c % n) + n) % n;
}

}  // namespace detail

// Lattice sum with weight clamp((r' - |x - c|)/h + 1/2, 0, 1) h^4. The ramp centre r' = r - h^2/(8r)
// cancels the h^2/(2r^2) volume excess a symmetric ramp picks up from the r^3 growth of the shells.
inline double ball_integral(const LatticeGeom& g, const std::vector<double>& f, const BallSpec& b) {
  detail::check_ball(g, b, 0.5 * g.h);
  const double r_eff = b.r - g.h * g.h / (8 * b.r);
  std::array<int, 4> lo{}, hi{};
  for (int a = 0; a < 4; ++a) {
    lo[a] = static_cast<int>(std::floor((b.center[a] - b.r - g.origin[a]) / g.h - 1));
    hi[a] = static_cast<int>(std::ceil((b.center[a] + b.r - g.origin[a]) / g.h + 1));
    if (g.topology == Topology::Box) {
      lo[a] = std::max(lo[a], 0);
      hi[a] = std::min(hi[a], g.dims[a] - 1);
    }
  }
  double sum = 0;
  std::array<int, 4> x{};
  for (x[3] = lo[3]; x[3] <= hi[3]; ++x[3])
    for (x[2] = lo[2]; x[2] <= hi[2]; ++x[2])
      for (x[1] = lo[1]; x[1] <= hi[1]; ++x[1])
        for (x[0] = lo[0]; x[0] <= hi[0]; ++x[0]) {
          double d2 = 0;
          for (int a = 0; a < 4; ++a) {
            const double dx = g.origin[a] + g.h * x[a] - b.center[a];
            d2 += dx * dx;
          }
          const double w = std::clamp((r_eff - std::sqrt(d2)) / g.h + 0.5, 0.0, 1.0);
          if (w == 0.0) continue;
          std::array<int, 4> y{};
          for (int a = 0; a < 4; ++a) y[a] = detail::wrap_coord(g, a, x[a]);
          sum += w * f[g.index(y)];
        }
  return sum * g.volume_weight();
}

// Multilinear interpolation at a continuum point.
inline double interpolate(const LatticeGeom& g, const std::vector<double>& f, const Vec4& p) {
  std::array<int, 4> base{};
  std::array<double, 4> t{};
  for (int a = 0; a < 4; ++a) {
    const double s = (p[a] - g.origin[a]) / g.h;
    int c = static_cast<int>(std::floor(s));
    if (g.topology == Topology::Box) c = std::clamp(c, 0, std::max(0, g.dims[a] - 2));
    base[a] = c;
    t[a] = s - c;
  }
  double r = 0;
  for (int corner = 0; corner < 16; ++corner) {
    double w = 1;
    std::array<int, 4> y{};
    for (int a = 0; a < 4; ++a) {
      const int bit = (corner >> a) & 1;
      w *= bit ? t[a] : 1.0 - t[a];
      y[a] = detail::wrap_coord(g, a, std::min(base[a] + bit, g.topology == Topology::Box ? g.dims[a] - 1 : base[a] + bit));
    }
    if (w != 0.0) r += w * f[g.index(y)];
  }
  return r;
}

// Multilinear interpolation minus its leading error sum_a t_a (1 - t_a) h^2/2 d_a^2 f, with the
// second differences themselves interpolated. Exact for quadratics; the plain version overshoots a
// convex density by ~h^2/12 lap f, which is visible in shell integrals at r of a few h.
inline double interpolate_smooth(const LatticeGeom& g, const std::vector<double>& f, const Vec4& p) {
  const bool box = g.topology == Topology::Box;
  std::array<int, 4> base{};
  std::array<double, 4> t{};
  for (int a = 0; a < 4; ++a) {
    const double s = (p[a] - g.origin[a]) / g.h;
    int c = static_cast<int>(std::floor(s));
    if (box) c = std::clamp(c, 0, std::max(0, g.dims[a] - 2));
    base[a] = c;
    t[a] = s - c;
  }
  double r = 0;
  for (int corner = 0; corner < 16; ++corner) {
    double w = 1;
    std::array<int, 4> y{};
    for (int a = 0; a < 4; ++a) {
      const int bit = (corner >> a) & 1;
      w *= bit ? t[a] : 1.0 - t[a];
      y[a] = box ? std::min(base[a] + bit, g.dims[a] - 1) : base[a] + bit;
    }
    if (w == 0.0) continue;
    std::array<int, 4> yw{};
    for (int a = 0; a < 4; ++a) yw[a] = detail::wrap_coord(g, a, y[a]);
    double v = f[g.index(yw)];
    for (int a = 0; a < 4; ++a) {
      const double ta = t[a] * (1.0 - t[a]);
      if (ta == 0.0 || g.dims[a] < 3) continue;
      // a box edge borrows the second difference of its inner neighbour
      std::array<int, 4> m = y;
      if (box) m[a] = std::clamp(m[a], 1, g.dims[a] - 2);
      std::array<int, 4> lo = m, hi = m;
      lo[a] -= 1;
      hi[a] += 1;
      for (int b = 0; b < 4; ++b) {
        m[b] = detail::wrap_coord(g, b, m[b]);
        lo[b] = detail::wrap_coord(g, b, lo[b]);
        hi[b] = detail::wrap_coord(g, b, hi[b]);
      }
      v -= 0.5 * ta * (f[g.index(hi)] - 2.0 * f[g.index(m)] + f[g.index(lo)]);
    }
    r += w * v;
  }
  return r;
}

struct SphereRule {
  std::vector<Vec4> dir;  // unit vectors
  std::vector<double> w;  // sums to 1
};

// Product rule on S^3: x = (cos psi, sin psi cos th, sin psi sin th cos ph, sin psi sin th sin ph).
inline SphereRule sphere_rule(int n_polar) {
  SphereRule R;
  std::vector<double> xp, wp, xt, wt;
  gauss_legendre(n_polar, xp, wp);
  gauss_legendre(n_polar, xt, wt);
  const int nphi = 2 * n_polar;
  double total = 0;
  for (int a = 0; a < n_polar; ++a) {
    const double psi = 0.5 * std::numbers::pi * (xp[a] + 1.0);
    const double sp = std::sin(psi), cp = std::cos(psi);
    const double wpsi = wp[a] * sp * sp;
    for (int b = 0; b < n_polar; ++b) {
      const double ct = xt[b], st = std::sqrt(std::max(0.0, 1 - ct * ct));
      for (int c = 0; c < nphi; ++c) {
        const double ph = 2.0 * std::numbers::pi * (c + 0.5) / nphi;
        R.dir.push_back({cp, sp * ct, sp * st * std::cos(ph), sp * st * std::sin(ph)});
        R.w.push_back(wpsi * wt[b]);
        total += wpsi * wt[b];
      }
    }
  }
  for (auto& w : R.w) w /= total;
  return R;
}

inline int auto_polar_nodes(const LatticeGeom& g, const BallSpec& b) {
  return b.resolution > 0 ? b.resolution : std::max(8, static_cast<int>(std::ceil(2.0 * b.r / g.h)));
}

inline double shell_integral(const LatticeGeom& g, const std::vector<double>& f, const BallSpec& b, const SphereRule& R) {
  detail::check_ball(g, b, 0.0);
  double s = 0;
  for (std::size_t k = 0; k < R.dir.size(); ++k) {
    Vec4 p;
    for (int a = 0; a < 4; ++a) p[a] = b.center[a] + b.r * R.dir[k][a];
    s += R.w[k] * interpolate_smooth(g, f, p);
  }
  return s * 2.0 * std::numbers::pi * std::numbers::pi * b.r * b.r * b.r;
}

inline double shell_integral(const LatticeGeom& g, const std::vector<double>& f, const BallSpec& b) {
  return shell_integral(g, f, b, sphere_rule(auto_polar_nodes(g, b)));
}

}  // namespace gswlab

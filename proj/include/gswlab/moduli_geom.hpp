#pragma once
// L^2 geometry of the configuration quotient B and of the moduli space M inside it.
//
// Flat targets only: the configuration space C is a flat (weighted) Euclidean space, so the
// base curvature term of the O'Neill formula vanishes and K_B is the 3/4 |bracket^vert|^2 term.
// U(1) is abelian, so every [a ^ *b] and [c ^ b]^+ term is identically zero.

#include <functional>
#include <string>

#include "gswlab/deformation.hpp"

namespace gswlab {

// ---------------------------------------------------------------------------------------------
// Green operators by pseudo-inverse on the complement of the kernel (deformation rank rule).

class GreenSolver {
 public:
  explicit GreenSolver(LinearMap L) : L_(std::move(L)) {
    if (L_.rows() > 0 && L_.cols() > 0) svd_ = analyze(L_);
  }

  const LinearMap& map() const { return L_; }
  const DenseSvd& svd() const { return svd_; }
  bool empty() const { return L_.rows() == 0 || L_.cols() == 0; }

  // (L^* L)^+ y for y in the domain of L.
  Eigen::VectorXd solve_domain(const Eigen::VectorXd& y) const {
    if (empty()) return Eigen::VectorXd::Zero(y.size());
    return normal_solve(svd_.V, svd_.sqrt_w_cols, y);
  }
  // (L L^*)^+ y for y in the codomain of L.
  Eigen::VectorXd solve_range(const Eigen::VectorXd& y) const {
    if (empty()) return Eigen::VectorXd::Zero(y.size());
    return normal_solve(svd_.U, svd_.sqrt_w_rows, y);
  }
  // L^* (L L^*)^+ y: the weighted minimum-norm least-squares solution of L x = y.
  Eigen::VectorXd pseudo_inverse(const Eigen::VectorXd& y) const {
    if (empty()) return Eigen::VectorXd::Zero(L_.cols());
    return L_.adjoint().M * solve_range(y);
  }

 private:
  Eigen::VectorXd normal_solve(const Eigen::MatrixXd& Q, const Eigen::VectorXd& sw, const Eigen::VectorXd& y) const {
    const Eigen::Index r = svd_.rank;
    Eigen::VectorXd c = Q.leftCols(r).transpose() * (sw.asDiagonal() * y);
    c.array() /= svd_.sigma.head(r).array().square();
    return sw.cwiseInverse().asDiagonal() * (Q.leftCols(r) * c);
  }

  LinearMap L_;
  DenseSvd svd_;
};

// ---------------------------------------------------------------------------------------------
// Metric and horizontal projection

inline void check_tangent_base(const Configuration& c, const TangentConfig& t) {
  const std::size_t n = c.geom.sites();
  if (t.v.size() != n) throw ValidationError("tangent does not live over this configuration (spinor size)");
  if (c.group() == Group::U1 && t.b.size() != 4 * n) throw ValidationError("tangent does not live over this configuration (link size)");
}

inline double l2_inner(const Configuration& c, const TangentConfig& t1, const TangentConfig& t2) {
  check_tangent_base(c, t1);
  check_tangent_base(c, t2);
  const Layout L(c.geom, c.group());
  return L.inner_tangent(L.pack(t1), L.pack(t2));
}

// t -> t - D G0 D^* t, with G0 = (D^* D)^+.  For many projections at one point.
class HorizontalProjector {
 public:
  explicit HorizontalProjector(const Configuration& c) : L_(c.geom, c.group()), D_(lin_gauge(c)) {
    sw_ = L_.w_tangent().cwiseSqrt();
    if (D_.cols() == 0) return;
    Eigen::BDCSVD<Eigen::MatrixXd> svd(D_.orthonormal(), Eigen::ComputeThinU);
    const auto& s = svd.singularValues();
    const double cutoff = static_cast<double>(std::max(D_.rows(), D_.cols())) * (s.size() ? s[0] : 0.0) * kRankRelTol;
    Eigen::Index r = 0;
    while (r < s.size() && s[r] > cutoff) ++r;
    Q_ = svd.matrixU().leftCols(r);
  }

  const Layout& layout() const { return L_; }
  // Orthonormal basis of range D in orthonormal coordinates.
  const Eigen::MatrixXd& vertical_basis() const { return Q_; }

  // Columns in weighted coordinates.
  Eigen::MatrixXd project(const Eigen::MatrixXd& X) const {
    if (Q_.cols() == 0) return X;
    const Eigen::MatrixXd Xt = sw_.asDiagonal() * X;
    return sw_.cwiseInverse().asDiagonal() * (Xt - Q_ * (Q_.transpose() * Xt));
  }
  // Same, returned in orthonormal coordinates (Euclidean inner product = l2_inner).
  Eigen::MatrixXd project_orthonormal(const Eigen::MatrixXd& X) const {
    const Eigen::MatrixXd Xt = sw_.asDiagonal() * X;
    if (Q_.cols() == 0) return Xt;
    return Xt - Q_ * (Q_.transpose() * Xt);
  }

 private:
  Layout L_;
  LinearMap D_;
  Eigen::VectorXd sw_;
  Eigen::MatrixXd Q_;
};

inline TangentConfig horizontal_project(const Configuration& c, const TangentConfig& t) {
  check_tangent_base(c, t);
  const Layout L(c.geom, c.group());
  if (c.group() == Group::Trivial) return t;
  const GreenSolver G0(lin_gauge(c));
  const Eigen::VectorXd x = L.pack(t);
  const Eigen::VectorXd Dstar_x = lin_gauge_adjoint(c).M * x;
  return L.unpack_tangent(x - G0.map().M * G0.solve_domain(Dstar_x));
}

// ---------------------------------------------------------------------------------------------
// Omega and the vertical bracket

// <Omega_u(w, v), xi> = g(nabla_w K_xi, v) with nabla_w K_xi = w xi i on flat H.
inline std::vector<double> omega_form(const Configuration& c, const std::vector<Quaternion>& w, const std::vector<Quaternion>& v) {
  const std::size_t n = c.geom.sites();
  if (w.size() != n || v.size() != n) throw ValidationError("spinor tangents do not live over this configuration");
  if (c.group() == Group::Trivial) return std::vector<double>(n, 0.0);
  std::vector<double> out(n);
  for (Site x = 0; x < n; ++x) out[x] = dot(w[x] * Quaternion::i(), v[x]);
  return out;
}

// [t1~, t2~]^vert for horizontal lifts, = 2 D G0 Omega(w1, v2).  Differentiating D^* Y~ = 0 along X
// gives D^*(nabla_X Y~) = Omega(w_X, v_Y), and the vertical bracket is twice the vertical part of
// nabla_X Y~.
inline TangentConfig vertical_bracket(const Configuration& c, const TangentConfig& t1, const TangentConfig& t2) {
  check_tangent_base(c, t1);
  check_tangent_base(c, t2);
  const Layout L(c.geom, c.group());
  if (c.group() == Group::Trivial) return L.unpack_tangent(Eigen::VectorXd::Zero(L.n_tangent()));
  // abelian: the *[a ^ *b] term is absent
  const GreenSolver G0(lin_gauge(c));
  const auto om = omega_form(c, t1.v, t2.v);
  const Eigen::VectorXd z = G0.solve_domain(L.pack_gauge(om));
  return L.unpack_tangent(2.0 * (G0.map().M * z));
}

// Riemann tensor of the flat targets.
inline Quaternion curvature_C(const Quaternion&, const Quaternion&, const Quaternion&) { return Quaternion(); }

// ---------------------------------------------------------------------------------------------
// Hessians

struct Hessians {
  std::vector<Quaternion> dirac;  // Hess D_A(v, w)
  SelfDualForm phi4;              // Hess Phi4(v, w)
};

// Spinor-spinor second derivatives.  The lattice Dirac operator is linear in u for fixed A (the
// cone alignment signs are locally constant), so its part is computed from the stencil and is 0.
inline Hessians hessians(const Configuration& c, const Sources&, const std::vector<Quaternion>& v,
                         const std::vector<Quaternion>& w) {
  const auto& g = c.geom;
  if (v.size() != g.sites() || w.size() != g.sites()) throw ValidationError("spinor tangents do not live over this configuration");
  Hessians out{std::vector<Quaternion>(g.sites()), SelfDualForm::zeros(g)};
  if (c.group() == Group::Trivial) return out;
  for (Site x = 0; x < g.sites(); ++x) {
    if (!g.is_cell(x)) continue;
    for (int l = 0; l < 3; ++l) out.phi4.c[x][l] = moment_map_hess(ImQuaternion::basis(l).q(), v[x], w[x]);
  }
  return out;
}

// Full second derivative of the residual along V = (b, v), W = (c, w):
//   Dirac row: c4(nabla_w K_b) + c4(nabla_v K_c) + lattice link-link term u (i h)^2 b c
//   self-dual row: Hess Phi4(v, w)
// The last Dirac term comes from the exponential link transport and is O(h) relative to the others.
inline Residual fsw_hess(const Configuration& c, const Sources& s, const TangentConfig& V, const TangentConfig& W) {
  check_tangent_base(c, V);
  check_tangent_base(c, W);
  const auto& g = c.geom;
  const auto H = hessians(c, s, V.v, W.v);
  Residual r{H.dirac, H.phi4};
  if (c.group() == Group::Trivial) return r;
  const Quaternion iq = Quaternion::i();
  for (Site x = 0; x < g.sites(); ++x) {
    Quaternion acc;
    for (int i = 0; i < 4; ++i) {
      const auto terms = stencil_terms(g, c.A, c.stencil, x, i);
      Quaternion di;
      for (int k = 0; k < terms.n; ++k) {
        const auto& t = terms.t[k];
        if (t.dsign == 0) continue;
        const double sg = t.y == x ? 1.0 : align_sign(c.u.kind, transport_phase(c.u.q[t.y], t.theta), c.u.q[x]);
        const double hb = t.dsign * g.h * V.b[t.link], hc = t.dsign * g.h * W.b[t.link];
        di += (t.c * sg) * (hc * (transport_phase(V.v[t.y], t.theta) * iq) + hb * (transport_phase(W.v[t.y], t.theta) * iq) -
                            (hb * hc) * transport_phase(c.u.q[t.y], t.theta));
      }
      acc += Quaternion::unit(i) * di;
    }
    r.dirac[x] += acc;
  }
  return r;
}

// ---------------------------------------------------------------------------------------------
// Sectional curvature

struct CurvatureSample {
  double K_C = 0;              // base term <Rm^C(V,W)W,V>, zero for flat targets
  double bracket_norm_sq = 0;  // |[V~,W~]^vert|^2
  double K_B = 0;              // O'Neill
  double gauss_terms = 0;      // <Pi(V,V), Pi(W,W)> - |Pi(V,W)|^2
  double K_M = 0;              // K_B + gauss_terms
  double K_M_opposite = 0;     // K_B - gauss_terms (the opposite sign convention, kept for comparison)
  double oracle_K = std::numeric_limits<double>::quiet_NaN();
  double rel_err = std::numeric_limits<double>::quiet_NaN();
  bool normalized = false;  // input plane was re-orthonormalized
  std::vector<std::string> warnings;
};

// Caches the Green operators at one base point.
class ModuliGeometry {
 public:
  ModuliGeometry(const Configuration& c, const Sources& s)
      : c_(c), s_(s), L_(c.geom, c.group()), G0_(lin_gauge(c)), G_(linearize_fsw(c, s)) {
    if (G0_.svd().ill_conditioned || G_.svd().ill_conditioned) warnings_.push_back("rank margin below 10x");
  }

  const Configuration& base() const { return c_; }
  const Layout& layout() const { return L_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  double inner(const TangentConfig& a, const TangentConfig& b) const { return l2_inner(c_, a, b); }

  TangentConfig horizontal_project(const TangentConfig& t) const {
    if (c_.group() == Group::Trivial) return t;
    const Eigen::VectorXd x = L_.pack(t);
    const Eigen::VectorXd Dstar_x = G0_.map().adjoint().M * x;
    return L_.unpack_tangent(x - G0_.map().M * G0_.solve_domain(Dstar_x));
  }

  TangentConfig vertical_bracket(const TangentConfig& t1, const TangentConfig& t2) const {
    if (c_.group() == Group::Trivial) return L_.unpack_tangent(Eigen::VectorXd::Zero(L_.n_tangent()));
    const auto om = omega_form(c_, t1.v, t2.v);
    return L_.unpack_tangent(2.0 * (G0_.map().M * G0_.solve_domain(L_.pack_gauge(om))));
  }

  // Pi(V, W) = -DF^* G B(V, W), G = (DF DF^*)^+.
  TangentConfig second_fundamental_form(const TangentConfig& V, const TangentConfig& W) const {
    const Eigen::VectorXd B = L_.pack(fsw_hess(c_, s_, V, W));
    return L_.unpack_tangent(-G_.pseudo_inverse(B));
  }

  // O'Neill part only (V, W horizontal).
  CurvatureSample oneill(TangentConfig V, TangentConfig W) const {
    CurvatureSample out;
    out.normalized = orthonormalize(V, W);
    if (out.normalized) out.warnings.push_back("plane re-orthonormalized");
    fill_oneill(out, V, W);
    return out;
  }

  // O'Neill + Gauss (V, W in ker frak D).
  CurvatureSample sample(TangentConfig V, TangentConfig W) const {
    CurvatureSample out;
    out.normalized = orthonormalize(V, W);
    if (out.normalized) out.warnings.push_back("plane re-orthonormalized");
    fill_oneill(out, V, W);
    const auto pvv = L_.pack(second_fundamental_form(V, V));
    const auto pww = L_.pack(second_fundamental_form(W, W));
    const auto pvw = L_.pack(second_fundamental_form(V, W));
    out.gauss_terms = L_.inner_tangent(pvv, pww) - L_.inner_tangent(pvw, pvw);
    out.K_M = out.K_B + out.gauss_terms;
    out.K_M_opposite = out.K_B - out.gauss_terms;
    return out;
  }

 private:
  // Gram-Schmidt under l2_inner; true if the input was not already orthonormal.
  bool orthonormalize(TangentConfig& V, TangentConfig& W) const {
    Eigen::VectorXd v = L_.pack(V), w = L_.pack(W);
    const double vv = L_.inner_tangent(v, v), vw = L_.inner_tangent(v, w), ww = L_.inner_tangent(w, w);
    if (!(vv > 0) || !(ww * vv - vw * vw > 1e-24 * vv * ww)) throw ValidationError("tangent plane is degenerate");
    const bool changed = std::abs(vv - 1) > 1e-9 || std::abs(ww - 1) > 1e-9 || std::abs(vw) > 1e-9;
    v /= std::sqrt(vv);
    w -= L_.inner_tangent(v, w) * v;
    w /= std::sqrt(L_.inner_tangent(w, w));
    V = L_.unpack_tangent(v);
    W = L_.unpack_tangent(w);
    return changed;
  }

  void fill_oneill(CurvatureSample& out, const TangentConfig& V, const TangentConfig& W) const {
    out.K_C = 0.0;  // flat target, and C is flat in the link directions
    const auto br = L_.pack(vertical_bracket(V, W));
    out.bracket_norm_sq = L_.inner_tangent(br, br);
    out.K_B = out.K_C + 0.75 * out.bracket_norm_sq;
    out.warnings.insert(out.warnings.end(), warnings_.begin(), warnings_.end());
  }

  Configuration c_;
  Sources s_;
  Layout L_;
  GreenSolver G0_, G_;
  std::vector<std::string> warnings_;
};

inline CurvatureSample oneill_sectional(const Configuration& c, const TangentConfig& V, const TangentConfig& W) {
  return ModuliGeometry(c, Sources{}).oneill(V, W);
}

inline TangentConfig second_fundamental_form(const Configuration& c, const Sources& s, const TangentConfig& V,
                                             const TangentConfig& W) {
  return ModuliGeometry(c, s).second_fundamental_form(V, W);
}

inline CurvatureSample gauss_sectional(const Configuration& c, const Sources& s, const TangentConfig& V, const TangentConfig& W) {
  return ModuliGeometry(c, s).sample(V, W);
}

// ---------------------------------------------------------------------------------------------
// Finite-difference curvature oracle.
//
// A chart supplies, at a coordinate point xi, an isometric frame: columns whose Euclidean inner
// products are the metric coefficients g_ab(xi) for the requested coordinate indices.

struct MetricChart {
  int dim = 0;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd& xi, const std::vector<int>& idx)> frame;
};

struct OracleSweep {
  double K = 0;                  // Richardson value from the two finest steps
  std::array<double, 3> raw{};   // K at eps, eps/2, eps/4
  std::array<double, 2> richardson{};
};

namespace detail {

// Sectional curvature of the coordinate plane (a, b) at xi = 0 with central differences of step e:
//   R_abab = 1/2 (2 g_ab,ab - g_bb,aa - g_aa,bb) + g^pq (Gamma_p,ab Gamma_q,ab - Gamma_p,aa Gamma_q,bb)
// with Christoffel symbols of the first kind.
inline double fd_sectional(const MetricChart& ch, int a, int b, double e) {
  const int n = ch.dim;
  std::vector<int> all(n), ab{a, b};
  for (int k = 0; k < n; ++k) all[k] = k;
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(n);
  auto unit = [&](int k, double s) {
    Eigen::VectorXd x = zero;
    x[k] = s;
    return x;
  };
  auto unit2 = [&](double sa, double sb) {
    Eigen::VectorXd x = zero;
    x[a] = sa;
    x[b] = sb;
    return x;
  };
  auto gram = [](const Eigen::MatrixXd& F) -> Eigen::MatrixXd { return F.transpose() * F; };

  const Eigen::MatrixXd F0 = ch.frame(zero, all);
  const Eigen::MatrixXd g0 = gram(F0);
  const Eigen::MatrixXd ginv = g0.ldlt().solve(Eigen::MatrixXd::Identity(n, n));

  // rows a, b of g along +-e in directions a and b
  const Eigen::MatrixXd Fap = ch.frame(unit(a, e), all), Fam = ch.frame(unit(a, -e), all);
  const Eigen::MatrixXd Fbp = ch.frame(unit(b, e), all), Fbm = ch.frame(unit(b, -e), all);
  const Eigen::VectorXd da_ga = (Fap.transpose() * Fap.col(a) - Fam.transpose() * Fam.col(a)) / (2 * e);
  const Eigen::VectorXd da_gb = (Fap.transpose() * Fap.col(b) - Fam.transpose() * Fam.col(b)) / (2 * e);
  const Eigen::VectorXd db_ga = (Fbp.transpose() * Fbp.col(a) - Fbm.transpose() * Fbm.col(a)) / (2 * e);
  const Eigen::VectorXd db_gb = (Fbp.transpose() * Fbp.col(b) - Fbm.transpose() * Fbm.col(b)) / (2 * e);

  // d_p g_aa, d_p g_ab, d_p g_bb for every p
  Eigen::VectorXd dp_aa(n), dp_ab(n), dp_bb(n);
  for (int p = 0; p < n; ++p) {
    Eigen::MatrixXd gp, gm;
    if (p == a) {
      gp = gram(Fap(Eigen::all, ab));
      gm = gram(Fam(Eigen::all, ab));
    } else if (p == b) {
      gp = gram(Fbp(Eigen::all, ab));
      gm = gram(Fbm(Eigen::all, ab));
    } else {
      gp = gram(ch.frame(unit(p, e), ab));
      gm = gram(ch.frame(unit(p, -e), ab));
    }
    dp_aa[p] = (gp(0, 0) - gm(0, 0)) / (2 * e);
    dp_ab[p] = (gp(0, 1) - gm(0, 1)) / (2 * e);
    dp_bb[p] = (gp(1, 1) - gm(1, 1)) / (2 * e);
  }
  const Eigen::VectorXd G_aa = da_ga - 0.5 * dp_aa;
  const Eigen::VectorXd G_bb = db_gb - 0.5 * dp_bb;
  const Eigen::VectorXd G_ab = 0.5 * (da_gb + db_ga - dp_ab);

  // second derivatives
  const double e2 = e * e;
  const double daa_gbb = (Fap.col(b).squaredNorm() + Fam.col(b).squaredNorm() - 2 * g0(b, b)) / e2;
  const double dbb_gaa = (Fbp.col(a).squaredNorm() + Fbm.col(a).squaredNorm() - 2 * g0(a, a)) / e2;
  auto gab_at = [&](double sa, double sb) {
    const Eigen::MatrixXd F = ch.frame(unit2(sa, sb), ab);
    return F.col(0).dot(F.col(1));
  };
  const double dab_gab = (gab_at(e, e) - gab_at(e, -e) - gab_at(-e, e) + gab_at(-e, -e)) / (4 * e2);

  const double R = 0.5 * (2 * dab_gab - daa_gbb - dbb_gaa) + G_ab.dot(ginv * G_ab) - G_aa.dot(ginv * G_bb);
  const double area = g0(a, a) * g0(b, b) - g0(a, b) * g0(a, b);
  return R / area;
}

}  // namespace detail

// Steps eps, eps/2, eps/4 with Richardson extrapolation of the O(eps^2) error.  Throws when the
// sweep stops converging, which means the step is in the cancellation regime.
inline OracleSweep fd_oracle_sweep(const MetricChart& chart, int a, int b, double eps) {
  if (chart.dim < 2 || a == b || a < 0 || b < 0 || a >= chart.dim || b >= chart.dim || !(eps > 0))
    throw ValidationError("oracle needs two distinct chart coordinates and a positive step");
  OracleSweep s;
  for (int k = 0; k < 3; ++k) s.raw[k] = detail::fd_sectional(chart, a, b, eps / (1 << k));
  s.richardson[0] = (4 * s.raw[1] - s.raw[0]) / 3;
  s.richardson[1] = (4 * s.raw[2] - s.raw[1]) / 3;
  s.K = s.richardson[1];
  const double d1 = std::abs(s.raw[0] - s.raw[1]), d2 = std::abs(s.raw[1] - s.raw[2]);
  if (!std::isfinite(s.K) || (d2 > d1 && d2 > 1e-6 * std::max(1.0, std::abs(s.K))))
    throw NumericalError("fd oracle: step sweep does not converge (step too small?)");
  return s;
}

inline double fd_oracle_curvature(const MetricChart& chart, int a, int b, double eps) {
  return fd_oracle_sweep(chart, a, b, eps).K;
}

// ---------------------------------------------------------------------------------------------
// Charts

inline MetricChart euclidean_chart(int n) {
  return {n, [n](const Eigen::VectorXd&, const std::vector<int>& idx) {
            Eigen::MatrixXd F = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(idx.size()));
            for (std::size_t k = 0; k < idx.size(); ++k) F(idx[k], static_cast<Eigen::Index>(k)) = 1;
            return F;
          }};
}

// Round sphere of radius r as the graph z = sqrt(r^2 - x^2 - y^2) over the north pole.
inline MetricChart sphere_chart(double r) {
  return {2, [r](const Eigen::VectorXd& xi, const std::vector<int>& idx) {
            const double z = std::sqrt(r * r - xi.squaredNorm());
            Eigen::MatrixXd F(3, static_cast<Eigen::Index>(idx.size()));
            for (std::size_t k = 0; k < idx.size(); ++k) {
              const int p = idx[k];
              F.col(static_cast<Eigen::Index>(k)) << (p == 0 ? 1.0 : 0.0), (p == 1 ? 1.0 : 0.0), -xi[p] / z;
            }
            return F;
          }};
}

// Orthonormal (weighted) basis of ker D^*_c whose first columns are the given horizontal tangents
// (assumed orthonormal).
inline Eigen::MatrixXd horizontal_basis(const Configuration& c, const Eigen::MatrixXd& first) {
  const HorizontalProjector P(c);
  const Layout& L = P.layout();
  const Eigen::VectorXd sw = L.w_tangent().cwiseSqrt();
  const Eigen::Index n = static_cast<Eigen::Index>(L.n_tangent());
  const Eigen::Index dim = n - P.vertical_basis().cols();
  const Eigen::MatrixXd Ft = sw.asDiagonal() * first;
  // complement of span(first) inside ker D^*
  Eigen::MatrixXd K = P.project_orthonormal(sw.cwiseInverse().asDiagonal() * Eigen::MatrixXd::Identity(n, n));
  K -= Ft * (Ft.transpose() * K);
  Eigen::BDCSVD<Eigen::MatrixXd> svd(K, Eigen::ComputeThinU);
  Eigen::MatrixXd B(n, dim);
  B << Ft, svd.matrixU().leftCols(dim - first.cols());
  return sw.cwiseInverse().asDiagonal() * B;
}

// Slice chart for B around c: zeta -> [c + basis zeta]; metric = |horizontal part|^2.
inline MetricChart slice_chart(const Configuration& c, const Eigen::MatrixXd& basis) {
  const Layout L(c.geom, c.group());
  return {static_cast<int>(basis.cols()), [c, basis, L](const Eigen::VectorXd& zeta, const std::vector<int>& idx) {
            const Configuration p = displace(c, L.unpack_tangent(basis * zeta));
            return HorizontalProjector(p).project_orthonormal(basis(Eigen::all, idx));
          }};
}

// Kuranishi chart for M: xi -> [Phi(xi)], tangent columns d Phi / d xi projected horizontally at Phi(xi).
inline MetricChart moduli_chart(const KuranishiChart& K) {
  return {K.dim_h1(), [&K](const Eigen::VectorXd& xi, const std::vector<int>& idx) {
            const auto p = K.solve(xi);
            if (!p.converged) throw NumericalError("moduli chart: Kuranishi solve did not converge");
            return HorizontalProjector(p.config).project_orthonormal(K.tangent(p, idx));
          }};
}

// ---------------------------------------------------------------------------------------------
// Finite-dimensional fixture: C^2 = H with U(1) acting on the right, as one site on a 1^4 torus
// with h = 1 (links carry a flat R^4 factor and d = 0).

inline Configuration c2_u1_fixture(const Quaternion& q) {
  const LatticeGeom geo({1, 1, 1, 1}, 1.0, Topology::Torus);
  return {geo, ConnectionField::zero_u1(geo), make_spinor(TargetKind::FlatH, {q})};
}

// Closed form of K_B on the fixture for spinor directions v, w orthonormal and horizontal at q:
// D^* D = |q|^2, so K_B = 3/4 |2 q i Omega / |q|^2|^2 = 3 <w i, v>^2 / |q|^2.
inline double c2_u1_closed_form(const Quaternion& q, const Quaternion& v, const Quaternion& w) {
  const double om = dot(w * Quaternion::i(), v);
  return 3.0 * om * om / q.norm2();
}

}  // namespace gswlab

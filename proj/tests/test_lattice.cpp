#include <gtest/gtest.h>

#include <numbers>
#include <random>

#include "gswlab/lattice.hpp"

using namespace gswlab;
using std::numbers::pi;

namespace {

Quaternion rand_q(std::mt19937_64& g, double s = 1.0) {
  std::normal_distribution<double> n(0.0, s);
  return {n(g), n(g), n(g), n(g)};
}

SpinorField rand_spinor(const LatticeGeom& geo, TargetKind kind, std::mt19937_64& g) {
  std::vector<Quaternion> q(geo.sites());
  for (auto& x : q) x = rand_q(g) + Quaternion(kind == TargetKind::ConeHmodZ2 ? 0.5 : 0.0);
  return make_spinor(kind, std::move(q));
}

ConnectionField rand_connection(const LatticeGeom& geo, std::mt19937_64& g, double s = 0.3) {
  std::normal_distribution<double> n(0.0, s);
  auto A = ConnectionField::zero_u1(geo);
  for (Site x = 0; x < geo.sites(); ++x)
    for (int i = 0; i < 4; ++i)
      if (geo.has_link(x, i)) A.a[4 * x + i] = n(g);
  return A;
}

std::vector<double> rand_scalar(std::size_t n, std::mt19937_64& g) {
  std::normal_distribution<double> d;
  std::vector<double> f(n);
  for (auto& x : f) x = d(g);
  return f;
}

}  // namespace

TEST(Lattice, GeometryValidation) {
  EXPECT_THROW(LatticeGeom({4, 4, 4, 4}, -1.0, Topology::Torus), ValidationError);
  EXPECT_THROW(LatticeGeom({4, 0, 4, 4}, 1.0, Topology::Torus), ValidationError);
  LatticeGeom g({3, 4, 5, 2}, 0.5, Topology::Box);
  for (Site s = 0; s < g.sites(); ++s) EXPECT_EQ(g.index(g.coords(s)), s);
  EXPECT_EQ(g.link_count(), static_cast<std::size_t>(2 * 4 * 5 * 2 + 3 * 3 * 5 * 2 + 3 * 4 * 4 * 2 + 3 * 4 * 5 * 1));
  EXPECT_DOUBLE_EQ(g.delta0(), 0.25);
}

TEST(Lattice, CovariantDiffExamples) {
  const auto geo = LatticeGeom::centered_box(5, 0.3);
  const auto A = ConnectionField::zero_u1(geo);
  const auto c = sample_spinor(geo, TargetKind::FlatH, [](const Vec4&) { return Quaternion(0.2, 1, -3, 0.5); });
  for (auto st : {Stencil::Forward, Stencil::Centered}) {
    const auto d = covariant_diff(geo, c, A, st);
    for (Site x = 0; x < geo.sites(); ++x)
      for (int i = 0; i < 4; ++i) EXPECT_EQ(d.d[x][i], Quaternion());
    const auto lin = sample_spinor(geo, TargetKind::FlatH, [](const Vec4& p) { return Quaternion(p[1]); });
    const auto dl = covariant_diff(geo, lin, A, st);
    for (Site x = 0; x < geo.sites(); ++x)
      for (int i = 0; i < 4; ++i) EXPECT_NEAR((dl.d[x][i] - Quaternion(i == 1 ? 1.0 : 0.0)).norm(), 0.0, 1e-12);
  }
}

TEST(Lattice, CenteredStencilSecondOrder) {
  // u = exp(z1) with z1 = x1 - i x0 is Fueter regular; compare d_i u with the exact derivative at a fixed point
  const auto f = [](const Vec4& p) {
    const double e = std::exp(p[1]);
    return Quaternion(e * std::cos(p[0]), -e * std::sin(p[0]), 0, 0);
  };
  double err[2];
  for (int lev = 0; lev < 2; ++lev) {
    const int n = lev == 0 ? 9 : 17;
    const auto geo = LatticeGeom::centered_box(n, 0.8 / (n - 1));
    const auto u = sample_spinor(geo, TargetKind::FlatH, f);
    const auto A = ConnectionField::trivial();
    const Site x = geo.index({n / 2, n / 2, n / 2, n / 2});  // origin
    err[lev] = 0;
    const Quaternion exact[4] = {Quaternion(0, -1), Quaternion(1), Quaternion(), Quaternion()};
    for (int i = 0; i < 4; ++i)
      err[lev] = std::max(err[lev], (diff_at(geo, u, A, Stencil::Centered, x, i) - exact[i]).norm());
  }
  EXPECT_GE(err[0] / err[1], 3.8);
}

TEST(Lattice, CliffordExamples) {
  const SpinorPair p{Quaternion(0.3, 1, 2, -1), Quaternion()};
  const auto a = clifford(Quaternion::one(), p);
  EXPECT_EQ(a.plus, Quaternion());
  EXPECT_EQ(a.minus, p.plus);
  const auto b = clifford(Quaternion::i(), p);
  EXPECT_EQ(b.minus, Quaternion::i() * p.plus);
}

TEST(Lattice, CliffordAnticommutator) {
  std::mt19937_64 g(21);
  for (int t = 0; t < 50; ++t) {
    const SpinorPair p{rand_q(g), rand_q(g)};
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        const auto ei = Quaternion::unit(i), ej = Quaternion::unit(j);
        const auto x = clifford(ei, clifford(ej, p)), y = clifford(ej, clifford(ei, p));
        const double target = i == j ? -2.0 : 0.0;
        EXPECT_LT((x.plus + y.plus - target * p.plus).norm(), 1e-12);
        EXPECT_LT((x.minus + y.minus - target * p.minus).norm(), 1e-12);
      }
  }
}

TEST(Lattice, DiracExamples) {
  const auto geo = LatticeGeom::centered_box(6, 0.25);
  const auto A = ConnectionField::trivial();
  const auto z1 = sample_spinor(geo, TargetKind::FlatH, [](const Vec4& p) { return Quaternion(p[1], -p[0]); });
  const auto lin = sample_spinor(geo, TargetKind::FlatH, [](const Vec4& p) { return Quaternion(p[0], p[1], p[2], p[3]); });
  const auto cst = sample_spinor(geo, TargetKind::FlatH, [](const Vec4&) { return Quaternion(1, 2, 3, 4); });
  for (auto st : {Stencil::Centered, Stencil::Forward}) {
    const auto dz = dirac(geo, z1, A, st), dl = dirac(geo, lin, A, st), dc = dirac(geo, cst, A, st);
    for (Site x = 0; x < geo.sites(); ++x) {
      EXPECT_LT(dz[x].norm(), 1e-12);
      EXPECT_LT((dl[x] - Quaternion(-2)).norm(), 1e-12);
      EXPECT_EQ(dc[x], Quaternion());
    }
  }
}

TEST(Lattice, GaugeCovarianceExact) {
  std::mt19937_64 g(22);
  for (auto topo : {Topology::Torus, Topology::Box})
    for (auto kind : {TargetKind::FlatH, TargetKind::ConeHmodZ2})
      for (auto st : {Stencil::Forward, Stencil::Centered}) {
        const LatticeGeom geo({3, 4, 3, 3}, 0.7, topo);
        const auto u = rand_spinor(geo, kind, g);
        const auto A = rand_connection(geo, g);
        const GaugeElement gg{rand_scalar(geo.sites(), g)};
        const auto du = covariant_diff(geo, u, A, st);
        const auto gu = gauge_spinor(gg, u);
        const auto dgu = covariant_diff(geo, gu, gauge_connection(geo, gg, A), st);
        for (int i = 0; i < 4; ++i) {
          std::vector<Quaternion> col(geo.sites());
          for (Site x = 0; x < geo.sites(); ++x) col[x] = du.d[x][i];
          const auto moved = gauge_tangent(gg, u, col);
          for (Site x = 0; x < geo.sites(); ++x) EXPECT_LT((dgu.d[x][i] - moved[x]).norm(), 1e-12);
        }
        // the curvature is gauge invariant
        const auto F = plaquette_curvature(geo, A), Fg = plaquette_curvature(geo, gauge_connection(geo, gg, A));
        for (Site x = 0; x < geo.sites(); ++x)
          for (int p = 0; p < 6; ++p) EXPECT_NEAR(F.F[x][p], Fg.F[x][p], 1e-12);
      }
}

TEST(Lattice, CurvatureExamples) {
  std::mt19937_64 g(23);
  LatticeGeom geo({4, 4, 4, 4}, 0.5, Topology::Torus);
  ConnectionField pure{Group::U1, d0(geo, rand_scalar(geo.sites(), g))};
  const auto F = plaquette_curvature(geo, pure);
  for (Site x = 0; x < geo.sites(); ++x)
    for (int p = 0; p < 6; ++p) EXPECT_NEAR(F.F[x][p], 0.0, 1e-12);
  auto cst = ConnectionField::zero_u1(geo);
  for (Site x = 0; x < geo.sites(); ++x) cst.a[4 * x + 1] = 0.8;
  const auto Fc = plaquette_curvature(geo, cst);
  for (Site x = 0; x < geo.sites(); ++x)
    for (int p = 0; p < 6; ++p) EXPECT_EQ(Fc.F[x][p], 0.0);
  const auto Ft = plaquette_curvature(geo, ConnectionField::trivial());
  EXPECT_EQ(Ft.F[0][0], 0.0);
}

TEST(Lattice, BianchiAndSelfDualIdempotent) {
  std::mt19937_64 g(24);
  for (auto topo : {Topology::Torus, Topology::Box}) {
    LatticeGeom geo({3, 3, 4, 3}, 0.4, topo);
    const auto A = rand_connection(geo, g, 1.0);
    const auto F = plaquette_curvature(geo, A);
    EXPECT_LT(bianchi_defect(geo, F), 1e-11);
    const auto P = selfdual_project(geo, F);
    const auto PP = selfdual_project(geo, P);
    for (Site x = 0; x < geo.sites(); ++x)
      for (int p = 0; p < 6; ++p) EXPECT_NEAR(P.F[x][p], PP.F[x][p], 1e-14);
    // coefficients are orthogonal-projection coordinates: <F - F+, eta_l> = 0
    for (Site x = 0; x < geo.sites(); ++x) {
      if (!geo.is_cell(x)) continue;
      std::array<double, 6> r;
      for (int p = 0; p < 6; ++p) r[p] = F.F[x][p] - P.F[x][p];
      const auto c = selfdual_coeffs(r);
      for (double v : c) EXPECT_NEAR(v, 0.0, 1e-13);
    }
  }
}

TEST(Lattice, SummationByPartsExact) {
  std::mt19937_64 g(25);
  for (auto topo : {Topology::Torus, Topology::Box}) {
    LatticeGeom geo({3, 4, 3, 2}, 0.6, topo);
    const auto f = rand_scalar(geo.sites(), g);
    auto b = rand_scalar(4 * geo.sites(), g);
    for (Site x = 0; x < geo.sites(); ++x)
      for (int i = 0; i < 4; ++i)
        if (!geo.has_link(x, i)) b[4 * x + i] = 0;
    const double lhs = inner_links(geo, d0(geo, f), b), rhs = inner_sites(geo, f, d_star(geo, b));
    EXPECT_NEAR(lhs, rhs, 1e-12 * (1 + std::abs(lhs)));

    for (auto kind : {TargetKind::FlatH, TargetKind::ConeHmodZ2})
      for (auto st : {Stencil::Forward, Stencil::Centered}) {
        const auto u = rand_spinor(geo, kind, g);
        const auto A = rand_connection(geo, g);
        std::vector<Quaternion> v(geo.sites()), psi(geo.sites());
        for (Site x = 0; x < geo.sites(); ++x) v[x] = rand_q(g), psi[x] = rand_q(g);
        const double a1 = inner_spinor(geo, dirac_lin(geo, u, A, st, {}, v), psi);
        const double a2 = inner_spinor(geo, v, dirac_lin_adjoint(geo, u, A, st, psi));
        EXPECT_NEAR(a1, a2, 1e-12 * (1 + std::abs(a1)));
        VectorField1Form w{std::vector<std::array<Quaternion, 4>>(geo.sites())};
        for (auto& s : w.d)
          for (auto& q : s) q = rand_q(g);
        const SpinorField vs{kind, v};
        double b1 = 0;
        for (Site x = 0; x < geo.sites(); ++x)
          for (int i = 0; i < 4; ++i) {
            // linear in v: reuse the stencil of u via dirac_lin-style transport
            const auto terms = stencil_terms(geo, A, st, x, i);
            Quaternion di;
            for (int k = 0; k < terms.n; ++k) {
              const auto& t = terms.t[k];
              const double s = t.y == x ? 1.0 : align_sign(kind, transport_phase(u.q[t.y], t.theta), u.q[x]);
              di += (t.c * s) * transport_phase(v[t.y], t.theta);
            }
            b1 += dot(di, w.d[x][i]);
          }
        b1 *= geo.volume_weight();
        const double b2 = inner_spinor(geo, v, covariant_diff_adjoint(geo, u, A, st, w));
        EXPECT_NEAR(b1, b2, 1e-12 * (1 + std::abs(b1)));
      }
  }
}

TEST(Lattice, DiracLinearizationMatchesFiniteDifference) {
  std::mt19937_64 g(26);
  for (auto kind : {TargetKind::FlatH, TargetKind::ConeHmodZ2}) {
    LatticeGeom geo({3, 3, 3, 3}, 0.5, Topology::Box);
    const auto u = rand_spinor(geo, kind, g);
    const auto A = rand_connection(geo, g);
    std::vector<Quaternion> v(geo.sites());
    for (auto& x : v) x = rand_q(g);
    std::vector<double> b = rand_scalar(4 * geo.sites(), g);
    const auto lin = dirac_lin(geo, u, A, Stencil::Forward, b, v);
    const double eps = 1e-6;
    auto shifted = [&](double e) {
      std::vector<Quaternion> q(geo.sites());
      for (Site x = 0; x < geo.sites(); ++x) q[x] = u.q[x] + e * v[x];
      SpinorField us{kind, q};  // not re-canonicalised: stay in the chart of u
      ConnectionField As = A;
      for (std::size_t l = 0; l < As.a.size(); ++l) As.a[l] += e * b[l];
      return dirac(geo, us, As, Stencil::Forward);
    };
    const auto p = shifted(eps), m = shifted(-eps);
    for (Site x = 0; x < geo.sites(); ++x) EXPECT_LT(((p[x] - m[x]) / (2 * eps) - lin[x]).norm(), 1e-7);
  }
}

TEST(Lattice, QuadratureSelfTests) {
  const auto geo = LatticeGeom::centered_box(21, 0.1);
  const std::vector<double> one(geo.sites(), 1.0);
  std::vector<double> q2(geo.sites());
  for (Site x = 0; x < geo.sites(); ++x) {
    const auto p = geo.position(x);
    q2[x] = p[0] * p[0] + p[1] * p[1];
  }
  for (double r : {0.8, 0.9, 0.95}) {
    const BallSpec b{{0, 0, 0, 0}, r};
    EXPECT_NEAR(ball_integral(geo, one, b) / (0.5 * pi * pi * std::pow(r, 4)), 1.0, 0.01) << r;
    EXPECT_NEAR(shell_integral(geo, one, b) / (2 * pi * pi * std::pow(r, 3)), 1.0, 0.01) << r;
    EXPECT_NEAR(shell_integral(geo, q2, b) / (pi * pi * std::pow(r, 5)), 1.0, 0.02) << r;
  }
  // d/dr of the ball integral against the shell integral; fourth-order difference so the r^6 growth
  // does not swamp the comparison
  for (double r : {0.8, 0.83, 0.85}) {
    const double d = 0.5 * geo.h;
    const auto B = [&](double s) { return ball_integral(geo, q2, {{0, 0, 0, 0}, s}); };
    const double deriv = (-B(r + 2 * d) + 8 * B(r + d) - 8 * B(r - d) + B(r - 2 * d)) / (12 * d);
    EXPECT_NEAR(deriv / shell_integral(geo, q2, {{0, 0, 0, 0}, r}), 1.0, 0.02) << r;
  }
  EXPECT_THROW(ball_integral(geo, one, {{0, 0, 0, 0}, 1.2}), ValidationError);
  EXPECT_THROW(ball_integral(geo, one, {{0.5, 0, 0, 0}, 0.7}), ValidationError);
}

TEST(Lattice, GaussLegendreExactness) {
  std::vector<double> x, w;
  gauss_legendre(7, x, w);
  for (int d = 0; d <= 13; ++d) {
    double s = 0;
    for (int k = 0; k < 7; ++k) s += w[k] * std::pow(x[k], d);
    EXPECT_NEAR(s, d % 2 ? 0.0 : 2.0 / (d + 1), 1e-14);
  }
}

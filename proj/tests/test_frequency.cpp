#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "gswlab/frequency.hpp"
#include "frequency_support.hpp"
#include "test_support.hpp"

using namespace gswlab;
using namespace gswlab::testing;
using std::numbers::pi;

TEST(Frequency, FueterCorpusComposition) {
  const auto corpus = fueter_corpus();
  ASSERT_EQ(corpus.size(), 20u);
  std::set<std::string> names;
  int deg[4] = {0, 0, 0, 0};
  for (const auto& s : corpus) {
    names.insert(s.name());
    ++deg[s.degree()];
  }
  EXPECT_EQ(names.size(), 20u);
  EXPECT_EQ(deg[0], 1);
  EXPECT_EQ(deg[1], 3);
  EXPECT_EQ(deg[2], 6);
  EXPECT_EQ(deg[3], 10);
  EXPECT_THROW(fueter_eval(FueterSpec::z(4), {0, 0, 0, 0}), ValidationError);
}

TEST(Frequency, FueterFieldsAreRegular) {
  // z1 and the constant: exact for any stencil; degree 2: exact for centred differences in the interior
  for (const auto& s : fueter_corpus()) {
    if (s.degree() == 3) continue;
    auto c = fueter_box(9, 0.25, s);
    const auto D = dirac(c.geom, c.u, c.A, c.stencil);
    double worst = 0;
    for (Site x = 0; x < c.geom.sites(); ++x) {
      const auto k = c.geom.coords(x);
      const bool interior = std::all_of(k.begin(), k.end(), [](int a) { return a > 0 && a < 8; });
      if (s.degree() < 2 || interior) worst = std::max(worst, D[x].norm());
    }
    EXPECT_LE(worst, 1e-12) << s.name();
  }
  auto z1 = fueter_box(9, 0.25, FueterSpec::z(1), Stencil::Centered, {0.1, -0.2, 0.05, 0.3});
  double w = 0;
  for (const auto& q : dirac(z1.geom, z1.u, z1.A, z1.stencil)) w = std::max(w, q.norm());
  EXPECT_LE(w, 1e-12);
  // degree 3: second order at a fixed interior region
  for (const auto& s : {FueterSpec::sym({1, 2, 3}), FueterSpec::sym({1, 1, 2})}) {
    double prev = 0;
    for (int n : {9, 17, 33}) {
      auto c = fueter_box(n, 2.0 / (n - 1), s);
      std::vector<double> r(c.geom.sites());
      const auto D = dirac(c.geom, c.u, c.A, c.stencil);
      for (Site x = 0; x < r.size(); ++x) r[x] = D[x].norm();
      const double e = sup_inside(c.geom, r, 0.5);
      if (prev > 0) EXPECT_GE(order(prev, e), 1.9) << s.name();
      prev = e;
    }
  }
}

TEST(Frequency, WeitzenbockTrivialGroupHasNoCurvatureTerm) {
  auto c = smooth_torus(4, Group::Trivial, Stencil::Centered);
  for (const auto& q : curvature_term(c)) EXPECT_EQ(q.norm2(), 0.0);
}

TEST(Frequency, WeitzenbockResidualOrder) {
  std::vector<double> cen, fwd;
  for (int n : {24, 48, 96}) {
    cen.push_back(sup(weitzenbock_residual(smooth_torus(n, Group::U1, Stencil::Centered))));
    fwd.push_back(sup(weitzenbock_residual(smooth_torus(n, Group::U1, Stencil::Forward))));
  }
  EXPECT_GE(order(cen[0], cen[1]), 1.9);
  EXPECT_GE(order(cen[1], cen[2]), 1.9);
  EXPECT_GE(order(fwd[0], fwd[1]), 0.9);
  EXPECT_GE(order(fwd[1], fwd[2]), 0.9);
  // trivial group with centred differences: the lattice identity is exact up to rounding
  auto c = smooth_torus(24, Group::Trivial, Stencil::Centered);
  EXPECT_LE(sup(weitzenbock_residual(c)), 1e-9);
}

TEST(Frequency, WeitzenbockCurvatureSignMatters) {
  // dropping or flipping Y leaves an O(1) residual on a curved connection
  auto c = smooth_torus(16, Group::U1, Stencil::Centered);
  const auto p = weitzenbock_parts(c);
  double with = 0, without = 0, flipped = 0;
  for (Site x = 0; x < c.geom.sites(); ++x) {
    with = std::max(with, (p.dstar_d[x] - p.rough[x] - p.curv[x]).norm());
    without = std::max(without, (p.dstar_d[x] - p.rough[x]).norm());
    flipped = std::max(flipped, (p.dstar_d[x] - p.rough[x] + p.curv[x]).norm());
  }
  EXPECT_LT(with, 0.05 * without);
  EXPECT_LT(with, 0.05 * flipped);
}

TEST(Frequency, EnergyIdentity) {
  LatticeGeom g({4, 4, 4, 4}, 0.5, Topology::Torus);
  Configuration c{g, ConnectionField::zero_u1(g), make_spinor(TargetKind::FlatH, std::vector<Quaternion>(g.sites(), {0.7, 0.1, -0.2, 0.4})),
                  Stencil::Centered};
  const auto e = energy_identity(c);
  EXPECT_EQ(e.lhs, 0.0);
  EXPECT_EQ(e.rhs, 0.0);
  EXPECT_EQ(e.curvature, 0.0);
  // with a scalar-curvature slot the right side is -int s/4 |u|^2
  c.geom.s_X.assign(g.sites(), 2.0);
  EXPECT_NEAR(energy_identity(c).rhs, -0.5 * (0.49 + 0.01 + 0.04 + 0.16) * 16, 1e-12);
}

TEST(Frequency, KeyIdentity) {
  std::mt19937_64 rng(11);
  LatticeGeom g({3, 3, 3, 3}, 0.4, Topology::Torus);
  for (Stencil st : {Stencil::Forward, Stencil::Centered}) {
    EXPECT_LE(key_identity_check(rand_config(g, Group::U1, TargetKind::FlatH, st, rng)), 1e-12);
    EXPECT_LE(key_identity_check(rand_config(g, Group::U1, TargetKind::ConeHmodZ2, st, rng)), 1e-12);
  }
  Configuration z{g, ConnectionField::trivial(), SpinorField::zeros(g), Stencil::Forward};
  EXPECT_EQ(key_identity_check(z), 0.0);
}

TEST(Frequency, StressTensorAlgebra) {
  std::mt19937_64 rng(12);
  LatticeGeom g({3, 3, 3, 3}, 0.4, Topology::Torus);
  auto c = rand_config(g, Group::U1, TargetKind::FlatH, Stencil::Centered, rng);
  const auto T = stress_tensor(c);
  const auto e = energy_density(c);
  for (Site x = 0; x < g.sites(); ++x) {
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) EXPECT_EQ(T.T[x][i][j], T.T[x][j][i]);
    EXPECT_NEAR(T.trace(x), -e[x], 1e-12 * std::max(1.0, e[x]));
  }
  Configuration k{g, ConnectionField::trivial(), make_spinor(TargetKind::FlatH, std::vector<Quaternion>(g.sites(), {1, 2, 3, 4})),
                  Stencil::Centered};
  for (const auto& m : stress_tensor(k).T)
    for (const auto& row : m)
      for (double v : row) EXPECT_EQ(v, 0.0);
}

TEST(Frequency, StressDivergenceOrder) {
  for (Group grp : {Group::Trivial, Group::U1}) {
    std::vector<double> r;
    for (int n : {24, 48, 96}) r.push_back(sup(stress_div_residual(smooth_torus(n, grp, Stencil::Centered))));
    EXPECT_GE(order(r[0], r[1]), 1.9) << to_string(grp);
    EXPECT_GE(order(r[1], r[2]), 1.9) << to_string(grp);
  }
  // harmonic z1: div T vanishes identically
  auto c = fueter_box(9, 0.25, FueterSpec::z(1));
  EXPECT_LE(sup(stress_div(c, stress_tensor(c))), 1e-10);
}

TEST(Frequency, BochnerResidual) {
  for (const auto& s : {FueterSpec::z(1), FueterSpec::constant()}) {
    auto c = fueter_box(9, 0.25, s);
    EXPECT_LE(sup(bochner_residual(c)), 1e-10) << s.name();
  }
  std::vector<double> r;
  for (int n : {9, 17, 33}) {
    // sym_z123 happens to satisfy the lattice identity exactly; sym_z112 does not
    auto c = fueter_box(n, 2.0 / (n - 1), FueterSpec::sym({1, 1, 2}), Stencil::Centered, {0.1, 0.2, 0, 0});
    r.push_back(sup_inside(c.geom, bochner_residual(c), 0.5));
  }
  EXPECT_GE(order(r[0], r[1]), 1.9);
  EXPECT_GE(order(r[1], r[2]), 1.9);
  // off shell the left side is reported, not asserted; it is plainly nonzero
  std::mt19937_64 rng(13);
  auto g = LatticeGeom::centered_box(5, 0.5);
  EXPECT_GT(sup(bochner_residual(rand_config(g, Group::Trivial, TargetKind::FlatH, Stencil::Centered, rng))), 1e-3);
}

TEST(Frequency, RadialProfileOfZ1) {
  const int n = 49;
  const double h = 1.0 / 24;
  auto c = fueter_box(n, h, FueterSpec::z(1));
  const auto d = field_densities(c);
  const Vec4 x{0, 0, 0, 0};
  const double d0 = c.geom.delta0();
  const auto grid = radial_grid(8 * h, 16 * h, 2 * h);
  const auto P = radial_profile(c.geom, d, x, grid);
  for (std::size_t k = 0; k < P.size(); ++k) {
    const double r = P.r[k];
    if (r > 0.5 * d0 + 1e-12) continue;
    EXPECT_NEAR(P.f[k] / (pi * pi * std::pow(r, 5)), 1.0, 0.02) << r;
    EXPECT_NEAR(P.F[k] / (pi * pi * r * r), 1.0, 0.02) << r;
    EXPECT_NEAR(P.N[k], 1.0, 0.02) << r;
    EXPECT_NEAR(P.kappa[k] / (pi * r), 1.0, 0.02) << r;
    EXPECT_EQ(P.sigma[k], 0.0);
  }
  const auto o = ode_checks(P);
  EXPECT_LE(o.max_f_prime_dev, 0.03);
  EXPECT_LE(o.max_kappa_prime_dev, 0.03);
  const auto m = monotonicity_scan(P, 0.0);
  EXPECT_TRUE(m.pass()) << m.worst_F_drop << " " << m.worst_f_drop << " " << m.max_ball_ratio;
  EXPECT_NEAR(m.max_ball_ratio, 1.0 / 6.0, 0.01);
  // grid contract
  EXPECT_THROW(radial_profile(c.geom, d, x, {8 * h, 9 * h}), ValidationError);
  EXPECT_THROW(radial_profile(c.geom, d, x, {8 * h, 24 * h}), ValidationError);
}

TEST(Frequency, OdeCheckDeviationShrinksUnderRefinement) {
  // fixed physical radii 0.2..0.87 on [-1, 1]^4
  std::vector<double> dev;
  for (int n : {25, 49}) {
    const double h = 2.0 / (n - 1);
    auto c = fueter_box(n, h, FueterSpec::z(1));
    const auto P = radial_profile(c, {0, 0, 0, 0}, radial_grid(0.2, 0.87, 1.0 / 6));
    const auto o = ode_checks(P);
    dev.push_back(std::max(o.max_f_prime_dev, o.max_kappa_prime_dev));
  }
  EXPECT_GE(order(dev[0], dev[1]), 1.0) << dev[0] << " " << dev[1];
}

TEST(Frequency, ConstantProfile) {
  auto c = fueter_box(33, 0.1, FueterSpec::constant());
  const auto P = radial_profile(c, {0, 0, 0, 0}, radial_grid(0.5, 1.3, 0.2));
  for (std::size_t k = 0; k < P.size(); ++k) {
    EXPECT_EQ(P.F[k], 0.0);
    EXPECT_EQ(P.N[k], 0.0);
    EXPECT_TRUE(P.N_defined[k]);
  }
  const auto o = ode_checks(P);
  EXPECT_LE(o.max_f_prime_dev, 1e-6);
  EXPECT_LE(o.max_kappa_prime_dev, 1e-3);  // kappa' is rounding noise against a floor of 1e-8 kappa/r
  EXPECT_TRUE(monotonicity_scan(P, 0.0).pass());
  EXPECT_NEAR(monotonicity_scan(P, 0.0).max_ball_ratio, 0.25, 0.01);
}

TEST(Frequency, ZeroFieldMarksNUndefined) {
  auto g = LatticeGeom::centered_box(17, 0.125);
  Configuration c{g, ConnectionField::trivial(), SpinorField::zeros(g), Stencil::Centered};
  const auto P = radial_profile(c, {0, 0, 0, 0}, {0.4, 0.7});
  EXPECT_FALSE(P.N_defined[0]);
  EXPECT_TRUE(std::isnan(P.N[1]));
}

TEST(Frequency, FrequencyIsHomogeneousUnderScaling) {
  auto c = fueter_box(25, 1.0 / 12, FueterSpec::sym({1, 2}), Stencil::Centered, {0.1, 0, -0.05, 0});
  auto c2 = c;
  for (auto& q : c2.u.q) q *= 2.0;
  const auto grid = radial_grid(0.3, 0.7, 0.2);
  const auto P = radial_profile(c, {0, 0, 0, 0}, grid);
  const auto Q = radial_profile(c2, {0, 0, 0, 0}, grid);
  for (std::size_t k = 0; k < P.size(); ++k) EXPECT_NEAR(P.N[k], Q.N[k], 1e-12 * P.N[k]);
}

TEST(Frequency, NEqualsDegreeOnHomogeneousFields) {
  const double h = 1.0 / 16;
  const auto grid = radial_grid(8 * h, 12 * h, 2 * h);
  for (const auto& s : fueter_corpus()) {
    if (s.degree() == 0 || s.degree() == 3) continue;
    auto c = fueter_box(33, h, s);
    const auto P = radial_profile(c, {0, 0, 0, 0}, grid);
    for (std::size_t k = 0; k < P.size(); ++k)
      EXPECT_NEAR(P.N[k], s.degree(), s.degree() == 1 ? 0.02 : 0.06) << s.name() << " r=" << P.r[k];
  }
}

TEST(Frequency, ScaleEquivariance) {
  // v(x) = u(2x): (F, lambda^3 f, N)_v(r) = (F, f, N)_u(2r)
  const double h = 1.0 / 24;
  auto g = LatticeGeom::centered_box(49, h);
  const auto field = [](const Vec4& y) {
    return fueter_eval(FueterSpec::z(1), y) + 0.5 * fueter_eval(FueterSpec::sym({1, 2}), y) + Quaternion(0.3, 0.1);
  };
  Configuration u{g, ConnectionField::trivial(), sample_spinor(g, TargetKind::FlatH, field), Stencil::Centered};
  Configuration v{g, ConnectionField::trivial(),
                  sample_spinor(g, TargetKind::FlatH, [&](const Vec4& x) { return field({2 * x[0], 2 * x[1], 2 * x[2], 2 * x[3]}); }),
                  Stencil::Centered};
  const auto Pv = radial_profile(v, {0, 0, 0, 0}, {0.2, 0.3});
  const auto Pu = radial_profile(u, {0, 0, 0, 0}, {0.4, 0.6});
  for (int k = 0; k < 2; ++k) {
    EXPECT_NEAR(Pv.F[k] / Pu.F[k], 1.0, 0.02);
    EXPECT_NEAR(8 * Pv.f[k] / Pu.f[k], 1.0, 0.02);
    EXPECT_NEAR(Pv.N[k] / Pu.N[k], 1.0, 0.02);
  }
}

TEST(Frequency, MonotonicityOnCorpusAndNoisyField) {
  const double h = 1.0 / 12;
  const auto grid = radial_grid(4 * h, 8 * h, 2 * h);
  const std::vector<Vec4> centers{{0, 0, 0, 0}, {0.1, -0.1, 0, 0.05}};
  for (const auto& s : fueter_corpus())
    for (const auto& x : centers) {
      auto c = fueter_box(25, h, s, Stencil::Centered, {0.2, 0.1, -0.1, 0.05});
      const auto m = monotonicity_scan(radial_profile(c, x, grid), 0.0);
      EXPECT_TRUE(m.pass()) << s.name() << " " << m.worst_F_drop << " " << m.worst_f_drop;
    }
  std::mt19937_64 rng(14);
  auto c = fueter_box(25, h, FueterSpec::z(1), Stencil::Centered, {0.05, 0.05, 0, 0});
  for (auto& q : c.u.q) q += rand_q(rng, 1e-3);
  EXPECT_TRUE(monotonicity_scan(radial_profile(c, {0, 0, 0, 0}, grid), 0.0).pass());
}

TEST(Frequency, CriticalRadius) {
  const double eps0 = 1e-2;
  const double h = 0.004;
  auto c = fueter_box(33, h, FueterSpec::z(1));
  // F_x(r) = pi^2 r^2 for z1 everywhere, so r(x) = sqrt(eps0)/pi wherever the ball fits
  const auto rc = critical_radius(c, {0, 0, 0, 0}, eps0);
  EXPECT_FALSE(rc.flagged);
  EXPECT_NEAR(rc.r / (std::sqrt(eps0) / pi), 1.0, 0.02);
  const auto zero = critical_radius(c, {0, 0, 0, 0}, 0.0);
  EXPECT_TRUE(zero.flagged);
  EXPECT_EQ(zero.r, 0.0);

  auto k = fueter_box(17, 0.125, FueterSpec::constant());
  const auto rk = critical_radius(k, {0, 0, 0, 0}, eps0);
  EXPECT_DOUBLE_EQ(rk.r, k.geom.delta0() - 0.5 * k.geom.h);

  const auto probe = regularity_probe(c, {0.004, 0, 0, 0}, eps0, 4);
  ASSERT_EQ(probe.rows.size(), 4u);
  for (const auto& row : probe.rows) {
    EXPECT_GT(row.c_hat, 0.0);
    EXPECT_TRUE(std::isfinite(row.c_hat));
  }
  // rays away from the zero plane of z1: r(x) constant, so the scatter is weakly monotone
  std::vector<Vec4> pts;
  for (int a = 0; a < 5; ++a) pts.push_back({0.004 * a, 0.002 * a, 0, 0});
  const auto sc = critical_radius_scatter(c, pts, eps0);
  EXPECT_EQ(sc.discordant, 0);
  EXPECT_GE(sc.tau, 0.0);
  for (double r : sc.r) EXPECT_NEAR(r / (std::sqrt(eps0) / pi), 1.0, 0.02);
}

TEST(Frequency, SequenceHarnessDilatedFamily) {
  SequenceSpec s;
  s.geom = LatticeGeom::centered_box(33, 1.0 / 16);
  s.lambda = {2, 4, 8, 16, 32};
  s.normalization = 1.0;
  s.c0 = 1.0;
  s.tail = 2;
  const auto rep = sequence_harness(s);
  ASSERT_EQ(rep.steps.size(), 4u);
  EXPECT_FALSE(rep.xprime_empty);
  EXPECT_TRUE(rep.xprime_decays) << rep.xprime_decay_factor;
  EXPECT_GE(rep.xprime_decay_factor, 1.5);
  EXPECT_TRUE(rep.center_non_decay);
  for (int k = 0; k < 3; ++k) EXPECT_TRUE(rep.lp_decays[k]) << k;
  for (double I : rep.integral_rho) EXPECT_NEAR(I, 1.0, 1e-12);
}

TEST(Frequency, SequenceHarnessConstantAndVanishing) {
  SequenceSpec s;
  s.geom = LatticeGeom::centered_box(17, 0.125);
  s.kind = SequenceKind::Custom;
  s.count = 4;
  const auto z1 = fueter_library(s.geom, FueterSpec::z(1), {0, 0, 0, 0});
  s.custom = [&](int) { return z1; };
  auto rep = sequence_harness(s);
  for (const auto& st : rep.steps) {
    EXPECT_EQ(st.sup_diff_xprime, 0.0);
    EXPECT_EQ(st.sup_diff_center, 0.0);
    for (double v : st.lp_diffs) EXPECT_EQ(v, 0.0);
  }
  EXPECT_FALSE(rep.center_non_decay);

  s.count = 6;
  s.custom = [&](int n) {
    auto f = z1;
    for (auto& q : f.q) q *= std::pow(0.5, n);
    return f;
  };
  rep = sequence_harness(s);
  EXPECT_TRUE(rep.xprime_empty);
  EXPECT_FALSE(rep.xprime_decays);
  EXPECT_FALSE(rep.warnings.empty());
  EXPECT_LT(rep.integral_rho.back(), 1e-3 * rep.integral_rho.front());

  // errors
  s.custom = [&](int) { return SpinorField::zeros(s.geom); };
  s.normalization = 1.0;
  EXPECT_THROW(sequence_harness(s), NumericalError);
  s.custom = [&](int) { return z1; };
  s.normalization = 0;
  s.c0 = 1e-6;
  EXPECT_THROW(sequence_harness(s), ValidationError);
}

TEST(Frequency, ThreadCountDoesNotChangeResults) {
  auto c = fueter_box(17, 0.125, FueterSpec::sym({1, 3}));
  const auto grid = radial_grid(0.25, 0.75, 0.25);
  set_worker_threads(1);
  const auto a = radial_profile(c, {0, 0, 0, 0}, grid);
  set_worker_threads(4);
  const auto b = radial_profile(c, {0, 0, 0, 0}, grid);
  set_worker_threads(1);
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a.F[k], b.F[k]);
    EXPECT_EQ(a.f[k], b.f[k]);
    EXPECT_EQ(a.f_prime[k], b.f_prime[k]);
  }
}

#pragma once
// Compactness toolkit on the flat model: Weitzenbock/Bochner/stress residuals, radial
// frequency profiles, critical radius and a harness for sequences of spinors.
//
// The curvature term that appears in D^*D on this lattice is
//   Y_u(F) = - sum_{i<j} conj(e_i) e_j u i F_ij
// with the site-centred F (average of the plaquettes touching x). In the eta orientation
// used by selfdual() this is the anti-self-dual combination; see the README.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <thread>
#include <vector>

#include "gswlab/gsw.hpp"

namespace gswlab {

// ---------------------------------------------------------------------------------------------
// Worker pool knob. Results never depend on it: every task writes its own slot.

inline std::atomic<int>& worker_threads_slot() {
  static std::atomic<int> n{1};
  return n;
}
inline int worker_threads() { return worker_threads_slot().load(); }
inline void set_worker_threads(int n) { worker_threads_slot().store(std::max(1, n)); }

namespace detail {

inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(worker_threads()), n);
  if (w <= 1) {
    for (std::size_t k = 0; k < n; ++k) fn(k);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> err(w);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < w; ++t)
    pool.emplace_back([&, t] {
      try {
        for (std::size_t k = next++; k < n; k = next++) fn(k);
      } catch (...) {
        err[t] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : err)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

// ---------------------------------------------------------------------------------------------
// Fueter-regular polynomials z_k = x_k - e_k x_0 and their symmetrised products

struct FueterSpec {
  std::vector<int> idx;  // entries in 1..3; empty = the constant field 1

  static FueterSpec constant() { return {}; }
  static FueterSpec z(int k) { return {{k}}; }
  static FueterSpec sym(std::vector<int> k) {
    std::sort(k.begin(), k.end());
    return {std::move(k)};
  }
  int degree() const { return static_cast<int>(idx.size()); }
  std::string name() const {
    if (idx.empty()) return "const";
    std::string s = idx.size() == 1 ? "z" : "sym_z";
    for (int k : idx) s += std::to_string(k);
    return s;
  }
};

inline Quaternion fueter_z(int k, const Vec4& y) {
  Quaternion q(y[k]);
  q[k] = -y[0];
  return q;
}

// Average over the distinct orderings of the factors (equal to the average over all d!).
inline Quaternion fueter_eval(const FueterSpec& s, const Vec4& y) {
  if (s.idx.empty()) return Quaternion::one();
  for (int k : s.idx)
    if (k < 1 || k > 3) throw ValidationError("Fueter index must be 1, 2 or 3");
  auto p = s.idx;
  std::sort(p.begin(), p.end());
  Quaternion sum;
  int count = 0;
  do {
    Quaternion prod = Quaternion::one();
    for (int k : p) prod = prod * fueter_z(k, y);
    sum += prod;
    ++count;
  } while (std::next_permutation(p.begin(), p.end()));
  return sum / count;
}

// z1..z3, the 6 degree-2 and 10 degree-3 symmetrised products, and the constant: 20 fields.
inline std::vector<FueterSpec> fueter_corpus() {
  std::vector<FueterSpec> out;
  for (int a = 1; a <= 3; ++a) out.push_back(FueterSpec::z(a));
  for (int a = 1; a <= 3; ++a)
    for (int b = a; b <= 3; ++b) out.push_back(FueterSpec::sym({a, b}));
  for (int a = 1; a <= 3; ++a)
    for (int b = a; b <= 3; ++b)
      for (int c = b; c <= 3; ++c) out.push_back(FueterSpec::sym({a, b, c}));
  out.push_back(FueterSpec::constant());
  return out;
}

inline SpinorField fueter_library(const LatticeGeom& g, const FueterSpec& s, const Vec4& center,
                                  TargetKind kind = TargetKind::FlatH) {
  return sample_spinor(g, kind, [&](const Vec4& x) {
    return fueter_eval(s, {x[0] - center[0], x[1] - center[1], x[2] - center[2], x[3] - center[3]});
  });
}

// ---------------------------------------------------------------------------------------------
// Densities and the curvature term

// |d_A u|^2 per site, without storing the 1-form.
inline std::vector<double> energy_density(const Configuration& c) {
  std::vector<double> e(c.geom.sites());
  detail::parallel_for(e.size(), [&](std::size_t x) {
    double s = 0;
    for (int i = 0; i < 4; ++i) s += diff_at(c.geom, c.u, c.A, c.stencil, x, i).norm2();
    e[x] = s;
  });
  return e;
}

// |chi_0 o u|^2 = 2 rho_0 o u.
inline std::vector<double> chi0_density(const Configuration& c) {
  std::vector<double> p(c.geom.sites());
  for (Site x = 0; x < c.geom.sites(); ++x) p[x] = 2.0 * rho0(c.u.at(x));
  return p;
}

// Average of the plaquettes touching x in each plane; exact O(h^2) centring on a torus.
inline std::array<double, 6> site_curvature(const LatticeGeom& g, const TwoForm& F, Site x) {
  std::array<double, 6> out{};
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j) {
      const int p = plane_index(i, j);
      double s = 0;
      int n = 0;
      for (int di = 0; di < 2; ++di)
        for (int dj = 0; dj < 2; ++dj) {
          Site y = x;
          if (di) y = g.neighbor(y, i, -1);
          if (y != kNoSite && dj) y = g.neighbor(y, j, -1);
          if (y == kNoSite || !g.has_plaquette(y, i, j)) continue;
          s += F.F[y][p];
          ++n;
        }
      out[p] = n ? s / n : 0.0;
    }
  return out;
}

inline std::vector<Quaternion> curvature_term(const Configuration& c) {
  std::vector<Quaternion> out(c.geom.sites());
  if (c.group() == Group::Trivial) return out;
  const TwoForm F = plaquette_curvature(c.geom, c.A);
  const Quaternion iq = Quaternion::i();
  for (Site x = 0; x < c.geom.sites(); ++x) {
    const auto Fx = site_curvature(c.geom, F, x);
    const Quaternion ui = c.u.q[x] * iq;
    Quaternion y;
    for (int i = 0; i < 4; ++i)
      for (int j = i + 1; j < 4; ++j)
        y -= Fx[plane_index(i, j)] * (Quaternion::unit(i).conj() * Quaternion::unit(j) * ui);
    out[x] = y;
  }
  return out;
}

// ---------------------------------------------------------------------------------------------
// Weitzenbock and energy identities

struct WeitzenbockParts {
  std::vector<Quaternion> dstar_d;  // D^{lin,u*} D_A u
  std::vector<Quaternion> rough;    // d^{TM,*} d_A u
  std::vector<Quaternion> curv;     // Y_u(F)
};

inline WeitzenbockParts weitzenbock_parts(const Configuration& c) {
  const auto& g = c.geom;
  WeitzenbockParts p;
  p.dstar_d = dirac_lin_adjoint(g, c.u, c.A, c.stencil, dirac(g, c.u, c.A, c.stencil));
  p.rough = covariant_diff_adjoint(g, c.u, c.A, c.stencil, covariant_diff(g, c.u, c.A, c.stencil));
  p.curv = curvature_term(c);
  return p;
}

// |D^*D u - (nabla^*nabla u + s_X/4 chi_0(u) + Y_u(F))| per site.
inline std::vector<double> weitzenbock_residual(const Configuration& c) {
  const auto p = weitzenbock_parts(c);
  std::vector<double> r(c.geom.sites());
  for (Site x = 0; x < c.geom.sites(); ++x) {
    const Quaternion s = (0.25 * c.geom.scalar_curvature(x)) * chi0(c.u.at(x)).vec;
    r[x] = (p.dstar_d[x] - p.rough[x] - s - p.curv[x]).norm();
  }
  return r;
}

struct EnergyIdentity {
  double lhs = 0;        // int |d_A u|^2
  double rhs = 0;        // -int s_X/4 |chi_0 o u|^2
  double curvature = 0;  // -int <Y_u(F), u>; zero for the trivial group
};

inline EnergyIdentity energy_identity(const Configuration& c) {
  const auto& g = c.geom;
  EnergyIdentity out;
  const auto e = energy_density(c);
  const auto Y = curvature_term(c);
  for (Site x = 0; x < g.sites(); ++x) {
    out.lhs += e[x];
    out.rhs -= 0.25 * g.scalar_curvature(x) * 2.0 * rho0(c.u.at(x));
    out.curvature -= dot(Y[x], c.u.q[x]);
  }
  const double w = g.volume_weight();
  out.lhs *= w;
  out.rhs *= w;
  out.curvature *= w;
  return out;
}

// sup |d_A u - d_A^{TM}(chi_0 o u)| with chi_0 taken from its defining diagonal average.
inline double key_identity_check(const Configuration& c) {
  const auto& g = c.geom;
  std::vector<Quaternion> chi(g.sites());
  for (Site x = 0; x < g.sites(); ++x) chi[x] = chi0_diagonal_average(c.u.at(x)).vec;
  double worst = 0;
  for (Site x = 0; x < g.sites(); ++x)
    for (int i = 0; i < 4; ++i) {
      const auto terms = stencil_terms(g, c.A, c.stencil, x, i);
      Quaternion dchi;
      for (int k = 0; k < terms.n; ++k) {
        const auto& t = terms.t[k];
        // TM transport follows the same representative choice as u itself
        const double s = t.y == x ? 1.0 : align_sign(c.kind(), transport_phase(c.u.q[t.y], t.theta), c.u.q[x]);
        dchi += (t.c * s) * transport_phase(chi[t.y], t.theta);
      }
      worst = std::max(worst, (diff_at(g, c.u, c.A, c.stencil, x, i) - dchi).norm());
    }
  return worst;
}

// ---------------------------------------------------------------------------------------------
// Stress tensor T_ij = <d_i u, d_j u> - 1/2 delta_ij |d_A u|^2

using Mat4 = std::array<std::array<double, 4>, 4>;

struct StressTensor {
  std::vector<Mat4> T;
  double trace(Site x) const { return T[x][0][0] + T[x][1][1] + T[x][2][2] + T[x][3][3]; }
};

using SiteVector = std::vector<std::array<double, 4>>;

inline StressTensor stress_tensor(const Configuration& c) {
  StressTensor out{std::vector<Mat4>(c.geom.sites())};
  detail::parallel_for(out.T.size(), [&](std::size_t x) {
    std::array<Quaternion, 4> d;
    double e = 0;
    for (int i = 0; i < 4; ++i) {
      d[i] = diff_at(c.geom, c.u, c.A, c.stencil, x, i);
      e += d[i].norm2();
    }
    auto& T = out.T[x];
    for (int i = 0; i < 4; ++i)
      for (int j = i; j < 4; ++j) {
        T[i][j] = dot(d[i], d[j]) - (i == j ? 0.5 * e : 0.0);
        T[j][i] = T[i][j];
      }
  });
  return out;
}

// (div T)_i = sum_j D_j T_ij with the configuration's scalar stencil.
inline SiteVector stress_div(const Configuration& c, const StressTensor& T) {
  const auto& g = c.geom;
  const auto flat = ConnectionField::trivial();
  SiteVector out(g.sites());
  for (Site x = 0; x < g.sites(); ++x) {
    std::array<double, 4> v{};
    for (int j = 0; j < 4; ++j) {
      const auto terms = stencil_terms(g, flat, c.stencil, x, j);
      for (int k = 0; k < terms.n; ++k)
        for (int i = 0; i < 4; ++i) v[i] += terms.t[k].c * T.T[terms.t[k].y][i][j];
    }
    out[x] = v;
  }
  return out;
}

// div T_i - sum_j <u i F_ji, d_j u> - <d_i u, Y_u(F) + s_X/4 chi_0 - D^*D u>; vanishes to stencil order.
inline SiteVector stress_div_residual(const Configuration& c) {
  const auto& g = c.geom;
  const auto div = stress_div(c, stress_tensor(c));
  const auto DD = dirac_lin_adjoint(g, c.u, c.A, c.stencil, dirac(g, c.u, c.A, c.stencil));
  const auto Y = curvature_term(c);
  const bool u1 = c.group() == Group::U1;
  const TwoForm F = u1 ? plaquette_curvature(g, c.A) : TwoForm{};
  SiteVector out(g.sites());
  for (Site x = 0; x < g.sites(); ++x) {
    std::array<Quaternion, 4> d;
    for (int i = 0; i < 4; ++i) d[i] = diff_at(g, c.u, c.A, c.stencil, x, i);
    const Quaternion src = Y[x] + (0.25 * g.scalar_curvature(x)) * c.u.q[x] - DD[x];
    std::array<double, 6> Fx{};
    if (u1) Fx = site_curvature(g, F, x);
    const Quaternion ui = c.u.q[x] * Quaternion::i();
    for (int i = 0; i < 4; ++i) {
      double r = div[x][i] - dot(d[i], src);
      if (u1)
        for (int j = 0; j < 4; ++j) {
          if (j == i) continue;
          const double Fji = j < i ? Fx[plane_index(j, i)] : -Fx[plane_index(i, j)];
          r -= Fji * dot(ui, d[j]);
        }
      out[x][i] = r;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------------------------
// Bochner: 1/2 d^*d |d_A u|^2 + |d^TM d_A u|^2 (zero for harmonic u on the flat model)

inline std::vector<double> bochner_residual(const Configuration& c) {
  const auto& g = c.geom;
  const auto e = energy_density(c);
  const auto lap = d_star(g, d0(g, e));
  const auto du = covariant_diff(g, c.u, c.A, c.stencil);
  std::vector<double> hess(g.sites(), 0.0);
  for (int j = 0; j < 4; ++j) {
    SpinorField w{TargetKind::FlatH, std::vector<Quaternion>(g.sites())};
    for (Site x = 0; x < g.sites(); ++x) w.q[x] = du.d[x][j];
    for (Site x = 0; x < g.sites(); ++x)
      for (int i = 0; i < 4; ++i) hess[x] += diff_at(g, w, c.A, c.stencil, x, i).norm2();
  }
  std::vector<double> out(g.sites());
  for (Site x = 0; x < g.sites(); ++x) out[x] = 0.5 * lap[x] + hess[x];
  return out;
}

// ---------------------------------------------------------------------------------------------
// Radial profiles

// Largest admissible radius at x: delta_0, and on a box the distance to the wall.
inline double max_radius(const LatticeGeom& g, const Vec4& x) {
  double r = g.delta0();
  if (g.topology == Topology::Box)
    for (int a = 0; a < 4; ++a) {
      const double lo = g.origin[a], hi = g.origin[a] + g.h * (g.dims[a] - 1);
      r = std::min({r, x[a] - lo, hi - x[a]});
    }
  return r;
}

struct FieldDensities {
  std::vector<double> energy;  // |d_A u|^2
  std::vector<double> chi;     // |chi_0 o u|^2
  std::vector<double> source;  // s_X/4 |chi_0 o u|^2; empty for the flat metric
};

inline FieldDensities field_densities(const Configuration& c) {
  FieldDensities d{energy_density(c), chi0_density(c), {}};
  if (!c.geom.s_X.empty()) {
    d.source.resize(d.chi.size());
    for (Site x = 0; x < d.chi.size(); ++x) d.source[x] = 0.25 * c.geom.s_X[x] * d.chi[x];
  }
  return d;
}

inline constexpr double kProfileFloor = 1e-14;

struct ProfileOptions {
  int resolution = 0;       // sphere nodes per polar angle; 0 = automatic
  double deriv_step = 0;    // auxiliary shell offset for f' and kappa'; 0 = h/2
};

struct RadialProfile {
  Vec4 center{};
  std::vector<double> r, F, f, N, sigma, kappa;
  std::vector<bool> N_defined;
  std::vector<double> ball_chi;   // int_{B_r} |chi_0 o u|^2
  std::vector<double> ball_src;   // int_{B_r} s_X/4 |chi_0 o u|^2
  std::vector<double> f_prime, kappa_prime;  // fourth-order differences from auxiliary shells
  std::size_t size() const { return r.size(); }
};

namespace detail {

inline double ball_mean(const LatticeGeom& g, const std::vector<double>& f, const Vec4& x, double r) {
  return ball_integral(g, f, {x, r, 0});
}

// sigma(r) = int_0^r (1/f) int_{B_s} s_X/4 |chi_0|^2 ds by Gauss-Legendre on [0, r].
inline double sigma_at(const LatticeGeom& g, const FieldDensities& d, const Vec4& x, double r, int res) {
  if (d.source.empty()) return 0.0;
  std::vector<double> t, w;
  gauss_legendre(8, t, w);
  double s = 0;
  for (std::size_t k = 0; k < t.size(); ++k) {
    const double rk = 0.5 * r * (t[k] + 1.0);
    const double fk = shell_integral(g, d.chi, {x, rk, res}, sphere_rule(auto_polar_nodes(g, {x, rk, res})));
    if (fk > kProfileFloor) s += w[k] * ball_mean(g, d.source, x, rk) / fk;
  }
  return 0.5 * r * s;
}

}  // namespace detail

inline RadialProfile radial_profile(const LatticeGeom& g, const FieldDensities& d, const Vec4& x,
                                    const std::vector<double>& r_grid, const ProfileOptions& opt = {}) {
  if (r_grid.empty()) throw ValidationError("radial grid is empty");
  for (std::size_t k = 0; k < r_grid.size(); ++k) {
    if (!(r_grid[k] > 0)) throw ValidationError("radii must be positive");
    if (k && r_grid[k] - r_grid[k - 1] < 2 * g.h * (1 - 1e-9)) throw ValidationError("radial grid spacing below 2h");
  }
  const double delta = opt.deriv_step > 0 ? opt.deriv_step : 0.5 * g.h;
  const double rmax = max_radius(g, x);
  if (r_grid.back() + 2 * delta > rmax + 1e-12 * g.h) throw ValidationError("radial grid leaves the domain");
  if (r_grid.front() - 2 * delta <= 0) throw ValidationError("smallest radius too small for the derivative stencil");

  const std::size_t m = r_grid.size();
  RadialProfile P;
  P.center = x;
  P.r = r_grid;
  for (auto* v : {&P.F, &P.f, &P.N, &P.sigma, &P.kappa, &P.ball_chi, &P.ball_src, &P.f_prime, &P.kappa_prime})
    v->assign(m, 0.0);
  P.N_defined.assign(m, false);
  std::vector<char> defined(m, 0);

  detail::parallel_for(m, [&](std::size_t k) {
    const double r = r_grid[k];
    const int res = opt.resolution;
    const auto shell = [&](double rr) {
      return shell_integral(g, d.chi, {x, rr, res}, sphere_rule(auto_polar_nodes(g, {x, rr, res})));
    };
    const double E = detail::ball_mean(g, d.energy, x, r);
    const double f = shell(r);
    P.F[k] = E / (r * r);
    P.f[k] = f;
    P.ball_chi[k] = detail::ball_mean(g, d.chi, x, r);
    P.ball_src[k] = d.source.empty() ? 0.0 : detail::ball_mean(g, d.source, x, r);
    P.sigma[k] = detail::sigma_at(g, d, x, r, res);
    P.kappa[k] = std::sqrt(std::max(0.0, std::exp(-2 * P.sigma[k]) * f / (r * r * r)));
    if (f > kProfileFloor) {
      P.N[k] = r * r * r * P.F[k] / f;
      defined[k] = 1;
    } else {
      P.N[k] = std::numeric_limits<double>::quiet_NaN();
    }
    // f' and kappa' from shells at r +- delta, r +- 2 delta; sigma is advanced linearly
    const double sp = f > kProfileFloor ? P.ball_src[k] / f : 0.0;
    std::array<double, 4> fs{}, ks{};
    const std::array<double, 4> off{-2 * delta, -delta, delta, 2 * delta};
    for (int a = 0; a < 4; ++a) {
      const double rr = r + off[a];
      fs[a] = shell(rr);
      ks[a] = std::sqrt(std::max(0.0, std::exp(-2 * (P.sigma[k] + off[a] * sp)) * fs[a] / (rr * rr * rr)));
    }
    P.f_prime[k] = (fs[0] - 8 * fs[1] + 8 * fs[2] - fs[3]) / (12 * delta);
    P.kappa_prime[k] = (ks[0] - 8 * ks[1] + 8 * ks[2] - ks[3]) / (12 * delta);
  });
  for (std::size_t k = 0; k < m; ++k) P.N_defined[k] = defined[k] != 0;
  return P;
}

inline RadialProfile radial_profile(const Configuration& c, const Vec4& x, const std::vector<double>& r_grid,
                                    const ProfileOptions& opt = {}) {
  return radial_profile(c.geom, field_densities(c), x, r_grid, opt);
}

// Radii from r_lo to r_hi (inclusive where it lands) with the given spacing.
inline std::vector<double> radial_grid(double r_lo, double r_hi, double spacing) {
  std::vector<double> r;
  for (double t = r_lo; t <= r_hi * (1 + 1e-12); t += spacing) r.push_back(t);
  return r;
}

// ---------------------------------------------------------------------------------------------
// ODE checks and monotonicity

struct OdeReport {
  std::vector<double> f_prime_dev, kappa_prime_dev;  // relative deviations per radius
  double max_f_prime_dev = 0, max_kappa_prime_dev = 0;
};

namespace detail {

inline double rel_dev(double a, double b, double floor) {
  const double den = std::max({std::abs(a), std::abs(b), floor, std::numeric_limits<double>::min()});
  return std::abs(a - b) / den;
}

}  // namespace detail

// f' against 3f/r + 2r^2 F + 2 int s_X/4 |chi_0|^2, and kappa' against N kappa / r.
inline OdeReport ode_checks(const RadialProfile& P) {
  if (P.size() == 0) throw ValidationError("ode checks need a non-empty profile");
  OdeReport out;
  for (std::size_t k = 0; k < P.size(); ++k) {
    const double r = P.r[k];
    const double rhs = 3 * P.f[k] / r + 2 * r * r * P.F[k] + 2 * P.ball_src[k];
    // floors sit at summation rounding of the ~1e5-node shell rules, far below any tolerance
    const double df = detail::rel_dev(P.f_prime[k], rhs, 1e-8 * P.f[k] / r);
    double dk = 0;
    if (P.N_defined[k]) {
      const double rk = P.N[k] * P.kappa[k] / r;
      dk = detail::rel_dev(P.kappa_prime[k], rk, 1e-8 * P.kappa[k] / r);
    }
    out.f_prime_dev.push_back(df);
    out.kappa_prime_dev.push_back(dk);
    out.max_f_prime_dev = std::max(out.max_f_prime_dev, df);
    out.max_kappa_prime_dev = std::max(out.max_kappa_prime_dev, dk);
  }
  return out;
}

struct MonotonicityReport {
  double worst_F_drop = 0;   // largest relative decrease of e^{c0 r}F + c0 r^3
  double worst_f_drop = 0;   // largest relative decrease of e^{c0 r^2} f / r^3
  double max_ball_ratio = 0; // max int_{B_r}|chi_0|^2 / (r f(r))
  bool F_monotone = true, f_monotone = true, ball_shell_ok = true;
  bool pass() const { return F_monotone && f_monotone && ball_shell_ok; }
};

inline MonotonicityReport monotonicity_scan(const RadialProfile& P, double c0, double c_ball = 1.0, double slack = 0.02) {
  MonotonicityReport out;
  const auto drop = [](double a, double b) {
    const double s = std::max(std::abs(a), std::abs(b));
    return s == 0 ? 0.0 : (a - b) / s;
  };
  for (std::size_t k = 0; k < P.size(); ++k) {
    const double r = P.r[k];
    if (P.f[k] > kProfileFloor) out.max_ball_ratio = std::max(out.max_ball_ratio, P.ball_chi[k] / (r * P.f[k]));
    if (k == 0) continue;
    const double r0 = P.r[k - 1];
    const double g0 = std::exp(c0 * r0) * P.F[k - 1] + c0 * r0 * r0 * r0;
    const double g1 = std::exp(c0 * r) * P.F[k] + c0 * r * r * r;
    const double h0 = std::exp(c0 * r0 * r0) * P.f[k - 1] / (r0 * r0 * r0);
    const double h1 = std::exp(c0 * r * r) * P.f[k] / (r * r * r);
    out.worst_F_drop = std::max(out.worst_F_drop, drop(g0, g1));
    out.worst_f_drop = std::max(out.worst_f_drop, drop(h0, h1));
  }
  out.F_monotone = out.worst_F_drop <= slack;
  out.f_monotone = out.worst_f_drop <= slack;
  out.ball_shell_ok = out.max_ball_ratio <= c_ball * (1 + slack);
  return out;
}

// ---------------------------------------------------------------------------------------------
// Critical radius r(x) = sup{ r <= delta_0 : F_x(r) <= eps0 } and the epsilon-regularity probe

struct CriticalRadius {
  double r = 0;
  bool flagged = false;  // F above eps0 already at the smallest resolvable radius
  double r_max = 0;
};

inline CriticalRadius critical_radius(const LatticeGeom& g, const std::vector<double>& energy, const Vec4& x, double eps0) {
  CriticalRadius out;
  out.r_max = max_radius(g, x) - 0.5 * g.h;
  if (out.r_max < g.h) throw ValidationError("point too close to the boundary for a critical radius");
  const auto F = [&](double r) { return ball_integral(g, energy, {x, r, 0}) / (r * r); };
  if (F(out.r_max) <= eps0) {
    out.r = out.r_max;
    return out;
  }
  double lo = g.h, hi = out.r_max;
  if (F(lo) > eps0) {
    out.flagged = true;
    return out;
  }
  for (int it = 0; it < 60 && hi - lo > 1e-6 * g.h; ++it) {
    const double mid = 0.5 * (lo + hi);
    (F(mid) <= eps0 ? lo : hi) = mid;
  }
  out.r = lo;
  return out;
}

inline CriticalRadius critical_radius(const Configuration& c, const Vec4& x, double eps0) {
  return critical_radius(c.geom, energy_density(c), x, eps0);
}

struct ProbeRow {
  double r = 0, F = 0, sup_energy = 0, c_hat = 0;
};

struct RegularityProbe {
  Vec4 x{};
  double rho = 0;  // rho_0 o u at the nearest site
  CriticalRadius rc;
  std::vector<ProbeRow> rows;
};

namespace detail {

inline Site nearest_site(const LatticeGeom& g, const Vec4& x) {
  std::array<int, 4> c{};
  for (int a = 0; a < 4; ++a) {
    int k = static_cast<int>(std::lround((x[a] - g.origin[a]) / g.h));
    c[a] = g.topology == Topology::Box ? std::clamp(k, 0, g.dims[a] - 1) : ((k % g.dims[a]) + g.dims[a]) % g.dims[a];
  }
  return g.index(c);
}

inline double site_distance(const LatticeGeom& g, Site s, const Vec4& x) {
  const Vec4 p = g.position(s);
  double d2 = 0;
  for (int a = 0; a < 4; ++a) {
    double d = p[a] - x[a];
    if (g.topology == Topology::Torus) {
      const double L = g.h * g.dims[a];
      d -= L * std::round(d / L);
    }
    d2 += d * d;
  }
  return std::sqrt(d2);
}

inline double sup_in_ball(const LatticeGeom& g, const std::vector<double>& f, const Vec4& x, double r) {
  double s = f[nearest_site(g, x)];
  for (Site y = 0; y < g.sites(); ++y)
    if (site_distance(g, y, x) <= r) s = std::max(s, f[y]);
  return s;
}

}  // namespace detail

// c_hat = sup_{B_{r/4}} |d_A u|^2 / (r^{-2} F_x(r) + r^2) for radii up to r(x); measured, never asserted.
inline RegularityProbe regularity_probe(const Configuration& c, const std::vector<double>& energy, const Vec4& x,
                                        double eps0, int n_radii = 6) {
  const auto& g = c.geom;
  RegularityProbe out;
  out.x = x;
  out.rho = rho0(c.u.at(detail::nearest_site(g, x)));
  out.rc = critical_radius(g, energy, x, eps0);
  if (out.rc.r <= 0) return out;
  const double r_lo = std::min(2 * g.h, out.rc.r);
  for (int k = 0; k < n_radii; ++k) {
    const double r = n_radii == 1 ? out.rc.r : r_lo + (out.rc.r - r_lo) * k / (n_radii - 1);
    ProbeRow row;
    row.r = r;
    row.F = ball_integral(g, energy, {x, r, 0}) / (r * r);
    row.sup_energy = detail::sup_in_ball(g, energy, x, 0.25 * r);
    row.c_hat = row.sup_energy / (row.F / (r * r) + r * r);
    out.rows.push_back(row);
  }
  return out;
}

inline RegularityProbe regularity_probe(const Configuration& c, const Vec4& x, double eps0, int n_radii = 6) {
  return regularity_probe(c, energy_density(c), x, eps0, n_radii);
}

struct ScatterReport {
  std::vector<double> rho, r;
  std::vector<bool> flagged;
  int concordant = 0, discordant = 0, ties = 0;  // radii within tie_rel of each other count as ties
  double tau = 0;          // Kendall tau-a over the sampled points
  double c_eps = 0;        // min r / rho over points with rho > 0 and r below sqrt(eps0)
};

// tie_rel absorbs the quadrature wobble of r(x) as the ball centre moves against the lattice.
inline ScatterReport critical_radius_scatter(const Configuration& c, const std::vector<Vec4>& pts, double eps0,
                                             double tie_rel = 0.01) {
  const auto e = energy_density(c);
  ScatterReport out;
  out.rho.resize(pts.size());
  out.r.resize(pts.size());
  out.flagged.resize(pts.size());
  std::vector<char> fl(pts.size());
  detail::parallel_for(pts.size(), [&](std::size_t k) {
    const auto rc = critical_radius(c.geom, e, pts[k], eps0);
    out.rho[k] = rho0(c.u.at(detail::nearest_site(c.geom, pts[k])));
    out.r[k] = rc.r;
    fl[k] = rc.flagged;
  });
  out.c_eps = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < pts.size(); ++k) {
    out.flagged[k] = fl[k] != 0;
    if (out.rho[k] > 0 && out.r[k] < std::sqrt(eps0)) out.c_eps = std::min(out.c_eps, out.r[k] / out.rho[k]);
    for (std::size_t l = k + 1; l < pts.size(); ++l) {
      const double s = (out.rho[k] - out.rho[l]) * (out.r[k] - out.r[l]);
      const double tol = tie_rel * std::max(std::abs(out.r[k]), std::abs(out.r[l]));
      if (std::abs(out.r[k] - out.r[l]) <= tol || out.rho[k] == out.rho[l])
        ++out.ties;
      else
        (s > 0 ? out.concordant : out.discordant)++;
    }
  }
  const double pairs = 0.5 * pts.size() * (pts.size() - 1.0);
  out.tau = pairs > 0 ? (out.concordant - out.discordant) / pairs : 0.0;
  if (!std::isfinite(out.c_eps)) out.c_eps = 0;
  return out;
}

// ---------------------------------------------------------------------------------------------
// Sequence harness

enum class SequenceKind { FueterDilation, Custom };

inline const char* to_string(SequenceKind k) { return k == SequenceKind::FueterDilation ? "FueterDilation" : "Custom"; }

struct SequenceSpec {
  SequenceKind kind = SequenceKind::FueterDilation;
  LatticeGeom geom;
  Vec4 center{0, 0, 0, 0};     // concentration point
  std::vector<double> lambda;  // scale sequence; one member per entry
  double amplitude = 0.25;     // bump height of the dilated profile
  double normalization = 0;    // target for int rho_0(u_n); <= 0 keeps the raw members
  double c0 = 1e300;           // required bound on int rho_0(u_n)
  double c1 = 10;              // X' = { rho >= 1/c1 } eroded by one cell
  int tail = 2;                // window for the limsup proxy
  double center_radius = 0;    // sup over sites within this distance of the point (0: nearest site)
  double decay_factor = 1.5;
  std::function<SpinorField(int)> custom;  // Custom: member n = 0..count-1
  int count = 0;
};

// Member n of the built-in family: z_1(x - p) + (-1)^n a exp(-lambda_n^2 |x - p|^2).
// The bump is the dilated profile; its alternating sign keeps u_n(p) from settling.
inline Quaternion fueter_dilation_value(const SequenceSpec& s, int n, const Vec4& x) {
  const Vec4 y{x[0] - s.center[0], x[1] - s.center[1], x[2] - s.center[2], x[3] - s.center[3]};
  const double r2 = y[0] * y[0] + y[1] * y[1] + y[2] * y[2] + y[3] * y[3];
  const double l = s.lambda[n];
  const double sign = n % 2 ? -1.0 : 1.0;
  return fueter_z(1, y) + Quaternion(sign * s.amplitude * std::exp(-l * l * r2));
}

struct SequenceStep {
  int n = 0;  // difference between members n and n+1
  double sup_diff_xprime = 0, sup_diff_center = 0;
  std::array<double, 3> lp_diffs{};  // p = 1, 2, 4
  double integral_rho = 0;           // int rho_0(u_n)
};

struct SequenceReport {
  std::vector<SequenceStep> steps;
  std::vector<double> integral_rho;  // every member
  std::size_t xprime_sites = 0;
  bool xprime_empty = true;
  double xprime_decay_factor = 0;    // min ratio of successive X' differences above the rounding floor
  bool xprime_decays = false;
  bool center_non_decay = false;
  std::array<bool, 3> lp_decays{};
  std::vector<std::string> warnings;
};

inline constexpr std::array<double, 3> kLpExponents{1.0, 2.0, 4.0};

namespace detail {

// min d_k / d_{k+1} over steps whose d_k clears the floor; +inf when the tail hits the floor.
inline double decay_factor(const std::vector<double>& d, double floor) {
  double f = std::numeric_limits<double>::infinity();
  bool any = false;
  for (std::size_t k = 0; k + 1 < d.size(); ++k) {
    if (d[k] <= floor) continue;
    any = true;
    if (d[k + 1] > floor) f = std::min(f, d[k] / d[k + 1]);
  }
  return any ? f : std::numeric_limits<double>::infinity();
}

}  // namespace detail

inline SequenceReport sequence_harness(const SequenceSpec& spec) {
  const auto& g = spec.geom;
  g.validate();
  const int count = spec.kind == SequenceKind::FueterDilation ? static_cast<int>(spec.lambda.size()) : spec.count;
  if (count < 3) throw ValidationError("sequence needs at least 3 members");
  if (spec.tail < 1 || spec.tail > count) throw ValidationError("tail window must lie in [1, count]");
  if (!(spec.c1 > 0)) throw ValidationError("c1 must be positive");
  if (spec.kind == SequenceKind::Custom && !spec.custom) throw ValidationError("custom sequence needs a generator");
  for (double l : spec.lambda)
    if (!(l > 0)) throw ValidationError("scales must be positive");

  const double w = g.volume_weight();
  std::vector<SpinorField> u;
  u.reserve(count);
  SequenceReport rep;
  for (int n = 0; n < count; ++n) {
    SpinorField f = spec.kind == SequenceKind::FueterDilation
                        ? sample_spinor(g, TargetKind::FlatH, [&](const Vec4& x) { return fueter_dilation_value(spec, n, x); })
                        : spec.custom(n);
    if (f.q.size() != g.sites()) throw ValidationError("sequence member has the wrong size");
    double I = 0;
    for (Site x = 0; x < g.sites(); ++x) I += rho0(f.at(x));
    I *= w;
    if (spec.normalization > 0) {
      if (!(I > 0) || !std::isfinite(I)) throw NumericalError("cannot normalise a member with zero energy");
      const double s = std::sqrt(spec.normalization / I);
      for (auto& q : f.q) q *= s;
      I = spec.normalization;
    }
    if (I > spec.c0 * (1 + 1e-12)) throw ValidationError("member exceeds the energy bound c0");
    rep.integral_rho.push_back(I);
    u.push_back(std::move(f));
  }

  // limsup proxy over the tail window, then X' eroded by one lattice cell
  std::vector<double> rho(g.sites(), 0.0);
  for (int n = count - spec.tail; n < count; ++n)
    for (Site x = 0; x < g.sites(); ++x) rho[x] = std::max(rho[x], rho0(u[n].at(x)));
  const double thr = 1.0 / spec.c1;
  std::vector<char> inX(g.sites(), 0);
  for (Site x = 0; x < g.sites(); ++x) {
    if (rho[x] < thr) continue;
    bool ok = true;
    for (int i = 0; i < 4 && ok; ++i)
      for (int dir : {-1, 1}) {
        const Site y = g.neighbor(x, i, dir);
        if (y == kNoSite || rho[y] < thr) {
          ok = false;
          break;
        }
      }
    if (ok) {
      inX[x] = 1;
      ++rep.xprime_sites;
    }
  }
  rep.xprime_empty = rep.xprime_sites == 0;
  if (rep.xprime_empty) rep.warnings.push_back("X' is empty: the tail never reaches rho >= 1/c1");

  std::vector<Site> near;
  const Site p = detail::nearest_site(g, spec.center);
  near.push_back(p);
  if (spec.center_radius > 0)
    for (Site y = 0; y < g.sites(); ++y)
      if (y != p && detail::site_distance(g, y, spec.center) <= spec.center_radius) near.push_back(y);

  double scale = 0;
  for (const auto& f : u)
    for (const auto& q : f.q) scale = std::max(scale, q.norm());
  const double floor = 1e-13 * std::max(1.0, scale);

  std::vector<double> dx, dc;
  std::array<std::vector<double>, 3> dl;
  for (int n = 0; n + 1 < count; ++n) {
    SequenceStep st;
    st.n = n;
    st.integral_rho = rep.integral_rho[n];
    std::array<double, 3> acc{};
    for (Site x = 0; x < g.sites(); ++x) {
      const double d = (u[n].q[x] - u[n + 1].q[x]).norm();
      if (inX[x]) st.sup_diff_xprime = std::max(st.sup_diff_xprime, d);
      const double dr = std::abs(rho0(u[n].at(x)) - rho0(u[n + 1].at(x)));
      for (int k = 0; k < 3; ++k) acc[k] += std::pow(dr, kLpExponents[k]);
    }
    for (Site y : near) st.sup_diff_center = std::max(st.sup_diff_center, (u[n].q[y] - u[n + 1].q[y]).norm());
    for (int k = 0; k < 3; ++k) st.lp_diffs[k] = std::pow(acc[k] * w, 1.0 / kLpExponents[k]);
    dx.push_back(st.sup_diff_xprime);
    dc.push_back(st.sup_diff_center);
    for (int k = 0; k < 3; ++k) dl[k].push_back(st.lp_diffs[k]);
    rep.steps.push_back(st);
  }

  if (!rep.xprime_empty) {
    rep.xprime_decay_factor = detail::decay_factor(dx, floor);
    rep.xprime_decays = rep.xprime_decay_factor >= spec.decay_factor;
  }
  rep.center_non_decay = dc.front() > floor && dc.back() >= 0.5 * dc.front();
  for (int k = 0; k < 3; ++k) {
    bool dec = true;
    for (std::size_t s = 0; s + 1 < dl[k].size(); ++s)
      if (dl[k][s] > floor && !(dl[k][s + 1] < dl[k][s])) dec = false;
    if (dl[k].front() > floor && !(dl[k].back() <= 0.5 * dl[k].front())) dec = false;
    rep.lp_decays[k] = dec;
  }
  return rep;
}

}  // namespace gswlab

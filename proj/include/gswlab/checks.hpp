#pragma once
// Sampled invariant margins of the quaternionic target. Shared by the CLI (target-check) and
// the acceptance binary; each margin is the worst violation over the samples.

#include <cstdint>
#include <random>

#include "gswlab/quat_target.hpp"

namespace gswlab {

struct TargetMargins {
  int samples = 0;
  double fd_step = 0;
  double norm_multiplicative = 0;  // ||pq| - |p||q|| / (1 + |p||q|)
  double complex_structure = 0;    // I^2 = -1 and I J = K on tangent vectors
  double permuting = 0;            // q I_zeta q^-1 v = I_{q zeta qbar} v
  double isometry_commute = 0;     // Sp(1), U(1) isometries that commute
  double omega_antisymmetry = 0;
  double moment_fd = 0;            // central FD of <mu, zeta (x) xi> against omega_zeta(K_xi, v)
  double moment_equivariance = 0;  // U(1) invariance of mu
  double chi2 = 0;                 // trace-free part of chi, both targets
  double chi0_diagonal = 0;        // closed-form chi_0 against its diagonal average
  int rho0_exact_failures = 0;     // rho_0 == 1/2 |chi_0|^2 bitwise
  int grad_rho0_exact_failures = 0;  // |grad rho_0|^2 == 2 rho_0 bitwise

  static constexpr double kAlgebraTol = 1e-12;
  static constexpr double kFdTol = 1e-6;

  bool pass() const {
    return norm_multiplicative <= kAlgebraTol && complex_structure <= kAlgebraTol && permuting <= kAlgebraTol &&
           isometry_commute <= kAlgebraTol && omega_antisymmetry <= kAlgebraTol && moment_equivariance <= kAlgebraTol &&
           chi2 <= kAlgebraTol && chi0_diagonal <= kAlgebraTol && moment_fd <= kFdTol && rho0_exact_failures == 0 &&
           grad_rho0_exact_failures == 0;
  }
};

inline TargetMargins target_margins(std::uint64_t seed, int samples = 1000, double fd_step = 1e-4) {
  if (samples < 1) throw ValidationError("target check needs at least one sample");
  if (!(fd_step > 0) || fd_step > 0.1) throw ValidationError("fd_step must lie in (0, 0.1]");
  std::mt19937_64 g(seed);
  std::normal_distribution<double> n;
  std::uniform_real_distribution<double> th(-3.0, 3.0);
  const auto rq = [&] { return Quaternion(n(g), n(g), n(g), n(g)); };
  const auto rim = [&] {
    Quaternion z(0, n(g), n(g), n(g));
    z = z / z.norm();
    return ImQuaternion{z.h1, z.h2, z.h3};
  };
  TargetMargins m;
  m.samples = samples;
  m.fd_step = fd_step;
  const auto upd = [](double& a, double v) { a = std::max(a, v); };
  for (int t = 0; t < samples; ++t) {
    const Quaternion p = rq(), q = rq(), v = rq(), w = rq();
    const auto P = TargetPoint::make(p, TargetKind::FlatH);
    upd(m.norm_multiplicative, std::abs((p * q).norm() - p.norm() * q.norm()) / (1 + p.norm() * q.norm()));

    const TangentM tv{v, P}, tw{w, P};
    const double sv = 1 + v.norm();
    upd(m.complex_structure,
        (scalar_action(Quaternion::i(), scalar_action(Quaternion::j(), tv)).vec - scalar_action(Quaternion::k(), tv).vec).norm() / sv);
    for (int l = 1; l < 4; ++l) {
      const auto e = Quaternion::unit(l);
      upd(m.complex_structure, (scalar_action(e, scalar_action(e, tv)).vec + v).norm() / sv);
    }

    const Quaternion u = q / q.norm();
    const ImQuaternion z = rim();
    const Quaternion lhs = u * (z.q() * (u.inverse() * v));
    upd(m.permuting, (lhs - scalar_action(u * z.q() * u.conj(), tv).vec).norm() / sv);

    const Quaternion e = expi(th(g));
    const double s2 = 1 + v.norm2() + w.norm2();
    upd(m.isometry_commute, std::abs(dot(u * v, u * w) - dot(v, w)) / s2);
    upd(m.isometry_commute, std::abs(dot(v * e, w * e) - dot(v, w)) / s2);
    upd(m.isometry_commute, ((u * v) * e - u * (v * e)).norm() / sv);

    upd(m.omega_antisymmetry, std::abs(omega(z, tv, tw) + omega(z, tw, tv)) / s2);

    const auto xi = GLieAlg::u1(th(g));
    const double h = fd_step;
    const double fd = (moment_map(TargetPoint::make(p + h * v, TargetKind::FlatH), z, xi) -
                       moment_map(TargetPoint::make(p - h * v, TargetKind::FlatH), z, xi)) /
                      (2 * h);
    upd(m.moment_fd, std::abs(fd - omega(z, fundamental_vector_g(xi, P), tv)) / (1 + p.norm2() + v.norm2()));
    upd(m.moment_equivariance,
        std::abs(moment_map(P, z, xi) - moment_map(TargetPoint::make(p * e, TargetKind::FlatH), z, xi)) / (1 + p.norm2()));

    for (auto kind : {TargetKind::FlatH, TargetKind::ConeHmodZ2}) {
      const auto X = TargetPoint::make(p, kind);
      const double sp = 1 + p.norm();
      upd(m.chi2, chi2(z, rim(), X).vec.norm() / sp);
      upd(m.chi0_diagonal, (chi0_diagonal_average(X).vec - chi0(X).vec).norm() / sp);
      if (rho0(X) != 0.5 * chi0(X).vec.norm2()) ++m.rho0_exact_failures;
      if (grad_rho0(X).vec.norm2() != 2.0 * rho0(X)) ++m.grad_rho0_exact_failures;
    }
  }
  return m;
}

}  // namespace gswlab

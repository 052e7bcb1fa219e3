#pragma once
// Smooth fixtures shared by the frequency suite and the acceptance binary.

#include <cmath>
#include <numbers>

#include "gswlab/frequency.hpp"

namespace gswlab::testing {

inline constexpr double kTwoPi = 2 * std::numbers::pi;

// Smooth periodic data on the unit torus. Fields depend on x0..x2 only, so the x3 period can be
// two sites and the sweep reaches n = 96; link values are sampled at link midpoints.
inline Configuration smooth_torus(int n, Group group, Stencil st) {
  LatticeGeom g({n, n, n, 2}, 1.0 / n, Topology::Torus);
  auto u = sample_spinor(g, TargetKind::FlatH, [](const Vec4& x) {
    return Quaternion(1.3 + 0.4 * std::sin(kTwoPi * x[0] + 0.3) * std::cos(kTwoPi * x[2]),
                      0.5 * std::cos(kTwoPi * x[1] - 0.7) + 0.2 * std::sin(kTwoPi * x[2]),
                      -0.3 * std::sin(kTwoPi * (x[0] + x[1])),
                      0.6 * std::cos(kTwoPi * x[2] + 0.1) * std::sin(kTwoPi * x[1]));
  });
  auto A = ConnectionField::trivial();
  if (group == Group::U1) {
    A = ConnectionField::zero_u1(g);
    for (Site s = 0; s < g.sites(); ++s)
      for (int i = 0; i < 4; ++i) {
        Vec4 m = g.position(s);
        m[i] += 0.5 * g.h;
        A.a[4 * s + i] = 0.3 * std::sin(kTwoPi * m[(i + 1) % 3] + i) + 0.2 * std::cos(kTwoPi * m[(i + 2) % 3] - 0.5 * i);
      }
  }
  return {g, A, u, st};
}

inline double sup(const std::vector<double>& f) {
  double s = 0;
  for (double v : f) s = std::max(s, std::abs(v));
  return s;
}

inline double sup(const SiteVector& f) {
  double s = 0;
  for (const auto& v : f)
    for (double c : v) s = std::max(s, std::abs(c));
  return s;
}

// sup over sites inside the physical ball |x| <= r
inline double sup_inside(const LatticeGeom& g, const std::vector<double>& f, double r) {
  double s = 0;
  for (Site x = 0; x < g.sites(); ++x) {
    const auto p = g.position(x);
    if (p[0] * p[0] + p[1] * p[1] + p[2] * p[2] + p[3] * p[3] <= r * r) s = std::max(s, std::abs(f[x]));
  }
  return s;
}

inline double order(double coarse, double fine) { return std::log2(coarse / fine); }

inline Configuration fueter_box(int n, double h, const FueterSpec& s, Stencil st = Stencil::Centered, Vec4 c = {0, 0, 0, 0}) {
  auto g = LatticeGeom::centered_box(n, h);
  return {g, ConnectionField::trivial(), fueter_library(g, s, c), st};
}

}  // namespace gswlab::testing

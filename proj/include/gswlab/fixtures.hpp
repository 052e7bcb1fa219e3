#pragma once
// Seeded starting configurations for experiments. Draw order is part of the contract: the same
// seed gives the same configuration on every platform with a conforming mt19937_64.

#include <cstdint>
#include <random>

#include "gswlab/gsw.hpp"

namespace gswlab {

struct RandomConfigOptions {
  double spinor_offset = 1.5;  // keeps |u| away from 0 (cone alignment, multiplier sources)
  double spinor_noise = 0.3;
  double link_noise = 0.3;
};

// Links first (U(1) only, box links that do not exist stay 0), then spinors site by site.
inline Configuration random_configuration(const LatticeGeom& geo, Group group, TargetKind kind, Stencil st,
                                          std::mt19937_64& g, const RandomConfigOptions& opt = {}) {
  geo.validate();
  ConnectionField A = ConnectionField::trivial();
  if (group == Group::U1) {
    A = ConnectionField::zero_u1(geo);
    std::normal_distribution<double> n(0.0, opt.link_noise);
    for (Site x = 0; x < geo.sites(); ++x)
      for (int i = 0; i < 4; ++i)
        if (geo.has_link(x, i)) A.a[4 * x + i] = n(g);
  }
  std::normal_distribution<double> n(0.0, opt.spinor_noise);
  std::vector<Quaternion> q(geo.sites());
  for (auto& x : q) {
    const double a = n(g), b = n(g), c = n(g), d = n(g);
    x = Quaternion(opt.spinor_offset) + Quaternion(a, b, c, d);
  }
  return {geo, std::move(A), make_spinor(kind, std::move(q)), st};
}

// Random tangent vector with N(0, s) entries; missing box links stay 0.
inline TangentConfig random_tangent(const Configuration& c, std::mt19937_64& g, double s = 1.0) {
  std::normal_distribution<double> n(0.0, s);
  TangentConfig t;
  if (c.group() == Group::U1) {
    t.b.resize(4 * c.geom.sites());
    for (auto& x : t.b) x = n(g);
    for (Site x = 0; x < c.geom.sites(); ++x)
      for (int i = 0; i < 4; ++i)
        if (!c.geom.has_link(x, i)) t.b[4 * x + i] = 0;
  }
  t.v.resize(c.geom.sites());
  for (auto& q : t.v) {
    const double a = n(g), b = n(g), cc = n(g), d = n(g);
    q = Quaternion(a, b, cc, d);
  }
  return t;
}

// u = 0, a = 0: the reducible point with a one-dimensional stabilizer (U(1) only).
inline Configuration reducible_configuration(const LatticeGeom& geo, TargetKind kind, Stencil st) {
  if (kind == TargetKind::ConeHmodZ2) throw ValidationError("the zero spinor is not a point of the cone target");
  return {geo, ConnectionField::zero_u1(geo), SpinorField::zeros(geo, kind), st};
}

}  // namespace gswlab

#pragma once
// Quaternion algebra and the two flat hyperKahler targets (H and H*/Z2).
//
// Conventions, fixed repo-wide:
//   I_zeta v = zeta * v            (left multiplication)
//   Sp(1) acts on the left, U(1) acts on the right by e^{i theta}
//   omega_zeta(v, w) = g(v, I_zeta w)
//   mu_zeta(q) * xi = 1/2 xi <zeta, q i conj(q)>

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>

namespace gswlab {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
// bad input (maps to CLI exit 2)
class ValidationError : public Error {
 public:
  using Error::Error;
};
// non-convergence, rank trouble, singular segments (CLI exit 3)
class NumericalError : public Error {
 public:
  using Error::Error;
};

struct Quaternion {
  double h0 = 0, h1 = 0, h2 = 0, h3 = 0;

  constexpr Quaternion() = default;
  constexpr Quaternion(double a, double b = 0, double c = 0, double d = 0) : h0(a), h1(b), h2(c), h3(d) {}

  static constexpr Quaternion one() { return {1, 0, 0, 0}; }
  static constexpr Quaternion i() { return {0, 1, 0, 0}; }
  static constexpr Quaternion j() { return {0, 0, 1, 0}; }
  static constexpr Quaternion k() { return {0, 0, 0, 1}; }
  // e_0..e_3 = 1, i, j, k
  static constexpr Quaternion unit(int a) {
    return a == 0 ? one() : a == 1 ? i() : a == 2 ? j() : k();
  }

  constexpr double operator[](int a) const { return a == 0 ? h0 : a == 1 ? h1 : a == 2 ? h2 : h3; }
  double& operator[](int a) { return a == 0 ? h0 : a == 1 ? h1 : a == 2 ? h2 : h3; }

  constexpr Quaternion conj() const { return {h0, -h1, -h2, -h3}; }
  constexpr double norm2() const { return h0 * h0 + h1 * h1 + h2 * h2 + h3 * h3; }
  double norm() const { return std::sqrt(norm2()); }
  constexpr double re() const { return h0; }
  constexpr Quaternion im() const { return {0, h1, h2, h3}; }
  Quaternion inverse() const {
    const double n = norm2();
    if (n == 0) throw NumericalError("inverse of zero quaternion");
    return {h0 / n, -h1 / n, -h2 / n, -h3 / n};
  }

  constexpr Quaternion& operator+=(const Quaternion& o) {
    h0 += o.h0; h1 += o.h1; h2 += o.h2; h3 += o.h3;
    return *this;
  }
  constexpr Quaternion& operator-=(const Quaternion& o) {
    h0 -= o.h0; h1 -= o.h1; h2 -= o.h2; h3 -= o.h3;
    return *this;
  }
  constexpr Quaternion& operator*=(double s) {
    h0 *= s; h1 *= s; h2 *= s; h3 *= s;
    return *this;
  }
  constexpr bool operator==(const Quaternion&) const = default;
};

constexpr Quaternion operator+(Quaternion a, const Quaternion& b) { return a += b; }
constexpr Quaternion operator-(Quaternion a, const Quaternion& b) { return a -= b; }
constexpr Quaternion operator-(const Quaternion& a) { return {-a.h0, -a.h1, -a.h2, -a.h3}; }
constexpr Quaternion operator*(Quaternion a, double s) { return a *= s; }
constexpr Quaternion operator*(double s, Quaternion a) { return a *= s; }
constexpr Quaternion operator/(Quaternion a, double s) { return a *= (1.0 / s); }
constexpr Quaternion operator*(const Quaternion& a, const Quaternion& b) {
  return {a.h0 * b.h0 - a.h1 * b.h1 - a.h2 * b.h2 - a.h3 * b.h3,
          a.h0 * b.h1 + a.h1 * b.h0 + a.h2 * b.h3 - a.h3 * b.h2,
          a.h0 * b.h2 - a.h1 * b.h3 + a.h2 * b.h0 + a.h3 * b.h1,
          a.h0 * b.h3 + a.h1 * b.h2 - a.h2 * b.h1 + a.h3 * b.h0};
}

// Euclidean pairing <a, b> = Re(a conj(b)).
constexpr double dot(const Quaternion& a, const Quaternion& b) {
  return a.h0 * b.h0 + a.h1 * b.h1 + a.h2 * b.h2 + a.h3 * b.h3;
}

// e^{i t} as a unit quaternion in span(1, i).
inline Quaternion expi(double t) { return {std::cos(t), std::sin(t), 0, 0}; }

// Multiplication by a quaternion in span(1, i) from the right; cheaper than the full product.
constexpr Quaternion mul_complex_right(const Quaternion& q, double c, double s) {
  // q * (c + s i)
  return {q.h0 * c - q.h1 * s, q.h1 * c + q.h0 * s, q.h2 * c + q.h3 * s, q.h3 * c - q.h2 * s};
}

struct ImQuaternion {
  double h1 = 0, h2 = 0, h3 = 0;
  constexpr ImQuaternion() = default;
  constexpr ImQuaternion(double b, double c, double d) : h1(b), h2(c), h3(d) {}
  constexpr Quaternion q() const { return {0, h1, h2, h3}; }
  static constexpr ImQuaternion basis(int l) {  // zeta_1..3 = i, j, k (l in 0..2)
    return l == 0 ? ImQuaternion{1, 0, 0} : l == 1 ? ImQuaternion{0, 1, 0} : ImQuaternion{0, 0, 1};
  }
};

enum class TargetKind { FlatH, ConeHmodZ2 };
enum class Group { Trivial, U1 };

inline constexpr double kConeGuard = 1e-9;

inline const char* to_string(TargetKind k) { return k == TargetKind::FlatH ? "FlatH" : "ConeHmodZ2"; }
inline const char* to_string(Group g) { return g == Group::Trivial ? "Trivial" : "U1"; }

// Cone representative: first nonzero coordinate positive.
inline Quaternion canonical_cone_rep(const Quaternion& q) {
  for (int a = 0; a < 4; ++a) {
    if (q[a] > 0) return q;
    if (q[a] < 0) return -q;
  }
  return q;
}

struct TargetPoint {
  Quaternion rep;
  TargetKind kind = TargetKind::FlatH;

  static TargetPoint make(const Quaternion& q, TargetKind kind) {
    if (kind == TargetKind::FlatH) return {q, kind};
    if (q.norm() < kConeGuard) throw NumericalError("cone target: point within singularity guard radius");
    return {canonical_cone_rep(q), kind};
  }
  bool operator==(const TargetPoint&) const = default;
};

struct TangentM {
  Quaternion vec;
  TargetPoint base;
};

// Element of the Lie algebra of G; empty optional means the trivial group.
struct GLieAlg {
  std::optional<double> xi;
  static GLieAlg trivial() { return {}; }
  static GLieAlg u1(double x) { return {x}; }
  bool is_trivial() const { return !xi.has_value(); }
};

inline void require_same_base(const TangentM& v, const TangentM& w) {
  if (!(v.base == w.base)) throw ValidationError("tangent vectors at different base points");
}

inline TangentM scalar_action(const Quaternion& zeta, const TangentM& v) { return {zeta * v.vec, v.base}; }

inline double hk_metric(const TangentM& v, const TangentM& w) {
  require_same_base(v, w);
  return dot(v.vec, w.vec);
}

inline double omega(const ImQuaternion& zeta, const TangentM& v, const TangentM& w) {
  require_same_base(v, w);
  return dot(v.vec, zeta.q() * w.vec);
}

inline TangentM fundamental_vector_sp1(const ImQuaternion& xi, const TargetPoint& p) { return {xi.q() * p.rep, p}; }

inline TangentM fundamental_vector_g(const GLieAlg& xi, const TargetPoint& p) {
  if (xi.is_trivial()) return {Quaternion{}, p};
  return {p.rep * Quaternion(0, *xi.xi, 0, 0), p};
}

inline TangentM chi_map(const ImQuaternion& zeta, const ImQuaternion& zeta_p, const TargetPoint& p) {
  return {-(zeta_p.q() * zeta.q() * p.rep), p};
}

// Trace-free symmetric part of chi; zero on both targets.
inline TangentM chi2(const ImQuaternion& zeta, const ImQuaternion& zeta_p, const TargetPoint& p) {
  const Quaternion sym = 0.5 * (chi_map(zeta, zeta_p, p).vec + chi_map(zeta_p, zeta, p).vec);
  Quaternion diag;
  for (int l = 0; l < 3; ++l) diag += chi_map(ImQuaternion::basis(l), ImQuaternion::basis(l), p).vec;
  return {sym - dot(zeta.q(), zeta_p.q()) * (diag / 3.0), p};
}

// Diagonal average (1/3) sum_l chi(zeta_l, zeta_l); equals the Euler field q.
inline TangentM chi0_diagonal_average(const TargetPoint& p) {
  Quaternion s;
  for (int l = 0; l < 3; ++l) s += chi_map(ImQuaternion::basis(l), ImQuaternion::basis(l), p).vec;
  return {s / 3.0, p};
}

inline TangentM chi0(const TargetPoint& p) { return {p.rep, p}; }

inline double rho0(const TargetPoint& p) { return 0.5 * p.rep.norm2(); }
inline TangentM grad_rho0(const TargetPoint& p) { return {p.rep, p}; }

// <mu(q), zeta (x) xi>.  Sign fixed by the finite-difference test of
// d<mu, zeta (x) xi>(v) = omega_zeta(K_xi, v).
inline double moment_map(const TargetPoint& p, const ImQuaternion& zeta, const GLieAlg& xi) {
  if (xi.is_trivial()) return 0.0;
  return 0.5 * (*xi.xi) * dot(zeta.q(), p.rep * Quaternion::i() * p.rep.conj());
}

// Differential of moment_map at q along v (xi = 1).
inline double moment_map_diff(const Quaternion& q, const Quaternion& zeta, const Quaternion& v) {
  const Quaternion i = Quaternion::i();
  return 0.5 * (dot(zeta, v * i * q.conj()) + dot(zeta, q * i * v.conj()));
}

// Second differential (symmetric bilinear, constant in q).
inline double moment_map_hess(const Quaternion& zeta, const Quaternion& v, const Quaternion& w) {
  const Quaternion i = Quaternion::i();
  return 0.5 * (dot(zeta, v * i * w.conj()) + dot(zeta, w * i * v.conj()));
}

// Distance from 0 to the segment p + t v, t in [0, 1].
inline double segment_distance_to_origin(const Quaternion& p, const Quaternion& v) {
  const double vv = v.norm2();
  double t = vv > 0 ? -dot(p, v) / vv : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return (p + t * v).norm();
}

inline TargetPoint exp_map(const TargetPoint& p, const TangentM& v) {
  if (p.kind == TargetKind::ConeHmodZ2 && segment_distance_to_origin(p.rep, v.vec) < kConeGuard)
    throw NumericalError("cone target: exp segment passes through the cone point");
  return TargetPoint::make(p.rep + v.vec, p.kind);
}

// Inverse of exp_map; on the cone the representative of q nearest to p is used.
inline TangentM log_map(const TargetPoint& p, const TargetPoint& q) {
  Quaternion target = q.rep;
  if (p.kind == TargetKind::ConeHmodZ2 && dot(target, p.rep) < 0) target = -target;
  if (p.kind == TargetKind::ConeHmodZ2 && segment_distance_to_origin(p.rep, target - p.rep) < kConeGuard)
    throw NumericalError("cone target: log segment passes through the cone point");
  return {target - p.rep, p};
}

// Flat parallel transport.  On the cone the vector follows the chosen representative.
inline TangentM transport(const TangentM& v, const TargetPoint& to) {
  Quaternion w = v.vec;
  if (to.kind == TargetKind::ConeHmodZ2 && dot(to.rep, v.base.rep) < 0) w = -w;
  return {w, to};
}

inline TangentM curvature_M(const TangentM& v, const TangentM& w, const TangentM& x) {
  require_same_base(v, w);
  require_same_base(v, x);
  return {Quaternion{}, v.base};
}

}  // namespace gswlab

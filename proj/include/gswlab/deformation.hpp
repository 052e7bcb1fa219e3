#pragma once
// Dense assembly of the deformation complex
//
//   gauge --D--> tangent --DF_sw--> equations,      frak D = [DF_sw ; D^*]
//
// and its cohomology, plus the Kuranishi chart.  Matrices are assembled by probing the
// matrix-free maps of gsw.hpp on unit vectors, so the assembled operators and the solver share
// one implementation.  Rank decisions use SVD in orthonormal coordinates (rows scaled by
// sqrt(w_row), columns by 1/sqrt(w_col)).

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "gswlab/gsw.hpp"

namespace gswlab {

enum class Block { Gauge, OneForm, Spinor, Dirac, SelfDual };

inline const char* to_string(Block b) {
  switch (b) {
    case Block::Gauge: return "gauge";
    case Block::OneForm: return "oneform";
    case Block::Spinor: return "spinor";
    case Block::Dirac: return "dirac";
    case Block::SelfDual: return "selfdual";
  }
  return "?";
}

struct BlockRange {
  Block tag;
  Eigen::Index start = 0, size = 0;
};

struct LinearMap {
  Eigen::MatrixXd M;
  Eigen::VectorXd w_rows, w_cols;  // diagonal inner-product weights
  std::vector<BlockRange> row_blocks, col_blocks;

  Eigen::Index rows() const { return M.rows(); }
  Eigen::Index cols() const { return M.cols(); }
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const { return M * x; }

  // Exact adjoint under the weighted inner products: W_c^{-1} M^T W_r.
  LinearMap adjoint() const {
    LinearMap t;
    t.M = w_cols.cwiseInverse().asDiagonal() * M.transpose() * w_rows.asDiagonal();
    t.w_rows = w_cols;
    t.w_cols = w_rows;
    t.row_blocks = col_blocks;
    t.col_blocks = row_blocks;
    return t;
  }

  Eigen::MatrixXd orthonormal() const {
    return w_rows.cwiseSqrt().asDiagonal() * M * w_cols.cwiseSqrt().cwiseInverse().asDiagonal();
  }
};

inline std::vector<BlockRange> tangent_blocks(const Layout& L) {
  std::vector<BlockRange> b;
  if (L.n_links() > 0) b.push_back({Block::OneForm, 0, static_cast<Eigen::Index>(L.n_links())});
  b.push_back({Block::Spinor, static_cast<Eigen::Index>(L.n_links()), static_cast<Eigen::Index>(4 * L.geom().sites())});
  return b;
}
inline std::vector<BlockRange> eq_blocks(const Layout& L) {
  std::vector<BlockRange> b{{Block::Dirac, 0, static_cast<Eigen::Index>(4 * L.geom().sites())}};
  if (L.n_cells() > 0)
    b.push_back({Block::SelfDual, static_cast<Eigen::Index>(4 * L.geom().sites()), static_cast<Eigen::Index>(3 * L.n_cells())});
  return b;
}
inline std::vector<BlockRange> gauge_blocks(const Layout& L) {
  if (L.n_gauge() == 0) return {};
  return {{Block::Gauge, 0, static_cast<Eigen::Index>(L.n_gauge())}};
}

// Column-by-column assembly of a linear map given as a function on flat vectors.
template <class F>
Eigen::MatrixXd probe(const F& f, Eigen::Index n_cols, Eigen::Index n_rows) {
  Eigen::MatrixXd M(n_rows, n_cols);
  Eigen::VectorXd e = Eigen::VectorXd::Zero(n_cols);
  for (Eigen::Index j = 0; j < n_cols; ++j) {
    e[j] = 1.0;
    M.col(j) = f(e);
    e[j] = 0.0;
  }
  return M;
}

// Stack maps with a common domain.
inline LinearMap vstack(const LinearMap& a, const LinearMap& b) {
  LinearMap out;
  out.M.resize(a.rows() + b.rows(), a.cols());
  out.M << a.M, b.M;
  out.w_rows.resize(a.rows() + b.rows());
  out.w_rows << a.w_rows, b.w_rows;
  out.w_cols = a.w_cols;
  out.row_blocks = a.row_blocks;
  for (auto r : b.row_blocks) {
    r.start += a.rows();
    out.row_blocks.push_back(r);
  }
  out.col_blocks = a.col_blocks;
  return out;
}

// ---------------------------------------------------------------------------------------------
// Operators

inline LinearMap lin_gauge(const Configuration& c) {
  const Layout L(c.geom, c.group());
  LinearMap m;
  m.M = probe([&](const Eigen::VectorXd& z) { return L.pack(gauge_lin(c, L.unpack_gauge(z))); },
              static_cast<Eigen::Index>(L.n_gauge()), static_cast<Eigen::Index>(L.n_tangent()));
  m.w_rows = L.w_tangent();
  m.w_cols = L.w_gauge();
  m.row_blocks = tangent_blocks(L);
  m.col_blocks = gauge_blocks(L);
  return m;
}

inline LinearMap lin_gauge_adjoint(const Configuration& c) {
  const Layout L(c.geom, c.group());
  LinearMap m;
  m.M = probe([&](const Eigen::VectorXd& x) { return L.pack_gauge(gauge_lin_adjoint(c, L.unpack_tangent(x))); },
              static_cast<Eigen::Index>(L.n_tangent()), static_cast<Eigen::Index>(L.n_gauge()));
  m.w_rows = L.w_gauge();
  m.w_cols = L.w_tangent();
  m.row_blocks = gauge_blocks(L);
  m.col_blocks = tangent_blocks(L);
  return m;
}

// d^* b + d mu_zeta(I_zeta v) for one unit zeta; equals lin_gauge_adjoint for every zeta.
inline LinearMap lin_gauge_adjoint_formula(const Configuration& c, const ImQuaternion& zeta) {
  auto m = lin_gauge_adjoint(c);
  const Layout L(c.geom, c.group());
  m.M = probe([&](const Eigen::VectorXd& x) { return L.pack_gauge(gauge_lin_adjoint_formula(c, L.unpack_tangent(x), zeta)); },
              static_cast<Eigen::Index>(L.n_tangent()), static_cast<Eigen::Index>(L.n_gauge()));
  return m;
}

inline LinearMap linearize_fsw(const Configuration& c, const Sources& s) {
  const Layout L(c.geom, c.group());
  LinearMap m;
  m.M = probe([&](const Eigen::VectorXd& x) { return L.pack(fsw_lin(c, s, L.unpack_tangent(x))); },
              static_cast<Eigen::Index>(L.n_tangent()), static_cast<Eigen::Index>(L.n_eq()));
  m.w_rows = L.w_eq();
  m.w_cols = L.w_tangent();
  m.row_blocks = eq_blocks(L);
  m.col_blocks = tangent_blocks(L);
  return m;
}

inline LinearMap elliptic_op(const Configuration& c, const Sources& s) {
  return vstack(linearize_fsw(c, s), lin_gauge_adjoint(c));
}

// ---------------------------------------------------------------------------------------------
// Numerical rank

inline constexpr double kRankRelTol = 1e-10;
inline constexpr double kRankMarginWarn = 10.0;

struct DenseSvd {
  Eigen::MatrixXd U, V;  // orthonormal coordinates
  Eigen::VectorXd sigma;
  Eigen::VectorXd sqrt_w_rows, sqrt_w_cols;
  Eigen::Index rank = 0;
  double cutoff = 0;
  double margin = std::numeric_limits<double>::infinity();  // smallest kept / largest dropped
  bool ill_conditioned = false;

  Eigen::Index rows() const { return U.rows(); }
  Eigen::Index cols() const { return V.rows(); }
  Eigen::Index kernel_dim() const { return cols() - rank; }
  Eigen::Index cokernel_dim() const { return rows() - rank; }

  // Kernel basis, orthonormal under the column weights.
  Eigen::MatrixXd kernel() const {
    return sqrt_w_cols.cwiseInverse().asDiagonal() * V.rightCols(kernel_dim());
  }
  // Cokernel (left kernel) basis, orthonormal under the row weights.
  Eigen::MatrixXd cokernel() const {
    return sqrt_w_rows.cwiseInverse().asDiagonal() * U.rightCols(cokernel_dim());
  }
  // Weighted minimum-norm least-squares solution of M x = y.
  Eigen::VectorXd solve(const Eigen::VectorXd& y) const {
    const Eigen::VectorXd yt = sqrt_w_rows.asDiagonal() * y;
    Eigen::VectorXd c = U.leftCols(rank).transpose() * yt;
    c.array() /= sigma.head(rank).array();
    return sqrt_w_cols.cwiseInverse().asDiagonal() * (V.leftCols(rank) * c);
  }
};

inline DenseSvd analyze(const LinearMap& m) {
  DenseSvd d;
  d.sqrt_w_rows = m.w_rows.cwiseSqrt();
  d.sqrt_w_cols = m.w_cols.cwiseSqrt();
  const Eigen::MatrixXd A = m.orthonormal();
  if (A.rows() == 0 || A.cols() == 0) {
    d.U = Eigen::MatrixXd::Identity(A.rows(), A.rows());
    d.V = Eigen::MatrixXd::Identity(A.cols(), A.cols());
    return d;
  }
  Eigen::BDCSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullU | Eigen::ComputeFullV);
  d.U = svd.matrixU();
  d.V = svd.matrixV();
  d.sigma = svd.singularValues();
  const double smax = d.sigma.size() ? d.sigma[0] : 0.0;
  d.cutoff = static_cast<double>(std::max(A.rows(), A.cols())) * smax * kRankRelTol;
  while (d.rank < d.sigma.size() && d.sigma[d.rank] > d.cutoff) ++d.rank;
  if (d.rank > 0 && d.rank < d.sigma.size())
    d.margin = d.sigma[d.rank] > 0 ? d.sigma[d.rank - 1] / d.sigma[d.rank] : std::numeric_limits<double>::infinity();
  d.ill_conditioned = d.margin < kRankMarginWarn;
  return d;
}

inline double operator_norm(const LinearMap& m) {
  if (m.rows() == 0 || m.cols() == 0) return 0.0;
  Eigen::BDCSVD<Eigen::MatrixXd> svd(m.orthonormal());
  return svd.singularValues()[0];
}

// a o b as a map from b's domain to a's codomain.
inline LinearMap compose(const LinearMap& a, const LinearMap& b) {
  LinearMap out;
  out.M = a.M * b.M;
  out.w_rows = a.w_rows;
  out.w_cols = b.w_cols;
  out.row_blocks = a.row_blocks;
  out.col_blocks = b.col_blocks;
  return out;
}

// ---------------------------------------------------------------------------------------------
// Complex identity and cohomology

struct ComplexCheck {
  double norm = 0;           // || DF_sw o D ||
  double residual_norm = 0;  // L2 residual at c
  bool on_shell = false;     // residual <= 1e-10; the identity is only claimed there
};

inline ComplexCheck complex_check(const Configuration& c, const Sources& s) {
  ComplexCheck out;
  out.residual_norm = norm_l2(c.geom, residual(c, s));
  out.on_shell = out.residual_norm <= 1e-10;
  out.norm = operator_norm(compose(linearize_fsw(c, s), lin_gauge(c)));
  return out;
}

struct CohomologyReport {
  int h0 = 0, h1 = 0, h2 = 0;
  int index = 0;             // dim ker frak D - dim coker frak D
  int index_from_shape = 0;  // cols - rows of frak D; must equal index
  int h2_direct = 0;         // coker DF_sw alone; equals h2 on shell
  double margin_gauge = 0, margin_elliptic = 0, margin_fsw = 0;
  bool ill_conditioned = false;
  std::vector<std::string> warnings;
  Eigen::MatrixXd H1;  // tangent basis, l2-orthonormal
  Eigen::MatrixXd H2;  // equation basis (left kernel of DF_sw), orthonormal
};

inline CohomologyReport cohomology(const Configuration& c, const Sources& s) {
  CohomologyReport r;
  const auto D = lin_gauge(c);
  const auto F = linearize_fsw(c, s);
  const auto E = vstack(F, lin_gauge_adjoint(c));
  const auto sd = analyze(D), se = analyze(E), sf = analyze(F);
  r.h0 = static_cast<int>(sd.kernel_dim());
  r.h1 = static_cast<int>(se.kernel_dim());
  r.h2 = static_cast<int>(se.cokernel_dim()) - r.h0;
  r.h2_direct = static_cast<int>(sf.cokernel_dim());
  r.index = static_cast<int>(se.kernel_dim()) - static_cast<int>(se.cokernel_dim());
  r.index_from_shape = static_cast<int>(E.cols()) - static_cast<int>(E.rows());
  r.margin_gauge = sd.margin;
  r.margin_elliptic = se.margin;
  r.margin_fsw = sf.margin;
  r.ill_conditioned = sd.ill_conditioned || se.ill_conditioned || sf.ill_conditioned;
  if (r.ill_conditioned) r.warnings.push_back("rank margin below 10x");
  if (r.h2 != r.h2_direct) r.warnings.push_back("coker frak D - h0 differs from coker DF_sw (off shell?)");
  r.H1 = se.kernel();
  r.H2 = sf.cokernel();
  return r;
}

// ker frak D as ker DF_sw intersected with ker D^*, computed without frak D.
inline int kernel_dim_by_intersection(const Configuration& c, const Sources& s) {
  const auto F = analyze(linearize_fsw(c, s));
  const Eigen::MatrixXd N = F.kernel();
  auto Ds = lin_gauge_adjoint(c);
  if (Ds.rows() == 0) return static_cast<int>(N.cols());
  LinearMap restricted;
  restricted.M = Ds.M * N;
  restricted.w_rows = Ds.w_rows;
  restricted.w_cols = Eigen::VectorXd::Ones(N.cols());  // N is orthonormal
  return static_cast<int>(analyze(restricted).kernel_dim());
}

// ---------------------------------------------------------------------------------------------
// Kuranishi chart around an on-shell c.
//
// Phi(xi) = c + E xi + y(xi) with y in ker(frak D)^perp solving (1 - Pi) F(Phi) = 0 and
// D^*_c (E xi + y) = 0, by the chord iteration y <- y - frak D_c^+ [(1 - Pi) F; D^*_c y].
// kappa(xi) = Pi F(Phi(xi)) in coordinates of the H^2 basis.

struct ChartPoint {
  Eigen::VectorXd xi;
  Eigen::VectorXd kappa;
  Configuration config;
  int iterations = 0;
  double defect = 0;  // |(1 - Pi) F| at exit
  bool converged = false;
};

class KuranishiChart {
 public:
  KuranishiChart(const Configuration& c, const Sources& s, double tol = 1e-12, int max_iter = 100)
      : c_(c), s_(s), L_(c.geom, c.group()), tol_(tol), max_iter_(max_iter) {
    const auto F = linearize_fsw(c, s);
    const auto Ds = lin_gauge_adjoint(c);
    svd_ = analyze(vstack(F, Ds));
    H1_ = svd_.kernel();
    Ds_ = Ds.M;
    // On shell coker frak D = ker DF_sw^* (+) ker D sits block-diagonally, so the equation-space
    // parts of the cokernel vectors span H^2.
    const Eigen::Index k = svd_.cokernel_dim(), ne = static_cast<Eigen::Index>(L_.n_eq());
    if (k > 0) {
      const Eigen::MatrixXd CE = svd_.U.rightCols(k).topRows(ne);
      Eigen::BDCSVD<Eigen::MatrixXd> sv(CE, Eigen::ComputeThinU);
      Eigen::Index m = 0;
      while (m < sv.singularValues().size() && sv.singularValues()[m] > 0.5) ++m;
      H2_ = svd_.sqrt_w_rows.head(ne).cwiseInverse().asDiagonal() * sv.matrixU().leftCols(m);
    } else {
      H2_.resize(ne, 0);
    }
  }

  const DenseSvd& elliptic_svd() const { return svd_; }

  int dim_h1() const { return static_cast<int>(H1_.cols()); }
  int dim_h2() const { return static_cast<int>(H2_.cols()); }
  const Eigen::MatrixXd& h1_basis() const { return H1_; }
  const Eigen::MatrixXd& h2_basis() const { return H2_; }
  const Configuration& base() const { return c_; }
  const Sources& sources() const { return s_; }
  const Layout& layout() const { return L_; }

  // Orthogonal projection onto H^2 in equation space.
  Eigen::VectorXd project_h2(const Eigen::VectorXd& e) const {
    if (H2_.cols() == 0) return Eigen::VectorXd::Zero(e.size());
    return H2_ * (H2_.transpose() * (L_.w_eq().asDiagonal() * e));
  }
  Eigen::VectorXd h2_coords(const Eigen::VectorXd& e) const {
    return H2_.transpose() * (L_.w_eq().asDiagonal() * e);
  }

  ChartPoint solve(const Eigen::VectorXd& xi, const Eigen::VectorXd* y0 = nullptr) const {
    ChartPoint p;
    p.xi = xi;
    const Eigen::VectorXd base = H1_ * xi;
    Eigen::VectorXd y = y0 ? *y0 : Eigen::VectorXd::Zero(base.size());
    for (p.iterations = 0; p.iterations <= max_iter_; ++p.iterations) {
      p.config = displace(c_, L_.unpack_tangent(base + y));
      const Eigen::VectorXd Fv = L_.pack(residual(p.config, s_));
      const Eigen::VectorXd defect = Fv - project_h2(Fv);
      const Eigen::VectorXd slice = Ds_ * y;  // D^* E xi = 0
      p.defect = std::sqrt(L_.inner_eq(defect, defect) + (slice.array().square() * L_.w_gauge().array()).sum());
      if (!std::isfinite(p.defect)) break;
      if (p.defect <= tol_) {
        p.converged = true;
        p.kappa = h2_coords(Fv);
        last_y_ = y;
        return p;
      }
      Eigen::VectorXd rhs(defect.size() + slice.size());
      rhs << defect, slice;
      y -= svd_.solve(rhs);
    }
    p.kappa = h2_coords(L_.pack(residual(p.config, s_)));
    return p;
  }

  // Chart correction y at the last converged solve (for warm starts).
  const Eigen::VectorXd& last_correction() const { return last_y_; }

  // Replace the H^1 basis by another weighted-orthonormal basis of the same space (e.g. one whose
  // first columns span a chosen plane).
  void set_h1_basis(const Eigen::MatrixXd& B) {
    if (B.rows() != H1_.rows() || B.cols() != H1_.cols()) throw ValidationError("H1 basis has the wrong shape");
    const Eigen::MatrixXd overlap = H1_.transpose() * L_.w_tangent().asDiagonal() * B;
    const Eigen::MatrixXd gram = B.transpose() * L_.w_tangent().asDiagonal() * B;
    const auto I = Eigen::MatrixXd::Identity(B.cols(), B.cols());
    if ((gram - I).cwiseAbs().maxCoeff() > 1e-9 || (overlap.transpose() * overlap - I).cwiseAbs().maxCoeff() > 1e-9)
      throw ValidationError("replacement H1 basis is not an orthonormal basis of H1");
    H1_ = B;
  }

  // Columns d Phi / d xi_k at xi: z solves (1 - Pi) DF_Phi (E e_k + z) = 0, D^*_c z = 0, z in H1^perp,
  // found by iterative refinement with frak D_c^+.
  Eigen::MatrixXd tangent(const ChartPoint& p) const {
    std::vector<int> all(H1_.cols());
    for (int k = 0; k < static_cast<int>(all.size()); ++k) all[k] = k;
    return tangent(p, all);
  }
  Eigen::MatrixXd tangent(const ChartPoint& p, const std::vector<int>& idx) const {
    const Eigen::Index n = static_cast<Eigen::Index>(idx.size());
    Eigen::MatrixXd T(H1_.rows(), n);
    for (Eigen::Index k = 0; k < n; ++k) {
      Eigen::VectorXd z = Eigen::VectorXd::Zero(H1_.rows());
      const Eigen::VectorXd ek = H1_.col(idx[k]);
      for (int it = 0; it < max_iter_; ++it) {
        const Eigen::VectorXd Fv = L_.pack(fsw_lin(p.config, s_, L_.unpack_tangent(ek + z)));
        const Eigen::VectorXd defect = Fv - project_h2(Fv);
        const Eigen::VectorXd slice = Ds_ * z;
        const double d = std::sqrt(L_.inner_eq(defect, defect) + (slice.array().square() * L_.w_gauge().array()).sum());
        if (d <= 1e-14 * (1.0 + std::sqrt(L_.inner_tangent(ek + z, ek + z)))) break;
        Eigen::VectorXd rhs(defect.size() + slice.size());
        rhs << defect, slice;
        z -= svd_.solve(rhs);
      }
      T.col(k) = ek + z;
    }
    return T;
  }

 private:
  Configuration c_;
  Sources s_;
  Layout L_;
  double tol_;
  int max_iter_;
  DenseSvd svd_;
  Eigen::MatrixXd H1_, H2_, Ds_;
  mutable Eigen::VectorXd last_y_;
};

struct KuranishiReport {
  int h0 = 0, h1 = 0, h2 = 0;
  bool regular = false;  // h2 = 0
  bool smooth = false;   // regular and trivial infinitesimal stabilizer
  std::vector<ChartPoint> samples;
  int failures = 0;
  double max_kappa = 0;
};

// Samples uniformly in the H^1 ball of the given radius (per-sample seeds derived from seed).
inline KuranishiReport kuranishi(const Configuration& c, const Sources& s, double radius, double tol, int n_samples,
                                 std::uint64_t seed) {
  KuranishiReport rep;
  KuranishiChart chart(c, s, tol);
  rep.h0 = static_cast<int>(analyze(lin_gauge(c)).kernel_dim());
  rep.h1 = chart.dim_h1();
  rep.h2 = static_cast<int>(chart.elliptic_svd().cokernel_dim()) - rep.h0;
  rep.regular = rep.h2 == 0;
  rep.smooth = rep.regular && rep.h0 == 0;
  const int n = chart.dim_h1();
  for (int k = 0; k < n_samples; ++k) {
    std::mt19937_64 g(seed + 7919u * static_cast<std::uint64_t>(k));
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> ud;
    Eigen::VectorXd xi(n);
    for (int a = 0; a < n; ++a) xi[a] = nd(g);
    if (n > 0) xi *= radius * std::pow(ud(g), 1.0 / n) / std::max(xi.norm(), 1e-300);
    auto p = chart.solve(xi);
    if (!p.converged) ++rep.failures;
    if (p.kappa.size()) rep.max_kappa = std::max(rep.max_kappa, p.kappa.cwiseAbs().maxCoeff());
    rep.samples.push_back(std::move(p));
  }
  return rep;
}

}  // namespace gswlab

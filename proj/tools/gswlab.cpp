// gswlab <subcommand> --config <path> [--strict] [--threads N]
//
// Exit codes: 0 success; 2 validation failure (nothing written); 3 numerical failure, or a
// warning under --strict (outputs so far plus manifest.json written).

#include <openssl/evp.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "gswlab/fixtures.hpp"
#include "gswlab/io.hpp"
#include "gswlab/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gswlab;

namespace {

constexpr int kExitOk = 0, kExitValidation = 2, kExitNumerical = 3;

std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int n = 0;
  if (EVP_Digest(data.data(), data.size(), md, &n, EVP_sha256(), nullptr) != 1) throw std::runtime_error("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int k = 0; k < n; ++k) {
    out += hex[md[k] >> 4];
    out += hex[md[k] & 15];
  }
  return out;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// JSON object reader that remembers which keys were used; finish() rejects the rest.
class Obj {
 public:
  Obj(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ValidationError(where_ + " must be a JSON object");
  }

  bool has(const std::string& k) const { return j_.contains(k); }

  template <class T>
  T get(const std::string& k, const T& def) {
    used_.insert(k);
    if (!j_.contains(k)) return def;
    return convert<T>(k);
  }
  template <class T>
  T require(const std::string& k) {
    used_.insert(k);
    if (!j_.contains(k)) throw ValidationError(where_ + "." + k + " is required");
    return convert<T>(k);
  }
  double positive(const std::string& k, double def) {
    const double v = get<double>(k, def);
    if (!(v > 0) || !std::isfinite(v)) throw ValidationError(where_ + "." + k + " must be positive");
    return v;
  }
  double nonneg(const std::string& k, double def) {
    const double v = get<double>(k, def);
    if (!(v >= 0) || !std::isfinite(v)) throw ValidationError(where_ + "." + k + " must be non-negative");
    return v;
  }
  int count(const std::string& k, int def, int lo) {
    const int v = get<int>(k, def);
    if (v < lo) throw ValidationError(where_ + "." + k + " must be at least " + std::to_string(lo));
    return v;
  }
  Obj child(const std::string& k) {
    used_.insert(k);
    static const json empty = json::object();
    return Obj(j_.contains(k) ? j_.at(k) : empty, where_ + "." + k);
  }
  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!used_.count(k)) throw ValidationError("unknown key " + where_ + "." + k);
  }

 private:
  template <class T>
  T convert(const std::string& k) const {
    const json& v = j_.at(k);
    if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) throw ValidationError(where_ + "." + k + " must be a number");
    } else if constexpr (std::is_same_v<T, int> || std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_integer()) throw ValidationError(where_ + "." + k + " must be an integer");
      if constexpr (std::is_same_v<T, std::uint64_t>)
        if (!v.is_number_unsigned()) throw ValidationError(where_ + "." + k + " must be non-negative");
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ValidationError(where_ + "." + k + " must be a boolean");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ValidationError(where_ + "." + k + " must be a string");
    }
    try {
      return v.get<T>();
    } catch (const json::exception&) {
      throw ValidationError(where_ + "." + k + " has the wrong type");
    }
  }

  const json& j_;
  std::string where_;
  std::set<std::string> used_;
};

struct Common {
  std::string experiment;
  fs::path config_dir;
  std::optional<LatticeGeom> geom;
  TargetKind kind = TargetKind::FlatH;
  Group group = Group::U1;
  Stencil stencil = Stencil::Centered;
  std::uint64_t seed = 0;
  std::string output_dir = "gswlab_out";

  const LatticeGeom& geometry() const {
    if (!geom) throw ValidationError(experiment + " needs a geometry block");
    return *geom;
  }
};

struct Run {
  std::vector<std::pair<std::string, std::string>> outputs;  // name, bytes; committed at the end
  std::vector<std::string> warnings;
  std::optional<std::string> numerical_failure;

  void emit(std::string name, std::string bytes) { outputs.emplace_back(std::move(name), std::move(bytes)); }
  void warn(const std::vector<std::string>& w) { warnings.insert(warnings.end(), w.begin(), w.end()); }
};

Vec4 parse_vec4(const json& v, const std::string& where) {
  if (!v.is_array() || v.size() != 4) throw ValidationError(where + " must be an array of 4 numbers");
  Vec4 out{};
  for (int a = 0; a < 4; ++a) {
    if (!v[a].is_number()) throw ValidationError(where + " must be an array of 4 numbers");
    out[a] = v[a].get<double>();
  }
  return out;
}

LatticeGeom parse_geometry(Obj g) {
  const json dims_j = g.require<json>("dims");
  if (!dims_j.is_array() || dims_j.size() != 4) throw ValidationError("geometry.dims must be 4 positive integers");
  std::array<int, 4> dims{};
  for (int a = 0; a < 4; ++a) {
    if (!dims_j[a].is_number_integer() || dims_j[a].get<long long>() < 1 || dims_j[a].get<long long>() > 4096)
      throw ValidationError("geometry.dims must be 4 positive integers");
    dims[a] = dims_j[a].get<int>();
  }
  const double h = g.require<double>("h");
  if (!(h > 0) || !std::isfinite(h)) throw ValidationError("geometry.h must be positive");
  const Topology topo = io::parse_topology(g.get<std::string>("topology", "Box"));
  Vec4 origin{0, 0, 0, 0};
  if (g.has("origin")) {
    origin = parse_vec4(g.require<json>("origin"), "geometry.origin");
  } else if (topo == Topology::Box) {
    for (int a = 0; a < 4; ++a) origin[a] = -0.5 * (dims[a] - 1) * h;  // centred on 0
  }
  g.finish();
  return LatticeGeom(dims, h, topo, origin);
}

// ---------------------------------------------------------------------------------------------
// base configuration for the lattice experiments

struct Base {
  Configuration c;
  Sources s;
  std::string label;
};

struct BaseSpec {
  std::string type = "manufactured";
  std::string snapshot, sources;
  RandomConfigOptions rnd;
};

BaseSpec parse_base(Obj& p) {
  BaseSpec b;
  b.type = p.get<std::string>("base", "manufactured");
  if (b.type != "manufactured" && b.type != "reducible" && b.type != "snapshot")
    throw ValidationError("params.base must be manufactured, reducible or snapshot");
  b.snapshot = p.get<std::string>("snapshot", "");
  b.sources = p.get<std::string>("sources", "");
  if (b.type == "snapshot" && b.snapshot.empty()) throw ValidationError("params.snapshot is required for base = snapshot");
  if (b.type != "snapshot" && (!b.snapshot.empty() || !b.sources.empty()))
    throw ValidationError("params.snapshot and params.sources apply to base = snapshot only");
  b.rnd.spinor_offset = p.get<double>("spinor_offset", b.rnd.spinor_offset);
  b.rnd.spinor_noise = p.nonneg("spinor_noise", b.rnd.spinor_noise);
  b.rnd.link_noise = p.nonneg("link_noise", b.rnd.link_noise);
  return b;
}

Base build_base(const Common& cm, const BaseSpec& b, std::mt19937_64& rng) {
  if (b.type == "snapshot") {
    const fs::path p = cm.config_dir / b.snapshot;
    const std::string bytes = read_file(p);
    Configuration c = p.extension() == ".json" ? io::read_snapshot_json(bytes) : io::read_snapshot_binary(bytes);
    if (cm.geom && (cm.geom->dims != c.geom.dims || cm.geom->h != c.geom.h || cm.geom->topology != c.geom.topology))
      throw ValidationError("snapshot geometry differs from the config geometry");
    if (c.group() != cm.group || c.kind() != cm.kind || c.stencil != cm.stencil)
      throw ValidationError("snapshot group/target/stencil differ from the config");
    Sources s = b.sources.empty() ? manufacture(c) : io::read_sources_json(read_file(cm.config_dir / b.sources), c);
    return {std::move(c), std::move(s), "snapshot"};
  }
  const auto& g = cm.geometry();
  if (b.type == "reducible") {
    if (cm.group != Group::U1) throw ValidationError("the reducible base point needs group U1");
    return {reducible_configuration(g, cm.kind, cm.stencil), Sources{}, "reducible"};
  }
  Configuration c = random_configuration(g, cm.group, cm.kind, cm.stencil, rng, b.rnd);
  Sources s = manufacture(c);
  return {std::move(c), std::move(s), "manufactured"};
}

// Lattice sizes above this go through dense SVD; refuse rather than exhaust memory.
void require_dense_size(const Configuration& c, std::size_t limit) {
  const Layout L(c.geom, c.group());
  if (L.n_tangent() > limit || L.n_eq() + L.n_gauge() > limit)
    throw ValidationError("lattice too large for dense linear algebra (" + std::to_string(L.n_tangent()) +
                          " unknowns; limit " + std::to_string(limit) + ")");
}

// ---------------------------------------------------------------------------------------------
// experiments

void target_check(const Common& cm, Obj p, Run& run) {
  const int samples = p.count("samples", 1000, 1);
  const double fd = p.positive("fd_step", 1e-4);
  p.finish();
  const auto m = target_margins(cm.seed, samples, fd);
  run.emit("target_check.json", io::to_json(m).dump(2) + "\n");
  if (!m.pass()) run.numerical_failure = "target invariant margins above tolerance";
}

void solve(const Common& cm, Obj p, Run& run) {
  const auto b = parse_base(p);
  const double pert = p.nonneg("perturbation", 1e-3);
  NewtonOptions opt;
  opt.tol = p.positive("tol", opt.tol);
  opt.max_iter = p.count("max_iter", opt.max_iter, 1);
  opt.linear_rtol = p.positive("linear_rtol", opt.linear_rtol);
  opt.linear_max_iter = p.count("linear_max_iter", opt.linear_max_iter, 0);
  opt.throw_on_failure = false;
  const auto fmt = p.get<std::string>("snapshot_format", "binary");
  if (fmt != "binary" && fmt != "json") throw ValidationError("params.snapshot_format must be binary or json");
  p.finish();

  std::mt19937_64 rng(cm.seed);
  const auto base = build_base(cm, b, rng);
  const Configuration init = displace(base.c, random_tangent(base.c, rng), pert);
  const double r0 = norm_l2(init.geom, residual(init, base.s));
  const auto res = solve_newton(init, base.s, opt);
  run.emit("newton_trace.csv", io::newton_trace_csv(res.trace));
  run.emit("sources.json", io::sources_json(base.s));
  if (fmt == "binary")
    run.emit("solution.bin", io::snapshot_binary(res.config));
  else
    run.emit("solution.json", io::snapshot_json(res.config));
  const double r1 = norm_l2(res.config.geom, residual(res.config, base.s));
  json summary = {{"base", base.label},
                  {"perturbation", pert},
                  {"initial_residual", r0},
                  {"final_residual", r1},
                  {"iterations", res.trace.empty() ? 0 : res.trace.back().iter},
                  {"converged", res.converged},
                  {"tol", opt.tol}};
  run.emit("solve.json", summary.dump(2) + "\n");
  if (!res.converged) run.numerical_failure = "Newton did not converge to tol";
}

void deform(const Common& cm, Obj p, Run& run) {
  const auto b = parse_base(p);
  const bool mats = p.get<bool>("export_matrices", false);
  const auto limit = static_cast<std::size_t>(p.count("dense_limit", 6000, 1));
  p.finish();
  std::mt19937_64 rng(cm.seed);
  const auto base = build_base(cm, b, rng);
  require_dense_size(base.c, limit);
  const auto cc = complex_check(base.c, base.s);
  const auto rep = cohomology(base.c, base.s);
  json out = {{"base", base.label},
              {"complex_check", io::to_json(cc)},
              {"cohomology", io::to_json(rep)},
              {"index_identity", rep.index == -(rep.h0 - rep.h1 + rep.h2)},
              {"index_matches_shape", rep.index == rep.index_from_shape}};
  run.emit("cohomology.json", out.dump(2) + "\n");
  run.warn(rep.warnings);
  if (!cc.on_shell) run.warnings.push_back("base configuration is off shell; the complex identity is not claimed");
  if (rep.index != rep.index_from_shape) run.numerical_failure = "index bookkeeping mismatch";
  if (mats) {
    run.emit("lin_gauge.txt", io::triplets(lin_gauge(base.c).M));
    run.emit("linearize_fsw.txt", io::triplets(linearize_fsw(base.c, base.s).M));
    run.emit("elliptic_op.txt", io::triplets(elliptic_op(base.c, base.s).M));
  }
}

void kuranishi_exp(const Common& cm, Obj p, Run& run) {
  const auto b = parse_base(p);
  const double radius = p.positive("radius", 0.05);
  const double tol = p.positive("tol", 1e-12);
  const int samples = p.count("samples", 20, 0);
  const double fd = p.positive("fd_step", 1e-4);
  const auto limit = static_cast<std::size_t>(p.count("dense_limit", 6000, 1));
  p.finish();
  std::mt19937_64 rng(cm.seed);
  const auto base = build_base(cm, b, rng);
  require_dense_size(base.c, limit);

  // kappa(0) and the central-difference slope of kappa at 0 along each H^1 direction
  const KuranishiChart K(base.c, base.s, tol);
  const int n = K.dim_h1();
  const auto k0 = K.solve(Eigen::VectorXd::Zero(n));
  double slope = 0;
  for (int a = 0; a < n; ++a) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
    e[a] = fd;
    const auto kp = K.solve(e), km = K.solve(-e);
    if (!kp.converged || !km.converged) throw NumericalError("chart solve at the fd step did not converge");
    if (kp.kappa.size()) slope = std::max(slope, ((kp.kappa - km.kappa) / (2 * fd)).cwiseAbs().maxCoeff());
  }
  const auto rep = kuranishi(base.c, base.s, radius, tol, samples, cm.seed);
  json out = io::to_json(rep);
  out["base"] = base.label;
  out["radius"] = radius;
  out["origin"] = {{"kappa_norm", k0.kappa.size() ? k0.kappa.norm() : 0.0}, {"converged", k0.converged}, {"fd_step", fd},
                   {"max_slope", slope}};
  run.emit("kuranishi.json", out.dump(2) + "\n");
  if (rep.failures > 0) run.warnings.push_back(std::to_string(rep.failures) + " chart samples did not converge");
  if (!k0.converged) run.numerical_failure = "chart solve at the origin did not converge";
}

// Gram-Schmidt under the tangent inner product.
std::pair<Eigen::VectorXd, Eigen::VectorXd> orthonormal_pair(const Layout& L, Eigen::VectorXd v, Eigen::VectorXd w) {
  v /= std::sqrt(L.inner_tangent(v, v));
  w -= L.inner_tangent(v, w) * v;
  w /= std::sqrt(L.inner_tangent(w, w));
  return {v, w};
}

Eigen::MatrixXd random_rotation(int n, std::mt19937_64& g) {
  std::normal_distribution<double> nd;
  Eigen::MatrixXd A(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) A(i, j) = nd(g);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(A);
  return qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
}

void curvature(const Common& cm, Obj p, Run& run) {
  const auto fixture = p.get<std::string>("fixture", "lattice");
  if (fixture != "lattice" && fixture != "c2_u1") throw ValidationError("params.fixture must be lattice or c2_u1");
  const bool fx = fixture == "c2_u1";
  std::optional<BaseSpec> b;
  if (!fx) b = parse_base(p);
  const int samples = p.count("samples", 3, 1);
  const bool oracle = p.get<bool>("oracle", true);
  const double eps = p.positive("oracle_eps", fx ? 1e-2 : 2e-2);
  const double tol = p.positive("tolerance", fx ? 1e-6 : 1e-3);
  const auto limit = static_cast<std::size_t>(p.count("dense_limit", 6000, 1));
  p.finish();
  if (fx && cm.geom) throw ValidationError("the c2_u1 fixture carries its own geometry; drop the geometry block");

  std::mt19937_64 rng(cm.seed);
  std::vector<io::CurvatureRow> rows;
  double worst = 0;
  const auto finish_row = [&](int k, CurvatureSample s, double K) {
    if (oracle) {
      s.oracle_K = K;
      s.rel_err = std::abs(s.K_M - K) / std::max(std::abs(K), 1e-300);
      worst = std::max(worst, s.rel_err);
    }
    run.warn(s.warnings);
    rows.push_back({k, s});
  };
  // rows are emitted even if a later oracle throws
  struct Flush {
    Run& run;
    std::vector<io::CurvatureRow>& rows;
    ~Flush() { run.emit("curvature.csv", io::curvature_csv(rows)); }
  };
  {
    Flush flush{run, rows};
    if (fx) {
      for (int k = 0; k < samples; ++k) {
        std::normal_distribution<double> nd(0.0, 0.4);
        const double a = nd(rng), bq = nd(rng), c = nd(rng), d = nd(rng);
        const auto c2 = c2_u1_fixture(Quaternion(0.7) + Quaternion(a, bq, c, d));
        const Layout L(c2.geom, c2.group());
        const auto [v, w] = orthonormal_pair(L, L.pack(horizontal_project(c2, random_tangent(c2, rng))),
                                             L.pack(horizontal_project(c2, random_tangent(c2, rng))));
        auto s = oneill_sectional(c2, L.unpack_tangent(v), L.unpack_tangent(w));
        s.K_M = s.K_B;  // no equations on the fixture: M = B
        s.K_M_opposite = s.K_B;
        double K = 0;
        if (oracle) {
          Eigen::MatrixXd first(L.n_tangent(), 2);
          first << v, w;
          K = fd_oracle_curvature(slice_chart(c2, horizontal_basis(c2, first)), 0, 1, eps);
        }
        finish_row(k, s, K);
      }
    } else {
      const auto base = build_base(cm, *b, rng);
      if (base.c.group() != Group::U1) throw ValidationError("lattice curvature needs group U1");
      require_dense_size(base.c, limit);
      KuranishiChart K(base.c, base.s, 1e-13);
      if (K.dim_h2() != 0) throw NumericalError("h2 > 0 at the base point; M is not a manifold there");
      if (K.dim_h1() < 2) throw NumericalError("h1 < 2; no tangent plane to sample");
      const Eigen::MatrixXd H1 = K.h1_basis();
      const ModuliGeometry mg(base.c, base.s);
      const Layout& L = K.layout();
      for (int k = 0; k < samples; ++k) {
        K.set_h1_basis(H1 * random_rotation(K.dim_h1(), rng));
        const auto s = mg.sample(L.unpack_tangent(K.h1_basis().col(0)), L.unpack_tangent(K.h1_basis().col(1)));
        finish_row(k, s, oracle ? fd_oracle_curvature(moduli_chart(K), 0, 1, eps) : 0.0);
      }
    }
  }
  json summary = {{"fixture", fixture}, {"samples", samples}, {"oracle", oracle}, {"oracle_eps", eps}, {"tolerance", tol}};
  if (oracle) summary["max_rel_err"] = worst;
  summary["pass"] = !oracle || worst <= tol;
  run.emit("curvature.json", summary.dump(2) + "\n");
  if (oracle && worst > tol) run.warnings.push_back("curvature pipeline and oracle differ beyond tolerance");
}

void frequency(const Common& cm, Obj p, Run& run) {
  const auto& g = cm.geometry();
  const auto name = p.get<std::string>("field", "z1");
  std::optional<FueterSpec> spec;
  for (const auto& f : fueter_corpus())
    if (f.name() == name) spec = f;
  if (!spec) throw ValidationError("unknown field '" + name + "'");
  const Vec4 fc = p.has("field_center") ? parse_vec4(p.require<json>("field_center"), "params.field_center") : Vec4{};
  std::vector<Vec4> centers{{0, 0, 0, 0}};
  if (p.has("centers")) {
    const auto cj = p.require<json>("centers");
    if (!cj.is_array() || cj.empty()) throw ValidationError("params.centers must be a non-empty array");
    centers.clear();
    for (const auto& c : cj) centers.push_back(parse_vec4(c, "params.centers[]"));
  }
  const double eps0 = p.positive("eps0", 1e-2);
  const double r_min = p.positive("r_min", 8 * g.h);
  const double r_max = p.positive("r_max", 0.5 * g.delta0());
  const double spacing = p.positive("spacing", 2 * g.h);
  ProfileOptions opt;
  opt.resolution = p.count("resolution", 0, 0);
  opt.deriv_step = p.nonneg("deriv_step", 0);
  const double c0 = p.nonneg("c0", 0);
  const double c_ball = p.positive("c_ball", 1);
  const double slack = p.nonneg("slack", 0.02);
  const int probe = p.count("probe_radii", 6, 1);
  p.finish();
  const double delta = opt.deriv_step > 0 ? opt.deriv_step : 0.5 * g.h;
  std::vector<std::vector<double>> grids;
  for (const auto& x : centers) {
    const auto grid = radial_grid(r_min, std::min(r_max, max_radius(g, x) - 2 * delta), spacing);
    if (grid.size() < 2) throw ValidationError("fewer than 2 radii fit between r_min and the domain edge");
    grids.push_back(grid);
  }

  const Configuration c{g, cm.group == Group::U1 ? ConnectionField::zero_u1(g) : ConnectionField::trivial(),
                        fueter_library(g, *spec, fc, cm.kind), cm.stencil};
  const auto d = field_densities(c);
  json per = json::array();
  bool all_pass = true;
  for (std::size_t k = 0; k < centers.size(); ++k) {
    const auto P = radial_profile(g, d, centers[k], grids[k], opt);
    const auto ode = ode_checks(P);
    const auto mono = monotonicity_scan(P, c0, c_ball, slack);
    const auto probe_rep = regularity_probe(c, d.energy, centers[k], eps0, probe);
    run.emit("profile_" + std::to_string(k) + ".csv", io::profile_csv(P, ode));
    double n_lo = std::numeric_limits<double>::infinity(), n_hi = -n_lo;
    for (std::size_t i = 0; i < P.size(); ++i)
      if (P.N_defined[i]) n_lo = std::min(n_lo, P.N[i]), n_hi = std::max(n_hi, P.N[i]);
    json rows = json::array();
    for (const auto& r : probe_rep.rows) rows.push_back({{"r", r.r}, {"F", r.F}, {"sup_energy", r.sup_energy}, {"c_hat", r.c_hat}});
    per.push_back({{"center", centers[k]},
                   {"profile", "profile_" + std::to_string(k) + ".csv"},
                   {"N_min", std::isfinite(n_lo) ? json(n_lo) : json(nullptr)},
                   {"N_max", std::isfinite(n_hi) ? json(n_hi) : json(nullptr)},
                   {"max_f_prime_dev", ode.max_f_prime_dev},
                   {"max_kappa_prime_dev", ode.max_kappa_prime_dev},
                   {"monotonicity", io::to_json(mono)},
                   {"critical_radius", {{"r", probe_rep.rc.r}, {"flagged", probe_rep.rc.flagged}, {"r_max", probe_rep.rc.r_max}}},
                   {"rho", probe_rep.rho},
                   {"probe", rows}});
    if (!mono.pass()) {
      all_pass = false;
      run.warnings.push_back("monotonicity scan failed at center " + std::to_string(k));
    }
  }
  json out = {{"field", name}, {"field_center", fc}, {"eps0", eps0}, {"c0", c0}, {"c_ball", c_ball}, {"slack", slack},
              {"monotonicity_pass", all_pass}, {"centers", per}};
  run.emit("frequency.json", out.dump(2) + "\n");
}

void sequence(const Common& cm, Obj p, Run& run) {
  SequenceSpec s;
  s.geom = cm.geometry();
  const auto family = p.get<std::string>("family", "dilation");
  if (family != "dilation" && family != "vanishing") throw ValidationError("params.family must be dilation or vanishing");
  if (p.has("center")) s.center = parse_vec4(p.require<json>("center"), "params.center");
  s.lambda = p.get<std::vector<double>>("lambda", {2, 4, 8, 16, 32});
  s.amplitude = p.get<double>("amplitude", s.amplitude);
  s.normalization = p.nonneg("normalization", s.normalization);
  s.c0 = p.positive("c0", s.c0);
  s.c1 = p.positive("c1", s.c1);
  s.tail = p.count("tail", s.tail, 1);
  s.center_radius = p.nonneg("center_radius", s.center_radius);
  s.decay_factor = p.positive("decay_factor", s.decay_factor);
  const int count = p.count("count", 6, 3);
  p.finish();
  SpinorField z1;
  if (family == "vanishing") {
    s.kind = SequenceKind::Custom;
    s.count = count;
    s.lambda.clear();
    z1 = fueter_library(s.geom, FueterSpec::z(1), s.center, TargetKind::FlatH);
    s.custom = [&](int n) {
      auto f = z1;
      for (auto& q : f.q) q *= std::ldexp(1.0, -n);
      return f;
    };
  }
  const auto rep = sequence_harness(s);
  run.emit("sequence.csv", io::sequence_csv(rep));
  json out = io::to_json(rep);
  out["family"] = family;
  out["decay_factor_required"] = s.decay_factor;
  run.emit("sequence.json", out.dump(2) + "\n");
  run.warn(rep.warnings);
}

using Experiment = void (*)(const Common&, Obj, Run&);

const std::map<std::string, Experiment>& experiments() {
  static const std::map<std::string, Experiment> m{{"target-check", target_check}, {"solve", solve},
                                                   {"deform", deform},             {"kuranishi", kuranishi_exp},
                                                   {"curvature", curvature},       {"frequency", frequency},
                                                   {"sequence", sequence}};
  return m;
}

std::string compiler_id() {
#if defined(__clang__)
  return std::string("clang ") + __clang_version__;
#elif defined(__GNUC__)
  return std::string("gcc ") + __VERSION__;
#else
  return "unknown";
#endif
}

json versions() {
  return {{"gswlab", kVersion},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." + std::to_string(NLOHMANN_JSON_VERSION_MINOR) +
                                "." + std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
          {"cli11", CLI11_VERSION},
          {"openssl", OpenSSL_version(OPENSSL_VERSION)},
          {"compiler", compiler_id()},
          {"cplusplus", static_cast<long>(__cplusplus)}};
}

int run_subcommand(const std::string& sub, const std::string& config_path, bool strict, int threads) {
  const auto t0 = std::chrono::steady_clock::now();
  Common cm;
  Run run;
  std::string raw, hash;
  int code = kExitOk;
  std::string message;

  // Validation: everything up to the first output is checked here; nothing is written on failure.
  json cfg;
  try {
    if (threads < 1) throw ValidationError("--threads must be at least 1");
    raw = read_file(config_path);
    hash = sha256_hex(raw);
    try {
      cfg = json::parse(raw);
    } catch (const json::exception& e) {
      throw ValidationError(std::string("config is not valid JSON: ") + e.what());
    }
    Obj top(cfg, "config");
    cm.experiment = top.get<std::string>("experiment", sub);
    if (cm.experiment != sub) throw ValidationError("config experiment '" + cm.experiment + "' does not match subcommand " + sub);
    cm.config_dir = fs::path(config_path).parent_path();
    if (top.has("geometry")) cm.geom = parse_geometry(top.child("geometry"));
    cm.kind = io::parse_kind(top.get<std::string>("target", "FlatH"));
    cm.group = io::parse_group(top.get<std::string>("group", "U1"));
    cm.stencil = io::parse_stencil(top.get<std::string>("stencil", "Centered"));
    cm.seed = top.get<std::uint64_t>("seed", 0);
    cm.output_dir = top.get<std::string>("output_dir", cm.output_dir);
    if (const char* env = std::getenv("GSWLAB_OUT"); env && *env) cm.output_dir = env;
    if (cm.output_dir.empty()) throw ValidationError("output directory is empty");
    Obj params = top.child("params");
    top.finish();
    set_worker_threads(threads);
    experiments().at(sub)(cm, params, run);
  } catch (const ValidationError& e) {
    std::cerr << "gswlab: validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const NumericalError& e) {
    code = kExitNumerical;
    message = e.what();
  } catch (const std::bad_alloc&) {
    code = kExitNumerical;
    message = "out of memory";
  }
  if (code == kExitOk && run.numerical_failure) {
    code = kExitNumerical;
    message = *run.numerical_failure;
  }
  if (code == kExitOk && strict && !run.warnings.empty()) {
    code = kExitNumerical;
    message = "warnings promoted by --strict";
  }

  // Commit outputs, then the manifest.
  const fs::path dir(cm.output_dir);
  json outs = json::array();
  try {
    fs::create_directories(dir);
    for (const auto& [name, bytes] : run.outputs) {
      std::ofstream f(dir / name, std::ios::binary);
      f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
      if (!f) throw std::runtime_error("cannot write " + (dir / name).string());
      outs.push_back({{"name", name}, {"bytes", bytes.size()}, {"sha256", sha256_hex(bytes)}});
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    json manifest = {{"tool", "gswlab"},
                     {"subcommand", sub},
                     {"config_path", config_path},
                     {"config_sha256", hash},
                     {"seed", cm.seed},
                     {"threads", threads},
                     {"strict", strict},
                     {"exit_code", code},
                     {"status", code == kExitOk ? "ok" : "numerical_failure"},
                     {"message", message},
                     {"warnings", run.warnings},
                     {"outputs", outs},
                     {"versions", versions()},
                     {"wall_time_s", wall}};
    std::ofstream f(dir / "manifest.json", std::ios::binary);
    f << manifest.dump(2) << "\n";
    if (!f) throw std::runtime_error("cannot write manifest");
  } catch (const std::exception& e) {
    std::cerr << "gswlab: " << e.what() << "\n";
    return kExitNumerical;
  }
  for (const auto& w : run.warnings) std::cerr << "gswlab: warning: " << w << "\n";
  if (code != kExitOk) std::cerr << "gswlab: numerical failure: " << message << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gswlab: lattice experiments for generalized Seiberg-Witten equations"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  std::string config;
  bool strict = false;
  int threads = 1;
  for (const auto& [name, fn] : experiments()) {
    auto* sc = app.add_subcommand(name, "run the " + name + " experiment");
    sc->add_option("--config", config, "JSON config file")->required();
    sc->add_flag("--strict", strict, "promote warnings to exit code 3");
    sc->add_option("--threads", threads, "worker threads (results do not depend on it)");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitValidation;
  }
  return run_subcommand(app.get_subcommands().front()->get_name(), config, strict, threads);
}

#include <gtest/gtest.h>

#include "gswlab/fixtures.hpp"
#include "gswlab/io.hpp"
#include "test_support.hpp"

using namespace gswlab;

namespace {

Configuration sample_config(Group group, TargetKind kind, Topology topo, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  const LatticeGeom geo({3, 2, 2, 3}, 0.4, topo, {-0.2, 0.1, 0, 0.3});
  return random_configuration(geo, group, kind, Stencil::Centered, g);
}

void expect_same(const Configuration& a, const Configuration& b) {
  EXPECT_EQ(a.geom.dims, b.geom.dims);
  EXPECT_EQ(a.geom.h, b.geom.h);
  EXPECT_EQ(a.geom.topology, b.geom.topology);
  EXPECT_EQ(a.geom.origin, b.geom.origin);
  EXPECT_EQ(a.kind(), b.kind());
  EXPECT_EQ(a.group(), b.group());
  EXPECT_EQ(a.stencil, b.stencil);
  EXPECT_EQ(a.A.a, b.A.a);
  ASSERT_EQ(a.u.q.size(), b.u.q.size());
  for (std::size_t x = 0; x < a.u.q.size(); ++x) EXPECT_EQ(a.u.q[x], b.u.q[x]);
}

}  // namespace

TEST(Io, RandomConfigurationMatchesTestGenerator) {
  // the library generator and the suite's generator draw in the same order
  for (auto group : {Group::Trivial, Group::U1}) {
    std::mt19937_64 g1(59), g2(59);
    const auto geo = LatticeGeom::centered_box(3, 0.5);
    const auto a = random_configuration(geo, group, TargetKind::FlatH, Stencil::Forward, g1);
    const auto b = gswlab::testing::rand_config(geo, group, TargetKind::FlatH, Stencil::Forward, g2);
    expect_same(a, b);
    EXPECT_EQ(g1(), g2());
  }
}

TEST(Io, SnapshotBinaryRoundTripIsExact) {
  for (auto group : {Group::Trivial, Group::U1})
    for (auto kind : {TargetKind::FlatH, TargetKind::ConeHmodZ2})
      for (auto topo : {Topology::Torus, Topology::Box}) {
        const auto c = sample_config(group, kind, topo, 3);
        const auto bytes = io::snapshot_binary(c);
        expect_same(io::read_snapshot_binary(bytes), c);
        EXPECT_EQ(io::snapshot_binary(io::read_snapshot_binary(bytes)), bytes);
        expect_same(io::read_snapshot_json(io::snapshot_json(c)), c);
      }
}

TEST(Io, SnapshotBinaryLayoutIsLittleEndian) {
  const LatticeGeom geo({1, 1, 1, 1}, 1.0, Topology::Torus);
  const Configuration c{geo, ConnectionField::trivial(), make_spinor(TargetKind::FlatH, {Quaternion(1.0, -2.0, 0.5, 0)}),
                        Stencil::Forward};
  const auto bytes = io::snapshot_binary(c);
  ASSERT_EQ(bytes.substr(0, 8), "GSWSNAP1");
  const std::uint32_t n = static_cast<unsigned char>(bytes[8]) | static_cast<unsigned char>(bytes[9]) << 8 |
                          static_cast<unsigned char>(bytes[10]) << 16 | static_cast<unsigned char>(bytes[11]) << 24;
  const auto hdr = nlohmann::json::parse(bytes.substr(12, n));
  EXPECT_EQ(hdr.at("byte_order"), "little-endian");
  EXPECT_EQ(hdr.at("fields").size(), 1u);
  ASSERT_EQ(bytes.size(), 12 + n + 32);
  // 1.0 = 0x3FF0000000000000, least significant byte first
  const std::string one("\x00\x00\x00\x00\x00\x00\xf0\x3f", 8);
  EXPECT_EQ(bytes.substr(12 + n, 8), one);
  // -2.0 = 0xC000000000000000
  const std::string m2("\x00\x00\x00\x00\x00\x00\x00\xc0", 8);
  EXPECT_EQ(bytes.substr(12 + n + 8, 8), m2);
}

TEST(Io, SnapshotRejectsCorruptInput) {
  const auto c = sample_config(Group::U1, TargetKind::FlatH, Topology::Torus, 5);
  auto bytes = io::snapshot_binary(c);
  EXPECT_THROW(io::read_snapshot_binary(bytes.substr(0, bytes.size() - 1)), ValidationError);
  EXPECT_THROW(io::read_snapshot_binary("GSWSNAP2" + bytes.substr(8)), ValidationError);
  EXPECT_THROW(io::read_snapshot_binary(bytes.substr(0, 10)), ValidationError);
  EXPECT_THROW(io::read_snapshot_json("{\"header\": {}}"), ValidationError);
  EXPECT_THROW(io::read_snapshot_json("not json"), ValidationError);
}

TEST(Io, SourcesRoundTrip) {
  const auto c = sample_config(Group::U1, TargetKind::FlatH, Topology::Box, 7);
  const auto s = manufacture(c);
  const auto t = io::read_sources_json(io::sources_json(s), c);
  ASSERT_EQ(t.S.size(), s.S.size());
  for (std::size_t x = 0; x < s.S.size(); ++x) EXPECT_EQ(t.S[x], s.S[x]);
  ASSERT_EQ(t.psi.size(), s.psi.size());
  for (std::size_t x = 0; x < s.psi.size(); ++x) EXPECT_EQ(t.psi[x], s.psi[x]);
  EXPECT_EQ(t.eta.c, s.eta.c);
  // residual is unchanged bit for bit
  EXPECT_EQ(norm_l2(c.geom, residual(c, t)), norm_l2(c.geom, residual(c, s)));
}

TEST(Io, CsvUsesRoundTripPrecision) {
  io::Csv csv({"a", "b"});
  const double x = 0.1 + 0.2;
  csv.row({x, -1e-300});
  const auto s = csv.str();
  EXPECT_EQ(s.substr(0, 4), "a,b\n");
  const auto comma = s.find(',', 4);
  EXPECT_EQ(std::strtod(s.substr(4, comma - 4).c_str(), nullptr), x);
  EXPECT_THROW(csv.row({1.0}), ValidationError);
}

TEST(Io, TripletFormat) {
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(3, 4);
  M(0, 1) = 2.5;
  M(2, 3) = -1.0 / 3.0;
  const auto t = io::triplets(M);
  std::istringstream in(t);
  std::string hash;
  int rows, cols, nnz;
  in >> hash >> rows >> cols >> nnz;
  EXPECT_EQ(hash, "#");
  EXPECT_EQ(rows, 3);
  EXPECT_EQ(cols, 4);
  ASSERT_EQ(nnz, 2);
  Eigen::MatrixXd R = Eigen::MatrixXd::Zero(rows, cols);
  for (int k = 0; k < nnz; ++k) {
    int i, j;
    std::string v;
    in >> i >> j >> v;
    R(i, j) = std::strtod(v.c_str(), nullptr);
  }
  EXPECT_EQ(R, M);
}

TEST(Io, TargetMarginsPassAndAreSeeded) {
  const auto a = target_margins(1, 200), b = target_margins(1, 200);
  EXPECT_TRUE(a.pass());
  EXPECT_EQ(a.moment_fd, b.moment_fd);
  EXPECT_EQ(a.permuting, b.permuting);
  EXPECT_GT(a.moment_fd, 0.0);  // the FD check is live
  EXPECT_THROW(target_margins(1, 0), ValidationError);
  EXPECT_THROW(target_margins(1, 10, -1e-4), ValidationError);
}

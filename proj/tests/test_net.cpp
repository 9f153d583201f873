#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "riemnet/net.hpp"

using namespace riemnet;
using Catch::Matchers::WithinAbs;

namespace {

const DistanceMethod kAnalytic{MethodKind::Analytic, 0.01, 1e-9};

// Brute-force separation oracle, independent of verify_net.
double brute_min_pairwise(const ManifoldSpec& s, const Net& net) {
  double best = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < net.points.size(); ++i)
    for (size_t j = i + 1; j < net.points.size(); ++j)
      best = std::min(best, analytic_distance(s, net.points[i], net.points[j]));
  return best;
}

}  // namespace

TEST_CASE("an epsilon above the diameter yields a single-point net") {
  const ManifoldSpec s = make_flat_torus();
  const Net net = build_net(s, 1.5, kAnalytic);
  REQUIRE(net.points.size() == 1);
  const NetReport rep = verify_net(s, net, kAnalytic);
  CHECK(rep.min_pairwise == std::numeric_limits<double>::infinity());
  CHECK(rep.covering_radius <= diameter_bound(s));
}

TEST_CASE("net sizes land inside packing and covering bounds") {
  // area 1, so N * pi * (eps/2)^2 <= 1 (disjoint half-balls) and
  // N * pi * eps^2 >= 1 (epsilon-balls cover): N in [8, 31] at eps = 0.2
  const ManifoldSpec s = make_flat_torus();
  const Net net = build_net(s, 0.2, kAnalytic);
  CHECK(net.points.size() >= 8);
  CHECK(net.points.size() <= 31);
}

TEST_CASE("maximal nets are separated and covering") {
  const ManifoldSpec s = make_flat_torus();
  const Net net = build_net(s, 0.2, kAnalytic);
  const NetReport rep = verify_net(s, net, kAnalytic);
  CHECK(rep.min_pairwise >= 0.2);
  CHECK(rep.min_pairwise <= 0.4);
  CHECK(rep.covering_radius <= 1.1 * 0.2);
  CHECK_THAT(brute_min_pairwise(s, net), WithinAbs(rep.min_pairwise, 1e-12));

  // random audit: every point of the torus is within 1.1 eps of the net
  Rng rng(99);
  for (int i = 0; i < 2000; ++i) {
    const ChartPoint q = sample_point(s, rng);
    double d = std::numeric_limits<double>::infinity();
    for (const auto& p : net.points) d = std::min(d, analytic_distance(s, q, p));
    CHECK(d <= 1.1 * 0.2);
  }
}

TEST_CASE("sphere nets respect their verification report") {
  const ManifoldSpec s = make_sphere(1.0);
  const Net net = build_net(s, 1.0, kAnalytic);
  // spherical cap bounds: N * 2 pi (1 - cos(eps/2)) <= 4 pi, N * 2 pi (1 - cos eps) >= 4 pi
  CHECK(net.points.size() >= 5);
  CHECK(net.points.size() <= 16);
  const NetReport rep = verify_net(s, net, kAnalytic);
  CHECK(rep.min_pairwise >= 1.0 - 1e-9);
  CHECK(rep.covering_radius <= 1.1);
  CHECK_THAT(brute_min_pairwise(s, net), WithinAbs(rep.min_pairwise, 1e-12));
}

TEST_CASE("zero amplitude conformal nets match flat nets bitwise") {
  const ManifoldSpec flat = make_flat_torus();
  const ManifoldSpec conf = make_conformal_torus(Mat2::identity(), 0.0, 1);
  const Net a = build_net(flat, 0.2, kAnalytic);
  const Net b = build_net(conf, 0.2, kAnalytic);
  REQUIRE(a.points.size() == b.points.size());
  for (size_t i = 0; i < a.points.size(); ++i) CHECK(same_point(a.points[i], b.points[i], 0.0));
}

TEST_CASE("nearest_net_point answers the brute-force argmin") {
  const ManifoldSpec s = make_flat_torus();
  const Net net = build_net(s, 0.2, kAnalytic);
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    const ChartPoint q = sample_point(s, rng);
    const auto [idx, d] = nearest_net_point(s, net, q, kAnalytic);
    REQUIRE(idx >= 0);
    REQUIRE(idx < int(net.points.size()));
    CHECK_THAT(d, WithinAbs(analytic_distance(s, q, net.points[idx]), 1e-12));
    for (const auto& p : net.points) CHECK(d <= analytic_distance(s, q, p) + 1e-12);
    CHECK(d <= 1.1 * 0.2);  // covering radius bound
  }
}

TEST_CASE("net construction is deterministic") {
  const ManifoldSpec flat = make_flat_torus();
  const Net a = build_net(flat, 0.15, kAnalytic);
  const Net b = build_net(flat, 0.15, kAnalytic);
  REQUIRE(a.points.size() == b.points.size());
  for (size_t i = 0; i < a.points.size(); ++i) CHECK(same_point(a.points[i], b.points[i], 0.0));

  const ManifoldSpec conf = make_conformal_torus(Mat2::identity(), 0.1, 1);
  const DistanceMethod graph{MethodKind::Graph, conf.injrad_bound / 50.0, 1e-9};
  DistanceOracle o1(conf, graph), o2(conf, graph);
  const Net g1 = build_net(conf, 0.3, graph, &o1);
  const Net g2 = build_net(conf, 0.3, graph, &o2);
  REQUIRE(g1.points.size() == g2.points.size());
  for (size_t i = 0; i < g1.points.size(); ++i) CHECK(same_point(g1.points[i], g2.points[i], 0.0));
}

TEST_CASE("nets built through the graph oracle stay separated and covering") {
  const ManifoldSpec conf = make_conformal_torus(Mat2::identity(), 0.1, 1);
  const DistanceMethod graph{MethodKind::Graph, conf.injrad_bound / 50.0, 1e-9};
  DistanceOracle oracle(conf, graph);
  const Net net = build_net(conf, 0.3, graph, &oracle);
  CHECK(net.points.size() >= 2);
  const NetReport rep = verify_net(conf, net, graph, &oracle);
  CHECK(rep.min_pairwise >= 0.3 - 1e-9);
  CHECK(rep.covering_radius <= 1.1 * 0.3);
}

TEST_CASE("extend_net refines while keeping the base prefix") {
  const ManifoldSpec s = make_flat_torus();
  DistanceOracle oracle(s, kAnalytic);
  const Net base = build_net(s, 0.4, kAnalytic, &oracle);
  const Net fine = extend_net(s, base, 0.2, &oracle);
  REQUIRE(fine.points.size() >= base.points.size());
  for (size_t i = 0; i < base.points.size(); ++i)
    CHECK(same_point(fine.points[i], base.points[i], 0.0));
  CHECK(fine.epsilon == 0.2);
  CHECK(brute_min_pairwise(s, fine) >= 0.2 - 1e-9);
  const NetReport rep = verify_net(s, fine, kAnalytic, &oracle);
  CHECK(rep.covering_radius <= 1.1 * 0.2);
  CHECK_THROWS_AS(extend_net(s, base, 0.6, &oracle), UsageError);
}

TEST_CASE("verify_net reports a planted separation defect") {
  const ManifoldSpec s = make_flat_torus();
  Net net = build_net(s, 0.2, kAnalytic);
  ChartPoint close = net.points[0];
  close.c.x = detail::wrap_unit(close.c.x + 0.05);
  net.points.push_back(close);
  const NetReport rep = verify_net(s, net, kAnalytic);
  CHECK_THAT(rep.min_pairwise, WithinAbs(0.05, 1e-12));
}

TEST_CASE("nets round-trip through their text form") {
  namespace fs = std::filesystem;
  const ManifoldSpec flat = make_flat_torus();
  const Net net = build_net(flat, 0.4, kAnalytic);
  const auto path = fs::temp_directory_path() / "riemnet_test_net_flat.txt";
  save_net(net, flat, path.string());
  const Net r = load_net(flat, path.string(), kAnalytic);
  REQUIRE(r.points.size() == net.points.size());
  CHECK(r.epsilon == net.epsilon);
  CHECK(r.spec_hash == net.spec_hash);
  for (size_t i = 0; i < net.points.size(); ++i) CHECK(same_point(r.points[i], net.points[i], 0.0));

  // sphere nets contain pole-chart points; chart names must survive
  const ManifoldSpec sphere = make_sphere(1.0);
  const Net snet = build_net(sphere, 1.0, kAnalytic);
  bool saw_pole = false;
  for (const auto& p : snet.points) saw_pole = saw_pole || p.chart != Chart::Main;
  REQUIRE(saw_pole);
  const auto spath = fs::temp_directory_path() / "riemnet_test_net_sphere.txt";
  save_net(snet, sphere, spath.string());
  const Net sr = load_net(sphere, spath.string(), kAnalytic);
  REQUIRE(sr.points.size() == snet.points.size());
  for (size_t i = 0; i < snet.points.size(); ++i)
    CHECK(same_point(sr.points[i], snet.points[i], 0.0));

  CHECK_THROWS_AS(load_net(sphere, path.string(), kAnalytic), UsageError);  // family mismatch

  const auto bad = fs::temp_directory_path() / "riemnet_test_net_bad.txt";
  {
    std::ofstream out(bad);
    out << "sphere 1 1\nbogus 0 0\n";
  }
  CHECK_THROWS_AS(load_net(sphere, bad.string(), kAnalytic), UsageError);
}

TEST_CASE("build_net rejects bad epsilons") {
  const ManifoldSpec s = make_flat_torus();
  CHECK_THROWS_AS(build_net(s, 0.0, kAnalytic), UsageError);
  CHECK_THROWS_AS(build_net(s, -0.2, kAnalytic), UsageError);
}

TEST_CASE("net sizes grow monotonically as epsilon shrinks") {
  const ManifoldSpec s = make_flat_torus();
  size_t prev = 0;
  for (const double eps : {0.4, 0.2, 0.1, 0.05}) {
    const Net net = build_net(s, eps, kAnalytic);
    CHECK(net.points.size() > prev);
    prev = net.points.size();
  }
}

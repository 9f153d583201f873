#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cmath>

#include "riemnet/manifold.hpp"

using namespace riemnet;
using Catch::Matchers::WithinAbs;

namespace {

// Independent finite-difference Christoffel oracle: central differences of the
// public metric, assembled with the textbook index formula.
Christoffel fd_christoffel(const ManifoldSpec& s, const ChartPoint& p, double h) {
  std::array<std::array<std::array<double, 2>, 2>, 2> dg{};  // dg[l][i][j]
  for (int l = 0; l < 2; ++l) {
    const Vec2 step{l == 0 ? h : 0.0, l == 1 ? h : 0.0};
    const Mat2 gp = metric_at(s, {p.c + step, p.chart}).g;
    const Mat2 gm = metric_at(s, {p.c - step, p.chart}).g;
    const Mat2 d = (gp - gm) * (1.0 / (2.0 * h));
    dg[l] = {{{d.a, d.b}, {d.c, d.d}}};
  }
  const Mat2 ginv = metric_at(s, p).g_inv;
  const std::array<std::array<double, 2>, 2> gi{{{ginv.a, ginv.b}, {ginv.c, ginv.d}}};
  Christoffel out;
  for (int k = 0; k < 2; ++k)
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        double sum = 0.0;
        for (int l = 0; l < 2; ++l)
          sum += 0.5 * gi[k][l] * (dg[i][j][l] + dg[j][i][l] - dg[l][i][j]);
        out.gamma[k][i][j] = sum;
      }
  return out;
}

double max_gamma_gap(const Christoffel& a, const Christoffel& b) {
  double m = 0.0;
  for (int k = 0; k < 2; ++k)
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        m = std::max(m, std::abs(a.gamma[k][i][j] - b.gamma[k][i][j]));
  return m;
}

}  // namespace

TEST_CASE("flat torus metric is the lattice gram matrix") {
  const ManifoldSpec s = make_flat_torus();
  const MetricSample m = metric_at(s, chart_point(0.3, 0.7));
  CHECK(m.g.a == 1.0);
  CHECK(m.g.b == 0.0);
  CHECK(m.g.c == 0.0);
  CHECK(m.g.d == 1.0);
  CHECK(m.g_inv.a == 1.0);
  CHECK(m.g_inv.d == 1.0);

  const ManifoldSpec rect = make_flat_torus(Mat2::columns({1.0, 0.0}, {0.0, 2.0}));
  const MetricSample mr = metric_at(rect, chart_point(0.1, 0.9));
  CHECK(mr.g.a == 1.0);
  CHECK(mr.g.d == 4.0);
  CHECK(mr.g.b == 0.0);
  CHECK(mr.g_inv.d == 0.25);
}

TEST_CASE("sphere metric in the main chart is diag(r^2, r^2 sin^2 theta)") {
  const ManifoldSpec s1 = make_sphere(1.0);
  const MetricSample eq = metric_at(s1, chart_point(M_PI / 2.0, 0.3));
  CHECK_THAT(eq.g.a, WithinAbs(1.0, 1e-15));
  CHECK_THAT(eq.g.d, WithinAbs(1.0, 1e-15));
  CHECK(eq.g.b == 0.0);

  const ManifoldSpec s2 = make_sphere(2.0);
  const MetricSample m = metric_at(s2, chart_point(M_PI / 3.0, 1.1));
  CHECK_THAT(m.g.a, WithinAbs(4.0, 1e-14));
  CHECK_THAT(m.g.d, WithinAbs(3.0, 1e-14));  // 4 sin^2(pi/3) = 3
}

TEST_CASE("sphere pole chart metric is smooth and euclidean at the pole") {
  const ManifoldSpec s = make_sphere(1.5);
  const MetricSample at_pole = metric_at(s, {{0.0, 0.0}, Chart::NorthPole});
  CHECK_THAT(at_pole.g.a, WithinAbs(2.25, 1e-12));
  CHECK_THAT(at_pole.g.d, WithinAbs(2.25, 1e-12));
  CHECK_THAT(at_pole.g.b, WithinAbs(0.0, 1e-12));
  // off the pole the chart metric must agree with the main chart through the
  // transition map: compare the quadratic form on a transported vector
  const ChartPoint pp{{0.12, -0.07}, Chart::NorthPole};
  const Vec2 v{0.4, 0.9};
  const auto [pm, vm] = change_chart(s, pp, v, Chart::Main);
  const double qp = quad_form(metric_at(s, pp).g, v, v);
  const double qm = quad_form(metric_at(s, pm).g, vm, vm);
  CHECK_THAT(qp, WithinAbs(qm, 1e-12));
}

TEST_CASE("conformal metric scales the flat metric by exp(2 a sin sin)") {
  const ManifoldSpec s = make_conformal_torus(Mat2::identity(), 0.1, 1);
  auto factor = [&](double x, double y) {
    return std::exp(2.0 * 0.1 * std::sin(2.0 * M_PI * x) * std::sin(2.0 * M_PI * y));
  };
  const MetricSample peak = metric_at(s, chart_point(0.25, 0.25));
  CHECK_THAT(peak.g.a, WithinAbs(std::exp(0.2), 1e-14));
  CHECK_THAT(peak.g.d, WithinAbs(std::exp(0.2), 1e-14));
  CHECK(peak.g.b == 0.0);
  for (const auto& [x, y] : {std::pair{0.1, 0.8}, {0.37, 0.22}, {0.5, 0.5}}) {
    const MetricSample m = metric_at(s, chart_point(x, y));
    CHECK_THAT(m.g.a, WithinAbs(factor(x, y), 1e-13));
    CHECK_THAT(m.g.d, WithinAbs(factor(x, y), 1e-13));
  }
}

TEST_CASE("metric times inverse metric is the identity") {
  const ManifoldSpec specs[] = {make_flat_torus(Mat2::columns({1.0, 0.1}, {0.0, 1.2})),
                                make_sphere(0.7),
                                make_conformal_torus(Mat2::identity(), 0.15, 2)};
  for (const auto& s : specs) {
    Rng rng(31);
    for (int i = 0; i < 50; ++i) {
      const ChartPoint p = sample_point(s, rng);
      const MetricSample m = metric_at(s, p);
      const Mat2 prod = m.g * m.g_inv;
      CHECK_THAT(prod.a, WithinAbs(1.0, 1e-12));
      CHECK_THAT(prod.b, WithinAbs(0.0, 1e-12));
      CHECK_THAT(prod.c, WithinAbs(0.0, 1e-12));
      CHECK_THAT(prod.d, WithinAbs(1.0, 1e-12));
      // symmetric positive definite: 2x2 criterion
      CHECK(m.g.b == m.g.c);
      CHECK(m.g.a > 0.0);
      CHECK(m.g.det() > 0.0);
    }
  }
}

TEST_CASE("flat and zero-amplitude conformal christoffel symbols vanish") {
  const ManifoldSpec flat = make_flat_torus(Mat2::columns({1.0, 0.0}, {0.5, 1.0}));
  const Christoffel gf = christoffel_at(flat, chart_point(0.4, 0.6));
  const ManifoldSpec conf0 = make_conformal_torus(Mat2::identity(), 0.0, 3);
  const Christoffel gc = christoffel_at(conf0, chart_point(0.3, 0.8));
  for (int k = 0; k < 2; ++k)
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        CHECK(gf.gamma[k][i][j] == 0.0);
        CHECK(gc.gamma[k][i][j] == 0.0);
      }
}

TEST_CASE("sphere christoffel symbols match the closed form") {
  // at colatitude pi/3: gamma^theta_{phi phi} = -sin cos, gamma^phi_{theta phi} = cot
  for (const double r : {1.0, 3.0}) {
    const ManifoldSpec s = make_sphere(r);
    const Christoffel g = christoffel_at(s, chart_point(M_PI / 3.0, 0.4));
    CHECK_THAT(g.gamma[0][1][1], WithinAbs(-std::sqrt(3.0) / 4.0, 1e-12));
    CHECK_THAT(g.gamma[1][0][1], WithinAbs(1.0 / std::sqrt(3.0), 1e-12));
    CHECK_THAT(g.gamma[1][1][0], WithinAbs(1.0 / std::sqrt(3.0), 1e-12));
    CHECK_THAT(g.gamma[0][0][0], WithinAbs(0.0, 1e-12));
    CHECK_THAT(g.gamma[0][0][1], WithinAbs(0.0, 1e-12));
    CHECK_THAT(g.gamma[1][0][0], WithinAbs(0.0, 1e-12));
    CHECK_THAT(g.gamma[1][1][1], WithinAbs(0.0, 1e-12));
  }
}

TEST_CASE("conformal christoffel symbols match the conformal-scaling closed form") {
  // for g = exp(2 lambda) I: gamma^k_ij = d^k_i l_j + d^k_j l_i - d_ij l_k
  const double a = 0.15;
  const int f = 2;
  const ManifoldSpec s = make_conformal_torus(Mat2::identity(), a, f);
  const double w = 2.0 * M_PI * f;
  for (const auto& [x, y] : {std::pair{0.33, 0.71}, {0.08, 0.46}}) {
    const double lx = a * w * std::cos(w * x) * std::sin(w * y);
    const double ly = a * w * std::sin(w * x) * std::cos(w * y);
    const Christoffel g = christoffel_at(s, chart_point(x, y));
    CHECK_THAT(g.gamma[0][0][0], WithinAbs(lx, 1e-6));
    CHECK_THAT(g.gamma[0][0][1], WithinAbs(ly, 1e-6));
    CHECK_THAT(g.gamma[0][1][1], WithinAbs(-lx, 1e-6));
    CHECK_THAT(g.gamma[1][0][0], WithinAbs(-ly, 1e-6));
    CHECK_THAT(g.gamma[1][0][1], WithinAbs(lx, 1e-6));
    CHECK_THAT(g.gamma[1][1][1], WithinAbs(ly, 1e-6));
  }
}

TEST_CASE("christoffel symbols agree with finite differences of the metric") {
  const ManifoldSpec sphere = make_sphere(1.3);
  const ChartPoint sphere_pts[] = {chart_point(M_PI / 3.0, 1.2),
                                   chart_point(2.0, 4.5),
                                   {{0.08, -0.05}, Chart::NorthPole},
                                   {{-0.11, 0.14}, Chart::SouthPole}};
  for (const auto& p : sphere_pts) {
    const double gap = max_gamma_gap(christoffel_at(sphere, p), fd_christoffel(sphere, p, 2e-5));
    CHECK(gap <= 1e-6);
  }
  const ManifoldSpec conf = make_conformal_torus(Mat2::identity(), 0.15, 2);
  Rng rng(9);
  for (int i = 0; i < 20; ++i) {
    const ChartPoint p = sample_point(conf, rng);
    const double gap = max_gamma_gap(christoffel_at(conf, p), fd_christoffel(conf, p, 2e-5));
    CHECK(gap <= 1e-6);
  }
}

TEST_CASE("inner products follow the metric") {
  const ManifoldSpec flat = make_flat_torus();
  const ChartPoint p = chart_point(0.2, 0.6);
  CHECK(inner(flat, p, {p, {1.0, 0.0}}, {p, {0.0, 1.0}}) == 0.0);
  CHECK(inner(flat, p, {p, {3.0, 4.0}}, {p, {3.0, 4.0}}) == 25.0);

  const ManifoldSpec sphere = make_sphere(1.0);
  const ChartPoint q = chart_point(M_PI / 6.0, 0.0);
  CHECK_THAT(inner(sphere, q, {q, {0.0, 1.0}}, {q, {0.0, 1.0}}), WithinAbs(0.25, 1e-15));

  const ChartPoint other = chart_point(0.5, 0.5);
  CHECK_THROWS_AS(inner(flat, p, {p, {1.0, 0.0}}, {other, {1.0, 0.0}}), UsageError);
}

TEST_CASE("angles come from the metric inner product") {
  const ManifoldSpec flat = make_flat_torus();
  const ChartPoint p = chart_point(0.1, 0.1);
  const TangentVector ex{p, {1.0, 0.0}};
  const TangentVector ey{p, {0.0, 1.0}};
  CHECK_THAT(angle_between(flat, p, ex, ey), WithinAbs(M_PI / 2.0, 1e-15));
  CHECK_THAT(angle_between(flat, p, ex, ex), WithinAbs(0.0, 1e-7));

  const ManifoldSpec sphere = make_sphere(1.0);
  const ChartPoint q = chart_point(M_PI / 4.0, 0.2);
  const TangentVector v{q, {1.0, 0.0}};
  const TangentVector w{q, {1.0, 1.0}};
  CHECK_THAT(angle_between(sphere, q, v, w), WithinAbs(std::acos(1.0 / std::sqrt(1.5)), 1e-12));
  CHECK_THAT(angle_between(sphere, q, v, w), WithinAbs(angle_between(sphere, q, w, v), 1e-12));

  const TangentVector vpos{p, {0.3, 0.4}};
  const TangentVector vscaled{p, {0.75, 1.0}};
  const TangentVector vneg{p, {-0.9, -1.2}};
  CHECK_THAT(angle_between(flat, p, vpos, vscaled), WithinAbs(0.0, 1e-7));
  CHECK_THAT(angle_between(flat, p, vpos, vneg), WithinAbs(M_PI, 1e-7));
  CHECK_THROWS_AS(angle_between(flat, p, ex, {p, {0.0, 0.0}}), UsageError);
}

TEST_CASE("wrap maps torus coordinates into the fundamental domain") {
  const ManifoldSpec s = make_flat_torus();
  const ChartPoint w = wrap(s, chart_point(1.3, -0.2));
  CHECK_THAT(w.c.x, WithinAbs(0.3, 1e-15));
  CHECK_THAT(w.c.y, WithinAbs(0.8, 1e-15));
  CHECK(same_point(wrap(s, w), w, 0.0));  // idempotent on wrapped points
  const ChartPoint a = wrap(s, chart_point(0.42, 0.77));
  const ChartPoint b = wrap(s, chart_point(0.42 + 3.0, 0.77 - 2.0));
  CHECK(same_point(a, b, 1e-12));
}

TEST_CASE("sphere wrap reflects through the poles and switches charts") {
  const ManifoldSpec s = make_sphere(1.0);
  const ChartPoint north = wrap(s, chart_point(0.1, 1.0));
  REQUIRE(north.chart == Chart::NorthPole);
  CHECK_THAT(north.c.x, WithinAbs(0.1 * std::cos(1.0), 1e-15));
  CHECK_THAT(north.c.y, WithinAbs(0.1 * std::sin(1.0), 1e-15));

  // negative colatitude reflects through the north pole with a phi flip
  const ChartPoint refl = wrap(s, chart_point(-0.1, 1.0));
  REQUIRE(refl.chart == Chart::NorthPole);
  CHECK_THAT(refl.c.x, WithinAbs(0.1 * std::cos(1.0 + M_PI), 1e-15));
  CHECK_THAT(refl.c.y, WithinAbs(0.1 * std::sin(1.0 + M_PI), 1e-15));

  const ChartPoint south = wrap(s, chart_point(3.1, 0.5));
  REQUIRE(south.chart == Chart::SouthPole);
  CHECK_THAT(norm(south.c), WithinAbs(M_PI - 3.1, 1e-12));

  // pole-chart points near the pole stay put, far ones leave for main
  const ChartPoint stay{{0.05, 0.1}, Chart::NorthPole};
  CHECK(same_point(wrap(s, stay), stay, 0.0));
  const ChartPoint leave = wrap(s, {{0.25, 0.0}, Chart::NorthPole});
  REQUIRE(leave.chart == Chart::Main);
  CHECK_THAT(leave.c.x, WithinAbs(0.25, 1e-15));
  CHECK_THAT(leave.c.y, WithinAbs(0.0, 1e-15));

  const ChartPoint mid = wrap(s, chart_point(1.5, 2.0 + 4.0 * M_PI));
  REQUIRE(mid.chart == Chart::Main);
  CHECK_THAT(mid.c.y, WithinAbs(2.0, 1e-12));
}

TEST_CASE("chart transitions round-trip points and velocities") {
  const ManifoldSpec s = make_sphere(1.0);
  const ChartPoint p = chart_point(0.28, 0.9);
  const Vec2 v{0.7, -0.4};
  const auto [pp, vp] = change_chart(s, p, v, Chart::NorthPole);
  REQUIRE(pp.chart == Chart::NorthPole);
  const auto [pb, vb] = change_chart(s, pp, vp, Chart::Main);
  CHECK(same_point(pb, p, 1e-13));
  CHECK_THAT(vb.x, WithinAbs(v.x, 1e-12));
  CHECK_THAT(vb.y, WithinAbs(v.y, 1e-12));
  CHECK_THROWS_AS(change_chart(s, {{0.0, 0.0}, Chart::NorthPole}, v, Chart::Main),
                  ChartDomainError);
}

TEST_CASE("manifold factories validate their parameters") {
  CHECK_THROWS_AS(make_sphere(0.0), UsageError);
  CHECK_THROWS_AS(make_sphere(-1.0), UsageError);
  CHECK_THROWS_AS(make_conformal_torus(Mat2::identity(), 0.25, 1), UsageError);
  CHECK_THROWS_AS(make_conformal_torus(Mat2::identity(), -0.21, 1), UsageError);
  CHECK_NOTHROW(make_conformal_torus(Mat2::identity(), 0.2, 1));
  CHECK_THROWS_AS(make_conformal_torus(Mat2::identity(), 0.1, 0), UsageError);
  CHECK_THROWS_AS(make_flat_torus(Mat2::columns({1.0, 0.0}, {2.0, 0.0})), UsageError);
  CHECK_THROWS_AS(make_flat_torus(Mat2::columns({1.0, 0.0}, {5.0, 1.0})), UsageError);

  const double conservative = 0.5 * std::exp(-0.4);
  CHECK_THROWS_AS(make_conformal_torus(Mat2::identity(), 0.1, 1, 0.0), UsageError);
  CHECK_THROWS_AS(make_conformal_torus(Mat2::identity(), 0.1, 1, conservative * 1.01), UsageError);
  const ManifoldSpec o = make_conformal_torus(Mat2::identity(), 0.1, 1, 0.3);
  CHECK(o.injrad_bound == 0.3);
}

TEST_CASE("injectivity radius bounds follow the construction") {
  CHECK(make_flat_torus().injrad_bound == 0.5);
  CHECK(make_flat_torus(Mat2::columns({1.0, 0.0}, {0.0, 2.0})).injrad_bound == 0.5);
  CHECK(make_flat_torus(Mat2::identity() * 2.0).injrad_bound == 1.0);
  CHECK_THAT(make_sphere(1.5).injrad_bound, WithinAbs(1.5 * M_PI, 1e-15));
  CHECK_THAT(make_conformal_torus(Mat2::identity(), 0.1, 1).injrad_bound,
             WithinAbs(0.5 * std::exp(-0.4), 1e-15));
}

TEST_CASE("spec hashes key on the defining parameters") {
  CHECK(spec_hash(make_flat_torus()) == spec_hash(make_flat_torus()));
  CHECK(spec_hash(make_sphere(1.0)) != spec_hash(make_sphere(2.0)));
  CHECK(spec_hash(make_conformal_torus(Mat2::identity(), 0.1, 1)) !=
        spec_hash(make_conformal_torus(Mat2::identity(), 0.15, 1)));
  CHECK(spec_hash(make_conformal_torus(Mat2::identity(), 0.1, 1)) !=
        spec_hash(make_conformal_torus(Mat2::identity(), 0.1, 2)));
  // a zero-amplitude conformal torus is isometric to the flat torus but is a
  // different spec, so its caches must not collide
  CHECK(spec_hash(make_flat_torus()) != spec_hash(make_conformal_torus(Mat2::identity(), 0.0, 1)));
}

TEST_CASE("point sampling is deterministic and tangent samples are unit") {
  const ManifoldSpec specs[] = {make_flat_torus(), make_sphere(1.0),
                                make_conformal_torus(Mat2::identity(), 0.1, 1)};
  for (const auto& s : specs) {
    Rng r1(42), r2(42);
    for (int i = 0; i < 10; ++i) {
      const ChartPoint a = sample_point(s, r1);
      const ChartPoint b = sample_point(s, r2);
      CHECK(same_point(a, b, 0.0));
      CHECK_NOTHROW(validate_point(s, a));
      const TangentVector v = sample_unit_tangent(s, a, r1);
      (void)sample_unit_tangent(s, b, r2);
      CHECK(v.unit);
      CHECK_THAT(g_norm(s, a, v.comp), WithinAbs(1.0, 1e-10));
    }
  }
}

TEST_CASE("validate_point rejects out-of-chart points") {
  const ManifoldSpec flat = make_flat_torus();
  CHECK_THROWS_AS(validate_point(flat, {{0.1, 0.1}, Chart::NorthPole}), ChartDomainError);
  const ManifoldSpec sphere = make_sphere(1.0);
  CHECK_THROWS_AS(validate_point(sphere, chart_point(0.0, 0.3)), ChartDomainError);
  CHECK_THROWS_AS(validate_point(sphere, chart_point(M_PI, 0.3)), ChartDomainError);
  CHECK_THROWS_AS(validate_point(sphere, {{0.3, 0.2}, Chart::SouthPole}), ChartDomainError);
  CHECK_NOTHROW(validate_point(sphere, {{0.3, 0.1}, Chart::SouthPole}));
  CHECK_THROWS_AS(validate_point(flat, chart_point(std::nan(""), 0.0)), ChartDomainError);
}

TEST_CASE("to_main_chart reports pole points in colatitude and longitude") {
  const ManifoldSpec s = make_sphere(1.0);
  const ChartPoint p{{0.05, 0.05}, Chart::NorthPole};
  const ChartPoint m = to_main_chart(s, p);
  REQUIRE(m.chart == Chart::Main);
  CHECK_THAT(m.c.x, WithinAbs(0.05 * std::sqrt(2.0), 1e-12));
  CHECK_THAT(m.c.y, WithinAbs(M_PI / 4.0, 1e-12));
  const ChartPoint q{{-0.1, 0.0}, Chart::SouthPole};
  const ChartPoint ms = to_main_chart(s, q);
  CHECK_THAT(ms.c.x, WithinAbs(M_PI - 0.1, 1e-12));
  CHECK_THAT(ms.c.y, WithinAbs(M_PI, 1e-12));
  const ManifoldSpec flat = make_flat_torus();
  CHECK(same_point(to_main_chart(flat, chart_point(0.3, 0.4)), chart_point(0.3, 0.4), 0.0));
}

TEST_CASE("orthonormal frames are orthonormal in the metric") {
  const ManifoldSpec specs[] = {make_flat_torus(Mat2::columns({1.0, 0.2}, {0.0, 1.1})),
                                make_sphere(2.0),
                                make_conformal_torus(Mat2::identity(), 0.15, 2)};
  for (const auto& s : specs) {
    Rng rng(7);
    for (int i = 0; i < 20; ++i) {
      const ChartPoint p = sample_point(s, rng);
      const auto frame = orthonormal_frame(s, p);
      CHECK_THAT(g_norm(s, p, frame[0]), WithinAbs(1.0, 1e-12));
      CHECK_THAT(g_norm(s, p, frame[1]), WithinAbs(1.0, 1e-12));
      CHECK_THAT(inner(s, p, {p, frame[0]}, {p, frame[1]}), WithinAbs(0.0, 1e-12));
      const Vec2 v{0.3, -0.8};
      const Vec2 w = orthogonal_unit(s, p, v);
      CHECK_THAT(g_norm(s, p, w), WithinAbs(1.0, 1e-12));
      CHECK_THAT(inner(s, p, {p, v}, {p, w}), WithinAbs(0.0, 1e-12));
    }
  }
}

TEST_CASE("diameter bounds dominate sampled distances") {
  CHECK(diameter_bound(make_flat_torus()) == 2.0);
  CHECK_THAT(diameter_bound(make_sphere(2.0)), WithinAbs(2.0 * M_PI, 1e-15));
  CHECK(diameter_bound(make_conformal_torus(Mat2::identity(), 0.1, 1)) >= 2.0);
}

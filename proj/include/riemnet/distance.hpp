#pragma once

#include <algorithm>
#include <array>
#include <fstream>
#include <optional>
#include <queue>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "riemnet/geodesic.hpp"
#include "riemnet/manifold.hpp"

namespace riemnet {

enum class MethodKind : std::uint8_t { Analytic, Shooting, Graph };

inline const char* method_name(MethodKind k) {
  switch (k) {
    case MethodKind::Analytic: return "analytic";
    case MethodKind::Shooting: return "shooting";
    case MethodKind::Graph: return "graph";
  }
  return "?";
}

inline MethodKind method_from_name(const std::string& s) {
  if (s == "analytic") return MethodKind::Analytic;
  if (s == "shooting") return MethodKind::Shooting;
  if (s == "graph") return MethodKind::Graph;
  throw UsageError("unknown distance method: " + s);
}

struct DistanceMethod {
  MethodKind kind = MethodKind::Analytic;
  double graph_density = 0.01;
  double shooting_tol = 1e-9;
};

// Pairs closer than this are treated as coincident by ratio-style operations.
inline constexpr double kCoincidenceTol = 1e-8;
// edge admission radius, units of density; 3.25 admits chart offsets through
// (3,1), tightening the worst direction-quantization stretch to ~1.3%
inline constexpr double kEdgeRadiusFactor = 3.25;
inline constexpr double kChordFactor = 6.0;        // smoothing chords, units of density
inline constexpr int kSmoothWindow = 16;           // chord span cap along a path
inline constexpr int kGraphNodeCap = 2000000;

// A conformal torus with amplitude 0 is the flat torus; analytic formulas apply.
inline bool has_analytic(const ManifoldSpec& s) {
  return s.family != Family::ConformalTorus || s.amplitude == 0.0;
}

// ---------------------------------------------------------------------------
// Analytic distances

namespace detail {

// Minimum over lattice translates k in [-2,2]^2 of |B (t + k)|; the accepted
// lattice conditioning puts the true minimum inside that window.
inline double flat_translate_min_sq(const ManifoldSpec& s, const Vec2& t, Vec2* best_t = nullptr) {
  double best = std::numeric_limits<double>::infinity();
  Vec2 arg = t;
  for (int i = -2; i <= 2; ++i)
    for (int j = -2; j <= 2; ++j) {
      const Vec2 u = t + Vec2{double(i), double(j)};
      const double q = quad_form(s.gram, u, u);
      if (q < best) {
        best = q;
        arg = u;
      }
    }
  if (best_t) *best_t = arg;
  return best;
}

inline std::array<double, 3> cross3(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

inline double dot3(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

inline double norm3(const std::array<double, 3>& a) { return std::sqrt(dot3(a, a)); }

// Unit-sphere arc between chart points; atan2 keeps full precision near 0 and pi.
inline double sphere_arc(const ManifoldSpec& s, const ChartPoint& x, const ChartPoint& y) {
  const auto a = sphere_unit3(s, x), b = sphere_unit3(s, y);
  return std::atan2(norm3(cross3(a, b)), dot3(a, b));
}

// Cheap metric-scale gap usable for any pair: exact for flat torus and sphere,
// within a factor e^{|amplitude|} for the conformal torus.
inline double metric_proxy(const ManifoldSpec& s, const ChartPoint& x, const ChartPoint& y) {
  if (is_torus(s)) {
    const Vec2 t = wrap(s, y).c - wrap(s, x).c;
    return std::sqrt(flat_translate_min_sq(s, t));
  }
  return s.radius * sphere_arc(s, x, y);
}

// Push a chart velocity at p into R^3 (unit-sphere embedding differential).
inline std::array<double, 3> sphere_push3(const ManifoldSpec& s, const ChartPoint& p, const Vec2& v) {
  if (p.chart == Chart::Main) {
    const double st = std::sin(p.c.x), ct = std::cos(p.c.x);
    const double sp = std::sin(p.c.y), cp = std::cos(p.c.y);
    return {v.x * ct * cp - v.y * st * sp, v.x * ct * sp + v.y * st * cp, -v.x * st};
  }
  const double rho = norm(p.c);
  if (rho < 1e-9) {
    return {v.x, v.y, 0.0};  // pole: horizontal differential, either hemisphere
  }
  auto [pm, vm] = change_chart(s, p, v, Chart::Main);
  return sphere_push3(s, pm, vm);
}

}  // namespace detail

inline double analytic_distance(const ManifoldSpec& s, const ChartPoint& x, const ChartPoint& y) {
  if (!has_analytic(s))
    throw UsageError("no analytic distance formula for the conformal torus with nonzero amplitude");
  validate_point(s, x);
  validate_point(s, y);
  if (is_torus(s)) {
    const Vec2 t = wrap(s, y).c - wrap(s, x).c;
    return std::sqrt(detail::flat_translate_min_sq(s, t));
  }
  return s.radius * detail::sphere_arc(s, x, y);
}

inline TangentVector analytic_direction(const ManifoldSpec& s, const ChartPoint& x,
                                        const ChartPoint& y) {
  if (!has_analytic(s)) throw UsageError("no analytic direction for the conformal torus");
  if (is_torus(s)) {
    const ChartPoint wx = wrap(s, x);
    const Vec2 t = wrap(s, y).c - wx.c;
    Vec2 chord;
    const double dsq = detail::flat_translate_min_sq(s, t, &chord);
    if (!(dsq > 0.0)) throw UsageError("direction between coincident points is undefined");
    return {wx, chord * (1.0 / std::sqrt(dsq)), true};
  }
  const ChartPoint wx = wrap(s, x);
  const auto a = sphere_unit3(s, wx), b = sphere_unit3(s, y);
  const double c = detail::dot3(a, b);
  std::array<double, 3> w{b[0] - c * a[0], b[1] - c * a[1], b[2] - c * a[2]};
  const double n = detail::norm3(w);
  if (!(n > 1e-14)) throw UsageError("direction undefined (coincident or antipodal sphere points)");
  for (auto& e : w) e /= n;
  // Solve for chart components of the unit tangent whose push-forward is w/R.
  if (wx.chart == Chart::Main) {
    const double st = std::sin(wx.c.x);
    const auto etheta = detail::sphere_push3(s, wx, {1.0, 0.0});
    const double a1 = detail::dot3(w, etheta) / s.radius;
    const double a2 = (w[1] * std::cos(wx.c.y) - w[0] * std::sin(wx.c.y)) / (st * s.radius);
    return {wx, {a1, a2}, true};
  }
  const double rho = norm(wx.c);
  if (rho < 1e-9) return {wx, {w[0] / s.radius, w[1] / s.radius}, true};
  // solve in main-chart coordinates (st > 0 off the pole), then pull the
  // components back; recursing through wrap() would re-enter the pole band
  const ChartPoint mx = detail::sphere_to_main(wx);
  const double st = std::sin(mx.c.x);
  const auto etheta = detail::sphere_push3(s, mx, {1.0, 0.0});
  const double a1 = detail::dot3(w, etheta) / s.radius;
  const double a2 = (w[1] * std::cos(mx.c.y) - w[0] * std::sin(mx.c.y)) / (st * s.radius);
  auto [pp, vv] = change_chart(s, mx, {a1, a2}, wx.chart);
  (void)pp;
  return {wx, vv, true};
}

// ---------------------------------------------------------------------------
// Shooting: multistart over initial angles, bisection on the signed transverse
// miss at closest approach, then a foot-of-perpendicular refinement.

namespace detail {

struct RaySample {
  Vec2 q;
  Chart chart;
  Vec2 vel;
  double s;
};

struct RayScan {
  double best_gap = std::numeric_limits<double>::infinity();
  RaySample best;
  double miss_sign = 0.0;
};

inline std::vector<RaySample> integrate_ray(const ManifoldSpec& s, const ChartPoint& x,
                                            const Vec2& dir, double total, const StepControl& ctl) {
  const double h0 = effective_step(s, ctl);
  const long steps = std::max(1L, (long)std::ceil(total / h0));
  const double h = total / double(steps);
  std::vector<RaySample> out;
  out.reserve(steps + 1);
  ChartPoint q = x;
  Vec2 vel = dir;
  out.push_back({q.c, q.chart, vel, 0.0});
  for (long i = 0; i < steps; ++i) {
    rk4_step(s, q.chart, q.c, vel, h);
    auto ns = normalize_flow_state(s, {q.c, q.chart}, vel);
    q = ns.first;
    vel = ns.second;
    out.push_back({q.c, q.chart, vel, h * double(i + 1)});
  }
  return out;
}

// Signed side of y relative to the oriented ray at its closest sample.
inline double transverse_sign(const ManifoldSpec& s, const RaySample& c, const ChartPoint& y) {
  if (is_torus(s)) {
    const Vec2 raw = wrap(s, y).c - c.q;
    const Vec2 d{raw.x - std::nearbyint(raw.x), raw.y - std::nearbyint(raw.y)};
    return cross(c.vel, d) > 0.0 ? 1.0 : (cross(c.vel, d) < 0.0 ? -1.0 : 0.0);
  }
  const auto p3 = sphere_unit3(s, {c.q, c.chart});
  const auto t3 = sphere_push3(s, {c.q, c.chart}, c.vel);
  const double m = dot3(cross3(p3, t3), sphere_unit3(s, y));
  return m > 0.0 ? 1.0 : (m < 0.0 ? -1.0 : 0.0);
}

inline RayScan scan_ray(const ManifoldSpec& s, const ChartPoint& x, const Vec2& dir, double total,
                        const ChartPoint& y, const StepControl& ctl) {
  RayScan r;
  auto samples = integrate_ray(s, x, dir, total, ctl);
  for (const auto& smp : samples) {
    const double gap = metric_proxy(s, {smp.q, smp.chart}, y);
    if (gap < r.best_gap) {
      r.best_gap = gap;
      r.best = smp;
    }
  }
  r.miss_sign = transverse_sign(s, r.best, y);
  return r;
}

}  // namespace detail

struct ShootResult {
  double distance = 0.0;
  TangentVector direction;
  double residual_gap = 0.0;  // proxy gap between the shot endpoint and the target
};

inline ShootResult shoot_minimizing(const ManifoldSpec& s, const ChartPoint& x_in,
                                    const ChartPoint& y_in, double shooting_tol,
                                    const StepControl& ctl) {
  const ChartPoint x = wrap(s, x_in), y = wrap(s, y_in);
  const double proxy = detail::metric_proxy(s, x, y);
  if (proxy < 1e-13) throw UsageError("shooting between coincident points is undefined");
  const double amp = (s.family == Family::ConformalTorus) ? std::abs(s.amplitude) : 0.0;
  const double lower = proxy * std::exp(-amp);
  if (lower >= s.injrad_bound)
    throw OutOfRangeError("pair separation is at or beyond the injectivity radius bound");
  const double upper = std::min(proxy * std::exp(amp) * 1.05 + 4.0 * detail::effective_step(s, ctl),
                                s.injrad_bound * 1.02);

  const auto frame = orthonormal_frame(s, x);
  auto dir_of = [&](double psi) { return frame[0] * std::cos(psi) + frame[1] * std::sin(psi); };

  constexpr int kStarts = 64;
  std::array<detail::RayScan, kStarts> scans;
  for (int i = 0; i < kStarts; ++i)
    scans[i] = detail::scan_ray(s, x, dir_of(2.0 * M_PI * i / kStarts), upper, y, ctl);

  struct Bracket {
    double lo, hi, key;
  };
  std::vector<Bracket> brackets;
  for (int i = 0; i < kStarts; ++i) {
    const auto& a = scans[i];
    const auto& b = scans[(i + 1) % kStarts];
    if (a.miss_sign == 0.0 || a.miss_sign != b.miss_sign) {
      brackets.push_back({2.0 * M_PI * i / kStarts, 2.0 * M_PI * (i + 1) / kStarts,
                          std::min(a.best_gap, b.best_gap)});
    }
  }
  std::sort(brackets.begin(), brackets.end(),
            [](const Bracket& a, const Bracket& b) { return a.key < b.key; });
  if (brackets.size() > 4) brackets.resize(4);
  if (brackets.empty()) throw OutOfRangeError("shooting found no transverse sign change");

  std::optional<ShootResult> best;
  for (const auto& br : brackets) {
    double lo = br.lo, hi = br.hi;
    double sign_lo = detail::scan_ray(s, x, dir_of(lo), upper, y, ctl).miss_sign;
    detail::RayScan mid_scan;
    double mid = 0.5 * (lo + hi);
    for (int it = 0; it < 64 && (hi - lo) > shooting_tol; ++it) {
      mid = 0.5 * (lo + hi);
      mid_scan = detail::scan_ray(s, x, dir_of(mid), upper, y, ctl);
      if (mid_scan.miss_sign == 0.0) break;
      if (mid_scan.miss_sign == sign_lo)
        lo = mid;
      else
        hi = mid;
    }
    mid = 0.5 * (lo + hi);
    mid_scan = detail::scan_ray(s, x, dir_of(mid), upper, y, ctl);

    // Foot refinement: slide the arclength so the remaining offset to y is
    // g-orthogonal to the ray.
    const Vec2 dir = dir_of(mid);
    double sfoot = mid_scan.best.s;
    ChartPoint pt{mid_scan.best.q, mid_scan.best.chart};
    Vec2 vel = mid_scan.best.vel;
    for (int it = 0; it < 4; ++it) {
      double ds;
      if (is_torus(s)) {
        const Vec2 raw = wrap(s, y).c - pt.c;
        const Vec2 d{raw.x - std::nearbyint(raw.x), raw.y - std::nearbyint(raw.y)};
        ds = quad_form(metric_at(s, pt).g, d, vel);
      } else {
        const auto p3 = sphere_unit3(s, pt);
        auto t3 = detail::sphere_push3(s, pt, vel);
        for (auto& e : t3) e *= s.radius;  // unit tangent in R^3
        const auto y3 = sphere_unit3(s, y);
        ds = s.radius * std::atan2(detail::dot3(y3, t3), detail::dot3(y3, p3));
      }
      sfoot += ds;
      if (!(sfoot > 0.0)) {
        sfoot -= ds;
        break;
      }
      const GeodesicState st = geodesic_flow(s, x, {x, dir, true}, sfoot, ctl);
      pt = st.position;
      vel = st.velocity.comp;
      if (std::abs(ds) < 1e-13) break;
    }
    const double gap = detail::metric_proxy(s, pt, y);
    if (gap <= 1e-6 * (1.0 + sfoot)) {
      if (!best || sfoot < best->distance) best = ShootResult{sfoot, {x, dir, true}, gap};
    }
  }
  if (!best) throw OutOfRangeError("shooting failed to converge on a minimizing geodesic");
  if (best->distance >= s.injrad_bound * (1.0 + 1e-9))
    throw OutOfRangeError("shooting result exceeds the injectivity radius bound");
  return *best;
}

// ---------------------------------------------------------------------------
// Graph oracle

struct GraphEdge {
  int a = 0, b = 0;
  double length = 0.0;
};

struct DistanceGraph {
  std::vector<ChartPoint> nodes;
  std::vector<GraphEdge> edges;
  double spacing = 0.0;  // requested density
  long grid_n1 = 0, grid_n2 = 0;  // set for torus grids: node (i,j) at index i*n2+j
  // CSR adjacency, rebuilt by finalize()
  std::vector<int> adj_start;
  std::vector<std::pair<int, double>> adj;

  void finalize() {
    adj_start.assign(nodes.size() + 1, 0);
    for (const auto& e : edges) {
      ++adj_start[e.a + 1];
      ++adj_start[e.b + 1];
    }
    for (size_t i = 1; i < adj_start.size(); ++i) adj_start[i] += adj_start[i - 1];
    adj.assign(adj_start.back(), {});
    std::vector<int> cursor(adj_start.begin(), adj_start.end() - 1);
    for (const auto& e : edges) {
      adj[cursor[e.a]++] = {e.b, e.length};
      adj[cursor[e.b]++] = {e.a, e.length};
    }
  }
};

namespace detail {

// 8-point Gauss-Legendre on [0,1].
inline constexpr std::array<double, 8> kGL8X = {
    0.5 - 0.48014492824876812 , 0.5 - 0.39833323870681336, 0.5 - 0.26276620495816450,
    0.5 - 0.09171732124782490, 0.5 + 0.09171732124782490, 0.5 + 0.26276620495816450,
    0.5 + 0.39833323870681336, 0.5 + 0.48014492824876812};
inline constexpr std::array<double, 8> kGL8W = {
    0.05061426814518813 , 0.11119051722668724, 0.15685332293894364, 0.18134189168918099,
    0.18134189168918099, 0.15685332293894364, 0.11119051722668724, 0.05061426814518813};

inline double raw_segment_length(const ManifoldSpec& s, Chart chart, const Vec2& a, const Vec2& d) {
  double acc = 0.0;
  for (int i = 0; i < 8; ++i) {
    const Vec2 q = a + d * kGL8X[i];
    acc += kGL8W[i] * std::sqrt(std::max(0.0, quad_form(metric_raw(s, chart, q), d, d)));
  }
  return acc;
}

inline double sphere_colat(const ManifoldSpec& s, const ChartPoint& p) {
  if (p.chart == Chart::Main) return p.c.x;
  const double rho = norm(p.c);
  return p.chart == Chart::NorthPole ? rho : M_PI - rho;
}

// Express the straight chart segment between a and b in one chart; empty when
// no single chart holds both endpoints.
inline std::optional<std::tuple<Chart, Vec2, Vec2>> common_segment(const ManifoldSpec& s,
                                                                   const ChartPoint& a,
                                                                   const ChartPoint& b) {
  if (is_torus(s)) {
    const Vec2 raw = b.c - a.c;
    const Vec2 d{raw.x - std::nearbyint(raw.x), raw.y - std::nearbyint(raw.y)};
    return std::tuple{Chart::Main, a.c, d};
  }
  const double ta = sphere_colat(s, a), tb = sphere_colat(s, b);
  const double cap = kPoleChartMax - 0.01;
  if (ta < cap && tb < cap) {
    const ChartPoint pa = a.chart == Chart::NorthPole ? a : sphere_to_pole(sphere_to_main(a), Chart::NorthPole);
    const ChartPoint pb = b.chart == Chart::NorthPole ? b : sphere_to_pole(sphere_to_main(b), Chart::NorthPole);
    return std::tuple{Chart::NorthPole, pa.c, pb.c - pa.c};
  }
  if (ta > M_PI - cap && tb > M_PI - cap) {
    const ChartPoint pa = a.chart == Chart::SouthPole ? a : sphere_to_pole(sphere_to_main(a), Chart::SouthPole);
    const ChartPoint pb = b.chart == Chart::SouthPole ? b : sphere_to_pole(sphere_to_main(b), Chart::SouthPole);
    return std::tuple{Chart::SouthPole, pa.c, pb.c - pa.c};
  }
  if (ta > 1e-9 && tb > 1e-9 && ta < M_PI - 1e-9 && tb < M_PI - 1e-9) {
    const ChartPoint ma = sphere_to_main(a), mb = sphere_to_main(b);
    const double dphi = std::remainder(mb.c.y - ma.c.y, 2.0 * M_PI);
    return std::tuple{Chart::Main, ma.c, Vec2{mb.c.x - ma.c.x, dphi}};
  }
  return std::nullopt;
}

inline double segment_length(const ManifoldSpec& s, const ChartPoint& a, const ChartPoint& b) {
  const auto seg = common_segment(s, a, b);
  if (!seg) return std::numeric_limits<double>::infinity();
  const auto& [chart, origin, delta] = *seg;
  return raw_segment_length(s, chart, origin, delta);
}

}  // namespace detail

inline DistanceGraph build_graph(const ManifoldSpec& s, double density) {
  if (!(density > 0.0)) throw UsageError("graph density must be positive");
  if (density > s.injrad_bound / 5.0 + 1e-12)
    throw UsageError("graph density must not exceed injrad_bound / 5");
  DistanceGraph g;
  g.spacing = density;
  const double edge_r = kEdgeRadiusFactor * density;

  if (is_torus(s)) {
    const double l1 = norm(s.lattice_basis.col(0)), l2 = norm(s.lattice_basis.col(1));
    const long n1 = std::max(3L, std::lround(l1 / density));
    const long n2 = std::max(3L, std::lround(l2 / density));
    if (n1 * n2 > kGraphNodeCap) throw ResourceError("graph node cap exceeded");
    g.nodes.reserve(n1 * n2);
    g.grid_n1 = n1;
    g.grid_n2 = n2;
    for (long i = 0; i < n1; ++i)
      for (long j = 0; j < n2; ++j)
        g.nodes.push_back({{double(i) / double(n1), double(j) / double(n2)}, Chart::Main});
    // stencil of lattice offsets within the edge radius
    const long k1 = (long)std::ceil(edge_r / l1 * double(n1)) + 1;
    const long k2 = (long)std::ceil(edge_r / l2 * double(n2)) + 1;
    struct Off {
      long di, dj;
    };
    std::vector<Off> stencil;
    for (long di = 0; di <= k1; ++di)
      for (long dj = (di == 0 ? 1 : -k2); dj <= k2; ++dj) {
        const Vec2 t{double(di) / double(n1), double(dj) / double(n2)};
        const Vec2 w{t.x - std::nearbyint(t.x), t.y - std::nearbyint(t.y)};
        if (std::sqrt(quad_form(s.gram, w, w)) <= edge_r + 1e-12) stencil.push_back({di, dj});
      }
    for (long i = 0; i < n1; ++i)
      for (long j = 0; j < n2; ++j) {
        const int a = int(i * n2 + j);
        for (const auto& o : stencil) {
          const long i2 = (i + o.di) % n1, j2 = ((j + o.dj) % n2 + n2) % n2;
          const int b = int(i2 * n2 + j2);
          if (b == a) continue;
          const double len = detail::segment_length(s, g.nodes[a], g.nodes[b]);
          // length cap trims only long diagonals under extreme conformal factors
          if (len <= 1.5 * edge_r) g.edges.push_back({std::min(a, b), std::max(a, b), len});
        }
      }
    // the stencil enumerates each undirected pair once except wrap collisions;
    // dedupe keeps the construction robust for tiny grids
    std::sort(g.edges.begin(), g.edges.end(), [](const GraphEdge& x, const GraphEdge& y) {
      return std::tie(x.a, x.b) < std::tie(y.a, y.b);
    });
    g.edges.erase(std::unique(g.edges.begin(), g.edges.end(),
                              [](const GraphEdge& x, const GraphEdge& y) {
                                return x.a == y.a && x.b == y.b;
                              }),
                  g.edges.end());
  } else {
    const double R = s.radius;
    const long nt = std::max(4L, (long)std::ceil(M_PI * R / density));
    const double dth = M_PI / double(nt);
    // node 0 / 1: the poles, then rings of constant colatitude
    g.nodes.push_back({{0.0, 0.0}, Chart::NorthPole});
    g.nodes.push_back({{0.0, 0.0}, Chart::SouthPole});
    std::vector<long> ring_start(nt), ring_count(nt);
    for (long i = 0; i < nt; ++i) {
      const double th = (double(i) + 0.5) * dth;
      const long m = std::max(1L, std::lround(2.0 * M_PI * R * std::sin(th) / density));
      ring_start[i] = (long)g.nodes.size();
      ring_count[i] = m;
      if ((long)g.nodes.size() + m > kGraphNodeCap) throw ResourceError("graph node cap exceeded");
      for (long j = 0; j < m; ++j)
        g.nodes.push_back(wrap(s, {{th, 2.0 * M_PI * double(j) / double(m)}, Chart::Main}));
    }
    std::vector<std::array<double, 3>> n3(g.nodes.size());
    for (size_t i = 0; i < g.nodes.size(); ++i) n3[i] = sphere_unit3(s, g.nodes[i]);
    const double cos_r = std::cos(std::min(edge_r / R, M_PI));
    auto try_edge = [&](int a, int b) {
      if (a >= b) return;
      if (detail::dot3(n3[a], n3[b]) < cos_r) return;
      const double len = detail::segment_length(s, g.nodes[a], g.nodes[b]);
      if (len <= 1.5 * edge_r) g.edges.push_back({a, b, len});
    };
    const long ring_span = (long)std::ceil(edge_r / (R * dth)) + 1;
    for (long i = 0; i < nt; ++i) {
      const double thi = (double(i) + 0.5) * dth;
      // pole stitches
      if (thi * R <= edge_r + R * dth)
        for (long j = 0; j < ring_count[i]; ++j) try_edge(0, int(ring_start[i] + j));
      if ((M_PI - thi) * R <= edge_r + R * dth)
        for (long j = 0; j < ring_count[i]; ++j) try_edge(1, int(ring_start[i] + j));
      for (long l = i; l < std::min(nt, i + ring_span + 1); ++l) {
        const double sl = std::min(std::sin(thi), std::sin((double(l) + 0.5) * dth));
        const long ml = ring_count[l];
        for (long j = 0; j < ring_count[i]; ++j) {
          const double phj = 2.0 * M_PI * double(j) / double(ring_count[i]);
          if (sl * R < edge_r * 2.0) {
            for (long k = 0; k < ml; ++k) try_edge(int(ring_start[i] + j), int(ring_start[l] + k));
          } else {
            const double win = edge_r / (R * sl) + 2.0 * M_PI / double(ml);
            const long kc = std::lround(phj / (2.0 * M_PI) * double(ml));
            const long kw = (long)std::ceil(win / (2.0 * M_PI) * double(ml)) + 1;
            for (long dk = -kw; dk <= kw; ++dk) {
              const long k = ((kc + dk) % ml + ml) % ml;
              try_edge(int(ring_start[i] + j), int(ring_start[l] + k));
            }
          }
        }
      }
    }
    std::sort(g.edges.begin(), g.edges.end(), [](const GraphEdge& x, const GraphEdge& y) {
      return std::tie(x.a, x.b) < std::tie(y.a, y.b);
    });
    g.edges.erase(std::unique(g.edges.begin(), g.edges.end(),
                              [](const GraphEdge& x, const GraphEdge& y) {
                                return x.a == y.a && x.b == y.b;
                              }),
                  g.edges.end());
  }
  g.finalize();
  return g;
}

inline void save_graph(const DistanceGraph& g, const ManifoldSpec& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ResourceError("cannot open graph cache file for writing: " + path);
  out << "riemnet-graph v1\n";
  out << "spec " << spec_hash(s) << "\n";
  out << "spacing " << fmt_double(g.spacing) << "\n";
  out << "nodes " << g.nodes.size() << "\n";
  for (const auto& n : g.nodes)
    out << "n " << chart_name(n.chart) << " " << fmt_double(n.c.x) << " " << fmt_double(n.c.y)
        << "\n";
  out << "edges " << g.edges.size() << "\n";
  for (const auto& e : g.edges)
    out << "e " << e.a << " " << e.b << " " << fmt_double(e.length) << "\n";
}

inline DistanceGraph load_graph(const ManifoldSpec& s, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ResourceError("cannot open graph cache file: " + path);
  std::string line;
  auto next = [&](const char* what) {
    if (!std::getline(in, line)) throw UsageError(std::string("graph cache truncated at ") + what);
    return std::istringstream(line);
  };
  next("header");
  if (line != "riemnet-graph v1") throw UsageError("unrecognized graph cache header");
  std::string tag, val;
  next("spec") >> tag >> val;
  if (tag != "spec" || val != spec_hash(s))
    throw UsageError("graph cache was built for a different manifold spec");
  DistanceGraph g;
  next("spacing") >> tag >> g.spacing;
  size_t nn = 0, ne = 0;
  next("nodes") >> tag >> nn;
  g.nodes.reserve(nn);
  for (size_t i = 0; i < nn; ++i) {
    std::string cname;
    double x, y;
    next("node") >> tag >> cname >> x >> y;
    Chart c;
    if (cname == "main") c = Chart::Main;
    else if (cname == "north") c = Chart::NorthPole;
    else if (cname == "south") c = Chart::SouthPole;
    else throw UsageError("graph cache has an unknown chart name: " + cname);
    g.nodes.push_back({{x, y}, c});
  }
  next("edges") >> tag >> ne;
  g.edges.reserve(ne);
  for (size_t i = 0; i < ne; ++i) {
    GraphEdge e;
    next("edge") >> tag >> e.a >> e.b >> e.length;
    g.edges.push_back(e);
  }
  if (is_torus(s) && !g.nodes.empty()) {
    long n2 = 0;
    while (n2 < (long)g.nodes.size() && g.nodes[n2].c.x == 0.0) ++n2;
    if (n2 > 0 && (long)g.nodes.size() % n2 == 0) {
      g.grid_n2 = n2;
      g.grid_n1 = (long)g.nodes.size() / n2;
    }
  }
  g.finalize();
  return g;
}

// ---------------------------------------------------------------------------
// Oracle front end

class DistanceOracle {
 public:
  DistanceOracle(ManifoldSpec spec, DistanceMethod method)
      : spec_(std::move(spec)), method_(method), ctl_(default_step_control(spec_)) {}

  const ManifoldSpec& spec() const { return spec_; }
  const DistanceMethod& method() const { return method_; }
  const StepControl& step_control() const { return ctl_; }

  void build() { graph_ = build_graph(spec_, method_.graph_density); }
  void adopt_graph(DistanceGraph g) { graph_ = std::move(g); }
  bool has_graph() const { return graph_.has_value(); }
  const DistanceGraph& graph() const {
    if (!graph_) throw UsageError("distance graph not yet built");
    return *graph_;
  }

  double distance(const ChartPoint& x, const ChartPoint& y) const {
    switch (method_.kind) {
      case MethodKind::Analytic:
        return analytic_distance(spec_, x, y);
      case MethodKind::Shooting: {
        if (detail::metric_proxy(spec_, x, y) < 1e-13) return 0.0;
        return shoot_minimizing(spec_, x, y, method_.shooting_tol, ctl_).distance;
      }
      case MethodKind::Graph:
        return graph_distance(x, y);
    }
    throw UsageError("unreachable method");
  }

  // One shared source expansion when the graph method is active.
  std::vector<double> distances_from(const ChartPoint& x, const std::vector<ChartPoint>& ys) const {
    std::vector<double> out(ys.size());
    if (method_.kind != MethodKind::Graph) {
      for (size_t i = 0; i < ys.size(); ++i) out[i] = distance(x, ys[i]);
      return out;
    }
    const auto sx = stubs(x);
    const Field f = run_dijkstra(sx, true);
    for (size_t i = 0; i < ys.size(); ++i) {
      out[i] = detail::metric_proxy(spec_, x, ys[i]) < 1e-13 ? 0.0 : smoothed(f, x, ys[i]);
    }
    return out;
  }

  TangentVector minimizing_direction(const ChartPoint& x, const ChartPoint& y) const {
    const double proxy = detail::metric_proxy(spec_, x, y);
    if (proxy < 1e-12) throw UsageError("minimizing direction undefined for coincident points");
    if (has_analytic(spec_) && method_.kind != MethodKind::Shooting) {
      const double d = analytic_distance(spec_, x, y);
      if (d >= spec_.injrad_bound * (1.0 + 1e-9))
        throw OutOfRangeError("pair beyond the injectivity radius bound");
      return analytic_direction(spec_, x, y);
    }
    // Shooting serves the conformal torus under any method: graph paths are
    // too coarse for the exp-map round-trip contract, and the operation is
    // only defined below the injectivity radius where shooting is valid.
    return shoot_minimizing(spec_, x, y, method_.shooting_tol, ctl_).direction;
  }

  // Raw multi-source distance field over graph nodes (no smoothing pass).
  struct Field {
    std::vector<double> dist;
    std::vector<int> parent;
  };

  std::vector<std::pair<int, double>> stubs(const ChartPoint& q) const {
    const auto& g = graph();
    std::vector<std::pair<int, double>> out;
    double r = kEdgeRadiusFactor * method_.graph_density;
    for (int round = 0; round < 4 && out.empty(); ++round, r *= 1.7) {
      if (g.grid_n1 > 0) {
        // torus grid: enumerate the index window around q directly
        const ChartPoint w = wrap(spec_, q);
        const double l1 = norm(spec_.lattice_basis.col(0)), l2 = norm(spec_.lattice_basis.col(1));
        const long ci = std::lround(w.c.x * double(g.grid_n1));
        const long cj = std::lround(w.c.y * double(g.grid_n2));
        const long k1 = std::min(g.grid_n1 / 2, (long)std::ceil(r / l1 * double(g.grid_n1)) + 1);
        const long k2 = std::min(g.grid_n2 / 2, (long)std::ceil(r / l2 * double(g.grid_n2)) + 1);
        for (long di = -k1; di <= k1; ++di)
          for (long dj = -k2; dj <= k2; ++dj) {
            const long i = ((ci + di) % g.grid_n1 + g.grid_n1) % g.grid_n1;
            const long j = ((cj + dj) % g.grid_n2 + g.grid_n2) % g.grid_n2;
            const int n = int(i * g.grid_n2 + j);
            if (detail::metric_proxy(spec_, w, g.nodes[n]) <= r)
              out.push_back({n, detail::segment_length(spec_, w, g.nodes[n])});
          }
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end(),
                              [](const auto& a, const auto& b) { return a.first == b.first; }),
                  out.end());
      } else {
        for (size_t i = 0; i < g.nodes.size(); ++i) {
          if (detail::metric_proxy(spec_, q, g.nodes[i]) <= r)
            out.push_back({int(i), detail::segment_length(spec_, q, g.nodes[i])});
        }
      }
    }
    if (out.empty()) throw ResourceError("query point found no nearby graph nodes");
    return out;
  }

  Field run_dijkstra(const std::vector<std::pair<int, double>>& seeds, bool want_parents) const {
    const auto& g = graph();
    Field f;
    f.dist.assign(g.nodes.size(), std::numeric_limits<double>::infinity());
    if (want_parents) f.parent.assign(g.nodes.size(), -1);
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<Item>> pq;
    for (const auto& [n, d] : seeds) {
      if (d < f.dist[n]) {
        f.dist[n] = d;
        pq.push({d, n});
      }
    }
    while (!pq.empty()) {
      const auto [d, n] = pq.top();
      pq.pop();
      if (d > f.dist[n]) continue;
      for (int k = g.adj_start[n]; k < g.adj_start[n + 1]; ++k) {
        const auto& [m, w] = g.adj[k];
        const double nd = d + w;
        if (nd < f.dist[m]) {
          f.dist[m] = nd;
          if (want_parents) f.parent[m] = n;
          pq.push({nd, m});
        }
      }
    }
    return f;
  }

  double field_value(const Field& f, const ChartPoint& q) const {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [n, d] : stubs(q)) best = std::min(best, f.dist[n] + d);
    return best;
  }

  // Smoothed point-to-point value through a single-source field rooted at x.
  double smoothed(const Field& f, const ChartPoint& x, const ChartPoint& y) const {
    const auto& g = graph();
    const auto sy = stubs(y);
    double raw = std::numeric_limits<double>::infinity();
    int entry = -1;
    for (const auto& [n, d] : sy) {
      if (f.dist[n] + d < raw) {
        raw = f.dist[n] + d;
        entry = n;
      }
    }
    if (entry < 0) return raw;
    std::vector<ChartPoint> path;
    path.push_back(y);
    for (int n = entry; n >= 0; n = f.parent[n]) path.push_back(g.nodes[n]);
    path.push_back(x);
    std::reverse(path.begin(), path.end());  // x ... y
    return std::min(raw, smooth_polyline(path));
  }

  // Shortcut pass: dynamic program over chords between nearby path vertices.
  double smooth_polyline(const std::vector<ChartPoint>& pts) const {
    const double chord_cap = kChordFactor * method_.graph_density;
    const size_t n = pts.size();
    std::vector<double> dp(n, std::numeric_limits<double>::infinity());
    dp[0] = 0.0;
    for (size_t j = 1; j < n; ++j) {
      const size_t lo = j > size_t(kSmoothWindow) ? j - kSmoothWindow : 0;
      for (size_t i = lo; i < j; ++i) {
        if (dp[i] == std::numeric_limits<double>::infinity()) continue;
        if (i + 1 != j && detail::metric_proxy(spec_, pts[i], pts[j]) > chord_cap) continue;
        const double w = detail::segment_length(spec_, pts[i], pts[j]);
        if (dp[i] + w < dp[j]) dp[j] = dp[i] + w;
      }
    }
    return dp[n - 1];
  }

 private:
  double graph_distance(const ChartPoint& x, const ChartPoint& y) const {
    if (detail::metric_proxy(spec_, x, y) < 1e-13) return 0.0;
    const Field f = run_dijkstra(stubs(x), true);
    return smoothed(f, x, y);
  }

  ManifoldSpec spec_;
  DistanceMethod method_;
  StepControl ctl_;
  std::optional<DistanceGraph> graph_;
};

// Stateless entry point matching the module interface; graph queries need the
// stateful oracle that owns a built graph.
inline double distance(const ManifoldSpec& s, const ChartPoint& x, const ChartPoint& y,
                       const DistanceMethod& m) {
  if (m.kind == MethodKind::Graph)
    throw UsageError("graph distance requires a DistanceOracle with a built graph");
  DistanceOracle o(s, m);
  return o.distance(x, y);
}

inline TangentVector minimizing_direction(const ManifoldSpec& s, const ChartPoint& x,
                                          const ChartPoint& y, const DistanceMethod& m) {
  DistanceOracle o(s, m);
  return o.minimizing_direction(x, y);
}

}  // namespace riemnet

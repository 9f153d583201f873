#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "riemnet/distance.hpp"
#include "riemnet/geodesic.hpp"

namespace riemnet {

// A point of the blown-up configuration space: either an off-diagonal pair
// (x, y) or a diagonal point (x, v) carrying the limit direction.
struct BlowupPoint {
  ChartPoint base;
  std::optional<TangentVector> direction;
  std::optional<ChartPoint> partner;
};

inline BlowupPoint blowup_on_diagonal(const ManifoldSpec& s, const ChartPoint& p,
                                      const TangentVector& v) {
  if (!same_point(v.base, p)) throw UsageError("direction must be based at the blow-up point");
  const double n = g_norm(s, p, v.comp);
  if (std::abs(n - 1.0) > 1e-6) throw UsageError("blow-up direction must have unit g-norm");
  BlowupPoint b;
  b.base = p;
  b.direction = TangentVector{p, v.comp * (1.0 / n), true};
  return b;
}

inline BlowupPoint blowup_off_diagonal(const ManifoldSpec& s, const ChartPoint& x,
                                       const ChartPoint& y) {
  if (detail::metric_proxy(s, x, y) < 1e-13)
    throw UsageError("off-diagonal blow-up point needs distinct points");
  BlowupPoint b;
  b.base = x;
  b.partner = y;
  return b;
}

namespace detail {

inline void check_working_region(const ManifoldSpec& s, double d_xz) {
  if (d_xz > 0.5 * s.injrad_bound + 1e-12)
    throw OutOfRangeError("base-to-reference distance exceeds half the injectivity radius bound");
}

// Re-express q in `chart` when the transition is valid; the probe needs the
// offset point back in the original chart for the coordinate-copy transport.
inline ChartPoint point_in_chart(const ManifoldSpec& s, const ChartPoint& q, Chart chart) {
  if (q.chart == chart || is_torus(s)) return q;
  if (chart == Chart::Main) return sphere_to_main(q);
  const ChartPoint m = q.chart == Chart::Main ? q : sphere_to_main(q);
  const double rho = chart == Chart::NorthPole ? m.c.x : M_PI - m.c.x;
  if (rho >= kPoleChartMax) throw ChartDomainError("offset point left the probe's chart");
  return sphere_to_pole(m, chart);
}

}  // namespace detail

inline double u_of_s(const ManifoldSpec& s, const ChartPoint& p, const TangentVector& v,
                     const ChartPoint& z, double s_param, DistanceOracle& oracle,
                     const StepControl& ctl) {
  if (!same_point(v.base, p)) throw UsageError("u_of_s velocity must be based at p");
  const double speed = g_norm(s, p, v.comp);
  if (std::abs(speed - 1.0) > 1e-6) throw UsageError("u_of_s expects a unit tangent");
  detail::check_working_region(s, oracle.distance(p, z));
  if (std::abs(s_param) > 0.25 * s.injrad_bound + 1e-12)
    throw OutOfRangeError("|s| exceeds a quarter of the injectivity radius bound");
  if (s_param == 0.0) return oracle.distance(p, z);
  const Vec2 dir = s_param > 0.0 ? v.comp : v.comp * -1.0;
  const GeodesicState g = geodesic_flow(s, p, {p, dir, true}, std::abs(s_param), ctl);
  return oracle.distance(g.position, z);
}

struct VariationRecord {
  double delta_s = 0.0;
  double fd_slope = 0.0;
  double analytic_slope = 0.0;
  double abs_error = 0.0;
};

// cos of the angle at p between v and the minimizing direction to z, without
// the acos/cos round trip (both vectors are unit).
inline double cos_alpha(const ManifoldSpec& s, const ChartPoint& p, const TangentVector& v,
                        const ChartPoint& z, DistanceOracle& oracle) {
  const TangentVector dir = oracle.minimizing_direction(p, z);
  // the oracle reports the direction at the wrapped representative of p,
  // which may live in a different chart near the sphere's pole bands
  Vec2 dc = dir.comp;
  if (dir.base.chart != p.chart) dc = change_chart(s, dir.base, dir.comp, p.chart).second;
  return std::clamp(quad_form(metric_at(s, p).g, v.comp, dc), -1.0, 1.0);
}

inline std::vector<VariationRecord> first_variation_table(const ManifoldSpec& s,
                                                          const ChartPoint& p,
                                                          const TangentVector& v,
                                                          const ChartPoint& z,
                                                          const std::vector<double>& deltas,
                                                          DistanceOracle& oracle,
                                                          const StepControl& ctl) {
  if (detail::metric_proxy(s, p, z) < 1e-13)
    throw UsageError("first variation angle is undefined at z = p");
  const double u0 = u_of_s(s, p, v, z, 0.0, oracle, ctl);
  const double slope = -cos_alpha(s, p, v, z, oracle);
  std::vector<VariationRecord> out;
  out.reserve(deltas.size());
  for (const double ds : deltas) {
    if (!(ds > 0.0)) throw UsageError("first variation deltas must be positive");
    const double fd = (u_of_s(s, p, v, z, ds, oracle, ctl) - u0) / ds;
    out.push_back({ds, fd, slope, std::abs(fd - slope)});
  }
  return out;
}

inline double F_off_diagonal(const ManifoldSpec& s, const ChartPoint& x, const ChartPoint& y,
                             const ChartPoint& z, DistanceOracle& oracle) {
  const double dxy = oracle.distance(x, y);
  if (!(dxy > kCoincidenceTol)) throw UsageError("F is undefined for coincident x, y");
  const double dxz = oracle.distance(x, z);
  detail::check_working_region(s, dxz);
  return std::abs(dxz - oracle.distance(y, z)) / dxy;
}

inline double F_blowup(const ManifoldSpec& s, const ChartPoint& x, const TangentVector& v,
                       const ChartPoint& z, DistanceOracle& oracle) {
  if (detail::metric_proxy(s, x, z) < 1e-13) throw UsageError("F blow-up is undefined at z = x");
  detail::check_working_region(s, oracle.distance(x, z));
  const double c = cos_alpha(s, x, v, z, oracle);
  return std::abs(c);
}

inline double blowup_value(const ManifoldSpec& s, const BlowupPoint& b, const ChartPoint& z,
                           DistanceOracle& oracle) {
  if (b.direction) return F_blowup(s, b.base, *b.direction, z, oracle);
  if (b.partner) return F_off_diagonal(s, b.base, *b.partner, z, oracle);
  throw UsageError("blow-up point carries neither a direction nor a partner");
}

struct ProbeStep {
  double offset = 0.0;
  double error = 0.0;
};

// Walks x_k = exp_p(delta_k w), y_k = exp_{x_k}(delta_k v_k) down a dyadic
// offset ladder and compares F(x_k, y_k, z) with the blown-up value F((p,v),z).
// By default w is the g-orthogonal complement of v (sign fixed to a positive
// second chart component); pass offset_dir to probe along another direction,
// e.g. along v itself for the exactly-cancelling collinear configuration.
inline std::vector<ProbeStep> continuity_probe(const ManifoldSpec& s, const ChartPoint& p,
                                               const TangentVector& v, const ChartPoint& z,
                                               int n_steps, DistanceOracle& oracle,
                                               const StepControl& ctl,
                                               const std::optional<Vec2>& offset_dir = std::nullopt) {
  if (n_steps < 3) throw UsageError("continuity probe needs at least 3 steps");
  if (detail::metric_proxy(s, p, z) < 1e-13) throw UsageError("probe target z must differ from p");
  detail::check_working_region(s, oracle.distance(p, z));
  const double base_value = F_blowup(s, p, v, z, oracle);

  Vec2 w;
  if (offset_dir) {
    w = *offset_dir;
    const double n = g_norm(s, p, w);
    if (!(n > 0.0)) throw UsageError("offset direction must be nonzero");
    w = w * (1.0 / n);
  } else {
    w = orthogonal_unit(s, p, v.comp);
    if (w.y < 0.0 || (w.y == 0.0 && w.x < 0.0)) w = w * -1.0;
  }

  std::vector<ProbeStep> out;
  out.reserve(n_steps);
  for (int k = 1; k <= n_steps; ++k) {
    const double delta = std::ldexp(s.injrad_bound / 10.0, -k);
    ChartPoint xk = exp_map(s, p, {p, w * delta, false}, ctl);
    xk = detail::point_in_chart(s, xk, p.chart);
    const Vec2 vk = unit_tangent(s, xk, v.comp).comp;
    const ChartPoint yk = exp_map(s, xk, {xk, vk * delta, false}, ctl);
    const double fk = F_off_diagonal(s, xk, yk, z, oracle);
    out.push_back({delta, std::abs(fk - base_value)});
  }
  return out;
}

}  // namespace riemnet

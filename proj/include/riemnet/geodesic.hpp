#pragma once

#include <cmath>
#include <utility>

#include "riemnet/manifold.hpp"

namespace riemnet {

struct StepControl {
  double max_step = 0.01;
  double tolerance = 1e-10;
};

inline StepControl default_step_control(const ManifoldSpec& s) {
  return {0.02 * s.injrad_bound, 1e-10};
}

struct GeodesicState {
  ChartPoint position;
  TangentVector velocity;  // based at position
  double arclength = 0.0;
};

namespace detail {

struct PhaseDeriv {
  Vec2 dq;
  Vec2 dv;
};

inline PhaseDeriv geodesic_rhs(const ManifoldSpec& s, Chart chart, const Vec2& q, const Vec2& v) {
  const Christoffel G = christoffel_at(s, {q, chart});
  Vec2 acc;
  for (int k = 0; k < 2; ++k) {
    double a = 0.0;
    a += G.gamma[k][0][0] * v.x * v.x;
    a += 2.0 * G.gamma[k][0][1] * v.x * v.y;
    a += G.gamma[k][1][1] * v.y * v.y;
    (k == 0 ? acc.x : acc.y) = -a;
  }
  return {v, acc};
}

// One classical RK4 step; all four stage evaluations share the start chart.
inline void rk4_step(const ManifoldSpec& s, Chart chart, Vec2& q, Vec2& v, double h) {
  const PhaseDeriv k1 = geodesic_rhs(s, chart, q, v);
  const PhaseDeriv k2 = geodesic_rhs(s, chart, q + k1.dq * (0.5 * h), v + k1.dv * (0.5 * h));
  const PhaseDeriv k3 = geodesic_rhs(s, chart, q + k2.dq * (0.5 * h), v + k2.dv * (0.5 * h));
  const PhaseDeriv k4 = geodesic_rhs(s, chart, q + k3.dq * h, v + k3.dv * h);
  q = q + (k1.dq + (k2.dq + k3.dq) * 2.0 + k4.dq) * (h / 6.0);
  v = v + (k1.dv + (k2.dv + k3.dv) * 2.0 + k4.dv) * (h / 6.0);
}

// Pull the state back into the canonical chart region, transporting the
// velocity through the transition differential. Torus wrapping is a chart
// translation (identity differential).
inline std::pair<ChartPoint, Vec2> normalize_flow_state(const ManifoldSpec& s, const ChartPoint& p,
                                                        const Vec2& vel) {
  if (is_torus(s)) return {wrap(s, p), vel};
  if (p.chart != Chart::Main) {
    const double rho = norm(p.c);
    if (rho < kPoleBand) return {p, vel};
    if (!(rho < kPoleChartMax))
      throw ChartDomainError("geodesic step escaped the pole chart validity disk");
    auto [pm, vm] = change_chart(s, p, vel, Chart::Main);
    return {{{pm.c.x, wrap_angle_2pi(pm.c.y)}, Chart::Main}, vm};
  }
  const double theta = p.c.x;
  if (!(theta > 0.0 && theta < M_PI))
    throw ChartDomainError("geodesic step crossed a pole without entering the pole chart");
  ChartPoint q{{theta, wrap_angle_2pi(p.c.y)}, Chart::Main};
  if (theta < kPoleBand) return change_chart(s, q, vel, Chart::NorthPole);
  if (theta > M_PI - kPoleBand) return change_chart(s, q, vel, Chart::SouthPole);
  return {q, vel};
}

inline double effective_step(const ManifoldSpec& s, const StepControl& ctl) {
  if (!(ctl.max_step > 0.0) || !(ctl.tolerance > 0.0))
    throw UsageError("step control requires positive max_step and tolerance");
  if (ctl.max_step > 0.05 * s.injrad_bound + 1e-15)
    throw UsageError("max_step exceeds 0.05 * injrad_bound");
  // RK4 global error ~ h^4, so h ~ tolerance^(1/4); the extra injectivity cap
  // keeps one step well inside a chart band on small spheres.
  return std::min({ctl.max_step, std::pow(ctl.tolerance, 0.25), 0.02 * s.injrad_bound});
}

}  // namespace detail

inline GeodesicState geodesic_flow(const ManifoldSpec& s, const ChartPoint& p,
                                   const TangentVector& v, double arc, const StepControl& ctl) {
  if (!same_point(v.base, p)) throw UsageError("geodesic_flow: velocity not based at start point");
  if (!(arc >= 0.0)) throw UsageError("geodesic_flow: arclength must be nonnegative");
  validate_point(s, p);

  auto [q, vel] = detail::normalize_flow_state(s, p, v.comp);
  if (arc == 0.0) return {q, {q, vel, v.unit}, 0.0};

  const double speed = g_norm(s, q, vel);
  if (speed < 1e-15) return {q, {q, vel, v.unit}, 0.0};  // stationary

  // h0 is an arclength budget per step; the parameter step is h0/speed so a
  // non-unit velocity (homogeneity check) sees the same spatial resolution.
  const double h0 = detail::effective_step(s, ctl);
  const long steps = std::max(1L, (long)std::ceil(arc * speed / h0));
  const double h = arc / double(steps);

  double done = 0.0;
  try {
    for (long i = 0; i < steps; ++i) {
      detail::rk4_step(s, q.chart, q.c, vel, h);
      done = h * double(i + 1);
      auto norm_state = detail::normalize_flow_state(s, {q.c, q.chart}, vel);
      q = norm_state.first;
      vel = norm_state.second;
    }
  } catch (const ChartDomainError& e) {
    throw ChartDomainError(std::string(e.what()) + " (integrated arclength " +
                           fmt_double(done * speed) + " of " + fmt_double(arc * speed) + ")");
  }
  return {q, {q, vel, v.unit}, arc * speed};
}

inline ChartPoint exp_map(const ManifoldSpec& s, const ChartPoint& p, const TangentVector& v,
                          const StepControl& ctl) {
  if (!same_point(v.base, p)) throw UsageError("exp_map: vector not based at the given point");
  validate_point(s, p);
  const double len = g_norm(s, p, v.comp);
  if (len == 0.0) return detail::normalize_flow_state(s, p, v.comp).first;
  TangentVector unit{p, v.comp * (1.0 / len), true};
  return geodesic_flow(s, p, unit, len, ctl).position;
}

// Chart-coordinate gap between two points, for residual reporting. Points are
// compared in a common chart; torus differences are taken modulo the lattice.
inline double chart_gap(const ManifoldSpec& s, const ChartPoint& a, const ChartPoint& b) {
  if (is_torus(s)) {
    const ChartPoint wa = wrap(s, a), wb = wrap(s, b);
    double best = std::numeric_limits<double>::infinity();
    for (int i = -1; i <= 1; ++i)
      for (int j = -1; j <= 1; ++j)
        best = std::min(best, norm(wb.c - wa.c + Vec2{double(i), double(j)}));
    return best;
  }
  const ChartPoint wa = wrap(s, a), wb = wrap(s, b);
  if (wa.chart == wb.chart) {
    if (wa.chart == Chart::Main) {
      const double dphi = std::remainder(wb.c.y - wa.c.y, 2.0 * M_PI);
      return norm(Vec2{wb.c.x - wa.c.x, dphi});
    }
    return norm(wb.c - wa.c);
  }
  // mixed charts: express b in a's chart when possible, else via main
  try {
    auto [b_in_a, ignored] = change_chart(s, wb, Vec2{0, 0}, wa.chart);
    (void)ignored;
    if (wa.chart != Chart::Main && !(norm(b_in_a.c) < kPoleChartMax))
      throw ChartDomainError("outside pole disk");
    if (wa.chart == Chart::Main) {
      const double dphi = std::remainder(b_in_a.c.y - wa.c.y, 2.0 * M_PI);
      return norm(Vec2{b_in_a.c.x - wa.c.x, dphi});
    }
    return norm(b_in_a.c - wa.c);
  } catch (const ChartDomainError&) {
    const ChartPoint ma = detail::sphere_to_main(wa), mb = detail::sphere_to_main(wb);
    const double dphi = std::remainder(mb.c.y - ma.c.y, 2.0 * M_PI);
    return norm(Vec2{mb.c.x - ma.c.x, dphi});
  }
}

inline double homogeneity_residual(const ManifoldSpec& s, const ChartPoint& p,
                                   const TangentVector& v, double t, double arc,
                                   const StepControl& ctl) {
  if (!(t > 0.0)) throw UsageError("homogeneity_residual: t must be positive");
  const double speed = g_norm(s, p, v.comp);
  if (t * arc * speed > s.injrad_bound + 1e-12)
    throw UsageError("homogeneity_residual: t*s exceeds injrad_bound");
  TangentVector tv{p, v.comp * t, false};
  const GeodesicState a = geodesic_flow(s, p, tv, arc, ctl);
  const GeodesicState b = geodesic_flow(s, p, v, t * arc, ctl);
  return chart_gap(s, a.position, b.position);
}

}  // namespace riemnet

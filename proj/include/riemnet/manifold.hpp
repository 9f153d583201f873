#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>

#include "riemnet/core.hpp"

namespace riemnet {

enum class Family : std::uint8_t { FlatTorus, Sphere, ConformalTorus };

inline const char* family_name(Family f) {
  switch (f) {
    case Family::FlatTorus: return "flat_torus";
    case Family::Sphere: return "sphere";
    case Family::ConformalTorus: return "conformal_torus";
  }
  return "?";
}

inline Family family_from_name(const std::string& s) {
  if (s == "flat_torus") return Family::FlatTorus;
  if (s == "sphere") return Family::Sphere;
  if (s == "conformal_torus") return Family::ConformalTorus;
  throw UsageError("unknown manifold family: " + s);
}

// Sphere chart layout: the main chart is (colatitude, longitude) with
// colatitude in (0, pi); two azimuthal pole charts (u, v) = rho*(cos phi,
// sin phi) take over inside the pole bands. Torus charts are lattice
// coordinates in [0,1)^2; tangent components live in the lattice basis and
// the constant Gram matrix B^T B carries the geometry.
inline constexpr double kPoleBand = 0.2;       // wrap() switches charts here
inline constexpr double kPoleChartMax = 0.35;  // pole chart validity radius
inline constexpr double kAmplitudeCap = 0.2;   // conformal factor stays e^{+-0.4}-equivalent to flat
inline constexpr double kChristoffelFdStep = 1e-5;

struct ManifoldSpec {
  Family family = Family::FlatTorus;
  Mat2 lattice_basis = Mat2::identity();  // columns are lattice generators
  double radius = 1.0;                    // sphere only
  double amplitude = 0.0;                 // conformal torus only
  int frequency = 1;                      // conformal torus only
  double injrad_bound = 0.5;              // validated lower bound on global injectivity radius

  // Cached torus quantities (set by the factories).
  Mat2 gram = Mat2::identity();
  Mat2 gram_inv = Mat2::identity();
  double shortest_vector = 1.0;  // length of the shortest nonzero lattice vector
};

namespace detail {

inline double shortest_lattice_vector(const Mat2& basis, int range, int* argmax_abs_k = nullptr) {
  double best = std::numeric_limits<double>::infinity();
  int best_abs = 0;
  for (int i = -range; i <= range; ++i) {
    for (int j = -range; j <= range; ++j) {
      if (i == 0 && j == 0) continue;
      const double len = norm(basis * Vec2{double(i), double(j)});
      if (len < best) {
        best = len;
        best_abs = std::max(std::abs(i), std::abs(j));
      }
    }
  }
  if (argmax_abs_k) *argmax_abs_k = best_abs;
  return best;
}

inline void validate_lattice(const Mat2& basis) {
  const double b0 = norm(basis.col(0)), b1 = norm(basis.col(1));
  if (!(b0 > 0.0) || !(b1 > 0.0) || std::abs(basis.det()) < 1e-9 * b0 * b1)
    throw UsageError("lattice basis is singular or near-singular");
  int abs_k = 0;
  const double lambda1 = shortest_lattice_vector(basis, 4, &abs_k);
  if (abs_k > 1)
    throw UsageError("lattice basis is too far from reduced (shortest vector outside the +-1 box)");
  const double diag = std::max(norm(basis.col(0) + basis.col(1)), norm(basis.col(0) - basis.col(1)));
  if (diag > 2.5 * lambda1)
    throw UsageError("lattice conditioning rejected: fundamental domain diameter exceeds 2.5x shortest vector");
}

}  // namespace detail

inline ManifoldSpec make_flat_torus(const Mat2& basis = Mat2::identity()) {
  detail::validate_lattice(basis);
  ManifoldSpec s;
  s.family = Family::FlatTorus;
  s.lattice_basis = basis;
  s.gram = basis.transpose() * basis;
  s.gram_inv = inverse(s.gram);
  s.shortest_vector = detail::shortest_lattice_vector(basis, 4);
  s.injrad_bound = 0.5 * s.shortest_vector;
  return s;
}

inline ManifoldSpec make_sphere(double radius) {
  if (!(radius > 0.0)) throw UsageError("sphere radius must be positive");
  ManifoldSpec s;
  s.family = Family::Sphere;
  s.radius = radius;
  s.injrad_bound = M_PI * radius;
  return s;
}

// injrad_override, when given, must be a positive lower bound no larger than
// the default conservative one; it exists for experiments that want a
// smaller working region.
inline ManifoldSpec make_conformal_torus(const Mat2& basis, double amplitude, int frequency,
                                         std::optional<double> injrad_override = std::nullopt) {
  detail::validate_lattice(basis);
  if (!(std::abs(amplitude) <= kAmplitudeCap))
    throw UsageError("conformal amplitude exceeds the 0.2 cap");
  if (frequency < 1) throw UsageError("conformal frequency must be a positive integer");
  ManifoldSpec s;
  s.family = Family::ConformalTorus;
  s.lattice_basis = basis;
  s.amplitude = amplitude;
  s.frequency = frequency;
  s.gram = basis.transpose() * basis;
  s.gram_inv = inverse(s.gram);
  s.shortest_vector = detail::shortest_lattice_vector(basis, 4);
  const double conservative = 0.5 * s.shortest_vector * std::exp(-2.0 * kAmplitudeCap);
  if (injrad_override) {
    if (!(*injrad_override > 0.0) || *injrad_override > conservative)
      throw UsageError("injrad override must lie in (0, conservative bound]");
    s.injrad_bound = *injrad_override;
  } else {
    s.injrad_bound = conservative;
  }
  return s;
}

inline bool is_torus(const ManifoldSpec& s) { return s.family != Family::Sphere; }

// FNV-1a over the canonical parameter string; keys graph/net caches.
inline std::string spec_hash(const ManifoldSpec& s) {
  std::string repr = family_name(s.family);
  auto add = [&repr](double v) {
    repr += '|';
    repr += fmt_double(v);
  };
  if (is_torus(s)) {
    add(s.lattice_basis.a);
    add(s.lattice_basis.b);
    add(s.lattice_basis.c);
    add(s.lattice_basis.d);
  } else {
    add(s.radius);
  }
  if (s.family == Family::ConformalTorus) {
    add(s.amplitude);
    add(double(s.frequency));
  }
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : repr) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Chart validity and wrapping

inline void validate_point(const ManifoldSpec& s, const ChartPoint& p) {
  if (!std::isfinite(p.c.x) || !std::isfinite(p.c.y)) throw ChartDomainError("non-finite chart coordinates");
  if (is_torus(s)) {
    if (p.chart != Chart::Main) throw ChartDomainError("torus families use the main chart only");
    return;
  }
  if (p.chart == Chart::Main) {
    if (!(p.c.x > 0.0 && p.c.x < M_PI))
      throw ChartDomainError("sphere main chart requires colatitude in (0, pi)");
  } else {
    if (!(norm(p.c) < kPoleChartMax)) throw ChartDomainError("pole chart point outside validity radius");
  }
}

namespace detail {

inline double wrap_unit(double t) {
  double r = t - std::floor(t);
  if (r >= 1.0) r -= 1.0;  // guards t = -tiny rounding to 1.0
  return r;
}

inline double wrap_angle_2pi(double a) {
  double r = a - 2.0 * M_PI * std::floor(a / (2.0 * M_PI));
  if (r >= 2.0 * M_PI) r -= 2.0 * M_PI;
  return r;
}

// Sphere transition maps. Pole charts use (u, v) = rho (cos phi, sin phi)
// with rho = colatitude (north) or pi - colatitude (south).
inline ChartPoint sphere_to_main(const ChartPoint& p) {
  if (p.chart == Chart::Main) return p;
  const double rho = norm(p.c);
  const double phi = (rho == 0.0) ? 0.0 : std::atan2(p.c.y, p.c.x);
  const double theta = (p.chart == Chart::NorthPole) ? rho : M_PI - rho;
  return {{theta, wrap_angle_2pi(phi)}, Chart::Main};
}

inline ChartPoint sphere_to_pole(const ChartPoint& p_main, Chart pole) {
  const double theta = p_main.c.x, phi = p_main.c.y;
  const double rho = (pole == Chart::NorthPole) ? theta : M_PI - theta;
  return {{rho * std::cos(phi), rho * std::sin(phi)}, pole};
}

}  // namespace detail

// Canonical main-chart (colatitude, longitude) representation; useful for
// reporting. Pole points map to theta = 0 / pi with longitude 0.
inline ChartPoint to_main_chart(const ManifoldSpec& s, const ChartPoint& p) {
  if (is_torus(s) || p.chart == Chart::Main) return p;
  return detail::sphere_to_main(p);
}

inline ChartPoint wrap(const ManifoldSpec& s, const ChartPoint& p) {
  if (is_torus(s)) return {{detail::wrap_unit(p.c.x), detail::wrap_unit(p.c.y)}, Chart::Main};

  if (p.chart != Chart::Main) {
    const double rho = norm(p.c);
    if (rho < kPoleBand) return p;  // stay in the pole chart
    ChartPoint main = detail::sphere_to_main(p);
    return wrap(s, main);
  }
  double theta = p.c.x, phi = p.c.y;
  // Reflect through the poles so wrap is total.
  if (theta < 0.0) {
    theta = -theta;
    phi += M_PI;
  }
  if (theta > M_PI) {
    theta = 2.0 * M_PI - theta;
    phi += M_PI;
  }
  phi = detail::wrap_angle_2pi(phi);
  if (theta < kPoleBand) return detail::sphere_to_pole({{theta, phi}, Chart::Main}, Chart::NorthPole);
  if (theta > M_PI - kPoleBand) return detail::sphere_to_pole({{theta, phi}, Chart::Main}, Chart::SouthPole);
  return {{theta, phi}, Chart::Main};
}

// Re-express point and velocity in `target`; Jacobians of the transition maps
// carry the velocity.
inline std::pair<ChartPoint, Vec2> change_chart(const ManifoldSpec& s, const ChartPoint& p,
                                                const Vec2& vel, Chart target) {
  if (is_torus(s) || p.chart == target) return {p, vel};
  if (p.chart != Chart::Main && target != Chart::Main) {
    auto [mid, vmid] = change_chart(s, p, vel, Chart::Main);
    return change_chart(s, mid, vmid, target);
  }
  if (p.chart == Chart::Main) {
    const double theta = p.c.x, phi = p.c.y;
    const double cphi = std::cos(phi), sphi = std::sin(phi);
    const double rho = (target == Chart::NorthPole) ? theta : M_PI - theta;
    const double sgn = (target == Chart::NorthPole) ? 1.0 : -1.0;
    // u = rho cos phi, v = rho sin phi, drho = sgn * dtheta
    Vec2 w{sgn * cphi * vel.x - rho * sphi * vel.y, sgn * sphi * vel.x + rho * cphi * vel.y};
    return {detail::sphere_to_pole(p, target), w};
  }
  // pole -> main
  const double rho = norm(p.c);
  if (rho == 0.0) throw ChartDomainError("cannot express a pole point in the main chart");
  const double u = p.c.x, v = p.c.y;
  const double drho = (u * vel.x + v * vel.y) / rho;
  const double dphi = (u * vel.y - v * vel.x) / (rho * rho);
  const double sgn = (p.chart == Chart::NorthPole) ? 1.0 : -1.0;
  return {detail::sphere_to_main(p), Vec2{sgn * drho, dphi}};
}

// ---------------------------------------------------------------------------
// Metric tensor

struct MetricSample {
  ChartPoint point;
  Mat2 g;
  Mat2 g_inv;
};

namespace detail {

// (sin^2 rho - rho^2)/rho^4 and its derivative in s = rho^2; analytic at 0.
inline double pole_h(double s) {
  if (s < 0.04) {
    return -1.0 / 3.0 + s * (2.0 / 45.0 + s * (-1.0 / 315.0 + s * (2.0 / 14175.0 - s * (2.0 / 467775.0))));
  }
  const double rho = std::sqrt(s);
  const double sr = std::sin(rho);
  return (sr * sr - s) / (s * s);
}

inline double pole_h_prime(double s) {
  if (s < 0.04) {
    return 2.0 / 45.0 + s * (-2.0 / 315.0 + s * (6.0 / 14175.0 - s * (8.0 / 467775.0)));
  }
  const double rho = std::sqrt(s);
  const double sr = std::sin(rho);
  // d/ds sin^2(sqrt s) = sin(2 rho) / (2 rho)
  const double dsin2 = std::sin(2.0 * rho) / (2.0 * rho);
  return ((dsin2 - 1.0) * s * s - (sr * sr - s) * 2.0 * s) / (s * s * s * s);
}

inline double conformal_log_factor(const ManifoldSpec& s, const Vec2& t) {
  const double w = 2.0 * M_PI * double(s.frequency);
  return s.amplitude * std::sin(w * t.x) * std::sin(w * t.y);
}

inline Mat2 pole_quadratic(const Vec2& c) {
  // A = [[v^2, -uv], [-uv, u^2]]
  return {c.y * c.y, -c.x * c.y, -c.x * c.y, c.x * c.x};
}

}  // namespace detail

namespace detail {

// Metric evaluation without chart-domain validation. The chart formulas are
// smooth on a neighbourhood of the valid region (torus metrics are periodic,
// the sphere formulas extend), which integrators and quadrature exploit.
inline Mat2 metric_raw(const ManifoldSpec& s, Chart chart, const Vec2& c) {
  switch (s.family) {
    case Family::FlatTorus:
      return s.gram;
    case Family::ConformalTorus:
      return s.gram * std::exp(2.0 * conformal_log_factor(s, c));
    case Family::Sphere: {
      const double r2 = s.radius * s.radius;
      if (chart == Chart::Main) {
        const double st = std::sin(c.x);
        return Mat2::diag(r2, r2 * st * st);
      }
      return (Mat2::identity() + pole_quadratic(c) * pole_h(norm_sq(c))) * r2;
    }
  }
  throw UsageError("unreachable family");
}

}  // namespace detail

inline MetricSample metric_at(const ManifoldSpec& s, const ChartPoint& p) {
  validate_point(s, p);
  switch (s.family) {
    case Family::FlatTorus:
      return {p, s.gram, s.gram_inv};
    case Family::ConformalTorus: {
      const double f = std::exp(2.0 * detail::conformal_log_factor(s, p.c));
      return {p, s.gram * f, s.gram_inv * (1.0 / f)};
    }
    case Family::Sphere: {
      const Mat2 g = detail::metric_raw(s, p.chart, p.c);
      if (p.chart == Chart::Main) {
        const double r2 = s.radius * s.radius;
        const double st = std::sin(p.c.x);
        return {p, g, Mat2::diag(1.0 / r2, 1.0 / (r2 * st * st))};
      }
      return {p, g, inverse(g)};
    }
  }
  throw UsageError("unreachable family");
}

// ---------------------------------------------------------------------------
// Christoffel symbols, gamma[k][i][j], symmetric in (i, j)

struct Christoffel {
  double gamma[2][2][2] = {};
};

namespace detail {

// dg[l] = partial_l g
inline Christoffel assemble_christoffel(const Mat2& g_inv, const std::array<Mat2, 2>& dg) {
  auto entry = [&](const Mat2& m, int i, int j) -> double {
    return i == 0 ? (j == 0 ? m.a : m.b) : (j == 0 ? m.c : m.d);
  };
  Christoffel out;
  for (int k = 0; k < 2; ++k)
    for (int i = 0; i < 2; ++i)
      for (int j = i; j < 2; ++j) {
        double sum = 0.0;
        for (int l = 0; l < 2; ++l) {
          const double term =
              entry(dg[j], i, l) + entry(dg[i], j, l) - entry(dg[l], i, j);
          sum += 0.5 * entry(g_inv, l, k) * term;
        }
        out.gamma[k][i][j] = sum;
        out.gamma[k][j][i] = sum;
      }
  return out;
}

inline std::array<Mat2, 2> sphere_metric_derivatives(const ManifoldSpec& s, const ChartPoint& p) {
  const double r2 = s.radius * s.radius;
  if (p.chart == Chart::Main) {
    const double st = std::sin(p.c.x), ct = std::cos(p.c.x);
    // the metric is independent of phi; Mat2{} would default to the identity
    return {Mat2::diag(0.0, 2.0 * r2 * st * ct), Mat2::diag(0.0, 0.0)};
  }
  const double u = p.c.x, v = p.c.y;
  const double s2 = u * u + v * v;
  const double h = pole_h(s2), hp = pole_h_prime(s2);
  const Mat2 a = pole_quadratic(p.c);
  const Mat2 da_du{0.0, -v, -v, 2.0 * u};
  const Mat2 da_dv{2.0 * v, -u, -u, 0.0};
  Mat2 d0 = (a * (hp * 2.0 * u) + da_du * h) * r2;
  Mat2 d1 = (a * (hp * 2.0 * v) + da_dv * h) * r2;
  // zero the derivative matrices for family FlatTorus pattern: none needed
  return {d0, d1};
}

}  // namespace detail

inline Christoffel christoffel_at(const ManifoldSpec& s, const ChartPoint& p) {
  validate_point(s, p);
  switch (s.family) {
    case Family::FlatTorus:
      return {};
    case Family::Sphere: {
      const MetricSample m = metric_at(s, p);
      return detail::assemble_christoffel(m.g_inv, detail::sphere_metric_derivatives(s, p));
    }
    case Family::ConformalTorus: {
      // Central differences of the metric; the conformal factor has no
      // closed-form Christoffel table here.
      const double h = kChristoffelFdStep;
      const MetricSample m = metric_at(s, p);
      std::array<Mat2, 2> dg;
      for (int axis = 0; axis < 2; ++axis) {
        Vec2 e = axis == 0 ? Vec2{h, 0.0} : Vec2{0.0, h};
        const Mat2 gp = metric_at(s, {p.c + e, p.chart}).g;
        const Mat2 gm = metric_at(s, {p.c - e, p.chart}).g;
        dg[axis] = (gp - gm) * (1.0 / (2.0 * h));
      }
      return detail::assemble_christoffel(m.g_inv, dg);
    }
  }
  throw UsageError("unreachable family");
}

// ---------------------------------------------------------------------------
// Inner products, norms, angles

inline void require_same_base(const TangentVector& v, const TangentVector& w) {
  if (!same_point(v.base, w.base)) throw UsageError("tangent vectors have mismatched base points");
}

inline double inner(const ManifoldSpec& s, const ChartPoint& p, const TangentVector& v,
                    const TangentVector& w) {
  if (!same_point(v.base, p) || !same_point(w.base, p))
    throw UsageError("tangent vectors not based at the given point");
  return quad_form(metric_at(s, p).g, v.comp, w.comp);
}

inline double g_norm(const ManifoldSpec& s, const ChartPoint& p, const Vec2& comp) {
  const Mat2 g = metric_at(s, p).g;
  return std::sqrt(std::max(0.0, quad_form(g, comp, comp)));
}

inline TangentVector unit_tangent(const ManifoldSpec& s, const ChartPoint& p, const Vec2& comp) {
  const double n = g_norm(s, p, comp);
  if (!(n > 1e-15)) throw UsageError("cannot normalize a zero tangent vector");
  return {p, comp * (1.0 / n), true};
}

inline double angle_between(const ManifoldSpec& s, const ChartPoint& p, const TangentVector& v,
                            const TangentVector& w) {
  if (!same_point(v.base, p) || !same_point(w.base, p))
    throw UsageError("tangent vectors not based at the given point");
  const Mat2 g = metric_at(s, p).g;
  const double nv = std::sqrt(std::max(0.0, quad_form(g, v.comp, v.comp)));
  const double nw = std::sqrt(std::max(0.0, quad_form(g, w.comp, w.comp)));
  if (!(nv > 1e-15) || !(nw > 1e-15)) throw UsageError("angle of a zero tangent vector is undefined");
  const double c = std::clamp(quad_form(g, v.comp, w.comp) / (nv * nw), -1.0, 1.0);
  return std::acos(c);
}

// g-orthonormal frame at p: e0 along the first chart axis, e1 completing a
// positively oriented pair. Deterministic.
inline std::array<Vec2, 2> orthonormal_frame(const ManifoldSpec& s, const ChartPoint& p) {
  const Mat2 g = metric_at(s, p).g;
  Vec2 e0{1.0, 0.0};
  e0 = e0 * (1.0 / std::sqrt(quad_form(g, e0, e0)));
  Vec2 e1{0.0, 1.0};
  const double proj = quad_form(g, e0, e1);
  e1 = e1 - e0 * proj;
  e1 = e1 * (1.0 / std::sqrt(quad_form(g, e1, e1)));
  return {e0, e1};
}

// Unit vector g-orthogonal to v with positive orientation (det(v, w) > 0).
inline Vec2 orthogonal_unit(const ManifoldSpec& s, const ChartPoint& p, const Vec2& v) {
  const Mat2 g = metric_at(s, p).g;
  const double nv2 = quad_form(g, v, v);
  if (!(nv2 > 1e-30)) throw UsageError("orthogonal complement of a zero vector is undefined");
  Vec2 w{-v.y, v.x};  // euclidean rotation as a seed
  const double proj = quad_form(g, v, w) / nv2;
  w = w - v * proj;
  const double nw = std::sqrt(quad_form(g, w, w));
  w = w * (1.0 / nw);
  if (cross(v, w) < 0.0) w = -w;
  return w;
}

// ---------------------------------------------------------------------------
// Embedding of sphere charts into R^3 (used by analytic sphere formulas)

inline std::array<double, 3> sphere_unit3(const ManifoldSpec& s, const ChartPoint& p) {
  if (s.family != Family::Sphere) throw UsageError("sphere_unit3 requires a sphere spec");
  const ChartPoint m = to_main_chart(s, p);
  if (p.chart == Chart::Main) {
    const double st = std::sin(m.c.x), ct = std::cos(m.c.x);
    return {st * std::cos(m.c.y), st * std::sin(m.c.y), ct};
  }
  // Evaluate directly from pole coordinates; smooth through the pole itself.
  const double rho = norm(p.c);
  const double f = rho < 1e-8 ? 1.0 - rho * rho / 6.0 : std::sin(rho) / rho;
  const double z = std::cos(rho);
  if (p.chart == Chart::NorthPole) return {f * p.c.x, f * p.c.y, z};
  return {f * p.c.x, f * p.c.y, -z};
}

// ---------------------------------------------------------------------------
// Uniform sampling (area-uniform for sphere, chart-uniform for torus families)

inline ChartPoint sample_point(const ManifoldSpec& s, Rng& rng) {
  if (is_torus(s)) return {{rng.uniform(), rng.uniform()}, Chart::Main};
  const double z = 1.0 - 2.0 * rng.uniform();
  const double theta = std::acos(std::clamp(z, -1.0, 1.0));
  const double phi = 2.0 * M_PI * rng.uniform();
  return wrap(s, {{theta, phi}, Chart::Main});
}

inline TangentVector sample_unit_tangent(const ManifoldSpec& s, const ChartPoint& p, Rng& rng) {
  const auto frame = orthonormal_frame(s, p);
  const double psi = 2.0 * M_PI * rng.uniform();
  Vec2 u = frame[0] * std::cos(psi) + frame[1] * std::sin(psi);
  return {p, u, true};
}

// Generous upper bound on the diameter; gates absurd epsilon requests.
inline double diameter_bound(const ManifoldSpec& s) {
  switch (s.family) {
    case Family::Sphere:
      return M_PI * s.radius;
    case Family::FlatTorus:
      return norm(s.lattice_basis.col(0)) + norm(s.lattice_basis.col(1));
    case Family::ConformalTorus:
      return std::exp(std::abs(s.amplitude)) *
             (norm(s.lattice_basis.col(0)) + norm(s.lattice_basis.col(1)));
  }
  throw UsageError("unreachable family");
}

}  // namespace riemnet

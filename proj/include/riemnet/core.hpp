#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <random>
#include <stdexcept>
#include <string>

namespace riemnet {

// Error taxonomy shared across the library.
struct ChartDomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct OutOfRangeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ResourceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  Vec2 operator-() const { return {-x, -y}; }
  Vec2& operator+=(const Vec2& o) {
    x += o.x;
    y += o.y;
    return *this;
  }
};

inline Vec2 operator*(double s, const Vec2& v) { return v * s; }
inline double dot(const Vec2& a, const Vec2& b) { return a.x * b.x + a.y * b.y; }
// 2D scalar cross product; sign gives orientation of b relative to a.
inline double cross(const Vec2& a, const Vec2& b) { return a.x * b.y - a.y * b.x; }
// hypot keeps axis-aligned norms exact, which downstream cancellation tests rely on.
inline double norm(const Vec2& v) { return std::hypot(v.x, v.y); }
inline double norm_sq(const Vec2& v) { return v.x * v.x + v.y * v.y; }

struct Mat2 {
  // Row-major entries.
  double a = 1.0, b = 0.0;
  double c = 0.0, d = 1.0;

  static Mat2 identity() { return {1.0, 0.0, 0.0, 1.0}; }
  static Mat2 diag(double p, double q) { return {p, 0.0, 0.0, q}; }
  static Mat2 columns(const Vec2& c0, const Vec2& c1) { return {c0.x, c1.x, c0.y, c1.y}; }

  Vec2 col(int j) const { return j == 0 ? Vec2{a, c} : Vec2{b, d}; }
  double det() const { return a * d - b * c; }
  Mat2 transpose() const { return {a, c, b, d}; }

  Vec2 operator*(const Vec2& v) const { return {a * v.x + b * v.y, c * v.x + d * v.y}; }
  Mat2 operator*(const Mat2& o) const {
    return {a * o.a + b * o.c, a * o.b + b * o.d, c * o.a + d * o.c, c * o.b + d * o.d};
  }
  Mat2 operator*(double s) const { return {a * s, b * s, c * s, d * s}; }
  Mat2 operator+(const Mat2& o) const { return {a + o.a, b + o.b, c + o.c, d + o.d}; }
  Mat2 operator-(const Mat2& o) const { return {a - o.a, b - o.b, c - o.c, d - o.d}; }
};

inline Mat2 inverse(const Mat2& m) {
  const double det = m.det();
  if (det == 0.0) throw UsageError("singular 2x2 matrix");
  const double inv = 1.0 / det;
  return {m.d * inv, -m.b * inv, -m.c * inv, m.a * inv};
}

// Quadratic form v^T M w for symmetric M.
inline double quad_form(const Mat2& m, const Vec2& v, const Vec2& w) {
  return v.x * (m.a * w.x + m.b * w.y) + v.y * (m.c * w.x + m.d * w.y);
}

enum class Chart : std::uint8_t { Main = 0, NorthPole = 1, SouthPole = 2 };

inline const char* chart_name(Chart c) {
  switch (c) {
    case Chart::Main: return "main";
    case Chart::NorthPole: return "north";
    case Chart::SouthPole: return "south";
  }
  return "?";
}

struct ChartPoint {
  Vec2 c;
  Chart chart = Chart::Main;
};

inline ChartPoint chart_point(double x, double y, Chart chart = Chart::Main) {
  return {{x, y}, chart};
}

struct TangentVector {
  ChartPoint base;
  Vec2 comp;
  bool unit = false;  // when set, callers promise |comp|_g = 1 within 1e-10
};

inline bool same_point(const ChartPoint& p, const ChartPoint& q, double tol = 1e-12) {
  return p.chart == q.chart && std::abs(p.c.x - q.c.x) <= tol && std::abs(p.c.y - q.c.y) <= tol;
}

// Deterministic RNG with an implementation-independent uniform mapping.
// std::uniform_real_distribution is not pinned by the standard, so we map
// mt19937_64 output to doubles ourselves to keep runs byte-reproducible.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::uint64_t bits() { return gen_(); }

 private:
  std::mt19937_64 gen_;
};

// Shortest printed form that round-trips a double; byte-stable across runs.
inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  // Prefer the shorter %.15g / %.16g spelling when it round-trips.
  for (int prec = 15; prec <= 16; ++prec) {
    char shorter[40];
    std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
    if (std::strtod(shorter, nullptr) == v) return shorter;
  }
  return buf;
}

}  // namespace riemnet

#pragma once

#include <array>
#include <limits>
#include <string>
#include <vector>

#include "riemnet/net.hpp"

namespace riemnet {

struct EmbeddedPoint {
  std::vector<double> coords;  // coords[i] = d(source, net point i)
  ChartPoint source;
  std::string net_id;
};

inline EmbeddedPoint embed(const ManifoldSpec& s, const Net& net, const ChartPoint& x,
                           DistanceOracle& oracle) {
  if (net.points.empty()) throw UsageError("cannot embed against an empty net");
  validate_point(s, x);
  EmbeddedPoint e;
  e.source = x;
  e.net_id = net_identifier(net);
  e.coords = oracle.distances_from(x, net.points);
  return e;
}

inline double linf_distance(const EmbeddedPoint& a, const EmbeddedPoint& b) {
  if (a.net_id != b.net_id || a.coords.size() != b.coords.size())
    throw UsageError("embedded points belong to different nets");
  double m = 0.0;
  for (size_t i = 0; i < a.coords.size(); ++i)
    m = std::max(m, std::abs(a.coords[i] - b.coords[i]));
  return m;
}

inline double pair_ratio(const ManifoldSpec& s, const Net& net, const ChartPoint& x,
                         const ChartPoint& y, DistanceOracle& oracle) {
  const double d = oracle.distance(x, y);
  if (!(d > kCoincidenceTol))
    throw UsageError("pair_ratio on a (numerically) coincident pair");
  const EmbeddedPoint ex = embed(s, net, x, oracle);
  const EmbeddedPoint ey = embed(s, net, y, oracle);
  return linf_distance(ex, ey) / d;
}

struct PairSample {
  ChartPoint x, y;
  double d = 0.0;
  double linf = 0.0;
  double ratio = 0.0;
  bool near_diagonal = false;
};

struct DistortionReport {
  double epsilon = 0.0;
  long pair_count = 0;
  double min_ratio = 1.0;
  std::pair<ChartPoint, ChartPoint> argmin_pair;
  std::array<long, 50> histogram{};
  // min over pairs with d <= epsilon/50; +infinity when no such pair was drawn
  double near_diagonal_min_ratio = std::numeric_limits<double>::infinity();
  std::vector<PairSample> samples;
};

inline DistortionReport distortion_scan(const ManifoldSpec& s, const Net& net, long n_pairs,
                                        double near_fraction, std::uint64_t rng_seed,
                                        DistanceOracle& oracle) {
  if (n_pairs < 1) throw UsageError("distortion_scan requires n_pairs >= 1");
  if (!(near_fraction >= 0.0 && near_fraction <= 1.0))
    throw UsageError("near_fraction must lie in [0, 1]");
  DistortionReport rep;
  rep.epsilon = net.epsilon;
  rep.samples.reserve(n_pairs);
  Rng rng(rng_seed);
  const long n_near = std::lround(near_fraction * double(n_pairs));
  const long n_uniform = n_pairs - n_near;
  const double delta = net.epsilon / 100.0;
  const double near_cut = net.epsilon / 50.0;
  const StepControl ctl = default_step_control(s);

  rep.min_ratio = std::numeric_limits<double>::infinity();
  auto record = [&](const ChartPoint& x, const ChartPoint& y) {
    const double d = oracle.distance(x, y);
    if (!(d > kCoincidenceTol)) return false;
    const EmbeddedPoint ex = embed(s, net, x, oracle);
    const EmbeddedPoint ey = embed(s, net, y, oracle);
    const double l = linf_distance(ex, ey);
    const double ratio = l / d;
    PairSample ps{x, y, d, l, ratio, d <= near_cut};
    rep.samples.push_back(ps);
    const int bin = std::min<long>(49, std::max<long>(0, (long)std::floor(ratio * 50.0)));
    ++rep.histogram[bin];
    if (ratio < rep.min_ratio) {
      rep.min_ratio = ratio;
      rep.argmin_pair = {x, y};
    }
    if (ps.near_diagonal && ratio < rep.near_diagonal_min_ratio)
      rep.near_diagonal_min_ratio = ratio;
    return true;
  };

  for (long i = 0; i < n_uniform; ++i) {
    const ChartPoint x = sample_point(s, rng);
    for (int attempt = 0; attempt < 100; ++attempt) {
      const ChartPoint y = sample_point(s, rng);
      if (record(x, y)) break;
      if (attempt == 99) throw ResourceError("could not draw a non-coincident uniform pair");
    }
  }
  for (long i = 0; i < n_near; ++i) {
    const ChartPoint x = sample_point(s, rng);
    const TangentVector u = sample_unit_tangent(s, x, rng);
    const ChartPoint y = exp_map(s, x, {x, u.comp * delta, false}, ctl);
    if (!record(x, y)) throw ResourceError("near-diagonal pair collapsed below tolerance");
  }
  rep.pair_count = (long)rep.samples.size();
  return rep;
}

inline double loop_pullback_length(const ManifoldSpec& s, const Net& net,
                                   const std::vector<ChartPoint>& loop, DistanceOracle& oracle) {
  if (loop.size() < 9 || !same_point(loop.front(), loop.back(), 1e-12))
    throw UsageError("loop must be closed (first = last) with at least 8 segments");
  std::vector<EmbeddedPoint> emb;
  emb.reserve(loop.size() - 1);
  for (size_t i = 0; i + 1 < loop.size(); ++i) emb.push_back(embed(s, net, loop[i], oracle));
  double total = 0.0;
  for (size_t i = 0; i + 1 < loop.size(); ++i) {
    const EmbeddedPoint& a = emb[i];
    const EmbeddedPoint& b = emb[(i + 1) % emb.size()];
    total += linf_distance(a, b);
  }
  return total;
}

}  // namespace riemnet

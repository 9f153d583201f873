#pragma once

#include <algorithm>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "riemnet/distance.hpp"

namespace riemnet {

struct Net {
  std::vector<ChartPoint> points;
  double epsilon = 0.0;
  std::string spec_hash;
  DistanceMethod built_with;
};

inline std::string net_identifier(const Net& n) {
  return n.spec_hash + "/" + fmt_double(n.epsilon) + "/" + std::to_string(n.points.size());
}

// Candidate grids are refined relative to epsilon; the graph-oracle path gets a
// finer grid and an inflated insertion threshold to absorb the oracle's
// one-sided overestimate without losing true epsilon-separation.
inline constexpr double kCandidateFactorAnalytic = 4.0;
inline constexpr double kCandidateFactorGraph = 6.0;
inline constexpr double kSeparationInflation = 1.04;

namespace detail {

inline std::vector<ChartPoint> torus_grid(const ManifoldSpec& s, double spacing) {
  const double stretch = std::exp(std::abs(s.amplitude));
  const double l1 = norm(s.lattice_basis.col(0)), l2 = norm(s.lattice_basis.col(1));
  const long m1 = std::max(2L, (long)std::ceil(l1 * stretch / spacing));
  const long m2 = std::max(2L, (long)std::ceil(l2 * stretch / spacing));
  if (m1 * m2 > kGraphNodeCap) throw ResourceError("candidate grid exceeds the node cap");
  std::vector<ChartPoint> out;
  out.reserve(m1 * m2);
  for (long i = 0; i < m1; ++i)
    for (long j = 0; j < m2; ++j)
      out.push_back({{double(i) / double(m1), double(j) / double(m2)}, Chart::Main});
  return out;
}

// Pole-chart origins first so the build seed is candidate 0.
inline std::vector<ChartPoint> sphere_grid(const ManifoldSpec& s, double spacing) {
  const double R = s.radius;
  const long nt = std::max(2L, (long)std::ceil(M_PI * R / spacing));
  std::vector<ChartPoint> out;
  out.push_back({{0.0, 0.0}, Chart::NorthPole});
  out.push_back({{0.0, 0.0}, Chart::SouthPole});
  const double dth = M_PI / double(nt);
  for (long i = 0; i < nt; ++i) {
    const double th = (double(i) + 0.5) * dth;
    const long m = std::max(1L, std::lround(2.0 * M_PI * R * std::sin(th) / spacing));
    if ((long)out.size() + m > kGraphNodeCap) throw ResourceError("candidate grid exceeds the node cap");
    for (long j = 0; j < m; ++j)
      out.push_back(wrap(s, {{th, 2.0 * M_PI * double(j) / double(m)}, Chart::Main}));
  }
  return out;
}

// Greedy farthest-point over torus candidates with analytic distances.
inline void torus_greedy_analytic(const ManifoldSpec& s, double eps,
                                  const std::vector<ChartPoint>& cand,
                                  std::vector<ChartPoint>& net) {
  std::vector<double> dist(cand.size(), std::numeric_limits<double>::infinity());
  auto absorb = [&](const ChartPoint& p) {
    for (size_t i = 0; i < cand.size(); ++i) {
      const double d = analytic_distance(s, p, cand[i]);
      if (d < dist[i]) dist[i] = d;
    }
  };
  if (net.empty()) {
    net.push_back(cand[0]);
    absorb(cand[0]);
  } else {
    for (const auto& p : net) absorb(p);
  }
  for (;;) {
    size_t best = 0;
    for (size_t i = 1; i < cand.size(); ++i)
      if (dist[i] > dist[best]) best = i;
    if (!(dist[best] >= eps)) break;
    net.push_back(cand[best]);
    absorb(cand[best]);
  }
}

// Sphere variant tracks the max dot product instead; the distance threshold
// eps maps monotonically to a dot threshold, so the argmax/tie order matches
// the distance formulation exactly.
inline void sphere_greedy(const ManifoldSpec& s, double eps, const std::vector<ChartPoint>& cand,
                          std::vector<ChartPoint>& net) {
  std::vector<std::array<double, 3>> c3(cand.size());
  for (size_t i = 0; i < cand.size(); ++i) c3[i] = sphere_unit3(s, cand[i]);
  std::vector<double> bdot(cand.size(), -2.0);
  auto absorb = [&](const ChartPoint& p) {
    const auto p3 = sphere_unit3(s, p);
    for (size_t i = 0; i < cand.size(); ++i) {
      const double d = dot3(p3, c3[i]);
      if (d > bdot[i]) bdot[i] = d;
    }
  };
  if (net.empty()) {
    net.push_back(cand[0]);
    absorb(cand[0]);
  } else {
    for (const auto& p : net) absorb(p);
  }
  const double ang = eps / s.radius;
  if (ang >= M_PI) return;  // nothing can be eps-separated from the seed
  const double dot_thresh = std::cos(ang);
  for (;;) {
    size_t best = 0;
    for (size_t i = 1; i < cand.size(); ++i)
      if (bdot[i] < bdot[best]) best = i;
    if (!(bdot[best] <= dot_thresh)) break;
    net.push_back(cand[best]);
    absorb(cand[best]);
  }
}

// Per-candidate stub lists let the greedy loop evaluate a Dijkstra field at
// every candidate cheaply.
struct CandStubs {
  std::vector<int> start;
  std::vector<std::pair<int, double>> flat;
};

inline CandStubs candidate_stubs(const DistanceOracle& o, const std::vector<ChartPoint>& cand) {
  CandStubs cs;
  cs.start.assign(cand.size() + 1, 0);
  std::vector<std::vector<std::pair<int, double>>> per(cand.size());
  for (size_t i = 0; i < cand.size(); ++i) per[i] = o.stubs(cand[i]);
  for (size_t i = 0; i < cand.size(); ++i) cs.start[i + 1] = cs.start[i] + int(per[i].size());
  cs.flat.reserve(cs.start.back());
  for (auto& v : per) cs.flat.insert(cs.flat.end(), v.begin(), v.end());
  return cs;
}

inline void torus_greedy_graph(const DistanceOracle& o, double eps,
                               const std::vector<ChartPoint>& cand, std::vector<ChartPoint>& net) {
  const CandStubs cs = candidate_stubs(o, cand);
  std::vector<double> raw(cand.size(), std::numeric_limits<double>::infinity());
  auto absorb = [&](const ChartPoint& p) {
    const auto f = o.run_dijkstra(o.stubs(p), false);
    for (size_t i = 0; i < cand.size(); ++i) {
      double v = raw[i];
      for (int k = cs.start[i]; k < cs.start[i + 1]; ++k)
        v = std::min(v, f.dist[cs.flat[k].first] + cs.flat[k].second);
      raw[i] = v;
    }
  };
  if (net.empty()) {
    net.push_back(cand[0]);
    absorb(cand[0]);
  } else {
    for (const auto& p : net) absorb(p);
  }
  const double thresh = kSeparationInflation * eps;
  for (;;) {
    size_t best = 0;
    for (size_t i = 1; i < cand.size(); ++i)
      if (raw[i] > raw[best]) best = i;
    if (!(raw[best] >= thresh)) break;
    net.push_back(cand[best]);
    absorb(cand[best]);
  }
}

// Multi-source Dijkstra that remembers which seed owns each node, so covering
// audits can recover a full polyline back to a net point.
struct OwnedField {
  std::vector<double> dist;
  std::vector<int> parent;
  std::vector<int> owner;
};

inline OwnedField owned_field(const DistanceOracle& o, const std::vector<ChartPoint>& sources) {
  const auto& g = o.graph();
  OwnedField f;
  f.dist.assign(g.nodes.size(), std::numeric_limits<double>::infinity());
  f.parent.assign(g.nodes.size(), -1);
  f.owner.assign(g.nodes.size(), -1);
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<Item>> pq;
  for (size_t si = 0; si < sources.size(); ++si) {
    for (const auto& [n, d] : o.stubs(sources[si])) {
      if (d < f.dist[n]) {
        f.dist[n] = d;
        f.owner[n] = int(si);
        f.parent[n] = -1;
        pq.push({d, n});
      }
    }
  }
  while (!pq.empty()) {
    const auto [d, n] = pq.top();
    pq.pop();
    if (d > f.dist[n]) continue;
    for (int k = g.adj_start[n]; k < g.adj_start[n + 1]; ++k) {
      const auto& [m, w] = g.adj[k];
      if (d + w < f.dist[m]) {
        f.dist[m] = d + w;
        f.parent[m] = n;
        f.owner[m] = f.owner[n];
        pq.push({d + w, m});
      }
    }
  }
  return f;
}

inline double owned_eval_raw(const DistanceOracle& o, const OwnedField& f, const ChartPoint& q,
                             int* entry = nullptr) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& [n, d] : o.stubs(q)) {
    if (f.dist[n] + d < best) {
      best = f.dist[n] + d;
      if (entry) *entry = n;
    }
  }
  return best;
}

inline double owned_eval_smoothed(const DistanceOracle& o, const OwnedField& f,
                                  const std::vector<ChartPoint>& sources, const ChartPoint& q) {
  int entry = -1;
  const double raw = owned_eval_raw(o, f, q, &entry);
  if (entry < 0 || f.owner[entry] < 0) return raw;
  std::vector<ChartPoint> path;
  path.push_back(q);
  for (int n = entry; n >= 0; n = f.parent[n]) path.push_back(o.graph().nodes[n]);
  path.push_back(sources[f.owner[entry]]);
  std::reverse(path.begin(), path.end());
  return std::min(raw, o.smooth_polyline(path));
}

}  // namespace detail

inline Net build_net(const ManifoldSpec& s, double epsilon, const DistanceMethod& method,
                     DistanceOracle* shared_oracle = nullptr) {
  if (!(epsilon > 0.0)) throw UsageError("net epsilon must be positive");
  Net net;
  net.epsilon = epsilon;
  net.spec_hash = spec_hash(s);
  net.built_with = method;
  const bool analytic = has_analytic(s);
  if (analytic) {
    if (is_torus(s)) {
      const auto cand = detail::torus_grid(s, epsilon / kCandidateFactorAnalytic);
      detail::torus_greedy_analytic(s, epsilon, cand, net.points);
    } else {
      const auto cand = detail::sphere_grid(s, epsilon / kCandidateFactorAnalytic);
      detail::sphere_greedy(s, epsilon, cand, net.points);
    }
    return net;
  }
  DistanceOracle local(s, method);
  DistanceOracle& o = shared_oracle ? *shared_oracle : local;
  if (!o.has_graph()) o.build();
  const auto cand = detail::torus_grid(s, epsilon / kCandidateFactorGraph);
  detail::torus_greedy_graph(o, epsilon, cand, net.points);
  return net;
}

// Greedy continuation at a finer epsilon; the result extends `base` in place
// order, so earlier nets are prefixes of later ones.
inline Net extend_net(const ManifoldSpec& s, const Net& base, double epsilon,
                      DistanceOracle* shared_oracle = nullptr) {
  if (!(epsilon > 0.0)) throw UsageError("net epsilon must be positive");
  if (epsilon > base.epsilon) throw UsageError("extension epsilon must refine the base net");
  if (base.points.empty()) throw UsageError("cannot extend an empty net");
  Net net;
  net.epsilon = epsilon;
  net.spec_hash = base.spec_hash;
  net.built_with = base.built_with;
  net.points = base.points;
  if (has_analytic(s)) {
    if (is_torus(s)) {
      const auto cand = detail::torus_grid(s, epsilon / kCandidateFactorAnalytic);
      detail::torus_greedy_analytic(s, epsilon, cand, net.points);
    } else {
      const auto cand = detail::sphere_grid(s, epsilon / kCandidateFactorAnalytic);
      detail::sphere_greedy(s, epsilon, cand, net.points);
    }
    return net;
  }
  DistanceOracle local(s, base.built_with);
  DistanceOracle& o = shared_oracle ? *shared_oracle : local;
  if (!o.has_graph()) o.build();
  const auto cand = detail::torus_grid(s, epsilon / kCandidateFactorGraph);
  detail::torus_greedy_graph(o, epsilon, cand, net.points);
  return net;
}

struct NetReport {
  double min_pairwise = std::numeric_limits<double>::infinity();
  double covering_radius = 0.0;
};

inline NetReport verify_net(const ManifoldSpec& s, const Net& net, const DistanceMethod& method,
                            DistanceOracle* shared_oracle = nullptr) {
  if (net.points.empty()) throw UsageError("cannot verify an empty net");
  NetReport r;
  const double eps = net.epsilon;
  const size_t n = net.points.size();

  if (has_analytic(s) && method.kind != MethodKind::Graph) {
    for (size_t i = 0; i < n; ++i)
      for (size_t j = i + 1; j < n; ++j)
        r.min_pairwise = std::min(r.min_pairwise, analytic_distance(s, net.points[i], net.points[j]));
    if (is_torus(s)) {
      const auto audit = detail::torus_grid(s, eps / 10.0);
      for (const auto& q : audit) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& p : net.points) best = std::min(best, analytic_distance(s, q, p));
        r.covering_radius = std::max(r.covering_radius, best);
      }
    } else {
      // theta-banded scan keeps the audit quadratic cost down
      const auto audit = detail::sphere_grid(s, eps / 10.0);
      std::vector<std::array<double, 3>> n3(n);
      std::vector<double> colat(n);
      for (size_t i = 0; i < n; ++i) {
        n3[i] = sphere_unit3(s, net.points[i]);
        colat[i] = std::acos(std::clamp(n3[i][2], -1.0, 1.0));
      }
      std::vector<size_t> order(n);
      for (size_t i = 0; i < n; ++i) order[i] = i;
      std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return colat[a] < colat[b]; });
      std::vector<double> sorted_colat(n);
      for (size_t i = 0; i < n; ++i) sorted_colat[i] = colat[order[i]];
      const double band = std::min(M_PI, 1.3 * eps / s.radius);
      for (const auto& q : audit) {
        const auto q3 = sphere_unit3(s, q);
        const double qc = std::acos(std::clamp(q3[2], -1.0, 1.0));
        const auto lo = std::lower_bound(sorted_colat.begin(), sorted_colat.end(), qc - band);
        const auto hi = std::upper_bound(sorted_colat.begin(), sorted_colat.end(), qc + band);
        double bdot = -2.0;
        for (auto it = lo; it != hi; ++it) bdot = std::max(bdot, detail::dot3(q3, n3[order[it - sorted_colat.begin()]]));
        if (bdot < -1.5) {
          for (size_t i = 0; i < n; ++i) bdot = std::max(bdot, detail::dot3(q3, n3[i]));
        }
        const double best = s.radius * std::acos(std::clamp(bdot, -1.0, 1.0));
        r.covering_radius = std::max(r.covering_radius, best);
      }
    }
    return r;
  }

  DistanceOracle local(s, method);
  DistanceOracle& o = shared_oracle ? *shared_oracle : local;
  if (!o.has_graph()) o.build();
  // pairwise: smooth only pairs whose raw value could bind the minimum
  for (size_t i = 0; i < n; ++i) {
    const auto f = o.run_dijkstra(o.stubs(net.points[i]), true);
    for (size_t j = i + 1; j < n; ++j) {
      double raw = std::numeric_limits<double>::infinity();
      for (const auto& [nd, d] : o.stubs(net.points[j])) raw = std::min(raw, f.dist[nd] + d);
      const double v = raw <= 1.3 * eps ? o.smoothed(f, net.points[i], net.points[j]) : raw;
      r.min_pairwise = std::min(r.min_pairwise, v);
    }
  }
  const auto f = detail::owned_field(o, net.points);
  const auto audit = detail::torus_grid(s, eps / 10.0);
  for (const auto& q : audit) {
    const double raw = detail::owned_eval_raw(o, f, q);
    const double v = raw > eps ? detail::owned_eval_smoothed(o, f, net.points, q) : raw;
    r.covering_radius = std::max(r.covering_radius, v);
  }
  return r;
}

inline std::pair<int, double> nearest_net_point(const ManifoldSpec& s, const Net& net,
                                                const ChartPoint& q, const DistanceMethod& method,
                                                DistanceOracle* shared_oracle = nullptr) {
  if (net.points.empty()) throw UsageError("nearest_net_point on an empty net");
  if (has_analytic(s) && method.kind != MethodKind::Graph) {
    int best = 0;
    double bd = analytic_distance(s, q, net.points[0]);
    for (size_t i = 1; i < net.points.size(); ++i) {
      const double d = analytic_distance(s, q, net.points[i]);
      if (d < bd) {
        bd = d;
        best = int(i);
      }
    }
    return {best, bd};
  }
  DistanceOracle local(s, method);
  DistanceOracle& o = shared_oracle ? *shared_oracle : local;
  if (!o.has_graph()) o.build();
  const auto f = o.run_dijkstra(o.stubs(q), true);
  std::vector<double> raw(net.points.size());
  double braw = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < net.points.size(); ++i) {
    raw[i] = std::numeric_limits<double>::infinity();
    for (const auto& [nd, d] : o.stubs(net.points[i])) raw[i] = std::min(raw[i], f.dist[nd] + d);
    braw = std::min(braw, raw[i]);
  }
  int best = -1;
  double bd = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < net.points.size(); ++i) {
    if (raw[i] > braw + 0.2 * net.epsilon) continue;  // cannot beat the leader after smoothing
    const double d = detail::metric_proxy(s, q, net.points[i]) < 1e-13
                         ? 0.0
                         : o.smoothed(f, q, net.points[i]);
    if (d < bd) {
      bd = d;
      best = int(i);
    }
  }
  return {best, bd};
}

inline void save_net(const Net& net, const ManifoldSpec& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ResourceError("cannot open net file for writing: " + path);
  out << family_name(s.family) << " " << fmt_double(net.epsilon) << " " << net.points.size()
      << "\n";
  for (const auto& p : net.points)
    out << chart_name(p.chart) << " " << fmt_double(p.c.x) << " " << fmt_double(p.c.y) << "\n";
}

inline Net load_net(const ManifoldSpec& s, const std::string& path, const DistanceMethod& method) {
  std::ifstream in(path);
  if (!in) throw ResourceError("cannot open net file: " + path);
  std::string fam;
  size_t count = 0;
  Net net;
  if (!(in >> fam >> net.epsilon >> count)) throw UsageError("malformed net file header");
  if (fam != family_name(s.family)) throw UsageError("net file family does not match the spec");
  net.spec_hash = spec_hash(s);
  net.built_with = method;
  net.points.reserve(count);
  for (size_t i = 0; i < count; ++i) {
    std::string cname;
    double x, y;
    if (!(in >> cname >> x >> y)) throw UsageError("net file truncated");
    Chart c;
    if (cname == "main") c = Chart::Main;
    else if (cname == "north") c = Chart::NorthPole;
    else if (cname == "south") c = Chart::SouthPole;
    else throw UsageError("net file has an unknown chart name: " + cname);
    net.points.push_back({{x, y}, c});
  }
  return net;
}

}  // namespace riemnet

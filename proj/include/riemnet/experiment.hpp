#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "riemnet/embedding.hpp"
#include "riemnet/variation.hpp"

namespace riemnet {

enum class ExperimentKind { Net, Sweep, FirstVar, Continuity, Systole, OracleCheck };

inline const char* experiment_name(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::Net: return "net";
    case ExperimentKind::Sweep: return "sweep";
    case ExperimentKind::FirstVar: return "firstvar";
    case ExperimentKind::Continuity: return "continuity";
    case ExperimentKind::Systole: return "systole";
    case ExperimentKind::OracleCheck: return "oracle_check";
  }
  return "?";
}

inline ExperimentKind experiment_from_name(const std::string& s) {
  if (s == "net") return ExperimentKind::Net;
  if (s == "sweep") return ExperimentKind::Sweep;
  if (s == "firstvar") return ExperimentKind::FirstVar;
  if (s == "continuity") return ExperimentKind::Continuity;
  if (s == "systole") return ExperimentKind::Systole;
  if (s == "oracle_check" || s == "oracle-check") return ExperimentKind::OracleCheck;
  throw UsageError("unknown experiment: " + s);
}

struct ExperimentConfig {
  Family family = Family::FlatTorus;
  Mat2 basis = Mat2::identity();
  double radius = 1.0;
  double amplitude = 0.1;
  long frequency = 1;
  std::optional<double> injrad_override;

  std::optional<ExperimentKind> experiment;
  std::vector<double> epsilons;
  long n_pairs = 1000;
  double near_fraction = 0.5;
  std::uint64_t rng_seed = 0;
  long n_steps = 8;
  long n_triples = 200;
  std::vector<double> deltas = {1e-2, 1e-3, 1e-4};
  // graph_density 0 means "auto", resolved to injrad_bound / 50 at run time
  DistanceMethod method{MethodKind::Analytic, 0.0, 1e-9};
  std::string output_dir = "out";
  std::string baselines_path;
};

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::vector<double> parse_real_list(const std::string& v, const std::string& key, int line) {
  std::string tmp = v;
  for (auto& c : tmp)
    if (c == ',') c = ' ';
  std::istringstream in(tmp);
  std::vector<double> out;
  double x;
  while (in >> x) out.push_back(x);
  if (!in.eof() || out.empty())
    throw UsageError("config line " + std::to_string(line) + ": bad list for " + key);
  return out;
}

inline double parse_real(const std::string& v, const std::string& key, int line) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || *end != '\0')
    throw UsageError("config line " + std::to_string(line) + ": bad number for " + key);
  return x;
}

inline long parse_int(const std::string& v, const std::string& key, int line) {
  char* end = nullptr;
  const long x = std::strtol(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0')
    throw UsageError("config line " + std::to_string(line) + ": bad integer for " + key);
  return x;
}

}  // namespace detail

struct ParsedConfig {
  ExperimentConfig cfg;
  std::vector<std::string> echo;  // input minus comments and blank lines
};

inline ParsedConfig parse_config_text(const std::string& text) {
  ParsedConfig pc;
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = raw;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    pc.echo.push_back(line);
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string val = detail::trim(line.substr(eq + 1));
    if (val.empty())
      throw UsageError("config line " + std::to_string(lineno) + ": empty value for " + key);
    ExperimentConfig& c = pc.cfg;
    if (key == "manifold.family") {
      c.family = family_from_name(val);
    } else if (key == "manifold.basis") {
      const auto v = detail::parse_real_list(val, key, lineno);
      if (v.size() != 4)
        throw UsageError("config line " + std::to_string(lineno) +
                         ": manifold.basis needs 4 numbers (row-major)");
      c.basis = Mat2{v[0], v[1], v[2], v[3]};
    } else if (key == "manifold.radius") {
      c.radius = detail::parse_real(val, key, lineno);
    } else if (key == "manifold.amplitude") {
      c.amplitude = detail::parse_real(val, key, lineno);
    } else if (key == "manifold.frequency") {
      c.frequency = detail::parse_int(val, key, lineno);
    } else if (key == "manifold.injrad_override") {
      c.injrad_override = detail::parse_real(val, key, lineno);
    } else if (key == "experiment") {
      c.experiment = experiment_from_name(val);
    } else if (key == "epsilons") {
      c.epsilons = detail::parse_real_list(val, key, lineno);
    } else if (key == "n_pairs") {
      c.n_pairs = detail::parse_int(val, key, lineno);
    } else if (key == "near_fraction") {
      c.near_fraction = detail::parse_real(val, key, lineno);
    } else if (key == "rng_seed") {
      c.rng_seed = (std::uint64_t)detail::parse_int(val, key, lineno);
    } else if (key == "n_steps") {
      c.n_steps = detail::parse_int(val, key, lineno);
    } else if (key == "n_triples") {
      c.n_triples = detail::parse_int(val, key, lineno);
    } else if (key == "deltas") {
      c.deltas = detail::parse_real_list(val, key, lineno);
    } else if (key == "method.kind") {
      c.method.kind = method_from_name(val);
    } else if (key == "method.graph_density") {
      c.method.graph_density = detail::parse_real(val, key, lineno);
    } else if (key == "method.shooting_tol") {
      c.method.shooting_tol = detail::parse_real(val, key, lineno);
    } else if (key == "output_dir") {
      c.output_dir = val;
    } else if (key == "baselines") {
      c.baselines_path = val;
    } else {
      throw UsageError("config line " + std::to_string(lineno) + ": unknown key " + key);
    }
  }
  return pc;
}

inline ParsedConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ResourceError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

// Cheap config-time sanity probe for a nonflat conformal metric: the geodesic
// engine must resolve clearly distinct endpoints from distinct directions at
// the claimed injectivity radius, and out-and-back flows must return.
inline void probe_conformal_injectivity(const ManifoldSpec& s) {
  if (s.family != Family::ConformalTorus || s.amplitude == 0.0) return;
  const StepControl ctl = default_step_control(s);
  const double r = s.injrad_bound;
  const ChartPoint bases[2] = {{{0.17, 0.31}, Chart::Main}, {{0.62, 0.84}, Chart::Main}};
  for (const auto& p : bases) {
    const auto frame = orthonormal_frame(s, p);
    std::vector<ChartPoint> ends;
    for (int i = 0; i < 8; ++i) {
      const double psi = 2.0 * M_PI * i / 8.0;
      const Vec2 v = frame[0] * std::cos(psi) + frame[1] * std::sin(psi);
      const GeodesicState out = geodesic_flow(s, p, {p, v, true}, r, ctl);
      ends.push_back(out.position);
      const GeodesicState back = geodesic_flow(s, out.position,
                                               {out.position, out.velocity.comp * -1.0, true}, r, ctl);
      if (chart_gap(s, back.position, p) > 1e-6)
        throw UsageError("conformal injectivity probe: out-and-back geodesic failed to return");
    }
    for (size_t i = 0; i < ends.size(); ++i)
      for (size_t j = i + 1; j < ends.size(); ++j)
        if (chart_gap(s, ends[i], ends[j]) < 1e-4)
          throw UsageError("conformal injectivity probe: distinct directions collided at radius injrad_bound");
  }
}

inline ManifoldSpec spec_from_config(const ExperimentConfig& c) {
  ManifoldSpec s = [&] {
    switch (c.family) {
      case Family::FlatTorus: return make_flat_torus(c.basis);
      case Family::Sphere: return make_sphere(c.radius);
      case Family::ConformalTorus:
        return make_conformal_torus(c.basis, c.amplitude, (int)c.frequency, c.injrad_override);
    }
    throw UsageError("unreachable family");
  }();
  probe_conformal_injectivity(s);
  return s;
}

// Resolve a non-positive configured density to the cross-validation default.
inline DistanceMethod resolve_method(const ExperimentConfig& c, const ManifoldSpec& s) {
  DistanceMethod m = c.method;
  if (m.graph_density <= 0.0) m.graph_density = s.injrad_bound / 50.0;
  return m;
}

struct Csv {
  std::string name;
  std::string header;
  std::vector<std::string> rows;
};

struct ReportBundle {
  std::vector<std::pair<std::string, std::string>> summary;
  std::vector<Csv> csvs;
  std::vector<std::pair<std::string, std::string>> extra_files;  // name -> content
  std::vector<std::string> log;
  std::vector<std::string> echo;
  std::vector<std::string> failures;

  void put(const std::string& k, double v) { summary.push_back({k, fmt_double(v)}); }
  void put(const std::string& k, long v) { summary.push_back({k, std::to_string(v)}); }
  void put(const std::string& k, const std::string& v) { summary.push_back({k, v}); }
  void fail(const std::string& invariant, const std::string& detail_msg) {
    failures.push_back(invariant + ": " + detail_msg);
  }
};

inline void write_report(const ReportBundle& b, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ResourceError("cannot create output directory: " + dir);
  auto open = [&](const std::string& name) {
    std::ofstream out(fs::path(dir) / name, std::ios::binary);
    if (!out) throw ResourceError("cannot write report file: " + name);
    return out;
  };
  {
    auto out = open("summary.txt");
    for (const auto& [k, v] : b.summary) out << k << " = " << v << "\n";
    for (const auto& f : b.failures) out << "failed = " << f << "\n";
    out << "status = " << (b.failures.empty() ? "pass" : "fail") << "\n";
  }
  for (const auto& c : b.csvs) {
    auto out = open(c.name);
    out << c.header << "\n";
    for (const auto& r : c.rows) out << r << "\n";
  }
  for (const auto& [name, content] : b.extra_files) {
    auto out = open(name);
    out << content;
  }
  {
    auto out = open("config.echo");
    for (const auto& l : b.echo) out << l << "\n";
  }
  {
    auto out = open("log.txt");
    for (const auto& l : b.log) out << l << "\n";
  }
}

// ---------------------------------------------------------------------------
// Baselines: frozen first-run values, compared within 1e-9 and never rewritten.

inline std::map<std::string, double> load_baselines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ResourceError("cannot open baselines file: " + path);
  std::map<std::string, double> out;
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = raw;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError("baselines line " + std::to_string(lineno) + ": expected key = value");
    out[detail::trim(line.substr(0, eq))] =
        detail::parse_real(detail::trim(line.substr(eq + 1)), "baseline", lineno);
  }
  return out;
}

inline void compare_baselines(ReportBundle& b, const std::string& path) {
  const auto base = load_baselines(path);
  std::map<std::string, std::string> measured(b.summary.begin(), b.summary.end());
  for (const auto& [key, want] : base) {
    const auto it = measured.find(key);
    if (it == measured.end()) {
      b.fail("baseline.present", "no measured value for baseline key " + key);
      continue;
    }
    const double got = std::strtod(it->second.c_str(), nullptr);
    if (!(std::abs(got - want) <= 1e-9))
      b.fail("baseline.match", key + " measured " + it->second + " vs frozen " + fmt_double(want));
  }
  b.log.push_back("baselines: compared " + std::to_string(base.size()) + " frozen values");
}

// ---------------------------------------------------------------------------
// Experiments

namespace detail {

inline std::string csv_point(const ManifoldSpec& s, const ChartPoint& p) {
  const ChartPoint m = to_main_chart(s, p);
  return fmt_double(m.c.x) + "," + fmt_double(m.c.y);
}

inline double contraction_slack(const DistanceMethod& m, double d) {
  switch (m.kind) {
    case MethodKind::Analytic: return 1e-9;
    case MethodKind::Shooting: return 2e-6 * (1.0 + d) / d;
    case MethodKind::Graph: return 0.06;
  }
  return 1e-9;
}

inline std::string net_text(const ManifoldSpec& s, const Net& net) {
  std::ostringstream out;
  out << family_name(s.family) << " " << fmt_double(net.epsilon) << " " << net.points.size()
      << "\n";
  for (const auto& p : net.points)
    out << chart_name(p.chart) << " " << fmt_double(p.c.x) << " " << fmt_double(p.c.y) << "\n";
  return out.str();
}

}  // namespace detail

inline void run_net_experiment(const ManifoldSpec& s, const ExperimentConfig& c, ReportBundle& b) {
  if (c.epsilons.empty()) throw UsageError("net experiment needs an epsilons list");
  const DistanceMethod m = resolve_method(c, s);
  DistanceOracle oracle(s, m);
  Csv csv{"nets.csv", "epsilon,size,min_pairwise,covering_radius", {}};
  for (const double eps : c.epsilons) {
    const Net net = build_net(s, eps, m, &oracle);
    const NetReport rep = verify_net(s, net, m, &oracle);
    const std::string tag = "net.eps" + fmt_double(eps);
    b.put(tag + ".size", (long)net.points.size());
    b.put(tag + ".min_pairwise", rep.min_pairwise);
    b.put(tag + ".covering_radius", rep.covering_radius);
    csv.rows.push_back(fmt_double(eps) + "," + std::to_string(net.points.size()) + "," +
                       fmt_double(rep.min_pairwise) + "," + fmt_double(rep.covering_radius));
    b.extra_files.push_back({"net_eps" + fmt_double(eps) + ".txt", detail::net_text(s, net)});
    if (!(rep.min_pairwise >= eps - 1e-9))
      b.fail("net.separation", "eps " + fmt_double(eps) + " min_pairwise " +
                                   fmt_double(rep.min_pairwise));
    if (!(rep.covering_radius <= 1.1 * eps))
      b.fail("net.covering", "eps " + fmt_double(eps) + " covering_radius " +
                                 fmt_double(rep.covering_radius));
    b.log.push_back("net eps " + fmt_double(eps) + ": " + std::to_string(net.points.size()) +
                    " points");
  }
  b.csvs.push_back(std::move(csv));
}

inline void run_sweep_experiment(const ManifoldSpec& s, const ExperimentConfig& c,
                                 ReportBundle& b) {
  if (c.epsilons.empty()) throw UsageError("sweep experiment needs an epsilons list");
  const DistanceMethod m = resolve_method(c, s);
  DistanceOracle oracle(s, m);
  std::vector<double> min_ratios, near_ratios;
  Net net;
  for (size_t i = 0; i < c.epsilons.size(); ++i) {
    const double eps = c.epsilons[i];
    net = (i == 0) ? build_net(s, eps, m, &oracle) : extend_net(s, net, eps, &oracle);
    const DistortionReport rep = distortion_scan(s, net, c.n_pairs, c.near_fraction, c.rng_seed,
                                                 oracle);
    const std::string tag = "sweep.eps" + fmt_double(eps);
    b.put(tag + ".net_size", (long)net.points.size());
    b.put(tag + ".pair_count", rep.pair_count);
    b.put(tag + ".min_ratio", rep.min_ratio);
    b.put(tag + ".near_diagonal_min_ratio", rep.near_diagonal_min_ratio);
    min_ratios.push_back(rep.min_ratio);
    near_ratios.push_back(rep.near_diagonal_min_ratio);
    Csv csv{"distortion_eps" + fmt_double(eps) + ".csv",
            "x1,x2,y1,y2,d,linf,ratio,is_near_diagonal",
            {}};
    for (const auto& ps : rep.samples) {
      csv.rows.push_back(detail::csv_point(s, ps.x) + "," + detail::csv_point(s, ps.y) + "," +
                         fmt_double(ps.d) + "," + fmt_double(ps.linf) + "," +
                         fmt_double(ps.ratio) + "," + (ps.near_diagonal ? "1" : "0"));
      if (!(ps.ratio <= 1.0 + detail::contraction_slack(m, ps.d)))
        b.fail("sweep.contraction", "ratio " + fmt_double(ps.ratio) + " at d " + fmt_double(ps.d));
    }
    b.csvs.push_back(std::move(csv));
    b.log.push_back("sweep eps " + fmt_double(eps) + ": min_ratio " + fmt_double(rep.min_ratio) +
                    ", near " + fmt_double(rep.near_diagonal_min_ratio));
  }
  for (size_t i = 0; i + 1 < c.epsilons.size(); ++i) {
    if (!(min_ratios[i + 1] >= min_ratios[i] - 1e-12))
      b.fail("sweep.monotone", "min_ratio fell from " + fmt_double(min_ratios[i]) + " to " +
                                   fmt_double(min_ratios[i + 1]) + " at eps " +
                                   fmt_double(c.epsilons[i + 1]));
    const bool halving = std::abs(c.epsilons[i + 1] * 2.0 - c.epsilons[i]) <= 1e-12 * c.epsilons[i];
    if (!halving) continue;
    const double g0 = 1.0 - min_ratios[i], g1 = 1.0 - min_ratios[i + 1];
    if (!(g0 >= (2.0 - 1e-9) * g1))
      b.fail("sweep.gap_factor", "gap " + fmt_double(g0) + " -> " + fmt_double(g1) +
                                     " shrank by less than 2x at eps " +
                                     fmt_double(c.epsilons[i + 1]));
    const double h0 = 1.0 - near_ratios[i], h1 = 1.0 - near_ratios[i + 1];
    if (!(h0 >= (2.0 - 1e-9) * h1))
      b.fail("sweep.near_gap_factor", "near gap " + fmt_double(h0) + " -> " + fmt_double(h1) +
                                          " shrank by less than 2x at eps " +
                                          fmt_double(c.epsilons[i + 1]));
  }
}

inline void run_firstvar_experiment(const ManifoldSpec& s, const ExperimentConfig& c,
                                    ReportBundle& b) {
  if (c.n_triples < 1) throw UsageError("firstvar experiment needs n_triples >= 1");
  const DistanceMethod m = resolve_method(c, s);
  DistanceOracle oracle(s, m);
  if (m.kind == MethodKind::Graph) oracle.build();
  const StepControl ctl = default_step_control(s);
  Rng rng(c.rng_seed);
  Csv csv{"firstvar.csv", "delta,fd_slope,analytic_slope,error", {}};
  std::vector<double> max_err(c.deltas.size(), 0.0);
  for (long t = 0; t < c.n_triples; ++t) {
    const ChartPoint p = sample_point(s, rng);
    const TangentVector v = sample_unit_tangent(s, p, rng);
    const TangentVector to_z = sample_unit_tangent(s, p, rng);
    // stay strictly inside the d <= injrad/2 working region so integration
    // roundoff in the endpoint cannot push z past the gate
    const double r = (0.25 + 0.24 * rng.uniform()) * s.injrad_bound;
    const ChartPoint z = exp_map(s, p, {p, to_z.comp * r, false}, ctl);
    const auto table = first_variation_table(s, p, v, z, c.deltas, oracle, ctl);
    for (size_t i = 0; i < table.size(); ++i) {
      const auto& rec = table[i];
      csv.rows.push_back(fmt_double(rec.delta_s) + "," + fmt_double(rec.fd_slope) + "," +
                         fmt_double(rec.analytic_slope) + "," + fmt_double(rec.abs_error));
      max_err[i] = std::max(max_err[i], rec.abs_error);
    }
  }
  b.put("firstvar.n_triples", c.n_triples);
  for (size_t i = 0; i < c.deltas.size(); ++i)
    b.put("firstvar.delta" + fmt_double(c.deltas[i]) + ".max_error", max_err[i]);
  b.csvs.push_back(std::move(csv));
  const double tol = has_analytic(s) ? 1e-3 : 5e-3;
  const double final_err = max_err.back();
  if (!(final_err <= tol))
    b.fail("firstvar.slope", "max |fd_slope + cos(alpha)| = " + fmt_double(final_err) +
                                " at delta " + fmt_double(c.deltas.back()) + " exceeds " +
                                fmt_double(tol));
  b.log.push_back("firstvar: " + std::to_string(c.n_triples) + " triples, final max error " +
                  fmt_double(final_err));
}

inline void run_continuity_experiment(const ManifoldSpec& s, const ExperimentConfig& c,
                                      ReportBundle& b) {
  if (c.n_steps < 3) throw UsageError("continuity experiment needs n_steps >= 3");
  const DistanceMethod m = resolve_method(c, s);
  DistanceOracle oracle(s, m);
  if (m.kind == MethodKind::Graph) oracle.build();
  const StepControl ctl = default_step_control(s);

  auto emit = [&](const std::string& name, const std::vector<ProbeStep>& steps) {
    Csv csv{name + ".csv", "offset,error", {}};
    for (const auto& st : steps)
      csv.rows.push_back(fmt_double(st.offset) + "," + fmt_double(st.error));
    b.csvs.push_back(std::move(csv));
    b.put("continuity." + name + ".final_error", steps.back().error);
  };

  if (is_torus(s)) {
    // collinear configuration: offset along v keeps x_k, y_k, z on one geodesic
    const ChartPoint p{{0.125, 0.125}, Chart::Main};
    const TangentVector v = unit_tangent(s, p, {1.0, 0.0});
    const ChartPoint z = exp_map(s, p, {p, v.comp * (0.5 * s.injrad_bound), false}, ctl);
    const auto steps = continuity_probe(s, p, v, z, (int)c.n_steps, oracle, ctl, v.comp);
    emit("continuity_collinear", steps);
    const bool exact_case = s.family == Family::FlatTorus && m.kind == MethodKind::Analytic &&
                            s.lattice_basis.a == 1.0 && s.lattice_basis.b == 0.0 &&
                            s.lattice_basis.c == 0.0 && s.lattice_basis.d == 1.0;
    if (exact_case) {
      for (const auto& st : steps)
        if (st.error != 0.0)
          b.fail("continuity.exact_zero", "collinear probe error " + fmt_double(st.error) +
                                              " at offset " + fmt_double(st.offset));
    }
  }
  {
    // generic transverse probe; constants keep the configuration well inside
    // the working region with a moderate angle at the base point
    ChartPoint p;
    TangentVector v{};
    double psi_v = 0.3, psi_z = 0.65;
    if (is_torus(s)) {
      p = ChartPoint{{0.3, 0.45}, Chart::Main};
    } else {
      p = wrap(s, {{1.1, 0.7}, Chart::Main});
    }
    const auto frame = orthonormal_frame(s, p);
    v = TangentVector{p, frame[0] * std::cos(psi_v) + frame[1] * std::sin(psi_v), true};
    const Vec2 uz = frame[0] * std::cos(psi_z) + frame[1] * std::sin(psi_z);
    const ChartPoint z = exp_map(s, p, {p, uz * (0.4 * s.injrad_bound), false}, ctl);
    const auto steps = continuity_probe(s, p, v, z, (int)c.n_steps, oracle, ctl);
    emit("continuity_generic", steps);
    if (has_analytic(s)) {
      for (size_t k = 2; k < steps.size(); ++k)
        if (!(steps[k].error <= steps[k - 1].error))
          b.fail("continuity.monotone", "error rose from " + fmt_double(steps[k - 1].error) +
                                            " to " + fmt_double(steps[k].error) + " at step " +
                                            std::to_string(k + 1));
      if (!(steps.back().error <= 1e-3))
        b.fail("continuity.final", "final error " + fmt_double(steps.back().error));
    }
  }
}

struct SystoleResult {
  double analytic_systole = 0.0;
  std::vector<std::pair<int, int>> homotopy_classes;
  std::vector<double> loop_lengths;
  std::vector<double> pullback_lengths;
  double min_pullback = 0.0;
};

inline SystoleResult run_systole(const ManifoldSpec& s, const ExperimentConfig& c,
                                 DistanceOracle& oracle) {
  if (s.family != Family::FlatTorus)
    throw UsageError("systole experiment supports only the flat torus");
  if (c.epsilons.empty()) throw UsageError("systole experiment needs an epsilons list");
  SystoleResult r;
  r.analytic_systole = s.shortest_vector;
  const double eps = *std::min_element(c.epsilons.begin(), c.epsilons.end());
  if (!(eps < r.analytic_systole / 10.0))
    throw UsageError("systole experiment requires min(epsilons) < systole/10; got epsilon " +
                     fmt_double(eps) + " with systole " + fmt_double(r.analytic_systole));
  const DistanceMethod m = resolve_method(c, s);
  const Net net = build_net(s, eps, m, &oracle);
  r.homotopy_classes = {{1, 0}, {0, 1}, {1, 1}, {1, -1}};
  constexpr int kSegments = 64;
  for (const auto& [pcls, qcls] : r.homotopy_classes) {
    const Vec2 dir{double(pcls), double(qcls)};
    r.loop_lengths.push_back(std::sqrt(quad_form(s.gram, dir, dir)));
    std::vector<ChartPoint> loop;
    loop.reserve(kSegments + 1);
    for (int i = 0; i <= kSegments; ++i) {
      const double t = double(i) / double(kSegments);
      loop.push_back(wrap(s, {{t * dir.x, t * dir.y}, Chart::Main}));
    }
    r.pullback_lengths.push_back(loop_pullback_length(s, net, loop, oracle));
  }
  r.min_pullback = *std::min_element(r.pullback_lengths.begin(), r.pullback_lengths.end());
  return r;
}

inline void run_systole_experiment(const ManifoldSpec& s, const ExperimentConfig& c,
                                   ReportBundle& b) {
  const DistanceMethod m = resolve_method(c, s);
  DistanceOracle oracle(s, m);
  const SystoleResult r = run_systole(s, c, oracle);
  b.put("systole.analytic", r.analytic_systole);
  Csv csv{"systole.csv", "class_p,class_q,length,pullback", {}};
  for (size_t i = 0; i < r.homotopy_classes.size(); ++i) {
    const auto& [pcls, qcls] = r.homotopy_classes[i];
    csv.rows.push_back(std::to_string(pcls) + "," + std::to_string(qcls) + "," +
                       fmt_double(r.loop_lengths[i]) + "," + fmt_double(r.pullback_lengths[i]));
    b.put("systole.class_" + std::to_string(pcls) + "_" + std::to_string(qcls) + ".pullback",
          r.pullback_lengths[i]);
  }
  b.csvs.push_back(std::move(csv));
  b.put("systole.min_pullback", r.min_pullback);
  if (!(r.min_pullback <= r.analytic_systole + 1e-6))
    b.fail("systole.lipschitz_upper", "min_pullback " + fmt_double(r.min_pullback) +
                                          " exceeds systole " + fmt_double(r.analytic_systole));
  if (!(r.min_pullback >= r.analytic_systole / 5.0))
    b.fail("systole.factor5", "min_pullback " + fmt_double(r.min_pullback) +
                                  " fell below systole/5 = " +
                                  fmt_double(r.analytic_systole / 5.0));
  b.log.push_back("systole: analytic " + fmt_double(r.analytic_systole) + ", min pullback " +
                  fmt_double(r.min_pullback));
}

inline void run_oracle_check_experiment(const ManifoldSpec& s, const ExperimentConfig& c,
                                        ReportBundle& b) {
  if (c.n_pairs < 1) throw UsageError("oracle_check needs n_pairs >= 1");
  DistanceMethod gm = resolve_method(c, s);
  gm.kind = MethodKind::Graph;
  DistanceOracle graph_oracle(s, gm);
  graph_oracle.build();
  DistanceMethod rm = gm;
  rm.kind = has_analytic(s) ? MethodKind::Analytic : MethodKind::Shooting;
  DistanceOracle ref_oracle(s, rm);
  Rng rng(c.rng_seed);
  Csv csv{"oracle_check.csv", "x1,x2,y1,y2,reference,graph,rel_error", {}};
  double max_rel = 0.0, worst_margin = std::numeric_limits<double>::infinity();
  const double amp = s.family == Family::ConformalTorus ? std::abs(s.amplitude) : 0.0;
  for (long i = 0; i < c.n_pairs; ++i) {
    ChartPoint x = sample_point(s, rng), y = x;
    bool ok = false;
    for (int attempt = 0; attempt < 200; ++attempt) {
      y = sample_point(s, rng);
      const double proxy = detail::metric_proxy(s, x, y);
      if (proxy > 10.0 * kCoincidenceTol && proxy * std::exp(amp) < 0.98 * s.injrad_bound) {
        ok = true;
        break;
      }
    }
    if (!ok) throw ResourceError("oracle_check could not sample an admissible pair");
    const double ref = ref_oracle.distance(x, y);
    const double got = graph_oracle.distance(x, y);
    const double rel = std::abs(got - ref) / ref;
    max_rel = std::max(max_rel, rel);
    worst_margin = std::min(worst_margin, got - ref);
    csv.rows.push_back(detail::csv_point(s, x) + "," + detail::csv_point(s, y) + "," +
                       fmt_double(ref) + "," + fmt_double(got) + "," + fmt_double(rel));
  }
  b.csvs.push_back(std::move(csv));
  b.put("oracle.pairs", c.n_pairs);
  b.put("oracle.max_rel_error", max_rel);
  b.put("oracle.worst_one_sided_margin", worst_margin);
  if (!(max_rel <= 0.02))
    b.fail("oracle.agreement", "max relative disagreement " + fmt_double(max_rel));
  if (has_analytic(s) && !(worst_margin >= -1e-6))
    b.fail("oracle.one_sided", "graph undercut the analytic distance by " +
                                   fmt_double(-worst_margin));
  b.log.push_back("oracle_check: max rel error " + fmt_double(max_rel));
}

// ---------------------------------------------------------------------------

inline int run(const ExperimentConfig& c, const std::vector<std::string>& echo) {
  if (!c.experiment) throw UsageError("no experiment selected (config key or CLI subcommand)");
  for (size_t i = 0; i + 1 < c.epsilons.size(); ++i)
    if (!(c.epsilons[i + 1] < c.epsilons[i]))
      throw UsageError("epsilons must be strictly decreasing");
  for (const double e : c.epsilons)
    if (!(e > 0.0)) throw UsageError("epsilons must be positive");
  if (*c.experiment == ExperimentKind::Sweep) {
    if (c.n_pairs < 100) throw UsageError("sweep requires n_pairs >= 100");
    if (!(c.near_fraction >= 0.25 && c.near_fraction <= 1.0))
      throw UsageError("sweep requires near_fraction in [0.25, 1]");
  }
  const ManifoldSpec s = spec_from_config(c);
  ReportBundle b;
  b.echo = echo;
  b.put("experiment", std::string(experiment_name(*c.experiment)));
  b.put("family", std::string(family_name(s.family)));
  b.put("rng_seed", (long)c.rng_seed);
  switch (*c.experiment) {
    case ExperimentKind::Net: run_net_experiment(s, c, b); break;
    case ExperimentKind::Sweep: run_sweep_experiment(s, c, b); break;
    case ExperimentKind::FirstVar: run_firstvar_experiment(s, c, b); break;
    case ExperimentKind::Continuity: run_continuity_experiment(s, c, b); break;
    case ExperimentKind::Systole: run_systole_experiment(s, c, b); break;
    case ExperimentKind::OracleCheck: run_oracle_check_experiment(s, c, b); break;
  }
  if (!c.baselines_path.empty()) compare_baselines(b, c.baselines_path);
  write_report(b, c.output_dir);
  return b.failures.empty() ? 0 : 1;
}

}  // namespace riemnet

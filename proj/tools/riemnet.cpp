#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "riemnet/riemnet.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  std::string method;
  long long seed = -1;
};

void add_common(CLI::App* sub, CommonFlags& f) {
  sub->add_option("--config", f.config_path, "experiment config file (key = value lines)")
      ->required();
  sub->add_option("--out", f.out_dir, "output directory (overrides config output_dir)");
  sub->add_option("--seed", f.seed, "RNG seed (overrides config rng_seed)");
  sub->add_option("--method", f.method,
                  "distance method: analytic | shooting | graph (overrides config)");
}

int run_subcommand(riemnet::ExperimentKind kind, const CommonFlags& f) {
  riemnet::ParsedConfig pc = riemnet::load_config(f.config_path);
  if (pc.cfg.experiment && *pc.cfg.experiment != kind)
    throw riemnet::UsageError(std::string("config selects experiment ") +
                              riemnet::experiment_name(*pc.cfg.experiment) +
                              " but the CLI subcommand asks for " +
                              riemnet::experiment_name(kind));
  pc.cfg.experiment = kind;
  if (!f.out_dir.empty()) pc.cfg.output_dir = f.out_dir;
  if (f.seed >= 0) pc.cfg.rng_seed = (std::uint64_t)f.seed;
  if (!f.method.empty()) pc.cfg.method.kind = riemnet::method_from_name(f.method);
  const int status = riemnet::run(pc.cfg, pc.echo);
  if (status != 0)
    std::cerr << "one or more experiment assertions failed; see "
              << pc.cfg.output_dir << "/summary.txt\n";
  return status;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"net-based embedding experiments on compact surfaces"};
  app.require_subcommand(1);

  struct SubSpec {
    const char* name;
    const char* help;
    riemnet::ExperimentKind kind;
  };
  const SubSpec subs[] = {
      {"net", "build and verify separated nets", riemnet::ExperimentKind::Net},
      {"sweep", "distortion sweep over refining nets", riemnet::ExperimentKind::Sweep},
      {"firstvar", "first-variation finite-difference battery", riemnet::ExperimentKind::FirstVar},
      {"continuity", "blow-up continuity ladder", riemnet::ExperimentKind::Continuity},
      {"systole", "shortest-loop pullback lengths", riemnet::ExperimentKind::Systole},
      {"oracle-check", "graph-vs-reference distance cross check",
       riemnet::ExperimentKind::OracleCheck},
  };

  CommonFlags flags[6];
  riemnet::ExperimentKind chosen = riemnet::ExperimentKind::Net;
  const CommonFlags* chosen_flags = nullptr;
  for (int i = 0; i < 6; ++i) {
    CLI::App* sub = app.add_subcommand(subs[i].name, subs[i].help);
    add_common(sub, flags[i]);
    const auto kind = subs[i].kind;
    const CommonFlags* fp = &flags[i];
    sub->callback([&chosen, &chosen_flags, kind, fp] {
      chosen = kind;
      chosen_flags = fp;
    });
  }

  CLI11_PARSE(app, argc, argv);

  try {
    return run_subcommand(chosen, *chosen_flags);
  } catch (const riemnet::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const riemnet::ResourceError& e) {
    std::cerr << "resource error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

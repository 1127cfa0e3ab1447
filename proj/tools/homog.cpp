// Command-line front end: runs pipeline stages of a builtin or JSON-defined
// scenario and emits deterministic reports.
#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "homog/scenario.hpp"

#ifdef EIGEN_HAS_OPENMP
#include <omp.h>
#endif

namespace {

struct CommonArgs {
  std::string scenario;
  std::string out_dir;
  int cutoff = 0;
  bool do_assert = false;
  bool sup_only = false;
  double beta_c = 0.2;
  int families = 8;
  std::uint64_t seed = 20240801ull;
};

void add_common(CLI::App* sub, CommonArgs& a, bool needs_scenario) {
  auto* opt = sub->add_option("--scenario", a.scenario,
                              "builtin name or path to a scenario JSON file");
  if (needs_scenario) opt->required();
  sub->add_option("--cutoff", a.cutoff, "override the mode cutoff");
  sub->add_option("--out", a.out_dir, "directory for report and CSV files");
  sub->add_flag("--assert", a.do_assert,
                "exit 1 when any recorded check fails");
  sub->add_option("--beta-c", a.beta_c,
                  "coupling constant for the 2d_complex_beta builtin");
}

int run(const CommonArgs& a, const std::vector<std::string>& stages) {
  homog::PipelineOptions opt;
  opt.stages = stages;
  opt.cutoff = a.cutoff;
  opt.sup_only = a.sup_only;
  opt.selftest_families = a.families;
  opt.selftest_seed = a.seed;
  homog::Scenario sc = a.scenario.empty()
                           ? homog::builtin_scenario("1d_scalar")
                           : homog::load_scenario(a.scenario, a.beta_c);
  homog::RunReport rep = homog::run_pipeline(sc, opt);
  if (!a.out_dir.empty()) homog::emit_report(rep, a.out_dir);
  std::fputs(homog::markdown_report(rep).c_str(), stdout);
  std::printf("\nwall seconds: %.2f\n", rep.wall_seconds);
  if (a.do_assert && !rep.all_pass()) return 1;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* th = std::getenv("HOMOG_THREADS"))
    Eigen::setNbThreads(std::max(1, std::atoi(th)));

  CLI::App app{"periodic homogenization toolkit"};
  app.require_subcommand(1);

  CommonArgs a;
  std::vector<std::string> stages;

  auto* effective = app.add_subcommand(
      "effective", "correctors and the effective coefficient matrix");
  add_common(effective, a, true);
  effective->callback([&] { stages = {"correctors"}; });

  auto* germ = app.add_subcommand(
      "germ", "direction scan of the germ and threshold coefficients");
  add_common(germ, a, true);
  germ->callback([&] { stages = {"correctors", "germ"}; });

  auto* bands = app.add_subcommand("bands", "fiber band functions");
  add_common(bands, a, true);
  bands->callback([&] { stages = {"correctors", "bands"}; });

  auto* fit = app.add_subcommand(
      "fit", "windowed band fits cross-checked against the germ");
  add_common(fit, a, true);
  fit->callback([&] { stages = {"correctors", "fit"}; });

  auto* scan = app.add_subcommand(
      "scan", "propagator error over the (s, eps, tau) grid");
  add_common(scan, a, true);
  scan->add_flag("--sup-only", a.sup_only,
                 "emit only the sup rows of the scan table");
  scan->callback([&] { stages = {"correctors", "scan"}; });

  auto* probe = app.add_subcommand(
      "probe", "sharpness probes along the proof schedules");
  add_common(probe, a, true);
  probe->callback([&] { stages = {"correctors", "germ", "probes"}; });

  auto* selftest = app.add_subcommand(
      "selftest", "seeded abstract families: identities and expansion fits");
  add_common(selftest, a, false);
  selftest->add_option("--families", a.families, "number of seeded families");
  selftest->add_option("--seed", a.seed, "base seed");
  selftest->callback([&] { stages = {"abstract-selftest"}; });

  CLI11_PARSE(app, argc, argv);

  try {
    return run(a, stages);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}

// cwce-lab: config-driven front end for the simulation / fitting / estimation
// pipeline. Subcommands expose the individual stages; `run` executes a full
// figure/table recipe and writes a checksummed artifact bundle.

#include <omp.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "cwce/errors.hpp"
#include "cwce/harness.hpp"
#include "cwce/infer.hpp"
#include "cwce/io.hpp"
#include "cwce/rng.hpp"

namespace fs = std::filesystem;
using namespace cwce;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  int threads = 0;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool config_required = true) {
  auto* opt = cmd->add_option("--config", args.config_path, "experiment config (JSON)");
  if (config_required) opt->required();
  cmd->add_option("--out", args.out_dir, "output directory (overrides config)");
  cmd->add_option("--threads", args.threads, "OpenMP thread count");
}

void apply_threads(const CommonArgs& args) {
  int threads = args.threads;
  if (threads <= 0) {
    if (const char* env = std::getenv("CWCE_LAB_THREADS")) threads = std::atoi(env);
  }
  if (threads > 0) omp_set_num_threads(threads);
}

fs::path resolve_out(const CommonArgs& args, const ExperimentConfig& cfg) {
  return args.out_dir.empty() ? fs::path(cfg.outputs) : fs::path(args.out_dir);
}

ModelSpec model_spec_for(const ScmParams& params) {
  ModelSpec spec;
  spec.response_transform = (params.kind == ScmKind::LogNormalLmm)
                                ? ResponseTransform::Log
                                : ResponseTransform::Identity;
  return spec;
}

int cmd_run(const CommonArgs& args) {
  const ExperimentConfig cfg = load_config(args.config_path);
  apply_threads(args);
  const fs::path out = resolve_out(args, cfg);
  const auto files = run_experiment(cfg, out);
  std::cout << "wrote " << files.size() << " artifacts to " << out.string() << '\n';
  return 0;
}

int cmd_simulate(const CommonArgs& args) {
  const ExperimentConfig cfg = load_config(args.config_path);
  apply_threads(args);
  const fs::path out = resolve_out(args, cfg);
  fs::create_directories(out);
  const Panel panel = simulate_panel(cfg.scm, cfg.n, cfg.m, cfg.seed);
  write_panel(panel, out / "panel.csv", out / "panel.meta.json");
  std::cout << "simulated " << panel.n() << " individuals x " << panel.m
            << " repeats -> " << (out / "panel.csv").string() << '\n';
  return 0;
}

int cmd_fit(const CommonArgs& args) {
  const ExperimentConfig cfg = load_config(args.config_path);
  apply_threads(args);
  const fs::path out = resolve_out(args, cfg);
  fs::create_directories(out);
  const fs::path csv = out / "panel.csv";
  const fs::path meta = out / "panel.meta.json";
  const Panel panel = fs::exists(csv) ? read_panel(csv, meta)
                                      : simulate_panel(cfg.scm, cfg.n, cfg.m, cfg.seed);
  const RemlFit fit = fit_lmm_reml(make_panel_view(panel, model_spec_for(panel.params)));
  std::ofstream fj(out / "fit.json");
  fj << fit_to_json(fit).dump(2) << '\n';
  std::cout << "REML fit: beta = (" << fit.beta(0) << ", " << fit.beta(1) << ", "
            << fit.beta(2) << ", " << fit.beta(3) << "), tau = (" << fit.tau0 << ", "
            << fit.tau1 << ", " << fit.tau2 << "), sigma = " << fit.sigma
            << (fit.converged ? "" : "  [NOT CONVERGED]") << '\n';
  return fit.converged ? 0 : 1;
}

int cmd_cwce(const CommonArgs& args) {
  const ExperimentConfig cfg = load_config(args.config_path);
  apply_threads(args);
  const fs::path out = resolve_out(args, cfg);
  fs::create_directories(out);
  const Panel panel = simulate_panel(cfg.scm, cfg.n, cfg.m, cfg.seed);
  const ExposureRegime regime =
      cfg.regime.a.empty() ? ExposureRegime::lag_pair(cfg.k, 1, 1) : cfg.regime;

  nlohmann::json all = nlohmann::json::array();
  for (int i = 0; i < panel.n(); ++i) {
    const Individual& ind = panel.individuals[i];
    nlohmann::json rec;
    rec["id"] = i;
    if (panel.params.kind == ScmKind::Crossover) {
      rec["cwce"] = dist_to_json(cwce_crossover(ind.y[1], ind.y[2], ind.a[0]));
    } else {
      const History hist = history_of(ind, panel.params, panel.m);
      rec["cwce"] = dist_to_json(cwce_for_kind(panel.params, hist, cfg.k, regime));
    }
    rec["true_ice"] = format_double(true_ice(ind, panel.params, regime, cfg.k));
    all.push_back(rec);
  }
  std::ofstream oj(out / "cwce.json");
  oj << all.dump(2) << '\n';
  std::cout << "wrote CWCE distributions for " << panel.n() << " individuals -> "
            << (out / "cwce.json").string() << '\n';
  return 0;
}

int cmd_validate(const CommonArgs& args) {
  std::uint64_t seed = 20240601;
  int cases = 50;
  int draws = 100000;
  if (!args.config_path.empty()) {
    const ExperimentConfig cfg = load_config(args.config_path);
    seed = cfg.seed;
  }
  apply_threads(args);
  const int breaches = run_validation(seed, cases, draws, /*verbose=*/true);
  if (breaches > 0) {
    std::cout << "validation FAILED with " << breaches << " tolerance breach(es)\n";
    return 1;
  }
  std::cout << "validation passed\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"individual-causal-effect laboratory: simulate, fit, estimate"};
  app.require_subcommand(1);

  CommonArgs run_args, sim_args, fit_args, cwce_args, val_args;
  auto* run = app.add_subcommand("run", "execute a full recipe and write artifacts");
  add_common(run, run_args);
  auto* sim = app.add_subcommand("simulate", "simulate a panel and write it as CSV");
  add_common(sim, sim_args);
  auto* fit = app.add_subcommand("fit", "REML-fit the mixed model on a panel");
  add_common(fit, fit_args);
  auto* cw = app.add_subcommand("cwce", "compute per-individual CWCE distributions");
  add_common(cw, cwce_args);
  auto* val = app.add_subcommand("validate", "closed-form vs Monte-Carlo oracle suite");
  add_common(val, val_args, /*config_required=*/false);

  try {
    app.parse(argc, argv);
    if (run->parsed()) return cmd_run(run_args);
    if (sim->parsed()) return cmd_simulate(sim_args);
    if (fit->parsed()) return cmd_fit(fit_args);
    if (cw->parsed()) return cmd_cwce(cwce_args);
    if (val->parsed()) return cmd_validate(val_args);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

#include "cwce/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "cwce/errors.hpp"
#include "cwce/infer.hpp"
#include "cwce/rng.hpp"

namespace cwce {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t stage_seed(std::uint64_t seed, std::uint64_t stage) {
  return Rng::mix(Rng::mix(seed) ^ Rng::mix(stage + 0x9E3779B97F4A7C15ull));
}

namespace {

struct Emitter {
  fs::path dir;
  std::vector<std::string> files;

  std::ofstream open(const std::string& name) {
    fs::create_directories(dir);
    std::ofstream out(dir / name);
    if (!out) throw IoError("cannot open output file " + (dir / name).string());
    files.push_back(name);
    return out;
  }
};

ExposureRegime default_regime(const ExperimentConfig& cfg) {
  if (!cfg.regime.a.empty()) return cfg.regime;
  return ExposureRegime::lag_pair(cfg.k, 1, 1);
}

void write_density_rows(std::ofstream& out, const std::string& prefix,
                        const CwceDistribution& d, int points = 512) {
  if (d.kind() == CwceDistribution::Kind::Grid) {
    const auto& pts = d.grid_points();
    const auto& dens = d.grid_density();
    for (size_t i = 0; i < pts.size(); ++i)
      out << prefix << format_double(pts[i]) << ',' << format_double(dens[i]) << '\n';
    return;
  }
  if (d.kind() == CwceDistribution::Kind::Gaussian) {
    const double sd = std::sqrt(d.gaussian_var());
    if (sd == 0.0) {
      out << prefix << format_double(d.gaussian_mean()) << ",inf\n";
      return;
    }
    for (int i = 0; i < points; ++i) {
      const double x = d.gaussian_mean() + sd * (-5.0 + 10.0 * i / (points - 1));
      out << prefix << format_double(x) << ',' << format_double(d.density_at(x)) << '\n';
    }
    return;
  }
  if (d.kind() == CwceDistribution::Kind::Degenerate) {
    out << prefix << format_double(d.value()) << ",inf\n";
    return;
  }
  out << prefix << "-1," << format_double(d.p_minus1()) << '\n'
      << prefix << "0," << format_double(d.p_0()) << '\n'
      << prefix << "1," << format_double(d.p_plus1()) << '\n';
}

// population ICE density of the Gaussian kind for a (lag1, lag2) regime
CwceDistribution gaussian_ice_law(const ScmParams& p, int a1, int a2) {
  const Eigen::Vector3d v(0.0, a1, a2);
  const double mean = a1 * p.beta1 + a2 * p.beta2;
  const double var = v.dot(p.latent_cov() * v);
  return CwceDistribution::make_gaussian(mean, var);
}

std::vector<int> horizons(int m) {
  std::vector<int> hs;
  for (int h : {3, 10, 100})
    if (h <= m) hs.push_back(h);
  if (hs.empty()) hs.push_back(m);
  return hs;
}

int find_pattern(const Panel& panel, int a1, int a2, int skip = 0) {
  for (int i = 0; i < panel.n(); ++i) {
    const auto& a = panel.individuals[i].a;
    if (a.size() >= 2 && a[0] == a1 && a[1] == a2) {
      if (skip-- == 0) return i;
    }
  }
  return -1;
}

ModelSpec spec_for(const ScmParams& p) {
  ModelSpec spec;
  spec.response_transform = (p.kind == ScmKind::LogNormalLmm) ? ResponseTransform::Log
                                                              : ResponseTransform::Identity;
  return spec;
}

void recipe_fig5(const ExperimentConfig& cfg, Emitter& em) {
  const ExposureRegime regime = default_regime(cfg);
  const int a1 = regime.lag(cfg.k, 1), a2 = regime.lag(cfg.k, 2);
  const CwceDistribution law = gaussian_ice_law(cfg.scm, a1, a2);
  auto out = em.open("fig5_ice_density.csv");
  out << "x,density\n";
  write_density_rows(out, "", law, 1001);
  auto ace = em.open("fig5_ace.csv");
  ace << "ace\n"
      << format_double(closed_form_effect(cfg.scm, EffectMeasure::Ace, regime, cfg.k))
      << '\n';
}

void recipe_fig7(const ExperimentConfig& cfg, Emitter& em) {
  if (cfg.scm.kind != ScmKind::TruncatedLmm)
    throw ConfigError("fig7 requires the truncated kind");
  const ExposureRegime regime = default_regime(cfg);
  const Panel panel = simulate_panel(cfg.scm, cfg.n, cfg.m, stage_seed(cfg.seed, 0));
  auto out = em.open("fig7_eice_vs_ice.csv");
  out << "id,eice,ice\n";
  for (int i = 0; i < panel.n(); ++i) {
    const Individual& ind = panel.individuals[i];
    out << i << ',' << format_double(true_eice(ind, cfg.scm, regime, cfg.k)) << ','
        << format_double(true_ice(ind, cfg.scm, regime, cfg.k)) << '\n';
  }
}

void recipe_fig8(const ExperimentConfig& cfg, Emitter& em) {
  const ExposureRegime regime = default_regime(cfg);
  struct KindSetup {
    ScmParams params;
    std::vector<std::pair<int, int>> patterns;
    const char* name;
  };
  const std::vector<KindSetup> setups = {
      {cfg.scm.kind == ScmKind::GaussianLmm ? cfg.scm : ScmParams::gaussian_example(),
       {{1, 1}, {1, 0}, {0, 1}}, "gaussian"},
      {cfg.scm.kind == ScmKind::LogNormalLmm ? cfg.scm : ScmParams::lognormal_example(),
       {{1, 0}, {0, 0}, {1, 1}}, "lognormal"},
  };
  for (const auto& setup : setups) {
    const Panel panel = simulate_panel(setup.params, cfg.n, cfg.m, stage_seed(cfg.seed, 1));
    auto curves = em.open(std::string("fig8_") + setup.name + "_cwce.csv");
    curves << "pattern,h,x,density\n";
    auto truths = em.open(std::string("fig8_") + setup.name + "_ice.csv");
    truths << "pattern,ice\n";
    for (const auto& [a1, a2] : setup.patterns) {
      const int idx = find_pattern(panel, a1, a2);
      if (idx < 0) continue;
      const Individual& ind = panel.individuals[idx];
      truths << a1 << a2 << ','
             << format_double(true_ice(ind, setup.params, regime, cfg.k)) << '\n';
      for (int h : horizons(panel.m)) {
        const History hist = history_of(ind, setup.params, h);
        const CwceDistribution cwce = cwce_for_kind(setup.params, hist, cfg.k, regime);
        std::ostringstream prefix;
        prefix << a1 << a2 << ',' << h << ',';
        write_density_rows(curves, prefix.str(), cwce);
      }
    }
    // population ICE reference: analytic for Gaussian, KDE of simulated for LN
    auto pop = em.open(std::string("fig8_") + setup.name + "_population.csv");
    pop << "x,density\n";
    if (setup.params.kind == ScmKind::GaussianLmm) {
      write_density_rows(pop, "",
                         gaussian_ice_law(setup.params, regime.lag(cfg.k, 1),
                                          regime.lag(cfg.k, 2)));
    } else {
      std::vector<double> ices;
      for (const Individual& ind : panel.individuals)
        ices.push_back(true_ice(ind, setup.params, regime, cfg.k));
      write_density_rows(pop, "", kde_grid(ices));
    }
  }
}

void subset_estimates(const ExperimentConfig& cfg, Emitter& em, const char* stem) {
  const ExposureRegime regime = default_regime(cfg);
  const Panel master = simulate_panel(cfg.scm, cfg.n, cfg.m, stage_seed(cfg.seed, 2));
  const ModelSpec spec = spec_for(cfg.scm);
  for (const auto& [ns, ms] : cfg.subset_grid) {
    const Panel sub = subset_panel(master, ns, ms);
    const RemlFit fit = fit_lmm_reml(make_panel_view(sub, spec));
    char name[128];
    std::snprintf(name, sizeof(name), "%s_n%d_m%d.csv", stem, ns, ms);
    auto out = em.open(name);
    out << "id,expected_cwce,map_ice,true_ice\n";
    for (int i = 0; i < sub.n(); ++i) {
      const Individual& ind = sub.individuals[i];
      const History hist = history_of(ind, sub.params, sub.m);
      const IceEstimate est = estimate_ice(fit, sub.params, hist, cfg.k, regime);
      out << i << ',' << format_double(est.expected) << ',' << format_double(est.point)
          << ',' << format_double(true_ice(ind, sub.params, regime, cfg.k)) << '\n';
    }
  }
}

void recipe_fig10(const ExperimentConfig& cfg, Emitter& em) {
  if (cfg.scm.kind != ScmKind::TruncatedLmm)
    throw ConfigError("fig10 requires the truncated kind");
  const ExposureRegime regime = default_regime(cfg);
  const Panel panel = simulate_panel(cfg.scm, cfg.n, cfg.m, stage_seed(cfg.seed, 3));

  // one early-settling individual plus two always-ambiguous ones: the first
  // (1,0) pattern, then the (1,1) patterns farthest from and closest to the
  // threshold at k
  std::vector<int> chosen;
  const int i10 = find_pattern(panel, 1, 0);
  if (i10 >= 0) chosen.push_back(i10);
  int far = -1, near = -1;
  for (int i = 0; i < panel.n(); ++i) {
    const auto& a = panel.individuals[i].a;
    if (a.size() < 2 || a[0] != 1 || a[1] != 1) continue;
    const double dist = std::fabs(panel.individuals[i].y[cfg.k - 1] - cfg.scm.delta);
    if (far < 0 || dist > std::fabs(panel.individuals[far].y[cfg.k - 1] - cfg.scm.delta))
      far = i;
    if (near < 0 || dist < std::fabs(panel.individuals[near].y[cfg.k - 1] - cfg.scm.delta))
      near = i;
  }
  if (far >= 0) chosen.push_back(far);
  if (near >= 0 && near != far) chosen.push_back(near);

  auto out = em.open("fig10_cross_world_joint.csv");
  out << "id,y_k,a1,a2,h,p00,p01,p10,p11\n";
  for (int idx : chosen) {
    const Individual& ind = panel.individuals[idx];
    for (int h : horizons(panel.m)) {
      if (cfg.k > h) continue;
      const History hist = history_of(ind, cfg.scm, h);
      const CrossWorldJoint joint =
          cross_world_joint_truncated(hist, cfg.scm, cfg.k, regime);
      out << idx << ',' << format_double(ind.y[cfg.k - 1]) << ',' << ind.a[0] << ','
          << ind.a[1] << ',' << h << ',' << format_double(joint.p[0][0]) << ','
          << format_double(joint.p[0][1]) << ',' << format_double(joint.p[1][0]) << ','
          << format_double(joint.p[1][1]) << '\n';
    }
  }
}

void recipe_fig11(const ExperimentConfig& cfg, Emitter& em) {
  if (cfg.scm.kind != ScmKind::GaussianLmm)
    throw ConfigError("fig11 requires the Gaussian kind");
  const ExposureRegime regime = default_regime(cfg);
  const Panel master = simulate_panel(cfg.scm, cfg.n, cfg.m, stage_seed(cfg.seed, 4));
  const ModelSpec spec;
  for (const auto& [ns, ms] : cfg.subset_grid) {
    const Panel sub = subset_panel(master, ns, ms);
    const RemlFit fit = fit_lmm_reml(make_panel_view(sub, spec));
    std::vector<CwceDistribution> cwces;
    cwces.reserve(sub.n());
    for (const Individual& ind : sub.individuals) {
      const History hist = history_of(ind, sub.params, sub.m);
      cwces.push_back(estimate_cwce(fit, sub.params, hist, cfg.k, regime));
    }
    const CwceDistribution avg =
        marginal_ice_density(cwces, MarginalMode::AverageDensity);
    const CwceDistribution kern =
        marginal_ice_density(cwces, MarginalMode::KernelOfExpectations);
    const CwceDistribution truth =
        gaussian_ice_law(cfg.scm, regime.lag(cfg.k, 1), regime.lag(cfg.k, 2));
    char name[128];
    std::snprintf(name, sizeof(name), "fig11_n%d_m%d.csv", ns, ms);
    auto out = em.open(name);
    out << "series,x,density\n";
    write_density_rows(out, "average_cwce,", avg);
    write_density_rows(out, "kernel_of_expectations,", kern);
    write_density_rows(out, "true_ice,", truth);
  }
}

void recipe_fig13(const ExperimentConfig& cfg, Emitter& em) {
  if (cfg.scm.kind != ScmKind::TruncatedLmm)
    throw ConfigError("fig13 requires the truncated kind");
  const ExposureRegime regime = default_regime(cfg);
  const Panel master = simulate_panel(cfg.scm, cfg.n, cfg.m, stage_seed(cfg.seed, 5));
  const ModelSpec spec;
  for (const auto& [ns, ms] : cfg.subset_grid) {
    const Panel sub = subset_panel(master, ns, ms);
    const RemlFit fit = fit_lmm_reml(make_panel_view(sub, spec));
    char name[128];
    std::snprintf(name, sizeof(name), "fig13_n%d_m%d.csv", ns, ms);
    auto out = em.open(name);
    out << "id,p_minus1,true_ice\n";
    for (int i = 0; i < sub.n(); ++i) {
      const Individual& ind = sub.individuals[i];
      const History hist = history_of(ind, sub.params, sub.m);
      const CwceDistribution est = estimate_cwce(fit, sub.params, hist, cfg.k, regime);
      out << i << ',' << format_double(est.p_minus1()) << ','
          << format_double(true_ice(ind, sub.params, regime, cfg.k)) << '\n';
    }
  }
}

void recipe_table5(const ExperimentConfig& cfg, Emitter& em) {
  if (cfg.scm.kind != ScmKind::TruncatedLmm)
    throw ConfigError("table5 requires the truncated kind");
  const ExposureRegime regime = default_regime(cfg);
  const Panel master = simulate_panel(cfg.scm, cfg.n, cfg.m, stage_seed(cfg.seed, 6));
  for (const auto& [ns, ms] : cfg.subset_grid) {
    const Panel sub = subset_panel(master, ns, ms);
    const RemlFit fit = fit_lmm_reml(make_panel_view(sub, ModelSpec{}));
    const ClassificationTable table = classification_table(sub, fit, cfg.k, regime);
    char name[128];
    std::snprintf(name, sizeof(name), "table5_n%d_m%d.csv", ns, ms);
    auto out = em.open(name);
    out << "true\\est,-1,0,1\n";
    const char* labels[3] = {"-1", "0", "1"};
    for (int i = 0; i < 3; ++i) {
      out << labels[i];
      for (int j = 0; j < 3; ++j) out << ',' << format_double(table.cells[i][j]);
      out << '\n';
    }
  }
}

void recipe_bias_demo(const ExperimentConfig& cfg, Emitter& em) {
  if (cfg.scm.kind != ScmKind::GaussianLmm)
    throw ConfigError("bias_demo requires the Gaussian kind");
  const ExposureRegime regime = default_regime(cfg);
  const int a1 = regime.lag(cfg.k, 1), a2 = regime.lag(cfg.k, 2);
  auto out = em.open("bias_demo.csv");
  out << "replicate,naive_ace,reml_ace\n";
  for (int r = 0; r < 20; ++r) {
    const Panel panel = simulate_panel(cfg.scm, cfg.n, cfg.m, stage_seed(cfg.seed, 100 + r));
    const PanelView view = make_panel_view(panel, ModelSpec{});
    const PooledFit naive = fit_naive_pooled(view);
    const RemlFit fit = fit_lmm_reml(view);
    out << r << ',' << format_double(naive.implied_ace(a1, a2)) << ','
        << format_double(a1 * fit.beta(1) + a2 * fit.beta(2)) << '\n';
  }
}

void recipe_custom(const ExperimentConfig& cfg, Emitter& em) {
  const Panel panel = simulate_panel(cfg.scm, cfg.n, cfg.m, stage_seed(cfg.seed, 7));
  em.files.push_back("panel.csv");
  em.files.push_back("panel.meta.json");
  fs::create_directories(em.dir);
  write_panel(panel, em.dir / "panel.csv", em.dir / "panel.meta.json");
  if (cfg.scm.kind != ScmKind::Crossover) {
    const RemlFit fit = fit_lmm_reml(make_panel_view(panel, spec_for(cfg.scm)));
    auto out = em.open("fit.json");
    out << fit_to_json(fit).dump(2) << '\n';
  }
}

}  // namespace

std::vector<std::string> run_experiment(const ExperimentConfig& cfg,
                                        const fs::path& out_dir) {
  cfg.scm.validate();
  Emitter em;
  em.dir = out_dir;

  if (cfg.recipe == "fig5") recipe_fig5(cfg, em);
  else if (cfg.recipe == "fig7") recipe_fig7(cfg, em);
  else if (cfg.recipe == "fig8") recipe_fig8(cfg, em);
  else if (cfg.recipe == "fig9") subset_estimates(cfg, em, "fig9");
  else if (cfg.recipe == "fig10") recipe_fig10(cfg, em);
  else if (cfg.recipe == "fig11") recipe_fig11(cfg, em);
  else if (cfg.recipe == "fig12") subset_estimates(cfg, em, "fig12");
  else if (cfg.recipe == "fig13") recipe_fig13(cfg, em);
  else if (cfg.recipe == "table5") recipe_table5(cfg, em);
  else if (cfg.recipe == "bias_demo") recipe_bias_demo(cfg, em);
  else if (cfg.recipe == "custom") recipe_custom(cfg, em);
  else throw ConfigError("unknown recipe: " + cfg.recipe);

  json manifest;
  manifest["schema_version"] = 1;
  manifest["recipe"] = cfg.recipe;
  manifest["seed"] = cfg.seed;
  manifest["params_sha256"] = sha256_bytes(params_to_json(cfg.scm).dump());
  manifest["config_sha256"] = sha256_bytes(config_to_json(cfg).dump());
  std::sort(em.files.begin(), em.files.end());
  json files = json::array();
  for (const std::string& name : em.files)
    files.push_back({{"name", name}, {"sha256", sha256_file(out_dir / name)}});
  manifest["files"] = files;
  std::ofstream mf(out_dir / "manifest.json");
  if (!mf) throw IoError("cannot write manifest");
  mf << manifest.dump(2) << '\n';
  em.files.push_back("manifest.json");
  return em.files;
}

namespace {

ScmParams jitter_params(const ScmParams& base, Rng& rng) {
  ScmParams p = base;
  auto scale = [&rng](double v) { return v * (0.75 + 0.55 * rng.next_u01()); };
  p.beta1 = scale(p.beta1);
  p.beta2 = scale(p.beta2);
  p.beta_c = scale(p.beta_c);
  p.tau0 = scale(p.tau0);
  p.tau1 = scale(p.tau1);
  p.tau2 = scale(p.tau2);
  p.sigma = scale(p.sigma);
  return p;
}

struct CaseResult {
  bool ok = true;
  std::string detail;
};

CaseResult check_case(const ScmParams& params, const History& hist, int k,
                      const ExposureRegime& regime, int draws, std::uint64_t mc_seed) {
  const CwceDistribution closed = cwce_for_kind(params, hist, k, regime);
  const McCwce mc = cwce_monte_carlo(hist, params, k, regime, draws, mc_seed);
  const double n = static_cast<double>(draws);
  CaseResult res;

  if (params.kind == ScmKind::TruncatedLmm) {
    const double closed_p[3] = {closed.p_minus1(), closed.p_0(), closed.p_plus1()};
    for (int c = 0; c < 3; ++c) {
      // binomial SE with a symmetric tail floor so cells at ~0 or ~1 keep a
      // sane tolerance
      const double tail = std::max({std::min(closed_p[c], 1.0 - closed_p[c]),
                                    std::min(mc.pmf[c], 1.0 - mc.pmf[c]), 1e-9});
      const double se = std::sqrt(tail / n);
      if (std::fabs(closed_p[c] - mc.pmf[c]) > 3.0 * se + 1e-12) {
        res.ok = false;
        res.detail = "discrete cell " + std::to_string(c - 1) + " off by " +
                     std::to_string(closed_p[c] - mc.pmf[c]);
        return res;
      }
    }
    return res;
  }

  const double mean_c = closed.mean();
  const double var_c = closed.variance();
  double m4 = 0.0;
  for (double v : mc.samples) {
    const double d = v - mc.mean;
    m4 += d * d * d * d;
  }
  m4 /= n;
  const double se_mean = std::sqrt(mc.var / n);
  const double se_var = std::sqrt(std::max(m4 - mc.var * mc.var, 0.0) / n);
  if (std::fabs(mean_c - mc.mean) > 4.0 * se_mean + 1e-12) {
    res.ok = false;
    res.detail = "mean off: closed " + std::to_string(mean_c) + " vs mc " +
                 std::to_string(mc.mean);
    return res;
  }
  if (std::fabs(var_c - mc.var) > 4.0 * se_var + 1e-12) {
    res.ok = false;
    res.detail = "variance off: closed " + std::to_string(var_c) + " vs mc " +
                 std::to_string(mc.var);
  }
  return res;
}

}  // namespace

int run_validation(std::uint64_t seed, int cases_per_kind, int mc_draws, bool verbose) {
  const std::vector<std::pair<ScmKind, ScmParams>> bases = {
      {ScmKind::GaussianLmm, ScmParams::gaussian_example()},
      {ScmKind::LogNormalLmm, ScmParams::lognormal_example()},
      {ScmKind::TruncatedLmm, ScmParams::truncated_example()},
  };
  int breaches = 0;
  for (size_t b = 0; b < bases.size(); ++b) {
    int kind_breaches = 0;
    for (int i = 0; i < cases_per_kind; ++i) {
      Rng rng = Rng::stream(stage_seed(seed, 9000 + b), i);
      const ScmParams params = jitter_params(bases[b].second, rng);
      const int h = 3 + static_cast<int>(rng.next_u01() * 4.0);  // 3..6
      const Panel panel =
          simulate_panel(params, 1, h, stage_seed(seed, 9100 + b * 1000 + i));
      const History hist = history_of(panel.individuals[0], params, h);

      int k_max = h;
      if (params.kind == ScmKind::LogNormalLmm && (i % 4 == 3)) k_max = h + 1;
      const int k = 2 + static_cast<int>(rng.next_u01() * (k_max - 1));
      const int a1 = rng.next_u01() < 0.5 ? 1 : 0;
      const int a2 = (k >= 3 && rng.next_u01() < 0.7) ? 1 : 0;
      const ExposureRegime regime = ExposureRegime::lag_pair(k, a1, a2);

      const CaseResult res = check_case(params, hist, k, regime, mc_draws,
                                        stage_seed(seed, 9500 + b * 1000 + i));
      if (!res.ok) {
        ++kind_breaches;
        if (verbose)
          std::cout << "  breach [" << to_string(bases[b].first) << " case " << i
                    << "]: " << res.detail << '\n';
      }
    }
    if (verbose)
      std::cout << to_string(bases[b].first) << ": " << (cases_per_kind - kind_breaches)
                << "/" << cases_per_kind << " cases within tolerance\n";
    breaches += kind_breaches;
  }
  return breaches;
}

}  // namespace cwce

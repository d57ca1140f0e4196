// Acceptance suite: runs every acceptance criterion at its stated tolerance
// and prints one pass/fail line per criterion. Exit code 0 iff all pass.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "cwce/harness.hpp"
#include "cwce/infer.hpp"
#include "cwce/io.hpp"
#include "cwce/rng.hpp"

using namespace cwce;

namespace {

int g_failures = 0;

void report(int idx, const char* name, bool pass, const std::string& detail,
            double seconds) {
  std::printf("[%s] criterion %2d: %-38s %s  (%.1fs)\n", pass ? "PASS" : "FAIL", idx, name,
              detail.c_str(), seconds);
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

template <typename F>
void run(int idx, const char* name, F&& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  bool pass = false;
  std::string detail;
  try {
    pass = fn(detail);
  } catch (const std::exception& e) {
    detail = std::string("exception: ") + e.what();
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  report(idx, name, pass, detail, secs);
}

const ExposureRegime kR11 = ExposureRegime::lag_pair(3, 1, 1);

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof(buf), f, args);
  va_end(args);
  return buf;
}

// 1. closed-form effect measures
bool c1(std::string& detail) {
  const double g_ace =
      closed_form_effect(ScmParams::gaussian_example(), EffectMeasure::Ace, kR11, 3);
  const ScmParams pt = ScmParams::truncated_example();
  const double t_ace = closed_form_effect(pt, EffectMeasure::Ace, kR11, 3);
  const double t_c1 = closed_form_effect(pt, EffectMeasure::Cace, kR11, 3, 0.7);
  const double t_c2 = closed_form_effect(pt, EffectMeasure::Cace, kR11, 3, -0.3);
  const ScmParams pl = ScmParams::lognormal_example();
  const double l_c1 = closed_form_effect(pl, EffectMeasure::Cace, kR11, 3, 0.5);
  const double l_c2 = closed_form_effect(pl, EffectMeasure::Cace, kR11, 3, -0.5);
  detail = fmt("ACE_g=%g ACE_t=%.4f CACE_t=%.4f/%.4f CACE_ln=%.4f/%.4f", g_ace, t_ace,
               t_c1, t_c2, l_c1, l_c2);
  return g_ace == -15.0 && std::fabs(t_ace - (-0.38)) < 0.005 &&
         std::fabs(t_c1 - (-0.58)) < 0.005 && std::fabs(t_c2 - (-0.29)) < 0.005 &&
         std::fabs(l_c1 - (-1.05)) < 0.005 && std::fabs(l_c2 - (-0.02)) < 0.005;
}

// 2. ICE distribution moments over 1e5 simulated individuals
bool c2(std::string& detail) {
  const ScmParams p = ScmParams::gaussian_example();
  const Panel panel = simulate_panel(p, 100000, 3, 20250801);
  double sum = 0.0;
  std::vector<double> ices(panel.n());
  for (int i = 0; i < panel.n(); ++i) {
    ices[i] = true_ice(panel.individuals[i], p, kR11, 3);
    sum += ices[i];
  }
  const double mean = sum / panel.n();
  double ss = 0.0;
  for (double v : ices) ss += (v - mean) * (v - mean);
  const double var = ss / (panel.n() - 1);
  detail = fmt("mean=%.4f (want -15 +- 0.15), var=%.2f (want 125 +- 3)", mean, var);
  return std::fabs(mean + 15.0) < 0.15 && std::fabs(var - 125.0) < 3.0;
}

// 3. closed-form CWCE vs the Monte-Carlo oracle, 50 randomized cases per kind
bool c3(std::string& detail) {
  const int breaches = run_validation(20250803, 50, 100000, false);
  detail = fmt("%d tolerance breach(es) across 150 randomized cases", breaches);
  return breaches == 0;
}

// 4. unexposed-history identity
bool c4(std::string& detail) {
  const ScmParams p = ScmParams::gaussian_example();
  ScmParams never = p;
  never.alpha0 = -50.0;
  never.alpha1 = 0.0;
  double worst = 0.0;
  for (int rep = 0; rep < 50; ++rep) {
    const Panel panel = simulate_panel(never, 1, 3 + rep % 6, 555 + rep);
    const History hist = history_of(panel.individuals[0], p, panel.m);
    for (int a1 = 0; a1 <= 1; ++a1) {
      for (int a2 = 0; a2 <= 1; ++a2) {
        if (a1 == 0 && a2 == 0) continue;
        const CwceDistribution cwce =
            cwce_gaussian(hist, p, 3, ExposureRegime::lag_pair(3, a1, a2));
        const double want_mean = a1 * p.beta1 + a2 * p.beta2;
        const double want_var = a1 * p.tau1 * p.tau1 + a2 * p.tau2 * p.tau2;
        worst = std::max(worst, std::fabs(cwce.gaussian_mean() - want_mean));
        worst = std::max(worst, std::fabs(cwce.gaussian_var() - want_var));
      }
    }
  }
  detail = fmt("max |deviation| from the marginal ICE law = %.2e (tol 1e-10)", worst);
  return worst < 1e-10;
}

// 5. crossover degeneracy, exact
bool c5(std::string& detail) {
  const ScmParams p = ScmParams::crossover_example();
  const Panel panel = simulate_panel(p, 10000, 3, 20250805);
  int exact = 0;
  for (const Individual& ind : panel.individuals) {
    const double est = cwce_crossover(ind.y[1], ind.y[2], ind.a[0]).value();
    exact += (std::memcmp(&est, &ind.u1, sizeof(double)) == 0);
  }
  detail = fmt("%d/10000 individuals bit-exact", exact);
  return exact == 10000;
}

// 6. REML parameter recovery, 20 replicates at (n=1000, m=100)
bool c6(std::string& detail) {
  const ScmParams p = ScmParams::gaussian_example();
  int inside = 0;
  double worst_b1 = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    const Panel panel = simulate_panel(p, 1000, 100, stage_seed(20250806, rep));
    const RemlFit fit = fit_lmm_reml(make_panel_view(panel, ModelSpec{}));
    const bool ok = fit.converged && std::fabs(fit.beta(1) + 10.0) < 0.5 &&
                    std::fabs(fit.beta(2) + 5.0) < 0.5 && std::fabs(fit.tau1 - 10.0) < 1.0 &&
                    std::fabs(fit.tau2 - 5.0) < 1.0 && std::fabs(fit.sigma - 1.0) < 0.1;
    inside += ok;
    worst_b1 = std::max(worst_b1, std::fabs(fit.beta(1) + 10.0));
  }
  detail = fmt("%d/20 replicates inside all intervals (need >= 18); max |b1+10| = %.3f",
               inside, worst_b1);
  return inside >= 18;
}

// 7. time-varying-confounding bias of the naive pooled fit
bool c7(std::string& detail) {
  const ScmParams p = ScmParams::gaussian_example();
  int in_bracket = 0;
  std::vector<double> naive_aces;
  for (int rep = 0; rep < 20; ++rep) {
    const Panel panel = simulate_panel(p, 1000, 100, stage_seed(20250807, rep));
    const PooledFit naive = fit_naive_pooled(make_panel_view(panel, ModelSpec{}));
    const double ace = naive.implied_ace(1, 1);
    naive_aces.push_back(ace);
    if (ace > -12.0 && ace < -7.0) ++in_bracket;
  }
  double mean = 0.0;
  for (double v : naive_aces) mean += v;
  mean /= naive_aces.size();
  double sd = 0.0;
  for (double v : naive_aces) sd += (v - mean) * (v - mean);
  sd = std::sqrt(sd / (naive_aces.size() - 1));
  const double lo = mean - 1.96 * sd, hi = mean + 1.96 * sd;
  const bool excludes_truth = (lo > -15.0) || (hi < -15.0);

  // no-heterogeneity control: naive and REML fixed effects agree
  ScmParams flat = p;
  flat.tau0 = flat.tau1 = flat.tau2 = 0.0;
  const Panel fp = simulate_panel(flat, 1000, 100, stage_seed(20250807, 100));
  const PanelView fview = make_panel_view(fp, ModelSpec{});
  const PooledFit fn = fit_naive_pooled(fview);
  const RemlFit fr = fit_lmm_reml(fview);
  double max_dev = 0.0;
  for (int i = 0; i < 4; ++i) max_dev = std::max(max_dev, std::fabs(fn.beta(i) - fr.beta(i)));

  detail = fmt("%d/20 in (-12,-7) (need >= 16); 95%% CI [%.2f, %.2f] excl -15: %s; "
               "tau=0 max|naive-REML| = %.1e",
               in_bracket, lo, hi, excludes_truth ? "yes" : "NO", max_dev);
  return in_bracket >= 16 && excludes_truth && max_dev < 1e-3;
}

// 8. plug-in consistency: KS distance shrinks in n and is < 0.05 at n = 1000
bool c8(std::string& detail) {
  const ScmParams p = ScmParams::gaussian_example();
  const Panel eval_panel = simulate_panel(p, 100, 3, stage_seed(20250808, 77));
  std::vector<double> medians;
  for (int n : {100, 500, 1000}) {
    const Panel train = simulate_panel(p, n, 100, stage_seed(20250808, n));
    const RemlFit fit = fit_lmm_reml(make_panel_view(train, ModelSpec{}));
    if (!fit.converged) {
      detail = fmt("fit at n=%d did not converge", n);
      return false;
    }
    const ScmParams est = plug_in_params(fit, p);
    std::vector<double> ks;
    for (const Individual& ind : eval_panel.individuals) {
      const History hist = history_of(ind, p, 3);
      const CwceDistribution truth = cwce_gaussian(hist, p, 3, kR11);
      const CwceDistribution plug = cwce_gaussian(hist, est, 3, kR11);
      ks.push_back(gaussian_ks(truth.gaussian_mean(), std::sqrt(truth.gaussian_var()),
                               plug.gaussian_mean(), std::sqrt(plug.gaussian_var())));
    }
    std::nth_element(ks.begin(), ks.begin() + ks.size() / 2, ks.end());
    medians.push_back(ks[ks.size() / 2]);
  }
  detail = fmt("median KS = %.4f / %.4f / %.4f at n = 100/500/1000", medians[0],
               medians[1], medians[2]);
  return medians[0] >= medians[1] && medians[1] >= medians[2] && medians[2] < 0.05;
}

// 9. classification tables across 20 seeds
bool c9(std::string& detail) {
  const ScmParams p = ScmParams::truncated_example();
  double sum_small = 0.0, sum_large = 0.0;
  int ordered = 0;
  for (int rep = 0; rep < 20; ++rep) {
    const Panel master = simulate_panel(p, 1000, 100, stage_seed(20250809, rep));

    const Panel small = subset_panel(master, 100, 3);
    const RemlFit fit_small = fit_lmm_reml(make_panel_view(small, ModelSpec{}));
    const double mis_small =
        classification_table(small, fit_small, 3, kR11).total_misclassification();

    const RemlFit fit_large = fit_lmm_reml(make_panel_view(master, ModelSpec{}));
    const double mis_large =
        classification_table(master, fit_large, 3, kR11).total_misclassification();

    sum_small += mis_small;
    sum_large += mis_large;
    ordered += (mis_small > mis_large);
  }
  const double avg_small = sum_small / 20.0, avg_large = sum_large / 20.0;
  detail = fmt("misclassification (100,3)=%.3f (want 0.10 +- 0.04), "
               "(1000,100)=%.3f (want 0.05 +- 0.02), ordered %d/20",
               avg_small, avg_large, ordered);
  return std::fabs(avg_small - 0.10) < 0.04 && std::fabs(avg_large - 0.05) < 0.02 &&
         ordered == 20;
}

// 10. numerical kernel certification
bool c10(std::string& detail) {
  double worst_bvn = 0.0;
  for (int i = -9; i <= 9; ++i) {
    const double rho = 0.1 * i;
    const double expected = 0.25 + std::asin(rho) / (2.0 * M_PI);
    worst_bvn = std::max(worst_bvn, std::fabs(bvn_upper(0.0, 0.0, rho) - expected));
  }
  double worst_quad = 0.0;
  for (int order : {2, 8, 16, 32, 64}) {
    auto [nodes, weights] = gauss_hermite_nodes(order);
    worst_quad = std::max(worst_quad, std::fabs(weights.sum() - 1.0));
    double m2 = 0.0;
    for (int i = 0; i < order; ++i) m2 += weights(i) * nodes(i) * nodes(i);
    worst_quad = std::max(worst_quad, std::fabs(m2 - 1.0));
    if (order >= 3) {
      double m4 = 0.0;
      for (int i = 0; i < order; ++i) m4 += weights(i) * std::pow(nodes(i), 4);
      worst_quad = std::max(worst_quad, std::fabs(m4 - 3.0));
    }
  }
  MvnDist d1;
  d1.mean = Eigen::VectorXd::Zero(1);
  d1.cov = Eigen::MatrixXd::Constant(1, 1, 1.0);
  worst_quad = std::max(
      worst_quad,
      std::fabs(mvn_quadrature(d1, [](const Eigen::VectorXd&) { return 1.0; }) - 1.0));
  detail = fmt("max bvn orthant error = %.2e (tol 1e-7), max quadrature error = %.2e "
               "(tol 1e-12)",
               worst_bvn, worst_quad);
  return worst_bvn < 1e-7 && worst_quad < 1e-12;
}

}  // namespace

int main() {
  std::printf("acceptance suite\n================\n");
  run(1, "closed-form effect measures", c1);
  run(2, "ICE distribution moments", c2);
  run(3, "oracle equivalence (closed vs MC)", c3);
  run(4, "unexposed-history identity", c4);
  run(5, "crossover degeneracy (exact)", c5);
  run(6, "REML parameter recovery", c6);
  run(7, "time-varying-confounding bias", c7);
  run(8, "plug-in consistency (KS)", c8);
  run(9, "classification tables", c9);
  run(10, "numerical kernel certification", c10);
  if (g_failures == 0) {
    std::printf("\nall 10 acceptance criteria passed\n");
    return 0;
  }
  std::printf("\n%d criterion(s) FAILED\n", g_failures);
  return 1;
}

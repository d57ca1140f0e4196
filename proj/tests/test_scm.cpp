#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>

#include "cwce/errors.hpp"
#include "cwce/gauss.hpp"
#include "cwce/panel.hpp"
#include "cwce/rng.hpp"
#include "doctest.h"

using namespace cwce;

namespace {

bool bit_equal(double a, double b) { return std::memcmp(&a, &b, sizeof(double)) == 0; }

bool panels_identical(const Panel& a, const Panel& b) {
  if (a.n() != b.n() || a.m != b.m) return false;
  for (int i = 0; i < a.n(); ++i) {
    const Individual &x = a.individuals[i], &y = b.individuals[i];
    if (!bit_equal(x.u0, y.u0) || !bit_equal(x.u1, y.u1) || !bit_equal(x.u2, y.u2))
      return false;
    for (size_t k = 0; k < x.y.size(); ++k) {
      if (!bit_equal(x.y[k], y.y[k]) || !bit_equal(x.c[k], y.c[k]) ||
          !bit_equal(x.noise_y[k], y.noise_y[k]) || x.a[k] != y.a[k])
        return false;
    }
  }
  return true;
}

// zero-latent, zero-confounder, never-treated variant
ScmParams frozen_gaussian() {
  ScmParams p = ScmParams::gaussian_example();
  p.tau0 = p.tau1 = p.tau2 = 0.0;
  p.alpha0 = -50.0;  // exposure probability ~ 0
  p.alpha1 = 0.0;
  p.confounder_law = {{0.0, 1.0}};
  return p;
}

}  // namespace

TEST_CASE("parameter validation") {
  ScmParams p = ScmParams::gaussian_example();
  CHECK_NOTHROW(p.validate());
  p.confounder_law = {{0.7, 0.3}, {-0.3, 0.6}};
  CHECK_THROWS_AS(p.validate(), ValidationError);
  p = ScmParams::gaussian_example();
  p.tau1 = -1.0;
  CHECK_THROWS_AS(p.validate(), ValidationError);
  p = ScmParams::gaussian_example();
  p.latent_corr(0, 1) = 0.5;  // asymmetric
  CHECK_THROWS_AS(p.validate(), ValidationError);
  CHECK_THROWS_AS(simulate_panel(ScmParams::gaussian_example(), 0, 3, 1), ValidationError);
  CHECK_THROWS_AS(simulate_panel(ScmParams::gaussian_example(), 5, 2, 1), ValidationError);
  CHECK_THROWS_AS(simulate_panel(ScmParams::crossover_example(), 5, 4, 1), ValidationError);
}

TEST_CASE("zero-latent zero-exposure outcomes collapse to mu + noise") {
  const ScmParams p = frozen_gaussian();
  const Panel panel = simulate_panel(p, 50, 3, 11);
  for (const Individual& ind : panel.individuals) {
    CHECK(ind.u0 == 0.0);
    for (int k = 0; k < 3; ++k) {
      CHECK(ind.a[k] == 0);
      CHECK(ind.y[k] == doctest::Approx(120.0 + ind.noise_y[k]).epsilon(1e-14));
    }
  }
}

TEST_CASE("sample mean of Y1 is mu") {
  const ScmParams p = ScmParams::gaussian_example();
  const Panel panel = simulate_panel(p, 100000, 3, 2024);
  double sum = 0.0;
  for (const Individual& ind : panel.individuals) sum += ind.y[0];
  CHECK(sum / panel.n() == doctest::Approx(120.0).epsilon(0.1 / 120.0));
}

TEST_CASE("determinism: reruns and thread counts produce identical panels") {
  const ScmParams p = ScmParams::gaussian_example();
  const Panel a = simulate_panel(p, 500, 5, 99);
  const Panel b = simulate_panel(p, 500, 5, 99);
  const Panel c = simulate_panel_serial(p, 500, 5, 99);
  CHECK(panels_identical(a, b));
  CHECK(panels_identical(a, c));

  const Panel d = simulate_panel(p, 500, 5, 100);
  CHECK(!panels_identical(a, d));
}

TEST_CASE("subsetting equals simulating the smaller design") {
  const ScmParams p = ScmParams::truncated_example();
  const Panel big = simulate_panel(p, 100, 10, 5);
  const Panel sub = subset_panel(big, 40, 4);
  const Panel direct = simulate_panel(p, 40, 4, 5);
  CHECK(panels_identical(sub, direct));
}

TEST_CASE("consistency: factual replay is bit-exact for every kind") {
  for (const ScmParams& p :
       {ScmParams::gaussian_example(), ScmParams::lognormal_example(),
        ScmParams::truncated_example(), ScmParams::crossover_example()}) {
    const int m = (p.kind == ScmKind::Crossover) ? 3 : 6;
    const Panel panel = simulate_panel(p, 200, m, 31);
    for (const Individual& ind : panel.individuals) {
      ExposureRegime factual{ind.a};
      for (int k = 1; k <= m; ++k) {
        const double po = potential_outcome(ind, p, factual, k);
        if (p.kind == ScmKind::TruncatedLmm) {
          CHECK(po == static_cast<double>(ind.d[k - 1]));
        } else {
          CHECK(bit_equal(po, ind.y[k - 1]));
        }
      }
    }
  }
}

TEST_CASE("potential outcome: worked arithmetic") {
  ScmParams p = frozen_gaussian();
  p.sigma = 0.0;
  const Panel panel = simulate_panel(p, 1, 3, 7);
  const Individual& ind = panel.individuals[0];

  // regime (1,1) at k = 3: 120 - 10 - 5
  const ExposureRegime r11 = ExposureRegime::lag_pair(3, 1, 1);
  CHECK(potential_outcome(ind, p, r11, 3) == doctest::Approx(105.0).epsilon(1e-14));

  ScmParams pt = p;
  pt.kind = ScmKind::TruncatedLmm;
  pt.delta = 120.0;
  CHECK(potential_outcome(ind, pt, r11, 3) == 0.0);

  CHECK_THROWS_AS(potential_outcome(ind, p, ExposureRegime::zeros(1), 3), DimensionError);
  CHECK_THROWS_AS(potential_outcome(ind, p, r11, 9), DimensionError);
}

TEST_CASE("true_ice: direct formula and regime edge cases") {
  const ScmParams p = ScmParams::gaussian_example();
  Individual ind;
  ind.u0 = 1.0;
  ind.u1 = 5.0;
  ind.u2 = -2.0;
  ind.noise_y = {0.3, -0.1, 0.2};
  ind.c = {0.7, -0.3, 0.7};
  ind.a = {0, 0, 0};
  ind.y = {0, 0, 0};  // unused by the replay at these args

  const ExposureRegime r11 = ExposureRegime::lag_pair(3, 1, 1);
  CHECK(true_ice(ind, p, r11, 3) == doctest::Approx(-12.0).epsilon(1e-12));
  CHECK(true_ice(ind, p, ExposureRegime::zeros(2), 3) == 0.0);
  CHECK(true_eice(ind, p, r11, 3) == doctest::Approx(-12.0).epsilon(1e-12));
}

TEST_CASE("ICE distribution: mean -15, variance 125 at regime (1,1)") {
  const ScmParams p = ScmParams::gaussian_example();
  const Panel panel = simulate_panel(p, 100000, 3, 321);
  const ExposureRegime r11 = ExposureRegime::lag_pair(3, 1, 1);
  double sum = 0.0;
  for (const Individual& ind : panel.individuals) sum += true_ice(ind, p, r11, 3);
  const double mean = sum / panel.n();
  double ss = 0.0;
  for (const Individual& ind : panel.individuals) {
    const double v = true_ice(ind, p, r11, 3) - mean;
    ss += v * v;
  }
  const double var = ss / (panel.n() - 1);
  CHECK(std::fabs(mean - (-15.0)) < 0.15);
  CHECK(std::fabs(var - 125.0) < 3.0);
}

TEST_CASE("truncated ICE support and EICE closed form") {
  const ScmParams pt = ScmParams::truncated_example();
  const Panel panel = simulate_panel(pt, 2000, 4, 17);
  const ExposureRegime r11 = ExposureRegime::lag_pair(3, 1, 1);
  for (const Individual& ind : panel.individuals) {
    const double ice = true_ice(ind, pt, r11, 3);
    CHECK((ice == -1.0 || ice == 0.0 || ice == 1.0));
  }

  // all latents zero, C = 0.7: Phi(-3.5) - Phi(+11.5). Treatment moves the
  // mean across the threshold (123.5 -> 108.5), so the expected effect is
  // nearly -1; the Monte-Carlo oracle below confirms it.
  Individual flat;
  flat.noise_y = {0, 0, 0};
  flat.c = {0.7, 0.7, 0.7};
  flat.a = {0, 0, 0};
  flat.y = {120, 123.5, 123.5};
  const double eice = true_eice(flat, pt, r11, 3, 0.7);
  const double expected = std_normal_cdf(-3.5) - std_normal_cdf(11.5);
  CHECK(eice == doctest::Approx(expected).epsilon(1e-12));
  CHECK(std_normal_cdf(-3.5) == doctest::Approx(2.3262907903552504e-4).epsilon(1e-9));
  CHECK(eice == doctest::Approx(-0.99976737).epsilon(1e-7));

  // Monte-Carlo oracle over the time-k noise
  Rng g = Rng::stream(8, 0);
  const int n = 1000000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double nk = pt.sigma * g.next_normal();
    const double ya = 120.0 + 0.7 * 5.0 - 15.0 + nk;
    const double y0 = 120.0 + 0.7 * 5.0 + nk;
    const double v = (ya > pt.delta ? 1.0 : 0.0) - (y0 > pt.delta ? 1.0 : 0.0);
    sum += v;
    sum2 += v * v;
  }
  const double mc = sum / n;
  const double se = std::sqrt(std::max(sum2 / n - mc * mc, 0.0) / n) + 1e-9;
  CHECK(std::fabs(eice - mc) < 4.0 * se);
}

TEST_CASE("lognormal EICE: sigma -> 0 limit equals the noise-free ICE") {
  ScmParams p = ScmParams::lognormal_example();
  Individual ind;
  ind.u0 = 0.2;
  ind.u1 = 0.1;
  ind.u2 = -0.05;
  ind.noise_y = {0, 0, 0};
  ind.c = {0.5, 0.5, 0.5};
  ind.a = {0, 0, 0};
  ind.y = {1, 1, 1};
  const ExposureRegime r11 = ExposureRegime::lag_pair(3, 1, 1);

  p.sigma = 0.0;
  const double eice0 = true_eice(ind, p, r11, 3);
  const double ice0 = true_ice(ind, p, r11, 3);
  // replay uses stored noises (zero here), so the two agree exactly
  const double base = std::exp(p.mu + 0.5 * p.beta_c + 0.2);
  const double slope = std::exp((p.beta1 + 0.1) + (p.beta2 - 0.05)) - 1.0;
  CHECK(eice0 == doctest::Approx(base * slope).epsilon(1e-12));
  CHECK(ice0 == doctest::Approx(base * slope).epsilon(1e-10));
}

TEST_CASE("closed-form effects reproduce the worked values") {
  const ExposureRegime r11 = ExposureRegime::lag_pair(3, 1, 1);

  const ScmParams pg = ScmParams::gaussian_example();
  CHECK(closed_form_effect(pg, EffectMeasure::Ace, r11, 3) == -15.0);
  CHECK(closed_form_effect(pg, EffectMeasure::Cace, r11, 3) == -15.0);

  const ScmParams pl = ScmParams::lognormal_example();
  CHECK(std::fabs(closed_form_effect(pl, EffectMeasure::Cace, r11, 3, 0.5) - (-1.05)) <
        0.005);
  CHECK(std::fabs(closed_form_effect(pl, EffectMeasure::Cace, r11, 3, -0.5) - (-0.02)) <
        0.005);

  const ScmParams pt = ScmParams::truncated_example();
  CHECK(std::fabs(closed_form_effect(pt, EffectMeasure::Ace, r11, 3) - (-0.38)) < 0.005);
  CHECK(std::fabs(closed_form_effect(pt, EffectMeasure::Cace, r11, 3, 0.7) - (-0.58)) < 0.005);
  CHECK(std::fabs(closed_form_effect(pt, EffectMeasure::Cace, r11, 3, -0.3) - (-0.29)) < 0.005);

  CHECK_THROWS_AS(closed_form_effect(pt, EffectMeasure::Cace, r11, 3), UnsupportedError);
}

TEST_CASE("ACE decomposes exactly over the confounder law") {
  const ExposureRegime r11 = ExposureRegime::lag_pair(3, 1, 1);
  for (const ScmParams& p : {ScmParams::lognormal_example(), ScmParams::truncated_example()}) {
    double total = 0.0;
    for (const auto& atom : p.confounder_law)
      total += closed_form_effect(p, EffectMeasure::Cace, r11, 3, atom.value) * atom.prob;
    CHECK(std::fabs(total - closed_form_effect(p, EffectMeasure::Ace, r11, 3)) < 1e-12);
  }
}

TEST_CASE("Monte-Carlo agreement: mean ICE matches the closed-form ACE per kind") {
  const ExposureRegime r11 = ExposureRegime::lag_pair(3, 1, 1);
  struct Case {
    ScmParams params;
    int n;
  };
  for (const auto& [params, n] : {Case{ScmParams::gaussian_example(), 100000},
                                  Case{ScmParams::lognormal_example(), 100000},
                                  Case{ScmParams::truncated_example(), 100000},
                                  Case{ScmParams::crossover_example(), 100000}}) {
    const int m = (params.kind == ScmKind::Crossover) ? 3 : 3;
    const Panel panel = simulate_panel(params, n, m, 444);
    double sum = 0.0, sum2 = 0.0;
    const ExposureRegime regime =
        (params.kind == ScmKind::Crossover) ? ExposureRegime{{1, 0}} : r11;
    const int k = (params.kind == ScmKind::Crossover) ? 2 : 3;
    for (const Individual& ind : panel.individuals) {
      const double v = true_ice(ind, params, regime, k);
      sum += v;
      sum2 += v * v;
    }
    const double mean = sum / n;
    const double sd = std::sqrt(sum2 / n - mean * mean);
    const double ace = closed_form_effect(params, EffectMeasure::Ace, regime, k);
    CHECK(std::fabs(mean - ace) < 4.0 * sd / std::sqrt(static_cast<double>(n)));
  }
}

TEST_CASE("crossover: degenerate ICE equals the stored effect exactly") {
  const ScmParams p = ScmParams::crossover_example();
  const Panel panel = simulate_panel(p, 10000, 3, 2718);
  int treated_first = 0;
  for (const Individual& ind : panel.individuals) {
    // constant over k in {2, 3} and equal to the stored latent effect
    CHECK(bit_equal(true_ice(ind, p, ExposureRegime{{1, 0}}, 2), ind.u1));
    CHECK(bit_equal(true_ice(ind, p, ExposureRegime{{0, 1}}, 3), ind.u1));
    CHECK(bit_equal(ind.y[1] - ind.y[0], ind.a[0] == 1 ? ind.u1 : 0.0));
    treated_first += ind.a[0];
  }
  // assignment is a fair coin
  CHECK(std::fabs(treated_first / 10000.0 - 0.5) < 0.02);
}

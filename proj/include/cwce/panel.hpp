#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "cwce/params.hpp"

namespace cwce {

// Exposure regime a-bar = (a_1, ..., a_{k-1}); the reference regime is all
// zeros. Entries before time 1 are implicitly 0.
struct ExposureRegime {
  std::vector<int> a;

  static ExposureRegime zeros(int len) { return ExposureRegime{std::vector<int>(len, 0)}; }

  // Regime of length k-1 whose only nonzero entries are the two lags that
  // enter the outcome at time k: a_{k-1} = lag1, a_{k-2} = lag2.
  static ExposureRegime lag_pair(int k, int lag1, int lag2);

  // a_{k-l}; 0 when k-l < 1. Requires the regime to cover index k-l.
  int lag(int k, int l) const;

  void validate() const;
};

struct Individual {
  // Latents. For the LMM kinds these are the centered random effects
  // (U0, U1, U2). For Crossover, u1 holds the full treatment effect
  // U_AY ~ N(beta1, tau1^2) and u2 is unused.
  double u0 = 0.0, u1 = 0.0, u2 = 0.0;
  std::vector<double> noise_y;  // N_{Y,1..m} (log-scale for LogNormal)
  std::vector<double> noise_a;  // assignment uniforms
  std::vector<double> c;        // confounders C_1..C_m
  std::vector<int> a;           // factual exposures A_1..A_m
  std::vector<double> y;        // outcomes; Z = exp(Y) for LogNormal
  std::vector<int> d;           // TruncatedLmm indicator D_k = 1{Y_k > delta}
};

struct Panel {
  std::vector<Individual> individuals;
  ScmParams params;
  std::uint64_t seed = 0;
  int m = 0;

  int n() const { return static_cast<int>(individuals.size()); }
};

// Simulates n individuals with m repeats. Each individual draws from an
// independent counter-based stream keyed by (seed, index), so the result is
// bit-identical across runs and thread counts. The parallel version maps
// individuals over OpenMP threads; the serial one is the reference kept for
// testing and benchmarking.
Panel simulate_panel(const ScmParams& params, int n, int m, std::uint64_t seed);
Panel simulate_panel_serial(const ScmParams& params, int n, int m, std::uint64_t seed);

// First m_sub repeats of the first n_sub individuals; same draws as a fresh
// simulation of that size would produce (generation is sequential per
// individual), which is what the subset-grid experiments rely on.
Panel subset_panel(const Panel& panel, int n_sub, int m_sub);

// Potential outcome Y_k^a for one simulated individual: replays the outcome
// assignment under `regime` reusing the stored latents, confounders and
// outcome noises. Returns exp(.) for LogNormal and the indicator for
// Truncated.
double potential_outcome(const Individual& ind, const ScmParams& params,
                         const ExposureRegime& regime, int k);

// Underlying continuous scale (log scale for LogNormal, pre-threshold for
// Truncated).
double potential_outcome_underlying(const Individual& ind, const ScmParams& params,
                                    const ExposureRegime& regime, int k);

// Y_k^a - Y_k^0 for one simulated individual.
double true_ice(const Individual& ind, const ScmParams& params,
                const ExposureRegime& regime, int k);

// ICE marginalized over the time-k outcome noise. c_value overrides the
// individual's stored confounder C_{k-1} when given.
double true_eice(const Individual& ind, const ScmParams& params,
                 const ExposureRegime& regime, int k,
                 std::optional<double> c_value = std::nullopt);

enum class EffectMeasure { Ace, Cace };

// Exact closed-form population effect measures. c_value is required for the
// CACE of kinds whose confounder modifies the effect (LogNormal, Truncated).
double closed_form_effect(const ScmParams& params, EffectMeasure measure,
                          const ExposureRegime& regime, int k,
                          std::optional<double> c_value = std::nullopt);

}  // namespace cwce

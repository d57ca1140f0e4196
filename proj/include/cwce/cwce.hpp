#pragma once

#include <cstdint>
#include <vector>

#include "cwce/gauss.hpp"
#include "cwce/panel.hpp"

namespace cwce {

// Observed-only record H_h = (A-bar, C-bar, Y-bar) up to time h. No latents.
// For LogNormal, y holds Z = exp(Y); for Truncated it holds the underlying
// continuous outcome (binary-only histories are not supported). Crossover
// histories mark the unmeasured first outcome with NaN.
struct History {
  int h = 0;
  std::vector<int> a;
  std::vector<double> c;
  std::vector<double> y;

  void validate() const;
};

History history_of(const Individual& ind, const ScmParams& params, int h);

struct GridSpec {
  int points = 512;
  double span_sd = 10.0;  // half-width of the grid in posterior sd units
};

class CwceDistribution {
 public:
  enum class Kind { Gaussian, Grid, Discrete, Degenerate };

  static CwceDistribution make_gaussian(double mean, double var);
  static CwceDistribution make_grid(std::vector<double> points, std::vector<double> density);
  static CwceDistribution make_discrete(double p_minus1, double p_0, double p_plus1);
  static CwceDistribution make_degenerate(double value);

  Kind kind() const { return kind_; }
  double mean() const;
  double variance() const;
  double mode() const;  // MAP point; Discrete ties break toward 0

  // Gaussian accessors
  double gaussian_mean() const { return mean_; }
  double gaussian_var() const { return var_; }
  // Degenerate
  double value() const { return mean_; }
  // Discrete
  double p_minus1() const { return p_[0]; }
  double p_0() const { return p_[1]; }
  double p_plus1() const { return p_[2]; }
  // Grid
  const std::vector<double>& grid_points() const { return points_; }
  const std::vector<double>& grid_density() const { return density_; }

  double cdf(double x) const;
  double density_at(double x) const;  // Gaussian/Grid only

 private:
  Kind kind_ = Kind::Degenerate;
  double mean_ = 0.0, var_ = 0.0;
  double p_[3] = {0.0, 1.0, 0.0};
  std::vector<double> points_, density_;
};

// 2x2 cross-world pmf over (D_k^a, D_k^0) for the truncated kind.
struct CrossWorldJoint {
  double p[2][2] = {{0, 0}, {0, 0}};  // p[da][d0]

  double sum() const { return p[0][0] + p[0][1] + p[1][0] + p[1][1]; }
};

// Posterior law of (U0, U1, U2) given the history (log-scale conditioning for
// LogNormal). Shared by every engine below.
MvnDist latent_posterior(const ScmParams& params, const History& hist);

// Exact CWCE of the Gaussian kind: N(a1 b1 + a2 b2 + x m_post, x S_post x^T)
// with x = (0, a_{k-1}, a_{k-2}). Degenerate(0) for the zero regime.
CwceDistribution cwce_gaussian(const History& hist, const ScmParams& params, int k,
                               const ExposureRegime& regime);

// Log-normal CWCE on a grid. For k <= h the time-k residual is recovered from
// the history; for k = h+1 it is integrated as an extra independent N(0,
// sigma^2) component (flagged "future" mode). Beyond h+1 the lag confounder
// is unobserved and the operation is unsupported.
CwceDistribution cwce_lognormal(const History& hist, const ScmParams& params, int k,
                                const ExposureRegime& regime, const GridSpec& spec = {});

CrossWorldJoint cross_world_joint_truncated(const History& hist, const ScmParams& params,
                                            int k, const ExposureRegime& regime);

CwceDistribution cwce_truncated(const History& hist, const ScmParams& params, int k,
                                const ExposureRegime& regime);

// Degenerate crossover CWCE: y2 - y3 when a1 = 1, else y3 - y2.
CwceDistribution cwce_crossover(double y2, double y3, int a1);

// Dispatch on params.kind (Crossover not supported here; it needs no history
// machinery).
CwceDistribution cwce_for_kind(const ScmParams& params, const History& hist, int k,
                               const ExposureRegime& regime, const GridSpec& spec = {});

// Monte-Carlo oracle: sample the latent posterior, recover residuals for
// k <= h (fresh for k = h+1), evaluate both potential outcomes, difference.
// Draw j comes from stream (seed, j), so results are independent of thread
// count; the parallel version maps draws over OpenMP threads.
struct McCwce {
  std::vector<double> samples;
  double mean = 0.0;
  double var = 0.0;
  double pmf[3] = {0, 0, 0};  // filled for Truncated
  CwceDistribution dist;      // KDE grid (continuous) or Discrete (truncated)
};

McCwce cwce_monte_carlo(const History& hist, const ScmParams& params, int k,
                        const ExposureRegime& regime, int n_draws, std::uint64_t seed);
McCwce cwce_monte_carlo_serial(const History& hist, const ScmParams& params, int k,
                               const ExposureRegime& regime, int n_draws,
                               std::uint64_t seed);

// Law of the single-world potential outcome Y_k^a | H_h (continuous scale for
// Truncated). Gaussian closed form for Gaussian/Truncated, log-normal grid
// otherwise. Supports k <= h+1 (empty history h = 0 gives the k = 1 prior).
CwceDistribution predict_potential_outcome(const History& hist, const ScmParams& params,
                                           int k, const ExposureRegime& regime,
                                           const GridSpec& spec = {});

// Binned Gaussian-kernel density of a sample cloud (Silverman bandwidth when
// bandwidth <= 0); used by the MC oracle and the marginal-density module.
CwceDistribution kde_grid(const std::vector<double>& samples, int points = 512,
                          double bandwidth = 0.0);

}  // namespace cwce

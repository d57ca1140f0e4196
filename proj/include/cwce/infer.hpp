#pragma once

#include <optional>
#include <vector>

#include "cwce/cwce.hpp"
#include "cwce/reml.hpp"

namespace cwce {

// Structural parameters with the REML estimates substituted for the truth.
// Fields the fit does not estimate (assignment alphas, confounder law, the
// threshold delta, kind) are carried over from the template.
ScmParams plug_in_params(const RemlFit& fit, const ScmParams& tmpl);

// Plug-in CWCE (same computation paths as the exact engines). Refuses
// non-converged fits.
CwceDistribution estimate_cwce(const RemlFit& fit, const ScmParams& tmpl,
                               const History& hist, int k, const ExposureRegime& regime,
                               const GridSpec& spec = {});

// MAP point estimate of the ICE: mode of the CWCE distribution (discrete ties
// break toward 0).
double map_ice(const CwceDistribution& cwce);

// Expectation of the CWCE distribution (trapezoid for grids).
double expected_cwce(const CwceDistribution& cwce);

struct IceEstimate {
  double point = 0.0;         // MAP
  double expected = 0.0;      // E[CWCE]
  CwceDistribution cwce;
};

IceEstimate estimate_ice(const RemlFit& fit, const ScmParams& tmpl, const History& hist,
                         int k, const ExposureRegime& regime, const GridSpec& spec = {});

enum class MarginalMode { AverageDensity, KernelOfExpectations };

// Marginal ICE density across individuals: pointwise mean of the individual
// CWCE densities on a common grid, or a Gaussian kernel density of the
// individual E[CWCE] values (Silverman plug-in bandwidth
// 0.9 min(sd, IQR/1.34) n^{-1/5} unless overridden).
CwceDistribution marginal_ice_density(const std::vector<CwceDistribution>& cwces,
                                      MarginalMode mode,
                                      std::optional<double> bandwidth = std::nullopt,
                                      int points = 512);

// rows: true ICE in {-1, 0, +1}; columns: MAP estimate. Entries are
// proportions of the panel and sum to 1.
struct ClassificationTable {
  double cells[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};

  double total() const;
  double total_misclassification() const;
};

// Truncated kind only: cross-tabulates the simulated true ICE at (k, regime)
// against the plug-in MAP estimate from each individual's full history.
ClassificationTable classification_table(const Panel& panel, const RemlFit& fit, int k,
                                         const ExposureRegime& regime);

// sup_x |F1(x) - F2(x)| between two Gaussians, from the density-crossing
// points (closed form, no grid search).
double gaussian_ks(double mean1, double sd1, double mean2, double sd2);

double ks_distance(const CwceDistribution& a, const CwceDistribution& b, int grid = 4096);

}  // namespace cwce

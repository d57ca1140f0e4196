#include "cwce/infer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cwce/errors.hpp"

namespace cwce {

ScmParams plug_in_params(const RemlFit& fit, const ScmParams& tmpl) {
  ScmParams p = tmpl;
  p.mu = fit.beta(0);
  p.beta1 = fit.beta(1);
  p.beta2 = fit.beta(2);
  p.beta_c = fit.beta(3);
  p.tau0 = fit.tau0;
  p.tau1 = fit.tau1;
  p.tau2 = fit.tau2;
  p.sigma = fit.sigma;
  if (fit.spec.random_cov_structure == RandomCovStructure::Unstructured) {
    // recover the correlation from the fitted latent covariance
    Eigen::Matrix3d corr = Eigen::Matrix3d::Identity();
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        const double si = std::sqrt(std::max(fit.sigma_u(i, i), 0.0));
        const double sj = std::sqrt(std::max(fit.sigma_u(j, j), 0.0));
        if (i != j && si > 0 && sj > 0)
          corr(i, j) = std::clamp(fit.sigma_u(i, j) / (si * sj), -1.0, 1.0);
      }
    }
    p.latent_corr = 0.5 * (corr + corr.transpose());
  } else {
    p.latent_corr = Eigen::Matrix3d::Identity();
  }
  p.validate();
  return p;
}

CwceDistribution estimate_cwce(const RemlFit& fit, const ScmParams& tmpl,
                               const History& hist, int k, const ExposureRegime& regime,
                               const GridSpec& spec) {
  if (!fit.converged)
    throw ValidationError(
        "estimate_cwce: refusing a non-converged fit (gradient_norm = " +
        std::to_string(fit.gradient_norm) + ")");
  return cwce_for_kind(plug_in_params(fit, tmpl), hist, k, regime, spec);
}

double map_ice(const CwceDistribution& cwce) { return cwce.mode(); }

double expected_cwce(const CwceDistribution& cwce) { return cwce.mean(); }

IceEstimate estimate_ice(const RemlFit& fit, const ScmParams& tmpl, const History& hist,
                         int k, const ExposureRegime& regime, const GridSpec& spec) {
  IceEstimate est;
  est.cwce = estimate_cwce(fit, tmpl, hist, k, regime, spec);
  est.point = map_ice(est.cwce);
  est.expected = expected_cwce(est.cwce);
  return est;
}

namespace {

bool is_continuous(const CwceDistribution& d) {
  return d.kind() == CwceDistribution::Kind::Gaussian ||
         d.kind() == CwceDistribution::Kind::Grid ||
         d.kind() == CwceDistribution::Kind::Degenerate;
}

}  // namespace

CwceDistribution marginal_ice_density(const std::vector<CwceDistribution>& cwces,
                                      MarginalMode mode, std::optional<double> bandwidth,
                                      int points) {
  if (cwces.size() < 2)
    throw ValidationError("marginal_ice_density: need at least 2 individuals");

  if (mode == MarginalMode::KernelOfExpectations) {
    std::vector<double> expectations;
    expectations.reserve(cwces.size());
    for (const auto& d : cwces) expectations.push_back(d.mean());
    return kde_grid(expectations, points, bandwidth.value_or(0.0));
  }

  bool any_grid = false, any_gaussian = false;
  for (const auto& d : cwces) {
    if (!is_continuous(d))
      throw UnsupportedError("marginal_ice_density: AverageDensity needs Gaussian/Grid");
    if (d.kind() == CwceDistribution::Kind::Grid) any_grid = true;
    if (d.kind() == CwceDistribution::Kind::Gaussian) any_gaussian = true;
  }
  if (any_grid && any_gaussian)
    throw UnsupportedError("marginal_ice_density: mixed distribution kinds");

  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (const auto& d : cwces) {
    if (d.kind() == CwceDistribution::Kind::Grid) {
      lo = std::min(lo, d.grid_points().front());
      hi = std::max(hi, d.grid_points().back());
    } else {
      const double sd = std::sqrt(d.variance());
      lo = std::min(lo, d.mean() - 8.0 * sd);
      hi = std::max(hi, d.mean() + 8.0 * sd);
    }
  }
  if (!(hi > lo)) {  // all degenerate at one point
    lo -= 1.0;
    hi += 1.0;
  }
  points = std::max(points, 8);
  const double dx = (hi - lo) / (points - 1);
  std::vector<double> pts(points), dens(points, 0.0);
  for (int i = 0; i < points; ++i) pts[i] = lo + i * dx;

  for (const auto& d : cwces) {
    if (d.kind() == CwceDistribution::Kind::Degenerate) {
      // a point mass contributes a kernel one grid step wide
      for (int i = 0; i < points; ++i)
        dens[i] += std_normal_pdf((pts[i] - d.value()) / dx) / dx;
    } else {
      for (int i = 0; i < points; ++i) dens[i] += d.density_at(pts[i]);
    }
  }
  for (double& v : dens) v /= static_cast<double>(cwces.size());
  double integral = 0.0;
  for (int i = 0; i + 1 < points; ++i) integral += 0.5 * (dens[i] + dens[i + 1]) * dx;
  if (!(integral > 0.0)) throw NumericalError("marginal_ice_density: zero mass");
  for (double& v : dens) v /= integral;
  return CwceDistribution::make_grid(std::move(pts), std::move(dens));
}

double ClassificationTable::total() const {
  double t = 0.0;
  for (const auto& row : cells)
    for (double v : row) t += v;
  return t;
}

double ClassificationTable::total_misclassification() const {
  double t = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (i != j) t += cells[i][j];
  return t;
}

ClassificationTable classification_table(const Panel& panel, const RemlFit& fit, int k,
                                         const ExposureRegime& regime) {
  if (panel.params.kind != ScmKind::TruncatedLmm)
    throw UnsupportedError("classification_table: truncated kind only");
  const ScmParams est = plug_in_params(fit, panel.params);
  if (!fit.converged)
    throw ValidationError("classification_table: refusing a non-converged fit");

  ClassificationTable table;
  const double w = 1.0 / panel.n();
  for (const Individual& ind : panel.individuals) {
    const History hist = history_of(ind, panel.params, panel.m);
    const CwceDistribution cwce = cwce_truncated(hist, est, k, regime);
    const int est_cat = static_cast<int>(std::lround(map_ice(cwce)));
    const int true_cat = static_cast<int>(std::lround(true_ice(ind, panel.params, regime, k)));
    table.cells[true_cat + 1][est_cat + 1] += w;
  }
  return table;
}

double gaussian_ks(double mean1, double sd1, double mean2, double sd2) {
  if (sd1 < 0 || sd2 < 0) throw ValidationError("gaussian_ks: negative sd");
  auto cdf1 = [&](double x) {
    return sd1 > 0 ? std_normal_cdf((x - mean1) / sd1) : (x >= mean1 ? 1.0 : 0.0);
  };
  auto cdf2 = [&](double x) {
    return sd2 > 0 ? std_normal_cdf((x - mean2) / sd2) : (x >= mean2 ? 1.0 : 0.0);
  };
  if (sd1 == 0.0 && sd2 == 0.0) return mean1 == mean2 ? 0.0 : 1.0;
  if (sd1 == 0.0) return std::max(cdf2(mean1), 1.0 - cdf2(mean1));
  if (sd2 == 0.0) return std::max(cdf1(mean2), 1.0 - cdf1(mean2));

  if (sd1 == sd2) {
    if (mean1 == mean2) return 0.0;
    const double x = 0.5 * (mean1 + mean2);
    return std::fabs(cdf1(x) - cdf2(x));
  }
  // density crossings: (x-m2)^2/s2^2 - (x-m1)^2/s1^2 = 2 log(s2/s1)
  const double a = 1.0 / (sd2 * sd2) - 1.0 / (sd1 * sd1);
  const double b = -2.0 * (mean2 / (sd2 * sd2) - mean1 / (sd1 * sd1));
  const double c = mean2 * mean2 / (sd2 * sd2) - mean1 * mean1 / (sd1 * sd1) -
                   2.0 * std::log(sd2 / sd1);
  const double disc = b * b - 4.0 * a * c;
  double best = 0.0;
  if (disc >= 0.0) {
    const double root = std::sqrt(disc);
    for (double x : {(-b + root) / (2 * a), (-b - root) / (2 * a)})
      best = std::max(best, std::fabs(cdf1(x) - cdf2(x)));
  }
  return best;
}

double ks_distance(const CwceDistribution& a, const CwceDistribution& b, int grid) {
  using Kind = CwceDistribution::Kind;
  if (a.kind() == Kind::Gaussian && b.kind() == Kind::Gaussian)
    return gaussian_ks(a.gaussian_mean(), std::sqrt(a.gaussian_var()), b.gaussian_mean(),
                       std::sqrt(b.gaussian_var()));
  if (a.kind() == Kind::Discrete && b.kind() == Kind::Discrete) {
    double best = 0.0;
    for (double x : {-1.0, 0.0, 1.0}) best = std::max(best, std::fabs(a.cdf(x) - b.cdf(x)));
    return best;
  }
  // generic scan over the union of effective supports
  auto support = [](const CwceDistribution& d, double& lo, double& hi) {
    switch (d.kind()) {
      case Kind::Gaussian: {
        const double sd = std::sqrt(d.gaussian_var());
        lo = d.gaussian_mean() - 10 * sd;
        hi = d.gaussian_mean() + 10 * sd;
        break;
      }
      case Kind::Grid:
        lo = d.grid_points().front();
        hi = d.grid_points().back();
        break;
      case Kind::Discrete:
        lo = -1.5;
        hi = 1.5;
        break;
      case Kind::Degenerate:
        lo = d.value() - 1.0;
        hi = d.value() + 1.0;
        break;
    }
  };
  double lo1 = 0, hi1 = 0, lo2 = 0, hi2 = 0;
  support(a, lo1, hi1);
  support(b, lo2, hi2);
  const double lo = std::min(lo1, lo2), hi = std::max(hi1, hi2);
  double best = 0.0;
  for (int i = 0; i <= grid; ++i) {
    const double x = lo + (hi - lo) * i / grid;
    best = std::max(best, std::fabs(a.cdf(x) - b.cdf(x)));
  }
  return best;
}

}  // namespace cwce
